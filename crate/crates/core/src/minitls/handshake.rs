//! Client and server handshake state machines and the established session.
//!
//! Key schedule (all PRF calls use SHA-512):
//!
//! ```text
//! premaster = KEM shared secret
//! master    = prf(premaster, "master secret", client_random | server_random, 48)
//! key_block = prf(master, "key expansion", server_random | client_random, 224)
//!           = client_mac[64] | server_mac[64] | client_key[32] | server_key[32] |
//!             client_iv_seed[16] | server_iv_seed[16]
//! verify    = prf(master, "client finished" | "server finished", SHA-512(transcript), 12)
//! ```

use zeroize::Zeroizing;

use crate::cbkem::{self, KemCiphertext, KemKeyPair};
use crate::easyapi::{compatibility_check, Compatibility, Kind, PublicKeyInfo, TemplateRegistry};
use crate::primitives::{prf, HashId, RandomSource, SymmetricKeys, MAX_FRAGMENT_LEN};
use crate::easyapi::SecurityLevel;

use super::certificate::Certificate;
use super::messages::{
    decode_handshake_message, encode_handshake_message, ClientHello, HandshakeMessage, HandshakeType, ServerHello,
    TemplateInfo, HANDSHAKE_HEADER_LEN, RANDOM_LEN, VERIFY_DATA_LEN,
};
use super::record::{ContentType, RecordLayer};
use super::transcript::{Direction, DirectionTotals, HandshakeTranscript};
use super::{AlertDescription, CipherSuiteId, TlsError, Transport, MAX_HANDSHAKE_LEN, PROTOCOL_VERSION};

const MASTER_SECRET_LEN: usize = 48;
const MAC_KEY_LEN: usize = 64;
const ENC_KEY_LEN: usize = 32;
const IV_SEED_LEN: usize = 16;
const KEY_BLOCK_LEN: usize = 2 * (MAC_KEY_LEN + ENC_KEY_LEN + IV_SEED_LEN);

#[derive(Debug, Clone)]
pub struct ClientConfig {
    /// Issuer public keys accepted as certificate signers.
    pub trusted_roots: Vec<PublicKeyInfo>,
    /// Offered suites in preference order.
    pub suites: Vec<CipherSuiteId>,
    pub registry: TemplateRegistry,
    pub level: SecurityLevel,
}

impl ClientConfig {
    pub fn new(trusted_roots: Vec<PublicKeyInfo>, registry: TemplateRegistry, level: SecurityLevel) -> Self {
        Self {
            trusted_roots,
            suites: vec![CipherSuiteId::CME_SPX_WITH_AES_256_CBC_SHA512],
            registry,
            level,
        }
    }
}

pub struct ServerConfig {
    pub certificate: Certificate,
    certificate_bytes: Vec<u8>,
    pub kem_key: KemKeyPair,
    pub registry: TemplateRegistry,
    /// Supported suites; the client's preference order decides among them.
    pub suites: Vec<CipherSuiteId>,
}

impl std::fmt::Debug for ServerConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ServerConfig")
            .field("subject", &self.certificate.subject)
            .field("kem", &self.certificate.kem_algorithm_id)
            .field("registry_version", &self.registry.version())
            .field("suites", &self.suites)
            .finish()
    }
}

impl ServerConfig {
    /// Fails unless `kem_key` is the key the certificate carries.
    pub fn new(certificate: Certificate, kem_key: KemKeyPair, registry: TemplateRegistry) -> Result<Self, TlsError> {
        if kem_key.public.params().algorithm_id() != certificate.kem_algorithm_id
            || kem_key.public.to_bytes() != certificate.kem_public_key
        {
            return Err(TlsError::Config("KEM key does not match the certificate".into()));
        }
        let certificate_bytes = certificate.to_bytes();
        Ok(Self {
            certificate,
            certificate_bytes,
            kem_key,
            registry,
            suites: vec![CipherSuiteId::CME_SPX_WITH_AES_256_CBC_SHA512],
        })
    }
}

/// Master secret and both directions' record keys. Wiped on drop.
pub struct SessionKeys {
    pub master_secret: Zeroizing<[u8; MASTER_SECRET_LEN]>,
    pub client: SymmetricKeys,
    pub server: SymmetricKeys,
}

impl std::fmt::Debug for SessionKeys {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("SessionKeys(..)")
    }
}

impl SessionKeys {
    pub fn derive(premaster: &[u8], client_random: &[u8; RANDOM_LEN], server_random: &[u8; RANDOM_LEN]) -> Self {
        let mut seed = Vec::with_capacity(2 * RANDOM_LEN);
        seed.extend_from_slice(client_random);
        seed.extend_from_slice(server_random);
        let master = Zeroizing::new(prf(HashId::H512, premaster, "master secret", &seed, MASTER_SECRET_LEN));
        let mut seed = Vec::with_capacity(2 * RANDOM_LEN);
        seed.extend_from_slice(server_random);
        seed.extend_from_slice(client_random);
        let kb = Zeroizing::new(prf(HashId::H512, &master, "key expansion", &seed, KEY_BLOCK_LEN));
        let (client_mac, rest) = kb.split_at(MAC_KEY_LEN);
        let (server_mac, rest) = rest.split_at(MAC_KEY_LEN);
        let (client_key, rest) = rest.split_at(ENC_KEY_LEN);
        let (server_key, rest) = rest.split_at(ENC_KEY_LEN);
        let (client_iv, server_iv) = rest.split_at(IV_SEED_LEN);
        let keys = |key: &[u8], mac: &[u8], iv: &[u8]| {
            let block = Zeroizing::new([key, mac, iv].concat());
            SymmetricKeys::from_key_block(HashId::H512, &block).expect("sized key block")
        };
        let mut master_secret = Zeroizing::new([0u8; MASTER_SECRET_LEN]);
        master_secret.copy_from_slice(&master);
        Self {
            master_secret,
            client: keys(client_key, client_mac, client_iv),
            server: keys(server_key, server_mac, server_iv),
        }
    }

    fn verify_data(&self, label: &str, transcript_hash: &[u8]) -> [u8; VERIFY_DATA_LEN] {
        prf(HashId::H512, self.master_secret.as_slice(), label, transcript_hash, VERIFY_DATA_LEN)
            .try_into()
            .expect("12 bytes")
    }
}

/// A failed handshake: the error and the transcript up to the failure.
#[derive(Debug)]
pub struct HandshakeFailure {
    pub error: TlsError,
    pub transcript: HandshakeTranscript,
}

impl std::fmt::Display for HandshakeFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.error.fmt(f)
    }
}

impl std::error::Error for HandshakeFailure {}

/// An established connection carrying application data.
pub struct TlsSession<T> {
    record: RecordLayer<T>,
    keys: SessionKeys,
    suite: CipherSuiteId,
    pending: Vec<u8>,
}

impl<T> std::fmt::Debug for TlsSession<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TlsSession")
            .field("suite", &self.suite)
            .field("record", &self.record)
            .finish()
    }
}

impl<T: Transport> TlsSession<T> {
    pub fn keys(&self) -> &SessionKeys {
        &self.keys
    }

    pub fn suite(&self) -> CipherSuiteId {
        self.suite
    }

    pub fn record_layer(&self) -> &RecordLayer<T> {
        &self.record
    }

    pub fn get_mut(&mut self) -> &mut T {
        self.record.get_mut()
    }

    /// Sends application data in records of at most 2^14 bytes.
    pub fn send(&mut self, data: &[u8]) -> Result<(), TlsError> {
        self.record.send_fragmented(ContentType::ApplicationData, data)
    }

    /// Returns the next chunk of application data. Integrity failures tear the connection
    /// down with a fatal alert and deliver nothing.
    pub fn recv(&mut self) -> Result<Vec<u8>, TlsError> {
        if !self.pending.is_empty() {
            return Ok(std::mem::take(&mut self.pending));
        }
        loop {
            match self.record.recv()? {
                (ContentType::ApplicationData, p) if p.is_empty() => continue,
                (ContentType::ApplicationData, p) => return Ok(p),
                _ => {
                    return Err(self
                        .record
                        .fatal(AlertDescription::UnexpectedMessage, "non-application record after handshake"))
                }
            }
        }
    }

    /// Reads exactly `n` bytes of application data.
    pub fn recv_exact(&mut self, n: usize) -> Result<Vec<u8>, TlsError> {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let mut chunk = self.recv()?;
            let want = n - out.len();
            if chunk.len() > want {
                self.pending = chunk.split_off(want);
            }
            out.extend_from_slice(&chunk);
        }
        Ok(out)
    }

    pub fn into_inner(self) -> T {
        self.record.into_inner()
    }
}

enum Event {
    Handshake(HandshakeMessage),
    ChangeCipherSpec,
}

struct Conn<T> {
    rl: RecordLayer<T>,
    transcript: HandshakeTranscript,
    buf: Vec<u8>,
    outgoing: Direction,
    incoming: Direction,
}

impl<T: Transport> Conn<T> {
    fn new(io: T, outgoing: Direction) -> Self {
        let incoming = match outgoing {
            Direction::ClientToServer => Direction::ServerToClient,
            Direction::ServerToClient => Direction::ClientToServer,
        };
        Self {
            rl: RecordLayer::new(io),
            transcript: HandshakeTranscript::new(),
            buf: Vec::new(),
            outgoing,
            incoming,
        }
    }

    fn send(&mut self, msg: &HandshakeMessage) -> Result<(), TlsError> {
        let raw = encode_handshake_message(msg);
        self.transcript
            .add_handshake(msg.handshake_type().name(), self.outgoing, &raw);
        self.rl.send_fragmented(ContentType::Handshake, &raw)
    }

    fn send_ccs(&mut self) -> Result<(), TlsError> {
        self.transcript
            .add_other("ChangeCipherSpec".into(), self.outgoing, 1);
        self.rl.send(ContentType::ChangeCipherSpec, &[1])
    }

    fn fatal(&mut self, alert: AlertDescription, reason: impl Into<String>) -> TlsError {
        let err = self.rl.fatal(alert, reason);
        self.transcript
            .add_other(format!("Alert({})", alert.name()), self.outgoing, 2);
        err
    }

    fn next_event(&mut self) -> Result<Event, TlsError> {
        loop {
            if self.buf.len() >= HANDSHAKE_HEADER_LEN {
                let len = u32::from_be_bytes([0, self.buf[1], self.buf[2], self.buf[3]]) as usize;
                if len > MAX_HANDSHAKE_LEN {
                    return Err(self.fatal(AlertDescription::DecodeError, "handshake message too long"));
                }
                if self.buf.len() >= HANDSHAKE_HEADER_LEN + len {
                    let raw: Vec<u8> = self.buf.drain(..HANDSHAKE_HEADER_LEN + len).collect();
                    let msg = match decode_handshake_message(&raw) {
                        Ok(m) => m,
                        Err(e) => return Err(self.fatal(AlertDescription::DecodeError, e.to_string())),
                    };
                    self.transcript
                        .add_handshake(msg.handshake_type().name(), self.incoming, &raw);
                    return Ok(Event::Handshake(msg));
                }
            }
            match self.rl.recv() {
                Ok((ContentType::Handshake, p)) => {
                    self.buf.extend_from_slice(&p);
                    // Senders fill every non-final fragment, so a short record that leaves a
                    // message incomplete can never be completed.
                    if p.len() < MAX_FRAGMENT_LEN && ends_mid_message(&self.buf) {
                        return Err(self.fatal(AlertDescription::DecodeError, "truncated handshake message"));
                    }
                }
                Ok((ContentType::ChangeCipherSpec, p)) => {
                    if !self.buf.is_empty() || p != [1] {
                        return Err(self.fatal(AlertDescription::UnexpectedMessage, "misplaced ChangeCipherSpec"));
                    }
                    self.transcript
                        .add_other("ChangeCipherSpec".into(), self.incoming, 1);
                    return Ok(Event::ChangeCipherSpec);
                }
                Ok(_) => {
                    return Err(self.fatal(AlertDescription::UnexpectedMessage, "application data during handshake"))
                }
                Err(TlsError::AlertReceived(a)) => {
                    self.transcript
                        .add_other(format!("Alert({})", a.name()), self.incoming, 2);
                    return Err(TlsError::AlertReceived(a));
                }
                Err(e) => return Err(e),
            }
        }
    }

    fn expect(&mut self, t: HandshakeType) -> Result<HandshakeMessage, TlsError> {
        match self.next_event()? {
            Event::Handshake(m) if m.handshake_type() == t => Ok(m),
            Event::Handshake(m) => Err(self.fatal(
                AlertDescription::UnexpectedMessage,
                format!("expected {}, got {}", t.name(), m.handshake_type().name()),
            )),
            Event::ChangeCipherSpec => Err(self.fatal(
                AlertDescription::UnexpectedMessage,
                format!("expected {}, got ChangeCipherSpec", t.name()),
            )),
        }
    }

    fn expect_ccs(&mut self) -> Result<(), TlsError> {
        match self.next_event()? {
            Event::ChangeCipherSpec => Ok(()),
            Event::Handshake(m) => Err(self.fatal(
                AlertDescription::UnexpectedMessage,
                format!("expected ChangeCipherSpec, got {}", m.handshake_type().name()),
            )),
        }
    }

    fn finish<R>(
        mut self,
        result: Result<(SessionKeys, CipherSuiteId), TlsError>,
        wrap: impl FnOnce(RecordLayer<T>, SessionKeys, CipherSuiteId) -> R,
    ) -> Result<(R, HandshakeTranscript), Box<HandshakeFailure>> {
        let wire = match self.outgoing {
            Direction::ClientToServer => DirectionTotals {
                client_to_server: self.rl.bytes_written(),
                server_to_client: self.rl.bytes_read(),
            },
            Direction::ServerToClient => DirectionTotals {
                client_to_server: self.rl.bytes_read(),
                server_to_client: self.rl.bytes_written(),
            },
        };
        self.transcript.set_wire_bytes(wire);
        match result {
            Ok((keys, suite)) => {
                self.transcript.finish(None);
                Ok((wrap(self.rl, keys, suite), self.transcript))
            }
            Err(error) => {
                let label = match error.alert() {
                    Some(a) => a.name().to_string(),
                    None => error.to_string(),
                };
                self.transcript.finish(Some(label));
                Err(Box::new(HandshakeFailure {
                    error,
                    transcript: self.transcript,
                }))
            }
        }
    }
}

fn ends_mid_message(buf: &[u8]) -> bool {
    let mut at = 0;
    while at < buf.len() {
        if buf.len() - at < HANDSHAKE_HEADER_LEN {
            return true;
        }
        let len = u32::from_be_bytes([0, buf[at + 1], buf[at + 2], buf[at + 3]]) as usize;
        at += HANDSHAKE_HEADER_LEN + len;
    }
    at > buf.len()
}

fn local_template(registry: &TemplateRegistry, level: SecurityLevel) -> TemplateInfo {
    TemplateInfo {
        registry_version: registry.version(),
        level,
        signature_id: registry.resolve(Kind::Signature, level).algorithm_id,
        encryption_id: registry.resolve(Kind::Encryption, level).algorithm_id,
    }
}

/// `None` when both resolved ids agree; otherwise the classification of the first mismatch.
fn template_mismatch(registry: &TemplateRegistry, remote: &TemplateInfo) -> Option<String> {
    for (kind, remote_id) in [
        (Kind::Signature, &remote.signature_id),
        (Kind::Encryption, &remote.encryption_id),
    ] {
        let local = registry.resolve(kind, remote.level);
        match compatibility_check(&local, remote_id, remote.registry_version) {
            Compatibility::Compatible => {}
            c => {
                return Some(format!(
                    "{c:?}: {kind}.{} is {} in registry v{} but {} in v{}",
                    remote.level, local.algorithm_id, local.registry_version, remote_id, remote.registry_version
                ))
            }
        }
    }
    None
}

fn random32(rng: &mut dyn RandomSource) -> Result<[u8; RANDOM_LEN], TlsError> {
    let mut r = [0u8; RANDOM_LEN];
    rng.fill(&mut r).map_err(|e| TlsError::Config(e.to_string()))?;
    Ok(r)
}

fn ct_eq(a: &[u8], b: &[u8]) -> bool {
    a.len() == b.len() && a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

/// Runs the client side. On failure the returned transcript covers everything exchanged.
pub fn client_handshake<T: Transport>(
    conn: T,
    config: &ClientConfig,
    rng: &mut dyn RandomSource,
) -> Result<(TlsSession<T>, HandshakeTranscript), Box<HandshakeFailure>> {
    let mut c = Conn::new(conn, Direction::ClientToServer);
    let result = client_flow(&mut c, config, rng);
    c.finish(result, |record, keys, suite| TlsSession {
        record,
        keys,
        suite,
        pending: Vec::new(),
    })
}

fn client_flow<T: Transport>(
    c: &mut Conn<T>,
    config: &ClientConfig,
    rng: &mut dyn RandomSource,
) -> Result<(SessionKeys, CipherSuiteId), TlsError> {
    if config.suites.is_empty() {
        return Err(TlsError::Config("no cipher suites offered".into()));
    }
    if config.trusted_roots.is_empty() {
        return Err(TlsError::Config("no trusted certificate issuers".into()));
    }
    let local = local_template(&config.registry, config.level);
    let client_random = random32(rng)?;
    let session_id = random32(rng)?.to_vec();
    c.transcript.set_templates(Some(local.clone()), None);
    c.send(&HandshakeMessage::ClientHello(ClientHello {
        version: PROTOCOL_VERSION,
        random: client_random,
        session_id,
        suites: config.suites.clone(),
        compression: vec![0],
        extensions: vec![local.to_extension()],
    }))?;

    let HandshakeMessage::ServerHello(sh) = c.expect(HandshakeType::ServerHello)? else { unreachable!() };
    if sh.version != PROTOCOL_VERSION || sh.compression != 0 {
        return Err(c.fatal(AlertDescription::HandshakeFailure, "unsupported version or compression"));
    }
    if !config.suites.contains(&sh.suite) || !sh.suite.is_registered() {
        return Err(c.fatal(
            AlertDescription::HandshakeFailure,
            format!("server chose {} which was not offered", sh.suite),
        ));
    }
    c.transcript.set_suite(sh.suite);
    let remote = match TemplateInfo::find(&sh.extensions) {
        Ok(Some(r)) => r,
        Ok(None) => return Err(c.fatal(AlertDescription::HandshakeFailure, "server sent no template info")),
        Err(e) => return Err(c.fatal(AlertDescription::DecodeError, e.to_string())),
    };
    c.transcript.set_templates(None, Some(remote.clone()));
    if remote.level != config.level {
        return Err(c.fatal(AlertDescription::TemplateMismatch, "server answered for another level"));
    }
    if let Some(reason) = template_mismatch(&config.registry, &remote) {
        return Err(c.fatal(AlertDescription::TemplateMismatch, reason));
    }

    let HandshakeMessage::Certificate(certs) = c.expect(HandshakeType::Certificate)? else { unreachable!() };
    let cert = match Certificate::from_bytes(&certs[0]) {
        Ok(cert) => cert,
        Err(e) => return Err(c.fatal(AlertDescription::BadCertificate, e.to_string())),
    };
    let trusted = config
        .trusted_roots
        .iter()
        .any(|r| r.algorithm_id == cert.hbs_algorithm_id && r.key == cert.issuer_root);
    if !trusted {
        return Err(c.fatal(AlertDescription::BadCertificate, "certificate issuer is not trusted"));
    }
    if !cert.signature_valid() {
        return Err(c.fatal(AlertDescription::BadCertificate, "issuer signature invalid"));
    }
    if cert.kem_algorithm_id != local.encryption_id {
        return Err(c.fatal(
            AlertDescription::BadCertificate,
            format!("certificate KEM {} does not match template {}", cert.kem_algorithm_id, local.encryption_id),
        ));
    }
    let kem_pk = match cert.kem_public() {
        Ok(pk) => pk,
        Err(e) => return Err(c.fatal(AlertDescription::BadCertificate, e.to_string())),
    };
    c.expect(HandshakeType::ServerHelloDone)?;

    let (ct, ss) = cbkem::encapsulate(&kem_pk, rng).map_err(|e| TlsError::Config(e.to_string()))?;
    let ss = Zeroizing::new(ss);
    c.send(&HandshakeMessage::ClientKeyExchange(ct.to_bytes(kem_pk.params())))?;
    let keys = SessionKeys::derive(ss.as_slice(), &client_random, &sh.random);

    c.send_ccs()?;
    c.rl.set_write_keys(keys.client.clone());
    let verify = keys.verify_data("client finished", &c.transcript.hash());
    c.send(&HandshakeMessage::Finished(verify))?;

    let expected = keys.verify_data("server finished", &c.transcript.hash());
    c.expect_ccs()?;
    c.rl.set_read_keys(keys.server.clone());
    let HandshakeMessage::Finished(got) = c.expect(HandshakeType::Finished)? else { unreachable!() };
    if !ct_eq(&got, &expected) {
        return Err(c.fatal(AlertDescription::DecryptError, "server Finished mismatch"));
    }
    Ok((keys, sh.suite))
}

/// Runs the server side on an accepted connection.
pub fn server_handshake<T: Transport>(
    conn: T,
    config: &ServerConfig,
    rng: &mut dyn RandomSource,
) -> Result<(TlsSession<T>, HandshakeTranscript), Box<HandshakeFailure>> {
    let mut c = Conn::new(conn, Direction::ServerToClient);
    let result = server_flow(&mut c, config, rng);
    c.finish(result, |record, keys, suite| TlsSession {
        record,
        keys,
        suite,
        pending: Vec::new(),
    })
}

fn server_flow<T: Transport>(
    c: &mut Conn<T>,
    config: &ServerConfig,
    rng: &mut dyn RandomSource,
) -> Result<(SessionKeys, CipherSuiteId), TlsError> {
    let HandshakeMessage::ClientHello(ch) = c.expect(HandshakeType::ClientHello)? else { unreachable!() };
    if ch.version != PROTOCOL_VERSION || !ch.compression.contains(&0) {
        return Err(c.fatal(AlertDescription::HandshakeFailure, "unsupported version or compression"));
    }
    let Some(suite) = ch
        .suites
        .iter()
        .copied()
        .find(|s| s.is_registered() && config.suites.contains(s))
    else {
        return Err(c.fatal(AlertDescription::HandshakeFailure, "no common cipher suite"));
    };
    c.transcript.set_suite(suite);
    let remote = match TemplateInfo::find(&ch.extensions) {
        Ok(Some(r)) => r,
        Ok(None) => return Err(c.fatal(AlertDescription::HandshakeFailure, "client sent no template info")),
        Err(e) => return Err(c.fatal(AlertDescription::DecodeError, e.to_string())),
    };
    let local = local_template(&config.registry, remote.level);
    c.transcript.set_templates(Some(local.clone()), Some(remote.clone()));
    if let Some(reason) = template_mismatch(&config.registry, &remote) {
        return Err(c.fatal(AlertDescription::TemplateMismatch, reason));
    }
    if config.certificate.kem_algorithm_id != local.encryption_id {
        return Err(c.fatal(
            AlertDescription::HandshakeFailure,
            format!("no certificate for template KEM {}", local.encryption_id),
        ));
    }

    let server_random = random32(rng)?;
    c.send(&HandshakeMessage::ServerHello(ServerHello {
        version: PROTOCOL_VERSION,
        random: server_random,
        session_id: Vec::new(),
        suite,
        compression: 0,
        extensions: vec![local.to_extension()],
    }))?;
    c.send(&HandshakeMessage::Certificate(vec![config.certificate_bytes.clone()]))?;
    c.send(&HandshakeMessage::ServerHelloDone)?;

    let HandshakeMessage::ClientKeyExchange(ct) = c.expect(HandshakeType::ClientKeyExchange)? else {
        unreachable!()
    };
    let params = config.kem_key.public.params();
    let ss = match KemCiphertext::from_bytes(params, &ct).and_then(|ct| cbkem::decapsulate(&config.kem_key.secret, &ct)) {
        Ok(ss) => Zeroizing::new(ss),
        Err(e) => return Err(c.fatal(AlertDescription::InvalidCiphertext, e.to_string())),
    };
    let keys = SessionKeys::derive(ss.as_slice(), &ch.random, &server_random);

    c.expect_ccs()?;
    c.rl.set_read_keys(keys.client.clone());
    let expected = keys.verify_data("client finished", &c.transcript.hash());
    let HandshakeMessage::Finished(got) = c.expect(HandshakeType::Finished)? else { unreachable!() };
    if !ct_eq(&got, &expected) {
        return Err(c.fatal(AlertDescription::DecryptError, "client Finished mismatch"));
    }

    c.send_ccs()?;
    c.rl.set_write_keys(keys.server.clone());
    let verify = keys.verify_data("server finished", &c.transcript.hash());
    c.send(&HandshakeMessage::Finished(verify))?;
    Ok((keys, suite))
}
