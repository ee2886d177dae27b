//! Handshake message encoding: `type u8 | length u24 | body`.
//!
//! ```text
//! ClientHello       : version u16 | random[32] | session_id u8-vec | suites u16-vec of u16 |
//!                     compression u8-vec | extensions u16-vec
//! ServerHello       : version u16 | random[32] | session_id u8-vec | suite u16 |
//!                     compression u8 | extensions u16-vec
//! Extension         : type u16 | data u16-vec
//! Certificate       : certificate_list u24-vec of (certificate u24-vec)
//! ServerHelloDone   : empty
//! ClientKeyExchange : kem_ciphertext u16-vec
//! Finished          : verify_data[12]
//! TemplateInfo      : registry_version u32 | level u8 | signature_id u8-str | encryption_id u8-str
//! ```

use crate::codec::{put_u16, put_u24, put_u32, put_vec_u16, put_vec_u24, put_vec_u8, MalformedEncoding, Reader};
use crate::easyapi::SecurityLevel;

use super::{CipherSuiteId, EXT_TEMPLATE_INFO, MAX_HANDSHAKE_LEN};

pub const RANDOM_LEN: usize = 32;
pub const VERIFY_DATA_LEN: usize = 12;
pub const HANDSHAKE_HEADER_LEN: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HandshakeType {
    ClientHello,
    ServerHello,
    Certificate,
    ServerHelloDone,
    ClientKeyExchange,
    Finished,
}

impl HandshakeType {
    pub const ALL: [HandshakeType; 6] = [
        HandshakeType::ClientHello,
        HandshakeType::ServerHello,
        HandshakeType::Certificate,
        HandshakeType::ServerHelloDone,
        HandshakeType::ClientKeyExchange,
        HandshakeType::Finished,
    ];

    pub fn code(self) -> u8 {
        match self {
            HandshakeType::ClientHello => 1,
            HandshakeType::ServerHello => 2,
            HandshakeType::Certificate => 11,
            HandshakeType::ServerHelloDone => 14,
            HandshakeType::ClientKeyExchange => 16,
            HandshakeType::Finished => 20,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.code() == code)
    }

    pub fn name(self) -> &'static str {
        match self {
            HandshakeType::ClientHello => "ClientHello",
            HandshakeType::ServerHello => "ServerHello",
            HandshakeType::Certificate => "Certificate",
            HandshakeType::ServerHelloDone => "ServerHelloDone",
            HandshakeType::ClientKeyExchange => "ClientKeyExchange",
            HandshakeType::Finished => "Finished",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Extension {
    pub extension_type: u16,
    pub data: Vec<u8>,
}

/// Contents of the 0xFD00 extension.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateInfo {
    pub registry_version: u32,
    pub level: SecurityLevel,
    pub signature_id: String,
    pub encryption_id: String,
}

impl TemplateInfo {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        put_u32(&mut out, self.registry_version);
        out.push(self.level.code());
        put_vec_u8(&mut out, self.signature_id.as_bytes());
        put_vec_u8(&mut out, self.encryption_id.as_bytes());
        out
    }

    pub fn decode(data: &[u8]) -> Result<Self, MalformedEncoding> {
        let mut r = Reader::new(data);
        let registry_version = r.u32("registry version")?;
        let code = r.u8("level")?;
        let level = SecurityLevel::from_code(code).ok_or_else(|| r.error(format!("unknown level {code}")))?;
        let signature_id = r.string_u8("signature id")?;
        let encryption_id = r.string_u8("encryption id")?;
        r.finish()?;
        Ok(Self {
            registry_version,
            level,
            signature_id,
            encryption_id,
        })
    }

    pub fn to_extension(&self) -> Extension {
        Extension {
            extension_type: EXT_TEMPLATE_INFO,
            data: self.encode(),
        }
    }

    /// Finds and decodes the extension; `Ok(None)` when absent.
    pub fn find(extensions: &[Extension]) -> Result<Option<Self>, MalformedEncoding> {
        extensions
            .iter()
            .find(|e| e.extension_type == EXT_TEMPLATE_INFO)
            .map(|e| Self::decode(&e.data))
            .transpose()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientHello {
    pub version: u16,
    pub random: [u8; RANDOM_LEN],
    pub session_id: Vec<u8>,
    pub suites: Vec<CipherSuiteId>,
    pub compression: Vec<u8>,
    pub extensions: Vec<Extension>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServerHello {
    pub version: u16,
    pub random: [u8; RANDOM_LEN],
    pub session_id: Vec<u8>,
    pub suite: CipherSuiteId,
    pub compression: u8,
    pub extensions: Vec<Extension>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HandshakeMessage {
    ClientHello(ClientHello),
    ServerHello(ServerHello),
    /// Encoded certificates, leaf first. This implementation sends exactly one.
    Certificate(Vec<Vec<u8>>),
    ServerHelloDone,
    ClientKeyExchange(Vec<u8>),
    Finished([u8; VERIFY_DATA_LEN]),
}

impl HandshakeMessage {
    pub fn handshake_type(&self) -> HandshakeType {
        match self {
            HandshakeMessage::ClientHello(_) => HandshakeType::ClientHello,
            HandshakeMessage::ServerHello(_) => HandshakeType::ServerHello,
            HandshakeMessage::Certificate(_) => HandshakeType::Certificate,
            HandshakeMessage::ServerHelloDone => HandshakeType::ServerHelloDone,
            HandshakeMessage::ClientKeyExchange(_) => HandshakeType::ClientKeyExchange,
            HandshakeMessage::Finished(_) => HandshakeType::Finished,
        }
    }
}

fn put_extensions(out: &mut Vec<u8>, extensions: &[Extension]) {
    let mut block = Vec::new();
    for e in extensions {
        put_u16(&mut block, e.extension_type);
        put_vec_u16(&mut block, &e.data);
    }
    put_vec_u16(out, &block);
}

fn read_extensions(r: &mut Reader<'_>) -> Result<Vec<Extension>, MalformedEncoding> {
    let start = r.offset();
    let block = r.vec_u16("extensions")?;
    let mut inner = Reader::new(block);
    let mut out = Vec::new();
    while !inner.is_empty() {
        let at = inner.offset();
        let extension_type = inner.u16("extension type")?;
        let data = inner.vec_u16("extension data")?.to_vec();
        if out.iter().any(|e: &Extension| e.extension_type == extension_type) {
            return Err(MalformedEncoding::new(
                start + 2 + at,
                format!("duplicate extension 0x{extension_type:04X}"),
            ));
        }
        out.push(Extension { extension_type, data });
    }
    Ok(out)
}

/// Serializes one handshake message with its 4-byte header.
pub fn encode_handshake_message(msg: &HandshakeMessage) -> Vec<u8> {
    let mut body = Vec::new();
    match msg {
        HandshakeMessage::ClientHello(ch) => {
            put_u16(&mut body, ch.version);
            body.extend_from_slice(&ch.random);
            put_vec_u8(&mut body, &ch.session_id);
            let suites: Vec<u8> = ch.suites.iter().flat_map(|s| s.0.to_be_bytes()).collect();
            put_vec_u16(&mut body, &suites);
            put_vec_u8(&mut body, &ch.compression);
            put_extensions(&mut body, &ch.extensions);
        }
        HandshakeMessage::ServerHello(sh) => {
            put_u16(&mut body, sh.version);
            body.extend_from_slice(&sh.random);
            put_vec_u8(&mut body, &sh.session_id);
            put_u16(&mut body, sh.suite.0);
            body.push(sh.compression);
            put_extensions(&mut body, &sh.extensions);
        }
        HandshakeMessage::Certificate(certs) => {
            let mut list = Vec::new();
            for c in certs {
                put_vec_u24(&mut list, c);
            }
            put_vec_u24(&mut body, &list);
        }
        HandshakeMessage::ServerHelloDone => {}
        HandshakeMessage::ClientKeyExchange(ct) => put_vec_u16(&mut body, ct),
        HandshakeMessage::Finished(v) => body.extend_from_slice(v),
    }
    let mut out = Vec::with_capacity(HANDSHAKE_HEADER_LEN + body.len());
    out.push(msg.handshake_type().code());
    put_u24(&mut out, body.len() as u32);
    out.extend_from_slice(&body);
    out
}

/// Parses exactly one handshake message; trailing bytes are an error.
pub fn decode_handshake_message(bytes: &[u8]) -> Result<HandshakeMessage, MalformedEncoding> {
    let mut r = Reader::new(bytes);
    let code = r.u8("handshake type")?;
    let kind = HandshakeType::from_code(code)
        .ok_or_else(|| MalformedEncoding::new(0, format!("unknown handshake type {code}")))?;
    let len = r.u24("handshake length")? as usize;
    if len > MAX_HANDSHAKE_LEN {
        return Err(MalformedEncoding::new(1, format!("handshake length {len} over limit")));
    }
    let body = r.take(len, "handshake body")?;
    r.finish()?;
    decode_body(kind, body).map_err(|e| MalformedEncoding::new(HANDSHAKE_HEADER_LEN + e.offset, e.reason))
}

fn decode_body(kind: HandshakeType, body: &[u8]) -> Result<HandshakeMessage, MalformedEncoding> {
    let mut r = Reader::new(body);
    let msg = match kind {
        HandshakeType::ClientHello => {
            let version = r.u16("client version")?;
            let random = r.array::<RANDOM_LEN>("client random")?;
            let session_id = r.vec_u8("session id")?.to_vec();
            if session_id.len() > 32 {
                return Err(r.error("session id longer than 32 bytes"));
            }
            let raw = r.vec_u16("cipher suites")?;
            if raw.is_empty() || raw.len() % 2 != 0 {
                return Err(r.error("cipher suite list must be a non-empty list of u16"));
            }
            let suites = raw
                .chunks(2)
                .map(|c| CipherSuiteId(u16::from_be_bytes([c[0], c[1]])))
                .collect();
            let compression = r.vec_u8("compression methods")?.to_vec();
            if compression.is_empty() {
                return Err(r.error("empty compression method list"));
            }
            let extensions = read_extensions(&mut r)?;
            HandshakeMessage::ClientHello(ClientHello {
                version,
                random,
                session_id,
                suites,
                compression,
                extensions,
            })
        }
        HandshakeType::ServerHello => {
            let version = r.u16("server version")?;
            let random = r.array::<RANDOM_LEN>("server random")?;
            let session_id = r.vec_u8("session id")?.to_vec();
            if session_id.len() > 32 {
                return Err(r.error("session id longer than 32 bytes"));
            }
            let suite = CipherSuiteId(r.u16("cipher suite")?);
            let compression = r.u8("compression method")?;
            let extensions = read_extensions(&mut r)?;
            HandshakeMessage::ServerHello(ServerHello {
                version,
                random,
                session_id,
                suite,
                compression,
                extensions,
            })
        }
        HandshakeType::Certificate => {
            let list = r.vec_u24("certificate list")?;
            let mut inner = Reader::new(list);
            let mut certs = Vec::new();
            while !inner.is_empty() {
                let c = inner.vec_u24("certificate")?;
                if c.is_empty() {
                    return Err(MalformedEncoding::new(3 + inner.offset(), "empty certificate"));
                }
                certs.push(c.to_vec());
            }
            if certs.is_empty() {
                return Err(r.error("empty certificate list"));
            }
            HandshakeMessage::Certificate(certs)
        }
        HandshakeType::ServerHelloDone => HandshakeMessage::ServerHelloDone,
        HandshakeType::ClientKeyExchange => {
            let ct = r.vec_u16("kem ciphertext")?;
            if ct.is_empty() {
                return Err(r.error("empty key exchange"));
            }
            HandshakeMessage::ClientKeyExchange(ct.to_vec())
        }
        HandshakeType::Finished => HandshakeMessage::Finished(r.array::<VERIFY_DATA_LEN>("verify data")?),
    };
    r.finish()?;
    Ok(msg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hello() -> ClientHello {
        ClientHello {
            version: 0x0303,
            random: [7; 32],
            session_id: vec![1; 32],
            suites: vec![CipherSuiteId(0x1306), CipherSuiteId(0x002F)],
            compression: vec![0],
            extensions: vec![TemplateInfo {
                registry_version: 1,
                level: SecurityLevel::High,
                signature_id: "SPX-TOY-32-16-12-SL".into(),
                encryption_id: "CME-TOY-16-10".into(),
            }
            .to_extension()],
        }
    }

    #[test]
    fn header_layout() {
        let bytes = encode_handshake_message(&HandshakeMessage::Finished([9; 12]));
        assert_eq!(bytes[..4], [20, 0, 0, 12]);
        assert_eq!(encode_handshake_message(&HandshakeMessage::ServerHelloDone), [14, 0, 0, 0]);
    }

    #[test]
    fn client_hello_roundtrip_and_extension() {
        let msg = HandshakeMessage::ClientHello(hello());
        let bytes = encode_handshake_message(&msg);
        assert_eq!(decode_handshake_message(&bytes).unwrap(), msg);
        let HandshakeMessage::ClientHello(ch) = msg else { unreachable!() };
        assert_eq!(TemplateInfo::find(&ch.extensions).unwrap().unwrap().level, SecurityLevel::High);
    }

    #[test]
    fn rejects_trailing_and_overflow() {
        let mut bytes = encode_handshake_message(&HandshakeMessage::ClientHello(hello()));
        bytes.push(0);
        assert!(decode_handshake_message(&bytes).is_err());
        // Length says one more byte than present.
        let mut short = encode_handshake_message(&HandshakeMessage::Finished([0; 12]));
        short[3] = 13;
        assert!(decode_handshake_message(&short).is_err());
        // Length beyond the cap.
        assert!(decode_handshake_message(&[11, 0xFF, 0xFF, 0xFF]).is_err());
    }

    #[test]
    fn rejects_empty_required_bodies() {
        for t in [1u8, 2, 11, 16, 20] {
            let err = decode_handshake_message(&[t, 0, 0, 0]).unwrap_err();
            assert!(err.offset >= 4, "type {t}: {err}");
        }
        assert!(decode_handshake_message(&[14, 0, 0, 1, 0]).is_err());
        assert!(decode_handshake_message(&[99, 0, 0, 0]).is_err());
    }

    #[test]
    fn duplicate_extension_rejected() {
        let mut ch = hello();
        ch.extensions.push(ch.extensions[0].clone());
        let bytes = encode_handshake_message(&HandshakeMessage::ClientHello(ch));
        assert!(decode_handshake_message(&bytes).is_err());
    }
}
