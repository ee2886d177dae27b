//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits non-zero when any
//! criterion fails. Criteria 1 to 3 drive the `agilecrypt` binary in separate processes;
//! the rest exercise the library directly.

use std::collections::HashSet;
use std::fmt::Debug;
use std::io::{BufRead, BufReader};
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, ExitCode, Output, Stdio};
use std::sync::{mpsc, Arc};
use std::thread;
use std::time::{Duration, Instant};

use agilecrypt::cbkem::{self, KemCiphertext, KemKeyPair, KemParams, KemPublicKey};
use agilecrypt::easyapi::{
    encrypt_to, AlgorithmParameters, AlgorithmSpec, EasyEncrypter, EasyError, EasySigner, Kind, PublicKeyInfo,
    SecurityLevel, SignatureBlob, TemplateRegistry,
};
use agilecrypt::hbs::{self, HbsError, HbsKeyPair, HbsParams, HbsSignature, LeafMode};
use agilecrypt::keystore::{CrashPoint, Keystore, KeystoreEntry, KeystoreError, KeystoreParameters};
use agilecrypt::minitls::{
    client_handshake, duplex, server_handshake, AlertDescription, Certificate, ClientConfig, ServerConfig,
    TamperStream, TlsError, TlsSession, Transport, MAX_CIPHERTEXT_LEN, RECORD_HEADER_LEN,
};
use agilecrypt::primitives::{
    open_stream, prf, random_bytes, seal_stream, uniform_below, DeterministicRandom, HashId, SymmetricKeys,
};
use sha2::{Digest, Sha256};

const BIN: &str = env!("CARGO_BIN_EXE_agilecrypt");
const PASSWORD: &str = "acceptance password";
const TIMEOUT: Duration = Duration::from_secs(120);

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: Debug>(context: &'static str) -> impl FnOnce(E) -> String {
    move |e| format!("{context}: {e:?}")
}

fn flip(bytes: &mut [u8], bit: usize) {
    bytes[bit / 8] ^= 0x80 >> (bit % 8);
}

// ---------------------------------------------------------------------------------------
// Process helpers
// ---------------------------------------------------------------------------------------

struct Scratch {
    dir: tempfile::TempDir,
}

impl Scratch {
    fn new() -> Result<Self, String> {
        Ok(Self {
            dir: tempfile::tempdir().map_err(err("tempdir"))?,
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn cmd(&self, args: &[&str]) -> Command {
        let mut c = Command::new(BIN);
        c.args(args).env("AGILECRYPT_PASSWORD", PASSWORD).current_dir(self.dir.path());
        c
    }

    fn run(&self, args: &[&str]) -> Result<Output, String> {
        self.cmd(args).output().map_err(err("spawn"))
    }

    fn ok(&self, args: &[&str]) -> Result<String, String> {
        let out = self.run(args)?;
        ensure(out.status.success(), || {
            format!("{} failed: {}", args[0], String::from_utf8_lossy(&out.stderr).trim())
        })?;
        Ok(String::from_utf8_lossy(&out.stdout).trim().to_string())
    }

    fn keygen(&self, keystore: &str, kind: &str, level: &str) -> Result<String, String> {
        self.ok(&["keygen", "--keystore", keystore, "--kdf-iterations", "1000", "--kind", kind, "--level", level])
    }

    /// LOW issuer, server KEM key at `level`, certificate binding the two.
    fn server_identity(&self, level: &str) -> Result<String, String> {
        let issuer = self.keygen("ca.agks", "signature", "low")?;
        self.ok(&["pubkey", "--keystore", "ca.agks", "--alias", &issuer, "--out", "ca.agpk"])?;
        let kem = self.keygen("server.agks", "encryption", level)?;
        self.ok(&["pubkey", "--keystore", "server.agks", "--alias", &kem, "--out", "server.agpk"])?;
        self.ok(&[
            "cert-issue", "--keystore", "ca.agks", "--issuer", &issuer, "--kem-pubkey", "server.agpk", "--subject",
            "node-b", "--out", "server.cert",
        ])?;
        Ok(kem)
    }

    fn serve(&self, kem: &str, registry: &str, connections: usize) -> Result<(Child, String), String> {
        let max = connections.to_string();
        let mut child = self
            .cmd(&[
                "tls-serve", "--keystore", "server.agks", "--kem-alias", kem, "--cert", "server.cert", "--registry",
                registry, "--max-connections", &max, "--report", "server.json",
            ])
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(err("spawn server"))?;
        let mut line = String::new();
        let stdout = child.stdout.as_mut().ok_or("server stdout")?;
        BufReader::new(stdout).read_line(&mut line).map_err(err("server stdout"))?;
        let addr = line.trim().strip_prefix("listening on ").ok_or_else(|| format!("server said {line:?}"))?;
        Ok((child, addr.to_string()))
    }

    fn json(&self, name: &str) -> Result<serde_json::Value, String> {
        let raw = std::fs::read(self.path(name)).map_err(err("read report"))?;
        serde_json::from_slice(&raw).map_err(err("parse report"))
    }
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).trim().to_string()
}

fn message_types(report: &serde_json::Value) -> Vec<String> {
    report["messages"]
        .as_array()
        .map(|m| m.iter().filter_map(|e| e["type"].as_str().map(str::to_string)).collect())
        .unwrap_or_default()
}

// ---------------------------------------------------------------------------------------
// 1. Handshake size at the large KEM parameter set
// ---------------------------------------------------------------------------------------

fn size_reproduction() -> Outcome {
    // Systematic parity check [I | T] over 10 blocks of the length 2^16 - 1 code: T has k * m bits per block.
    let (m, blocks) = (16u64, 10u64);
    let n = (1u64 << m) - 1;
    let k = n - m;
    let public_key_len = (k * m * blocks).div_ceil(8) as usize;
    ensure(public_key_len == 1_310_380, || format!("formula gives {public_key_len}"))?;
    let params = KemParams::named("mce-emu").map_err(err("mce-emu"))?;
    ensure(params.public_key_len() == public_key_len, || format!("library says {}", params.public_key_len()))?;

    let s = Scratch::new()?;
    let started = Instant::now();
    s.ok(&["measure", "--paramset", "mce-emu", "--reps", "3", "--out", "measure.json"])?;
    let elapsed = started.elapsed();
    let r = s.json("measure.json")?;
    let cert = r["messages"]
        .as_array()
        .and_then(|m| m.iter().find(|e| e["type"] == "Certificate"))
        .ok_or("no Certificate row")?;
    let cert_median = cert["median"].as_u64().ok_or("Certificate median")?;
    let total = r["total_bytes"]["median"].as_u64().ok_or("total median")?;
    ensure(r["reps"] == 3 && r["runs"].as_array().map(Vec::len) == Some(3), || "expected 3 runs".into())?;
    ensure(cert_median >= public_key_len as u64, || format!("Certificate {cert_median} B"))?;
    ensure((1_300_000..=1_600_000).contains(&total), || format!("total {total} B"))?;
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "Certificate {cert_median} B >= {public_key_len} B, total {total} B, {:.1} s",
        elapsed.as_secs_f64()
    ))
}

// ---------------------------------------------------------------------------------------
// 2. Two-process handshake with 1 MiB echo
// ---------------------------------------------------------------------------------------

fn handshake_success() -> Outcome {
    const RUNS: usize = 10;
    const BYTES: &str = "1048576";
    let s = Scratch::new()?;
    let kem = s.server_identity("low")?;
    let (server, addr) = s.serve(&kem, "v1", RUNS)?;
    let clients: Vec<(usize, Child)> = (0..RUNS)
        .map(|i| {
            let report = format!("client-{i}.json");
            s.cmd(&[
                "tls-connect", "--connect", &addr, "--trust", "ca.agpk", "--level", "low", "--bytes", BYTES,
                "--report", &report,
            ])
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map(|c| (i, c))
            .map_err(err("spawn client"))
        })
        .collect::<Result<_, _>>()?;
    let mut ok = 0;
    for (i, child) in clients {
        let out = child.wait_with_output().map_err(err("client"))?;
        ensure(out.status.success(), || format!("client {i}: {}", stderr_of(&out)))?;
        let stdout = String::from_utf8_lossy(&out.stdout);
        ensure(stdout.contains(&format!("echoed {BYTES} bytes")), || format!("client {i}: {stdout}"))?;
        let r = s.json(&format!("client-{i}.json"))?;
        ensure(r["aborted"] == false && r["suite_id"] == 0x1306, || format!("client {i}: {r}"))?;
        ok += 1;
    }
    let server = server.wait_with_output().map_err(err("server"))?;
    ensure(server.status.success(), || format!("server: {}", stderr_of(&server)))?;
    let reports = s.json("server.json")?;
    ensure(reports.as_array().map(Vec::len) == Some(RUNS), || "server report count".into())?;
    Ok(format!("{ok}/{RUNS} runs completed suite 0x1306 and echoed 1 MiB intact"))
}

// ---------------------------------------------------------------------------------------
// 3. Template registries v1 against v2 at HIGH
// ---------------------------------------------------------------------------------------

fn semantic_drift_guard() -> Outcome {
    const RUNS: usize = 10;
    let s = Scratch::new()?;
    let kem = s.server_identity("low")?;
    for run in 0..RUNS {
        let (server, addr) = s.serve(&kem, "v2", 1)?;
        let out = s.run(&[
            "tls-connect", "--connect", &addr, "--trust", "ca.agpk", "--registry", "v1", "--level", "high",
            "--report", "client.json",
        ])?;
        let server = server.wait_with_output().map_err(err("server"))?;
        ensure(out.status.code() == Some(1), || format!("run {run}: client exit {:?}", out.status))?;
        ensure(stderr_of(&out).contains("template_mismatch"), || format!("run {run}: {}", stderr_of(&out)))?;
        ensure(server.status.code() == Some(1), || format!("run {run}: server exit {:?}", server.status))?;
        ensure(stderr_of(&server).contains("template_mismatch"), || format!("run {run}: {}", stderr_of(&server)))?;

        let client = s.json("client.json")?;
        ensure(client["aborted"] == true && client["alert"] == "template_mismatch", || format!("{client}"))?;
        let types = message_types(&client);
        ensure(types == ["ClientHello", "Alert(template_mismatch)"], || format!("run {run}: client saw {types:?}"))?;
        let server_runs = s.json("server.json")?;
        let server_types = message_types(&server_runs[0]);
        ensure(!server_types.iter().any(|t| t == "ClientKeyExchange" || t == "ServerHello"), || {
            format!("run {run}: server saw {server_types:?}")
        })?;
    }
    Ok(format!("{RUNS}/{RUNS} runs aborted with template_mismatch before ServerHello and ClientKeyExchange"))
}

// ---------------------------------------------------------------------------------------
// 4. KEM correctness
// ---------------------------------------------------------------------------------------

fn kem_correctness() -> Outcome {
    const TRIALS: usize = 1000;
    let mut rng = DeterministicRandom::from_u64(0xacc4);
    let mut detail = Vec::new();
    for name in ["toy-64", "toy-128"] {
        let params = KemParams::named(name).map_err(err("named set"))?;
        let kp = KemKeyPair::generate(params, &mut rng).map_err(err("keygen"))?;
        let mut secrets = HashSet::new();
        for trial in 0..TRIALS {
            let (ct, ss) = cbkem::encapsulate(&kp.public, &mut rng).map_err(err("encapsulate"))?;
            let back = cbkem::decapsulate(&kp.secret, &ct).map_err(err("decapsulate"))?;
            ensure(back == ss, || format!("{name} trial {trial}: decap differs"))?;
            secrets.insert(ss);
        }
        ensure(secrets.len() == TRIALS, || format!("{name}: repeated shared secrets"))?;
        detail.push(format!("{name} {TRIALS}/{TRIALS}"));
    }

    // m = 3: every column is a distinct nonzero syndrome, and decapsulating the syndrome of
    // position j recomputes SHA-256("kem-ss" | positions | ciphertext).
    let params = KemParams::new(3, 2).map_err(err("m=3"))?;
    let mut checked = 0;
    for seed in 0..16u8 {
        let kp = KemKeyPair::from_seed(params, [seed; 32]).map_err(err("keygen"))?;
        for block in 0..2 {
            let cols: HashSet<u32> = (0..7).map(|j| kp.public.column(block, j)).collect();
            ensure(cols == (1..=7).collect(), || format!("seed {seed}: columns {cols:?}"))?;
        }
        for j0 in 0..7u32 {
            for j1 in 0..7u32 {
                let ct = KemCiphertext {
                    syndromes: vec![kp.public.column(0, j0), kp.public.column(1, j1)],
                };
                let mut h = Sha256::new();
                h.update(b"kem-ss");
                h.update(j0.to_be_bytes());
                h.update(j1.to_be_bytes());
                h.update(ct.to_bytes(&params));
                let expected: [u8; 32] = h.finalize().into();
                let got = cbkem::decapsulate(&kp.secret, &ct).map_err(err("decapsulate"))?;
                ensure(got == expected, || format!("seed {seed}: positions ({j0}, {j1})"))?;
                checked += 1;
            }
        }
    }
    detail.push(format!("m=3 bijection over {checked} position pairs"));
    Ok(detail.join(", "))
}

// ---------------------------------------------------------------------------------------
// 5. Hash-based signatures
// ---------------------------------------------------------------------------------------

/// Winternitz chain count from first principles: message digits plus the base-w digits of
/// the largest possible checksum.
fn wots_chains(n: usize, w: u32) -> usize {
    let bits_per_digit = w.ilog2() as usize;
    let len1 = (8 * n).div_ceil(bits_per_digit);
    let mut max_checksum = len1 as u64 * (w as u64 - 1);
    let mut len2 = 0;
    while max_checksum > 0 {
        max_checksum /= w as u64;
        len2 += 1;
    }
    len1 + len2
}

fn expected_signature_len(n: usize, w: u32, h: u32) -> usize {
    // leaf index u32, 32-byte randomizer, one n-byte value per chain, one n-byte node per level
    4 + 32 + wots_chains(n, w) * n + h as usize * n
}

fn signature_correctness() -> Outcome {
    const TRIALS: u32 = 1000;
    let params = HbsParams::from_algorithm_id("SPX-TOY-16-16-10-S").map_err(err("params"))?;
    let mut rng = DeterministicRandom::from_u64(0xacc5);
    let mut kp = HbsKeyPair::generate(params, &mut rng).map_err(err("keygen"))?;
    let root = kp.root().to_vec();
    let mut rejected = 0;
    for trial in 0..TRIALS {
        let len = uniform_below(&mut rng, 256).map_err(err("rng"))? as usize;
        let msg = random_bytes(&mut rng, len).map_err(err("rng"))?;
        let sig = kp.sign(&msg, &mut rng).map_err(err("sign"))?;
        ensure(hbs::verify(&root, &params, &msg, &sig), || format!("trial {trial}: valid signature rejected"))?;

        // One bit of the encoded signature or of the message.
        let mut bytes = sig.to_bytes();
        let mut bad_msg = msg.clone();
        if trial % 5 == 4 && !bad_msg.is_empty() {
            let bit = uniform_below(&mut rng, (bad_msg.len() * 8) as u32).map_err(err("rng"))?;
            flip(&mut bad_msg, bit as usize);
        } else {
            let bit = uniform_below(&mut rng, (bytes.len() * 8) as u32).map_err(err("rng"))?;
            flip(&mut bytes, bit as usize);
        }
        let accepted = match HbsSignature::from_bytes(&params, &bytes) {
            Ok(s) => hbs::verify(&root, &params, &bad_msg, &s),
            Err(_) => false,
        };
        ensure(!accepted || (bytes == sig.to_bytes() && bad_msg == msg), || {
            format!("trial {trial}: mutation accepted")
        })?;
        rejected += 1;
    }

    let mut ids: Vec<String> = Vec::new();
    for reg in [TemplateRegistry::builtin_v1(), TemplateRegistry::builtin_v2()] {
        for level in SecurityLevel::ALL {
            let id = reg.resolve(Kind::Signature, level).algorithm_id;
            if !ids.contains(&id) {
                ids.push(id);
            }
        }
    }
    let mut grid = Vec::new();
    for n in [16usize, 32] {
        for w in [4u32, 16, 256] {
            for h in [4u32, 6] {
                grid.push(HbsParams::new(n, w, h, LeafMode::Stateful).map_err(err("grid"))?);
                grid.push(HbsParams::new(n, w, h, LeafMode::Stateless).map_err(err("grid"))?);
            }
        }
    }
    let mut sets = ids
        .iter()
        .map(|id| HbsParams::from_algorithm_id(id).map_err(err("registry id")))
        .collect::<Result<Vec<_>, _>>()?;
    sets.extend(grid);
    for p in &sets {
        let (n, w, h) = parse_spx(&p.algorithm_id())?;
        let expected = expected_signature_len(n, w, h);
        let mut kp = HbsKeyPair::generate(*p, &mut rng).map_err(err("keygen"))?;
        let sig = kp.sign(b"size", &mut rng).map_err(err("sign"))?;
        let got = sig.to_bytes().len();
        ensure(got == expected && p.signature_len() == expected, || {
            format!("{}: {got} B encoded, {} B declared, formula {expected} B", p.algorithm_id(), p.signature_len())
        })?;
    }
    Ok(format!(
        "{TRIALS} roundtrips, {rejected}/{TRIALS} mutations rejected, size formula holds for {} parameter sets ({})",
        sets.len(),
        ids.join(", ")
    ))
}

/// `SPX-TOY-<n>-<w>-<h>-<mode>` to (n, w, h).
fn parse_spx(id: &str) -> Result<(usize, u32, u32), String> {
    let parts: Vec<&str> = id.split('-').collect();
    let bad = || format!("unexpected id {id}");
    if parts.len() != 6 {
        return Err(bad());
    }
    Ok((
        parts[2].parse().map_err(|_| bad())?,
        parts[3].parse().map_err(|_| bad())?,
        parts[4].parse().map_err(|_| bad())?,
    ))
}

// ---------------------------------------------------------------------------------------
// 6. Stateful key safety across crashes
// ---------------------------------------------------------------------------------------

fn keystore_params(dir: &Path, password: &str) -> Result<KeystoreParameters, String> {
    Ok(KeystoreParameters::new(dir.join("store.agks"), password).map_err(err("params"))?.with_iterations(8))
}

fn stateful_safety() -> Outcome {
    const SCHEDULES: u64 = 100;
    let mut crashes = 0;
    let mut released_total = 0;
    for schedule in 0..SCHEDULES {
        let dir = tempfile::tempdir().map_err(err("tempdir"))?;
        let mut rng = DeterministicRandom::from_u64(0xacc6_0000 + schedule);
        let mut ks = Keystore::create(keystore_params(dir.path(), "pw")?).map_err(err("create"))?;
        ks.put_entry(KeystoreEntry::new("k", "SPX-TOY-16-16-6-S", vec![1; 32], vec![2; 16]))
            .map_err(err("put"))?;
        let mut released = HashSet::new();
        for _ in 0..60 {
            let count = 1 + uniform_below(&mut rng, 6).map_err(err("rng"))? as u64;
            let crash = uniform_below(&mut rng, 5).map_err(err("rng"))? as usize;
            if let Some(&point) = CrashPoint::ALL.get(crash) {
                ks.inject_crash(point);
            }
            match ks.reserve_leaves("k", count) {
                Ok(range) => {
                    for i in range {
                        ensure(released.insert(i), || format!("schedule {schedule}: leaf {i} released twice"))?;
                    }
                }
                Err(KeystoreError::SimulatedCrash(_)) => {
                    crashes += 1;
                    drop(ks);
                    ks = Keystore::open(keystore_params(dir.path(), "pw")?).map_err(err("reopen"))?;
                }
                Err(KeystoreError::KeyExhausted { capacity, .. }) => {
                    ensure(capacity == 64, || format!("capacity {capacity}"))?;
                    break;
                }
                Err(e) => return Err(format!("schedule {schedule}: {e}")),
            }
            if uniform_below(&mut rng, 4).map_err(err("rng"))? == 0 {
                drop(ks);
                ks = Keystore::open(keystore_params(dir.path(), "pw")?).map_err(err("reopen"))?;
            }
        }
        ensure(released.iter().all(|&i| i < 64), || format!("schedule {schedule}: leaf beyond 2^h"))?;
        released_total += released.len();
    }

    // Exhaustion at exactly 2^h: keystore reservations, the raw key pair, and the facade.
    let dir = tempfile::tempdir().map_err(err("tempdir"))?;
    let mut ks = Keystore::create(keystore_params(dir.path(), "pw")?).map_err(err("create"))?;
    ks.put_entry(KeystoreEntry::new("k", "SPX-TOY-16-16-4-S", vec![1; 32], vec![2; 16])).map_err(err("put"))?;
    ensure(ks.reserve_leaves("k", 16) == Ok(0..16), || "16 leaves not reservable".into())?;
    ensure(matches!(ks.reserve_leaves("k", 1), Err(KeystoreError::KeyExhausted { capacity: 16, .. })), || {
        "17th reservation accepted".into()
    })?;

    let mut rng = DeterministicRandom::from_u64(0xacc6);
    let params = HbsParams::from_algorithm_id("SPX-TOY-16-16-6-S").map_err(err("params"))?;
    let mut kp = HbsKeyPair::generate(params, &mut rng).map_err(err("keygen"))?;
    let mut leaves = HashSet::new();
    for _ in 0..64 {
        leaves.insert(kp.sign(b"x", &mut rng).map_err(err("sign"))?.leaf_index);
    }
    ensure(leaves.len() == 64, || "repeated leaf".into())?;
    ensure(matches!(kp.sign(b"x", &mut rng), Err(HbsError::KeyExhausted(64))), || "65th signature".into())?;

    let dir = tempfile::tempdir().map_err(err("tempdir"))?;
    let ap = TemplateRegistry::builtin_v1().resolve(Kind::Signature, SecurityLevel::Low);
    let mut signer = EasySigner::with_new_key(ap, keystore_params(dir.path(), "pw")?)
        .map_err(err("signer"))?
        .with_reservation_batch(64)
        .map_err(err("batch"))?;
    for i in 0..256u32 {
        signer.sign(&i.to_be_bytes()).map_err(err("facade sign"))?;
    }
    ensure(signer.sign(b"one too many") == Err(EasyError::Hbs(HbsError::KeyExhausted(256))), || {
        "facade signed past 2^8".into()
    })?;
    Ok(format!(
        "{SCHEDULES} schedules, {crashes} crashes, {released_total} leaves released once each; exhaustion at 2^4, 2^6, 2^8"
    ))
}

// ---------------------------------------------------------------------------------------
// 7. Record-layer integrity after ChangeCipherSpec
// ---------------------------------------------------------------------------------------

struct Pki {
    server: Arc<ServerConfig>,
    client: ClientConfig,
}

fn toy_pki(seed: u64) -> Result<Pki, String> {
    let mut rng = DeterministicRandom::from_u64(seed);
    let kem_key = KemKeyPair::generate(KemParams::named("toy-64").map_err(err("kem"))?, &mut rng).map_err(err("kem"))?;
    let issuer_params = HbsParams::from_algorithm_id("SPX-TOY-16-16-8-S").map_err(err("hbs"))?;
    let mut issuer = HbsKeyPair::generate(issuer_params, &mut rng).map_err(err("hbs"))?;
    let kem_info = PublicKeyInfo {
        algorithm_id: kem_key.public.params().algorithm_id(),
        key: kem_key.public.to_bytes(),
    };
    let cert = Certificate::issue_with_key_pair(&mut issuer, &mut rng, "node-b", &kem_info).map_err(err("cert"))?;
    let root = cert.issuer();
    Ok(Pki {
        server: Arc::new(ServerConfig::new(cert, kem_key, TemplateRegistry::builtin_v1()).map_err(err("server"))?),
        client: ClientConfig::new(vec![root], TemplateRegistry::builtin_v1(), SecurityLevel::Low),
    })
}

/// What the tampering side observed.
enum SenderView {
    HandshakeFailed(TlsError),
    AfterSend(Result<Vec<u8>, TlsError>),
}

/// What the receiving side observed: its handshake result, the payloads it delivered, and the
/// error that ended delivery.
struct ReceiverView {
    handshake: Result<(), TlsError>,
    delivered: Vec<Vec<u8>>,
    error: Option<TlsError>,
    after: Option<TlsError>,
}

fn act_as_sender<T: Transport>(session: Result<TlsSession<T>, TlsError>, payloads: &[Vec<u8>]) -> SenderView {
    match session {
        Err(e) => SenderView::HandshakeFailed(e),
        Ok(mut s) => {
            for p in payloads {
                if s.send(p).is_err() {
                    break;
                }
            }
            SenderView::AfterSend(s.recv())
        }
    }
}

fn act_as_receiver<T: Transport>(session: Result<TlsSession<T>, TlsError>, expected: usize) -> ReceiverView {
    match session {
        Err(e) => ReceiverView {
            handshake: Err(e),
            delivered: Vec::new(),
            error: None,
            after: None,
        },
        Ok(mut s) => {
            let mut delivered = Vec::new();
            let mut error = None;
            while delivered.len() < expected {
                match s.recv() {
                    Ok(p) => delivered.push(p),
                    Err(e) => {
                        error = Some(e);
                        break;
                    }
                }
            }
            let after = error.as_ref().map(|_| s.recv().err()).unwrap_or(None);
            ReceiverView {
                handshake: Ok(()),
                delivered,
                error,
                after,
            }
        }
    }
}

/// One connection in which the `client_sends` side flips `bit` of its outgoing record `record`
/// and then sends `payloads` as application data.
fn tamper_connection(
    pki: &Pki,
    client_sends: bool,
    record: u64,
    bit: usize,
    payloads: Vec<Vec<u8>>,
    seed: u64,
) -> Result<(SenderView, ReceiverView), String> {
    let (a, b) = duplex();
    let (tx, rx) = mpsc::channel::<Result<SenderView, ReceiverView>>();
    let expected = payloads.len();
    let server = pki.server.clone();
    let client = pki.client.clone();
    let stx = tx.clone();
    let server_payloads = payloads.clone();
    thread::spawn(move || {
        let mut rng = DeterministicRandom::from_u64(seed ^ 0x5e);
        if client_sends {
            let s = server_handshake(b, &server, &mut rng).map(|(s, _)| s).map_err(|f| f.error);
            let _ = stx.send(Err(act_as_receiver(s, expected)));
        } else {
            let b = TamperStream::new(b, record, bit);
            let s = server_handshake(b, &server, &mut rng).map(|(s, _)| s).map_err(|f| f.error);
            let _ = stx.send(Ok(act_as_sender(s, &server_payloads)));
        }
    });
    thread::spawn(move || {
        let mut rng = DeterministicRandom::from_u64(seed ^ 0xc1);
        if client_sends {
            let a = TamperStream::new(a, record, bit);
            let s = client_handshake(a, &client, &mut rng).map(|(s, _)| s).map_err(|f| f.error);
            let _ = tx.send(Ok(act_as_sender(s, &payloads)));
        } else {
            let s = client_handshake(a, &client, &mut rng).map(|(s, _)| s).map_err(|f| f.error);
            let _ = tx.send(Err(act_as_receiver(s, expected)));
        }
    });
    let (mut sender, mut receiver) = (None, None);
    for _ in 0..2 {
        match rx.recv_timeout(TIMEOUT).map_err(|_| "connection stalled".to_string())? {
            Ok(v) => sender = Some(v),
            Err(v) => receiver = Some(v),
        }
    }
    Ok((sender.ok_or("no sender")?, receiver.ok_or("no receiver")?))
}

fn is_bad_record_mac_sent(e: &TlsError) -> bool {
    matches!(e, TlsError::AlertSent { alert: AlertDescription::BadRecordMac, reason }
        if reason.starts_with("bad_mac") || reason.starts_with("bad_padding"))
}

fn record_integrity() -> Outcome {
    const TRIALS: usize = 1000;
    // Handshake records per side: client ClientHello, ClientKeyExchange, ChangeCipherSpec,
    // Finished; server ServerHello, Certificate, ServerHelloDone, ChangeCipherSpec, Finished.
    const CLIENT_FINISHED: u64 = 3;
    const SERVER_FINISHED: u64 = 4;
    // Small records that may be tampered, followed by two full records so a lengthened header
    // still finds enough bytes to read.
    const TARGETS: usize = 4;
    const FULL: usize = 16 * 1024;

    let pki = toy_pki(0xacc7)?;
    let mut rng = DeterministicRandom::from_u64(0xacc7);
    let (mut finished_trials, mut data_trials, mut header_trials, mut resampled) = (0, 0, 0, 0);
    for trial in 0..TRIALS {
        let client_sends = trial % 2 == 0;
        let finished = if client_sends { CLIENT_FINISHED } else { SERVER_FINISHED };
        let mut payloads = Vec::new();
        for _ in 0..TARGETS {
            let len = 1 + uniform_below(&mut rng, 3000).map_err(err("rng"))? as usize;
            payloads.push(random_bytes(&mut rng, len).map_err(err("rng"))?);
        }
        payloads.push(random_bytes(&mut rng, FULL).map_err(err("rng"))?);
        payloads.push(random_bytes(&mut rng, FULL).map_err(err("rng"))?);

        // Target: the Finished record or one of the small data records.
        let pick = uniform_below(&mut rng, TARGETS as u32 + 1).map_err(err("rng"))? as usize;
        let record = finished + pick as u64;
        // Ciphertext length of the target: IV, plaintext, 64-byte MAC, padding to the block.
        let plaintext = if pick == 0 { 16 } else { payloads[pick - 1].len() };
        let body = 16 + (plaintext + 64 + 1).div_ceil(16) * 16;
        // Every fifth trial aims at the 5-byte header: type, version and length are MAC-covered.
        let span = if trial % 5 == 0 { RECORD_HEADER_LEN } else { RECORD_HEADER_LEN + body };
        let mut bit = uniform_below(&mut rng, (span * 8) as u32).map_err(err("rng"))? as usize;
        // A lengthened Finished record waits for bytes its peer never sends; pick another bit.
        while pick == 0 && (24..40).contains(&bit) && {
            let len = body ^ (0x8000 >> (bit - 24));
            len > body && len <= MAX_CIPHERTEXT_LEN
        } {
            resampled += 1;
            bit = uniform_below(&mut rng, (span * 8) as u32).map_err(err("rng"))? as usize;
        }
        if bit < RECORD_HEADER_LEN * 8 {
            header_trials += 1;
        }

        let at = format!("trial {trial} (client_sends={client_sends} record {record} bit {bit})");
        let (sender, receiver) = tamper_connection(&pki, client_sends, record, bit, payloads.clone(), trial as u64)
            .map_err(|e| format!("{at}: {e}"))?;
        if pick == 0 {
            finished_trials += 1;
            let Err(e) = &receiver.handshake else { return Err(format!("{at}: handshake completed")) };
            ensure(is_bad_record_mac_sent(e), || format!("{at}: receiver {e:?}"))?;
            let sender_saw = match &sender {
                SenderView::HandshakeFailed(e) => e.clone(),
                SenderView::AfterSend(r) => r.clone().err().unwrap_or(TlsError::Closed),
            };
            ensure(sender_saw == TlsError::AlertReceived(AlertDescription::BadRecordMac), || {
                format!("{at}: sender {sender_saw:?}")
            })?;
        } else {
            data_trials += 1;
            receiver.handshake.clone().map_err(|e| format!("{at}: handshake {e:?}"))?;
            let error = receiver.error.as_ref().ok_or_else(|| format!("{at}: every record delivered"))?;
            ensure(is_bad_record_mac_sent(error), || format!("{at}: receiver {error:?}"))?;
            ensure(receiver.delivered == payloads[..pick - 1], || {
                format!("{at}: delivered {} records", receiver.delivered.len())
            })?;
            ensure(receiver.after == Some(TlsError::Closed), || format!("{at}: after teardown {:?}", receiver.after))?;
            let SenderView::AfterSend(r) = &sender else { return Err(format!("{at}: sender handshake failed")) };
            ensure(r == &Err(TlsError::AlertReceived(AlertDescription::BadRecordMac)), || {
                format!("{at}: sender {r:?}")
            })?;
        }
    }
    Ok(format!(
        "{TRIALS}/{TRIALS} torn down with bad_record_mac and nothing delivered from the tampered record \
         ({finished_trials} Finished, {data_trials} data, {header_trials} header bits, \
         {resampled} length increases on Finished redrawn)"
    ))
}

// ---------------------------------------------------------------------------------------
// 8. Facade against direct composition
// ---------------------------------------------------------------------------------------

/// Hybrid blob prefix built by hand: id u8-str | registry version u32 | ciphertext u32-bytes.
fn manual_prefix(id: &str, version: u32, ct: &[u8]) -> Vec<u8> {
    let mut out = vec![id.len() as u8];
    out.extend_from_slice(id.as_bytes());
    out.extend_from_slice(&version.to_be_bytes());
    out.extend_from_slice(&(ct.len() as u32).to_be_bytes());
    out.extend_from_slice(ct);
    out
}

fn manual_keys(ss: &[u8], prefix: &[u8]) -> Result<SymmetricKeys, String> {
    let block = prf(HashId::H512, ss, "easyapi encrypt", prefix, 112);
    SymmetricKeys::from_key_block(HashId::H512, &block).map_err(err("keys"))
}

fn facade_equivalence() -> Outcome {
    const TRIALS: u64 = 100;
    let dir = tempfile::tempdir().map_err(err("tempdir"))?;
    let sig_dir = dir.path().join("sig");
    let enc_dir = dir.path().join("enc");
    std::fs::create_dir_all(&sig_dir).map_err(err("mkdir"))?;
    std::fs::create_dir_all(&enc_dir).map_err(err("mkdir"))?;

    // Signatures: the facade and a key pair driven by the same random stream sign identically.
    let ap = AlgorithmParameters::from_algorithm_id("SPX-TOY-16-16-8-S", 1).map_err(err("ap"))?;
    let mut signer =
        EasySigner::with_new_key_rng(ap, keystore_params(&sig_dir, "pw")?, Box::new(DeterministicRandom::from_u64(8)))
            .map_err(err("signer"))?
            .with_reservation_batch(7)
            .map_err(err("batch"))?;
    let AlgorithmSpec::Hbs(params) = signer.parameters().spec else { return Err("not a signature key".into()) };
    let mut direct_rng = DeterministicRandom::from_u64(8);
    let mut direct = HbsKeyPair::generate(params, &mut direct_rng).map_err(err("keygen"))?;
    let pk = signer.public_key();
    ensure(direct.root() == pk.key.as_slice(), || "roots differ".into())?;
    let mut msg_rng = DeterministicRandom::from_u64(0xacc8);
    for trial in 0..TRIALS {
        let len = uniform_below(&mut msg_rng, 300).map_err(err("rng"))? as usize;
        let msg = random_bytes(&mut msg_rng, len).map_err(err("rng"))?;
        let blob = signer.sign(&msg).map_err(err("facade sign"))?;
        let expected = direct.sign(&msg, &mut direct_rng).map_err(err("direct sign"))?;
        let decoded = SignatureBlob::from_bytes(&blob).map_err(err("blob"))?;
        ensure(decoded.signature == expected.to_bytes(), || format!("trial {trial}: signatures differ"))?;
        let sig = HbsSignature::from_bytes(&params, &decoded.signature).map_err(err("sig"))?;
        ensure(hbs::verify(direct.root(), &params, &msg, &sig), || format!("trial {trial}: direct verify"))?;
        let wrapped = SignatureBlob {
            algorithm_id: params.algorithm_id(),
            registry_version: 1,
            signature: expected.to_bytes(),
        };
        ensure(EasySigner::verify(&pk, &msg, &wrapped.to_bytes()), || format!("trial {trial}: facade verify"))?;
    }

    // Encryption: each route decrypts the other's output; equal randomness gives equal bytes.
    let ap = TemplateRegistry::builtin_v1().resolve(Kind::Encryption, SecurityLevel::Low);
    let encrypter = EasyEncrypter::with_new_key(ap, keystore_params(&enc_dir, "pw")?).map_err(err("encrypter"))?;
    let info = encrypter.public_key();
    let params = KemParams::from_algorithm_id(&info.algorithm_id).map_err(err("kem params"))?;
    let kem_pk = KemPublicKey::from_bytes(params, &info.key).map_err(err("kem pk"))?;
    let direct = KemKeyPair::from_seed(params, *encrypter.key_pair().secret.seed()).map_err(err("kem keygen"))?;
    ensure(direct.public.to_bytes() == info.key, || "public keys differ".into())?;
    let mut rng = DeterministicRandom::from_u64(0xacc8);
    for trial in 0..TRIALS {
        let len = uniform_below(&mut rng, 4000).map_err(err("rng"))? as usize;
        let msg = random_bytes(&mut rng, len).map_err(err("rng"))?;

        let (ct, ss) = cbkem::encapsulate(&kem_pk, &mut rng).map_err(err("encapsulate"))?;
        let prefix = manual_prefix(&info.algorithm_id, 1, &ct.to_bytes(&params));
        let mut blob = prefix.clone();
        blob.extend(seal_stream(&manual_keys(&ss, &prefix)?, &prefix, &msg).map_err(err("seal"))?);
        ensure(encrypter.decrypt(&blob).as_deref() == Ok(msg.as_slice()), || format!("trial {trial}: facade open"))?;

        let blob = encrypt_to(&info, 1, &msg, &mut DeterministicRandom::from_u64(trial)).map_err(err("encrypt"))?;
        let ct_len = params.ciphertext_len();
        let prefix_len = 1 + info.algorithm_id.len() + 4 + 4 + ct_len;
        let prefix = blob.get(..prefix_len).ok_or("short blob")?;
        let ct = KemCiphertext::from_bytes(&params, &prefix[prefix_len - ct_len..]).map_err(err("ct"))?;
        let ss = cbkem::decapsulate(&direct.secret, &ct).map_err(err("decapsulate"))?;
        let opened = open_stream(&manual_keys(&ss, prefix)?, prefix, &blob[prefix_len..]).map_err(err("open"))?;
        ensure(opened == msg, || format!("trial {trial}: direct open"))?;

        let easy = encrypt_to(&info, 1, &msg, &mut DeterministicRandom::from_u64(trial + 1000)).map_err(err("enc"))?;
        let mut r = DeterministicRandom::from_u64(trial + 1000);
        let (ct, ss) = cbkem::encapsulate(&kem_pk, &mut r).map_err(err("encapsulate"))?;
        let prefix = manual_prefix(&info.algorithm_id, 1, &ct.to_bytes(&params));
        let mut manual = prefix.clone();
        manual.extend(seal_stream(&manual_keys(&ss, &prefix)?, &prefix, &msg).map_err(err("seal"))?);
        ensure(easy == manual, || format!("trial {trial}: ciphertexts differ"))?;
    }
    Ok(format!("sign/verify {TRIALS}/{TRIALS}, encrypt/decrypt {TRIALS}/{TRIALS} in both directions"))
}

// ---------------------------------------------------------------------------------------
// 9. Keystore at rest
// ---------------------------------------------------------------------------------------

fn keystore_at_rest() -> Outcome {
    const WRONG: usize = 100;
    let dir = tempfile::tempdir().map_err(err("tempdir"))?;
    let mut ks = Keystore::create(keystore_params(dir.path(), PASSWORD)?).map_err(err("create"))?;
    let entry = KeystoreEntry::new("k", "CME-TOY-10-8", vec![1; 32], vec![2; 64]);
    ks.put_entry(entry.clone()).map_err(err("put"))?;
    drop(ks);
    let mut rng = DeterministicRandom::from_u64(0xacc9);
    let mut tried = 0;
    while tried < WRONG {
        let len = 1 + uniform_below(&mut rng, 32).map_err(err("rng"))? as usize;
        let pw: String = random_bytes(&mut rng, len)
            .map_err(err("rng"))?
            .iter()
            .map(|b| (b' ' + b % 95) as char)
            .collect();
        if pw == PASSWORD {
            continue;
        }
        let got = Keystore::open(keystore_params(dir.path(), &pw)?);
        ensure(matches!(got, Err(KeystoreError::BadPassword)), || format!("password {pw:?}: {got:?}"))?;
        tried += 1;
    }
    let ks = Keystore::open(keystore_params(dir.path(), PASSWORD)?).map_err(err("reopen"))?;
    ensure(ks.get_entry("k") == Ok(&entry), || "entry changed".into())?;

    for point in CrashPoint::ALL {
        let dir = tempfile::tempdir().map_err(err("tempdir"))?;
        let mut ks = Keystore::create(keystore_params(dir.path(), "pw")?).map_err(err("create"))?;
        let kept = KeystoreEntry::new("kept", "SPX-TOY-16-16-6-S", vec![3; 32], vec![4; 16]);
        ks.put_entry(kept.clone()).map_err(err("put"))?;
        ks.inject_crash(point);
        let added = KeystoreEntry::new("added", "CME-TOY-10-8", vec![5; 32], vec![6; 100]);
        ensure(ks.put_entry(added.clone()) == Err(KeystoreError::SimulatedCrash(point)), || {
            format!("{point:?}: crash not triggered")
        })?;
        drop(ks);
        let ks = Keystore::open(keystore_params(dir.path(), "pw")?).map_err(|e| format!("{point:?}: {e}"))?;
        ensure(ks.get_entry("kept") == Ok(&kept), || format!("{point:?}: kept entry lost"))?;
        let added_now = ks.get_entry("added");
        match point {
            CrashPoint::AfterRename => ensure(added_now == Ok(&added), || format!("{point:?}: committed entry lost"))?,
            _ => ensure(matches!(added_now, Err(KeystoreError::UnknownAlias(_))), || {
                format!("{point:?}: half-written entry visible")
            })?,
        }
    }
    Ok(format!(
        "{WRONG}/{WRONG} wrong passwords refused; contents intact at all {} crash points",
        CrashPoint::ALL.len()
    ))
}

// ---------------------------------------------------------------------------------------

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("handshake size at mce-emu", size_reproduction),
        ("two-process handshake and 1 MiB echo", handshake_success),
        ("template mismatch aborts before key exchange", semantic_drift_guard),
        ("KEM decapsulation inverts encapsulation", kem_correctness),
        ("signature roundtrip, mutation rejection, sizes", signature_correctness),
        ("stateful leaves never reused", stateful_safety),
        ("post-ChangeCipherSpec tamper detection", record_integrity),
        ("facade matches direct composition", facade_equivalence),
        ("keystore passwords and crash durability", keystore_at_rest),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {}: {name}: {detail} [{secs:.1} s]", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {}: {name}: {why} [{secs:.1} s]", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
