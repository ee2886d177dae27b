//! `tls-serve`, `tls-connect` and `measure`.

use std::collections::BTreeMap;
use std::io::Write;
use std::net::{TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::Arc;
use std::thread;

use clap::Args;
use serde::{Deserialize, Serialize};

use agilecrypt::cbkem::{KemKeyPair, KemParams};
use agilecrypt::easyapi::{AlgorithmSpec, EasyEncrypter, Kind, PublicKeyInfo, SecurityLevel, TemplateRegistry};
use agilecrypt::hbs::HbsKeyPair;
use agilecrypt::minitls::{
    client_handshake, server_handshake, transcript_report, Certificate, CipherSuiteId, ClientConfig, Direction,
    ServerConfig, TlsError, TlsSession, TranscriptReport, Transport,
};
use agilecrypt::primitives::{random_bytes, DeterministicRandom, RandomSource, SystemRandom, MAX_FRAGMENT_LEN};

use crate::error::CliError;
use crate::{read_file, read_public_key, write_file, KeystoreArgs, RegistryArg};

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[command(flatten)]
    keystore: KeystoreArgs,
    #[command(flatten)]
    registry: RegistryArg,
    /// Alias of the KEM key the certificate carries.
    #[arg(long)]
    kem_alias: String,
    /// Certificate file from `cert-issue`.
    #[arg(long)]
    cert: PathBuf,
    #[arg(long, default_value = "127.0.0.1")]
    bind: String,
    /// Port to listen on; 0 picks a free one. The bound address is printed on standard output.
    #[arg(long, default_value_t = 0)]
    port: u16,
    /// Exit after this many connections. Runs until killed when absent.
    #[arg(long)]
    max_connections: Option<usize>,
    /// Write the handshake reports of all connections as a JSON array.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ConnectArgs {
    #[command(flatten)]
    registry: RegistryArg,
    /// Server address, `host:port`.
    #[arg(long)]
    connect: String,
    /// Trusted issuer public key file. Repeatable.
    #[arg(long = "trust", required = true)]
    trust: Vec<PathBuf>,
    #[arg(long, default_value = "high")]
    level: SecurityLevel,
    /// Offered cipher suites, e.g. `0x1306`. Repeatable.
    #[arg(long = "suite", value_parser = parse_suite)]
    suites: Vec<CipherSuiteId>,
    /// Bytes of random application data to echo through the server.
    #[arg(long, default_value_t = 1024)]
    bytes: usize,
    /// Write the handshake report as JSON, also for aborted handshakes.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct MeasureArgs {
    /// KEM parameter set: `toy-64`, `toy-128`, `mce-emu` or a `CME-TOY-m-b` id listed in the registry.
    #[arg(long)]
    paramset: String,
    #[command(flatten)]
    registry: RegistryArg,
    #[arg(long, default_value_t = 3)]
    reps: usize,
    #[arg(long)]
    out: PathBuf,
    /// Seed for deterministic keys and handshake randomness.
    #[arg(long)]
    seed: Option<u64>,
}

fn parse_suite(s: &str) -> Result<CipherSuiteId, String> {
    let v = match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(hex) => u16::from_str_radix(hex, 16),
        None => s.parse(),
    };
    v.map(CipherSuiteId).map_err(|e| format!("invalid suite {s:?}: {e}"))
}

fn to_json<T: Serialize>(v: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(v).expect("report serializes");
    out.push(b'\n');
    out
}

/// Echoes application data until the peer closes.
fn echo<T: Transport>(session: &mut TlsSession<T>) -> Result<u64, TlsError> {
    let mut total = 0u64;
    loop {
        match session.recv() {
            Ok(data) => {
                total += data.len() as u64;
                session.send(&data)?;
            }
            Err(TlsError::Closed) => return Ok(total),
            Err(e) => return Err(e),
        }
    }
}

pub fn serve(a: ServeArgs) -> Result<(), CliError> {
    let registry = a.registry.load()?;
    let cert = Certificate::from_bytes(&read_file(&a.cert)?)
        .map_err(|e| CliError::failed(format!("{}: {e}", a.cert.display())))?;
    let enc = EasyEncrypter::load(a.keystore.parameters()?, &a.kem_alias, registry.version())?;
    let config = Arc::new(ServerConfig::new(cert, enc.key_pair().clone(), registry)?);
    let listener = TcpListener::bind((a.bind.as_str(), a.port))
        .map_err(|e| CliError::failed(format!("bind {}:{}: {e}", a.bind, a.port)))?;
    let addr = listener.local_addr().map_err(|e| CliError::failed(e.to_string()))?;
    println!("listening on {addr}");
    let _ = std::io::stdout().flush();

    let mut workers = Vec::new();
    for (n, stream) in listener.incoming().enumerate() {
        if a.max_connections.is_some_and(|max| n >= max) {
            break;
        }
        let stream = stream.map_err(|e| CliError::failed(format!("accept: {e}")))?;
        let config = config.clone();
        workers.push(thread::spawn(move || -> (bool, TranscriptReport) {
            match server_handshake(stream, &config, &mut SystemRandom) {
                Ok((mut session, transcript)) => {
                    let report = transcript_report(&transcript);
                    match echo(&mut session) {
                        Ok(bytes) => {
                            eprintln!("connection {n}: handshake ok, echoed {bytes} bytes");
                            (true, report)
                        }
                        Err(e) => {
                            eprintln!("connection {n}: {e}");
                            (false, report)
                        }
                    }
                }
                Err(f) => {
                    eprintln!("connection {n}: handshake failed: {}", f.error);
                    (false, transcript_report(&f.transcript))
                }
            }
        }));
        if a.max_connections.is_some_and(|max| n + 1 >= max) {
            break;
        }
    }
    let mut failures = 0;
    let mut reports = Vec::new();
    for w in workers {
        let (ok, report) = w.join().map_err(|_| CliError::failed("connection worker panicked"))?;
        failures += usize::from(!ok);
        reports.push(report);
    }
    if let Some(path) = &a.report {
        write_file(path, &to_json(&reports))?;
    }
    if failures > 0 {
        return Err(CliError::failed(format!("{failures} connection(s) failed")));
    }
    Ok(())
}

pub fn connect(a: ConnectArgs) -> Result<(), CliError> {
    let registry = a.registry.load()?;
    let roots = a.trust.iter().map(|p| read_public_key(p)).collect::<Result<Vec<_>, _>>()?;
    let mut config = ClientConfig::new(roots, registry, a.level);
    if !a.suites.is_empty() {
        config.suites = a.suites.clone();
    }
    let stream =
        TcpStream::connect(&a.connect).map_err(|e| CliError::failed(format!("connect {}: {e}", a.connect)))?;
    let result = client_handshake(stream, &config, &mut SystemRandom);
    let transcript = match &result {
        Ok((_, t)) => t,
        Err(f) => &f.transcript,
    };
    if let Some(path) = &a.report {
        write_file(path, &to_json(&transcript_report(transcript)))?;
    }
    let (mut session, _) = match result {
        Ok(ok) => ok,
        Err(f) => {
            let what = f.error.alert().map(|a| a.name().to_string()).unwrap_or_else(|| f.error.to_string());
            return Err(CliError::failed(format!("handshake failed: {what} ({})", f.error)));
        }
    };

    let probe = random_bytes(&mut SystemRandom, a.bytes).map_err(|e| CliError::failed(e.to_string()))?;
    for chunk in probe.chunks(MAX_FRAGMENT_LEN) {
        session.send(chunk)?;
        if session.recv_exact(chunk.len())? != chunk {
            return Err(CliError::failed("echo mismatch"));
        }
    }
    println!("handshake ok: {}, echoed {} bytes", session.suite(), a.bytes);
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats<T> {
    pub min: T,
    pub median: T,
    pub max: T,
}

fn stats<T: Copy + PartialOrd>(mut values: Vec<T>) -> Stats<T> {
    values.sort_by(|a, b| a.partial_cmp(b).expect("comparable"));
    Stats {
        min: values[0],
        median: values[(values.len() - 1) / 2],
        max: values[values.len() - 1],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageStats {
    #[serde(rename = "type")]
    pub message: String,
    pub direction: Direction,
    #[serde(flatten)]
    pub bytes: Stats<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionStats {
    pub client_to_server: Stats<u64>,
    pub server_to_client: Stats<u64>,
}

/// Aggregate over repeated handshakes; per-run reports use the transcript report schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureReport {
    pub paramset: String,
    pub kem_algorithm_id: String,
    pub signature_algorithm_id: String,
    pub level: String,
    pub registry_version: u32,
    pub suite: Option<String>,
    pub reps: usize,
    pub messages: Vec<MessageStats>,
    pub total_bytes: Stats<u64>,
    pub direction_totals: DirectionStats,
    pub duration_ms: Stats<f64>,
    pub runs: Vec<TranscriptReport>,
}

fn resolve_paramset(name: &str, registry: &TemplateRegistry) -> Result<(KemParams, SecurityLevel), CliError> {
    let params = KemParams::named(name)
        .or_else(|_| KemParams::from_algorithm_id(name))
        .map_err(|e| CliError::usage(format!("--paramset: {e}")))?;
    let level = SecurityLevel::ALL
        .into_iter()
        .find(|&l| registry.resolve(Kind::Encryption, l).algorithm_id == params.algorithm_id())
        .ok_or_else(|| {
            CliError::usage(format!(
                "--paramset: {} is not the encryption template of any level in registry v{}",
                params.algorithm_id(),
                registry.version()
            ))
        })?;
    Ok((params, level))
}

pub fn measure(a: MeasureArgs) -> Result<(), CliError> {
    if a.reps == 0 {
        return Err(CliError::usage("--reps must be at least 1"));
    }
    let registry = a.registry.load()?;
    let (kem_params, level) = resolve_paramset(&a.paramset, &registry)?;
    let sig_ap = registry.resolve(Kind::Signature, level);
    let AlgorithmSpec::Hbs(sig_params) = sig_ap.spec else {
        return Err(CliError::failed("registry maps a non-signature algorithm to the signature kind"));
    };
    let mut rng: Box<dyn RandomSource> = match a.seed {
        Some(s) => Box::new(DeterministicRandom::from_u64(s)),
        None => Box::new(SystemRandom),
    };
    let fail = |e: &dyn std::fmt::Display| CliError::failed(e.to_string());
    let kem_key = KemKeyPair::generate(kem_params, &mut rng).map_err(|e| fail(&e))?;
    let mut issuer = HbsKeyPair::generate(sig_params, &mut rng).map_err(|e| fail(&e))?;
    let kem_info = PublicKeyInfo {
        algorithm_id: kem_params.algorithm_id(),
        key: kem_key.public.to_bytes(),
    };
    let cert = Certificate::issue_with_key_pair(&mut issuer, &mut rng, "measure-server", &kem_info)?;
    let root = cert.issuer();
    let server_config = Arc::new(ServerConfig::new(cert, kem_key, registry.clone())?);
    let client_config = ClientConfig::new(vec![root], registry.clone(), level);

    let mut runs = Vec::with_capacity(a.reps);
    for rep in 0..a.reps {
        let per_run = |tag: u64| -> Box<dyn RandomSource> {
            match a.seed {
                Some(s) => Box::new(DeterministicRandom::from_u64(s ^ (tag << 32) ^ rep as u64)),
                None => Box::new(SystemRandom),
            }
        };
        let listener = TcpListener::bind("127.0.0.1:0").map_err(|e| fail(&e))?;
        let addr = listener.local_addr().map_err(|e| fail(&e))?;
        let config = server_config.clone();
        let mut server_rng = per_run(1);
        let server = thread::spawn(move || -> Result<(), String> {
            let (stream, _) = listener.accept().map_err(|e| e.to_string())?;
            let (mut session, _) = server_handshake(stream, &config, &mut server_rng).map_err(|f| f.to_string())?;
            echo(&mut session).map(|_| ()).map_err(|e| e.to_string())
        });
        let stream = TcpStream::connect(addr).map_err(|e| fail(&e))?;
        let (session, transcript) =
            client_handshake(stream, &client_config, &mut per_run(2)).map_err(|f| fail(&f))?;
        drop(session);
        server
            .join()
            .map_err(|_| CliError::failed("server thread panicked"))?
            .map_err(|e| CliError::failed(format!("server: {e}")))?;
        runs.push(transcript_report(&transcript));
    }

    let mut per_message: BTreeMap<usize, (String, Direction, Vec<u64>)> = BTreeMap::new();
    for run in &runs {
        for (i, m) in run.messages.iter().enumerate() {
            per_message
                .entry(i)
                .or_insert_with(|| (m.message.clone(), m.direction, Vec::new()))
                .2
                .push(m.bytes);
        }
    }
    let report = MeasureReport {
        paramset: a.paramset.clone(),
        kem_algorithm_id: kem_params.algorithm_id(),
        signature_algorithm_id: sig_ap.algorithm_id.clone(),
        level: level.name().to_string(),
        registry_version: registry.version(),
        suite: runs[0].suite.clone(),
        reps: a.reps,
        messages: per_message
            .into_values()
            .map(|(message, direction, v)| MessageStats {
                message,
                direction,
                bytes: stats(v),
            })
            .collect(),
        total_bytes: stats(runs.iter().map(|r| r.total_bytes).collect()),
        direction_totals: DirectionStats {
            client_to_server: stats(runs.iter().map(|r| r.direction_totals.client_to_server).collect()),
            server_to_client: stats(runs.iter().map(|r| r.direction_totals.server_to_client).collect()),
        },
        duration_ms: stats(runs.iter().map(|r| r.duration_ms).collect()),
        runs,
    };
    write_file(&a.out, &to_json(&report))?;
    let cert = report.messages.iter().find(|m| m.message == "Certificate");
    eprintln!(
        "{} x{}: Certificate median {} bytes, total median {} bytes",
        report.kem_algorithm_id,
        report.reps,
        cert.map(|c| c.bytes.median).unwrap_or(0),
        report.total_bytes.median
    );
    Ok(())
}
