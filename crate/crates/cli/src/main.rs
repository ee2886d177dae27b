//! `agilecrypt` command-line tool.
//!
//! Keys live in one password-protected keystore file. Public keys, signatures, ciphertexts,
//! envelopes and certificates are plain files. Diagnostics go to standard error; data goes
//! to files or standard output.

mod error;
mod tls;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use agilecrypt::easyapi::{encrypt_to, EasyEncrypter, EasySigner, Kind, PublicKeyInfo, SecurityLevel, TemplateRegistry};
use agilecrypt::keystore::{Keystore, KeystoreParameters, DEFAULT_ITERATIONS};
use agilecrypt::mailenv::{envelope_open, envelope_seal, Envelope};
use agilecrypt::minitls::Certificate;
use agilecrypt::primitives::SystemRandom;

use error::CliError;

#[derive(Parser, Debug)]
#[command(name = "agilecrypt", version, about = "Crypto-agile signing, encryption, envelopes and TLS over toy post-quantum schemes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a key for a security level and store it; prints the alias.
    Keygen(KeygenArgs),
    /// Export the public key of a stored key.
    Pubkey(PubkeyArgs),
    /// Sign a file with a stored signature key.
    Sign(SignArgs),
    /// Verify a detached signature. Exit 1 when rejected.
    Verify(VerifyArgs),
    /// Encrypt a file to a public encryption key.
    Encrypt(EncryptArgs),
    /// Decrypt a file with a stored encryption key. Exit 1 on bad_mac.
    Decrypt(DecryptArgs),
    /// Sign then encrypt a message into an .agenv envelope.
    MailSeal(MailSealArgs),
    /// Open an .agenv envelope and verify the sender.
    MailOpen(MailOpenArgs),
    /// Issue a server certificate binding a KEM public key, signed by a stored signature key.
    CertIssue(CertIssueArgs),
    /// Accept TLS connections and echo application data.
    TlsServe(tls::ServeArgs),
    /// Connect, complete the handshake and echo a probe of random bytes.
    TlsConnect(tls::ConnectArgs),
    /// Run loopback handshakes and write an aggregated size report.
    Measure(tls::MeasureArgs),
}

#[derive(Args, Debug, Clone)]
pub struct KeystoreArgs {
    /// Keystore file.
    #[arg(long)]
    pub keystore: PathBuf,
    /// Keystore password. Falls back to AGILECRYPT_PASSWORD.
    #[arg(long, env = "AGILECRYPT_PASSWORD", hide_env_values = true)]
    pub password: Option<String>,
    /// PBKDF2 iterations used when the keystore is written.
    #[arg(long, default_value_t = DEFAULT_ITERATIONS)]
    pub kdf_iterations: u32,
}

impl KeystoreArgs {
    pub fn parameters(&self) -> Result<KeystoreParameters, CliError> {
        let password = self
            .password
            .clone()
            .ok_or_else(|| CliError::usage("no keystore password: pass --password or set AGILECRYPT_PASSWORD"))?;
        Ok(KeystoreParameters::new(&self.keystore, password)?.with_iterations(self.kdf_iterations))
    }
}

#[derive(Args, Debug, Clone)]
pub struct RegistryArg {
    /// Template registry: `v1`, `v2` or a registry file.
    #[arg(long, default_value = "v1")]
    pub registry: String,
}

impl RegistryArg {
    pub fn load(&self) -> Result<TemplateRegistry, CliError> {
        match self.registry.as_str() {
            "v1" | "1" => Ok(TemplateRegistry::builtin_v1()),
            "v2" | "2" => Ok(TemplateRegistry::builtin_v2()),
            path => TemplateRegistry::load(Path::new(path)).map_err(|e| CliError::usage(format!("--registry: {e}"))),
        }
    }
}

#[derive(Args, Debug)]
struct KeygenArgs {
    #[command(flatten)]
    keystore: KeystoreArgs,
    #[command(flatten)]
    registry: RegistryArg,
    /// `signature` or `encryption`.
    #[arg(long)]
    kind: Kind,
    #[arg(long)]
    level: SecurityLevel,
}

#[derive(Args, Debug)]
struct PubkeyArgs {
    #[command(flatten)]
    keystore: KeystoreArgs,
    #[arg(long)]
    alias: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SignArgs {
    #[command(flatten)]
    keystore: KeystoreArgs,
    #[command(flatten)]
    registry: RegistryArg,
    #[arg(long)]
    alias: String,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    /// Signer public key file.
    #[arg(long)]
    pubkey: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    sig: PathBuf,
}

#[derive(Args, Debug)]
struct EncryptArgs {
    #[command(flatten)]
    registry: RegistryArg,
    /// Recipient public key file.
    #[arg(long)]
    pubkey: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct DecryptArgs {
    #[command(flatten)]
    keystore: KeystoreArgs,
    #[command(flatten)]
    registry: RegistryArg,
    #[arg(long)]
    alias: String,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct MailSealArgs {
    #[command(flatten)]
    keystore: KeystoreArgs,
    #[command(flatten)]
    registry: RegistryArg,
    /// Sender signature key alias.
    #[arg(long)]
    alias: String,
    /// Recipient public encryption key file.
    #[arg(long)]
    to: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct MailOpenArgs {
    #[command(flatten)]
    keystore: KeystoreArgs,
    #[command(flatten)]
    registry: RegistryArg,
    /// Recipient encryption key alias.
    #[arg(long)]
    alias: String,
    /// Sender public signature key file.
    #[arg(long)]
    from: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct CertIssueArgs {
    #[command(flatten)]
    keystore: KeystoreArgs,
    #[command(flatten)]
    registry: RegistryArg,
    /// Issuer signature key alias.
    #[arg(long)]
    issuer: String,
    /// Server KEM public key file.
    #[arg(long)]
    kem_pubkey: PathBuf,
    #[arg(long)]
    subject: String,
    #[arg(long)]
    out: PathBuf,
}

pub fn read_file(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::io(path, e))
}

pub fn write_file(path: &Path, data: &[u8]) -> Result<(), CliError> {
    fs::write(path, data).map_err(|e| CliError::io(path, e))
}

pub fn read_public_key(path: &Path) -> Result<PublicKeyInfo, CliError> {
    PublicKeyInfo::from_bytes(&read_file(path)?)
        .map_err(|e| CliError::failed(format!("{}: not a public key file: {e}", path.display())))
}

fn keygen(a: KeygenArgs) -> Result<(), CliError> {
    let reg = a.registry.load()?;
    let ap = reg.resolve(a.kind, a.level);
    let ksp = a.keystore.parameters()?;
    let alias = match a.kind {
        Kind::Signature => EasySigner::with_new_key(ap, ksp)?.alias().to_string(),
        Kind::Encryption => EasyEncrypter::with_new_key(ap, ksp)?.alias().to_string(),
    };
    println!("{alias}");
    Ok(())
}

fn pubkey(a: PubkeyArgs) -> Result<(), CliError> {
    let ks = Keystore::open_read_only(a.keystore.parameters()?)?;
    let info = PublicKeyInfo::from_entry(ks.get_entry(&a.alias)?);
    write_file(&a.out, &info.to_bytes())
}

fn sign(a: SignArgs) -> Result<(), CliError> {
    let msg = read_file(&a.input)?;
    let reg = a.registry.load()?;
    let mut signer = EasySigner::load(a.keystore.parameters()?, &a.alias, reg.version())?;
    write_file(&a.out, &signer.sign(&msg)?)
}

fn verify(a: VerifyArgs) -> Result<(), CliError> {
    let key = read_public_key(&a.pubkey)?;
    let msg = read_file(&a.input)?;
    let sig = read_file(&a.sig)?;
    EasySigner::verify_detailed(&key, &msg, &sig)?;
    println!("valid");
    Ok(())
}

fn encrypt(a: EncryptArgs) -> Result<(), CliError> {
    let recipient = read_public_key(&a.pubkey)?;
    let pt = read_file(&a.input)?;
    let reg = a.registry.load()?;
    let blob = encrypt_to(&recipient, reg.version(), &pt, &mut SystemRandom)?;
    write_file(&a.out, &blob)
}

fn decrypt(a: DecryptArgs) -> Result<(), CliError> {
    let blob = read_file(&a.input)?;
    let reg = a.registry.load()?;
    let enc = EasyEncrypter::load(a.keystore.parameters()?, &a.alias, reg.version())?;
    write_file(&a.out, &enc.decrypt(&blob)?)
}

fn mail_seal(a: MailSealArgs) -> Result<(), CliError> {
    let recipient = read_public_key(&a.to)?;
    let msg = read_file(&a.input)?;
    let reg = a.registry.load()?;
    let mut signer = EasySigner::load(a.keystore.parameters()?, &a.alias, reg.version())?;
    let env = envelope_seal(&mut signer, &recipient, &msg, &mut SystemRandom)?;
    write_file(&a.out, &env.encode())
}

fn mail_open(a: MailOpenArgs) -> Result<(), CliError> {
    let sender = read_public_key(&a.from)?;
    let env = Envelope::decode(&read_file(&a.input)?)
        .map_err(|e| CliError::failed(format!("malformed_encoding: {e}")))?;
    let reg = a.registry.load()?;
    let recipient = EasyEncrypter::load(a.keystore.parameters()?, &a.alias, reg.version())?;
    write_file(&a.out, &envelope_open(&recipient, &sender, &env)?)
}

fn cert_issue(a: CertIssueArgs) -> Result<(), CliError> {
    let kem = read_public_key(&a.kem_pubkey)?;
    let reg = a.registry.load()?;
    let mut issuer = EasySigner::load(a.keystore.parameters()?, &a.issuer, reg.version())?;
    let cert = Certificate::issue(&mut issuer, &a.subject, &kem)?;
    write_file(&a.out, &cert.to_bytes())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Keygen(a) => keygen(a),
        Command::Pubkey(a) => pubkey(a),
        Command::Sign(a) => sign(a),
        Command::Verify(a) => verify(a),
        Command::Encrypt(a) => encrypt(a),
        Command::Decrypt(a) => decrypt(a),
        Command::MailSeal(a) => mail_seal(a),
        Command::MailOpen(a) => mail_open(a),
        Command::CertIssue(a) => cert_issue(a),
        Command::TlsServe(a) => tls::serve(a),
        Command::TlsConnect(a) => tls::connect(a),
        Command::Measure(a) => tls::measure(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = writeln!(std::io::stderr(), "error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
