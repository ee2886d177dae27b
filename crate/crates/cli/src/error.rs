//! Exit-code contract: 0 success, 1 operation failed, 2 usage error.

use std::fmt;
use std::path::Path;

use agilecrypt::easyapi::EasyError;
use agilecrypt::keystore::KeystoreError;
use agilecrypt::mailenv::MailError;
use agilecrypt::minitls::TlsError;

#[derive(Debug)]
pub enum CliError {
    /// Bad or missing arguments. Exit code 2.
    Usage(String),
    /// The operation ran and failed: rejected signature, bad MAC, network error. Exit code 1.
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Failed(_) => 1,
        }
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn failed(msg: impl Into<String>) -> Self {
        CliError::Failed(msg.into())
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Failed(format!("{}: {e}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Failed(m) => f.write_str(m),
        }
    }
}

fn keystore_reason(e: &KeystoreError) -> String {
    match e {
        KeystoreError::BadPassword => "bad_password: keystore could not be decrypted".into(),
        other => other.to_string(),
    }
}

impl From<EasyError> for CliError {
    fn from(e: EasyError) -> Self {
        CliError::Failed(match &e {
            EasyError::BadMac => "bad_mac".into(),
            EasyError::BadSignature => "bad_signature".into(),
            EasyError::AlgorithmMismatch { .. } => format!("algorithm_mismatch: {e}"),
            EasyError::Keystore(k) => keystore_reason(k),
            _ => e.to_string(),
        })
    }
}

impl From<KeystoreError> for CliError {
    fn from(e: KeystoreError) -> Self {
        CliError::Failed(keystore_reason(&e))
    }
}

impl From<MailError> for CliError {
    fn from(e: MailError) -> Self {
        CliError::Failed(e.to_string())
    }
}

impl From<TlsError> for CliError {
    fn from(e: TlsError) -> Self {
        CliError::Failed(e.to_string())
    }
}
