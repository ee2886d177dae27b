//! A TLS 1.2 subset carrying cipher suite 0x1306 (`TLS_CME_SPX_WITH_AES_256_CBC_SHA512`).
//!
//! Suite profile: key transport with the code-based KEM public key in the server
//! certificate, certificates signed with hash-based signatures, AES-256-CBC records with
//! HMAC-SHA-512, and the TLS 1.2 PRF over SHA-512.
//!
//! Message flow:
//!
//! ```text
//! ClientHello(+0xFD00)  ->
//!                       <- ServerHello(+0xFD00), Certificate, ServerHelloDone
//! ClientKeyExchange, ChangeCipherSpec, Finished ->
//!                       <- ChangeCipherSpec, Finished
//! ```
//!
//! Extension 0xFD00 (template info) carries the sender's registry version, the requested
//! security level and the signature/encryption algorithm ids that level resolves to.
//! The server compares them with its own resolution and answers a mismatch with alert
//! 112 before sending ServerHello, so no key exchange takes place.
//!
//! There is no resumption, renegotiation, client authentication or compression. At most
//! one alert is sent per connection and it is always fatal.

mod certificate;
mod handshake;
mod messages;
mod record;
mod transcript;
mod transport;

pub use certificate::{Certificate, CERTIFICATE_MAGIC};
pub use handshake::{
    client_handshake, server_handshake, ClientConfig, HandshakeFailure, ServerConfig, SessionKeys, TlsSession,
};
pub use messages::{
    decode_handshake_message, encode_handshake_message, ClientHello, Extension, HandshakeMessage, HandshakeType,
    ServerHello, TemplateInfo,
};
pub use record::{ContentType, RecordLayer, MAX_CIPHERTEXT_LEN, RECORD_HEADER_LEN};
pub use transcript::{
    transcript_report, Direction, DirectionTotals, HandshakeTranscript, MessageReport, TemplateReport,
    TranscriptEntry, TranscriptReport,
};
#[cfg(feature = "fault-injection")]
pub use transport::TamperStream;
pub use transport::{duplex, MemoryStream, Transport};

use std::fmt;

use thiserror::Error;

/// Protocol version on the wire: TLS 1.2.
pub const PROTOCOL_VERSION: u16 = 0x0303;
/// Extension number of the template-info extension (private use range).
pub const EXT_TEMPLATE_INFO: u16 = 0xFD00;
/// Largest handshake message accepted (well above a megabyte certificate).
pub const MAX_HANDSHAKE_LEN: usize = 4 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CipherSuiteId(pub u16);

impl CipherSuiteId {
    pub const CME_SPX_WITH_AES_256_CBC_SHA512: CipherSuiteId = CipherSuiteId(0x1306);

    /// Registered suites. Everything else is unknown to this implementation.
    pub const REGISTERED: [CipherSuiteId; 1] = [Self::CME_SPX_WITH_AES_256_CBC_SHA512];

    pub fn is_registered(self) -> bool {
        Self::REGISTERED.contains(&self)
    }

    pub fn name(self) -> Option<&'static str> {
        match self {
            Self::CME_SPX_WITH_AES_256_CBC_SHA512 => Some("TLS_CME_SPX_WITH_AES_256_CBC_SHA512"),
            _ => None,
        }
    }
}

impl fmt::Display for CipherSuiteId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.name() {
            Some(n) => write!(f, "{n} (0x{:04X})", self.0),
            None => write!(f, "unknown (0x{:04X})", self.0),
        }
    }
}

/// Alert descriptions used by this implementation. All alerts are fatal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AlertDescription {
    UnexpectedMessage,
    BadRecordMac,
    HandshakeFailure,
    BadCertificate,
    DecodeError,
    DecryptError,
    TemplateMismatch,
    InvalidCiphertext,
    Unknown(u8),
}

impl AlertDescription {
    pub const FATAL_LEVEL: u8 = 2;

    pub fn code(self) -> u8 {
        match self {
            AlertDescription::UnexpectedMessage => 10,
            AlertDescription::BadRecordMac => 20,
            AlertDescription::HandshakeFailure => 40,
            AlertDescription::BadCertificate => 42,
            AlertDescription::DecodeError => 50,
            AlertDescription::DecryptError => 51,
            AlertDescription::TemplateMismatch => 112,
            AlertDescription::InvalidCiphertext => 113,
            AlertDescription::Unknown(c) => c,
        }
    }

    pub fn from_code(code: u8) -> Self {
        match code {
            10 => AlertDescription::UnexpectedMessage,
            20 => AlertDescription::BadRecordMac,
            40 => AlertDescription::HandshakeFailure,
            42 => AlertDescription::BadCertificate,
            50 => AlertDescription::DecodeError,
            51 => AlertDescription::DecryptError,
            112 => AlertDescription::TemplateMismatch,
            113 => AlertDescription::InvalidCiphertext,
            c => AlertDescription::Unknown(c),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AlertDescription::UnexpectedMessage => "unexpected_message",
            AlertDescription::BadRecordMac => "bad_record_mac",
            AlertDescription::HandshakeFailure => "handshake_failure",
            AlertDescription::BadCertificate => "bad_certificate",
            AlertDescription::DecodeError => "decode_error",
            AlertDescription::DecryptError => "decrypt_error",
            AlertDescription::TemplateMismatch => "template_mismatch",
            AlertDescription::InvalidCiphertext => "invalid_ciphertext",
            AlertDescription::Unknown(_) => "unknown_alert",
        }
    }
}

impl fmt::Display for AlertDescription {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({})", self.name(), self.code())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TlsError {
    /// This side detected a problem, sent the fatal alert and closed the connection.
    #[error("sent fatal alert {alert}: {reason}")]
    AlertSent { alert: AlertDescription, reason: String },
    #[error("received fatal alert {0}")]
    AlertReceived(AlertDescription),
    #[error("connection closed by peer")]
    Closed,
    #[error("i/o error: {0}")]
    Io(String),
    #[error("configuration error: {0}")]
    Config(String),
}

impl TlsError {
    /// The alert involved, sent or received.
    pub fn alert(&self) -> Option<AlertDescription> {
        match self {
            TlsError::AlertSent { alert, .. } => Some(*alert),
            TlsError::AlertReceived(a) => Some(*a),
            _ => None,
        }
    }
}

impl From<std::io::Error> for TlsError {
    fn from(e: std::io::Error) -> Self {
        match e.kind() {
            std::io::ErrorKind::UnexpectedEof
            | std::io::ErrorKind::ConnectionReset
            | std::io::ErrorKind::ConnectionAborted
            | std::io::ErrorKind::BrokenPipe => TlsError::Closed,
            _ => TlsError::Io(e.to_string()),
        }
    }
}
