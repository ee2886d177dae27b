//! Record layer: `type u8 | version u16 = 0x0303 | length u16 | fragment`.
//!
//! Before ChangeCipherSpec fragments are plaintext. Afterwards each direction seals with
//! its own keys and a sequence number that restarts at 0 when keys are installed. Once
//! keys are active the header is checked only through the record MAC, so any tampering
//! with a protected record surfaces as `bad_record_mac`.

use crate::primitives::{open_record, seal_record, CryptoError, SymmetricKeys, MAX_FRAGMENT_LEN};

use super::{AlertDescription, TlsError, Transport, PROTOCOL_VERSION};

pub const RECORD_HEADER_LEN: usize = 5;
/// Upper bound on a protected fragment (plaintext limit plus MAC, IV and padding room).
pub const MAX_CIPHERTEXT_LEN: usize = MAX_FRAGMENT_LEN + 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ContentType {
    ChangeCipherSpec,
    Alert,
    Handshake,
    ApplicationData,
}

impl ContentType {
    pub fn code(self) -> u8 {
        match self {
            ContentType::ChangeCipherSpec => 20,
            ContentType::Alert => 21,
            ContentType::Handshake => 22,
            ContentType::ApplicationData => 23,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            20 => Some(ContentType::ChangeCipherSpec),
            21 => Some(ContentType::Alert),
            22 => Some(ContentType::Handshake),
            23 => Some(ContentType::ApplicationData),
            _ => None,
        }
    }
}

pub struct RecordLayer<T> {
    io: T,
    read_keys: Option<SymmetricKeys>,
    write_keys: Option<SymmetricKeys>,
    read_seq: u64,
    write_seq: u64,
    bytes_read: u64,
    bytes_written: u64,
    closed: bool,
    alert_sent: bool,
}

impl<T> std::fmt::Debug for RecordLayer<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RecordLayer")
            .field("read_protected", &self.read_keys.is_some())
            .field("write_protected", &self.write_keys.is_some())
            .field("read_seq", &self.read_seq)
            .field("write_seq", &self.write_seq)
            .field("closed", &self.closed)
            .finish()
    }
}

impl<T: Transport> RecordLayer<T> {
    pub fn new(io: T) -> Self {
        Self {
            io,
            read_keys: None,
            write_keys: None,
            read_seq: 0,
            write_seq: 0,
            bytes_read: 0,
            bytes_written: 0,
            closed: false,
            alert_sent: false,
        }
    }

    /// Installs keys for outgoing records and resets the write sequence number.
    pub fn set_write_keys(&mut self, keys: SymmetricKeys) {
        self.write_keys = Some(keys);
        self.write_seq = 0;
    }

    /// Installs keys for incoming records and resets the read sequence number.
    pub fn set_read_keys(&mut self, keys: SymmetricKeys) {
        self.read_keys = Some(keys);
        self.read_seq = 0;
    }

    pub fn read_seq(&self) -> u64 {
        self.read_seq
    }

    pub fn write_seq(&self) -> u64 {
        self.write_seq
    }

    /// Bytes received on the wire, headers included.
    pub fn bytes_read(&self) -> u64 {
        self.bytes_read
    }

    /// Bytes sent on the wire, headers included.
    pub fn bytes_written(&self) -> u64 {
        self.bytes_written
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn get_ref(&self) -> &T {
        &self.io
    }

    pub fn get_mut(&mut self) -> &mut T {
        &mut self.io
    }

    pub fn into_inner(self) -> T {
        self.io
    }

    /// Sends one record. `payload` must not exceed 2^14 bytes.
    pub fn send(&mut self, content_type: ContentType, payload: &[u8]) -> Result<(), TlsError> {
        if self.closed {
            return Err(TlsError::Closed);
        }
        if payload.len() > MAX_FRAGMENT_LEN {
            return Err(TlsError::Config(format!(
                "record payload of {} bytes exceeds 2^14",
                payload.len()
            )));
        }
        let [v0, v1] = PROTOCOL_VERSION.to_be_bytes();
        let header = [content_type.code(), v0, v1];
        let sealed;
        let body = match &self.write_keys {
            Some(keys) => {
                let next = self
                    .write_seq
                    .checked_add(1)
                    .ok_or_else(|| TlsError::Config("write sequence number exhausted".into()))?;
                sealed = seal_record(keys, self.write_seq, &header, payload).map_err(|e| TlsError::Config(e.to_string()))?;
                self.write_seq = next;
                &sealed[..]
            }
            None => payload,
        };
        let mut wire = Vec::with_capacity(RECORD_HEADER_LEN + body.len());
        wire.extend_from_slice(&header);
        wire.extend_from_slice(&(body.len() as u16).to_be_bytes());
        wire.extend_from_slice(body);
        self.io.write_all(&wire)?;
        self.io.flush()?;
        self.bytes_written += wire.len() as u64;
        Ok(())
    }

    /// Sends `data` as consecutive records of at most 2^14 bytes each.
    pub fn send_fragmented(&mut self, content_type: ContentType, data: &[u8]) -> Result<(), TlsError> {
        for chunk in data.chunks(MAX_FRAGMENT_LEN) {
            self.send(content_type, chunk)?;
        }
        Ok(())
    }

    /// Receives one record. An incoming alert is returned as [`TlsError::AlertReceived`].
    pub fn recv(&mut self) -> Result<(ContentType, Vec<u8>), TlsError> {
        if self.closed {
            return Err(TlsError::Closed);
        }
        let mut header = [0u8; RECORD_HEADER_LEN];
        if let Err(e) = self.io.read_exact(&mut header) {
            self.closed = true;
            return Err(e.into());
        }
        let len = u16::from_be_bytes([header[3], header[4]]) as usize;
        let version = u16::from_be_bytes([header[1], header[2]]);
        let protected = self.read_keys.is_some();
        if protected && len > MAX_CIPHERTEXT_LEN {
            return Err(self.fatal(AlertDescription::BadRecordMac, "bad_mac: record length out of range"));
        }
        if !protected && (version != PROTOCOL_VERSION || len > MAX_FRAGMENT_LEN) {
            return Err(self.fatal(AlertDescription::DecodeError, "bad record header"));
        }
        let mut body = vec![0u8; len];
        if let Err(e) = self.io.read_exact(&mut body) {
            self.closed = true;
            return Err(e.into());
        }
        self.bytes_read += (RECORD_HEADER_LEN + len) as u64;
        let payload = match &self.read_keys {
            Some(keys) => match open_record(keys, self.read_seq, &header[..3], &body) {
                Ok(p) => {
                    self.read_seq += 1;
                    p
                }
                Err(CryptoError::BadPadding) => {
                    return Err(self.fatal(AlertDescription::BadRecordMac, "bad_padding"));
                }
                Err(_) => return Err(self.fatal(AlertDescription::BadRecordMac, "bad_mac")),
            },
            None => body,
        };
        let Some(content_type) = ContentType::from_code(header[0]) else {
            return Err(self.fatal(AlertDescription::UnexpectedMessage, "unknown content type"));
        };
        if content_type == ContentType::Alert {
            self.closed = true;
            if payload.len() != 2 {
                return Err(TlsError::AlertReceived(AlertDescription::DecodeError));
            }
            return Err(TlsError::AlertReceived(AlertDescription::from_code(payload[1])));
        }
        Ok((content_type, payload))
    }

    /// Sends the connection's single fatal alert, closes, and returns the matching error.
    pub fn fatal(&mut self, alert: AlertDescription, reason: impl Into<String>) -> TlsError {
        if !self.alert_sent && !self.closed {
            self.alert_sent = true;
            let _ = self.send(ContentType::Alert, &[AlertDescription::FATAL_LEVEL, alert.code()]);
        }
        self.closed = true;
        TlsError::AlertSent {
            alert,
            reason: reason.into(),
        }
    }

    /// Marks the layer closed without sending anything.
    pub fn close(&mut self) {
        self.closed = true;
    }
}
