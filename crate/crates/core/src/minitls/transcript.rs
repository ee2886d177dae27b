//! Handshake transcript: message sizes as sent, the running SHA-512 transcript hash, and
//! the JSON report built from them.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha512};

use super::messages::TemplateInfo;
use super::CipherSuiteId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    ClientToServer,
    ServerToClient,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TranscriptEntry {
    /// Handshake message name, or `ChangeCipherSpec` / `Alert(<name>)`.
    pub message: String,
    pub direction: Direction,
    /// Handshake messages: bytes including the 4-byte header. Other entries: record payload.
    pub bytes: usize,
}

#[derive(Debug, Clone)]
pub struct HandshakeTranscript {
    entries: Vec<TranscriptEntry>,
    hasher: Sha512,
    suite: Option<CipherSuiteId>,
    local_template: Option<TemplateInfo>,
    remote_template: Option<TemplateInfo>,
    started: Instant,
    duration: Option<Duration>,
    aborted: bool,
    alert: Option<String>,
    wire: DirectionTotals,
}

impl Default for HandshakeTranscript {
    fn default() -> Self {
        Self::new()
    }
}

impl HandshakeTranscript {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            hasher: Sha512::new(),
            suite: None,
            local_template: None,
            remote_template: None,
            started: Instant::now(),
            duration: None,
            aborted: false,
            alert: None,
            wire: DirectionTotals::default(),
        }
    }

    /// Adds a complete handshake message (header included) to the log and the hash.
    pub fn add_handshake(&mut self, name: &str, direction: Direction, raw: &[u8]) {
        self.hasher.update(raw);
        self.entries.push(TranscriptEntry {
            message: name.to_string(),
            direction,
            bytes: raw.len(),
        });
    }

    /// Logs a non-handshake record (ChangeCipherSpec, Alert); not hashed.
    pub fn add_other(&mut self, name: String, direction: Direction, bytes: usize) {
        self.entries.push(TranscriptEntry {
            message: name,
            direction,
            bytes,
        });
    }

    /// SHA-512 over all handshake messages so far.
    pub fn hash(&self) -> Vec<u8> {
        self.hasher.clone().finalize().to_vec()
    }

    pub fn entries(&self) -> &[TranscriptEntry] {
        &self.entries
    }

    pub fn contains(&self, message: &str) -> bool {
        self.entries.iter().any(|e| e.message == message)
    }

    pub fn bytes_of(&self, message: &str) -> Option<usize> {
        self.entries.iter().find(|e| e.message == message).map(|e| e.bytes)
    }

    pub fn total_bytes(&self) -> u64 {
        self.entries.iter().map(|e| e.bytes as u64).sum()
    }

    pub fn direction_totals(&self) -> DirectionTotals {
        let mut t = DirectionTotals::default();
        for e in &self.entries {
            match e.direction {
                Direction::ClientToServer => t.client_to_server += e.bytes as u64,
                Direction::ServerToClient => t.server_to_client += e.bytes as u64,
            }
        }
        t
    }

    pub fn suite(&self) -> Option<CipherSuiteId> {
        self.suite
    }

    pub fn set_suite(&mut self, suite: CipherSuiteId) {
        self.suite = Some(suite);
    }

    pub fn set_templates(&mut self, local: Option<TemplateInfo>, remote: Option<TemplateInfo>) {
        if local.is_some() {
            self.local_template = local;
        }
        if remote.is_some() {
            self.remote_template = remote;
        }
    }

    pub fn local_template(&self) -> Option<&TemplateInfo> {
        self.local_template.as_ref()
    }

    pub fn remote_template(&self) -> Option<&TemplateInfo> {
        self.remote_template.as_ref()
    }

    pub fn set_wire_bytes(&mut self, wire: DirectionTotals) {
        self.wire = wire;
    }

    pub fn wire_bytes(&self) -> DirectionTotals {
        self.wire
    }

    /// Stops the clock; `alert` marks the handshake as aborted.
    pub fn finish(&mut self, alert: Option<String>) {
        if self.duration.is_none() {
            self.duration = Some(self.started.elapsed());
        }
        self.aborted = alert.is_some();
        self.alert = alert;
    }

    pub fn aborted(&self) -> bool {
        self.aborted
    }

    pub fn alert(&self) -> Option<&str> {
        self.alert.as_deref()
    }

    pub fn duration(&self) -> Duration {
        self.duration.unwrap_or_else(|| self.started.elapsed())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirectionTotals {
    pub client_to_server: u64,
    pub server_to_client: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageReport {
    #[serde(rename = "type")]
    pub message: String,
    pub direction: Direction,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateReport {
    pub registry_version: u32,
    pub level: String,
    pub signature_id: String,
    pub encryption_id: String,
}

impl From<&TemplateInfo> for TemplateReport {
    fn from(t: &TemplateInfo) -> Self {
        Self {
            registry_version: t.registry_version,
            level: t.level.name().to_string(),
            signature_id: t.signature_id.clone(),
            encryption_id: t.encryption_id.clone(),
        }
    }
}

/// Machine-readable view of one handshake.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptReport {
    pub suite: Option<String>,
    pub suite_id: Option<u16>,
    pub messages: Vec<MessageReport>,
    pub total_bytes: u64,
    pub direction_totals: DirectionTotals,
    pub wire_bytes: DirectionTotals,
    pub duration_ms: f64,
    pub aborted: bool,
    pub alert: Option<String>,
    pub local_template: Option<TemplateReport>,
    pub remote_template: Option<TemplateReport>,
}

impl TranscriptReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn bytes_of(&self, message: &str) -> Option<u64> {
        self.messages.iter().find(|m| m.message == message).map(|m| m.bytes)
    }
}

pub fn transcript_report(t: &HandshakeTranscript) -> TranscriptReport {
    TranscriptReport {
        suite: t.suite.map(|s| s.name().map(str::to_string).unwrap_or_else(|| format!("0x{:04X}", s.0))),
        suite_id: t.suite.map(|s| s.0),
        messages: t
            .entries
            .iter()
            .map(|e| MessageReport {
                message: e.message.clone(),
                direction: e.direction,
                bytes: e.bytes as u64,
            })
            .collect(),
        total_bytes: t.total_bytes(),
        direction_totals: t.direction_totals(),
        wire_bytes: t.wire,
        duration_ms: t.duration().as_secs_f64() * 1000.0,
        aborted: t.aborted,
        alert: t.alert.clone(),
        local_template: t.local_template.as_ref().map(TemplateReport::from),
        remote_template: t.remote_template.as_ref().map(TemplateReport::from),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn totals_and_hash() {
        let mut t = HandshakeTranscript::new();
        t.add_handshake("ClientHello", Direction::ClientToServer, b"abcd");
        t.add_handshake("ServerHello", Direction::ServerToClient, b"efghij");
        t.add_other("ChangeCipherSpec".into(), Direction::ClientToServer, 1);
        assert_eq!(t.total_bytes(), 11);
        assert_eq!(
            t.direction_totals(),
            DirectionTotals {
                client_to_server: 5,
                server_to_client: 6
            }
        );
        assert_eq!(t.hash(), Sha512::digest(b"abcdefghij").to_vec());
        t.finish(Some("template_mismatch".into()));
        let r = transcript_report(&t);
        assert!(r.aborted);
        let json: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(json["messages"][1]["type"], "ServerHello");
        assert_eq!(json["messages"][0]["direction"], "client_to_server");
        assert_eq!(json["total_bytes"], 11);
    }
}
