//! Newline-delimited JSON transcripts for record and replay.

use std::collections::{HashMap, VecDeque};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{AgentLabel, GatewayError};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub schema_version: u32,
    pub agent_label: AgentLabel,
    #[serde(default)]
    pub template_version: String,
    pub prompt_sha256: String,
    pub image_sha256s: Vec<String>,
    pub response_text: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ReplayKey {
    pub agent_label: AgentLabel,
    pub prompt_sha256: String,
    pub image_sha256s: Vec<String>,
}

impl ReplayKey {
    pub fn new(agent_label: AgentLabel, prompt: &str, images: &[Vec<u8>]) -> Self {
        Self {
            agent_label,
            prompt_sha256: sha256_hex(prompt.as_bytes()),
            image_sha256s: images.iter().map(|i| sha256_hex(i)).collect(),
        }
    }
}

impl TranscriptRecord {
    pub fn key(&self) -> ReplayKey {
        ReplayKey {
            agent_label: self.agent_label,
            prompt_sha256: self.prompt_sha256.clone(),
            image_sha256s: self.image_sha256s.clone(),
        }
    }
}

/// Appends records to a transcript file, flushing after each one.
pub struct TranscriptWriter {
    out: BufWriter<File>,
}

impl TranscriptWriter {
    pub fn open(path: &Path) -> Result<Self, GatewayError> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| GatewayError::transcript(path, e))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| GatewayError::transcript(path, e))?;
        Ok(Self { out: BufWriter::new(file) })
    }

    pub fn append(&mut self, record: &TranscriptRecord) -> std::io::Result<()> {
        serde_json::to_writer(&mut self.out, record)?;
        self.out.write_all(b"\n")?;
        self.out.flush()
    }
}

/// Recorded exchanges grouped by key. Repeated keys are served in the order
/// they were recorded.
#[derive(Debug, Default)]
pub struct ReplayStore {
    queues: HashMap<ReplayKey, VecDeque<TranscriptRecord>>,
    served: usize,
}

impl ReplayStore {
    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let file = File::open(path).map_err(|e| GatewayError::transcript(path, e))?;
        let mut store = Self::default();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| GatewayError::transcript(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let version = serde_json::from_str::<serde_json::Value>(&line)
                .ok()
                .and_then(|v| v.get("schema_version").and_then(|s| s.as_u64()));
            match version {
                Some(v) if v == u64::from(SCHEMA_VERSION) => {}
                Some(v) => {
                    return Err(GatewayError::SchemaVersion { found: v, expected: SCHEMA_VERSION });
                }
                None => {
                    return Err(GatewayError::Transcript {
                        path: path.to_path_buf(),
                        message: format!("line {}: missing or unreadable schema_version", n + 1),
                    });
                }
            }
            let record: TranscriptRecord = serde_json::from_str(&line).map_err(|e| GatewayError::Transcript {
                path: path.to_path_buf(),
                message: format!("line {}: {e}", n + 1),
            })?;
            store.push(record);
        }
        Ok(store)
    }

    pub fn push(&mut self, record: TranscriptRecord) {
        self.queues.entry(record.key()).or_default().push_back(record);
    }

    pub fn take(&mut self, key: &ReplayKey) -> Option<TranscriptRecord> {
        let record = self.queues.get_mut(key)?.pop_front()?;
        self.served += 1;
        Some(record)
    }

    pub fn remaining(&self) -> usize {
        self.queues.values().map(VecDeque::len).sum()
    }

    pub fn served(&self) -> usize {
        self.served
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(agent: AgentLabel, prompt: &str, text: &str) -> TranscriptRecord {
        TranscriptRecord {
            schema_version: SCHEMA_VERSION,
            agent_label: agent,
            template_version: "t@v1".into(),
            prompt_sha256: sha256_hex(prompt.as_bytes()),
            image_sha256s: vec![],
            response_text: text.into(),
            input_tokens: 1,
            output_tokens: 2,
        }
    }

    #[test]
    fn sha256_matches_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn write_then_load_serves_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        let mut w = TranscriptWriter::open(&path).unwrap();
        w.append(&record(AgentLabel::Agent2, "p", "first")).unwrap();
        w.append(&record(AgentLabel::Agent2, "p", "second")).unwrap();
        w.append(&record(AgentLabel::Agent1, "p", "other")).unwrap();
        drop(w);
        let mut store = ReplayStore::load(&path).unwrap();
        assert_eq!(store.remaining(), 3);
        let key = ReplayKey::new(AgentLabel::Agent2, "p", &[]);
        assert_eq!(store.take(&key).unwrap().response_text, "first");
        assert_eq!(store.take(&key).unwrap().response_text, "second");
        assert!(store.take(&key).is_none());
        assert_eq!(store.served(), 2);
    }

    #[test]
    fn schema_mismatch_is_hard_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        let mut rec = serde_json::to_value(record(AgentLabel::Agent1, "p", "x")).unwrap();
        rec["schema_version"] = 99.into();
        std::fs::write(&path, format!("{rec}\n")).unwrap();
        assert!(matches!(
            ReplayStore::load(&path),
            Err(GatewayError::SchemaVersion { found: 99, expected: SCHEMA_VERSION })
        ));
    }
}
