//! Transcript recording and replay.
//!
//! A transcript is JSON lines of `{key, request_digest_inputs, outcome}`. The
//! key is the SHA-256 of the canonical JSON of the digest inputs (system
//! prompt, messages, temperature, model id).

use std::collections::{BTreeSet, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{BackendError, ChatBackend, ChatMessage, ChatOutcome, ChatRequest};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DigestInputs {
    pub system: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub model_id: String,
}

impl DigestInputs {
    pub fn of(request: &ChatRequest) -> Self {
        Self {
            system: request.system.clone(),
            messages: request.messages.clone(),
            temperature: request.config.temperature,
            model_id: request.config.model_id.clone(),
        }
    }

    pub fn key(&self) -> String {
        let canonical = serde_json::to_string(self).expect("digest inputs serialize");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}

pub fn request_key(request: &ChatRequest) -> String {
    DigestInputs::of(request).key()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub key: String,
    pub request_digest_inputs: DigestInputs,
    pub outcome: ChatOutcome,
}

impl TranscriptEntry {
    pub fn new(request: &ChatRequest, outcome: ChatOutcome) -> Self {
        let inputs = DigestInputs::of(request);
        Self { key: inputs.key(), request_digest_inputs: inputs, outcome }
    }
}

pub fn read_transcript(path: &Path) -> Result<Vec<TranscriptEntry>, BackendError> {
    let err = |reason: String| BackendError::Transcript { path: path.to_path_buf(), reason };
    let file = File::open(path).map_err(|e| err(e.to_string()))?;
    let mut entries = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| err(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry = serde_json::from_str(&line).map_err(|e| err(format!("line {}: {e}", n + 1)))?;
        entries.push(entry);
    }
    Ok(entries)
}

/// Answers requests from a transcript.
///
/// A miss is remembered and, without a fallthrough backend, answered with
/// `TransportError("no transcript entry ...")`.
pub struct ReplayBackend {
    entries: HashMap<String, ChatOutcome>,
    fallthrough: Option<Arc<dyn ChatBackend>>,
    missing: Mutex<BTreeSet<String>>,
}

impl ReplayBackend {
    pub fn from_entries(entries: Vec<TranscriptEntry>, fallthrough: Option<Arc<dyn ChatBackend>>) -> Self {
        Self {
            entries: entries.into_iter().map(|e| (e.key, e.outcome)).collect(),
            fallthrough,
            missing: Mutex::new(BTreeSet::new()),
        }
    }

    pub fn open(path: &Path, fallthrough: Option<Arc<dyn ChatBackend>>) -> Result<Self, BackendError> {
        Ok(Self::from_entries(read_transcript(path)?, fallthrough))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl ChatBackend for ReplayBackend {
    fn name(&self) -> &str {
        "replay"
    }

    fn complete(&self, request: &ChatRequest) -> ChatOutcome {
        let key = request_key(request);
        if let Some(outcome) = self.entries.get(&key) {
            return outcome.clone();
        }
        self.missing.lock().unwrap().insert(key.clone());
        match &self.fallthrough {
            Some(inner) => inner.complete(request),
            None => ChatOutcome::TransportError(format!("no transcript entry for key {key}")),
        }
    }

    fn missing_transcript_keys(&self) -> Vec<String> {
        self.missing.lock().unwrap().iter().cloned().collect()
    }
}

/// Passes requests to an inner backend and appends each text or blocked
/// outcome to a transcript. Transport errors are not recorded, so a later
/// strict replay reports them as missing keys instead of freezing them.
pub struct RecordingBackend {
    inner: Arc<dyn ChatBackend>,
    path: PathBuf,
    out: Mutex<File>,
    unrecorded: AtomicUsize,
}

impl RecordingBackend {
    /// Opens `path` for appending, creating it if needed.
    pub fn new(inner: Arc<dyn ChatBackend>, path: &Path) -> Result<Self, BackendError> {
        let out = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| BackendError::Transcript { path: path.to_path_buf(), reason: e.to_string() })?;
        Ok(Self { inner, path: path.to_path_buf(), out: Mutex::new(out), unrecorded: AtomicUsize::new(0) })
    }

    pub fn record(&self, request: &ChatRequest, outcome: &ChatOutcome) -> Result<String, BackendError> {
        let entry = TranscriptEntry::new(request, outcome.clone());
        let mut line = serde_json::to_string(&entry).expect("transcript entry serializes");
        line.push('\n');
        let mut out = self.out.lock().unwrap();
        out.write_all(line.as_bytes())
            .and_then(|_| out.flush())
            .map_err(|e| BackendError::Transcript { path: self.path.clone(), reason: e.to_string() })?;
        Ok(entry.key)
    }

    /// Requests whose outcome was not written (transport errors and write failures).
    pub fn unrecorded(&self) -> usize {
        self.unrecorded.load(Ordering::SeqCst)
    }
}

impl ChatBackend for RecordingBackend {
    fn name(&self) -> &str {
        "record"
    }

    fn complete(&self, request: &ChatRequest) -> ChatOutcome {
        let outcome = self.inner.complete(request);
        if matches!(outcome, ChatOutcome::TransportError(_)) {
            self.unrecorded.fetch_add(1, Ordering::SeqCst);
        } else if let Err(e) = self.record(request, &outcome) {
            self.unrecorded.fetch_add(1, Ordering::SeqCst);
            tracing::error!(error = %e, "failed to append transcript entry");
        }
        outcome
    }

    fn missing_transcript_keys(&self) -> Vec<String> {
        self.inner.missing_transcript_keys()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Stage;
    use crate::llm::{GenerationConfig, MockBackend, OverlapScorer};

    fn req(temperature: f64) -> ChatRequest {
        let mut cfg = GenerationConfig::for_stage(Stage::Interpret, "m");
        cfg.temperature = temperature;
        ChatRequest::single(Stage::Interpret, "sys", "<question>\nwhy\n</question>", cfg)
    }

    #[test]
    fn key_includes_temperature() {
        assert_ne!(request_key(&req(0.0)), request_key(&req(0.1)));
        assert_eq!(request_key(&req(0.0)), request_key(&req(0.0)));
    }

    #[test]
    fn record_then_replay() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        let mock: Arc<dyn ChatBackend> = Arc::new(MockBackend::new(Box::new(OverlapScorer)));
        let rec = RecordingBackend::new(mock, &path).unwrap();
        let live = rec.complete(&req(0.0));
        drop(rec);
        let replay = ReplayBackend::open(&path, None).unwrap();
        assert_eq!(replay.complete(&req(0.0)), live);
        assert!(replay.missing_transcript_keys().is_empty());
    }

    #[test]
    fn strict_miss_is_transport_error() {
        let replay = ReplayBackend::from_entries(vec![], None);
        let out = replay.complete(&req(0.0));
        assert!(matches!(out, ChatOutcome::TransportError(d) if d.contains("no transcript entry")));
        assert_eq!(replay.missing_transcript_keys(), vec![request_key(&req(0.0))]);
    }

    #[test]
    fn malformed_transcript_line_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        std::fs::write(&path, "{not json}\n").unwrap();
        assert!(matches!(ReplayBackend::open(&path, None), Err(BackendError::Transcript { .. })));
    }
}
