//! Evaluation cache keyed by (curriculum, config digest), optionally backed by
//! an append-only JSON-lines file.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Mutex, RwLock};

use crate::curriculum::Curriculum;
use crate::error::{Error, Result};
use crate::eval::EvalResult;

type Key = (Curriculum, String);

#[derive(Debug, Default)]
pub struct EvalCache {
    entries: RwLock<HashMap<Key, EvalResult>>,
    file: Option<(PathBuf, Mutex<BufWriter<File>>)>,
    hits: AtomicUsize,
    misses: AtomicUsize,
}

/// What [`EvalCache::open`] found on disk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoadReport {
    pub records: usize,
    pub dropped_trailing_bytes: usize,
}

impl EvalCache {
    pub fn in_memory() -> Self {
        EvalCache::default()
    }

    /// Load `path` (if present) and append new records to it.
    ///
    /// A torn final record, as left by an interrupted write, is dropped and
    /// truncated away. Corruption anywhere else is an error.
    pub fn open(path: impl AsRef<Path>) -> Result<(Self, LoadReport)> {
        let path = path.as_ref();
        let mut entries = HashMap::new();
        let mut keep = 0usize;
        let mut report = LoadReport { records: 0, dropped_trailing_bytes: 0 };
        if path.exists() {
            let text = std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
            let mut offset = 0usize;
            let mut line_no = 0usize;
            while offset < text.len() {
                line_no += 1;
                let end = text[offset..].iter().position(|&b| b == b'\n').map(|p| offset + p);
                let body = &text[offset..end.unwrap_or(text.len())];
                let parsed = std::str::from_utf8(body).ok().and_then(|s| serde_json::from_str::<EvalResult>(s).ok());
                match (parsed, end) {
                    (Some(rec), Some(e)) => {
                        entries.insert((rec.curriculum.clone(), rec.config_digest.clone()), rec);
                        report.records += 1;
                        offset = e + 1;
                        keep = offset;
                    }
                    // last line: either unterminated or unparseable
                    (_, None) => break,
                    (None, Some(e)) if e + 1 == text.len() => break,
                    (None, Some(_)) => {
                        return Err(Error::CorruptCache { path: path.display().to_string(), line: line_no });
                    }
                }
            }
            report.dropped_trailing_bytes = text.len() - keep;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
        if report.dropped_trailing_bytes > 0 {
            file.set_len(keep as u64).map_err(|e| Error::io(format!("truncating {}", path.display()), e))?;
        }
        let cache = EvalCache {
            entries: RwLock::new(entries),
            file: Some((path.to_path_buf(), Mutex::new(BufWriter::new(file)))),
            hits: AtomicUsize::new(0),
            misses: AtomicUsize::new(0),
        };
        Ok((cache, report))
    }

    pub fn get(&self, c: &Curriculum, digest: &str) -> Option<EvalResult> {
        let found = self.entries.read().unwrap().get(&(c.clone(), digest.to_string())).cloned();
        match found {
            Some(_) => self.hits.fetch_add(1, Ordering::Relaxed),
            None => self.misses.fetch_add(1, Ordering::Relaxed),
        };
        found
    }

    /// Insert (last writer wins) and append to the backing file, if any.
    pub fn insert(&self, result: EvalResult) -> Result<()> {
        if let Some((path, writer)) = &self.file {
            let line = serde_json::to_string(&result).map_err(|e| Error::json("encoding cache record", e))?;
            let mut w = writer.lock().unwrap();
            let ctx = || format!("appending to {}", path.display());
            w.write_all(line.as_bytes()).map_err(|e| Error::io(ctx(), e))?;
            w.write_all(b"\n").map_err(|e| Error::io(ctx(), e))?;
            w.flush().map_err(|e| Error::io(ctx(), e))?;
        }
        self.entries.write().unwrap().insert((result.curriculum.clone(), result.config_digest.clone()), result);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::Relaxed)
    }

    pub fn path(&self) -> Option<&Path> {
        self.file.as_ref().map(|(p, _)| p.as_path())
    }
}
