use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use crate::error::Result;

use super::GenerationRecord;

/// `(endpoint, prompt digest, decode params digest)`.
pub type CacheKey = (String, String, String);

/// Append-only JSON-lines ledger with an in-memory index. Later lines win.
pub struct GenerationCache {
    path: Option<PathBuf>,
    index: Mutex<HashMap<CacheKey, GenerationRecord>>,
    writer: Mutex<Option<File>>,
}

impl GenerationCache {
    pub fn in_memory() -> Self {
        Self {
            path: None,
            index: Mutex::new(HashMap::new()),
            writer: Mutex::new(None),
        }
    }

    /// Loads an existing ledger, if any. A truncated final line from an
    /// interrupted run is skipped with a warning.
    pub fn open(path: &Path) -> Result<Self> {
        let mut index = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<GenerationRecord>(&line) {
                    Ok(record) => {
                        index.insert(record.key(), record);
                    }
                    Err(e) => log::warn!("{}: skipping unreadable cache line {}: {e}", path.display(), i + 1),
                }
            }
        } else if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            path: Some(path.to_path_buf()),
            index: Mutex::new(index),
            writer: Mutex::new(Some(file)),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn get(&self, key: &CacheKey) -> Option<GenerationRecord> {
        self.index.lock().expect("cache index lock").get(key).cloned()
    }

    pub fn len(&self) -> usize {
        self.index.lock().expect("cache index lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn put(&self, record: GenerationRecord) -> Result<()> {
        {
            let mut writer = self.writer.lock().expect("cache writer lock");
            if let Some(file) = writer.as_mut() {
                let mut line = serde_json::to_vec(&record)?;
                line.push(b'\n');
                file.write_all(&line)?;
                file.flush()?;
            }
        }
        self.index.lock().expect("cache index lock").insert(record.key(), record);
        Ok(())
    }
}
