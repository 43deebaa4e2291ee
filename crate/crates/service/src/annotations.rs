//! Free-text notes attached to grid cells, kept in an append-only JSONL log
//! per snapshot. Removal appends a tombstone; replaying the log gives the
//! current set.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use fakescope_core::analytics::CellId;
use fakescope_core::Error as CoreError;

use crate::error::{Result, ServiceError};

pub const MAX_TEXT_LEN: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub id: String,
    pub snapshot_id: String,
    pub cell_id: CellId,
    pub text: String,
    pub created_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub author: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum LogEntry {
    Add(Annotation),
    Remove { id: String, removed_at: DateTime<Utc> },
}

pub struct AnnotationStore {
    dir: PathBuf,
    /// Serializes every append so log lines never interleave.
    writer: Mutex<()>,
}

impl AnnotationStore {
    pub fn new(dir: PathBuf) -> Self {
        Self {
            dir,
            writer: Mutex::new(()),
        }
    }

    fn log_path(&self, snapshot_id: &str) -> PathBuf {
        self.dir.join(format!("{snapshot_id}.jsonl"))
    }

    fn append(&self, snapshot_id: &str, entry: &LogEntry) -> Result<()> {
        let mut line = serde_json::to_vec(entry).map_err(|e| ServiceError::Internal(e.to_string()))?;
        line.push(b'\n');
        fs::create_dir_all(&self.dir).map_err(|e| CoreError::io(&self.dir, e))?;
        let path = self.log_path(snapshot_id);
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| CoreError::io(&path, e))?;
        f.write_all(&line).map_err(|e| CoreError::io(&path, e))?;
        f.sync_data().map_err(|e| CoreError::io(&path, e))?;
        Ok(())
    }

    fn replay(path: &Path) -> Result<Vec<Annotation>> {
        let text = match fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(vec![]),
            Err(e) => return Err(CoreError::io(path, e).into()),
        };
        let mut live: Vec<Annotation> = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            match serde_json::from_str(line).map_err(|e| CoreError::json(path, e))? {
                LogEntry::Add(a) => live.push(a),
                LogEntry::Remove { id, .. } => live.retain(|a| a.id != id),
            }
        }
        Ok(live)
    }

    /// Current annotations, in creation order, optionally for one cell.
    pub fn list(&self, snapshot_id: &str, cell: Option<CellId>) -> Result<Vec<Annotation>> {
        let all = Self::replay(&self.log_path(snapshot_id))?;
        Ok(all
            .into_iter()
            .filter(|a| cell.is_none_or(|c| a.cell_id == c))
            .collect())
    }

    /// Adds a note. The caller is responsible for checking that the cell
    /// exists in the snapshot.
    pub fn add(&self, snapshot_id: &str, cell: CellId, text: &str, author: Option<&str>) -> Result<Annotation> {
        let text = text.trim();
        if text.is_empty() {
            return Err(ServiceError::BadRequest("annotation text is empty".into()));
        }
        if text.len() > MAX_TEXT_LEN {
            return Err(ServiceError::BadRequest(format!(
                "annotation text exceeds {MAX_TEXT_LEN} bytes"
            )));
        }
        let annotation = Annotation {
            id: uuid::Uuid::new_v4().to_string(),
            snapshot_id: snapshot_id.to_string(),
            cell_id: cell,
            text: text.to_string(),
            created_at: Utc::now(),
            author: author.map(str::trim).filter(|a| !a.is_empty()).map(String::from),
        };
        let _guard = self.writer.lock();
        self.append(snapshot_id, &LogEntry::Add(annotation.clone()))?;
        Ok(annotation)
    }

    pub fn remove(&self, snapshot_id: &str, id: &str) -> Result<Annotation> {
        let _guard = self.writer.lock();
        let existing = Self::replay(&self.log_path(snapshot_id))?
            .into_iter()
            .find(|a| a.id == id)
            .ok_or_else(|| ServiceError::not_found(format!("annotation `{id}`")))?;
        self.append(
            snapshot_id,
            &LogEntry::Remove {
                id: id.to_string(),
                removed_at: Utc::now(),
            },
        )?;
        Ok(existing)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    fn cell(r: usize, c: usize) -> CellId {
        CellId { row: r, col: c }
    }

    #[test]
    fn add_list_remove() {
        let dir = tempfile::tempdir().unwrap();
        let store = AnnotationStore::new(dir.path().join("ann"));
        assert!(store.list("s", None).unwrap().is_empty());
        let a = store
            .add("s", cell(1, 2), "  checkerboard seams ", Some("ana"))
            .unwrap();
        assert_eq!(a.text, "checkerboard seams");
        assert_eq!(a.author.as_deref(), Some("ana"));
        let b = store.add("s", cell(0, 0), "smooth skies", None).unwrap();
        assert_eq!(store.list("s", None).unwrap(), vec![a.clone(), b.clone()]);
        assert_eq!(store.list("s", Some(cell(0, 0))).unwrap(), vec![b.clone()]);
        assert!(store.list("other", None).unwrap().is_empty());
        assert_eq!(store.remove("s", &a.id).unwrap(), a);
        assert_eq!(store.list("s", None).unwrap(), vec![b]);
        assert!(matches!(store.remove("s", &a.id), Err(ServiceError::NotFound(_))));
    }

    #[test]
    fn rejects_blank_text() {
        let dir = tempfile::tempdir().unwrap();
        let store = AnnotationStore::new(dir.path().to_path_buf());
        assert!(matches!(
            store.add("s", cell(0, 0), " \n", None),
            Err(ServiceError::BadRequest(_))
        ));
        assert!(store.add("s", cell(0, 0), &"x".repeat(MAX_TEXT_LEN + 1), None).is_err());
    }

    #[test]
    fn concurrent_adds_are_all_kept() {
        let dir = tempfile::tempdir().unwrap();
        let store = Arc::new(AnnotationStore::new(dir.path().to_path_buf()));
        let handles: Vec<_> = (0..8)
            .map(|t| {
                let store = store.clone();
                std::thread::spawn(move || {
                    for i in 0..25 {
                        store.add("s", cell(t, i), &format!("note {t}-{i}"), None).unwrap();
                    }
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        let all = store.list("s", None).unwrap();
        assert_eq!(all.len(), 200);
        let mut ids: Vec<_> = all.iter().map(|a| a.id.clone()).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 200);
    }
}
