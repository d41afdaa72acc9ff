use std::collections::HashMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

/// Response cache keyed by request fingerprint.
///
/// Always keeps an in-memory copy; with a directory, each entry is also a
/// file `<fingerprint>.txt` holding the raw response text, written
/// atomically via a temporary file and rename.
#[derive(Debug)]
pub struct ResponseCache {
    memory: Mutex<HashMap<String, String>>,
    dir: Option<PathBuf>,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        Self {
            memory: Mutex::new(HashMap::new()),
            dir: None,
        }
    }

    pub fn on_disk(dir: impl Into<PathBuf>) -> io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self {
            memory: Mutex::new(HashMap::new()),
            dir: Some(dir),
        })
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    fn entry_path(&self, fingerprint: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("{fingerprint}.txt")))
    }

    pub fn get(&self, fingerprint: &str) -> io::Result<Option<String>> {
        if let Some(hit) = self.memory.lock().unwrap().get(fingerprint) {
            return Ok(Some(hit.clone()));
        }
        let Some(path) = self.entry_path(fingerprint) else {
            return Ok(None);
        };
        match fs::read_to_string(&path) {
            Ok(text) => {
                self.memory
                    .lock()
                    .unwrap()
                    .insert(fingerprint.to_string(), text.clone());
                Ok(Some(text))
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }

    pub fn put(&self, fingerprint: &str, text: &str) -> io::Result<()> {
        if let (Some(dir), Some(path)) = (&self.dir, self.entry_path(fingerprint)) {
            let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
            tmp.write_all(text.as_bytes())?;
            tmp.as_file().sync_all()?;
            tmp.persist(&path).map_err(|e| e.error)?;
        }
        self.memory
            .lock()
            .unwrap()
            .insert(fingerprint.to_string(), text.to_string());
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.memory.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disk_entries_survive_a_new_cache() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::on_disk(dir.path()).unwrap();
        assert_eq!(cache.get("abc").unwrap(), None);
        cache.put("abc", "So the answer is yes.").unwrap();
        let reopened = ResponseCache::on_disk(dir.path()).unwrap();
        assert_eq!(reopened.get("abc").unwrap().as_deref(), Some("So the answer is yes."));
        assert_eq!(
            fs::read_to_string(dir.path().join("abc.txt")).unwrap(),
            "So the answer is yes."
        );
        // no temp files left behind
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
