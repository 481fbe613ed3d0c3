use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ChatRequest, ChatResponse, LlmError};

/// Cache key of a request: SHA-256 over model, system text, user text,
/// temperature and sample index.
pub fn request_digest(req: &ChatRequest) -> String {
    #[derive(Serialize)]
    struct Key<'a>(&'a str, &'a str, &'a str, f64, u32);
    let key = serde_json::to_vec(&Key(
        &req.model,
        &req.system_text,
        &req.user_text,
        req.temperature,
        req.sample_index,
    ))
    .expect("key serializes");
    hex::encode(Sha256::digest(&key))
}

#[derive(Serialize, Deserialize)]
struct Record {
    digest: String,
    response: ChatResponse,
}

/// Digest-keyed response store, optionally persisted as an append-only
/// JSON-lines file so interrupted runs can resume.
pub struct ResponseCache {
    map: Mutex<HashMap<String, ChatResponse>>,
    file: Option<(PathBuf, Mutex<File>)>,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        ResponseCache {
            map: Mutex::new(HashMap::new()),
            file: None,
        }
    }

    /// Opens (or creates) a cache file and loads its records. A truncated
    /// final line, left by an interrupted write, is ignored.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, LlmError> {
        let path = path.as_ref().to_path_buf();
        let err = |message: String| LlmError::Storage {
            path: path.display().to_string(),
            message,
        };
        let mut map = HashMap::new();
        // Byte length of the well-formed prefix of the file.
        let mut keep = 0u64;
        let mut needs_newline = false;
        if path.exists() {
            let text = fs::read_to_string(&path).map_err(|e| err(e.to_string()))?;
            let lines: Vec<&str> = text.split_inclusive('\n').collect();
            for (i, line) in lines.iter().enumerate() {
                if !line.trim().is_empty() {
                    match serde_json::from_str::<Record>(line) {
                        Ok(r) => {
                            map.insert(r.digest, r.response);
                        }
                        Err(e) if i + 1 == lines.len() => {
                            log::warn!("{}: dropping truncated last record: {e}", path.display());
                            break;
                        }
                        Err(e) => return Err(err(format!("line {}: {e}", i + 1))),
                    }
                }
                keep += line.len() as u64;
                needs_newline = !line.ends_with('\n');
            }
        }
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| err(e.to_string()))?;
        if file.metadata().map_err(|e| err(e.to_string()))?.len() != keep {
            file.set_len(keep).map_err(|e| err(e.to_string()))?;
        }
        if needs_newline {
            file.write_all(b"\n").map_err(|e| err(e.to_string()))?;
        }
        Ok(ResponseCache {
            map: Mutex::new(map),
            file: Some((path, Mutex::new(file))),
        })
    }

    pub fn get(&self, digest: &str) -> Option<ChatResponse> {
        self.map.lock().unwrap().get(digest).cloned()
    }

    /// Stores a response. The first response stored under a digest wins.
    pub fn insert(&self, digest: &str, response: &ChatResponse) -> Result<(), LlmError> {
        let mut map = self.map.lock().unwrap();
        if map.contains_key(digest) {
            return Ok(());
        }
        if let Some((path, file)) = &self.file {
            let mut line = serde_json::to_string(&Record {
                digest: digest.to_string(),
                response: response.clone(),
            })
            .expect("record serializes");
            line.push('\n');
            let mut f = file.lock().unwrap();
            f.write_all(line.as_bytes())
                .and_then(|_| f.flush())
                .map_err(|e| LlmError::Storage {
                    path: path.display().to_string(),
                    message: e.to_string(),
                })?;
        }
        map.insert(digest.to_string(), response.clone());
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.map.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::Stage;

    fn req(sample_index: u32) -> ChatRequest {
        ChatRequest {
            model: "gpt-4".into(),
            system_text: "sys".into(),
            user_text: "Query concept: a".into(),
            temperature: 0.7,
            sample_index,
            stage: Stage::Stage1,
        }
    }

    #[test]
    fn digest_depends_on_sample_index_not_stage() {
        let a = req(0);
        let mut b = req(0);
        b.stage = Stage::Stage2;
        assert_eq!(request_digest(&a), request_digest(&b));
        assert_ne!(request_digest(&a), request_digest(&req(1)));
        let mut c = req(0);
        c.temperature = 0.0;
        assert_ne!(request_digest(&a), request_digest(&c));
    }

    #[test]
    fn persists_and_reloads() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let resp = ChatResponse {
            text: "Answer: yes\n".into(),
            prompt_tokens: 12,
            completion_tokens: 3,
        };
        {
            let cache = ResponseCache::open(&path).unwrap();
            cache.insert("abc", &resp).unwrap();
            cache
                .insert(
                    "abc",
                    &ChatResponse {
                        text: "other".into(),
                        ..resp.clone()
                    },
                )
                .unwrap();
        }
        let cache = ResponseCache::open(&path).unwrap();
        assert_eq!(cache.len(), 1);
        assert_eq!(cache.get("abc").unwrap(), resp);
    }

    #[test]
    fn tolerates_truncated_tail_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let good = r#"{"digest":"d1","response":{"text":"x","prompt_tokens":1,"completion_tokens":1}}"#;
        std::fs::write(&path, format!("{good}\n{{\"digest\":\"d2\",\"resp")).unwrap();
        let cache = ResponseCache::open(&path).unwrap();
        assert_eq!(cache.len(), 1);
        let resp = ChatResponse {
            text: "y".into(),
            prompt_tokens: 2,
            completion_tokens: 2,
        };
        cache.insert("d3", &resp).unwrap();
        drop(cache);
        let cache = ResponseCache::open(&path).unwrap();
        assert_eq!(cache.len(), 2);
        assert_eq!(cache.get("d3").unwrap(), resp);

        std::fs::write(&path, format!("garbage\n{good}\n")).unwrap();
        assert!(ResponseCache::open(&path).is_err());
    }
}
