use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::store::{append_jsonl, StoreError};

pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurnRole {
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueTurn {
    pub role: TurnRole,
    pub text: String,
    pub timestamp: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context_digest: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub turns: Vec<DialogueTurn>,
    pub max_history_turns: usize,
    pub created_at: u64,
}

impl Session {
    pub fn new(id: impl Into<String>, max_history_turns: usize) -> Self {
        Session {
            id: id.into(),
            turns: Vec::new(),
            max_history_turns,
            created_at: now_ms(),
        }
    }

    /// The last `max_history_turns` turns.
    pub fn history(&self) -> &[DialogueTurn] {
        let start = self.turns.len().saturating_sub(self.max_history_turns);
        &self.turns[start..]
    }

    /// Appends a user turn and its reply, keeping the alternation.
    pub fn push_exchange(&mut self, question: &str, reply: &str, context_digest: Option<String>) -> [DialogueTurn; 2] {
        let ts = now_ms();
        let pair = [
            DialogueTurn {
                role: TurnRole::User,
                text: question.to_string(),
                timestamp: ts,
                context_digest: None,
            },
            DialogueTurn {
                role: TurnRole::Assistant,
                text: reply.to_string(),
                timestamp: ts,
                context_digest,
            },
        ];
        self.turns.extend(pair.iter().cloned());
        pair
    }

    pub fn alternates(&self) -> bool {
        self.turns.iter().enumerate().all(|(i, t)| {
            t.role == if i % 2 == 0 { TurnRole::User } else { TurnRole::Assistant }
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum SessionEvent {
    Created {
        id: String,
        created_at: u64,
        max_history_turns: usize,
    },
    Turn {
        turn: DialogueTurn,
    },
}

pub type SessionHandle = Arc<Mutex<Session>>;

/// Live sessions with one mutex each, so that calls within a session are
/// serialized while distinct sessions proceed independently. With a
/// directory every session is also an append-only JSONL event log.
#[derive(Debug, Default)]
pub struct SessionStore {
    dir: Option<PathBuf>,
    live: Mutex<HashMap<String, SessionHandle>>,
}

impl SessionStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn persistent(dir: impl Into<PathBuf>) -> Self {
        SessionStore {
            dir: Some(dir.into()),
            live: Mutex::default(),
        }
    }

    fn log_path(&self, id: &str) -> Option<PathBuf> {
        let safe = !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
        match &self.dir {
            Some(d) if safe => Some(d.join(format!("{id}.jsonl"))),
            _ => None,
        }
    }

    pub fn create(&self, max_history_turns: usize) -> Result<SessionHandle, StoreError> {
        let session = Session::new(uuid::Uuid::new_v4().to_string(), max_history_turns);
        if let Some(path) = self.log_path(&session.id) {
            append_jsonl(
                &path,
                &SessionEvent::Created {
                    id: session.id.clone(),
                    created_at: session.created_at,
                    max_history_turns,
                },
            )?;
        }
        let id = session.id.clone();
        let handle = Arc::new(Mutex::new(session));
        self.live.lock().unwrap().insert(id, handle.clone());
        Ok(handle)
    }

    pub fn get(&self, id: &str) -> Result<Option<SessionHandle>, StoreError> {
        let mut live = self.live.lock().unwrap();
        if let Some(h) = live.get(id) {
            return Ok(Some(h.clone()));
        }
        let Some(path) = self.log_path(id) else { return Ok(None) };
        if !path.exists() {
            return Ok(None);
        }
        let session = replay(&path)?;
        let handle = Arc::new(Mutex::new(session));
        live.insert(id.to_string(), handle.clone());
        Ok(Some(handle))
    }

    pub fn record(&self, session_id: &str, turns: &[DialogueTurn]) -> Result<(), StoreError> {
        if let Some(path) = self.log_path(session_id) {
            for t in turns {
                append_jsonl(&path, &SessionEvent::Turn { turn: t.clone() })?;
            }
        }
        Ok(())
    }
}

fn replay(path: &Path) -> Result<Session, StoreError> {
    let text = std::fs::read_to_string(path).map_err(|e| StoreError::io(path, e))?;
    let mut session: Option<Session> = None;
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let event: SessionEvent = serde_json::from_str(line)
            .map_err(|e| StoreError::Format {
            path: path.to_path_buf(),
            message: format!("line {}: {e}", n + 1),
        })?;
        match (event, session.as_mut()) {
            (SessionEvent::Created { id, created_at, max_history_turns }, None) => {
                session = Some(Session {
                    id,
                    turns: Vec::new(),
                    max_history_turns,
                    created_at,
                })
            }
            (SessionEvent::Turn { turn }, Some(s)) => s.turns.push(turn),
            _ => {
                return Err(StoreError::Format {
                    path: path.to_path_buf(),
                    message: format!("line {}: unexpected event", n + 1),
                })
            },
        }
    }
    session.ok_or_else(|| StoreError::Format {
        path: path.to_path_buf(),
        message: "empty session log".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn history_window_and_alternation() {
        let mut s = Session::new("s", 3);
        for i in 0..3 {
            s.push_exchange(&format!("q{i}"), &format!("a{i}"), None);
        }
        assert!(s.alternates());
        let h: Vec<&str> = s.history().iter().map(|t| t.text.as_str()).collect();
        assert_eq!(h, ["a1", "q2", "a2"]);
    }

    #[test]
    fn store_replays_log() {
        let dir = tempfile::tempdir().unwrap();
        let store = SessionStore::persistent(dir.path());
        let h = store.create(6).unwrap();
        let id = {
            let mut s = h.lock().unwrap();
            let turns = s.push_exchange("what is x", "x is y", Some("abc".into()));
            store.record(&s.id, &turns).unwrap();
            s.id.clone()
        };
        let fresh = SessionStore::persistent(dir.path());
        let loaded = fresh.get(&id).unwrap().unwrap();
        assert_eq!(*loaded.lock().unwrap(), *h.lock().unwrap());
        assert!(fresh.get("missing").unwrap().is_none());
        assert!(fresh.get("../etc").unwrap().is_none());
    }
}
