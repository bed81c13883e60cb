//! Session state. Every roster mutation and every delivery for a session
//! happens under that session's lock, so envelopes reach each outbox in the
//! order the mutations were serialized.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use parking_lot::Mutex;
use thiserror::Error;
use tokio::sync::mpsc::UnboundedSender;

use crate::envelope::{Envelope, EnvelopeKind, Member, SessionRoster};

pub const DEFAULT_CAPACITY: usize = 16;

pub type Outbox = UnboundedSender<Envelope>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SignalError {
    #[error("client id must be nonempty")]
    EmptyClientId,
    #[error("client id `{0}` is already active in this session")]
    DuplicateClientId(String),
    #[error("`{0}` is not in the roster")]
    UnknownPeer(String),
    #[error("sender is not a member of the session")]
    NotJoined,
    #[error("session is full ({0} members)")]
    SessionFull(usize),
    #[error("relay envelopes need nonempty from and to")]
    MissingEndpoint,
}

/// Identifies one particular join, so a stale channel cannot evict a client
/// that has since rejoined under the same id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MemberToken(u64);

struct Slot {
    member: Member,
    outbox: Outbox,
    token: MemberToken,
}

#[derive(Default)]
struct Session {
    members: BTreeMap<String, Slot>,
}

impl Session {
    fn roster(&self, id: &str) -> SessionRoster {
        SessionRoster {
            session_id: id.to_string(),
            members: self.members.values().map(|s| s.member.clone()).collect(),
        }
    }

    fn broadcast_except(&self, except: &str, env: &Envelope) {
        for (id, slot) in &self.members {
            if id != except {
                // A closed outbox means the reader has gone; its own
                // disconnect will clean up the slot.
                let _ = slot.outbox.send(env.clone());
            }
        }
    }
}

pub struct Registry {
    capacity: usize,
    sessions: Mutex<HashMap<String, Arc<Mutex<Session>>>>,
    next_token: AtomicU64,
}

impl Default for Registry {
    fn default() -> Self {
        Self::new(DEFAULT_CAPACITY)
    }
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

impl Registry {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            sessions: Mutex::new(HashMap::new()),
            next_token: AtomicU64::new(1),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    fn session(&self, id: &str) -> Option<Arc<Mutex<Session>>> {
        self.sessions.lock().get(id).cloned()
    }

    /// Adds `client_id` and queues a `joined` envelope carrying the roster on
    /// the caller's own outbox before any later roster change can be queued.
    pub fn join(
        &self,
        session_id: &str,
        client_id: &str,
        observed_addr: &str,
        outbox: Outbox,
    ) -> Result<(SessionRoster, MemberToken), SignalError> {
        if client_id.is_empty() {
            return Err(SignalError::EmptyClientId);
        }
        // The map lock is held across the whole join so a concurrent leave
        // cannot retire the session in between.
        let mut sessions = self.sessions.lock();
        let session = sessions.entry(session_id.to_string()).or_default().clone();
        let mut s = session.lock();
        if s.members.contains_key(client_id) {
            return Err(SignalError::DuplicateClientId(client_id.to_string()));
        }
        if s.members.len() >= self.capacity {
            return Err(SignalError::SessionFull(self.capacity));
        }
        let member = Member {
            client_id: client_id.to_string(),
            observed_addr: observed_addr.to_string(),
            joined_at_ms: now_ms(),
        };
        let token = MemberToken(self.next_token.fetch_add(1, Ordering::Relaxed));
        let announce = Envelope::new(EnvelopeKind::PeerJoined, session_id)
            .from(client_id)
            .payload(serde_json::to_string(&member).expect("member serializes"));
        s.broadcast_except(client_id, &announce);
        s.members.insert(
            client_id.to_string(),
            Slot {
                member,
                outbox: outbox.clone(),
                token,
            },
        );
        let roster = s.roster(session_id);
        let joined = Envelope::new(EnvelopeKind::Joined, session_id)
            .to(client_id)
            .payload(serde_json::to_string(&roster).expect("roster serializes"));
        let _ = outbox.send(joined);
        drop(s);
        drop(sessions);
        Ok((roster, token))
    }

    pub fn leave(&self, session_id: &str, client_id: &str) -> Result<SessionRoster, SignalError> {
        self.remove(session_id, client_id, None)
    }

    /// Removes the member only if it still belongs to the join identified by
    /// `token`. Used when a channel closes or times out.
    pub fn disconnect(
        &self,
        session_id: &str,
        client_id: &str,
        token: MemberToken,
    ) -> Result<SessionRoster, SignalError> {
        self.remove(session_id, client_id, Some(token))
    }

    fn remove(
        &self,
        session_id: &str,
        client_id: &str,
        token: Option<MemberToken>,
    ) -> Result<SessionRoster, SignalError> {
        let mut sessions = self.sessions.lock();
        let Some(session) = sessions.get(session_id).cloned() else {
            return Err(SignalError::NotJoined);
        };
        let mut s = session.lock();
        match s.members.get(client_id) {
            Some(slot) if token.is_none_or(|t| t == slot.token) => {}
            _ => return Err(SignalError::NotJoined),
        }
        s.members.remove(client_id);
        let left = Envelope::new(EnvelopeKind::PeerLeft, session_id).from(client_id);
        s.broadcast_except(client_id, &left);
        let roster = s.roster(session_id);
        if s.members.is_empty() {
            sessions.remove(session_id);
        }
        Ok(roster)
    }

    /// Delivers a relay envelope unchanged. `to: None` fans out to every
    /// other member. Returns the number of recipients.
    pub fn relay(&self, env: &Envelope) -> Result<usize, SignalError> {
        let from = env.from.as_deref().unwrap_or("");
        if from.is_empty() || env.to.as_deref() == Some("") {
            return Err(SignalError::MissingEndpoint);
        }
        let session = self.session(&env.session).ok_or(SignalError::NotJoined)?;
        let s = session.lock();
        if !s.members.contains_key(from) {
            return Err(SignalError::NotJoined);
        }
        let mut out = env.clone();
        out.kind = EnvelopeKind::Relay;
        match env.to.as_deref() {
            Some(to) => {
                let slot = s
                    .members
                    .get(to)
                    .ok_or_else(|| SignalError::UnknownPeer(to.to_string()))?;
                let _ = slot.outbox.send(out);
                Ok(1)
            }
            None => {
                s.broadcast_except(from, &out);
                Ok(s.members.len() - 1)
            }
        }
    }

    pub fn roster(&self, session_id: &str) -> SessionRoster {
        match self.session(session_id) {
            Some(s) => s.lock().roster(session_id),
            None => SessionRoster::empty(session_id),
        }
    }

    pub fn session_count(&self) -> usize {
        self.sessions.lock().len()
    }
}
