use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnvelopeKind {
    /// Client asks to join `session` as `from`. The payload is free text.
    Join,
    /// Server reply to a join; payload is the roster as JSON.
    Joined,
    /// A member arrived; payload is the member as JSON, `from` its id.
    PeerJoined,
    /// A member left or was disconnected; `from` is its id.
    PeerLeft,
    /// Opaque descriptor from one member to another (or to all when `to` is null).
    Relay,
    Error,
    /// Client leaves its session and keeps the channel open.
    Leave,
    /// Keeps an otherwise quiet channel from hitting the inactivity timeout.
    Ping,
}

/// One line of the signaling protocol.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Envelope {
    pub kind: EnvelopeKind,
    #[serde(default)]
    pub session: String,
    #[serde(default)]
    pub from: Option<String>,
    #[serde(default)]
    pub to: Option<String>,
    #[serde(default)]
    pub payload: String,
}

impl Envelope {
    pub fn new(kind: EnvelopeKind, session: impl Into<String>) -> Self {
        Self {
            kind,
            session: session.into(),
            from: None,
            to: None,
            payload: String::new(),
        }
    }

    pub fn join(session: &str, client_id: &str) -> Self {
        Self::new(EnvelopeKind::Join, session).from(client_id)
    }

    pub fn relay(session: &str, from: &str, to: &str, payload: impl Into<String>) -> Self {
        Self::new(EnvelopeKind::Relay, session)
            .from(from)
            .to(to)
            .payload(payload)
    }

    pub fn error(session: &str, to: Option<&str>, message: impl Into<String>) -> Self {
        let mut e = Self::new(EnvelopeKind::Error, session).payload(message);
        e.to = to.map(str::to_string);
        e
    }

    pub fn from(mut self, id: &str) -> Self {
        self.from = Some(id.to_string());
        self
    }

    pub fn to(mut self, id: &str) -> Self {
        self.to = Some(id.to_string());
        self
    }

    pub fn payload(mut self, payload: impl Into<String>) -> Self {
        self.payload = payload.into();
        self
    }

    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("envelope serializes");
        s.push('\n');
        s
    }

    pub fn parse(line: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(line.trim_end_matches(['\r', '\n']))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Member {
    pub client_id: String,
    /// Source address of the member's signaling channel as seen by the server.
    pub observed_addr: String,
    pub joined_at_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionRoster {
    pub session_id: String,
    /// Sorted by client id.
    pub members: Vec<Member>,
}

impl SessionRoster {
    pub fn empty(session_id: &str) -> Self {
        Self {
            session_id: session_id.to_string(),
            members: Vec::new(),
        }
    }

    pub fn contains(&self, client_id: &str) -> bool {
        self.members.iter().any(|m| m.client_id == client_id)
    }

    pub fn get(&self, client_id: &str) -> Option<&Member> {
        self.members.iter().find(|m| m.client_id == client_id)
    }

    pub fn ids(&self) -> Vec<&str> {
        self.members.iter().map(|m| m.client_id.as_str()).collect()
    }

    /// Applies a server envelope to a client-side copy of the roster.
    /// Returns false for envelopes that do not affect the roster.
    pub fn apply(&mut self, env: &Envelope) -> bool {
        match env.kind {
            EnvelopeKind::Joined => match serde_json::from_str::<SessionRoster>(&env.payload) {
                Ok(r) => {
                    *self = r;
                    true
                }
                Err(_) => false,
            },
            EnvelopeKind::PeerJoined => match serde_json::from_str::<Member>(&env.payload) {
                Ok(m) => {
                    self.members.retain(|x| x.client_id != m.client_id);
                    self.members.push(m);
                    self.members.sort();
                    true
                }
                Err(_) => false,
            },
            EnvelopeKind::PeerLeft => {
                let Some(id) = &env.from else { return false };
                self.members.retain(|m| &m.client_id != id);
                true
            }
            _ => false,
        }
    }
}
