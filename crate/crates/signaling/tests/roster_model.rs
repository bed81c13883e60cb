//! Random join/leave/disconnect interleavings for up to six clients. Once
//! the server is quiescent, every joined client's local roster must equal the
//! server roster, and the roster must equal joins minus leaves minus
//! disconnects.

use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::{Duration, Instant};

use meshmeter_signaling::{
    start, Envelope, EnvelopeKind, ServerConfig, SessionRoster, SignalWriter, SignalingClient,
};
use parking_lot::Mutex;
use proptest::prelude::*;
use tokio::task::JoinHandle;

const SESSION: &str = "model";

#[derive(Debug, Clone, Copy)]
enum Op {
    Join(usize),
    Leave(usize),
    Disconnect(usize),
}

fn op() -> impl Strategy<Value = Op> {
    (0..3u8, 0..6usize).prop_map(|(k, i)| match k {
        0 => Op::Join(i),
        1 => Op::Leave(i),
        _ => Op::Disconnect(i),
    })
}

struct Conn {
    writer: SignalWriter,
    roster: Arc<Mutex<SessionRoster>>,
    reader: JoinHandle<()>,
    joined: bool,
}

async fn connect(url: &str) -> Conn {
    let client = SignalingClient::connect(url).await.unwrap();
    let (writer, mut reader) = client.into_split();
    let roster = Arc::new(Mutex::new(SessionRoster::empty(SESSION)));
    let shared = roster.clone();
    let reader = tokio::spawn(async move {
        while let Ok(Some(env)) = reader.recv().await {
            shared.lock().apply(&env);
        }
    });
    Conn {
        writer,
        roster,
        reader,
        joined: false,
    }
}

fn id(i: usize) -> String {
    format!("c{i}")
}

async fn wait_until(mut cond: impl FnMut() -> bool) -> bool {
    let deadline = Instant::now() + Duration::from_secs(5);
    while Instant::now() < deadline {
        if cond() {
            return true;
        }
        tokio::time::sleep(Duration::from_millis(5)).await;
    }
    cond()
}

async fn run(ops: Vec<Op>) -> Result<(), String> {
    let srv = start("127.0.0.1:0", ServerConfig::default()).await.unwrap();
    let url = srv.addr.to_string();
    let mut conns: Vec<Option<Conn>> = (0..6).map(|_| None).collect();
    let mut expected: BTreeSet<String> = BTreeSet::new();

    for op in ops {
        match op {
            Op::Join(i) => {
                if conns[i].as_ref().is_some_and(|c| c.joined) {
                    continue;
                }
                if conns[i].is_none() {
                    // A previous channel for this id may still be closing.
                    let reg = srv.registry.clone();
                    let name = id(i);
                    if !wait_until(|| !reg.roster(SESSION).contains(&name)).await {
                        return Err(format!("{name} never left after disconnect"));
                    }
                    conns[i] = Some(connect(&url).await);
                }
                let c = conns[i].as_mut().unwrap();
                c.writer
                    .send(&Envelope::join(SESSION, &id(i)))
                    .await
                    .unwrap();
                c.joined = true;
                expected.insert(id(i));
            }
            Op::Leave(i) => {
                if let Some(c) = conns[i].as_mut().filter(|c| c.joined) {
                    c.writer
                        .send(&Envelope::new(EnvelopeKind::Leave, SESSION).from(&id(i)))
                        .await
                        .unwrap();
                    c.joined = false;
                    expected.remove(&id(i));
                }
            }
            Op::Disconnect(i) => {
                if let Some(c) = conns[i].take() {
                    c.reader.abort();
                    drop(c.writer);
                    expected.remove(&id(i));
                }
            }
        }
    }

    let reg = srv.registry.clone();
    let converged = wait_until(|| {
        let server = reg.roster(SESSION);
        let ids: BTreeSet<String> = server.members.iter().map(|m| m.client_id.clone()).collect();
        ids == expected
            && conns
                .iter()
                .flatten()
                .filter(|c| c.joined)
                .all(|c| *c.roster.lock() == server)
    })
    .await;
    if converged {
        Ok(())
    } else {
        let server = reg.roster(SESSION);
        let locals: Vec<Vec<String>> = conns
            .iter()
            .flatten()
            .filter(|c| c.joined)
            .map(|c| {
                c.roster
                    .lock()
                    .ids()
                    .iter()
                    .map(|s| s.to_string())
                    .collect()
            })
            .collect();
        Err(format!(
            "server {:?}, expected {expected:?}, locals {locals:?}",
            server.ids()
        ))
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, ..ProptestConfig::default() })]

    #[test]
    fn rosters_converge(ops in prop::collection::vec(op(), 1..40)) {
        let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();
        let outcome = rt.block_on(run(ops));
        prop_assert!(outcome.is_ok(), "{}", outcome.unwrap_err());
    }
}
