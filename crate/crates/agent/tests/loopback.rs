//! Agents over real loopback sockets against a live signaling server and
//! collector.

use std::collections::BTreeSet;
use std::path::Path;
use std::time::Duration;

use axum::routing::get;
use axum::Router;
use meshmeter_agent::lookup::{STUB_IP, STUB_ISP};
use meshmeter_agent::{
    run_agent, AgentConfig, AgentError, FailReason, IpLookupMode, LinkState, RunOptions,
    SharedNetwork,
};
use meshmeter_collector::{CollectorHandle, ExportFilter, StoreOptions};
use meshmeter_core::linklab::LinkSpec;
use meshmeter_signaling::{ServerConfig, ServerHandle};
use tempfile::TempDir;
use tokio::sync::watch;

struct Services {
    signaling: ServerHandle,
    collector: CollectorHandle,
    _dir: TempDir,
}

async fn services() -> Services {
    let dir = tempfile::tempdir().unwrap();
    let signaling = meshmeter_signaling::start("127.0.0.1:0", ServerConfig::default())
        .await
        .unwrap();
    let collector =
        meshmeter_collector::start("127.0.0.1:0", dir.path(), StoreOptions::default(), None)
            .await
            .unwrap();
    Services {
        signaling,
        collector,
        _dir: dir,
    }
}

fn config(
    sig: &ServerHandle,
    collector_url: &str,
    session: &str,
    id: &str,
    secs: u64,
) -> AgentConfig {
    let mut cfg = AgentConfig::new(&format!("tcp://{}", sig.addr), session, id, collector_url);
    cfg.duration_s = Some(secs);
    cfg
}

fn loopback() -> RunOptions {
    RunOptions {
        udp_bind: "127.0.0.1:0".parse().unwrap(),
        ..RunOptions::default()
    }
}

fn stoppable(opts: RunOptions, stop: &watch::Sender<bool>) -> RunOptions {
    RunOptions {
        shutdown: Some(stop.subscribe()),
        ..opts
    }
}

fn line_count(path: &Path) -> usize {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty())
        .count()
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn three_agents_form_a_mesh_and_report_every_pair() {
    let svc = services().await;
    let logs = tempfile::tempdir().unwrap();
    let (stop, _) = watch::channel(false);
    let mut tasks = Vec::new();
    for id in ["alpha", "bravo", "charlie"] {
        let mut cfg = config(&svc.signaling, &svc.collector.url(), "mesh", id, 60);
        cfg.log_path = Some(logs.path().join(format!("{id}.ndjson")));
        tasks.push(tokio::spawn(run_agent(cfg, stoppable(loopback(), &stop))));
        tokio::time::sleep(Duration::from_millis(100)).await;
    }
    tokio::time::sleep(Duration::from_secs(5)).await;
    stop.send(true).unwrap();
    for t in tasks {
        let s = t.await.unwrap().unwrap();
        assert_eq!(s.links.len(), 2, "{}: {:?}", s.client_id, s.links);
        assert!(
            s.links.iter().all(|l| l.state == LinkState::Established),
            "{:?}",
            s.links
        );
        assert!(s.records_emitted > 0);
        assert_eq!(s.reporter.posted, s.records_emitted);
        assert_eq!(s.reporter.pending, 0);
        let log = logs.path().join(format!("{}.ndjson", s.client_id));
        assert_eq!(line_count(&log) as u64, s.reporter.posted);
    }
    let stored = svc
        .collector
        .store
        .export(&ExportFilter::default())
        .unwrap();
    let pairs: BTreeSet<(String, String)> = stored
        .iter()
        .map(|e| (e.record.your_id.clone(), e.record.peer_id.clone()))
        .collect();
    assert_eq!(pairs.len(), 6, "{pairs:?}");
    for e in &stored {
        assert_eq!(e.record.your_ip, STUB_IP);
        assert_eq!(e.record.your_isp, STUB_ISP);
        assert!(e.record.candidate_pair_rtt >= 0.0 && e.record.candidate_pair_rtt < 50.0);
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn blackholed_link_fails_while_the_rest_measure() {
    let svc = services().await;
    let net = SharedNetwork::new(LinkSpec::constant(0.0));
    // One link carries both directions, and loss applies to each.
    net.set_link("a", "c", LinkSpec::blackhole());
    let (stop, _) = watch::channel(false);
    let mut tasks = Vec::new();
    for id in ["a", "b", "c"] {
        let cfg = config(&svc.signaling, &svc.collector.url(), "holes", id, 60);
        let opts = RunOptions {
            network: Some(net.clone()),
            ..loopback()
        };
        tasks.push(tokio::spawn(run_agent(cfg, stoppable(opts, &stop))));
        tokio::time::sleep(Duration::from_millis(100)).await;
    }
    tokio::time::sleep(Duration::from_secs(12)).await;
    stop.send(true).unwrap();
    let mut summaries = Vec::new();
    for t in tasks {
        summaries.push(t.await.unwrap().unwrap());
    }
    let state = |id: &str, peer: &str| {
        let s = summaries.iter().find(|s| s.client_id == id).unwrap();
        s.links.iter().find(|l| l.peer_id == peer).unwrap().state
    };
    assert_eq!(
        state("a", "c"),
        LinkState::Failed(FailReason::HandshakeTimeout)
    );
    assert_eq!(
        state("c", "a"),
        LinkState::Failed(FailReason::HandshakeTimeout)
    );
    for (x, y) in [("a", "b"), ("b", "a"), ("b", "c"), ("c", "b")] {
        assert_eq!(state(x, y), LinkState::Established, "{x}->{y}");
    }
    let stored = svc
        .collector
        .store
        .export(&ExportFilter::default())
        .unwrap();
    assert!(stored.iter().all(|e| !matches!(
        (e.record.your_id.as_str(), e.record.peer_id.as_str()),
        ("a", "c") | ("c", "a")
    )));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn sole_joiner_with_unreachable_peer_reports_all_failed() {
    let svc = services().await;
    let net = SharedNetwork::new(LinkSpec::blackhole());
    let opts = || RunOptions {
        network: Some(net.clone()),
        ..loopback()
    };
    let first = tokio::spawn(run_agent(
        config(&svc.signaling, &svc.collector.url(), "lonely", "first", 13),
        opts(),
    ));
    tokio::time::sleep(Duration::from_millis(200)).await;
    let second = run_agent(
        config(&svc.signaling, &svc.collector.url(), "lonely", "second", 30),
        opts(),
    )
    .await;
    assert!(
        matches!(second, Err(AgentError::AllPeersFailed(1))),
        "{second:?}"
    );
    // The first agent had nobody to reach when it joined, so it just runs out its time.
    let first = first.await.unwrap().unwrap();
    assert_eq!(first.records_emitted, 0);
}

#[tokio::test]
async fn alone_in_a_session_runs_quietly() {
    let svc = services().await;
    let s = run_agent(
        config(&svc.signaling, &svc.collector.url(), "solo", "only", 1),
        loopback(),
    )
    .await
    .unwrap();
    assert!(s.links.is_empty());
    assert_eq!(s.records_emitted, 0);
    assert!(svc.collector.store.is_empty());
}

#[tokio::test]
async fn duplicate_id_is_rejected_at_join() {
    let svc = services().await;
    let url = svc.collector.url();
    let first = tokio::spawn(run_agent(
        config(&svc.signaling, &url, "dup", "same", 2),
        loopback(),
    ));
    tokio::time::sleep(Duration::from_millis(200)).await;
    let second = run_agent(config(&svc.signaling, &url, "dup", "same", 2), loopback()).await;
    match second {
        Err(AgentError::JoinRejected(msg)) => {
            assert!(msg.starts_with("DuplicateClientId"), "{msg}")
        }
        other => panic!("{other:?}"),
    }
    first.await.unwrap().unwrap();
}

#[tokio::test]
async fn unreachable_signaling_is_reported() {
    let port = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let cfg = AgentConfig::new(
        &format!("tcp://127.0.0.1:{port}"),
        "s",
        "x",
        "http://127.0.0.1:9",
    );
    let r = run_agent(cfg, loopback()).await;
    assert!(
        matches!(r, Err(AgentError::SignalingUnreachable(_))),
        "{r:?}"
    );
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn live_lookup_fills_ip_and_isp() {
    let svc = services().await;
    let app = Router::new().route(
        "/json",
        get(|| async { r#"{"ip":"198.51.100.4","org":"AS64500 Testing Co"}"# }),
    );
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let lookup_url = format!("http://{}/json", listener.local_addr().unwrap());
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });

    let mut tasks = Vec::new();
    for id in ["p", "q"] {
        let mut cfg = config(&svc.signaling, &svc.collector.url(), "lookup", id, 3);
        cfg.ip_lookup = IpLookupMode::Live;
        cfg.lookup_url = lookup_url.clone();
        tasks.push(tokio::spawn(run_agent(cfg, loopback())));
    }
    for t in tasks {
        let s = t.await.unwrap().unwrap();
        assert_eq!(s.self_info.ip, "198.51.100.4");
    }
    let stored = svc
        .collector
        .store
        .export(&ExportFilter::default())
        .unwrap();
    assert!(!stored.is_empty());
    for e in stored {
        assert_eq!(e.record.your_ip, "198.51.100.4");
        assert_eq!(e.record.your_isp, "AS64500 Testing Co");
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn records_queued_during_collector_outage_are_delivered() {
    let dir = tempfile::tempdir().unwrap();
    let signaling = meshmeter_signaling::start("127.0.0.1:0", ServerConfig::default())
        .await
        .unwrap();
    let port = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let collector_url = format!("http://127.0.0.1:{port}");

    let mut tasks = Vec::new();
    for id in ["u", "v"] {
        tasks.push(tokio::spawn(run_agent(
            config(&signaling, &collector_url, "outage", id, 5),
            loopback(),
        )));
    }
    tokio::time::sleep(Duration::from_secs(3)).await;
    let collector = meshmeter_collector::start(
        &format!("127.0.0.1:{port}"),
        dir.path(),
        StoreOptions::default(),
        None,
    )
    .await
    .unwrap();
    let mut emitted = 0;
    for t in tasks {
        let s = t.await.unwrap().unwrap();
        assert!(s.records_emitted > 0);
        assert_eq!(s.reporter.posted, s.records_emitted, "{:?}", s.reporter);
        assert_eq!(s.reporter.dropped, 0);
        emitted += s.records_emitted;
    }
    assert_eq!(collector.store.len() as u64, emitted);
}
