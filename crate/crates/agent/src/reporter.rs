//! Hands records to the collector. Every record is appended to the local
//! log first; posts that fail for want of a collector stay queued and are
//! retried, oldest first, up to a bounded backlog.

use std::collections::VecDeque;
use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::Path;
use std::time::Duration;

use meshmeter_collector::{CollectorClient, PostError};
use meshmeter_core::MeasurementRecord;
use serde::Serialize;
use tokio::sync::mpsc::UnboundedReceiver;
use tokio::task::JoinHandle;
use tracing::warn;

pub const MAX_BACKLOG: usize = 10_000;
const RETRY_EVERY: Duration = Duration::from_secs(1);

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ReporterStats {
    pub logged: u64,
    pub posted: u64,
    /// Refused by the collector as invalid; never retried.
    pub rejected: u64,
    /// Evicted from a full backlog.
    pub dropped: u64,
    pub pending: u64,
}

pub struct Reporter {
    client: CollectorClient,
    log: Option<File>,
    queue: VecDeque<MeasurementRecord>,
    capacity: usize,
    stats: ReporterStats,
}

impl Reporter {
    pub fn new(
        client: CollectorClient,
        log_path: Option<&Path>,
        capacity: usize,
    ) -> io::Result<Self> {
        let log = match log_path {
            Some(p) => Some(OpenOptions::new().create(true).append(true).open(p)?),
            None => None,
        };
        Ok(Self {
            client,
            log,
            queue: VecDeque::new(),
            capacity: capacity.max(1),
            stats: ReporterStats::default(),
        })
    }

    pub fn stats(&self) -> ReporterStats {
        ReporterStats {
            pending: self.queue.len() as u64,
            ..self.stats
        }
    }

    pub fn enqueue(&mut self, record: MeasurementRecord) -> io::Result<()> {
        if let Some(log) = &mut self.log {
            let mut line = record.to_json_line();
            line.push('\n');
            log.write_all(line.as_bytes())?;
        }
        self.stats.logged += 1;
        self.queue.push_back(record);
        if self.queue.len() > self.capacity {
            self.queue.pop_front();
            self.stats.dropped += 1;
        }
        Ok(())
    }

    /// Posts queued records in order. Returns false when the collector is
    /// unreachable and records remain queued.
    pub async fn flush(&mut self) -> bool {
        while let Some(front) = self.queue.front() {
            match self.client.post_record(front).await {
                Ok(_) => self.stats.posted += 1,
                Err(PostError::Rejected { status, body }) => {
                    warn!(status, %body, "collector rejected a record");
                    self.stats.rejected += 1;
                }
                Err(PostError::Unavailable(e)) => {
                    warn!(pending = self.queue.len(), "collector unavailable: {e}");
                    return false;
                }
            }
            self.queue.pop_front();
        }
        true
    }
}

/// Runs the reporter until the sender side closes, then keeps retrying the
/// backlog for at most `drain_for`.
pub fn spawn_reporter(
    mut reporter: Reporter,
    mut records: UnboundedReceiver<MeasurementRecord>,
    drain_for: Duration,
) -> JoinHandle<ReporterStats> {
    tokio::spawn(async move {
        let mut retry = tokio::time::interval(RETRY_EVERY);
        retry.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
        loop {
            tokio::select! {
                rec = records.recv() => {
                    let Some(rec) = rec else { break };
                    if let Err(e) = reporter.enqueue(rec) {
                        warn!("local log write failed: {e}");
                    }
                    while let Ok(rec) = records.try_recv() {
                        if let Err(e) = reporter.enqueue(rec) {
                            warn!("local log write failed: {e}");
                        }
                    }
                    reporter.flush().await;
                }
                _ = retry.tick() => {
                    if !reporter.queue.is_empty() {
                        reporter.flush().await;
                    }
                }
            }
        }
        let deadline = tokio::time::Instant::now() + drain_for;
        while !reporter.flush().await && tokio::time::Instant::now() < deadline {
            tokio::time::sleep(Duration::from_millis(200)).await;
        }
        reporter.stats()
    })
}
