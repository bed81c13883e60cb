//! Append-only record log, one newline-delimited JSON file per UTC day of
//! receipt. Each line is `{"index":N,"received_at_ms":T,"record":{...}}`.
//!
//! Appends go through one lock. Readers take a snapshot of how many bytes
//! of each segment are committed and read that prefix without the lock, so
//! exports never see a half-written line.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use meshmeter_core::MeasurementRecord;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

const SEGMENT_PREFIX: &str = "records-";
const SEGMENT_SUFFIX: &str = ".ndjson";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredEntry {
    pub index: u64,
    pub received_at_ms: u64,
    pub record: MeasurementRecord,
}

#[derive(Serialize)]
struct EntryRef<'a> {
    index: u64,
    received_at_ms: u64,
    record: &'a MeasurementRecord,
}

/// Export selection. Times are compared with the record's own `Date`;
/// `from_ms` is inclusive and `to_ms` exclusive.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportFilter {
    pub from_ms: Option<u64>,
    pub to_ms: Option<u64>,
    /// Matches `yourID`.
    pub reporter: Option<String>,
}

impl ExportFilter {
    pub fn matches(&self, r: &MeasurementRecord) -> bool {
        self.from_ms.is_none_or(|f| r.date >= f)
            && self.to_ms.is_none_or(|t| r.date < t)
            && self.reporter.as_deref().is_none_or(|id| r.your_id == id)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct StoreOptions {
    /// fsync after every append. Off by default: each append is still
    /// written through to the OS before it is acknowledged.
    pub fsync: bool,
}

struct Active {
    path: PathBuf,
    file: File,
}

struct Inner {
    next_index: u64,
    active: Option<Active>,
    /// Committed byte length per segment.
    committed: BTreeMap<PathBuf, u64>,
}

pub struct Store {
    dir: PathBuf,
    options: StoreOptions,
    inner: Mutex<Inner>,
}

pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn segment_name(received_at_ms: u64) -> String {
    let day = chrono::DateTime::from_timestamp_millis(received_at_ms as i64)
        .map(|d| d.format("%Y-%m-%d").to_string())
        .unwrap_or_else(|| "invalid".into());
    format!("{SEGMENT_PREFIX}{day}{SEGMENT_SUFFIX}")
}

fn is_segment(path: &Path) -> bool {
    path.file_name()
        .and_then(|n| n.to_str())
        .is_some_and(|n| n.starts_with(SEGMENT_PREFIX) && n.ends_with(SEGMENT_SUFFIX))
}

fn invalid(msg: String) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg)
}

/// Parses whole lines; stops at the first unterminated tail and returns
/// the byte length of the parsed prefix.
fn parse_prefix(bytes: &[u8], path: &Path) -> io::Result<(Vec<StoredEntry>, u64)> {
    let mut entries = Vec::new();
    let mut pos = 0usize;
    while let Some(nl) = bytes[pos..].iter().position(|&b| b == b'\n') {
        let line = &bytes[pos..pos + nl];
        if !line.iter().all(u8::is_ascii_whitespace) {
            let entry: StoredEntry = serde_json::from_slice(line).map_err(|e| {
                invalid(format!(
                    "{}: corrupt entry at byte {pos}: {e}",
                    path.display()
                ))
            })?;
            entries.push(entry);
        }
        pos += nl + 1;
    }
    Ok((entries, pos as u64))
}

impl Store {
    /// Opens or creates a store. A torn final line left by a crash is cut
    /// off; the next index continues after the highest one on disk.
    pub fn open(dir: impl AsRef<Path>, options: StoreOptions) -> io::Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let mut committed = BTreeMap::new();
        let mut max_index = 0u64;
        for entry in fs::read_dir(&dir)? {
            let path = entry?.path();
            if !is_segment(&path) {
                continue;
            }
            let bytes = fs::read(&path)?;
            let (entries, good) = parse_prefix(&bytes, &path)?;
            if good < bytes.len() as u64 {
                tracing::warn!(
                    "{}: dropping {} byte torn tail",
                    path.display(),
                    bytes.len() as u64 - good
                );
                OpenOptions::new().write(true).open(&path)?.set_len(good)?;
            }
            max_index = entries.iter().map(|e| e.index).fold(max_index, u64::max);
            committed.insert(path, good);
        }
        Ok(Self {
            dir,
            options,
            inner: Mutex::new(Inner {
                next_index: max_index + 1,
                active: None,
                committed,
            }),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Number of entries acknowledged so far, including ones recovered on open.
    pub fn len(&self) -> u64 {
        self.inner.lock().next_index - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn append(&self, record: &MeasurementRecord) -> io::Result<u64> {
        self.append_at(record, now_ms())
    }

    /// Appends with an explicit receive time. Returns the assigned index.
    pub fn append_at(&self, record: &MeasurementRecord, received_at_ms: u64) -> io::Result<u64> {
        let mut inner = self.inner.lock();
        let index = inner.next_index;
        let mut line = serde_json::to_vec(&EntryRef {
            index,
            received_at_ms,
            record,
        })
        .map_err(|e| invalid(e.to_string()))?;
        line.push(b'\n');

        let path = self.dir.join(segment_name(received_at_ms));
        if inner.active.as_ref().is_none_or(|a| a.path != path) {
            let mut file = OpenOptions::new().create(true).append(true).open(&path)?;
            let len = file.seek(SeekFrom::End(0))?;
            inner.committed.entry(path.clone()).or_insert(len);
            inner.active = Some(Active {
                path: path.clone(),
                file,
            });
        }
        let base = inner.committed[&path];
        let active = inner.active.as_mut().expect("active segment");
        let written = active.file.write_all(&line).and_then(|_| {
            if self.options.fsync {
                active.file.sync_data()
            } else {
                Ok(())
            }
        });
        if let Err(e) = written {
            // Do not leave a partial line for the next append to extend.
            let _ = active.file.set_len(base);
            return Err(e);
        }
        inner.committed.insert(path, base + line.len() as u64);
        inner.next_index += 1;
        Ok(index)
    }

    /// All matching entries in index order.
    pub fn export(&self, filter: &ExportFilter) -> io::Result<Vec<StoredEntry>> {
        let snapshot = self.inner.lock().committed.clone();
        let mut out = Vec::new();
        for (path, len) in snapshot {
            let mut bytes = Vec::with_capacity(len as usize);
            File::open(&path)?.take(len).read_to_end(&mut bytes)?;
            let (entries, _) = parse_prefix(&bytes, &path)?;
            out.extend(entries.into_iter().filter(|e| filter.matches(&e.record)));
        }
        out.sort_by_key(|e| e.index);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn rec(date: u64, me: &str, peer: &str, rtt: f64) -> MeasurementRecord {
        let mut r = MeasurementRecord::new(date, me, peer, rtt);
        r.your_ip = "203.0.113.7".into();
        r.your_isp = "ExampleNet".into();
        r
    }

    fn open(dir: &Path) -> Store {
        Store::open(dir, StoreOptions::default()).unwrap()
    }

    #[test]
    fn first_index_is_one() {
        let d = tempfile::tempdir().unwrap();
        let s = open(d.path());
        assert!(s.is_empty());
        assert_eq!(s.append(&rec(1, "a", "b", 1.0)).unwrap(), 1);
        assert_eq!(s.append(&rec(2, "a", "b", 1.0)).unwrap(), 2);
    }

    #[test]
    fn round_trip_is_byte_equivalent() {
        let d = tempfile::tempdir().unwrap();
        let s = open(d.path());
        let mut with_ext = rec(5, "a", "c", 0.125);
        with_ext.extra.insert("bytesSent".into(), json!(100));
        with_ext
            .extra
            .insert("custom".into(), json!({"k": [1, "two"]}));
        let input = vec![rec(3, "a", "b", 10.329), rec(4, "b", "a", 1e-7), with_ext];
        for r in &input {
            s.append(r).unwrap();
        }
        let out = s.export(&ExportFilter::default()).unwrap();
        let lines: Vec<String> = out.iter().map(|e| e.record.to_json_line()).collect();
        let expected: Vec<String> = input.iter().map(|r| r.to_json_line()).collect();
        assert_eq!(lines, expected);
    }

    #[test]
    fn duplicates_are_kept() {
        let d = tempfile::tempdir().unwrap();
        let s = open(d.path());
        let r = rec(7, "a", "b", 3.0);
        s.append(&r).unwrap();
        s.append(&r).unwrap();
        let out = s.export(&ExportFilter::default()).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].record, out[1].record);
        assert_ne!(out[0].index, out[1].index);
    }

    #[test]
    fn segments_split_by_day_and_export_in_index_order() {
        let d = tempfile::tempdir().unwrap();
        let s = open(d.path());
        let day = 86_400_000u64;
        let t0 = 1_700_000_000_000u64;
        // Receive times go back and forth across a day boundary.
        for (i, t) in [t0, t0 + day, t0, t0 + 2 * day, t0 + day]
            .iter()
            .enumerate()
        {
            s.append_at(&rec(i as u64 + 1, "a", "b", i as f64), *t)
                .unwrap();
        }
        let segments = fs::read_dir(d.path())
            .unwrap()
            .filter(|e| is_segment(&e.as_ref().unwrap().path()))
            .count();
        assert_eq!(segments, 3);
        let idx: Vec<u64> = s
            .export(&ExportFilter::default())
            .unwrap()
            .iter()
            .map(|e| e.index)
            .collect();
        assert_eq!(idx, vec![1, 2, 3, 4, 5]);
    }

    #[test]
    fn reopen_continues_numbering_and_cuts_torn_tail() {
        let d = tempfile::tempdir().unwrap();
        {
            let s = open(d.path());
            for i in 0..3 {
                s.append_at(&rec(i + 1, "a", "b", 1.0), 1_700_000_000_000)
                    .unwrap();
            }
        }
        let seg = d.path().join(segment_name(1_700_000_000_000));
        let mut f = OpenOptions::new().append(true).open(&seg).unwrap();
        f.write_all(b"{\"index\":4,\"received_at").unwrap();
        drop(f);

        let s = open(d.path());
        assert_eq!(s.len(), 3);
        assert_eq!(
            s.append_at(&rec(9, "a", "b", 1.0), 1_700_000_000_000)
                .unwrap(),
            4
        );
        let out = s.export(&ExportFilter::default()).unwrap();
        assert_eq!(
            out.iter().map(|e| e.index).collect::<Vec<_>>(),
            vec![1, 2, 3, 4]
        );
    }

    #[test]
    fn corrupt_middle_line_is_an_error() {
        let d = tempfile::tempdir().unwrap();
        fs::write(d.path().join("records-2024-01-01.ndjson"), "garbage\n").unwrap();
        let err = Store::open(d.path(), StoreOptions::default())
            .err()
            .unwrap();
        assert_eq!(err.kind(), io::ErrorKind::InvalidData);
    }

    #[test]
    fn filter_matches_brute_force_scan() {
        let d = tempfile::tempdir().unwrap();
        let s = open(d.path());
        let ids = ["a", "b", "c", "d"];
        let mut all = Vec::new();
        for i in 0..200u64 {
            let me = ids[(i * 7 % 4) as usize];
            let peer = ids[((i * 7 % 4) + 1 + i % 3) as usize % 4];
            let r = rec(1000 + (i * 37) % 500, me, peer, i as f64 / 3.0);
            s.append(&r).unwrap();
            all.push(r);
        }
        let filters = [
            ExportFilter::default(),
            ExportFilter {
                reporter: Some("b".into()),
                ..Default::default()
            },
            ExportFilter {
                from_ms: Some(1200),
                to_ms: Some(1300),
                ..Default::default()
            },
            ExportFilter {
                from_ms: Some(1100),
                to_ms: None,
                reporter: Some("c".into()),
            },
            ExportFilter {
                from_ms: Some(5000),
                ..Default::default()
            },
        ];
        for f in filters {
            let got: Vec<MeasurementRecord> = s
                .export(&f)
                .unwrap()
                .into_iter()
                .map(|e| e.record)
                .collect();
            let mut want = Vec::new();
            for r in &all {
                let ok_from = f.from_ms.map(|x| r.date >= x).unwrap_or(true);
                let ok_to = f.to_ms.map(|x| r.date < x).unwrap_or(true);
                let ok_id = f.reporter.as_ref().map(|x| &r.your_id == x).unwrap_or(true);
                if ok_from && ok_to && ok_id {
                    want.push(r.clone());
                }
            }
            assert_eq!(got, want, "{f:?}");
        }
    }
}
