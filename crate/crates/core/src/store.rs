//! Append-only JSONL store for probe results.
//!
//! Layout: `{root}/{endpoint}/{prompt_hash}.jsonl`, one record per line.
//! The endpoint directory name escapes every byte outside
//! `[A-Za-z0-9._-]` as `%XX`; the prompt hash is the first 16 hex digits of
//! the SHA-256 of the prompt. Records carry their endpoint and prompt, and
//! reads filter on them, so a hash collision cannot mix series.
//!
//! A crash can leave a final line without its newline. Readers skip such a
//! torn tail with a warning and the next append truncates it away.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::monitor::SeriesPoint;
use crate::token::{LogprobEntry, LogprobVector, TokenKey};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordEntry {
    pub token: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bytes: Option<Vec<u8>>,
    pub logprob: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RequestParams {
    pub top_logprobs: usize,
    pub max_tokens: u32,
    pub temperature: f64,
}

impl Default for RequestParams {
    fn default() -> Self {
        RequestParams {
            top_logprobs: 20,
            max_tokens: 1,
            temperature: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesRecord {
    pub schema_version: u32,
    pub endpoint_id: String,
    pub prompt: String,
    pub timestamp: DateTime<Utc>,
    pub entries: Vec<RecordEntry>,
    pub request_params: RequestParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<Usage>,
}

impl SeriesRecord {
    pub fn from_point(
        point: &SeriesPoint<f64>,
        request_params: RequestParams,
        usage: Option<Usage>,
    ) -> Self {
        SeriesRecord {
            schema_version: SCHEMA_VERSION,
            endpoint_id: point.endpoint_id.clone(),
            prompt: point.prompt.clone(),
            timestamp: point.timestamp,
            entries: point
                .vector
                .entries()
                .iter()
                .map(|e| RecordEntry {
                    token: e.token.text.clone(),
                    bytes: e.token.bytes.clone(),
                    logprob: e.logprob,
                })
                .collect(),
            request_params,
            usage,
        }
    }

    /// Rebuilds the point, keying tokens by bytes where present.
    pub fn to_point(&self) -> Result<SeriesPoint<f64>> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::invalid(format!(
                "unsupported schema version {}",
                self.schema_version
            )));
        }
        let entries = self
            .entries
            .iter()
            .map(|e| LogprobEntry {
                token: match &e.bytes {
                    Some(b) => TokenKey::with_bytes(e.token.clone(), b.clone()),
                    None => TokenKey::text(e.token.clone()),
                },
                logprob: e.logprob,
            })
            .collect();
        Ok(SeriesPoint {
            timestamp: self.timestamp,
            vector: LogprobVector::new(entries, self.request_params.top_logprobs)?,
            endpoint_id: self.endpoint_id.clone(),
            prompt: self.prompt.clone(),
        })
    }
}

/// Where an acknowledged record landed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Position {
    pub path: PathBuf,
    /// Zero-based line number within the series file.
    pub line: u64,
    /// Byte offset of the line start.
    pub offset: u64,
}

/// Half-open time interval `[start, end)`; missing bounds are unbounded.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TimeRange {
    pub start: Option<DateTime<Utc>>,
    pub end: Option<DateTime<Utc>>,
}

impl TimeRange {
    pub fn all() -> Self {
        TimeRange::default()
    }

    pub fn contains(&self, t: DateTime<Utc>) -> bool {
        self.start.is_none_or(|s| t >= s) && self.end.is_none_or(|e| t < e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeriesRead {
    pub records: Vec<SeriesRecord>,
    /// Torn final lines skipped while reading.
    pub recovered_with_loss: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SeriesKey {
    pub endpoint_id: String,
    pub prompt: String,
}

struct Tail {
    last: Option<DateTime<Utc>>,
    lines: u64,
}

pub struct Store {
    root: PathBuf,
    tails: HashMap<PathBuf, Tail>,
}

pub fn endpoint_dir_name(endpoint_id: &str) -> String {
    let mut out = String::with_capacity(endpoint_id.len());
    for b in endpoint_id.bytes() {
        if b.is_ascii_alphanumeric() || b == b'-' || b == b'_' || (b == b'.' && !out.is_empty()) {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    if out.is_empty() {
        out.push_str("%00");
    }
    out
}

pub fn prompt_hash(prompt: &str) -> String {
    let digest = Sha256::digest(prompt.as_bytes());
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

struct Parsed {
    records: Vec<SeriesRecord>,
    good_len: u64,
    torn: bool,
}

fn parse_file(path: &Path) -> Result<Parsed> {
    let data = match fs::read(path) {
        Ok(d) => d,
        Err(e) if e.kind() == io::ErrorKind::NotFound => {
            return Ok(Parsed {
                records: Vec::new(),
                good_len: 0,
                torn: false,
            })
        }
        Err(e) => return Err(Error::storage(path, e)),
    };
    let mut records = Vec::new();
    let mut offset = 0usize;
    let mut line_no = 0usize;
    while offset < data.len() {
        let Some(nl) = data[offset..].iter().position(|&b| b == b'\n') else {
            // unterminated final line: never acknowledged
            return Ok(Parsed {
                records,
                good_len: offset as u64,
                torn: true,
            });
        };
        let line = &data[offset..offset + nl];
        let rec: SeriesRecord = serde_json::from_slice(line).map_err(|e| Error::Corrupt {
            path: path.to_path_buf(),
            line: line_no + 1,
            detail: e.to_string(),
        })?;
        records.push(rec);
        offset += nl + 1;
        line_no += 1;
    }
    Ok(Parsed {
        records,
        good_len: offset as u64,
        torn: false,
    })
}

impl Store {
    /// Opens (creating if needed) a store rooted at `root`.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| Error::storage(&root, e))?;
        Ok(Store {
            root,
            tails: HashMap::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn series_path(&self, endpoint_id: &str, prompt: &str) -> PathBuf {
        self.root
            .join(endpoint_dir_name(endpoint_id))
            .join(format!("{}.jsonl", prompt_hash(prompt)))
    }

    fn tail(&mut self, path: &Path) -> Result<&mut Tail> {
        if !self.tails.contains_key(path) {
            let parsed = parse_file(path)?;
            if parsed.torn {
                log::warn!(
                    "{}: truncating torn final line at byte {}",
                    path.display(),
                    parsed.good_len
                );
                let f = OpenOptions::new()
                    .write(true)
                    .open(path)
                    .map_err(|e| Error::storage(path, e))?;
                f.set_len(parsed.good_len).map_err(|e| Error::storage(path, e))?;
                f.sync_data().map_err(|e| Error::storage(path, e))?;
            }
            self.tails.insert(
                path.to_path_buf(),
                Tail {
                    last: parsed.records.last().map(|r| r.timestamp),
                    lines: parsed.records.len() as u64,
                },
            );
        }
        Ok(self.tails.get_mut(path).expect("inserted above"))
    }

    /// Durably appends one record; returns only after the line is synced.
    pub fn append(&mut self, record: &SeriesRecord) -> Result<Position> {
        record.to_point()?;
        let path = self.series_path(&record.endpoint_id, &record.prompt);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::storage(dir, e))?;
        }
        let tail = self.tail(&path)?;
        if let Some(last) = tail.last {
            if record.timestamp <= last {
                return Err(Error::Ordering {
                    series: format!("{}/{}", record.endpoint_id, record.prompt),
                    timestamp: record.timestamp.to_rfc3339(),
                    last: last.to_rfc3339(),
                });
            }
        }
        let mut line = serde_json::to_vec(record).map_err(|e| Error::invalid(e.to_string()))?;
        line.push(b'\n');

        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::storage(&path, e))?;
        let offset = file
            .metadata()
            .map_err(|e| Error::storage(&path, e))?
            .len();
        let written = file
            .write_all(&line)
            .and_then(|_| file.flush())
            .and_then(|_| file.sync_data());
        if let Err(e) = written {
            // best effort: never leave a partial line behind
            let _ = file.set_len(offset);
            return Err(Error::storage(&path, e));
        }
        let tail = self.tails.get_mut(&path).expect("tail loaded");
        tail.last = Some(record.timestamp);
        tail.lines += 1;
        Ok(Position {
            path,
            line: tail.lines - 1,
            offset,
        })
    }

    /// Records of one series within `range`, in timestamp order.
    pub fn read_records(&self, endpoint_id: &str, prompt: &str, range: TimeRange) -> Result<SeriesRead> {
        let path = self.series_path(endpoint_id, prompt);
        let parsed = parse_file(&path)?;
        if parsed.torn {
            log::warn!("{}: skipped torn final line", path.display());
        }
        let mut records: Vec<SeriesRecord> = parsed
            .records
            .into_iter()
            .filter(|r| r.endpoint_id == endpoint_id && r.prompt == prompt)
            .filter(|r| range.contains(r.timestamp))
            .collect();
        records.sort_by_key(|r| r.timestamp);
        Ok(SeriesRead {
            records,
            recovered_with_loss: usize::from(parsed.torn),
        })
    }

    pub fn read_series(
        &self,
        endpoint_id: &str,
        prompt: &str,
        range: TimeRange,
    ) -> Result<Vec<SeriesPoint<f64>>> {
        self.read_records(endpoint_id, prompt, range)?
            .records
            .iter()
            .map(SeriesRecord::to_point)
            .collect()
    }

    /// Every (endpoint, prompt) pair with at least one record, sorted.
    pub fn list_series(&self) -> Result<Vec<SeriesKey>> {
        let mut keys = Vec::new();
        let dirs = fs::read_dir(&self.root).map_err(|e| Error::storage(&self.root, e))?;
        for dir in dirs {
            let dir = dir.map_err(|e| Error::storage(&self.root, e))?.path();
            if !dir.is_dir() {
                continue;
            }
            let files = fs::read_dir(&dir).map_err(|e| Error::storage(&dir, e))?;
            for file in files {
                let file = file.map_err(|e| Error::storage(&dir, e))?.path();
                if file.extension().is_some_and(|e| e == "jsonl") {
                    for r in parse_file(&file)?.records {
                        keys.push(SeriesKey {
                            endpoint_id: r.endpoint_id,
                            prompt: r.prompt,
                        });
                    }
                }
            }
        }
        keys.sort();
        keys.dedup();
        Ok(keys)
    }

    /// Writes every record in `range` as one flat JSONL stream, ordered by
    /// series then timestamp. Returns the record count.
    pub fn export(&self, out: impl Write, range: TimeRange) -> Result<usize> {
        let mut out = BufWriter::new(out);
        let mut count = 0;
        let stdout_err = |e| Error::storage("<export>", e);
        for key in self.list_series()? {
            for r in self.read_records(&key.endpoint_id, &key.prompt, range)?.records {
                serde_json::to_writer(&mut out, &r).map_err(|e| stdout_err(e.into()))?;
                out.write_all(b"\n").map_err(stdout_err)?;
                count += 1;
            }
        }
        out.flush().map_err(stdout_err)?;
        Ok(count)
    }
}

/// Reads a flat JSONL archive as produced by [`Store::export`].
pub fn read_archive(path: &Path) -> Result<Vec<SeriesRecord>> {
    let parsed = parse_file(path)?;
    if parsed.torn {
        log::warn!("{}: skipped torn final line", path.display());
    }
    Ok(parsed.records)
}

/// Opens `path` for reading, mapping failures to storage errors.
pub fn open_file(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::storage(path, e))
}
