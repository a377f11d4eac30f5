//! Online metadata store and query resolution.
//!
//! Records are keyed by `(global_id, camera_id, t)`. Ingest builds a new index
//! snapshot and swaps it in atomically, so concurrent readers observe either
//! the state before a batch or after it. Optionally every accepted record is
//! appended to a line-delimited JSON log that rebuilds the store on open.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};

use crate::codec::intra_payload_len;
use crate::geometry::{BBox, PixelRect};
use crate::roicover::{apply_mask, RoiMask};
use crate::scenario::Frame;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetadataRecord {
    pub global_id: u32,
    pub camera_id: u32,
    pub t: u32,
    pub bbox: BBox,
    pub embedding_ref: usize,
    /// Tiles intersecting `bbox`, ascending.
    pub tile_refs: Vec<usize>,
}

impl MetadataRecord {
    pub fn key(&self) -> RecordKey {
        (self.global_id, self.camera_id, self.t)
    }
}

pub type RecordKey = (u32, u32, u32);

#[derive(Debug, Default)]
struct Index {
    records: BTreeMap<RecordKey, MetadataRecord>,
    by_frame: BTreeMap<(u32, u32), BTreeSet<u32>>,
}

/// Indexed record store with snapshot reads.
#[derive(Debug, Default)]
pub struct MetadataStore {
    snapshot: RwLock<Arc<Index>>,
    writer: Mutex<Option<PathBuf>>,
}

impl MetadataStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Open a store backed by an append-only log, replaying existing records.
    pub fn open(log: &Path) -> Result<Self> {
        let store = Self::new();
        if log.exists() {
            let text = std::fs::read_to_string(log).map_err(|e| Error::io(log, e))?;
            store.ingest(&parse_log(&text)?)?;
        }
        *store.writer.lock().expect("writer lock") = Some(log.to_path_buf());
        Ok(store)
    }

    fn current(&self) -> Arc<Index> {
        self.snapshot.read().expect("snapshot lock").clone()
    }

    /// Add a batch. Exact duplicates are no-ops; a key that reappears with
    /// different content rejects the whole batch. Returns the number of new
    /// records.
    pub fn ingest(&self, records: &[MetadataRecord]) -> Result<usize> {
        let log = self.writer.lock().expect("writer lock");
        let base = self.current();
        let mut fresh: BTreeMap<RecordKey, &MetadataRecord> = BTreeMap::new();
        for r in records {
            let existing = base
                .records
                .get(&r.key())
                .or_else(|| fresh.get(&r.key()).copied());
            match existing {
                Some(e) if e == r => {}
                Some(_) => {
                    return Err(Error::Integrity(format!(
                        "conflicting record for global_id={} camera_id={} t={}",
                        r.global_id, r.camera_id, r.t
                    )))
                }
                None => {
                    fresh.insert(r.key(), r);
                }
            }
        }
        if fresh.is_empty() {
            return Ok(0);
        }
        if let Some(path) = log.as_ref() {
            let mut lines = String::new();
            for r in fresh.values() {
                lines.push_str(&serde_json::to_string(r)?);
                lines.push('\n');
            }
            let mut f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| Error::io(path, e))?;
            f.write_all(lines.as_bytes())
                .map_err(|e| Error::io(path, e))?;
        }
        let mut next = Index {
            records: base.records.clone(),
            by_frame: base.by_frame.clone(),
        };
        let added = fresh.len();
        for (key, r) in fresh {
            next.by_frame
                .entry((r.camera_id, r.t))
                .or_default()
                .insert(r.global_id);
            next.records.insert(key, r.clone());
        }
        *self.snapshot.write().expect("snapshot lock") = Arc::new(next);
        Ok(added)
    }

    pub fn len(&self) -> usize {
        self.current().records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All records of one global id, ordered by (camera, t).
    pub fn records_for(&self, global_id: u32) -> Vec<MetadataRecord> {
        self.current()
            .records
            .range((global_id, 0, 0)..=(global_id, u32::MAX, u32::MAX))
            .map(|(_, r)| r.clone())
            .collect()
    }

    /// Global ids present in one camera frame.
    pub fn ids_at(&self, camera_id: u32, t: u32) -> Vec<u32> {
        self.current()
            .by_frame
            .get(&(camera_id, t))
            .map(|s| s.iter().copied().collect())
            .unwrap_or_default()
    }

    pub fn records(&self) -> Vec<MetadataRecord> {
        self.current().records.values().cloned().collect()
    }

    pub fn query_appearances(
        &self,
        global_id: u32,
        context: Option<&EvidenceContext>,
        limit: Option<usize>,
    ) -> Result<QueryResult> {
        let records = self.records_for(global_id);
        let mut ordered: Vec<&MetadataRecord> = records.iter().collect();
        ordered.sort_by_key(|r| (r.t, r.camera_id));
        let take = limit.unwrap_or(usize::MAX);
        let (evidence, bytes_transmitted) = match context {
            Some(ctx) => ctx.evidence(ordered.iter().take(take).copied())?,
            None => (Vec::new(), 0),
        };
        Ok(QueryResult {
            kind: QueryKind::Appearances,
            value: QueryValue::Count(records.len() as u64),
            evidence,
            bytes_transmitted,
        })
    }

    /// Distinct global ids with a record in `start..end`.
    pub fn query_distinct_count(&self, start: u32, end: u32) -> Result<QueryResult> {
        if start > end {
            return Err(Error::Argument(format!("inverted range {start}..{end}")));
        }
        let snapshot = self.current();
        let ids: BTreeSet<u32> = snapshot
            .records
            .values()
            .filter(|r| (start..end).contains(&r.t))
            .map(|r| r.global_id)
            .collect();
        Ok(QueryResult {
            kind: QueryKind::DistinctCount,
            value: QueryValue::Count(ids.len() as u64),
            evidence: Vec::new(),
            bytes_transmitted: 0,
        })
    }

    /// Earliest record of an id; ties on t go to the lowest camera.
    pub fn query_first_entry(
        &self,
        global_id: u32,
        context: Option<&EvidenceContext>,
    ) -> Result<QueryResult> {
        let records = self.records_for(global_id);
        let first = records.iter().min_by_key(|r| (r.t, r.camera_id));
        let Some(first) = first else {
            return Ok(QueryResult {
                kind: QueryKind::FirstEntry,
                value: QueryValue::NotFound,
                evidence: Vec::new(),
                bytes_transmitted: 0,
            });
        };
        let (evidence, bytes_transmitted) = match context {
            Some(ctx) => ctx.evidence(std::iter::once(first))?,
            None => (Vec::new(), 0),
        };
        Ok(QueryResult {
            kind: QueryKind::FirstEntry,
            value: QueryValue::FirstEntry {
                t: first.t,
                camera_id: first.camera_id,
            },
            evidence,
            bytes_transmitted,
        })
    }
}

pub fn parse_log(text: &str) -> Result<Vec<MetadataRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

pub fn to_log(records: &[MetadataRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryKind {
    Appearances,
    DistinctCount,
    FirstEntry,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryValue {
    Count(u64),
    FirstEntry { t: u32, camera_id: u32 },
    NotFound,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evidence {
    pub camera_id: u32,
    pub t: u32,
    pub tiles: Vec<usize>,
    pub rects: Vec<PixelRect>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryResult {
    pub kind: QueryKind,
    pub value: QueryValue,
    pub evidence: Vec<Evidence>,
    pub bytes_transmitted: u64,
}

/// Masks and frames needed to cut and price evidence tiles.
#[derive(Debug, Clone, Default)]
pub struct EvidenceContext {
    pub masks: BTreeMap<u32, RoiMask>,
    pub frames: BTreeMap<(u32, u32), Frame>,
}

impl EvidenceContext {
    /// Evidence tiles are the record's tiles restricted to its camera mask;
    /// bytes are the intra payload of each frame with only those tiles kept.
    fn evidence<'a>(
        &self,
        records: impl Iterator<Item = &'a MetadataRecord>,
    ) -> Result<(Vec<Evidence>, u64)> {
        let mut evidence = Vec::new();
        let mut bytes = 0u64;
        for r in records {
            let mask = self
                .masks
                .get(&r.camera_id)
                .ok_or_else(|| Error::Lookup(format!("no mask for camera {}", r.camera_id)))?;
            let tiles: Vec<usize> = r
                .tile_refs
                .iter()
                .copied()
                .filter(|&t| mask.contains_tile(t))
                .collect();
            let cut = RoiMask::from_tiles(r.camera_id, mask.grid, &tiles);
            if let Some(frame) = self.frames.get(&(r.camera_id, r.t)) {
                bytes += intra_payload_len(&apply_mask(frame, &cut)?) as u64;
            }
            evidence.push(Evidence {
                camera_id: r.camera_id,
                t: r.t,
                tiles,
                rects: cut.merged_rects,
            });
        }
        Ok((evidence, bytes))
    }

    /// Intra payload of the unmasked frames at the given keys, for comparison.
    pub fn full_frame_bytes(&self, keys: &[(u32, u32)]) -> u64 {
        keys.iter()
            .filter_map(|k| self.frames.get(k))
            .map(|f| intra_payload_len(f) as u64)
            .sum()
    }
}
