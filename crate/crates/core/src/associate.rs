//! Identity association.
//!
//! Temporal association links each detection to one detection of the previous
//! processed frame of the same camera using `S = 1 - ||e_i - r_j||` and a
//! one-to-one matching. Spatial association links co-temporal detections of
//! different cameras whose embedding cosine exceeds a threshold, and merges the
//! linked local tracks with a union-find. Two tracks that already occupy the
//! same `(camera, t)` are never merged, so a global ID owns at most one
//! detection per frame.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use pathfinding::prelude::{kuhn_munkres, Matrix};
use serde::{Deserialize, Serialize};

use crate::geometry::BBox;
use crate::percept::{Detection, DetectionRef, Embedding};
use crate::union_find::UnionFind;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Matching {
    #[default]
    Greedy,
    Optimal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssocConfig {
    /// Bound on `1 - euclidean distance` for frame-to-frame links.
    pub temporal_threshold: f64,
    /// Bound on cosine similarity for cross-camera links.
    pub spatial_threshold: f64,
    pub matching: Matching,
}

impl Default for AssocConfig {
    fn default() -> Self {
        Self {
            temporal_threshold: 0.65,
            spatial_threshold: 0.7,
            matching: Matching::Greedy,
        }
    }
}

impl AssocConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.temporal_threshold)
            || !(0.0..=1.0).contains(&self.spatial_threshold)
        {
            return Err(Error::Config(
                "association thresholds must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// Row-major `rows x cols` matrix of `1 - ||current_i - reference_j||`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }
}

fn check_dims(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "embedding dimensions {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub fn similarity_matrix(
    current: &[Embedding],
    reference: &[Embedding],
) -> Result<SimilarityMatrix> {
    let mut values = Vec::with_capacity(current.len() * reference.len());
    for c in current {
        for r in reference {
            check_dims(&c.vector, &r.vector)?;
            values.push(1.0 - euclidean(&c.vector, &r.vector));
        }
    }
    Ok(SimilarityMatrix {
        rows: current.len(),
        cols: reference.len(),
        values,
    })
}

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    check_dims(a, b)?;
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Numeric("cosine of a zero vector".into()));
    }
    Ok(dot / (na * nb))
}

/// Per-camera track labels produced by temporal association.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LocalTracks {
    /// Local track index of every detection, parallel to the input.
    pub labels: Vec<usize>,
    /// Camera of every local track.
    pub cameras: Vec<u32>,
}

impl LocalTracks {
    pub fn track_count(&self) -> usize {
        self.cameras.len()
    }
}

fn check_inputs(dets: &[Detection], embs: &[Embedding]) -> Result<()> {
    if dets.len() != embs.len() {
        return Err(Error::Shape(format!(
            "{} detections but {} embeddings",
            dets.len(),
            embs.len()
        )));
    }
    if let Some(first) = embs.first() {
        for e in embs {
            check_dims(&first.vector, &e.vector)?;
        }
    }
    Ok(())
}

/// One-to-one matching of `rows` against `cols` over a row-major score
/// matrix; only pairs scoring strictly above `threshold` bind.
fn match_pairs(
    scores: &[f64],
    rows: usize,
    cols: usize,
    threshold: f64,
    matching: Matching,
) -> Vec<(usize, usize)> {
    if rows == 0 || cols == 0 {
        return Vec::new();
    }
    match matching {
        Matching::Greedy => {
            let mut candidates: Vec<(usize, usize)> = (0..rows)
                .flat_map(|i| (0..cols).map(move |j| (i, j)))
                .filter(|&(i, j)| scores[i * cols + j] > threshold)
                .collect();
            candidates.sort_by(|&(i, j), &(k, l)| {
                scores[k * cols + l]
                    .total_cmp(&scores[i * cols + j])
                    .then((i, j).cmp(&(k, l)))
            });
            let (mut row_used, mut col_used) = (vec![false; rows], vec![false; cols]);
            let mut out = Vec::new();
            for (i, j) in candidates {
                if !row_used[i] && !col_used[j] {
                    row_used[i] = true;
                    col_used[j] = true;
                    out.push((i, j));
                }
            }
            out.sort_unstable();
            out
        }
        Matching::Optimal => {
            // Integer weights; pairs at or below threshold carry no weight.
            let weight = |i: usize, j: usize| {
                let s = scores[i * cols + j];
                if s > threshold {
                    ((s + 1.0) * 1e9).round() as i64
                } else {
                    0
                }
            };
            let transpose = rows > cols;
            let (r, c) = if transpose {
                (cols, rows)
            } else {
                (rows, cols)
            };
            let matrix = Matrix::from_fn(r, c, |(a, b)| {
                if transpose {
                    weight(b, a)
                } else {
                    weight(a, b)
                }
            });
            let (_, assignment) = kuhn_munkres(&matrix);
            let mut out: Vec<(usize, usize)> = assignment
                .into_iter()
                .enumerate()
                .map(|(a, b)| if transpose { (b, a) } else { (a, b) })
                .filter(|&(i, j)| scores[i * cols + j] > threshold)
                .collect();
            out.sort_unstable();
            out
        }
    }
}

/// Link detections frame to frame within each camera.
///
/// `frames` lists the processed `(camera_id, t)` frames, including frames with
/// no detections; frames that only appear through `dets` are added. A frame's
/// detections are matched against those of the previous processed frame of
/// the same camera.
pub fn associate_temporal(
    dets: &[Detection],
    embs: &[Embedding],
    frames: &[(u32, u32)],
    config: &AssocConfig,
) -> Result<LocalTracks> {
    config.validate()?;
    check_inputs(dets, embs)?;

    let mut per_camera: BTreeMap<u32, BTreeMap<u32, Vec<usize>>> = BTreeMap::new();
    for &(camera_id, t) in frames {
        per_camera
            .entry(camera_id)
            .or_default()
            .entry(t)
            .or_default();
    }
    for (i, d) in dets.iter().enumerate() {
        per_camera
            .entry(d.camera_id)
            .or_default()
            .entry(d.t)
            .or_default()
            .push(i);
    }

    let mut labels = vec![usize::MAX; dets.len()];
    let mut cameras = Vec::new();
    for (camera_id, timeline) in per_camera {
        let mut previous: &[usize] = &[];
        for current in timeline.values() {
            let mut scores = Vec::with_capacity(current.len() * previous.len());
            for &i in current {
                for &j in previous {
                    scores.push(1.0 - euclidean(&embs[i].vector, &embs[j].vector));
                }
            }
            let pairs = match_pairs(
                &scores,
                current.len(),
                previous.len(),
                config.temporal_threshold,
                config.matching,
            );
            let mut bound = vec![None; current.len()];
            for (i, j) in pairs {
                bound[i] = Some(labels[previous[j]]);
            }
            for (slot, &det) in current.iter().enumerate() {
                labels[det] = bound[slot].unwrap_or_else(|| {
                    cameras.push(camera_id);
                    cameras.len() - 1
                });
            }
            previous = current;
        }
    }
    Ok(LocalTracks { labels, cameras })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssignedDetection {
    pub camera_id: u32,
    pub t: u32,
    pub bbox: BBox,
    pub global_id: u32,
    /// Index of the detection within its frame.
    pub index: u32,
}

impl AssignedDetection {
    pub fn detection_ref(&self) -> DetectionRef {
        DetectionRef {
            camera_id: self.camera_id,
            t: self.t,
            index: self.index,
        }
    }
}

/// Global ID of every detection, parallel to the detection list.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GlobalIdAssignment {
    pub entries: Vec<AssignedDetection>,
}

impl GlobalIdAssignment {
    pub fn global_id_count(&self) -> usize {
        self.entries
            .iter()
            .map(|e| e.global_id)
            .collect::<BTreeSet<_>>()
            .len()
    }

    /// Detection positions grouped by global ID; a canonical view of the partition.
    pub fn partition(&self) -> BTreeSet<BTreeSet<DetectionRef>> {
        let mut groups: BTreeMap<u32, BTreeSet<DetectionRef>> = BTreeMap::new();
        for e in &self.entries {
            groups
                .entry(e.global_id)
                .or_default()
                .insert(e.detection_ref());
        }
        groups.into_values().collect()
    }

    /// Line-delimited JSON, one record per detection.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let entries = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<_, _>>()?;
        Ok(Self { entries })
    }
}

/// Merge local tracks across cameras into global identities.
///
/// Every unordered pair of co-temporal detections from different cameras with
/// cosine above the threshold is a candidate link. Links are applied in
/// descending cosine order (ties by detection position); a link is skipped if
/// the two components already both hold a detection in one `(camera, t)`.
/// Global IDs start at 1 and follow first appearance `(t, camera, index)`.
pub fn associate_spatial(
    dets: &[Detection],
    embs: &[Embedding],
    local: &LocalTracks,
    config: &AssocConfig,
) -> Result<GlobalIdAssignment> {
    config.validate()?;
    check_inputs(dets, embs)?;
    if local.labels.len() != dets.len() {
        return Err(Error::Shape(
            "local track labels do not match detections".into(),
        ));
    }

    let mut by_time: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, d) in dets.iter().enumerate() {
        by_time.entry(d.t).or_default().push(i);
    }
    let mut links: Vec<(f64, usize, usize)> = Vec::new();
    for members in by_time.values() {
        for (n, &a) in members.iter().enumerate() {
            for &b in &members[n + 1..] {
                if dets[a].camera_id == dets[b].camera_id {
                    continue;
                }
                let c = cosine(&embs[a].vector, &embs[b].vector)?;
                if c > config.spatial_threshold {
                    links.push((c, a.min(b), a.max(b)));
                }
            }
        }
    }
    links.sort_by(|x, y| y.0.total_cmp(&x.0).then((x.1, x.2).cmp(&(y.1, y.2))));

    let tracks = local.track_count();
    let mut occupancy: Vec<HashSet<(u32, u32)>> = vec![HashSet::new(); tracks];
    for (i, d) in dets.iter().enumerate() {
        occupancy[local.labels[i]].insert((d.camera_id, d.t));
    }
    let mut uf = UnionFind::new(tracks);
    for (_, a, b) in links {
        let (ra, rb) = (uf.find(local.labels[a]), uf.find(local.labels[b]));
        if ra == rb {
            continue;
        }
        let (small, large) = if occupancy[ra].len() < occupancy[rb].len() {
            (ra, rb)
        } else {
            (rb, ra)
        };
        if occupancy[small]
            .iter()
            .any(|k| occupancy[large].contains(k))
        {
            continue;
        }
        let root = uf.union(ra, rb).expect("distinct roots");
        let absorbed = if root == ra { rb } else { ra };
        let moved = std::mem::take(&mut occupancy[absorbed]);
        occupancy[root].extend(moved);
    }

    // number components by first appearance
    let mut first_seen: BTreeMap<usize, (u32, u32, u32)> = BTreeMap::new();
    for (i, d) in dets.iter().enumerate() {
        let root = uf.find(local.labels[i]);
        let key = (d.t, d.camera_id, d.index);
        first_seen
            .entry(root)
            .and_modify(|k| *k = (*k).min(key))
            .or_insert(key);
    }
    let mut order: Vec<(usize, (u32, u32, u32))> = first_seen.into_iter().collect();
    order.sort_by_key(|&(root, key)| (key, root));
    let global_of: BTreeMap<usize, u32> = order
        .into_iter()
        .enumerate()
        .map(|(n, (root, _))| (root, n as u32 + 1))
        .collect();

    let entries = dets
        .iter()
        .enumerate()
        .map(|(i, d)| AssignedDetection {
            camera_id: d.camera_id,
            t: d.t,
            bbox: d.bbox,
            global_id: global_of[&uf.find(local.labels[i])],
            index: d.index,
        })
        .collect();
    Ok(GlobalIdAssignment { entries })
}

/// Temporal then spatial association.
pub fn associate(
    dets: &[Detection],
    embs: &[Embedding],
    frames: &[(u32, u32)],
    config: &AssocConfig,
) -> Result<GlobalIdAssignment> {
    let local = associate_temporal(dets, embs, frames, config)?;
    associate_spatial(dets, embs, &local, config)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub camera_id: u32,
    pub t: u32,
    pub bbox: BBox,
    pub embedding_ref: DetectionRef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tracklet {
    pub global_id: u32,
    /// Ordered by `(t, camera_id)`.
    pub observations: Vec<Observation>,
}

pub fn build_tracklets(assignment: &GlobalIdAssignment) -> Vec<Tracklet> {
    let mut groups: BTreeMap<u32, Vec<Observation>> = BTreeMap::new();
    for e in &assignment.entries {
        groups.entry(e.global_id).or_default().push(Observation {
            camera_id: e.camera_id,
            t: e.t,
            bbox: e.bbox,
            embedding_ref: e.detection_ref(),
        });
    }
    groups
        .into_iter()
        .map(|(global_id, mut observations)| {
            observations.sort_by_key(|o| (o.t, o.camera_id, o.embedding_ref.index));
            Tracklet {
                global_id,
                observations,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn emb(v: &[f64]) -> Embedding {
        Embedding {
            vector: v.to_vec(),
            detection_ref: DetectionRef {
                camera_id: 0,
                t: 0,
                index: 0,
            },
        }
    }

    fn det(camera_id: u32, t: u32, index: u32) -> Detection {
        Detection {
            camera_id,
            t,
            index,
            bbox: BBox::new(0.0, 0.0, 10.0, 10.0),
            confidence: 1.0,
            true_identity: None,
            scene_key: t as u64,
        }
    }

    #[test]
    fn similarity_examples() {
        let e = emb(&[1.0, 0.0]);
        let m = similarity_matrix(
            std::slice::from_ref(&e),
            &[e.clone(), emb(&[-1.0, 0.0]), emb(&[0.0, 1.0])],
        )
        .unwrap();
        assert_eq!((m.rows, m.cols), (1, 3));
        assert_eq!(m.get(0, 0), 1.0);
        assert_eq!(m.get(0, 1), -1.0);
        assert!((m.get(0, 2) - (1.0 - 2f64.sqrt())).abs() < 1e-12);
        assert!((m.get(0, 2) + 0.41421).abs() < 1e-5);
        assert!(matches!(
            similarity_matrix(&[e], &[emb(&[1.0, 0.0, 0.0])]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn cosine_examples() {
        let e = [0.6, 0.8];
        assert!((cosine(&e, &e).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((cosine(&e, &[1.8, 2.4]).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(cosine(&[0.0, 0.0], &e), Err(Error::Numeric(_))));
        // unit vectors: cos = 1 - |a-b|^2 / 2
        let (a, b) = ([0.6, 0.8], [1.0, 0.0]);
        let d2 = euclidean(&a, &b).powi(2);
        assert!((cosine(&a, &b).unwrap() - (1.0 - d2 / 2.0)).abs() < 1e-12);
    }

    #[test]
    fn greedy_prefers_highest_then_lowest_index() {
        // rows 0,1 both best-match col 0
        let scores = [0.9, 0.8, 0.95, 0.1];
        assert_eq!(
            match_pairs(&scores, 2, 2, 0.5, Matching::Greedy),
            vec![(0, 1), (1, 0)]
        );
        let ties = [0.9, 0.9, 0.9, 0.9];
        assert_eq!(
            match_pairs(&ties, 2, 2, 0.5, Matching::Greedy),
            vec![(0, 0), (1, 1)]
        );
        assert!(match_pairs(&scores, 2, 2, 0.99, Matching::Greedy).is_empty());
    }

    #[test]
    fn optimal_beats_greedy_on_total_similarity() {
        // greedy takes (0,0)=0.9 then (1,1)=0.1 (below threshold) ; optimal takes 0.85 + 0.8
        let scores = [0.9, 0.85, 0.8, 0.1];
        assert_eq!(
            match_pairs(&scores, 2, 2, 0.65, Matching::Greedy),
            vec![(0, 0)]
        );
        assert_eq!(
            match_pairs(&scores, 2, 2, 0.65, Matching::Optimal),
            vec![(0, 1), (1, 0)]
        );
        // rectangular, both orientations
        let wide = [0.9, 0.7, 0.8];
        assert_eq!(
            match_pairs(&wide, 1, 3, 0.65, Matching::Optimal),
            vec![(0, 0)]
        );
        let tall = [0.7, 0.9, 0.8];
        assert_eq!(
            match_pairs(&tall, 3, 1, 0.65, Matching::Optimal),
            vec![(1, 0)]
        );
    }

    #[test]
    fn temporal_links_consecutive_frames() {
        let dets: Vec<_> = (0..10).map(|t| det(0, t, 0)).collect();
        let embs: Vec<_> = (0..10).map(|_| emb(&[1.0, 0.0])).collect();
        let local = associate_temporal(&dets, &embs, &[], &AssocConfig::default()).unwrap();
        assert_eq!(local.track_count(), 1);
        assert!(local.labels.iter().all(|&l| l == 0));
    }

    #[test]
    fn empty_frame_breaks_the_chain() {
        let dets = vec![det(0, 0, 0), det(0, 2, 0)];
        let embs = vec![emb(&[1.0, 0.0]), emb(&[1.0, 0.0])];
        let frames = [(0, 0), (0, 1), (0, 2)];
        let local = associate_temporal(&dets, &embs, &frames, &AssocConfig::default()).unwrap();
        assert_eq!(local.track_count(), 2);
        // without the empty frame listed, t=2 follows t=0
        let local = associate_temporal(&dets, &embs, &[], &AssocConfig::default()).unwrap();
        assert_eq!(local.track_count(), 1);
    }

    #[test]
    fn transitive_spatial_merge() {
        // cameras 0,1,2 at t=0; A~B and B~C above 0.7, A~C below
        let dets = vec![det(0, 0, 0), det(1, 0, 0), det(2, 0, 0)];
        let a = [1.0, 0.0];
        let b = [(0.5f64).cos(), (0.5f64).sin()];
        let c = [(1.0f64).cos(), (1.0f64).sin()];
        assert!(cosine(&a, &c).unwrap() < 0.7);
        let embs = vec![emb(&a), emb(&b), emb(&c)];
        let assignment = associate(&dets, &embs, &[], &AssocConfig::default()).unwrap();
        assert_eq!(assignment.global_id_count(), 1);
    }

    #[test]
    fn same_frame_tracks_never_merge() {
        // two detections in camera 1 at t=0 both match camera 0's detection
        let dets = vec![det(0, 0, 0), det(1, 0, 0), det(1, 0, 1)];
        let embs = vec![emb(&[1.0, 0.0]), emb(&[0.99, 0.141]), emb(&[0.98, 0.199])];
        let assignment = associate(&dets, &embs, &[], &AssocConfig::default()).unwrap();
        let ids: Vec<_> = assignment.entries.iter().map(|e| e.global_id).collect();
        // the stronger link wins
        assert_eq!(ids, vec![1, 1, 2]);
        for t in build_tracklets(&assignment) {
            let keys: BTreeSet<_> = t.observations.iter().map(|o| (o.camera_id, o.t)).collect();
            assert_eq!(keys.len(), t.observations.len());
        }
    }

    #[test]
    fn global_ids_follow_first_appearance() {
        let dets = vec![det(0, 5, 0), det(1, 2, 0), det(0, 2, 0)];
        let embs = vec![emb(&[1.0, 0.0]), emb(&[0.0, 1.0]), emb(&[-1.0, 0.0])];
        let assignment = associate(&dets, &embs, &[], &AssocConfig::default()).unwrap();
        let ids: Vec<_> = assignment.entries.iter().map(|e| e.global_id).collect();
        assert_eq!(ids, vec![3, 2, 1]);
    }

    #[test]
    fn tracklets_conserve_detections() {
        assert!(build_tracklets(&GlobalIdAssignment::default()).is_empty());
        let dets = vec![det(0, 0, 0)];
        let embs = vec![emb(&[1.0, 0.0])];
        let assignment = associate(&dets, &embs, &[], &AssocConfig::default()).unwrap();
        let tracklets = build_tracklets(&assignment);
        assert_eq!(tracklets.len(), 1);
        assert_eq!(tracklets[0].observations.len(), 1);
    }

    #[test]
    fn jsonl_round_trip() {
        let dets = vec![det(0, 0, 0), det(1, 0, 0)];
        let embs = vec![emb(&[1.0, 0.0]), emb(&[1.0, 0.0])];
        let a = associate(&dets, &embs, &[], &AssocConfig::default()).unwrap();
        let text = a.to_jsonl().unwrap();
        assert!(text.starts_with("{\"camera_id\":0,\"t\":0,\"bbox\":"));
        assert_eq!(GlobalIdAssignment::from_jsonl(&text).unwrap(), a);
    }

    #[test]
    fn mismatched_inputs() {
        let dets = vec![det(0, 0, 0)];
        assert!(matches!(
            associate_temporal(&dets, &[], &[], &AssocConfig::default()),
            Err(Error::Shape(_))
        ));
        let embs = vec![emb(&[1.0, 0.0])];
        let bad = AssocConfig {
            spatial_threshold: 1.5,
            ..AssocConfig::default()
        };
        assert!(matches!(
            associate(&dets, &embs, &[], &bad),
            Err(Error::Config(_))
        ));
    }
}
