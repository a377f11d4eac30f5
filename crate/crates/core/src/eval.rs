//! Tracking metrics: IoU, identity mapping, MTTA and ID switches.
//!
//! MTTA is the mean over cameras of the fraction of ground-truth records that
//! are both localized (IoU at or above threshold) and carry the correct
//! identity under a sequence-wide GT-to-global-ID mapping.

use std::collections::{BTreeMap, BTreeSet};

use pathfinding::prelude::{kuhn_munkres, Matrix};
use serde::{Deserialize, Serialize};

use crate::associate::AssignedDetection;
use crate::geometry::BBox;
use crate::scenario::GroundTruthRecord;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum IdMapping {
    /// Maximum-weight bijection over the co-detection count matrix.
    #[default]
    OptimalBijective,
    /// Each GT id takes the first still-free global id it is matched to.
    FirstMatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub iou_threshold: f64,
    pub id_mapping: IdMapping,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_threshold: 0.7,
            id_mapping: IdMapping::OptimalBijective,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.iou_threshold) {
            return Err(Error::Config(format!(
                "iou_threshold {} outside [0, 1]",
                self.iou_threshold
            )));
        }
        Ok(())
    }
}

/// Intersection over union; zero when either box is degenerate.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    if a.is_degenerate() || b.is_degenerate() {
        return 0.0;
    }
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// A ground-truth record paired with the prediction localizing it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameMatch {
    pub camera_id: u32,
    pub t: u32,
    pub identity_id: u32,
    pub global_id: u32,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Matches {
    /// Sorted by (camera, t, identity).
    pub pairs: Vec<FrameMatch>,
    /// Predicted or ground-truth boxes with zero area.
    pub degenerate_boxes: usize,
}

type FrameKey = (u32, u32);

/// Per-frame one-to-one matching: pairs with IoU at or above the threshold,
/// taken greedily by descending IoU (ties: lower GT identity, then lower
/// prediction index).
pub fn match_frames(
    predictions: &[AssignedDetection],
    ground_truth: &[GroundTruthRecord],
    iou_threshold: f64,
) -> Matches {
    let mut preds: BTreeMap<FrameKey, Vec<&AssignedDetection>> = BTreeMap::new();
    for p in predictions {
        preds.entry((p.camera_id, p.t)).or_default().push(p);
    }
    let mut gts: BTreeMap<FrameKey, Vec<&GroundTruthRecord>> = BTreeMap::new();
    for g in ground_truth {
        gts.entry((g.camera_id, g.t)).or_default().push(g);
    }
    let degenerate_boxes = predictions
        .iter()
        .filter(|p| p.bbox.is_degenerate())
        .count()
        + ground_truth
            .iter()
            .filter(|g| g.bbox.is_degenerate())
            .count();

    let mut pairs = Vec::new();
    for (key, frame_gt) in &mut gts {
        let Some(frame_pred) = preds.get_mut(key) else {
            continue;
        };
        frame_gt.sort_by_key(|g| g.identity_id);
        frame_pred.sort_by_key(|p| p.index);
        let mut candidates = Vec::new();
        for (gi, g) in frame_gt.iter().enumerate() {
            for (pi, p) in frame_pred.iter().enumerate() {
                let s = iou(&g.bbox, &p.bbox);
                if s > 0.0 && s >= iou_threshold {
                    candidates.push((s, gi, pi));
                }
            }
        }
        candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut gt_used = vec![false; frame_gt.len()];
        let mut pred_used = vec![false; frame_pred.len()];
        for (s, gi, pi) in candidates {
            if gt_used[gi] || pred_used[pi] {
                continue;
            }
            gt_used[gi] = true;
            pred_used[pi] = true;
            pairs.push(FrameMatch {
                camera_id: key.0,
                t: key.1,
                identity_id: frame_gt[gi].identity_id,
                global_id: frame_pred[pi].global_id,
                iou: s,
            });
        }
    }
    pairs.sort_by_key(|m| (m.camera_id, m.t, m.identity_id));
    Matches {
        pairs,
        degenerate_boxes,
    }
}

/// Global ids ordered by first appearance (t, camera, index); the order does
/// not depend on the numeric labels, which keeps the mapping relabel-invariant.
fn appearance_order(predictions: &[AssignedDetection]) -> BTreeMap<u32, usize> {
    let mut first: BTreeMap<u32, (u32, u32, u32)> = BTreeMap::new();
    for p in predictions {
        let key = (p.t, p.camera_id, p.index);
        first
            .entry(p.global_id)
            .and_modify(|k| *k = (*k).min(key))
            .or_insert(key);
    }
    let mut ids: Vec<(u32, u32, u32, u32)> = first
        .into_iter()
        .map(|(g, (t, c, i))| (t, c, i, g))
        .collect();
    ids.sort_unstable();
    ids.into_iter()
        .enumerate()
        .map(|(rank, (.., g))| (g, rank))
        .collect()
}

/// Map ground-truth identities to global ids from the frame matches.
pub fn map_ids(
    matches: &Matches,
    predictions: &[AssignedDetection],
    mode: IdMapping,
) -> BTreeMap<u32, u32> {
    match mode {
        IdMapping::OptimalBijective => optimal_map(matches, predictions),
        IdMapping::FirstMatch => first_match_map(matches),
    }
}

fn optimal_map(matches: &Matches, predictions: &[AssignedDetection]) -> BTreeMap<u32, u32> {
    let order = appearance_order(predictions);
    let gt_ids: Vec<u32> = matches
        .pairs
        .iter()
        .map(|m| m.identity_id)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut gids: Vec<u32> = matches
        .pairs
        .iter()
        .map(|m| m.global_id)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    gids.sort_by_key(|g| order.get(g).copied().unwrap_or(usize::MAX));
    if gt_ids.is_empty() {
        return BTreeMap::new();
    }
    let gt_pos: BTreeMap<u32, usize> = gt_ids.iter().enumerate().map(|(i, &g)| (g, i)).collect();
    let gid_pos: BTreeMap<u32, usize> = gids.iter().enumerate().map(|(i, &g)| (g, i)).collect();
    let (n, m) = (gt_ids.len(), gids.len());
    let mut counts = vec![vec![0i64; m]; n];
    for p in &matches.pairs {
        counts[gt_pos[&p.identity_id]][gid_pos[&p.global_id]] += 1;
    }
    // total count first; among equal totals prefer low GT rows paired with
    // early-appearing global ids
    let scale = (n * m * n.min(m) + 1) as i64;
    let weight = |i: usize, j: usize| counts[i][j] * scale - (i * m + j) as i64;
    let transposed = n > m;
    let matrix = if transposed {
        Matrix::from_fn(m, n, |(j, i)| weight(i, j))
    } else {
        Matrix::from_fn(n, m, |(i, j)| weight(i, j))
    };
    let (_, assignment) = kuhn_munkres(&matrix);
    let mut map = BTreeMap::new();
    for (row, col) in assignment.into_iter().enumerate() {
        let (i, j) = if transposed { (col, row) } else { (row, col) };
        if counts[i][j] > 0 {
            map.insert(gt_ids[i], gids[j]);
        }
    }
    map
}

fn first_match_map(matches: &Matches) -> BTreeMap<u32, u32> {
    let mut ordered = matches.pairs.clone();
    ordered.sort_by_key(|m| (m.t, m.camera_id, m.identity_id));
    let mut map = BTreeMap::new();
    let mut taken = BTreeSet::new();
    for m in ordered {
        if map.contains_key(&m.identity_id) || taken.contains(&m.global_id) {
            continue;
        }
        map.insert(m.identity_id, m.global_id);
        taken.insert(m.global_id);
    }
    map
}

/// Changes of matched global id between consecutive matched steps of each
/// (camera, GT identity); unmatched gaps are skipped.
pub fn count_id_switches(matches: &Matches) -> usize {
    let mut last: BTreeMap<(u32, u32), u32> = BTreeMap::new();
    let mut ordered = matches.pairs.clone();
    ordered.sort_by_key(|m| (m.camera_id, m.identity_id, m.t));
    let mut switches = 0;
    for m in ordered {
        if let Some(prev) = last.insert((m.camera_id, m.identity_id), m.global_id) {
            if prev != m.global_id {
                switches += 1;
            }
        }
    }
    switches
}

pub fn id_switches(
    predictions: &[AssignedDetection],
    ground_truth: &[GroundTruthRecord],
    config: &EvalConfig,
) -> usize {
    count_id_switches(&match_frames(
        predictions,
        ground_truth,
        config.iou_threshold,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_camera_correct: BTreeMap<u32, u64>,
    pub per_camera_total: BTreeMap<u32, u64>,
    pub mtta_pct: f64,
    pub id_switches: usize,
    pub id_map: BTreeMap<u32, u32>,
    pub degenerate_boxes: usize,
}

impl EvalReport {
    /// Mean of per-camera correct/total ratios in percent, skipping cameras
    /// with no ground truth.
    pub fn mtta_from_counts(
        correct: &BTreeMap<u32, u64>,
        total: &BTreeMap<u32, u64>,
    ) -> Result<f64> {
        let ratios: Vec<f64> = total
            .iter()
            .filter(|(_, &n)| n > 0)
            .map(|(cam, &n)| correct.get(cam).copied().unwrap_or(0) as f64 / n as f64)
            .collect();
        if ratios.is_empty() {
            return Err(Error::UndefinedMetric(
                "no camera has ground-truth records".into(),
            ));
        }
        Ok(100.0 * ratios.iter().sum::<f64>() / ratios.len() as f64)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub const CSV_HEADER: &'static str = "scenario,seed,knobs,mtta_pct,id_switches";

    pub fn csv_row(&self, scenario: &str, seed: u64, knobs: &str) -> String {
        format!(
            "{scenario},{seed},{},{:.4},{}",
            csv_field(knobs),
            self.mtta_pct,
            self.id_switches
        )
    }
}

/// Quote a CSV field when it contains a separator or quote.
pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Evaluate predictions against ground truth.
pub fn mtta(
    predictions: &[AssignedDetection],
    ground_truth: &[GroundTruthRecord],
    config: &EvalConfig,
) -> Result<EvalReport> {
    config.validate()?;
    let matches = match_frames(predictions, ground_truth, config.iou_threshold);
    let id_map = map_ids(&matches, predictions, config.id_mapping);

    let mut per_camera_total: BTreeMap<u32, u64> = BTreeMap::new();
    for g in ground_truth {
        *per_camera_total.entry(g.camera_id).or_default() += 1;
    }
    let mut per_camera_correct: BTreeMap<u32, u64> =
        per_camera_total.keys().map(|&c| (c, 0)).collect();
    for m in &matches.pairs {
        if id_map.get(&m.identity_id) == Some(&m.global_id) {
            *per_camera_correct.entry(m.camera_id).or_default() += 1;
        }
    }
    let mtta_pct = EvalReport::mtta_from_counts(&per_camera_correct, &per_camera_total)?;
    Ok(EvalReport {
        per_camera_correct,
        per_camera_total,
        mtta_pct,
        id_switches: count_id_switches(&matches),
        id_map,
        degenerate_boxes: matches.degenerate_boxes,
    })
}
