//! Frame redundancy filtering with SSIM and normalized MSE.
//!
//! Two mechanisms share one [`FilterPolicy`]:
//!
//! - duplicate drop: within a camera, a frame that is nearly identical to the
//!   last kept frame (high SSIM *and* low nMSE) is dropped;
//! - dissimilar drop: across cameras, a frame that falls outside the retention
//!   band against every co-temporal peer is dropped.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::scenario::Frame;
use crate::{Error, Result};

const SSIM_WINDOW: u32 = 8;
const DYNAMIC_RANGE: f64 = 255.0;
const C1: f64 = (0.01 * DYNAMIC_RANGE) * (0.01 * DYNAMIC_RANGE);
const C2: f64 = (0.03 * DYNAMIC_RANGE) * (0.03 * DYNAMIC_RANGE);

/// Mean SSIM over non-overlapping 8x8 windows, partial edge windows included.
pub fn ssim(a: &Frame, b: &Frame) -> Result<f64> {
    a.same_shape(b)?;
    if a.is_empty() {
        return Err(Error::Shape("empty frame".into()));
    }
    let (w, h) = (a.width, a.height);
    let mut total = 0.0;
    let mut windows = 0usize;
    for wy in (0..h).step_by(SSIM_WINDOW as usize) {
        for wx in (0..w).step_by(SSIM_WINDOW as usize) {
            let (x1, y1) = ((wx + SSIM_WINDOW).min(w), (wy + SSIM_WINDOW).min(h));
            let n = ((x1 - wx) * (y1 - wy)) as f64;
            let (mut sa, mut sb) = (0.0, 0.0);
            for y in wy..y1 {
                for x in wx..x1 {
                    sa += a.get(x, y) as f64;
                    sb += b.get(x, y) as f64;
                }
            }
            let (mu_a, mu_b) = (sa / n, sb / n);
            let (mut vaa, mut vbb, mut vab) = (0.0, 0.0, 0.0);
            for y in wy..y1 {
                for x in wx..x1 {
                    let da = a.get(x, y) as f64 - mu_a;
                    let db = b.get(x, y) as f64 - mu_b;
                    vaa += da * da;
                    vbb += db * db;
                    vab += da * db;
                }
            }
            let (vaa, vbb, vab) = (vaa / n, vbb / n, vab / n);
            total += ((2.0 * mu_a * mu_b + C1) * (2.0 * vab + C2))
                / ((mu_a * mu_a + mu_b * mu_b + C1) * (vaa + vbb + C2));
            windows += 1;
        }
    }
    Ok(total / windows as f64)
}

/// Mean of `((a - b) / 255)^2` over all pixels.
pub fn nmse(a: &Frame, b: &Frame) -> Result<f64> {
    a.same_shape(b)?;
    if a.is_empty() {
        return Err(Error::Shape("empty frame".into()));
    }
    let sum: u64 = a
        .pixels
        .iter()
        .zip(&b.pixels)
        .map(|(&x, &y)| {
            let d = x.abs_diff(y) as u64;
            d * d
        })
        .sum();
    Ok(sum as f64 / (DYNAMIC_RANGE * DYNAMIC_RANGE) / a.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FilterScope {
    #[default]
    WithinCamera,
    CrossCamera,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterPolicy {
    /// Retention band lower bound on SSIM.
    pub ssim_min: f64,
    /// Retention band upper bound on nMSE.
    pub nmse_max: f64,
    pub duplicate_ssim_min: f64,
    pub duplicate_nmse_max: f64,
    pub scope: FilterScope,
}

impl Default for FilterPolicy {
    fn default() -> Self {
        Self {
            ssim_min: 0.30,
            nmse_max: 0.146,
            duplicate_ssim_min: 0.98,
            duplicate_nmse_max: 0.0005,
            scope: FilterScope::WithinCamera,
        }
    }
}

impl FilterPolicy {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if ![
            self.ssim_min,
            self.nmse_max,
            self.duplicate_ssim_min,
            self.duplicate_nmse_max,
        ]
        .into_iter()
        .all(unit)
        {
            return Err(Error::Config("filter thresholds must lie in [0, 1]".into()));
        }
        if self.duplicate_ssim_min < self.ssim_min {
            return Err(Error::Config(
                "duplicate_ssim_min must be >= ssim_min".into(),
            ));
        }
        if self.duplicate_nmse_max > self.nmse_max {
            return Err(Error::Config(
                "duplicate_nmse_max must be <= nmse_max".into(),
            ));
        }
        Ok(())
    }

    fn is_duplicate(&self, ssim: f64, nmse: f64) -> bool {
        ssim >= self.duplicate_ssim_min && nmse <= self.duplicate_nmse_max
    }

    fn in_band(&self, ssim: f64, nmse: f64) -> bool {
        ssim >= self.ssim_min && nmse <= self.nmse_max
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FrameKey {
    pub camera_id: u32,
    pub t: u32,
}

impl From<&Frame> for FrameKey {
    fn from(f: &Frame) -> Self {
        Self {
            camera_id: f.camera_id,
            t: f.t,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    Duplicate,
    Dissimilar,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    /// The frame being judged.
    pub frame: FrameKey,
    /// The frame it was compared against.
    pub reference: FrameKey,
    pub ssim: f64,
    pub nmse: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub kept: Vec<FrameKey>,
    pub dropped: Vec<(FrameKey, DropReason)>,
    pub pair_scores: Vec<PairScore>,
}

impl FilterReport {
    pub fn total(&self) -> usize {
        self.kept.len() + self.dropped.len()
    }

    pub fn drop_fraction(&self) -> f64 {
        if self.total() == 0 {
            0.0
        } else {
            self.dropped.len() as f64 / self.total() as f64
        }
    }

    pub fn is_kept(&self, key: FrameKey) -> bool {
        self.kept.binary_search(&key).is_ok()
    }

    /// One row per input frame: `camera_id,t,kept,reason,ssim,nmse`.
    ///
    /// The scores are those of the comparison that decided the frame (the last
    /// kept frame for duplicate checks, the best co-temporal peer for band
    /// checks); both are empty for frames that were never compared.
    pub fn to_csv(&self) -> String {
        let mut rows: BTreeMap<FrameKey, (bool, Option<DropReason>)> = BTreeMap::new();
        for k in &self.kept {
            rows.insert(*k, (true, None));
        }
        for (k, r) in &self.dropped {
            rows.insert(*k, (false, Some(*r)));
        }
        let mut scores: BTreeMap<FrameKey, &PairScore> = BTreeMap::new();
        for s in &self.pair_scores {
            scores
                .entry(s.frame)
                .and_modify(|cur| {
                    if s.frame.camera_id == s.reference.camera_id || s.ssim > cur.ssim {
                        *cur = s
                    }
                })
                .or_insert(s);
        }
        let mut out = String::from("camera_id,t,kept,reason,ssim,nmse\n");
        for (k, (kept, reason)) in rows {
            let reason = match reason {
                Some(DropReason::Duplicate) => "duplicate",
                Some(DropReason::Dissimilar) => "dissimilar",
                None => "",
            };
            let (ssim, nmse) = scores
                .get(&k)
                .map(|s| (format!("{:.6}", s.ssim), format!("{:.6}", s.nmse)))
                .unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                k.camera_id, k.t, kept, reason, ssim, nmse
            );
        }
        out
    }
}

/// Filter per-camera, time-ordered frame streams.
///
/// `streams` holds one vector per camera. Cross-camera peers of a frame are all
/// input frames from other cameras with the same `t`, whether or not those
/// peers were themselves dropped. A frame with no peers passes the band check.
pub fn filter_stream(streams: &[Vec<Frame>], policy: &FilterPolicy) -> Result<FilterReport> {
    policy.validate()?;
    for stream in streams {
        if stream.windows(2).any(|w| w[1].t <= w[0].t) {
            return Err(Error::Argument(
                "frames must be strictly time-ordered within each camera".into(),
            ));
        }
        if stream.windows(2).any(|w| w[1].camera_id != w[0].camera_id) {
            return Err(Error::Argument("a stream must hold a single camera".into()));
        }
    }

    let mut decided: BTreeMap<FrameKey, Option<DropReason>> = BTreeMap::new();
    let mut pair_scores = Vec::new();

    let within = matches!(policy.scope, FilterScope::WithinCamera | FilterScope::Both);
    let cross = matches!(policy.scope, FilterScope::CrossCamera | FilterScope::Both);

    for stream in streams {
        let mut reference: Option<&Frame> = None;
        for frame in stream {
            let key = FrameKey::from(frame);
            let mut reason = None;
            if within {
                if let Some(r) = reference {
                    let (s, m) = (ssim(frame, r)?, nmse(frame, r)?);
                    pair_scores.push(PairScore {
                        frame: key,
                        reference: r.into(),
                        ssim: s,
                        nmse: m,
                    });
                    if policy.is_duplicate(s, m) {
                        reason = Some(DropReason::Duplicate);
                    }
                }
            }
            if reason.is_none() {
                reference = Some(frame);
            }
            decided.insert(key, reason);
        }
    }

    if cross {
        let mut by_time: BTreeMap<u32, Vec<&Frame>> = BTreeMap::new();
        for frame in streams.iter().flatten() {
            by_time.entry(frame.t).or_default().push(frame);
        }
        let firsts: Vec<FrameKey> = streams
            .iter()
            .filter_map(|s| s.first().map(FrameKey::from))
            .collect();
        for frames in by_time.values() {
            for frame in frames {
                let key = FrameKey::from(*frame);
                let peers: Vec<_> = frames
                    .iter()
                    .filter(|p| p.camera_id != frame.camera_id)
                    .collect();
                let mut any_in_band = peers.is_empty();
                for peer in peers {
                    if !peer.same_shape(frame).is_ok() {
                        continue;
                    }
                    let (s, m) = (ssim(frame, peer)?, nmse(frame, peer)?);
                    pair_scores.push(PairScore {
                        frame: key,
                        reference: (*peer).into(),
                        ssim: s,
                        nmse: m,
                    });
                    any_in_band |= policy.in_band(s, m);
                }
                let entry = decided.get_mut(&key).expect("frame recorded above");
                if entry.is_none() && !any_in_band && !firsts.contains(&key) {
                    *entry = Some(DropReason::Dissimilar);
                }
            }
        }
    }

    let mut report = FilterReport {
        pair_scores,
        ..FilterReport::default()
    };
    for (key, reason) in decided {
        match reason {
            None => report.kept.push(key),
            Some(r) => report.dropped.push((key, r)),
        }
    }
    Ok(report)
}
