//! Simulated person detector and appearance embedder.
//!
//! Detections are derived from ground truth through a noisy channel (misses,
//! corner jitter, sampled confidence, Poisson false positives) and gated on a
//! confidence threshold. Embeddings are identity prototypes on the unit sphere
//! perturbed by a per-camera bias and per-detection noise.
//!
//! All draws are keyed by `(seed, camera, frame content, identity)`, never by
//! the step index. A record's outcome does not depend on which other frames
//! were processed, and byte-identical frames yield identical detections and
//! embeddings, as a deterministic network would on identical pixels.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::geometry::BBox;
use crate::rng::{self, domain};
use crate::scenario::{FrameSlot, GroundTruthRecord};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub camera_id: u32,
    pub t: u32,
    /// Position among the detections of its frame.
    pub index: u32,
    pub bbox: BBox,
    pub confidence: f64,
    /// Ground-truth identity, `None` for false positives. Evaluation only.
    pub true_identity: Option<u32>,
    /// Fingerprint of the frame content the detection was made on.
    pub scene_key: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DetectionRef {
    pub camera_id: u32,
    pub t: u32,
    pub index: u32,
}

impl From<&Detection> for DetectionRef {
    fn from(d: &Detection) -> Self {
        Self {
            camera_id: d.camera_id,
            t: d.t,
            index: d.index,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub vector: Vec<f64>,
    pub detection_ref: DetectionRef,
}

impl Embedding {
    pub fn norm(&self) -> f64 {
        norm(&self.vector)
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerceptConfig {
    pub confidence_threshold: f64,
    /// Confidence is `1 - |N(0, confidence_sigma)|`, clamped to [0, 1].
    pub confidence_sigma: f64,
    pub miss_rate: f64,
    /// Expected spurious detections per frame.
    pub false_positive_rate: f64,
    /// Per-corner Gaussian jitter, pixels.
    pub bbox_jitter_sigma: f64,
    /// Expected norm of the per-detection embedding noise.
    pub embed_noise_sigma: f64,
    /// Norm of the per-camera embedding bias.
    pub camera_bias_sigma: f64,
    pub embed_dim: usize,
    pub seed: u64,
}

impl Default for PerceptConfig {
    fn default() -> Self {
        Self {
            confidence_threshold: 0.45,
            confidence_sigma: 0.2,
            miss_rate: 0.0,
            false_positive_rate: 0.0,
            bbox_jitter_sigma: 0.0,
            embed_noise_sigma: 0.15,
            camera_bias_sigma: 0.2,
            embed_dim: 512,
            seed: 0,
        }
    }
}

impl PerceptConfig {
    /// Perfect detector and embedder: every detection has confidence 1.
    pub fn noiseless() -> Self {
        Self {
            confidence_sigma: 0.0,
            embed_noise_sigma: 0.0,
            camera_bias_sigma: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.confidence_threshold) || !unit(self.miss_rate) {
            return Err(Error::Config(
                "confidence_threshold and miss_rate must lie in [0, 1]".into(),
            ));
        }
        let nonneg = |v: f64| v >= 0.0 && v.is_finite();
        if ![
            self.confidence_sigma,
            self.false_positive_rate,
            self.bbox_jitter_sigma,
            self.embed_noise_sigma,
            self.camera_bias_sigma,
        ]
        .into_iter()
        .all(nonneg)
        {
            return Err(Error::Config(
                "rates and sigmas must be non-negative".into(),
            ));
        }
        if self.embed_dim < 2 {
            return Err(Error::Config("embed_dim must be at least 2".into()));
        }
        Ok(())
    }
}

/// Fingerprint of a frame's content: its camera and the boxes painted on it.
///
/// A render is a pure function of the camera and its visible boxes, so equal
/// keys mean byte-identical frames.
pub fn scene_key(camera_id: u32, records: &[&GroundTruthRecord]) -> u64 {
    let mut parts = vec![domain::SCENE, camera_id as u64];
    for r in records {
        let b = r.bbox;
        parts.extend([
            r.identity_id as u64,
            b.x_min.to_bits(),
            b.y_min.to_bits(),
            b.x_max.to_bits(),
            b.y_max.to_bits(),
        ]);
    }
    rng::mix(&parts)
}

fn sample_confidence(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    let z: f64 = rng.sample::<f64, _>(StandardNormal) * sigma;
    (1.0 - z.abs()).clamp(0.0, 1.0)
}

fn jitter(bbox: BBox, sigma: f64, width: u32, height: u32, rng: &mut ChaCha8Rng) -> BBox {
    if sigma == 0.0 {
        return bbox;
    }
    let normal = Normal::new(0.0, sigma).expect("sigma validated");
    let mut j = || normal.sample(rng);
    let raw = BBox::new(
        bbox.x_min + j(),
        bbox.y_min + j(),
        bbox.x_max + j(),
        bbox.y_max + j(),
    );
    let (w, h) = (width as f64, height as f64);
    let mut out = BBox::new(
        raw.x_min.min(raw.x_max),
        raw.y_min.min(raw.y_max),
        raw.x_min.max(raw.x_max),
        raw.y_min.max(raw.y_max),
    )
    .clip(w, h);
    // keep at least one pixel of extent
    if out.width() < 1.0 {
        out.x_max = (out.x_min + 1.0).min(w);
        out.x_min = out.x_max - 1.0;
    }
    if out.height() < 1.0 {
        out.y_max = (out.y_min + 1.0).min(h);
        out.y_min = out.y_max - 1.0;
    }
    out
}

/// Run the simulated detector over `frames`.
///
/// Ground-truth records whose frame is not listed are ignored. Output is
/// ordered by `(camera_id, t)`; true detections precede false positives within
/// a frame and `index` numbers them.
pub fn simulate_detections(
    gt: &[GroundTruthRecord],
    frames: &[FrameSlot],
    config: &PerceptConfig,
) -> Result<Vec<Detection>> {
    config.validate()?;
    let mut by_frame: BTreeMap<(u32, u32), (FrameSlot, Vec<&GroundTruthRecord>)> = frames
        .iter()
        .map(|s| ((s.camera_id, s.t), (*s, Vec::new())))
        .collect();
    for rec in gt {
        if let Some((_, recs)) = by_frame.get_mut(&(rec.camera_id, rec.t)) {
            recs.push(rec);
        }
    }
    let poisson = (config.false_positive_rate > 0.0)
        .then(|| Poisson::new(config.false_positive_rate).expect("rate validated"));

    let mut out = Vec::new();
    for ((camera_id, t), (slot, mut recs)) in by_frame {
        recs.sort_by_key(|r| r.identity_id);
        let scene = scene_key(camera_id, &recs);
        let mut index = 0u32;
        for rec in recs {
            let mut rng = rng::keyed(&[
                config.seed,
                domain::DETECTION,
                scene,
                rec.identity_id as u64,
            ]);
            let missed = rng.random::<f64>() < config.miss_rate;
            let bbox = jitter(
                rec.bbox,
                config.bbox_jitter_sigma,
                slot.width,
                slot.height,
                &mut rng,
            );
            let confidence = sample_confidence(&mut rng, config.confidence_sigma);
            if missed || confidence < config.confidence_threshold {
                continue;
            }
            out.push(Detection {
                camera_id,
                t,
                index,
                bbox,
                confidence,
                true_identity: Some(rec.identity_id),
                scene_key: scene,
            });
            index += 1;
        }
        if let Some(poisson) = &poisson {
            let mut rng = rng::keyed(&[config.seed, domain::FALSE_POSITIVE, scene]);
            let count = poisson.sample(&mut rng) as u32;
            for _ in 0..count {
                let (w, h) = (slot.width as f64, slot.height as f64);
                let bw = (w * rng.random_range(0.05..0.25)).max(1.0);
                let bh = (h * rng.random_range(0.05..0.25)).max(1.0);
                let x = rng.random::<f64>() * (w - bw).max(0.0);
                let y = rng.random::<f64>() * (h - bh).max(0.0);
                let confidence = sample_confidence(&mut rng, config.confidence_sigma);
                if confidence < config.confidence_threshold {
                    continue;
                }
                out.push(Detection {
                    camera_id,
                    t,
                    index,
                    bbox: BBox::new(x, y, x + bw, y + bh),
                    confidence,
                    true_identity: None,
                    scene_key: scene,
                });
                index += 1;
            }
        }
    }
    Ok(out)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let n = norm(&v);
    v.iter_mut().for_each(|x| *x /= n);
    v
}

fn gaussian_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v = gaussian_vector(rng, dim);
        if norm(&v) > 1e-12 {
            return normalize(v);
        }
    }
}

/// Seeded unit prototype of an identity.
pub fn prototype(identity: u32, config: &PerceptConfig) -> Vec<f64> {
    random_unit(
        &mut rng::keyed(&[config.seed, domain::PROTOTYPE, identity as u64]),
        config.embed_dim,
    )
}

/// Seeded unit bias direction of a camera.
pub fn camera_bias(camera_id: u32, config: &PerceptConfig) -> Vec<f64> {
    random_unit(
        &mut rng::keyed(&[config.seed, domain::CAMERA_BIAS, camera_id as u64]),
        config.embed_dim,
    )
}

/// Unit-norm appearance vector of a detection.
///
/// True detections get `normalize(p + sigma_b * b_cam + sigma_n * n)` where the
/// noise `n` is isotropic Gaussian scaled to unit expected squared norm, so the
/// noise magnitude does not depend on `embed_dim`. False positives get a fresh
/// random unit vector.
pub fn embed_detection(det: &Detection, config: &PerceptConfig) -> Embedding {
    let dim = config.embed_dim;
    let mut rng = rng::keyed(&[
        config.seed,
        domain::EMBED_NOISE,
        det.scene_key,
        det.index as u64,
        det.true_identity.map_or(u64::MAX, |i| i as u64),
    ]);
    let vector = match det.true_identity {
        None => random_unit(&mut rng, dim),
        Some(identity) => {
            let mut v = prototype(identity, config);
            if config.camera_bias_sigma > 0.0 {
                let bias = camera_bias(det.camera_id, config);
                v.iter_mut()
                    .zip(&bias)
                    .for_each(|(x, b)| *x += config.camera_bias_sigma * b);
            }
            if config.embed_noise_sigma > 0.0 {
                let scale = config.embed_noise_sigma / (dim as f64).sqrt();
                let noise = gaussian_vector(&mut rng, dim);
                v.iter_mut().zip(&noise).for_each(|(x, n)| *x += scale * n);
            }
            if config.camera_bias_sigma > 0.0 || config.embed_noise_sigma > 0.0 {
                normalize(v)
            } else {
                v
            }
        }
    };
    Embedding {
        vector,
        detection_ref: det.into(),
    }
}

pub fn embed_all(dets: &[Detection], config: &PerceptConfig) -> Vec<Embedding> {
    dets.iter().map(|d| embed_detection(d, config)).collect()
}

/// Checkpoint line for one detection and its embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub detection: Detection,
    pub embedding: Vec<f64>,
}

/// Line-delimited JSON, one record per detection.
pub fn to_jsonl(dets: &[Detection], embeddings: &[Embedding]) -> Result<String> {
    if dets.len() != embeddings.len() {
        return Err(Error::Shape(
            "detections and embeddings differ in length".into(),
        ));
    }
    let mut out = String::new();
    for (d, e) in dets.iter().zip(embeddings) {
        out.push_str(&serde_json::to_string(&DetectionRecord {
            detection: *d,
            embedding: e.vector.clone(),
        })?);
        out.push('\n');
    }
    Ok(out)
}

pub fn from_jsonl(text: &str) -> Result<(Vec<Detection>, Vec<Embedding>)> {
    let mut dets = Vec::new();
    let mut embs = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let rec: DetectionRecord = serde_json::from_str(line)?;
        embs.push(Embedding {
            vector: rec.embedding,
            detection_ref: (&rec.detection).into(),
        });
        dets.push(rec.detection);
    }
    Ok((dets, embs))
}
