//! Seeded statistical checks of the simulated detector and embedder.

use statrs::distribution::{ContinuousCDF, Normal};
use xcam_core::associate::cosine;
use xcam_core::percept::{
    embed_all, embed_detection, prototype, simulate_detections, Detection, PerceptConfig,
};
use xcam_core::scenario::{FrameSlot, GroundTruthRecord};
use xcam_core::BBox;

const WIDTH: u32 = 200;
const HEIGHT: u32 = 100;

/// `frames` frames per camera, each holding `per_frame` well-separated people.
///
/// Boxes drift by a hair every step so every frame has distinct content;
/// identical frames would share all their noise draws.
fn ground_truth(
    cameras: u32,
    frames: u32,
    per_frame: u32,
) -> (Vec<GroundTruthRecord>, Vec<FrameSlot>) {
    let mut gt = Vec::new();
    let mut slots = Vec::new();
    for camera_id in 0..cameras {
        for t in 0..frames {
            slots.push(FrameSlot {
                camera_id,
                t,
                width: WIDTH,
                height: HEIGHT,
            });
            for k in 0..per_frame {
                let x = 5.0 + 20.0 * k as f64 + 1e-3 * t as f64;
                gt.push(GroundTruthRecord {
                    camera_id,
                    t,
                    identity_id: k + 1,
                    bbox: BBox::new(x, 20.0, x + 10.0, 60.0),
                    fully_visible: true,
                });
            }
        }
    }
    (gt, slots)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Probability a record survives the miss draw and the confidence gate, with
/// confidence `1 - |N(0, sigma)|`.
fn retention_oracle(config: &PerceptConfig) -> f64 {
    let z = Normal::new(0.0, config.confidence_sigma).unwrap();
    let margin = 1.0 - config.confidence_threshold;
    let passes = z.cdf(margin) - z.cdf(-margin);
    (1.0 - config.miss_rate) * passes
}

#[test]
fn emitted_fraction_matches_closed_form_retention() {
    let (gt, slots) = ground_truth(2, 2500, 8);
    for (miss, threshold, sigma) in [(0.2, 0.45, 0.2), (0.2, 0.75, 0.2), (0.0, 0.9, 0.1)] {
        let config = PerceptConfig {
            miss_rate: miss,
            confidence_threshold: threshold,
            confidence_sigma: sigma,
            seed: 11,
            ..PerceptConfig::default()
        };
        let dets = simulate_detections(&gt, &slots, &config).unwrap();
        assert!(dets.iter().all(|d| d.true_identity.is_some()));
        assert!(dets.iter().all(|d| d.confidence >= threshold));
        let ratio = dets.len() as f64 / gt.len() as f64;
        let expected = retention_oracle(&config);
        assert!(
            (ratio - expected).abs() <= 0.02,
            "miss {miss} gate {threshold}: emitted {ratio:.4}, expected {expected:.4}"
        );
    }
}

#[test]
fn false_positive_count_tracks_the_poisson_mean() {
    let (gt, slots) = ground_truth(2, 2500, 1);
    let config = PerceptConfig {
        false_positive_rate: 0.3,
        confidence_sigma: 0.0,
        seed: 5,
        ..PerceptConfig::default()
    };
    let dets = simulate_detections(&gt, &slots, &config).unwrap();
    let spurious: Vec<_> = dets.iter().filter(|d| d.true_identity.is_none()).collect();
    assert_eq!(dets.len() - spurious.len(), gt.len());
    assert!(spurious.iter().all(|d| !d.bbox.is_degenerate()));
    let per_frame = spurious.len() as f64 / slots.len() as f64;
    // Standard error of the mean is sqrt(0.3 / 5000) ~ 0.008.
    assert!((per_frame - 0.3).abs() < 0.03, "{per_frame}");
}

#[test]
fn box_jitter_has_the_configured_spread() {
    let (gt, slots) = ground_truth(1, 2000, 4);
    let config = PerceptConfig {
        bbox_jitter_sigma: 1.5,
        confidence_sigma: 0.0,
        seed: 2,
        ..PerceptConfig::default()
    };
    let dets = simulate_detections(&gt, &slots, &config).unwrap();
    assert_eq!(dets.len(), gt.len());
    // Boxes sit well inside the frame, so clipping never bites.
    let offsets: Vec<f64> = dets
        .iter()
        .zip(&gt)
        .flat_map(|(d, g)| [d.bbox.x_min - g.bbox.x_min, d.bbox.y_max - g.bbox.y_max])
        .collect();
    let m = mean(&offsets);
    let sd = (offsets.iter().map(|o| (o - m).powi(2)).sum::<f64>() / offsets.len() as f64).sqrt();
    assert!(m.abs() < 0.05, "bias {m}");
    assert!((sd - 1.5).abs() < 0.05, "spread {sd}");
}

#[test]
fn distinct_identity_prototypes_are_nearly_orthogonal() {
    let config = PerceptConfig::default();
    let mut worst: f64 = 0.0;
    for k in 0..1000u32 {
        let a = prototype(2 * k + 1, &config);
        let b = prototype(2 * k + 2, &config);
        worst = worst.max(cosine(&a, &b).unwrap().abs());
    }
    assert!(worst < 0.2, "max |cosine| over 1000 pairs = {worst}");
}

fn detection(camera_id: u32, t: u32, identity: u32) -> Detection {
    Detection {
        camera_id,
        t,
        index: 0,
        bbox: BBox::new(0.0, 0.0, 10.0, 10.0),
        confidence: 1.0,
        true_identity: Some(identity),
        scene_key: xcam_core::rng::mix(&[camera_id as u64, t as u64]),
    }
}

/// Mean cosine between cross-camera sightings of one identity, and between
/// different identities.
fn intra_inter(config: &PerceptConfig) -> (f64, f64) {
    let mut intra = Vec::new();
    let mut inter = Vec::new();
    for k in 1..=40u32 {
        for t in 0..10 {
            let a = embed_detection(&detection(0, t, k), config);
            let b = embed_detection(&detection(1, t, k), config);
            let c = embed_detection(&detection(1, t, k + 1), config);
            intra.push(cosine(&a.vector, &b.vector).unwrap());
            inter.push(cosine(&a.vector, &c.vector).unwrap());
        }
    }
    (mean(&intra), mean(&inter))
}

#[test]
fn default_sigmas_separate_identities() {
    let (intra, inter) = intra_inter(&PerceptConfig::default());
    assert!(intra > 0.7, "mean intra-identity cosine {intra}");
    assert!(inter < 0.5, "mean inter-identity cosine {inter}");
}

#[test]
fn intra_identity_similarity_falls_as_noise_rises() {
    let means: Vec<f64> = (0..=10)
        .map(|i| {
            let config = PerceptConfig {
                embed_noise_sigma: 0.05 * i as f64,
                camera_bias_sigma: 0.0,
                ..PerceptConfig::default()
            };
            intra_inter(&config).0
        })
        .collect();
    assert_eq!(means[0], 1.0);
    assert!(
        means.windows(2).all(|w| w[1] < w[0]),
        "not strictly decreasing: {means:?}"
    );
}

#[test]
fn embeddings_are_unit_norm_and_deterministic() {
    let (gt, slots) = ground_truth(2, 50, 4);
    let config = PerceptConfig {
        false_positive_rate: 0.5,
        miss_rate: 0.1,
        embed_noise_sigma: 0.4,
        seed: 8,
        ..PerceptConfig::default()
    };
    let dets = simulate_detections(&gt, &slots, &config).unwrap();
    let embs = embed_all(&dets, &config);
    assert_eq!(embs.len(), dets.len());
    for (d, e) in dets.iter().zip(&embs) {
        assert!((e.norm() - 1.0).abs() < 1e-9);
        assert_eq!(e.dim(), 512);
        assert_eq!(*e, embed_detection(d, &config));
    }
    assert_eq!(dets, simulate_detections(&gt, &slots, &config).unwrap());
}

#[test]
fn identical_frames_get_identical_detections() {
    // A frozen world: every step shows the same boxes.
    let mut gt = Vec::new();
    let mut slots = Vec::new();
    for t in 0..20 {
        slots.push(FrameSlot {
            camera_id: 0,
            t,
            width: WIDTH,
            height: HEIGHT,
        });
        for k in 0..3u32 {
            let x = 10.0 + 30.0 * k as f64;
            gt.push(GroundTruthRecord {
                camera_id: 0,
                t,
                identity_id: k + 1,
                bbox: BBox::new(x, 10.0, x + 12.0, 50.0),
                fully_visible: true,
            });
        }
    }
    let config = PerceptConfig {
        miss_rate: 0.3,
        false_positive_rate: 1.0,
        bbox_jitter_sigma: 1.0,
        embed_noise_sigma: 0.3,
        seed: 6,
        ..PerceptConfig::default()
    };
    let dets = simulate_detections(&gt, &slots, &config).unwrap();
    let embs = embed_all(&dets, &config);
    let at = |t: u32| -> Vec<_> {
        dets.iter()
            .zip(&embs)
            .filter(|(d, _)| d.t == t)
            .map(|(d, e)| {
                (
                    d.index,
                    d.bbox,
                    d.confidence,
                    d.true_identity,
                    e.vector.clone(),
                )
            })
            .collect()
    };
    let first = at(0);
    assert!(!first.is_empty());
    for t in 1..20 {
        assert_eq!(at(t), first, "t={t}");
    }
}
