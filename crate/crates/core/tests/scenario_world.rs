//! World generation, projection and rendering checked against geometric oracles.

use std::collections::BTreeMap;

use xcam_core::geometry::PixelRect;
use xcam_core::scenario::{
    generate_scenario, project_to_camera, CameraModel, ScenarioConfig, WorldScenario,
};

fn overlapping(identities: u32, steps: u32) -> ScenarioConfig {
    ScenarioConfig {
        identity_count: identities,
        duration_steps: steps,
        ..ScenarioConfig::default()
    }
}

#[test]
fn same_seed_same_bytes_different_seed_different_world() {
    let config = overlapping(3, 100);
    let a = generate_scenario(&config, 42).unwrap();
    let b = generate_scenario(&config, 42).unwrap();
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    assert_eq!(a.content_hash().unwrap(), b.content_hash().unwrap());
    let c = generate_scenario(&config, 43).unwrap();
    assert_ne!(a.content_hash().unwrap(), c.content_hash().unwrap());
    let parsed = WorldScenario::from_json(&a.to_json().unwrap()).unwrap();
    assert_eq!(parsed, a);
}

#[test]
fn ground_truth_equals_the_projection_oracle() {
    for seed in 0..5 {
        let world = generate_scenario(&overlapping(4, 60), seed).unwrap();
        let mut expected = Vec::new();
        for cam in &world.cameras {
            for t in 0..world.duration_steps {
                for who in &world.identities {
                    let pos = who.trajectory[t as usize];
                    if let Some(b) = project_to_camera(cam, pos, who.body_size) {
                        assert!(cam.sees(pos));
                        expected.push((cam.id, t, who.id, b));
                    }
                }
            }
        }
        expected.sort_by_key(|e| (e.0, e.1, e.2));
        let gt = world.ground_truth();
        let got: Vec<_> = gt
            .iter()
            .map(|g| (g.camera_id, g.t, g.identity_id, g.bbox))
            .collect();
        assert_eq!(got, expected, "seed {seed}");
        for g in &gt {
            let cam = world.camera(g.camera_id).unwrap();
            assert!(g.bbox.x_min >= 0.0 && g.bbox.y_min >= 0.0);
            assert!(g.bbox.x_max <= cam.image_width as f64);
            assert!(g.bbox.y_max <= cam.image_height as f64);
            assert!(g.bbox.x_min < g.bbox.x_max && g.bbox.y_min < g.bbox.y_max);
        }
    }
}

#[test]
fn trajectories_stay_inside_the_arena() {
    let world = generate_scenario(&overlapping(6, 300), 9).unwrap();
    for who in &world.identities {
        assert_eq!(who.trajectory.len(), 300);
        for p in &who.trajectory {
            assert!((0.0..=world.arena_width).contains(&p[0]));
            assert!((0.0..=world.arena_height).contains(&p[1]));
        }
    }
}

#[test]
fn shared_view_yields_records_in_both_cameras() {
    let world = generate_scenario(&overlapping(5, 200), 3).unwrap();
    let gt = world.ground_truth();
    let mut seen: BTreeMap<(u32, u32), Vec<u32>> = BTreeMap::new();
    for g in &gt {
        seen.entry((g.identity_id, g.t))
            .or_default()
            .push(g.camera_id);
    }
    let mut shared = 0;
    for who in &world.identities {
        for t in 0..world.duration_steps {
            let pos = who.trajectory[t as usize];
            let viewers: Vec<u32> = world
                .cameras
                .iter()
                .filter(|c| c.sees(pos))
                .map(|c| c.id)
                .collect();
            if viewers.len() == 2 {
                shared += 1;
                assert_eq!(seen.get(&(who.id, t)), Some(&viewers));
            }
        }
    }
    assert!(
        shared > 0,
        "no step ever had an identity in the shared view"
    );
}

#[test]
fn static_identity_in_the_overlap_appears_in_both_cameras_every_step() {
    let config = ScenarioConfig {
        identity_count: 1,
        duration_steps: 10,
        speed: 0.0,
        start_positions: vec![[48.0, 32.0]],
        ..ScenarioConfig::default()
    };
    let world = generate_scenario(&config, 1).unwrap();
    let gt = world.ground_truth();
    assert_eq!(gt.len(), 20);
    assert!(gt.iter().all(|g| g.fully_visible));
}

#[test]
fn one_identity_paints_exactly_its_box() {
    let config = ScenarioConfig {
        identity_count: 1,
        duration_steps: 3,
        speed: 0.0,
        start_positions: vec![[20.0, 30.0]],
        cameras: vec![CameraModel::covering(0, 0.0, 0.0, 64.0, 64.0, 2.0)],
        ..ScenarioConfig::default()
    };
    let world = generate_scenario(&config, 5).unwrap();
    let background = world.background(0).unwrap();
    let gt = world.ground_truth();
    assert_eq!(gt.len(), 3);
    let frames = world.render_camera(0).unwrap();
    assert_eq!(frames[0].pixels, frames[1].pixels);
    let frame = &frames[0];
    let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0, 0);
    for y in 0..frame.height {
        for x in 0..frame.width {
            if frame.get(x, y) != background.get(x, y) {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x + 1);
                y1 = y1.max(y + 1);
            }
        }
    }
    let diff = PixelRect::new(x0, y0, x1, y1);
    assert_eq!(
        Some(diff),
        gt[0].bbox.to_pixel_rect(frame.width, frame.height)
    );
    // The painted region is solid, so the bounding rectangle is the region.
    let value = frame.get(x0, y0);
    for y in y0..y1 {
        for x in x0..x1 {
            assert_eq!(frame.get(x, y), value);
        }
    }
    assert_eq!(world.render_frame(0, 2).unwrap().pixels, frame.pixels);
}

#[test]
fn empty_world_has_no_ground_truth_and_renders_background() {
    let config = ScenarioConfig {
        identity_count: 0,
        duration_steps: 10,
        ..ScenarioConfig::default()
    };
    let world = generate_scenario(&config, 1).unwrap();
    assert!(world.ground_truth().is_empty());
    for cam in &world.cameras {
        let bg = world.background(cam.id).unwrap();
        for f in world.render_camera(cam.id).unwrap() {
            assert_eq!(f.pixels, bg.pixels);
        }
    }
}
