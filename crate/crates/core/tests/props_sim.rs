use std::sync::Arc;

use proptest::prelude::*;

use beliefnav::belief::DetectionRange;
use beliefnav::geometry::{back_project, CameraModel, ImagePoint, Pose};
use beliefnav::providers::{ConceptWorldModel, LandmarkTable, ProviderSet, SyntheticDetectorConfig};
use beliefnav::runner::{run_episode, spl, EpisodeConfig, PlannerMode, Termination};
use beliefnav::simenv::{generate_scene, Action, GeneratorConfig, Scene, SimConfig};
use beliefnav::{CameraIntrinsics, NO_LABEL};

fn scene(seed: u64) -> Scene {
    let sim = SimConfig::default();
    Scene::new(generate_scene(seed, &GeneratorConfig::default(), &sim).unwrap(), sim).unwrap()
}

fn providers() -> ProviderSet {
    ProviderSet::synthetic(
        Arc::new(ConceptWorldModel::builtin()),
        LandmarkTable::builtin(),
        DetectionRange::default(),
        SyntheticDetectorConfig::default(),
    )
}

fn action(k: u8) -> Action {
    match k % 6 {
        0 | 1 | 2 => Action::MoveForward,
        3 => Action::TurnLeft,
        4 => Action::TurnRight,
        _ => Action::LookDown,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn rendered_depth_lands_on_labelled_boxes(seed in 0u64..50, yaw_steps in 0i32..12, pitch in -0.5f64..0.5) {
        let sc = scene(seed);
        let spawn = sc.spec().spawns[0];
        let pose = Pose::new(spawn.pose().position, yaw_steps as f64 * 30f64.to_radians(), pitch, 0.0).unwrap();
        let intr = CameraIntrinsics::with_hfov(24, 18, 79f64.to_radians(), 0.88);
        let obs = sc.render(&pose, &CameraModel::new(intr).unwrap());
        let far = sc.config().far_clip;
        for row in 0..18 {
            for col in 0..24 {
                let i = row * 24 + col;
                let d = obs.depth[i];
                if obs.labels[i] == NO_LABEL {
                    prop_assert_eq!(d, 0.0);
                    continue;
                }
                prop_assert!(d > 0.0 && d <= far);
                let p = back_project(ImagePoint::pixel_center(col, row), d, &pose, &intr).unwrap();
                let label = obs.label_name(obs.labels[i]).unwrap();
                let on_surface = sc.spec().boxes.iter().filter(|b| b.label == label).any(|b| {
                    let inside = (0..3).all(|k| p[k] >= b.min[k] - 1e-6 && p[k] <= b.max[k] + 1e-6);
                    let face = (0..3).any(|k| (p[k] - b.min[k]).abs() < 1e-6 || (p[k] - b.max[k]).abs() < 1e-6);
                    inside && face
                });
                prop_assert!(on_surface, "pixel {i} at {p:?} is not on a `{label}` box");
            }
        }
    }

    #[test]
    fn steps_never_enter_obstacles(seed in 0u64..50, actions in proptest::collection::vec(any::<u8>(), 1..120)) {
        let sc = scene(seed);
        let mut pose = sc.spec().spawns[0].pose();
        for k in actions {
            let a = action(k);
            let out = sc.step(&pose, a);
            prop_assert!(!sc.collides(out.pose.position.x, out.pose.position.y));
            if out.collided {
                prop_assert_eq!(a, Action::MoveForward);
                prop_assert_eq!(out.pose, pose);
            } else if a == Action::MoveForward {
                let moved = (out.pose.position - pose.position).norm();
                prop_assert!((moved - sc.config().forward_step).abs() < 1e-9);
            }
            pose = out.pose;
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4))]

    #[test]
    fn episode_accounting_and_determinism(seed in 0u64..200, random in any::<bool>()) {
        let sc = scene(seed);
        let cfg = EpisodeConfig {
            seed,
            max_steps: 120,
            planner: if random { PlannerMode::RandomFrontier } else { PlannerMode::Anneal },
            ..EpisodeConfig::default()
        };
        let prov = providers();
        let mut trace = Vec::new();
        let r = run_episode(&sc, &cfg, &prov, Some(&mut trace));
        prop_assert!(r.error.is_none(), "{:?}", r.error);
        let records: Vec<serde_json::Value> = trace
            .split(|b| *b == b'\n')
            .filter(|l| !l.is_empty())
            .map(|l| serde_json::from_slice(l).unwrap())
            .collect();
        prop_assert_eq!(records.len(), r.steps);
        let forwards = records
            .iter()
            .filter(|t| t["action"] == "move_forward" && t["collided"] == false)
            .count();
        prop_assert!((r.path_length - forwards as f64 * sc.config().forward_step).abs() < 1e-9);
        let collisions = records.iter().filter(|t| t["collided"] == true).count();
        prop_assert_eq!(collisions, r.collisions);
        prop_assert_eq!(r.planner_calls, r.explore_steps);
        prop_assert_eq!(r.spl, spl(r.success, r.path_length, r.optimal_length));
        prop_assert_eq!(r.success, r.termination == Termination::Success);
        if r.success {
            prop_assert!(r.spl > 0.0 && r.spl <= 1.0);
        }

        let mut trace2 = Vec::new();
        let again = run_episode(&sc, &cfg, &prov, Some(&mut trace2));
        prop_assert_eq!(&again, &r);
        prop_assert_eq!(trace2, trace);
    }
}
