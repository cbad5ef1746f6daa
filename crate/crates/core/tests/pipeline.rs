//! Library-level integration: scene generation through detection and
//! evaluation, plus the recorded-fixture determinism contract.

use turbo_godec::csp::CspParams;
use turbo_godec::detector::{fuse, min_max_normalize, rx_background, rx_global};
use turbo_godec::godec::{godec, turbo_godec, GodecParams};
use turbo_godec::hsi::{flatten, load_cube, load_mask, save_cube};
use turbo_godec::metrics::{auc_report, roc_3d};
use turbo_godec::synth::{gen_scene, AnomalyLayout, ClusterSpec, SceneSpec};

fn verification_scene(noise_sigma: f64, seed: u64) -> SceneSpec {
    SceneSpec {
        height: 20,
        width: 20,
        channels: 20,
        background_rank: 2,
        layout: AnomalyLayout::Clustered(vec![
            ClusterSpec { top: 4, left: 5, height: 2, width: 2, amplitude: 0.45 },
            ClusterSpec { top: 13, left: 12, height: 2, width: 2, amplitude: 0.45 },
        ]),
        noise_sigma,
        seed,
    }
}

#[test]
fn turbo_detection_beats_global_rx_on_a_clustered_scene() {
    let scene = gen_scene(&verification_scene(0.25, 42)).unwrap();
    let pm = flatten(&scene.cube);
    let params = GodecParams::new(2, 8);

    let turbo = turbo_godec(&pm, &params, &CspParams::default()).unwrap();
    let j = turbo.anomaly_probability.as_ref().unwrap();
    let turbo_map = fuse(&rx_background(&pm, &turbo.low_rank), j, 0.4).unwrap();
    let grx_map = min_max_normalize(&rx_global(&pm));

    let turbo_auc = auc_report(&roc_3d(&turbo_map, &scene.mask, 2001).unwrap());
    let grx_auc = auc_report(&roc_3d(&grx_map, &scene.mask, 2001).unwrap());

    assert!(turbo_auc.auc_df > 0.95, "turbo auc_df {}", turbo_auc.auc_df);
    assert!(turbo_auc.auc_df >= grx_auc.auc_df);
    assert!(turbo_auc.auc_ftau <= grx_auc.auc_ftau);
}

#[test]
fn vanilla_baseline_produces_sound_reports_too() {
    let scene = gen_scene(&verification_scene(0.15, 7)).unwrap();
    let pm = flatten(&scene.cube);
    let params = GodecParams::new(2, 8);
    let vanilla = godec(&pm, &params).unwrap();
    assert!(vanilla.anomaly_probability.is_none());
    let map = min_max_normalize(&rx_background(&pm, &vanilla.low_rank));
    let report = auc_report(&roc_3d(&map, &scene.mask, 2001).unwrap());
    assert!(report.auc_df > 0.8, "vanilla auc_df {}", report.auc_df);
    // Composite identities hold for computed reports.
    assert_eq!(report.auc_td, report.auc_df + report.auc_dtau);
    assert_eq!(report.auc_odp, report.auc_df + report.auc_dtau - report.auc_ftau);
}

/// The recorded fixture pins the generator's determinism contract: the same
/// spec must reproduce the committed bytes exactly, on any build.
#[test]
fn recorded_scene_fixture_reproduces_bit_exactly() {
    let spec = SceneSpec {
        height: 6,
        width: 5,
        channels: 4,
        background_rank: 2,
        layout: AnomalyLayout::Clustered(vec![ClusterSpec {
            top: 1,
            left: 1,
            height: 1,
            width: 2,
            amplitude: 0.5,
        }]),
        noise_sigma: 0.1,
        seed: 42,
    };
    let scene = gen_scene(&spec).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let regenerated = dir.path().join("cube.hsic");
    save_cube(&scene.cube, &regenerated).unwrap();

    let fixture_path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/scene_seed42.hsic");
    let fixture_bytes = std::fs::read(fixture_path).unwrap();
    let fresh_bytes = std::fs::read(&regenerated).unwrap();
    assert_eq!(fixture_bytes, fresh_bytes, "generator no longer reproduces the fixture");

    // And the cube parses back to the generated scene.
    let loaded = load_cube(std::path::Path::new(fixture_path)).unwrap();
    assert_eq!(loaded, scene.cube);

    let mask_path =
        concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/scene_seed42_mask.csv");
    let mask = load_mask(std::path::Path::new(mask_path)).unwrap();
    assert_eq!(&mask, &scene.mask);
}
