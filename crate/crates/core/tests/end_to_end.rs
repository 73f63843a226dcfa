use std::fs;

use gridsynth_core::config::{BackendSpec, PipelineConfig};
use gridsynth_core::grid::{run_engine, CellStatus, Grid4D};
use gridsynth_core::io::{read_grid, write_grid, BitDepth, ManifestMeta};
use gridsynth_core::metrics::MetricsReport;
use gridsynth_core::pipeline::{build_backend, prepare_input, run_pipeline};

/// A lateral sweep whose per-view shifts are whole pixels, so warps of the
/// input reproduce the rendered views exactly wherever they are visible.
fn lateral(n_views: usize, n_frames: usize, backend: &str) -> PipelineConfig {
    let poses: Vec<String> = (0..n_views)
        .map(|i| format!("{{ center = [{}, 0.0, 0.0] }}", 0.125 * i as f64))
        .collect();
    let text = format!(
        r#"
seed = 21
[grid]
n_views = {n_views}
n_frames = {n_frames}
[intrinsics]
fx = 64.0
fy = 64.0
cx = 32.0
cy = 32.0
width = 64
height = 64
[trajectory]
kind = "custom"
poses = [{}]
[sampler]
steps = 12
[scene]
background_depth = 4.0
foreground_depth = 2.0
foreground_half_size = 0.25
texture_seed = 3
motion = {{ kind = "linear", start = [0.375, 0.375], velocity = [0.0, -0.03125] }}
[backend]
kind = "{backend}"
"#,
        poses.join(", ")
    );
    PipelineConfig::from_toml_str(&text).unwrap()
}

fn assert_same_grid(a: &Grid4D, b: &Grid4D) {
    for v in 0..a.n_views() {
        for t in 0..a.n_frames() {
            assert!(a.frame(v, t).bit_eq(b.frame(v, t)), "cell ({v}, {t}) differs");
            assert_eq!(a.status(v, t), b.status(v, t));
        }
    }
}

#[test]
fn ideal_backend_reproduces_ground_truth() {
    let cfg = lateral(6, 5, "ideal");
    let run = run_pipeline(&cfg, false).unwrap();
    let truth = run.input.ground_truth.as_ref().unwrap();
    let report = MetricsReport::compute(&run.output.grid.frames(), &truth.frames).unwrap();
    let worst = report.cells.iter().map(|c| c.max_abs_error).fold(0.0, f64::max);
    assert!(worst <= 1e-3, "max error {worst}");
    assert!(report.mean.at_least(60.0));
    assert!(run.output.grid.is_complete());
}

#[test]
fn ideal_backend_is_exact_without_stbi_and_with_symmetric_renoise() {
    for variant in 0..2 {
        let mut cfg = lateral(4, 5, "ideal");
        if variant == 0 {
            cfg.ablation.disable_stbi = true;
        } else {
            cfg.interpolation.symmetric_renoise = true;
        }
        let run = run_pipeline(&cfg, false).unwrap();
        let truth = run.input.ground_truth.as_ref().unwrap();
        for v in 0..4 {
            for t in 0..5 {
                assert!(run.output.grid.frame(v, t).max_abs_diff(&truth.frames[v][t]) <= 1e-3);
            }
        }
    }
}

#[test]
fn boundaries_survive_the_interior_fill() {
    let cfg = lateral(4, 5, "noisy_ideal");
    let keys = run_pipeline(&cfg, true).unwrap();
    let full = run_pipeline(&cfg, false).unwrap();
    let (kg, fg) = (&keys.output.grid, &full.output.grid);
    let (n, f) = (kg.n_views(), kg.n_frames());
    for t in 0..f {
        assert!(fg.frame(0, t).bit_eq(&full.input.frames[t]));
        assert!(fg.frame(n - 1, t).bit_eq(kg.frame(n - 1, t)));
    }
    for v in 0..n {
        assert!(fg.frame(v, 0).bit_eq(kg.frame(v, 0)));
        assert!(fg.frame(v, f - 1).bit_eq(kg.frame(v, f - 1)));
    }
    assert_eq!(kg.status(1, 1), CellStatus::Warped);
    assert_eq!(kg.status(1, 0), CellStatus::Key);
    assert!((0..n).all(|v| (0..f).all(|t| fg.status(v, t) == CellStatus::Final)));
}

#[test]
fn parallel_matches_serial() {
    for stbi in [true, false] {
        let mut cfg = lateral(5, 5, "noisy_ideal");
        cfg.ablation.disable_stbi = !stbi;
        let serial = run_pipeline(&cfg, false).unwrap();
        cfg.parallel = true;
        let parallel = run_pipeline(&cfg, false).unwrap();
        assert_same_grid(&serial.output.grid, &parallel.output.grid);
    }
}

#[test]
fn visiting_known_clips_changes_nothing() {
    let cfg = lateral(4, 5, "noisy_ideal");
    let input = prepare_input(&cfg).unwrap();
    let den = build_backend(&cfg.backend, input.ground_truth.as_ref()).unwrap();
    let mut engine = cfg.engine_config().unwrap();
    let run = |engine| {
        run_engine(
            &input.frames,
            &input.depths,
            &input.trajectory,
            &input.intrinsics,
            den.as_ref(),
            &engine,
            false,
        )
        .unwrap()
    };
    let skipped = run(engine.clone());
    engine.visit_known_clips = true;
    let visited = run(engine.clone());
    assert_same_grid(&skipped.grid, &visited.grid);
    assert!(visited.stage_b.camera_passes > skipped.stage_b.camera_passes);
    assert!(visited.stage_b.time_passes > skipped.stage_b.time_passes);
}

#[test]
fn identical_runs_write_identical_bytes() {
    let cfg = lateral(3, 4, "noisy_ideal");
    let meta = ManifestMeta {
        seed: cfg.seed,
        config_digest: cfg.digest(),
        trajectory: Some(cfg.trajectory.clone()),
        bit_depth: BitDepth::Sixteen,
    };
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let run = run_pipeline(&cfg, false).unwrap();
        write_grid(d.path(), &run.output.grid, &meta).unwrap();
    }
    let (manifest, frames) = read_grid(dirs[0].path()).unwrap();
    assert_eq!(frames.len(), 3);
    for name in std::iter::once("manifest.json".to_string()).chain(manifest.cells.iter().map(|c| c.file.clone())) {
        assert_eq!(
            fs::read(dirs[0].path().join(&name)).unwrap(),
            fs::read(dirs[1].path().join(&name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn seed_changes_the_noisy_fill() {
    let cfg = lateral(3, 4, "noisy_ideal");
    let mut other = cfg.clone();
    other.seed += 1;
    let a = run_pipeline(&cfg, false).unwrap();
    let b = run_pipeline(&other, false).unwrap();
    assert!(!a.output.grid.frame(1, 1).bit_eq(b.output.grid.frame(1, 1)));
}

#[test]
fn ideal_backend_needs_a_scene() {
    let mut cfg = lateral(3, 3, "identity");
    cfg.backend = BackendSpec::Ideal;
    assert!(build_backend(&cfg.backend, None).is_err());
}
