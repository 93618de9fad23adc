use fantasystyle::config::{Config, Prepared, SceneSource};
use fantasystyle::scene::{ColorInit, SyntheticParams};
use fantasystyle::stylize::{mean_color, OptimizerKind, StylizeOutput};
use std::path::Path;

// (mu_PS - mu_IPc) - (mu_P - mu_null) for the default branch means.
const D: [f64; 3] = [0.2, -0.05, -0.15];

fn small_config(seed: u64) -> Config {
    let mut cfg = Config {
        scene: SceneSource::Synthetic(SyntheticParams {
            seed,
            gaussians: 40,
            cameras: 6,
            height: 24,
            width: 24,
            sh_degree: 2,
            color_init: ColorInit::Random,
            ..SyntheticParams::default()
        }),
        ..Config::default()
    };
    cfg.run.iterations = 24;
    cfg.run.views_per_step = 3;
    cfg.run.optimizer = OptimizerKind::PlainDescent;
    cfg.run.learning_rate = 1e-4;
    cfg.run.seed = seed;
    cfg
}

fn run(cfg: &Config) -> StylizeOutput {
    Prepared::new(cfg, Path::new("."))
        .unwrap()
        .stylize()
        .unwrap()
}

fn along_d(c: [f64; 3]) -> f64 {
    c.iter().zip(D).map(|(a, b)| a * b).sum()
}

fn max_abs_diff(a: &ndarray::Array3<f64>, b: &ndarray::Array3<f64>) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[test]
fn mean_color_moves_monotonically_along_d() {
    let mut cfg = small_config(3);
    cfg.run.snapshot_every = 1;
    let out = run(&cfg);
    assert_eq!(out.snapshots.len(), cfg.run.iterations + 1);
    let proj: Vec<f64> = out
        .snapshots
        .iter()
        .map(|s| along_d(mean_color(&s.renders)))
        .collect();
    for w in proj.windows(2) {
        assert!(w[1] > w[0], "{} then {}", w[0], w[1]);
    }
}

#[test]
fn first_snapshot_is_the_source() {
    let mut cfg = small_config(4);
    cfg.run.snapshot_every = 5;
    let out = run(&cfg);
    assert_eq!(out.snapshots[0].iteration, 0);
    assert_eq!(out.snapshots[0].renders, out.source_renders);
    let iters: Vec<usize> = out.snapshots.iter().map(|s| s.iteration).collect();
    assert_eq!(iters, vec![0, 5, 10, 15, 20]);
}

#[test]
fn same_seed_gives_identical_reports() {
    let mut cfg = small_config(5);
    cfg.run.optimizer = OptimizerKind::AdaptiveMoments;
    cfg.run.learning_rate = 1e-3;
    let a = run(&cfg);
    let b = run(&cfg);
    assert_eq!(a.report.to_jsonl(), b.report.to_jsonl());
    assert_eq!(a.sh_coeffs, b.sh_coeffs);

    cfg.run.seed = 6;
    let c = run(&cfg);
    assert_ne!(a.report.to_jsonl(), c.report.to_jsonl());
}

#[test]
fn guidance_scale_trades_against_step_size() {
    let mut base = small_config(7);
    base.run.snapshot_every = 4;
    let a = run(&base);
    for k in [2.0, 0.25] {
        let mut cfg = base.clone();
        cfg.run.distill.beta *= k;
        cfg.run.learning_rate /= k;
        let b = run(&cfg);
        assert!(max_abs_diff(&a.sh_coeffs, &b.sh_coeffs) < 1e-10);
        for (sa, sb) in a.snapshots.iter().zip(&b.snapshots) {
            assert!(sa.renders.max_abs_diff(&sb.renders) < 1e-10);
        }
    }
}

#[test]
fn geometry_is_untouched() {
    let cfg = small_config(8);
    let prepared = Prepared::new(&cfg, Path::new(".")).unwrap();
    let before = prepared.scene.geometry_bytes();
    let out = prepared.stylize().unwrap();
    let mut after = prepared.scene.clone();
    after.set_sh_coeffs(out.sh_coeffs.clone()).unwrap();
    assert_eq!(before, after.geometry_bytes());
    assert_ne!(&out.sh_coeffs, prepared.scene.sh_coeffs());
}

#[test]
fn frozen_higher_degrees_stay_put() {
    let mut cfg = small_config(9);
    cfg.run.freeze_higher_sh = true;
    let prepared = Prepared::new(&cfg, Path::new(".")).unwrap();
    let out = prepared.stylize().unwrap();
    let src = prepared.scene.sh_coeffs();
    let higher = |a: &ndarray::Array3<f64>| a.slice(ndarray::s![.., 1.., ..]).to_owned();
    assert_eq!(higher(&out.sh_coeffs), higher(src));
    assert!(max_abs_diff(&out.sh_coeffs, src) > 0.0);
}

#[test]
fn both_filter_arms_and_pullback_run() {
    for (gamma, pullback) in [(1.0, false), (0.9, false), (0.9, true), (0.0, false)] {
        let mut cfg = small_config(10);
        cfg.run.distill.gamma = gamma;
        cfg.run.distill.pullback_through_mvfc = pullback;
        let out = run(&cfg);
        let moved = along_d(out.report.summary.mean_color_displacement);
        assert!(moved > 0.0, "gamma {gamma} pullback {pullback}");
        assert!(out.sh_coeffs.iter().all(|v| v.is_finite()));
    }
}

#[test]
fn full_pullback_at_zero_gamma_pins_the_mean() {
    let mut cfg = small_config(10);
    cfg.run.distill.gamma = 0.0;
    cfg.run.distill.pullback_through_mvfc = true;
    let moved = run(&cfg).report.summary.mean_color_displacement;
    assert!(moved.iter().all(|v| v.abs() < 1e-12), "{moved:?}");
}

#[test]
fn timings_are_opt_in() {
    let mut cfg = small_config(11);
    cfg.run.iterations = 2;
    let out = run(&cfg);
    assert!(out.report.records.iter().all(|r| r.wall_ms.is_none()));
    cfg.run.record_timings = true;
    let out = run(&cfg);
    assert!(out.report.records.iter().all(|r| r.wall_ms.is_some()));
    assert!(out.report.summary.wall_ms.is_some());
}
