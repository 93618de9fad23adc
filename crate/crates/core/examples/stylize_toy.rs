//! Runs the shipped toy stylization config and compares the mean color
//! shift with the direction the analytic denoiser predicts.
//!
//! ```text
//! cargo run --release --example stylize_toy -- [config.json]
//! ```

use std::path::Path;

use fantasystyle::config::{Config, DenoiserConfig, Prepared};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/configs/toy_stylize.json").into());
    let cfg = Config::load(&path)?;
    let out = Prepared::new(&cfg, Path::new("."))?.stylize()?;
    let s = &out.report.summary;

    let DenoiserConfig::GaussianToy { branches } = &cfg.denoiser else {
        return Err("expected the gaussian_toy denoiser".into());
    };
    let mean = |names: &[&str]| {
        let mut want: Vec<String> = names.iter().map(|s| s.to_string()).collect();
        want.sort();
        branches
            .iter()
            .find(|b| {
                let mut have = b.tokens.clone();
                have.sort();
                have == want
            })
            .map(|b| b.mean.clone())
            .expect("branch present")
    };
    let (ps, ipc, p, null) = (
        mean(&["prompt", "style"]),
        mean(&["content"]),
        mean(&["prompt"]),
        mean(&["null"]),
    );
    let dir: Vec<f64> = (0..3)
        .map(|c| (ps[c] - ipc[c]) - (p[c] - null[c]))
        .collect();
    let moved = s.mean_color_displacement;
    let dot: f64 = (0..3).map(|c| dir[c] * moved[c]).sum();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let angle = (dot / (norm(&dir) * norm(&moved)))
        .clamp(-1.0, 1.0)
        .acos()
        .to_degrees();

    println!("initial mean color {:?}", s.initial_mean_color);
    println!("final mean color   {:?}", s.final_mean_color);
    println!("predicted direction {dir:?}, angle to actual shift {angle:.4} deg");
    println!(
        "adjacent-view RMSE {:.5} -> {:.5}, low-band cross-view variance {:.3e} -> {:.3e}",
        s.initial.mean_adjacent_rmse,
        s.final_.mean_adjacent_rmse,
        s.initial.bands.low_band_variance,
        s.final_.bands.low_band_variance
    );
    Ok(())
}
