//! Paired runs with and without the frequency-consistency filter.
//!
//! Every random stream is shared between the two arms of a seed; only the
//! filter's low-band blend differs. Prints the final cross-view low-band
//! variance of each arm.
//!
//! ```text
//! cargo run --release --example mvfc_ablation -- [config.json] [seeds]
//! ```

use std::path::Path;

use fantasystyle::config::{Config, Prepared, SceneSource};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let path = args.next().unwrap_or_else(|| {
        concat!(env!("CARGO_MANIFEST_DIR"), "/configs/ablation_mvfc.json").into()
    });
    let seeds: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(10);
    let base = Config::load(&path)?;
    let gamma = base.run.distill.gamma;

    println!("seed  var(gamma={gamma})  var(gamma=1)  lower");
    let mut wins = 0;
    for seed in 0..seeds {
        let mut arms = Vec::new();
        for g in [gamma, 1.0] {
            let mut cfg = base.clone();
            cfg.run.seed = seed;
            cfg.run.distill.gamma = g;
            if let SceneSource::Synthetic(p) = &mut cfg.scene {
                p.seed = seed;
            }
            let out = Prepared::new(&cfg, Path::new("."))?.stylize()?;
            arms.push(out.report.summary.final_.bands.low_band_variance);
        }
        let lower = arms[0] < arms[1];
        wins += lower as usize;
        println!("{seed:>4}  {:>16.6e}  {:>12.6e}  {lower}", arms[0], arms[1]);
    }
    println!("filtered arm lower on {wins}/{seeds} seeds");
    Ok(())
}
