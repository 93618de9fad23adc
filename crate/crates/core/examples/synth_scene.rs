//! Builds a synthetic scene, saves it, and writes one PNG per camera.
//!
//! ```text
//! cargo run --release --example synth_scene -- [out_dir]
//! ```

use std::path::PathBuf;

use fantasystyle::scene::{make_synthetic_scene, render_views, save_scene, SyntheticParams};
use fantasystyle::tensor::{export_png, PngNormalization};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out: PathBuf = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "out/synth_scene".into())
        .into();
    std::fs::create_dir_all(&out)?;

    let params = SyntheticParams {
        seed: 7,
        ..Default::default()
    };
    let (scene, weights) = make_synthetic_scene(&params)?;
    save_scene(&scene, out.join("scene.fsz"))?;

    let all: Vec<usize> = (0..scene.cameras().len()).collect();
    let renders = render_views(&scene, &weights, &all)?;
    export_png(&renders, out.join("view"), PngNormalization::Clamp)?;

    for w in &weights {
        let (h, wd) = w.image_size();
        let covered = (0..h)
            .flat_map(|y| (0..wd).map(move |x| (y, x)))
            .filter(|&(y, x)| w.residual(y, x) < 0.99)
            .count();
        println!(
            "camera {}: {} splat entries, {:.1}% of pixels covered",
            w.camera(),
            w.nnz(),
            100.0 * covered as f64 / (h * wd) as f64
        );
    }
    println!("wrote {}", out.display());
    Ok(())
}
