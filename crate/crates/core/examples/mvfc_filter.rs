//! Noises a set of renders, then applies the frequency-consistency filter
//! at several blends and shows how the cross-view spread of the low band
//! shrinks while the high band is left alone.

use fantasystyle::rng::{gaussian_stack, shared_gaussian_stack, stream, Stream};
use fantasystyle::scene::{make_synthetic_scene, render_views, SyntheticParams};
use fantasystyle::schedule::{ddim_noise, ScheduleParams};
use fantasystyle::spectral::{cross_view_stats, make_highpass, mvfc};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (scene, weights) = make_synthetic_scene(&SyntheticParams {
        gaussians: 150,
        cameras: 6,
        height: 32,
        width: 32,
        ..Default::default()
    })?;
    let renders = render_views(&scene, &weights, &[0, 1, 2, 3, 4, 5])?;
    let shape = renders.shape();

    let schedule = ScheduleParams::default().build()?;
    let t = 553;
    let eps = gaussian_stack(&mut stream(1, Stream::Eps), shape);
    let shared = shared_gaussian_stack(&mut stream(1, Stream::EpsShared), shape);
    let z_t = ddim_noise(&renders, t, &eps, &schedule)?;
    let mask = make_highpass(shape[0], shape[2], shape[3], 0.25)?;

    println!("t = {t}, alpha_bar = {:.4}", schedule.alpha_bar(t)?);
    println!("gamma  low_band_var  high_band_energy_var");
    for gamma in [1.0, 0.9, 0.5, 0.0] {
        let z_hat = mvfc(&z_t, &shared, gamma, &mask)?;
        let stats = cross_view_stats(&z_hat, &mask)?;
        println!(
            "{gamma:<5}  {:>12.5}  {:>20.3}",
            stats.low_band_variance, stats.high_band_energy_variance
        );
    }
    Ok(())
}
