//! Scales one spectral band of a random multi-view stack at a time and
//! reports band energies and cross-view variance for each scale.

use fantasystyle::rng::{gaussian_stack, stream, Stream};
use fantasystyle::spectral::{band_energy, band_scale, cross_view_variance, make_highpass};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let x = gaussian_stack(&mut stream(3, Stream::Eps), [6, 3, 32, 32]);
    let mask = make_highpass(6, 32, 32, 0.25)?;
    let base = band_energy(&x, &mask)?;
    println!(
        "input: low energy {:.2}, high energy {:.2}, cross-view variance {:.4}",
        base.low,
        base.high,
        cross_view_variance(&x)
    );

    println!("alpha  form         low_energy  high_energy  cross_view_var");
    for alpha in [0.0, 0.25, 0.5, 0.75, 1.0] {
        for (form, lo, hi) in [("low_scaled", alpha, 1.0), ("high_scaled", 1.0, alpha)] {
            let y = band_scale(&x, &mask, lo, hi)?;
            println!(
                "{alpha:<5}  {form:<11}  {:>10.2}  {:>11.2}  {:>14.4}",
                lo * lo * base.low,
                hi * hi * base.high,
                cross_view_variance(&y)
            );
        }
    }
    Ok(())
}
