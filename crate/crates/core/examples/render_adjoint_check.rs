//! Checks the renderer's vector-Jacobian product against the forward map:
//! the adjoint identity and a central finite difference.

use fantasystyle::rng::{stream, Stream};
use fantasystyle::scene::{make_synthetic_scene, render, render_vjp, SyntheticParams};
use ndarray::Array3;
use rand::Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (scene, weights) = make_synthetic_scene(&SyntheticParams {
        gaussians: 60,
        cameras: 4,
        height: 24,
        width: 24,
        sh_degree: 2,
        ..Default::default()
    })?;
    let mut rng = stream(11, Stream::Eps);
    let mut rand_like = |shape: &[usize]| {
        Array3::from_shape_simple_fn((shape[0], shape[1], shape[2]), || {
            rng.random_range(-1.0..1.0)
        })
    };
    let dtheta = rand_like(scene.sh_coeffs().shape());
    let y = rand_like(&[3, 24, 24]);

    for w in &weights {
        let base = render(&scene, w)?;
        let mut moved = scene.clone();
        moved.set_sh_coeffs(scene.sh_coeffs() + &dtheta)?;
        let jd = render(&moved, w)? - &base;
        let lhs = (&jd * &y).sum();
        let rhs = (&dtheta * &render_vjp(&scene, w, &y)?).sum();

        let h = 1e-5;
        let mut plus = scene.clone();
        plus.set_sh_coeffs(scene.sh_coeffs() + &(&dtheta * h))?;
        let mut minus = scene.clone();
        minus.set_sh_coeffs(scene.sh_coeffs() - &(&dtheta * h))?;
        let fd = ((render(&plus, w)? - render(&minus, w)?) * &y).sum() / (2.0 * h);
        println!(
            "camera {}: <J dθ, y> = {lhs:.10}  <dθ, Jᵀy> = {rhs:.10}  fd = {fd:.10}  rel = {:.1e}",
            w.camera(),
            (fd - rhs).abs() / rhs.abs().max(1e-300)
        );
    }
    Ok(())
}
