//! Score-distillation residuals side by side: the plain residual and its
//! reconstruction/guidance split, the paired editing residual, and the
//! stylized residual with a content negative.

use fantasystyle::distill::{csd_terms, dds_delta, decompose_sds, sds_delta, DistillConfig};
use fantasystyle::guidance::{ConditioningSpec, FrozenLinearDenoiser, Role, Token};
use fantasystyle::rng::{gaussian_stack, shared_gaussian_stack, stream, Stream};
use fantasystyle::schedule::ScheduleParams;
use fantasystyle::spectral::make_highpass;
use fantasystyle::tensor::LatentPair;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let schedule = ScheduleParams::default().build()?;
    let d = FrozenLinearDenoiser::new(5, 3)
        .with_bias(&["prompt"], vec![0.3, -0.1, 0.2])
        .with_bias(&["null"], vec![0.0, 0.0, 0.0])
        .with_bias(&["prompt", "style"], vec![0.5, -0.2, 0.1])
        .with_bias(&["content"], vec![0.1, 0.1, 0.1]);
    let tok = |n: &str, r| Token::scalar(n, r, 1.0);
    let plain = ConditioningSpec::new(
        vec![tok("prompt", Role::TextPrompt)],
        vec![tok("null", Role::Null)],
    )?;
    let styled = ConditioningSpec::new(
        vec![tok("prompt", Role::TextPrompt), tok("style", Role::Style)],
        vec![tok("content", Role::Content)],
    )?;

    let shape = [4, 3, 16, 16];
    let src = gaussian_stack(&mut stream(0, Stream::Scene), shape);
    let tgt = gaussian_stack(&mut stream(1, Stream::Scene), shape);
    let pair = LatentPair::new(src, tgt.clone())?;
    let eps = gaussian_stack(&mut stream(0, Stream::Eps), shape);
    let shared = shared_gaussian_stack(&mut stream(0, Stream::EpsShared), shape);
    let mask = make_highpass(4, 16, 16, 0.25)?;
    let cfg = DistillConfig::default();
    let t = 447;

    let sds = sds_delta(&d, &tgt, t, &eps, &plain, &cfg, &schedule)?;
    let parts = decompose_sds(&d, &tgt, t, &eps, &plain, &schedule)?;
    let rebuilt = parts.recon.lincomb(1.0, &parts.cfg_term, cfg.beta)?;
    println!(
        "plain residual rms {:.4}; recon rms {:.4}, guidance rms {:.4}, split error {:.1e}",
        sds.value.rms(),
        parts.recon.rms(),
        parts.cfg_term.rms(),
        rebuilt.max_abs_diff(&sds.value)
    );

    let dds = dds_delta(&d, &pair, t, &eps, &plain, &plain, &cfg, &schedule)?;
    println!(
        "paired residual rms with identical prompts {:.4}",
        dds.value.rms()
    );

    let terms = csd_terms(
        &d, &pair, t, &eps, &shared, &styled, &plain, &cfg, &schedule, &mask,
    )?;
    let delta = terms.phi_tgt.sub(&terms.phi_src)?;
    println!(
        "stylized residual rms {:.4} (target term {:.4}, source term {:.4})",
        delta.rms(),
        terms.phi_tgt.rms(),
        terms.phi_src.rms()
    );
    Ok(())
}
