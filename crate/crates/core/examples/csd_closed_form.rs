//! Compares the stylized-distillation residual of the analytic Gaussian
//! denoiser with its closed form at every sampling timestep.

use fantasystyle::distill::{csd_delta, DistillConfig};
use fantasystyle::guidance::{ConditioningSpec, GaussianToyDenoiser, Role, Token};
use fantasystyle::rng::{gaussian_stack, shared_gaussian_stack, stream, Stream};
use fantasystyle::schedule::ScheduleParams;
use fantasystyle::spectral::make_highpass;
use fantasystyle::tensor::LatentPair;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let schedule = ScheduleParams::default().build()?;
    let (mu_ps, mu_ipc, mu_p, mu_null) = (0.8, 0.35, 0.6, 0.5);
    let d = GaussianToyDenoiser::new(schedule.clone())
        .with_mean(&["prompt", "style"], vec![mu_ps])
        .with_mean(&["content"], vec![mu_ipc])
        .with_mean(&["prompt"], vec![mu_p])
        .with_mean(&["null"], vec![mu_null]);
    let tok = |n: &str, r| Token::scalar(n, r, 1.0);
    let tgt = ConditioningSpec::new(
        vec![tok("prompt", Role::TextPrompt), tok("style", Role::Style)],
        vec![tok("content", Role::Content)],
    )?;
    let src = ConditioningSpec::new(
        vec![tok("prompt", Role::TextPrompt)],
        vec![tok("null", Role::Null)],
    )?;

    let shape = [4, 1, 16, 16];
    let pair = LatentPair::new(
        gaussian_stack(&mut stream(0, Stream::Scene), shape),
        gaussian_stack(&mut stream(1, Stream::Scene), shape),
    )?;
    let eps = gaussian_stack(&mut stream(0, Stream::Eps), shape);
    let shared = shared_gaussian_stack(&mut stream(0, Stream::EpsShared), shape);
    let mask = make_highpass(4, 16, 16, 0.25)?;
    let cfg = DistillConfig {
        gamma: 1.0,
        ..Default::default()
    };

    println!("   t  alpha_bar      delta     closed_form   max_err");
    for &t in schedule.timesteps() {
        let a = schedule.alpha_bar(t)?;
        let closed = cfg.beta * a.sqrt() / (1.0 - a).sqrt() * ((mu_ipc - mu_ps) - (mu_null - mu_p));
        let delta = csd_delta(
            &d, &pair, t, &eps, &shared, &tgt, &src, &cfg, &schedule, &mask,
        )?;
        let err = delta
            .value
            .data()
            .iter()
            .map(|v| (v - closed).abs())
            .fold(0.0, f64::max);
        let first = delta.value.data()[[0, 0, 0, 0]];
        println!("{t:>4}  {a:>9.5}  {first:>9.4}  {closed:>12.4}  {err:>8.1e}");
    }
    Ok(())
}
