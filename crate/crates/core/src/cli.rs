//! Command-line front end.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 invalid input, 3 numerical abort.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ndarray::{s, Array4};
use serde::Serialize;

use crate::config::{Config, PrepareError, Prepared};
use crate::rng::{self, Stream};
use crate::scene::{
    self, bake_all, load_scene, make_synthetic_scene, render_views, save_scene, ColorInit,
    SceneError, SyntheticParams, DEFAULT_BACKGROUND,
};
use crate::spectral::{self, DEFAULT_CUTOFF};
use crate::stylize::StylizeError;
use crate::tensor::{self, export_png, MultiViewLatent, PngNormalization, TensorError};

#[derive(Debug, Parser)]
#[command(
    name = "fantasystyle",
    version,
    about = "Consistent stylization of Gaussian scenes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic scene file.
    MakeScene(MakeSceneArgs),
    /// Render every camera of a scene to PNGs.
    Render(RenderArgs),
    /// Band-scaling sweep over a latent stack.
    AnalyzeFreq(AnalyzeArgs),
    /// Apply the frequency-consistency filter to a latent stack.
    Filter(FilterArgs),
    /// Run stylization from a JSON config.
    Stylize(StylizeArgs),
    /// Print the default config.
    Defaults,
}

fn parse_triple(s: &str) -> Result<[f64; 3], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    <[f64; 3]>::try_from(v).map_err(|_| "expected three comma-separated numbers".to_string())
}

#[derive(Debug, Args)]
struct MakeSceneArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    gaussians: usize,
    #[arg(long, default_value_t = 8)]
    cameras: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 3)]
    sh_degree: usize,
    /// Background color `r,g,b`.
    #[arg(long, value_parser = parse_triple)]
    background: Option<[f64; 3]>,
    /// Give every Gaussian this color `r,g,b` instead of random colors.
    #[arg(long, value_parser = parse_triple)]
    uniform_color: Option<[f64; 3]>,
    #[arg(long, default_value = "scene.fsz")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct RenderArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long, default_value = "renders")]
    out_dir: PathBuf,
    /// Also write the renders as a tensor stack.
    #[arg(long)]
    stack: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5,0.75,1")]
    alphas: Vec<f64>,
    #[arg(long, default_value_t = DEFAULT_CUTOFF)]
    cutoff: f64,
    #[arg(long, default_value = "freq")]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct FilterArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 0.9)]
    gamma: f64,
    #[arg(long, default_value_t = DEFAULT_CUTOFF)]
    cutoff: f64,
    /// Seed of the shared noise slice.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct StylizeArgs {
    #[arg(long)]
    config: PathBuf,
    /// Validate everything and exit without writing.
    #[arg(long)]
    dry_run: bool,
    /// Overrides `output_dir` from the config.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug)]
enum Failure {
    Io(String),
    Invalid(String),
    Numerical(String),
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Io(_) => 1,
            Failure::Invalid(_) => 2,
            Failure::Numerical(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Io(m) | Failure::Invalid(m) | Failure::Numerical(m) => m,
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

impl From<TensorError> for Failure {
    fn from(e: TensorError) -> Self {
        match e {
            TensorError::Io(e) => Failure::Io(e.to_string()),
            e => Failure::Invalid(e.to_string()),
        }
    }
}

impl From<SceneError> for Failure {
    fn from(e: SceneError) -> Self {
        match e {
            SceneError::Io(e) => Failure::Io(e.to_string()),
            SceneError::Tensor(e) => e.into(),
            e => Failure::Invalid(e.to_string()),
        }
    }
}

impl From<StylizeError> for Failure {
    fn from(e: StylizeError) -> Self {
        if e.is_numerical() {
            return Failure::Numerical(e.to_string());
        }
        match e {
            StylizeError::Scene(e) => e.into(),
            StylizeError::Tensor(e) => e.into(),
            e => Failure::Invalid(e.to_string()),
        }
    }
}

fn invalid(e: impl ToString) -> Failure {
    Failure::Invalid(e.to_string())
}

fn configure_threads() {
    if let Some(n) = std::env::var("FS_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
    {
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    configure_threads();
    let result = match cli.command {
        Command::MakeScene(a) => make_scene(a),
        Command::Render(a) => render(a),
        Command::AnalyzeFreq(a) => analyze_freq(a),
        Command::Filter(a) => filter(a),
        Command::Stylize(a) => stylize_cmd(a),
        Command::Defaults => {
            println!("{}", Config::default().to_json_pretty());
            Ok(())
        }
    };
    match result {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.message());
            f.code()
        }
    }
}

fn make_scene(a: MakeSceneArgs) -> Result<(), Failure> {
    for (flag, v) in [
        ("--gaussians", a.gaussians),
        ("--cameras", a.cameras),
        ("--height", a.height),
        ("--width", a.width),
    ] {
        if v == 0 {
            return Err(invalid(format!("{flag} must be at least 1")));
        }
    }
    if a.sh_degree > scene::sh::MAX_DEGREE {
        return Err(invalid("--sh-degree must be at most 3"));
    }
    let params = SyntheticParams {
        seed: a.seed,
        gaussians: a.gaussians,
        cameras: a.cameras,
        height: a.height,
        width: a.width,
        sh_degree: a.sh_degree,
        background: a.background.unwrap_or(DEFAULT_BACKGROUND),
        color_init: match a.uniform_color {
            Some(color) => ColorInit::Uniform { color },
            None => ColorInit::Random,
        },
    };
    let (scene, _) = make_synthetic_scene(&params)?;
    save_scene(&scene, &a.out)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn render(a: RenderArgs) -> Result<(), Failure> {
    let scene = load_scene(&a.scene)?;
    let weights = bake_all(&scene)?;
    let all: Vec<usize> = (0..scene.cameras().len()).collect();
    let renders = render_views(&scene, &weights, &all)?;
    fs::create_dir_all(&a.out_dir)?;
    export_png(&renders, a.out_dir.join("view"), PngNormalization::Clamp)?;
    if let Some(p) = &a.stack {
        tensor::save_stack(&renders, p)?;
    }
    println!("rendered {} views to {}", all.len(), a.out_dir.display());
    Ok(())
}

#[derive(Debug, Serialize)]
struct SweepRow {
    alpha: f64,
    /// `low_scaled` scales the low band, `high_scaled` the high band.
    form: &'static str,
    low_energy: f64,
    high_energy: f64,
    cross_view_variance: f64,
    low_band_cross_view_variance: f64,
    max_abs_deviation: f64,
    stack: String,
}

#[derive(Debug, Serialize)]
struct SweepReport {
    input: String,
    shape: [usize; 4],
    cutoff: f64,
    input_low_energy: f64,
    input_high_energy: f64,
    input_cross_view_variance: f64,
    rows: Vec<SweepRow>,
}

fn analyze_freq(a: AnalyzeArgs) -> Result<(), Failure> {
    let x = tensor::load_stack(&a.input)?;
    let [n, _, h, w] = x.shape();
    let mask = spectral::make_highpass(n, h, w, a.cutoff).map_err(invalid)?;
    if a.alphas.is_empty() {
        return Err(invalid("--alphas must list at least one value"));
    }
    for &alpha in &a.alphas {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(invalid(format!("--alphas value {alpha} outside [0, 1]")));
        }
    }
    let base = spectral::band_energy(&x, &mask).map_err(invalid)?;
    fs::create_dir_all(&a.out_dir)?;
    let mut rows = Vec::new();
    for (i, &alpha) in a.alphas.iter().enumerate() {
        for (form, lo, hi) in [("low_scaled", alpha, 1.0), ("high_scaled", 1.0, alpha)] {
            let y = spectral::band_scale(&x, &mask, lo, hi).map_err(invalid)?;
            let name = format!("{form}_{i:02}.mvlt");
            tensor::save_stack(&y, a.out_dir.join(&name))?;
            let low = spectral::low_band(&y, &mask).map_err(invalid)?;
            rows.push(SweepRow {
                alpha,
                form,
                low_energy: lo * lo * base.low,
                high_energy: hi * hi * base.high,
                cross_view_variance: spectral::cross_view_variance(&y),
                low_band_cross_view_variance: spectral::cross_view_variance(&low),
                max_abs_deviation: y.max_abs_diff(&x),
                stack: name,
            });
        }
    }
    let report = SweepReport {
        input: a.input.display().to_string(),
        shape: x.shape(),
        cutoff: a.cutoff,
        input_low_energy: base.low,
        input_high_energy: base.high,
        input_cross_view_variance: spectral::cross_view_variance(&x),
        rows,
    };
    let path = a.out_dir.join("report.json");
    fs::write(
        &path,
        serde_json::to_string_pretty(&report).map_err(invalid)?,
    )?;
    println!("wrote {}", path.display());
    Ok(())
}

/// The view-constant noise `filter --seed` uses.
pub fn filter_noise(seed: u64, shape: [usize; 4]) -> MultiViewLatent {
    rng::shared_gaussian_stack(&mut rng::stream(seed, Stream::EpsShared), shape)
}

fn filter(a: FilterArgs) -> Result<(), Failure> {
    let x = tensor::load_stack(&a.input)?;
    let [n, _, h, w] = x.shape();
    let mask = spectral::make_highpass(n, h, w, a.cutoff).map_err(invalid)?;
    let eps = filter_noise(a.seed, x.shape());
    let y = spectral::mvfc(&x, &eps, a.gamma, &mask).map_err(invalid)?;
    tensor::save_stack(&y, &a.output)?;
    println!("wrote {}", a.output.display());
    Ok(())
}

/// Side-by-side `[N, 3, H, 2W]` stack: before on the left, after on the right.
fn before_after(before: &MultiViewLatent, after: &MultiViewLatent) -> MultiViewLatent {
    let [n, c, h, w] = before.shape();
    let mut grid = Array4::zeros((n, c, h, 2 * w));
    grid.slice_mut(s![.., .., .., ..w]).assign(before.data());
    grid.slice_mut(s![.., .., .., w..]).assign(after.data());
    MultiViewLatent::new(grid).expect("finite renders")
}

fn stylize_cmd(a: StylizeArgs) -> Result<(), Failure> {
    let cfg = Config::load(&a.config).map_err(Failure::Invalid)?;
    let base_dir = a.config.parent().unwrap_or(Path::new("."));
    let prepared = Prepared::new(&cfg, base_dir).map_err(|e| match e {
        PrepareError::Scene(e) => e.into(),
        PrepareError::Stylize(e) => e.into(),
        e => invalid(e),
    })?;
    if a.dry_run {
        println!("config ok: {}", a.config.display());
        return Ok(());
    }

    let out = prepared.stylize()?;
    let mut scene = prepared.scene;
    let out_dir = a.out_dir.unwrap_or_else(|| cfg.output_dir.clone());
    fs::create_dir_all(out_dir.join("renders"))?;
    scene.set_sh_coeffs(out.sh_coeffs.clone())?;
    save_scene(&scene, out_dir.join("scene.fsz"))?;
    fs::write(out_dir.join("report.jsonl"), out.report.to_jsonl())?;
    fs::write(
        out_dir.join("summary.json"),
        serde_json::to_string_pretty(&out.report.summary).map_err(invalid)?,
    )?;
    let grid = before_after(&out.source_renders, &out.final_renders);
    export_png(
        &grid,
        out_dir.join("renders").join("before_after"),
        PngNormalization::Clamp,
    )?;
    for snap in &out.snapshots {
        let name = format!("snapshot_{:05}.mvlt", snap.iteration);
        tensor::save_stack(&snap.renders, out_dir.join("renders").join(name))?;
    }
    let d = out.report.summary.mean_color_displacement;
    println!(
        "stylized {} iterations; mean color moved by [{:.5}, {:.5}, {:.5}]; wrote {}",
        cfg.run.iterations,
        d[0],
        d[1],
        d[2],
        out_dir.display()
    );
    Ok(())
}
