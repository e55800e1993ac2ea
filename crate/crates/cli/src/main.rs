use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use ceest::image_io::{read_image, write_image, write_mask};
use ceest::localize::{de_fp_best_flip, detect_regions, extract_blocks, EnergyParams};
use ceest::noise::gaussian_noise_matrix;
use ceest::nonparametric::{estimate_nonparametric, NonparamConfig};
use ceest::parametric::{estimate_parametric, ParamGrid};
use ceest::solver::{recover_histogram, SolverConfig};
use ceest::synth::{synth_composite, synth_image, BaseHistogram, CurveSpec, Region, SynthSpec};
use ceest::transforms::TransformCurve;
use ceest::{Error, Result};
use ceest_cli::curve_arg::parse_curve_spec;
use ceest_cli::eval::{
    eval_curve, eval_gamma, eval_localize, CurveEvalConfig, CurveKind, GammaEvalConfig,
    LocalizeEvalConfig,
};
use ceest_cli::exit_code;
use ceest_cli::report::{write_csv, Report};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

/// Estimate contrast enhancement curves from pixel histograms and localize
/// regions enhanced differently from the rest of an image.
#[derive(Parser)]
#[command(name = "ceest", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic image enhanced by a known curve.
    Synth(SynthArgs),
    /// Generate an image whose region is enhanced by a second curve.
    SynthComposite(CompositeArgs),
    /// Grid search for a parametric curve (gamma or sigmoid).
    EstimateGamma(EstimateGammaArgs),
    /// Estimate a free-form monotone curve.
    EstimateCurve(EstimateCurveArgs),
    /// Recover the pre-enhancement histogram for a given curve.
    RecoverHist(RecoverArgs),
    /// Localize a region enhanced by a different curve.
    Localize(LocalizeArgs),
    /// Gamma estimation accuracy on synthetic images.
    EvalGamma(EvalGammaArgs),
    /// Free-form curve estimation accuracy on synthetic images.
    EvalCurve(EvalCurveArgs),
    /// Localization DE/FP on synthetic composites.
    EvalLocalize(EvalLocalizeArgs),
}

#[derive(Args, Serialize)]
struct Common {
    /// Write the JSON report to this path.
    #[arg(long, visible_alias = "report")]
    json: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Record wall-clock times in the JSON report.
    #[arg(long)]
    timings: bool,
}

#[derive(Args, Serialize)]
struct SolverArgs {
    /// Weight of the empty-bin regularizer.
    #[arg(long, default_value_t = 0.75)]
    lambda: f64,
    /// Sharpness of the smooth empty-bin surrogate.
    #[arg(long, default_value_t = 1.0)]
    rho: f64,
}

impl SolverArgs {
    fn config(&self) -> SolverConfig {
        SolverConfig {
            lambda: self.lambda,
            rho: self.rho,
            ..SolverConfig::default()
        }
    }
}

#[derive(Args, Serialize)]
struct ImageArgs {
    #[arg(long, default_value_t = 8)]
    bits: u32,
    #[arg(long, default_value_t = 512)]
    width: usize,
    #[arg(long, default_value_t = 512)]
    height: usize,
    /// Smoothing width of the random base histogram, as a fraction of the range.
    #[arg(long, default_value_t = 0.02)]
    smoothness: f64,
    /// Resample pixels from this image's histogram instead.
    #[arg(long)]
    base_image: Option<PathBuf>,
    /// Standard deviation of the Gaussian noise added after the curve.
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
}

impl ImageArgs {
    fn spec(&self, curve: CurveSpec, seed: u64) -> SynthSpec {
        SynthSpec {
            bits: self.bits,
            width: self.width,
            height: self.height,
            base: match &self.base_image {
                Some(path) => BaseHistogram::FromImage { path: path.clone() },
                None => BaseHistogram::SmoothRandom {
                    smoothness: self.smoothness,
                },
            },
            curve,
            sigma: self.sigma,
            seed,
        }
    }
}

#[derive(Args, Serialize)]
struct SynthArgs {
    #[command(flatten)]
    #[serde(flatten)]
    image: ImageArgs,
    /// identity, histeq, gamma:<g>, sigmoid:<alpha>,<mu> or spline:<x>:<y>,...
    #[arg(long, default_value = "identity")]
    curve: String,
    /// Enhanced image (.pgm or .png).
    #[arg(long)]
    out: PathBuf,
    /// Also write the pre-enhancement image.
    #[arg(long)]
    pre: Option<PathBuf>,
    /// Also write the curve as JSON.
    #[arg(long)]
    curve_out: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
}

#[derive(Serialize)]
struct SynthResult {
    spec: SynthSpec,
    curve: TransformCurve,
    empty_bins_pre: usize,
    empty_bins_out: usize,
}

#[derive(Args, Serialize)]
struct CompositeArgs {
    #[command(flatten)]
    #[serde(flatten)]
    image: ImageArgs,
    /// Curve outside the region.
    #[arg(long)]
    curve0: String,
    /// Curve inside the region.
    #[arg(long)]
    curve1: String,
    /// Rectangle `x,y,width,height`.
    #[arg(long, conflicts_with = "region_mask")]
    region: Option<String>,
    /// Region as a binary image (nonzero inside).
    #[arg(long)]
    region_mask: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Ground-truth mask (PGM, 0/255).
    #[arg(long)]
    truth: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
}

#[derive(Serialize)]
struct CompositeResult {
    spec0: SynthSpec,
    spec1: SynthSpec,
    region_area: f64,
    curve0: TransformCurve,
    curve1: TransformCurve,
}

#[derive(Args, Serialize)]
struct EstimateGammaArgs {
    #[arg(long)]
    input: PathBuf,
    /// `a:step:b`, a comma list, or `sigmoid:<alphas>x<mus>`.
    #[arg(long, default_value = "0.1:0.01:2.5")]
    grid: String,
    /// Probing noise level.
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    #[command(flatten)]
    #[serde(flatten)]
    solver: SolverArgs,
    /// Objective of every grid point as CSV.
    #[arg(long)]
    landscape: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
}

#[derive(Args, Serialize)]
struct EstimateCurveArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    /// Coupling weight.
    #[arg(long, default_value_t = 10.0)]
    xi: f64,
    /// Maximum alternation rounds.
    #[arg(long, default_value_t = 15)]
    alt_max: usize,
    #[command(flatten)]
    #[serde(flatten)]
    solver: SolverArgs,
    /// Estimated curve as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Coupled objective per round as CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
}

#[derive(Serialize)]
struct CurveResult {
    curve: TransformCurve,
    rounds: usize,
    objective_trace: Vec<f64>,
}

#[derive(Args, Serialize)]
struct RecoverArgs {
    #[arg(long)]
    input: PathBuf,
    /// Curve JSON file, or a curve description as for `synth`.
    #[arg(long)]
    curve: String,
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    #[command(flatten)]
    #[serde(flatten)]
    solver: SolverArgs,
    /// Recovered histogram as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Objective per iteration as CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
}

#[derive(Args, Serialize)]
struct DetectorArgs {
    #[arg(long = "block", default_value_t = 50)]
    block_size: usize,
    #[arg(long, default_value_t = 2)]
    stride: usize,
    #[arg(long, default_value_t = 0.1)]
    beta: f64,
    #[arg(long, default_value_t = 0.01)]
    sigma: f64,
    #[arg(long, default_value_t = 10)]
    em_max: usize,
    #[arg(long, default_value_t = 0.75)]
    lambda: f64,
    #[arg(long, default_value_t = 10.0)]
    xi: f64,
    #[arg(long, default_value_t = 15)]
    alt_max: usize,
}

impl DetectorArgs {
    fn params(&self) -> EnergyParams {
        EnergyParams {
            beta: self.beta,
            lambda: self.lambda,
            sigma: self.sigma,
            em_max: self.em_max,
            block_size: self.block_size,
            stride: self.stride,
            nonparam: NonparamConfig {
                xi: self.xi,
                alt_max: self.alt_max,
                solver: SolverConfig {
                    lambda: self.lambda,
                    ..SolverConfig::default()
                },
            },
        }
    }
}

#[derive(Args, Serialize)]
struct LocalizeArgs {
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    detector: DetectorArgs,
    /// Pixel mask output (PGM, 0/255).
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Ground-truth mask for DE/FP.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
}

#[derive(Serialize)]
struct Scores {
    de: f64,
    fp: f64,
}

#[derive(Serialize)]
struct LocalizeResult {
    params: EnergyParams,
    block_cols: usize,
    block_rows: usize,
    labels: Vec<u8>,
    curve0: TransformCurve,
    curve1: TransformCurve,
    diagnostics: ceest::localize::Diagnostics,
    #[serde(skip_serializing_if = "Option::is_none")]
    truth: Option<Scores>,
}

#[derive(Args, Serialize)]
struct EvalGammaArgs {
    #[arg(long, default_value_t = 20)]
    images: usize,
    #[arg(long, value_delimiter = ',', default_value = "0.4,0.7,1.3,1.8,2.2")]
    gammas: Vec<f64>,
    /// Noise levels; one accuracy cell each.
    #[arg(long, value_delimiter = ',', default_value = "0.01")]
    sigmas: Vec<f64>,
    /// Probing noise level (defaults to each cell's own).
    #[arg(long)]
    probe_sigma: Option<f64>,
    #[arg(long, default_value = "0.1:0.01:2.5")]
    grid: String,
    #[arg(long, default_value_t = 0.05)]
    eps: f64,
    #[arg(long, default_value_t = 8)]
    bits: u32,
    #[arg(long, default_value_t = 1000)]
    width: usize,
    #[arg(long, default_value_t = 1000)]
    height: usize,
    #[command(flatten)]
    #[serde(flatten)]
    solver: SolverArgs,
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum KindArg {
    Spline,
    HistEq,
}

#[derive(Args, Serialize)]
struct EvalCurveArgs {
    #[arg(long, value_enum, default_value_t = KindArg::Spline)]
    kind: KindArg,
    #[arg(long, default_value_t = 10)]
    cases: usize,
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    #[arg(long, default_value_t = 0.05)]
    eps: f64,
    #[arg(long, default_value_t = 8)]
    bits: u32,
    #[arg(long, default_value_t = 1000)]
    width: usize,
    #[arg(long, default_value_t = 1000)]
    height: usize,
    #[arg(long, default_value_t = 10.0)]
    xi: f64,
    #[arg(long, default_value_t = 15)]
    alt_max: usize,
    #[command(flatten)]
    #[serde(flatten)]
    solver: SolverArgs,
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
}

#[derive(Args, Serialize)]
struct EvalLocalizeArgs {
    #[arg(long, default_value_t = 10)]
    cases: usize,
    #[arg(long, default_value_t = 512)]
    size: usize,
    #[arg(long, default_value_t = 8)]
    bits: u32,
    /// Curve outside the region.
    #[arg(long, default_value_t = 1.4)]
    gamma0: f64,
    /// Curve inside the region.
    #[arg(long, default_value_t = 0.6)]
    gamma1: f64,
    #[arg(long, default_value_t = 0.2)]
    area_min: f64,
    #[arg(long, default_value_t = 0.4)]
    area_max: f64,
    #[command(flatten)]
    #[serde(flatten)]
    detector: DetectorArgs,
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn run(command: Command) -> Result<()> {
    let start = Instant::now();
    match command {
        Command::Synth(a) => synth(&a, start),
        Command::SynthComposite(a) => composite(&a, start),
        Command::EstimateGamma(a) => estimate_gamma(&a, start),
        Command::EstimateCurve(a) => estimate_curve(&a, start),
        Command::RecoverHist(a) => recover(&a, start),
        Command::Localize(a) => localize(&a, start),
        Command::EvalGamma(a) => run_eval_gamma(&a, start),
        Command::EvalCurve(a) => run_eval_curve(&a, start),
        Command::EvalLocalize(a) => run_eval_localize(&a, start),
    }
}

fn emit<A: Serialize, R: Serialize>(
    name: &str,
    common: &Common,
    args: &A,
    result: &R,
    start: Instant,
) -> Result<()> {
    let elapsed = start.elapsed();
    println!("done in {:.2}s", elapsed.as_secs_f64());
    if let Some(path) = &common.json {
        Report::new(name, args, result)
            .with_time(common.timings.then_some(elapsed))
            .write(path)?;
    }
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn synth(a: &SynthArgs, start: Instant) -> Result<()> {
    let spec = a.image.spec(parse_curve_spec(&a.curve)?, a.common.seed);
    let img = synth_image(&spec)?;
    write_image(&img.transformed, &a.out)?;
    if let Some(path) = &a.pre {
        write_image(&img.pre, path)?;
    }
    if let Some(path) = &a.curve_out {
        write_json(path, &img.curve)?;
    }
    let result = SynthResult {
        empty_bins_pre: img.pre.histogram()?.empty_bin_count(0.0),
        empty_bins_out: img.transformed.histogram()?.empty_bin_count(0.0),
        curve: img.curve,
        spec,
    };
    println!(
        "{}x{} {}-bit image, empty bins {} -> {}",
        result.spec.width,
        result.spec.height,
        result.spec.bits,
        result.empty_bins_pre,
        result.empty_bins_out
    );
    emit("synth", &a.common, a, &result, start)
}

fn parse_rect(s: &str) -> Result<Region> {
    let v: Vec<usize> = s
        .split(',')
        .map(|t| t.trim().parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Input(format!("region '{s}' is not x,y,width,height")))?;
    let [x, y, width, height] = v[..] else {
        return Err(Error::Input(format!(
            "region '{s}' is not x,y,width,height"
        )));
    };
    Ok(Region::Rect {
        x,
        y,
        width,
        height,
    })
}

fn composite(a: &CompositeArgs, start: Instant) -> Result<()> {
    let spec0 = a.image.spec(parse_curve_spec(&a.curve0)?, a.common.seed);
    let spec1 = SynthSpec {
        curve: parse_curve_spec(&a.curve1)?,
        ..spec0.clone()
    };
    let region = match (&a.region, &a.region_mask) {
        (Some(rect), _) => parse_rect(rect)?,
        (None, Some(path)) => Region::Mask {
            mask: read_image(path)?.to_mask(),
        },
        (None, None) => return Err(Error::Input("give --region or --region-mask".into())),
    };
    let c = synth_composite(&spec0, &spec1, &region)?;
    write_image(&c.image, &a.out)?;
    if let Some(path) = &a.truth {
        write_mask(spec0.width, spec0.height, &c.truth_mask, path)?;
    }
    let inside = c.truth_mask.iter().filter(|&&m| m).count();
    let result = CompositeResult {
        region_area: inside as f64 / c.truth_mask.len() as f64,
        spec0,
        spec1,
        curve0: c.curve0,
        curve1: c.curve1,
    };
    println!(
        "region covers {:.1}% of the image",
        100.0 * result.region_area
    );
    emit("synth-composite", &a.common, a, &result, start)
}

fn estimate_gamma(a: &EstimateGammaArgs, start: Instant) -> Result<()> {
    let grid: ParamGrid = a.grid.parse()?;
    let h = read_image(&a.input)?.histogram()?;
    let noise = gaussian_noise_matrix(a.sigma, h.top())?;
    let est = estimate_parametric(&h, &grid, &noise, &a.solver.config())?;
    if let Some(path) = &a.landscape {
        write_csv(
            path,
            ("param", "objective"),
            est.landscape.iter().map(|p| (p.param, p.objective)),
        )?;
    }
    println!(
        "best {} (objective {:.6e})",
        est.best_param, est.best_objective
    );
    emit("estimate-gamma", &a.common, a, &est, start)
}

fn estimate_curve(a: &EstimateCurveArgs, start: Instant) -> Result<()> {
    let h = read_image(&a.input)?.histogram()?;
    let noise = gaussian_noise_matrix(a.sigma, h.top())?;
    let cfg = NonparamConfig {
        xi: a.xi,
        alt_max: a.alt_max,
        solver: a.solver.config(),
    };
    let est = estimate_nonparametric(&h, &noise, &cfg)?;
    if let Some(path) = &a.out {
        write_json(path, &est.curve)?;
    }
    if let Some(path) = &a.trace {
        write_csv(
            path,
            ("round", "objective"),
            est.objective_trace.iter().copied().enumerate(),
        )?;
    }
    println!(
        "{} rounds, objective {:.6e}, curve range {} levels",
        est.rounds,
        est.objective_trace.last().copied().unwrap_or(f64::NAN),
        est.curve.range_size()
    );
    let result = CurveResult {
        curve: est.curve,
        rounds: est.rounds,
        objective_trace: est.objective_trace,
    };
    emit("estimate-curve", &a.common, a, &result, start)
}

fn load_curve(arg: &str, n: usize) -> Result<TransformCurve> {
    let path = Path::new(arg);
    if path.is_file() {
        return Ok(serde_json::from_slice(&fs::read(path)?)?);
    }
    match parse_curve_spec(arg)? {
        CurveSpec::HistEq => Err(Error::Input(
            "histeq needs the original image; pass a curve file".into(),
        )),
        spec => spec.build(n, &ceest::histogram::PixelHistogram::uniform(bits_of(n))?),
    }
}

fn bits_of(n: usize) -> u32 {
    (n + 1).trailing_zeros()
}

fn recover(a: &RecoverArgs, start: Instant) -> Result<()> {
    let h = read_image(&a.input)?.histogram()?;
    let curve = load_curve(&a.curve, h.top())?;
    let noise = gaussian_noise_matrix(a.sigma, h.top())?;
    let report = recover_histogram(&h, &curve, &noise, &a.solver.config())?;
    if let Some(path) = &a.out {
        write_json(path, &report.h_star)?;
    }
    if let Some(path) = &a.trace {
        write_csv(
            path,
            ("iteration", "objective"),
            report.trace.iter().copied().enumerate(),
        )?;
    }
    println!(
        "objective {:.6e} after {} iterations, {} empty bins",
        report.objective,
        report.iterations,
        report
            .h_star
            .empty_bin_count(ceest::histogram::DEFAULT_EPS_BIN)
    );
    emit("recover-hist", &a.common, a, &report, start)
}

fn localize(a: &LocalizeArgs, start: Instant) -> Result<()> {
    let image = read_image(&a.input)?;
    let params = a.detector.params();
    let det = detect_regions(&image, &params)?;
    let grid = extract_blocks(&image, params.block_size, params.stride)?;
    let pred: Vec<bool> = det.labels.pixel_mask.iter().map(|&m| m == 1).collect();
    if let Some(path) = &a.mask {
        write_mask(image.width(), image.height(), &pred, path)?;
    }
    let truth = match &a.truth {
        Some(path) => {
            let t = read_image(path)?;
            if (t.width(), t.height()) != (image.width(), image.height()) {
                return Err(Error::Input(
                    "truth mask size differs from the image".into(),
                ));
            }
            let (de, fp) = de_fp_best_flip(&pred, &t.to_mask())?;
            println!("DE {de:.3} FP {fp:.3}");
            Some(Scores { de, fp })
        }
        None => None,
    };
    let d = &det.diagnostics;
    println!(
        "{} of {} blocks labeled 1 after {} rounds{}",
        d.label_one_blocks,
        d.blocks,
        d.rounds,
        if d.degenerate { " (degenerate)" } else { "" }
    );
    let result = LocalizeResult {
        params,
        block_cols: grid.cols,
        block_rows: grid.rows,
        labels: det.labels.labels,
        curve0: det.curve0,
        curve1: det.curve1,
        diagnostics: det.diagnostics,
        truth,
    };
    emit("localize", &a.common, a, &result, start)
}

fn run_eval_gamma(a: &EvalGammaArgs, start: Instant) -> Result<()> {
    let cfg = GammaEvalConfig {
        images: a.images,
        bits: a.bits,
        width: a.width,
        height: a.height,
        gammas: a.gammas.clone(),
        sigmas: a.sigmas.clone(),
        probe_sigma: a.probe_sigma,
        grid: a.grid.parse()?,
        eps: a.eps,
        solver: a.solver.config(),
        seed: a.common.seed,
        timings: a.common.timings,
    };
    let r = eval_gamma(&cfg)?;
    for cell in &r.cells {
        println!(
            "sigma {:<5} A_{} = {:.3} ({} images)",
            cell.sigma,
            r.eps,
            cell.accuracy,
            cell.cases.len()
        );
    }
    emit("eval-gamma", &a.common, a, &r, start)
}

fn run_eval_curve(a: &EvalCurveArgs, start: Instant) -> Result<()> {
    let cfg = CurveEvalConfig {
        kind: match a.kind {
            KindArg::Spline => CurveKind::Spline,
            KindArg::HistEq => CurveKind::HistEq,
        },
        cases: a.cases,
        bits: a.bits,
        width: a.width,
        height: a.height,
        sigma: a.sigma,
        eps: a.eps,
        nonparam: NonparamConfig {
            xi: a.xi,
            alt_max: a.alt_max,
            solver: a.solver.config(),
        },
        seed: a.common.seed,
        timings: a.common.timings,
    };
    let r = eval_curve(&cfg)?;
    let worst = r.cases.iter().map(|c| c.error).fold(0.0, f64::max);
    println!(
        "A_{} = {:.3} over {} cases, worst error {worst:.3}",
        r.eps,
        r.accuracy,
        r.cases.len()
    );
    emit("eval-curve", &a.common, a, &r, start)
}

fn run_eval_localize(a: &EvalLocalizeArgs, start: Instant) -> Result<()> {
    let cfg = LocalizeEvalConfig {
        cases: a.cases,
        bits: a.bits,
        size: a.size,
        gamma0: a.gamma0,
        gamma1: a.gamma1,
        area_min: a.area_min,
        area_max: a.area_max,
        params: a.detector.params(),
        seed: a.common.seed,
        timings: a.common.timings,
    };
    let r = eval_localize(&cfg)?;
    println!(
        "mean DE {:.3} mean FP {:.3} over {} composites",
        r.mean_de,
        r.mean_fp,
        r.cases.len()
    );
    emit("eval-localize", &a.common, a, &r, start)
}
