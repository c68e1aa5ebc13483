//! `tlsbnb` command-line front end: generate instances, solve them, run
//! benchmark sweeps and the verification suites.
//!
//! Exit codes: 0 success, 1 a verification suite failed, 2 usage or input
//! error, 3 time limit hit (bounds are still written).

use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use tlsbnb::bnb::{root_translation_box, solve, SolverConfig};
use tlsbnb::instances::{generate_adversarial, generate_synthetic, GenSpec};
use tlsbnb::io::{rotation_error_deg, to_canonical_json, translation_error, InstanceFile, ResultFile};
use tlsbnb::relaxation::{build_wls_relaxation, ArcBounds, RotationBallBounds};
use tlsbnb::verify;
use tlsbnb::{axis_align_frame, rotate_instance, Arc2D, ProblemInstance, ProblemKind, Rotation3, RotationBall3};

#[derive(Parser)]
#[command(name = "tlsbnb", version, about = "Certifiably optimal truncated least squares registration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic (optionally adversarial) instance.
    Generate(GenerateArgs),
    /// Solve an instance file.
    Solve(SolveArgs),
    /// Sweep sizes and outlier rates, writing one CSV row per trial.
    Bench(BenchArgs),
    /// Run the randomized property suites and print their reports as JSON.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0.0)]
    outlier_rate: f64,
    #[arg(long, default_value_t = 10.0)]
    scale: f64,
    #[arg(long, default_value_t = 0.5)]
    eps: f64,
    /// Radius of the inlier noise ball [default: eps²]
    #[arg(long)]
    noise_radius: Option<f64>,
    #[arg(long, default_value = "pose-so2")]
    problem: ProblemKind,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.0)]
    adversarial_fraction: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// [default: pose-so2 when the instance has an axis, else rotation]
    #[arg(long)]
    problem: Option<ProblemKind>,
    #[arg(long, default_value_t = 1e-3)]
    eta_tol: f64,
    /// Seconds.
    #[arg(long, default_value_t = 10.0)]
    time_limit: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Result file; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value = "pose-so2")]
    problem: ProblemKind,
    /// Comma-separated sizes.
    #[arg(long, value_delimiter = ',', default_value = "100")]
    n: Vec<usize>,
    /// Comma-separated rates, or an inclusive range `lo..hi` with optional `:step` (default 0.1).
    #[arg(long, default_value = "0.5")]
    rate: String,
    #[arg(long, default_value_t = 10)]
    trials: u64,
    /// First seed; trial `i` uses `seed + i`.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-3)]
    eta_tol: f64,
    #[arg(long, default_value_t = 10.0)]
    time_limit: f64,
    /// CSV output; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Trials per suite.
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Adversarial searches per fraction for the certificate suite.
    #[arg(long, default_value_t = 5)]
    bnb_trials: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// A failure that maps onto a specific exit status.
enum Outcome {
    Ok,
    Failed,
    Timeout,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Solve(a) => cmd_solve(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Verify(a) => cmd_verify(a),
    };
    match result {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Failed) => ExitCode::from(1),
        Ok(Outcome::Timeout) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn write_output(path: Option<&PathBuf>, text: &str) -> anyhow::Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn time_limit(seconds: f64) -> anyhow::Result<Duration> {
    if !(seconds > 0.0 && seconds.is_finite()) {
        bail!("--time-limit must be positive");
    }
    Ok(Duration::from_secs_f64(seconds))
}

fn cmd_generate(a: GenerateArgs) -> anyhow::Result<Outcome> {
    let spec = GenSpec {
        n: a.n,
        outlier_rate: a.outlier_rate,
        scale: a.scale,
        eps: a.eps,
        noise_radius: a.noise_radius.unwrap_or(a.eps * a.eps),
        problem: a.problem,
        seed: a.seed,
        adversarial_fraction: a.adversarial_fraction,
    };
    let file = if spec.adversarial_fraction > 0.0 {
        InstanceFile::from_adversarial(&spec, &generate_adversarial(&spec)?)
    } else {
        InstanceFile::from_synthetic(&spec, &generate_synthetic(&spec)?)
    };
    fs::write(&a.out, file.to_json() + "\n").with_context(|| format!("writing {}", a.out.display()))?;
    Ok(Outcome::Ok)
}

fn read_instance(path: &PathBuf) -> anyhow::Result<ProblemInstance> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(InstanceFile::from_json(&text)?.to_instance()?)
}

fn cmd_solve(a: SolveArgs) -> anyhow::Result<Outcome> {
    let instance = read_instance(&a.input)?;
    let problem = a.problem.unwrap_or(if instance.axis.is_some() {
        ProblemKind::PoseSo2
    } else {
        ProblemKind::Rotation
    });
    let mut config = SolverConfig::new(problem);
    config.eta_tol = a.eta_tol;
    config.time_limit = time_limit(a.time_limit)?;
    config.seed = a.seed;
    let result = solve(&instance, &config)?;
    let file = ResultFile::new(problem, &instance, &result);
    write_output(a.out.as_ref(), &(file.to_json() + "\n"))?;
    eprintln!(
        "{} ub={:.6} lb={:.6} eta={:.3e} converged={} nodes={} time={:.1}ms",
        problem, result.ub, result.lb, result.eta, result.converged, result.nodes_expanded, file.wall_time_ms
    );
    Ok(if result.converged || result.eta <= a.eta_tol {
        Outcome::Ok
    } else {
        Outcome::Timeout
    })
}

/// `0.1,0.5` or `0.0..0.9` or `0.0..0.9:0.3`.
fn parse_rates(text: &str) -> anyhow::Result<Vec<f64>> {
    let rates: Vec<f64> = if let Some((lo, rest)) = text.split_once("..") {
        let (hi, step) = match rest.split_once(':') {
            Some((hi, step)) => (hi, step.parse::<f64>().context("range step")?),
            None => (rest, 0.1),
        };
        let lo: f64 = lo.parse().context("range start")?;
        let hi: f64 = hi.parse().context("range end")?;
        if !(step > 0.0) || !(hi >= lo) {
            bail!("invalid rate range {text:?}");
        }
        let count = ((hi - lo) / step + 1e-9).floor() as usize;
        (0..=count).map(|i| ((lo + i as f64 * step) * 1e9).round() / 1e9).collect()
    } else {
        text.split(',')
            .map(|s| s.trim().parse::<f64>().with_context(|| format!("rate {s:?}")))
            .collect::<anyhow::Result<_>>()?
    };
    if rates.iter().any(|r| !(0.0..1.0).contains(r)) {
        bail!("outlier rates must be in [0, 1)");
    }
    Ok(rates)
}

#[derive(Serialize)]
struct BenchRow {
    n: usize,
    rate: f64,
    seed: u64,
    ub: f64,
    lb: f64,
    eta: f64,
    rot_err_deg: f64,
    trans_err: f64,
    wall_time_ms: f64,
    relax_time_us: f64,
}

/// Median time to compute residual intervals and build the relaxation over
/// the root node.
fn relaxation_time_us(instance: &ProblemInstance, problem: ProblemKind) -> f64 {
    let aligned = match (problem, instance.axis) {
        (ProblemKind::PoseSo2, Some(axis)) => rotate_instance(instance, &axis_align_frame(&axis).expect("unit axis")),
        _ => instance.clone(),
    };
    let tball = root_translation_box(&aligned).ball();
    let arc = ArcBounds::new(&Arc2D::new(0.0, 0.5));
    let ball = RotationBallBounds::new(&RotationBall3::new(Rotation3::identity(), 0.5));
    let mut samples: Vec<f64> = (0..15)
        .map(|_| {
            let start = Instant::now();
            let intervals: Vec<_> = match problem {
                ProblemKind::PoseSo2 => aligned
                    .correspondences
                    .iter()
                    .map(|c| arc.pose_interval(&c.p, &c.q, &tball))
                    .collect(),
                ProblemKind::Rotation => aligned.correspondences.iter().map(|c| ball.interval(&c.p, &c.q)).collect(),
            };
            let relax = build_wls_relaxation(&intervals, aligned.eps);
            std::hint::black_box(&relax);
            start.elapsed().as_secs_f64() * 1e6
        })
        .collect();
    samples.sort_by(f64::total_cmp);
    samples[samples.len() / 2]
}

fn cmd_bench(a: BenchArgs) -> anyhow::Result<Outcome> {
    let rates = parse_rates(&a.rate)?;
    if a.n.contains(&0) {
        bail!("--n values must be positive");
    }
    let limit = time_limit(a.time_limit)?;
    let mut rows = Vec::new();
    for &n in &a.n {
        for &rate in &rates {
            for i in 0..a.trials {
                let seed = a.seed + i;
                let spec = GenSpec::new(n, rate, a.problem, seed);
                let g = generate_synthetic(&spec)?;
                let mut config = SolverConfig::new(a.problem);
                config.eta_tol = a.eta_tol;
                config.time_limit = limit;
                config.seed = seed;
                let res = solve(&g.instance, &config)?;
                let gt = g.instance.ground_truth.expect("generated instances carry ground truth");
                rows.push(BenchRow {
                    n,
                    rate,
                    seed,
                    ub: res.ub,
                    lb: res.lb,
                    eta: res.eta,
                    rot_err_deg: rotation_error_deg(&res.best.rotation, &gt.rotation),
                    trans_err: translation_error(&res.best.translation, &gt.translation),
                    wall_time_ms: res.wall_time * 1e3,
                    relax_time_us: relaxation_time_us(&g.instance, a.problem),
                });
            }
        }
    }
    rows.sort_by(|x, y| (x.n, x.rate, x.seed).partial_cmp(&(y.n, y.rate, y.seed)).expect("finite"));
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in &rows {
        writer.serialize(row)?;
    }
    if rows.is_empty() {
        writer.write_record([
            "n", "rate", "seed", "ub", "lb", "eta", "rot_err_deg", "trans_err", "wall_time_ms", "relax_time_us",
        ])?;
    }
    let bytes = writer.into_inner().context("flushing csv")?;
    write_output(a.out.as_ref(), &String::from_utf8(bytes)?)?;
    Ok(Outcome::Ok)
}

fn cmd_verify(a: VerifyArgs) -> anyhow::Result<Outcome> {
    let reports = vec![
        verify::check_relaxation_underestimates(a.seed, a.trials),
        verify::check_contractor_completeness(a.seed + 1, a.trials),
        verify::check_solver_vs_grid(a.seed + 2, a.trials),
        verify::check_bnb_certificates(a.seed + 3, a.bnb_trials, &[0.0, 0.5, 0.9], 60),
    ];
    write_output(a.out.as_ref(), &(to_canonical_json(&reports) + "\n"))?;
    for r in &reports {
        eprintln!(
            "{} {}: {} trials, {} failures",
            if r.passed() { "PASS" } else { "FAIL" },
            r.property,
            r.trials,
            r.failures
        );
    }
    Ok(if reports.iter().all(|r| r.passed()) {
        Outcome::Ok
    } else {
        Outcome::Failed
    })
}

#[cfg(test)]
mod tests {
    use super::parse_rates;

    #[test]
    fn rate_lists_and_ranges() {
        assert_eq!(parse_rates("0.5").unwrap(), vec![0.5]);
        assert_eq!(parse_rates("0.1,0.8").unwrap(), vec![0.1, 0.8]);
        let r = parse_rates("0.0..0.9").unwrap();
        assert_eq!(r.len(), 10);
        assert_eq!(r[3], 0.3);
        assert_eq!(parse_rates("0.2..0.8:0.3").unwrap(), vec![0.2, 0.5, 0.8]);
        assert!(parse_rates("0.5..1.0").is_err());
        assert!(parse_rates("abc").is_err());
    }
}
