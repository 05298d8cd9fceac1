//! Command-line front end.
//!
//! Exit codes: 0 when the command succeeded and its verdict (if any) is positive, 2 when
//! it ran but the verdict is negative, 1 on usage, configuration or I/O errors.

use crate::autodiff::{gradient_fd, norm2, FdStep, NondegeneracyThreshold, ParamVector, TrainingProblem};
use crate::certify::{
    certify_independent_inputs, certify_main, certify_nondegenerate_minimum, certify_separable, check_separability,
    CertificationReport, SeparabilityStatus, Tolerances,
};
use crate::construct::{construct_full_rank_net, rank_probe, ConstructionConfig};
use crate::error::{Error, Result};
use crate::io::{self, Real};
use crate::linalg::{Matrix, RankTolerance};
use crate::losses::{LabeledDataset, Loss, RegressionLossKind};
use crate::model::{audit_activation, ActivationKind, Architecture, AuditGrid, AuditMode, NetworkParams};
use crate::trainer::{history_csv, train, TrainConfig, TrainStatus};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::ffi::OsString;
use std::path::{Path, PathBuf};

pub const SEED_ENV: &str = "LOSSCAPE_SEED";

#[derive(Debug, Parser)]
#[command(name = "losscape", version, about = "Global-optimality certificates for feedforward-network critical points")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compare backpropagated gradients with central differences on random networks
    GradCheck(GradCheckArgs),
    /// Train networks by steepest descent and save parameters and histories
    Train(TrainArgs),
    /// Certify a parameter file against one of the optimality theorems
    Certify(CertifyArgs),
    /// Construct parameters with rank([F_k, 1]) = N
    Construct(ConstructArgs),
    /// Count rank-deficient feature matrices over random parameter draws
    ProbeRank(ProbeArgs),
    /// Check activation range or growth bounds on a grid
    AuditActivation(AuditArgs),
    /// Linear separability certificate for the features of a classification CSV
    Separability(SeparabilityArgs),
}

#[derive(Debug, Clone, Default, Args)]
struct Common {
    /// JSON experiment configuration; flags override its fields
    #[arg(long)]
    config: Option<PathBuf>,
    /// Random seed (falls back to the config seeds, then LOSSCAPE_SEED, then 0)
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct GradCheckArgs {
    #[command(flatten)]
    common: Common,
    /// Number of random configurations
    #[arg(long, default_value_t = 20)]
    cases: usize,
    /// Largest acceptable relative error
    #[arg(long, default_value_t = 1e-5)]
    tol: f64,
}

#[derive(Debug, Clone, Default, Args)]
struct ModelFlags {
    /// Dataset CSV
    #[arg(long)]
    data: Option<PathBuf>,
    /// Layer widths n_0,...,n_L
    #[arg(long, value_delimiter = ',')]
    widths: Option<Vec<usize>>,
    /// sigmoid | tanh | identity | softplus:<alpha>
    #[arg(long, value_parser = parse_activation)]
    activation: Option<ActivationKind>,
    /// squared | pseudo_huber:<delta> | blake_zisserman:<delta> | corrupted_gaussian:<alpha>,<w> | cauchy:<delta> | separable
    #[arg(long, value_parser = parse_loss)]
    loss: Option<Loss>,
}

#[derive(Debug, Clone, Default, Args)]
struct ToleranceFlags {
    #[arg(long)]
    eps_crit: Option<f64>,
    #[arg(long)]
    eps_phi: Option<f64>,
    /// Absolute singular-value cutoff for rank decisions (default: automatic)
    #[arg(long)]
    rank_tol: Option<f64>,
    /// Absolute non-degeneracy threshold (default: 1e-6 · max(1, σ_max))
    #[arg(long)]
    tau_nd: Option<f64>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    model: ModelFlags,
    #[command(flatten)]
    tol: ToleranceFlags,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    init_scale: Option<f64>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TheoremArg {
    IndependentInputs,
    Main,
    NondegenerateMinimum,
    Separable,
}

#[derive(Debug, Args)]
struct CertifyArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum)]
    theorem: TheoremArg,
    /// Parameter JSON
    #[arg(long)]
    params: PathBuf,
    #[command(flatten)]
    model: ModelFlags,
    #[command(flatten)]
    tol: ToleranceFlags,
    /// Wide layer (feature layer for the separable theorem)
    #[arg(long)]
    k: Option<usize>,
    /// Layer subset I, 1-based, e.g. "2,3"
    #[arg(long, value_delimiter = ',')]
    subset: Option<Vec<usize>>,
    /// Report path (default: stdout)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ConstructArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    model: ModelFlags,
    #[arg(long)]
    k: Option<usize>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ProbeArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    model: ModelFlags,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    #[arg(long)]
    init_scale: Option<f64>,
    /// Number of random inputs when no dataset is given (default n_k + 1)
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    rank_tol: Option<f64>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AuditModeArg {
    Bounded,
    Growth,
}

#[derive(Debug, Args)]
struct AuditArgs {
    #[arg(long, value_parser = parse_activation)]
    activation: ActivationKind,
    /// Default: bounded for sigmoid/tanh, growth for softplus
    #[arg(long, value_enum)]
    mode: Option<AuditModeArg>,
    /// Growth constants ρ1,ρ2,ρ3,ρ4 (default for softplus: 1/α, α, 1, ln2/α)
    #[arg(long, value_delimiter = ',', num_args = 4)]
    rho: Option<Vec<f64>>,
    #[arg(long, default_value_t = 50.0)]
    half_width: f64,
    #[arg(long, default_value_t = 10_000)]
    points: usize,
}

#[derive(Debug, Args)]
struct SeparabilityArgs {
    /// Classification CSV
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 100_000)]
    max_passes: usize,
    /// Certificate path (default: stdout)
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_params(spec: &str, name: &str, count: usize) -> std::result::Result<Vec<f64>, String> {
    let values: Vec<f64> = spec
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| format!("{name}: \"{v}\" is not a number")))
        .collect::<std::result::Result<_, _>>()?;
    if values.len() != count {
        return Err(format!("{name} takes {count} parameter(s), got {}", values.len()));
    }
    Ok(values)
}

pub fn parse_activation(s: &str) -> std::result::Result<ActivationKind, String> {
    let (name, rest) = s.split_once(':').map_or((s, None), |(n, r)| (n, Some(r)));
    let kind = match (name, rest) {
        ("sigmoid", None) => ActivationKind::Sigmoid,
        ("tanh", None) => ActivationKind::Tanh,
        ("identity", None) => ActivationKind::Identity,
        ("softplus", None) => ActivationKind::Softplus { alpha: 1.0 },
        ("softplus", Some(p)) => ActivationKind::Softplus {
            alpha: parse_params(p, "softplus", 1)?[0],
        },
        _ => return Err(format!("unknown activation \"{s}\"")),
    };
    kind.validate().map_err(|e| e.to_string())?;
    Ok(kind)
}

pub fn parse_loss(s: &str) -> std::result::Result<Loss, String> {
    let (name, rest) = s.split_once(':').map_or((s, None), |(n, r)| (n, Some(r)));
    let one = |n: &str| -> std::result::Result<f64, String> { Ok(parse_params(rest.unwrap_or("1"), n, 1)?[0]) };
    let loss = match name {
        "separable" if rest.is_none() => Loss::Separable,
        "squared" if rest.is_none() => Loss::regression(RegressionLossKind::Squared),
        "pseudo_huber" => Loss::regression(RegressionLossKind::PseudoHuber { delta: one(name)? }),
        "blake_zisserman" => Loss::regression(RegressionLossKind::BlakeZisserman { delta: one(name)? }),
        "cauchy" => Loss::regression(RegressionLossKind::Cauchy { delta: one(name)? }),
        "corrupted_gaussian" => {
            let p = parse_params(rest.ok_or("corrupted_gaussian needs <alpha>,<w>")?, name, 2)?;
            Loss::regression(RegressionLossKind::CorruptedGaussian { alpha: p[0], w: p[1] })
        }
        _ => return Err(format!("unknown loss \"{s}\"")),
    };
    loss.validate().map_err(|e| e.to_string())?;
    Ok(loss)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToleranceConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps_crit: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps_phi: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rank_tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_nd: Option<f64>,
}

/// Experiment description shared by the subcommands. Every field is optional; flags
/// override the document.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub widths: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub activation: Option<ActivationKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss: Option<Loss>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subset: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tolerances: Option<ToleranceConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iters: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub init_scale: Option<f64>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?).map_err(|e| match e {
            Error::Json(j) => Error::parse(path.display().to_string(), j.to_string()),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: Option<f64>| match v {
            Some(x) if !(x.is_finite() && x > 0.0) => Err(Error::parse(name, format!("must be positive, got {x}"))),
            _ => Ok(()),
        };
        if let Some(t) = &self.tolerances {
            positive("tolerances.eps_crit", t.eps_crit)?;
            positive("tolerances.eps_phi", t.eps_phi)?;
            positive("tolerances.rank_tol", t.rank_tol)?;
            positive("tolerances.tau_nd", t.tau_nd)?;
        }
        positive("init_scale", self.init_scale)?;
        if let Some(a) = &self.activation {
            a.validate().map_err(|e| Error::parse("activation", e.to_string()))?;
        }
        if let Some(l) = &self.loss {
            l.validate().map_err(|e| Error::parse("loss", e.to_string()))?;
        }
        Ok(())
    }

    fn load_optional(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    fn merge_model(&mut self, flags: &ModelFlags) {
        if let Some(d) = &flags.data {
            self.dataset = Some(d.clone());
        }
        if let Some(w) = &flags.widths {
            self.widths = Some(w.clone());
        }
        if let Some(a) = flags.activation {
            self.activation = Some(a);
        }
        if let Some(l) = flags.loss {
            self.loss = Some(l);
        }
    }

    fn merge_tolerances(&mut self, flags: &ToleranceFlags) {
        let t = self.tolerances.get_or_insert_with(ToleranceConfig::default);
        t.eps_crit = flags.eps_crit.or(t.eps_crit);
        t.eps_phi = flags.eps_phi.or(t.eps_phi);
        t.rank_tol = flags.rank_tol.or(t.rank_tol);
        t.tau_nd = flags.tau_nd.or(t.tau_nd);
    }

    pub fn tolerances(&self) -> Tolerances {
        let mut tol = Tolerances::default();
        if let Some(t) = &self.tolerances {
            if let Some(v) = t.eps_crit {
                tol.eps_crit = v;
            }
            if let Some(v) = t.eps_phi {
                tol.eps_phi = v;
            }
            if let Some(v) = t.rank_tol {
                tol.rank_tol = RankTolerance::Absolute(v);
                tol.separability.rank_tol = RankTolerance::Absolute(v);
            }
            if let Some(v) = t.tau_nd {
                tol.tau_nd = NondegeneracyThreshold::Absolute(v);
            }
        }
        tol
    }

    fn rank_tolerance(&self) -> RankTolerance {
        self.tolerances().rank_tol
    }

    fn dataset(&self) -> Result<LabeledDataset> {
        let path = self
            .dataset
            .as_ref()
            .ok_or_else(|| Error::invalid("no dataset given (--data or \"dataset\" in the config)"))?;
        io::read_dataset(path)
    }

    fn architecture(&self) -> Result<Architecture> {
        let widths = self
            .widths
            .clone()
            .ok_or_else(|| Error::invalid("no architecture given (--widths or \"widths\" in the config)"))?;
        Architecture::new(widths, self.activation.unwrap_or(ActivationKind::Sigmoid))
    }

    fn output_dir(&self) -> PathBuf {
        self.output_dir.clone().unwrap_or_else(|| PathBuf::from("."))
    }
}

/// Seed precedence: flag, first config seed, `LOSSCAPE_SEED`, 0.
fn resolve_seeds(flag: Option<u64>, cfg: &ExperimentConfig) -> Result<Vec<u64>> {
    if let Some(s) = flag {
        return Ok(vec![s]);
    }
    if let Some(seeds) = cfg.seeds.as_ref().filter(|s| !s.is_empty()) {
        return Ok(seeds.clone());
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse::<u64>()
            .map(|s| vec![s])
            .map_err(|_| Error::parse(SEED_ENV, format!("\"{v}\" is not an unsigned integer"))),
        Err(_) => Ok(vec![0]),
    }
}

enum Outcome {
    Success,
    Negative,
}

/// Runs the CLI on `argv` (including the program name) and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    let result = match cli.command {
        Command::GradCheck(a) => grad_check(a),
        Command::Train(a) => train_cmd(a),
        Command::Certify(a) => certify_cmd(a),
        Command::Construct(a) => construct_cmd(a),
        Command::ProbeRank(a) => probe_cmd(a),
        Command::AuditActivation(a) => audit_cmd(a),
        Command::Separability(a) => separability_cmd(a),
    };
    match result {
        Ok(Outcome::Success) => 0,
        Ok(Outcome::Negative) => 2,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn write_output(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    io::write_atomic(&path, contents.as_bytes())?;
    Ok(path)
}

fn emit(out: Option<&Path>, contents: &str) -> Result<()> {
    match out {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            io::write_atomic(path, contents.as_bytes())
        }
        None => {
            print!("{contents}");
            Ok(())
        }
    }
}

/// One random configuration of the gradient check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckCase {
    pub widths: Vec<usize>,
    pub activation: ActivationKind,
    pub loss: Loss,
    pub samples: usize,
    pub relative_error: f64,
}

/// `‖a − b‖₂ / max(‖a‖₂, ‖b‖₂)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm2(a).max(norm2(b));
    if scale == 0.0 {
        0.0
    } else {
        norm2(&diff) / scale
    }
}

/// Random networks (depth 1..=4, widths 1..=6, 2..=8 samples) over the sigmoid, tanh
/// and softplus activations and the squared, pseudo-Huber and Cauchy losses.
pub fn gradient_check_suite(cases: usize, seed: u64) -> Result<Vec<GradCheckCase>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let activations = [ActivationKind::Sigmoid, ActivationKind::Tanh, ActivationKind::Softplus { alpha: 1.0 }];
    let losses = [
        RegressionLossKind::Squared,
        RegressionLossKind::PseudoHuber { delta: 1.0 },
        RegressionLossKind::Cauchy { delta: 1.0 },
    ];
    (0..cases)
        .map(|case| {
            let depth = rng.random_range(1..=4);
            let widths: Vec<usize> = (0..=depth).map(|_| rng.random_range(1..=6)).collect();
            let activation = activations[case % 3];
            let loss = Loss::regression(losses[(case / 3) % 3]);
            let n = rng.random_range(2..=8);
            let x = Matrix::from_fn(n, widths[0], |_, _| rng.random_range(-1.0..1.0));
            let y = Matrix::from_fn(n, widths[depth], |_, _| rng.random_range(0.2..0.8));
            let arch = Architecture::new(widths.clone(), activation)?;
            let mut params = NetworkParams::random_init(&arch, 1.0, &mut rng);
            for b in params.biases.iter_mut().flatten() {
                *b = 0.5 * rng.sample::<f64, _>(StandardNormal);
            }
            let problem = TrainingProblem::new(arch, LabeledDataset::regression(x, y)?, loss)?;
            let theta = ParamVector::from_params(&params).flat;
            let exact = problem.gradient(&theta)?;
            let fd = gradient_fd(&|t: &[f64]| problem.objective(t), &theta, FdStep::GRADIENT)?;
            Ok(GradCheckCase {
                widths,
                activation,
                loss,
                samples: n,
                relative_error: relative_error(&exact, &fd),
            })
        })
        .collect()
}

fn grad_check(args: GradCheckArgs) -> Result<Outcome> {
    let cfg = ExperimentConfig::load_optional(args.common.config.as_deref())?;
    let seed = resolve_seeds(args.common.seed, &cfg)?[0];
    let cases = gradient_check_suite(args.cases, seed)?;
    let worst = cases.iter().map(|c| c.relative_error).fold(0.0, f64::max);
    println!("cases: {}", cases.len());
    println!("max relative error: {}", io::format_real(worst));
    Ok(if worst <= args.tol { Outcome::Success } else { Outcome::Negative })
}

#[derive(Debug, Serialize)]
struct TrainSummary {
    seed: u64,
    status: TrainStatus,
    iterations: usize,
    objective: Real,
    grad_norm: Real,
    params: String,
    history: String,
}

fn train_cmd(args: TrainArgs) -> Result<Outcome> {
    let mut cfg = ExperimentConfig::load_optional(args.common.config.as_deref())?;
    cfg.merge_model(&args.model);
    cfg.merge_tolerances(&args.tol);
    if let Some(v) = args.max_iters {
        cfg.max_iters = Some(v);
    }
    if let Some(v) = args.init_scale {
        cfg.init_scale = Some(v);
    }
    if let Some(o) = &args.out {
        cfg.output_dir = Some(o.clone());
    }
    cfg.validate()?;
    let data = cfg.dataset()?;
    let arch = cfg.architecture()?;
    let loss = cfg.loss.unwrap_or(Loss::regression(RegressionLossKind::Squared));
    if let Loss::Regression { .. } = loss {
        for (i, j, y) in data.unattainable_targets(arch.activation) {
            eprintln!(
                "warning: target ({}, {}) = {y} is not strictly inside the {} range; zero loss is unattainable",
                i + 1,
                j + 1,
                arch.activation.name()
            );
        }
    }
    let problem = TrainingProblem::new(arch, data, loss)?;
    let seeds = resolve_seeds(args.common.seed, &cfg)?;
    let defaults = TrainConfig::default();
    let base = TrainConfig {
        max_iters: cfg.max_iters.unwrap_or(defaults.max_iters),
        eps_crit: cfg.tolerances().eps_crit,
        init_scale: cfg.init_scale.unwrap_or(defaults.init_scale),
        ..defaults
    };
    let dir = cfg.output_dir();
    let runs = seeds
        .par_iter()
        .map(|&seed| {
            let run = train(&problem, &TrainConfig { seed, ..base })?;
            let params_name = format!("params_seed{seed}.json");
            let history_name = format!("history_seed{seed}.csv");
            write_output(&dir, &params_name, &io::params_to_json(&run.params)?)?;
            write_output(&dir, &history_name, &history_csv(&run.result.history))?;
            Ok(TrainSummary {
                seed,
                status: run.result.status,
                iterations: run.result.iterations(),
                objective: Real(run.result.objective),
                grad_norm: Real(run.result.grad_norm),
                params: params_name,
                history: history_name,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    for r in &runs {
        println!(
            "seed {}: {} after {} iterations, objective {}, grad_norm {}",
            r.seed,
            r.status.name(),
            r.iterations,
            io::format_real(r.objective.0),
            io::format_real(r.grad_norm.0)
        );
    }
    write_output(&dir, "train_summary.json", &io::to_json(&runs)?)?;
    Ok(if runs.iter().all(|r| r.status == TrainStatus::Converged) {
        Outcome::Success
    } else {
        Outcome::Negative
    })
}

fn certify_cmd(args: CertifyArgs) -> Result<Outcome> {
    let mut cfg = ExperimentConfig::load_optional(args.common.config.as_deref())?;
    cfg.merge_model(&args.model);
    cfg.merge_tolerances(&args.tol);
    if let Some(k) = args.k {
        cfg.k = Some(k);
    }
    if let Some(s) = &args.subset {
        cfg.subset = Some(s.clone());
    }
    cfg.validate()?;
    let params = io::read_params(&args.params)?;
    let data = cfg.dataset()?;
    let tol = cfg.tolerances();
    let need_k = || cfg.k.ok_or_else(|| Error::invalid("--k is required for this theorem"));
    let loss = || cfg.loss.unwrap_or(Loss::regression(RegressionLossKind::Squared));
    let report: CertificationReport = match args.theorem {
        TheoremArg::IndependentInputs => certify_independent_inputs(&params, &data, &loss(), &tol)?,
        TheoremArg::Main => {
            let k = need_k()?;
            let subset = cfg.subset.clone().unwrap_or_else(|| (k + 1..=params.depth()).collect());
            certify_main(&params, &data, &loss(), k, &subset, &tol)?
        }
        TheoremArg::NondegenerateMinimum => certify_nondegenerate_minimum(&params, &data, &loss(), need_k()?, &tol)?,
        TheoremArg::Separable => certify_separable(&params, &data, need_k()?, &tol)?,
    };
    emit(args.out.as_deref(), &report.to_json())?;
    let verdict = serde_json::to_value(report.verdict)?;
    eprintln!("verdict: {}", verdict.as_str().unwrap_or_default());
    for c in report.failed_conditions() {
        eprintln!(
            "  failed: {} (value {}, threshold {})",
            c.name,
            io::format_real(c.value.0),
            io::format_real(c.threshold.0)
        );
    }
    Ok(if report.is_certified() { Outcome::Success } else { Outcome::Negative })
}

fn construct_cmd(args: ConstructArgs) -> Result<Outcome> {
    let mut cfg = ExperimentConfig::load_optional(args.common.config.as_deref())?;
    cfg.merge_model(&args.model);
    if let Some(k) = args.k {
        cfg.k = Some(k);
    }
    if let Some(o) = &args.out {
        cfg.output_dir = Some(o.clone());
    }
    cfg.validate()?;
    let data = cfg.dataset()?;
    let arch = cfg.architecture()?;
    let k = cfg.k.unwrap_or(1);
    let seed = resolve_seeds(args.common.seed, &cfg)?[0];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (params, trace) = match construct_full_rank_net(data.x(), &arch, k, &ConstructionConfig::default(), &mut rng) {
        Ok(r) => r,
        Err(e @ Error::ScheduleExhausted { .. }) => {
            eprintln!("construction failed: {e}");
            return Ok(Outcome::Negative);
        }
        Err(e) => return Err(e),
    };
    let dir = cfg.output_dir();
    write_output(&dir, "params.json", &io::params_to_json(&params)?)?;
    write_output(&dir, "trace.json", &io::to_json(&trace)?)?;
    println!(
        "rank([F_{k}, 1]) = {} at alpha = {}",
        trace.achieved_rank,
        io::format_real(trace.alpha_final)
    );
    Ok(Outcome::Success)
}

#[derive(Debug, Serialize)]
struct ProbeSummary {
    widths: Vec<usize>,
    activation: ActivationKind,
    layer: usize,
    samples: usize,
    trials: usize,
    seed: u64,
    init_scale: Real,
    deficient: usize,
    fraction: Real,
}

fn probe_cmd(args: ProbeArgs) -> Result<Outcome> {
    let mut cfg = ExperimentConfig::load_optional(args.common.config.as_deref())?;
    cfg.merge_model(&args.model);
    if let Some(k) = args.k {
        cfg.k = Some(k);
    }
    if let Some(v) = args.init_scale {
        cfg.init_scale = Some(v);
    }
    if let Some(o) = &args.out {
        cfg.output_dir = Some(o.clone());
    }
    if cfg.widths.is_none() {
        cfg.widths = Some(vec![2, 5, 1]);
    }
    cfg.validate()?;
    let arch = cfg.architecture()?;
    let k = cfg.k.unwrap_or(1);
    if k == 0 || k > arch.depth() {
        return Err(Error::invalid(format!("layer k = {k} outside [1, {}]", arch.depth())));
    }
    let seed = resolve_seeds(args.common.seed, &cfg)?[0];
    let x = match &cfg.dataset {
        Some(_) => cfg.dataset()?.x().clone(),
        None => {
            let n = args.samples.unwrap_or(arch.width(k) + 1);
            if n == 0 {
                return Err(Error::invalid("--samples must be positive"));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_da7a);
            Matrix::from_fn(n, arch.input_dim(), |_, _| rng.random_range(-1.0..1.0))
        }
    };
    let tol = args.rank_tol.map_or(cfg.rank_tolerance(), RankTolerance::Absolute);
    let init_scale = cfg.init_scale.unwrap_or(1.0);
    let probe = rank_probe(&arch, &x, k, args.trials, init_scale, seed, tol)?;
    let dir = cfg.output_dir();
    let mut csv = String::from("trial,rank\n");
    for t in &probe.trials {
        csv.push_str(&format!("{},{}\n", t.trial, t.rank));
    }
    write_output(&dir, "probe_trials.csv", &csv)?;
    let summary = ProbeSummary {
        widths: arch.widths.clone(),
        activation: arch.activation,
        layer: k,
        samples: probe.samples,
        trials: args.trials,
        seed,
        init_scale: Real(init_scale),
        deficient: probe.deficient,
        fraction: Real(probe.fraction),
    };
    write_output(&dir, "probe_summary.json", &io::to_json(&summary)?)?;
    println!(
        "{} of {} draws rank-deficient (fraction {})",
        probe.deficient,
        args.trials,
        io::format_real(probe.fraction)
    );
    let wide = arch.width(k) + 1 >= probe.samples;
    Ok(if wide && arch.activation.is_certifiable() && probe.deficient > 0 {
        Outcome::Negative
    } else {
        Outcome::Success
    })
}

fn audit_cmd(args: AuditArgs) -> Result<Outcome> {
    let mode = match (args.mode, args.activation) {
        (Some(AuditModeArg::Bounded), _) => AuditMode::Bounded,
        (Some(AuditModeArg::Growth), _) | (None, ActivationKind::Softplus { .. } | ActivationKind::Identity) => {
            match (&args.rho, args.activation) {
                (Some(r), _) => AuditMode::Growth { rho: [r[0], r[1], r[2], r[3]] },
                (None, ActivationKind::Softplus { alpha }) => AuditMode::softplus_growth(alpha),
                (None, _) => return Err(Error::invalid("growth audit needs --rho for this activation")),
            }
        }
        (None, _) => AuditMode::Bounded,
    };
    let grid = AuditGrid {
        half_width: args.half_width,
        points: args.points,
    };
    let verdict = audit_activation(args.activation, mode, grid)?;
    println!("{}: {}", if verdict.passed { "pass" } else { "fail" }, verdict.detail);
    Ok(if verdict.passed { Outcome::Success } else { Outcome::Negative })
}

fn separability_cmd(args: SeparabilityArgs) -> Result<Outcome> {
    let data = io::read_dataset(&args.data)?;
    let classes = data
        .classes()
        .ok_or_else(|| Error::invalid("separability needs a classification dataset"))?;
    let cfg = crate::certify::SeparabilityConfig {
        max_passes: args.max_passes,
        ..Default::default()
    };
    let cert = check_separability(data.x(), classes, data.output_dim(), &cfg)?;
    emit(args.out.as_deref(), &io::to_json(&cert)?)?;
    let status = serde_json::to_value(cert.status)?;
    eprintln!("status: {}", status.as_str().unwrap_or_default());
    Ok(if cert.status == SeparabilityStatus::Separable {
        Outcome::Success
    } else {
        Outcome::Negative
    })
}
