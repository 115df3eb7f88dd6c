//! `qcrb analyze | construct | verify | simulate`.

mod report;

use std::fmt::Debug;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

pub use report::{exit_code_table, ErrorInfo, PovmSection, Report, StudySection, SCHEMA};

use crate::conditions::{check_conditions, solve_u_fixed_range, verify_condition2_u, Classification, ConditionError};
use crate::estimate::{diagonal_deltas, fc_convergence_study, run_trials, EstimateError, SimConfig};
use crate::linalg::SimDiagOptions;
use crate::model::{load_model, DerivativeMode, LoadedModel, ModelError, ParamPoint, StateModel};
use crate::pipeline::{analyze_point, Analysis, PipelineError};
use crate::povm::{construct_optimal, verify_optimality, Povm, PovmError, PovmFile};
use crate::sld::SldError;
use crate::tolerances::Tolerances;

#[derive(Debug, Parser)]
#[command(name = "qcrb", version, about = "Saturability of the multiparameter quantum Cramér-Rao bound")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DerivativeArg {
    Auto,
    Fd,
    Crosscheck,
}

impl From<DerivativeArg> for DerivativeMode {
    fn from(d: DerivativeArg) -> Self {
        match d {
            DerivativeArg::Auto => DerivativeMode::Auto,
            DerivativeArg::Fd => DerivativeMode::FiniteDifference,
            DerivativeArg::Crosscheck => DerivativeMode::CrossCheck,
        }
    }
}

#[derive(Debug, Args)]
pub struct Common {
    /// Model configuration (JSON).
    pub model: PathBuf,
    /// Parameter point; overrides `theta` in the model file.
    #[arg(long, num_args = 1.., allow_negative_numbers = true)]
    pub theta: Option<Vec<f64>>,
    /// Finite-difference step.
    #[arg(long)]
    pub h: Option<f64>,
    /// Tolerance override, repeatable.
    #[arg(long = "tol", value_name = "KEY=VALUE")]
    pub tol: Vec<String>,
    #[arg(long, value_enum, default_value = "auto")]
    pub derivative: DerivativeArg,
    /// Seed of the simultaneous diagonalizer.
    #[arg(long, default_value_t = SimDiagOptions::default().seed)]
    pub simdiag_seed: u64,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Decomposition, SLDs, QFIM and the saturability conditions.
    Analyze {
        #[command(flatten)]
        common: Common,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build the optimal projective POVM and audit it.
    Construct {
        #[command(flatten)]
        common: Common,
        /// POVM output file.
        #[arg(long)]
        out: PathBuf,
        /// Write the report here instead of stdout.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Check a POVM against the optimality conditions.
    Verify {
        #[command(flatten)]
        common: Common,
        /// POVM file (JSON).
        povm: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte Carlo estimation or the F_c convergence study.
    Simulate {
        #[command(flatten)]
        common: Common,
        povm: PathBuf,
        /// Copies per trial.
        #[arg(long = "N", default_value_t = 1000)]
        n: u64,
        /// Trials.
        #[arg(long = "R", default_value_t = 2000)]
        r: usize,
        #[arg(long, env = "QCRB_SEED", default_value_t = 0)]
        seed: u64,
        /// Displacement of the simulated point.
        #[arg(long, num_args = 1.., allow_negative_numbers = true, conflicts_with = "study")]
        delta: Option<Vec<f64>>,
        /// Step lengths t for δ = t(1,…,1)/√p, comma separated.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        study: Option<Vec<f64>>,
        /// CSV output for the study.
        #[arg(long, requires = "study")]
        csv: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the report JSON schema.
    Schema,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Povm(#[from] PovmError),
    #[error(transparent)]
    Condition(#[from] ConditionError),
    #[error(transparent)]
    Estimate(#[from] EstimateError),
}

fn variant<T: Debug>(t: &T) -> String {
    let s = format!("{t:?}");
    s.split(['(', ' ', '{']).next().unwrap_or_default().to_string()
}

fn pipeline_kind(e: &PipelineError) -> String {
    match e {
        PipelineError::Model(m) => variant(m),
        PipelineError::Blocks(b) => variant(b),
        PipelineError::Sld(SldError::Blocks(b)) => variant(b),
        PipelineError::Sld(SldError::Model(m)) => variant(m),
        PipelineError::Sld(s) => variant(s),
    }
}

impl CliError {
    pub fn kind(&self) -> String {
        match self {
            CliError::Usage(_) => "Usage".into(),
            CliError::Io(_) => "Io".into(),
            CliError::Model(m) => variant(m),
            CliError::Pipeline(p) => pipeline_kind(p),
            CliError::Povm(p) => variant(p),
            CliError::Condition(ConditionError::Model(m)) => variant(m),
            CliError::Condition(c) => variant(c),
            CliError::Estimate(EstimateError::Model(m)) => variant(m),
            CliError::Estimate(EstimateError::Pipeline(p)) => pipeline_kind(p),
            CliError::Estimate(e) => variant(e),
        }
    }

    fn info(&self) -> ErrorInfo {
        let direction = match self {
            CliError::Estimate(EstimateError::SingularFisher { direction, .. }) => Some(direction.clone()),
            _ => None,
        };
        ErrorInfo { kind: self.kind(), message: self.to_string(), direction }
    }
}

/// Outcome of one invocation.
#[derive(Debug)]
pub struct Outcome {
    pub report: Report,
    /// Where the report goes; stdout when `None`.
    pub report_path: Option<PathBuf>,
}

struct Context {
    loaded: LoadedModel,
    theta: ParamPoint,
    tols: Tolerances,
    mode: DerivativeMode,
    simdiag: SimDiagOptions,
}

fn tolerances(common: &Common) -> Result<Tolerances, CliError> {
    let mut t = Tolerances::default();
    if let Some(h) = common.h {
        t.set("h", h).map_err(CliError::Usage)?;
    }
    for spec in &common.tol {
        t.apply_override(spec).map_err(CliError::Usage)?;
    }
    Ok(t)
}

fn context(common: &Common, report: &mut Report) -> Result<Context, CliError> {
    let tols = tolerances(common)?;
    report.tolerances = tols;
    let loaded = load_model(&common.model)?;
    report.model = Some(loaded.model.descriptor());
    let theta = match (&common.theta, &loaded.theta) {
        (Some(t), _) => ParamPoint::new(t.clone()),
        (None, Some(t)) => t.clone(),
        (None, None) => return Err(CliError::Usage("no parameter point: pass --theta or set `theta` in the model file".into())),
    };
    if theta.len() != loaded.model.n_params() {
        return Err(ModelError::WrongParamCount { expected: loaded.model.n_params(), got: theta.len() }.into());
    }
    report.theta = Some(theta.clone());
    let simdiag = SimDiagOptions { seed: common.simdiag_seed, comm_tol: tols.cond, ..SimDiagOptions::default() };
    Ok(Context { loaded, theta, tols, mode: common.derivative.into(), simdiag })
}

fn analysis(ctx: &Context, report: &mut Report) -> Result<Analysis, CliError> {
    let a = analyze_point(ctx.loaded.model.as_ref(), &ctx.theta, &ctx.tols, ctx.mode)?;
    report.h = Some(a.h);
    report.derivative_source = Some(a.bundle.source);
    report.decomposition = Some(a.dec.summary());
    report.qfim = Some(a.qfim.clone());
    for (l, &nb) in a.slds.null_block_norms.iter().enumerate() {
        if nb > ctx.tols.zero {
            report.warnings.push(format!(
                "RankDriftWarning: null block of ∂_{l}ρ has norm {nb:.3e} (below the {:.1e} error threshold)",
                ctx.tols.nullblock
            ));
        }
    }
    Ok(a)
}

/// Condition 2 for models with a closed-form frame or a fixed range.
fn condition2(ctx: &Context, h: f64) -> Option<crate::conditions::Condition2Report> {
    let model = ctx.loaded.model.as_ref();
    model.factorization(&ctx.theta)?;
    if model.frame_unitary(&ctx.theta).is_some() {
        let u = |t: &[f64]| model.frame_unitary(t);
        let mut r = verify_condition2_u(model, &ctx.theta, &u, h, &ctx.tols).ok()?;
        r.source = "closed-form frame of the model".into();
        return Some(r);
    }
    let frame = solve_u_fixed_range(model, &ctx.theta, None, h, &ctx.tols).ok()??;
    let u = |t: &[f64]| frame.u(model, t);
    let mut r = verify_condition2_u(model, &ctx.theta, &u, h, &ctx.tols).ok()?;
    r.source = "fixed range subspace".into();
    Some(r)
}

fn classification_exit(c: Classification) -> (&'static str, i32) {
    match c {
        Classification::SaturableProjective => ("saturable_projective", 0),
        Classification::NecessaryFailed => ("necessary_failed", 2),
        Classification::Undetermined => ("undetermined", 3),
    }
}

fn analyze(common: &Common, report: &mut Report) -> Result<(), CliError> {
    let ctx = context(common, report)?;
    let a = analysis(&ctx, report)?;
    let mut cond = check_conditions(&a.slds, &ctx.tols, ctx.simdiag);
    cond.c2 = condition2(&ctx, a.h);
    if !cond.partial_comm.consistent {
        report.warnings.push("partial commutativity fails although Conditions 1 and 3 pass".into());
    }
    let (verdict, code) = classification_exit(cond.classification);
    report.conditions = Some(cond);
    report.finish(verdict, code);
    Ok(())
}

fn povm_section(povm: &Povm, file: Option<&Path>, a: &Analysis, tols: &Tolerances, report: &mut Report) -> bool {
    let opt = verify_optimality(povm, &a.slds, &a.bundle, &a.qfim, tols);
    let pass = opt.pass;
    if !opt.saturation.excluded_outcomes.is_empty() {
        report.warnings.push(format!(
            "outcomes {:?} have p ≤ τ_p and are excluded from F_c; they enter through the null component",
            opt.saturation.excluded_outcomes
        ));
    }
    report.saturation = Some(opt.saturation.clone());
    report.povm = Some(PovmSection {
        file: file.map(|p| p.display().to_string()),
        projective: povm.projective,
        effects: povm.effects.clone(),
        optimality: opt,
    });
    pass
}

fn construct(common: &Common, out: &Path, report: &mut Report) -> Result<(), CliError> {
    let ctx = context(common, report)?;
    let a = analysis(&ctx, report)?;
    let cond = check_conditions(&a.slds, &ctx.tols, ctx.simdiag);
    let classification = cond.classification;
    let cand = cond.c4.certified().cloned();
    report.conditions = Some(cond);
    let cand = match (classification, cand) {
        (Classification::SaturableProjective, Some(c)) => c,
        _ => {
            let e = CliError::Povm(PovmError::ConditionFailed(format!(
                "classification is {}",
                classification_exit(classification).0
            )));
            report.error = Some(e.info());
            report.finish("condition_failed", 2);
            return Ok(());
        }
    };
    let povm = construct_optimal(&a.slds, &cand, &ctx.tols, ctx.simdiag)?;
    let text = serde_json::to_string_pretty(&povm.to_file()).expect("POVM serializes");
    std::fs::write(out, text).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
    let pass = povm_section(&povm, Some(out), &a, &ctx.tols, report);
    report.finish(if pass { "pass" } else { "fail" }, if pass { 0 } else { 2 });
    Ok(())
}

fn read_povm(path: &Path, tols: &Tolerances, report: &mut Report) -> Result<Povm, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let file: PovmFile =
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: invalid POVM file: {e}", path.display())))?;
    let (povm, warnings) = Povm::from_file(file, tols)?;
    report.warnings.extend(warnings);
    Ok(povm)
}

fn check_povm_dim(povm: &Povm, model: &dyn StateModel) -> Result<(), CliError> {
    if povm.dim() != model.dim() {
        return Err(CliError::Usage(format!("POVM acts on C^{}, model on C^{}", povm.dim(), model.dim())));
    }
    Ok(())
}

fn verify(common: &Common, povm_path: &Path, report: &mut Report) -> Result<(), CliError> {
    let ctx = context(common, report)?;
    let povm = read_povm(povm_path, &ctx.tols, report)?;
    check_povm_dim(&povm, ctx.loaded.model.as_ref())?;
    let a = analysis(&ctx, report)?;
    report.conditions = Some(check_conditions(&a.slds, &ctx.tols, ctx.simdiag));
    let pass = povm_section(&povm, Some(povm_path), &a, &ctx.tols, report);
    report.finish(if pass { "pass" } else { "fail" }, if pass { 0 } else { 2 });
    Ok(())
}

struct SimArgs<'a> {
    povm: &'a Path,
    n: u64,
    r: usize,
    seed: u64,
    delta: Option<&'a [f64]>,
    study: Option<&'a [f64]>,
    csv: Option<&'a Path>,
}

fn simulate(common: &Common, args: SimArgs<'_>, report: &mut Report) -> Result<(), CliError> {
    let ctx = context(common, report)?;
    let povm = read_povm(args.povm, &ctx.tols, report)?;
    let model = ctx.loaded.model.as_ref();
    check_povm_dim(&povm, model)?;
    analysis(&ctx, report)?;
    if let Some(ts) = args.study {
        let deltas = diagonal_deltas(model.n_params(), ts);
        let study = fc_convergence_study(model, &povm, &ctx.theta, &deltas, &ctx.tols)?;
        if let Some(path) = args.csv {
            std::fs::write(path, study.to_csv()).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        }
        let decreasing = study.is_decreasing();
        report.study = Some(StudySection { study, decreasing, csv: args.csv.map(|p| p.display().to_string()) });
        report.finish("pass", 0);
        return Ok(());
    }
    let delta = args.delta.map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; model.n_params()]);
    let cfg = SimConfig { seed: args.seed, n: args.n, r: args.r, delta };
    match run_trials(model, &povm, &ctx.theta, &cfg, &ctx.tols) {
        Ok(res) => {
            let pass = res.rel_err <= ctx.tols.mc;
            report.simulation = Some(res);
            report.finish(if pass { "pass" } else { "fail" }, if pass { 0 } else { 2 });
            Ok(())
        }
        Err(e @ EstimateError::SingularFisher { .. }) => {
            let e = CliError::Estimate(e);
            report.error = Some(e.info());
            report.finish("singular_fisher", 2);
            Ok(())
        }
        Err(e) => Err(e.into()),
    }
}

/// Runs a parsed command. Errors become an `error` section with exit code 1.
pub fn run(cli: Cli) -> Outcome {
    let (name, report_path) = match &cli.command {
        Command::Analyze { out, .. } => ("analyze", out.clone()),
        Command::Construct { report, .. } => ("construct", report.clone()),
        Command::Verify { out, .. } => ("verify", out.clone()),
        Command::Simulate { out, .. } => ("simulate", out.clone()),
        Command::Schema => ("schema", None),
    };
    let mut report = Report::new(name, Tolerances::default());
    let result = match &cli.command {
        Command::Analyze { common, .. } => analyze(common, &mut report),
        Command::Construct { common, out, .. } => construct(common, out, &mut report),
        Command::Verify { common, povm, .. } => verify(common, povm, &mut report),
        Command::Simulate { common, povm, n, r, seed, delta, study, csv, .. } => simulate(
            common,
            SimArgs {
                povm,
                n: *n,
                r: *r,
                seed: *seed,
                delta: delta.as_deref(),
                study: study.as_deref(),
                csv: csv.as_deref(),
            },
            &mut report,
        ),
        Command::Schema => Ok(()),
    };
    if let Err(e) = result {
        report.error = Some(e.info());
        report.finish("error", 1);
    }
    Outcome { report, report_path }
}
