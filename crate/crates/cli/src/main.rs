mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use fsdp_core::devtools::generate::{random_forest_qcqp, random_trs, Shape};
use fsdp_core::exactness::{
    certify_homogeneous, extract_rank_one, solve_certified, CertifyOptions, RecoveryOptions, Verdict,
    PERTURBATION_SEED,
};
use fsdp_core::format::{instance_to_json, read_instance, write_instance};
use fsdp_core::gtrs::{solve_gtrs_with, GtrsOptions};
use fsdp_core::model::{homogeneous_form, homogenize_gtrs, QcqpInstance};
use fsdp_core::sdp::{solve_with, Phase1Options, SdpOptions, SdpProblem};
use fsdp_core::simtridiag::{tridiagonalize_seeded, DEFAULT_SEED};
use fsdp_core::sparsity::{analyze_forest, build_graph, connecting_edges};
use fsdp_core::Error;

use report::*;

#[derive(Parser)]
#[command(name = "fsdp", version, about = "Exactness certificates and global solves for forest-structured QCQPs")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Eigenvalue tolerance for PSD tests.
    #[arg(long, global = true, env = "FSDP_TOL_PSD", default_value_t = 1e-9)]
    tol_psd: f64,
    /// Largest λ₂/λ₁ accepted as rank one.
    #[arg(long, global = true, env = "FSDP_TOL_RANK", default_value_t = 1e-6)]
    tol_rank: f64,
    /// Bound on the multipliers in the phase-1 systems.
    #[arg(long, global = true, env = "FSDP_YCAP", default_value_t = 1e6)]
    ycap: f64,
    /// Perturbation schedule `EPS0,STEPS` for ε_t = EPS0·2^{−t}, t = 0..=STEPS.
    #[arg(long, global = true, env = "FSDP_EPS_SCHEDULE", default_value = "1e-2,10")]
    eps_schedule: String,
    /// Seed for every randomized step.
    #[arg(long, global = true, env = "FSDP_SEED")]
    seed: Option<u64>,
    /// Emit a JSON report.
    #[arg(long, global = true)]
    json: bool,
    /// Interior-point iteration limit.
    #[arg(long, global = true, env = "FSDP_MAX_ITER", default_value_t = 200)]
    max_iter: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Aggregate sparsity graph and forest classification.
    Analyze { file: PathBuf },
    /// Exactness certificate of the relaxation.
    Certify { file: PathBuf },
    /// Solve the relaxation and recover a solution.
    Solve { file: PathBuf },
    /// Simultaneously tridiagonalize the objective and first constraint matrices.
    Tridiagonalize {
        file: PathBuf,
        /// Use the homogenized pair of a single-constraint instance.
        #[arg(long)]
        lifted: bool,
    },
    /// Solve a single-constraint instance through tridiagonalization.
    Gtrs { file: PathBuf },
    /// Write a generated instance.
    Gen(GenArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ShapeArg {
    Tridiagonal,
    Arrow,
    Tree,
    Forest,
    Trs,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_enum, default_value = "tridiagonal")]
    shape: ShapeArg,
    #[arg(long, default_value_t = 5)]
    n: usize,
    /// Random constraints in addition to the unit ball.
    #[arg(long, default_value_t = 1)]
    m: usize,
    /// Components for `--shape forest`.
    #[arg(long, default_value_t = 2)]
    components: usize,
    #[arg(long)]
    sign_definite: bool,
    /// Output file; standard output when absent.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

enum Failure {
    Input(String),
    Solver(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Format(_)
            | Error::InvalidArgument(_)
            | Error::WrongArity { .. }
            | Error::WrongShape(_)
            | Error::DimensionMismatch { .. }
            | Error::NotSymmetric { .. } => Failure::Input(e.to_string()),
            other => Failure::Solver(other.to_string()),
        }
    }
}

impl Common {
    fn schedule(&self) -> Result<(f64, usize), Failure> {
        let bad = || Failure::Input(format!("--eps-schedule expects EPS0,STEPS, got {:?}", self.eps_schedule));
        let (a, b) = self.eps_schedule.split_once(',').ok_or_else(bad)?;
        let eps0: f64 = a.trim().parse().map_err(|_| bad())?;
        let steps: usize = b.trim().parse().map_err(|_| bad())?;
        if !(eps0 > 0.0) {
            return Err(bad());
        }
        Ok((eps0, steps))
    }

    fn certify_options(&self) -> CertifyOptions {
        let sdp = SdpOptions { max_iter: self.max_iter, ..SdpOptions::default() };
        CertifyOptions {
            psd_tol: self.tol_psd,
            phase1: Phase1Options { y_cap: self.ycap, sdp, ..Phase1Options::default() },
            ..CertifyOptions::default()
        }
    }

    fn recovery_options(&self) -> Result<RecoveryOptions, Failure> {
        let (eps0, eps_steps) = self.schedule()?;
        Ok(RecoveryOptions {
            rank1_tol: self.tol_rank,
            eps0,
            eps_steps,
            seed: self.seed.unwrap_or(PERTURBATION_SEED),
            sdp: SdpOptions { max_iter: self.max_iter, ..SdpOptions::tight() },
            ..RecoveryOptions::default()
        })
    }
}

fn load(path: &Path) -> Result<QcqpInstance, Failure> {
    if !path.exists() {
        return Err(Failure::Input(format!("{}: file not found", path.display())));
    }
    Ok(read_instance(path)?)
}

fn emit<T: Serialize>(json: bool, report: &T, text: impl FnOnce() -> String) {
    if json {
        println!("{}", serde_json::to_string_pretty(report).expect("reports always serialize"));
    } else {
        print!("{}", text());
    }
}

fn run(cli: &Cli) -> Result<ExitCode, Failure> {
    let c = &cli.common;
    match &cli.command {
        Command::Analyze { file } => {
            let inst = load(file)?;
            let g = build_graph(&inst);
            let fa = analyze_forest(&g);
            let d = if fa.is_forest { connecting_edges(&fa)? } else { Vec::new() };
            let r = AnalyzeReport::new(inst.m(), &g, &fa, &d);
            emit(c.json, &r, || r.render());
            Ok(ExitCode::SUCCESS)
        }
        Command::Certify { file } => {
            let inst = load(file)?;
            let h = homogeneous_form(&inst);
            let cert = certify_homogeneous(&h, &c.certify_options())?;
            let r = CertifyReport {
                schema_version: SCHEMA_VERSION,
                command: "certify",
                certificate: CertificateSummary::new(&cert, h.lift),
            };
            emit(c.json, &r, || r.certificate.render());
            Ok(if cert.verdict == Verdict::Exact { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        Command::Solve { file } => {
            let inst = load(file)?;
            let h = homogeneous_form(&inst);
            let ropts = c.recovery_options()?;
            let cert = certify_homogeneous(&h, &c.certify_options())?;
            let r = if cert.verdict == Verdict::Exact {
                SolveReport::certified(&cert, &solve_certified(&h, &cert, &ropts)?)
            } else {
                let sol = solve_with(&SdpProblem::from_homogeneous(&h), &ropts.sdp)?;
                let one = extract_rank_one(&sol.x)?;
                let usable = one.ratio <= ropts.rank1_tol && h.max_violation(&one.z) <= ropts.feas_tol;
                let x = if usable { h.recover_point(&one.z).ok() } else { None };
                let objective = x.as_ref().map(|x| inst.objective_value(x));
                SolveReport {
                    schema_version: SCHEMA_VERSION,
                    command: "solve",
                    verdict: cert.verdict,
                    method: cert.method,
                    violation: x.as_ref().map(|x| inst.max_violation(x)),
                    gap: objective.map(|v| (v - sol.primal_obj).abs() / (1.0 + sol.primal_obj.abs())),
                    x: x.map(|x| x.iter().copied().collect()),
                    objective,
                    sdp_value: sol.primal_obj,
                    lambda_ratio: one.ratio,
                    rank_x: sol.rank_x,
                    fallback: None,
                }
            };
            emit(c.json, &r, || r.render());
            Ok(ExitCode::SUCCESS)
        }
        Command::Tridiagonalize { file, lifted } => {
            let inst = load(file)?;
            let (k, m) = if *lifted {
                let h = homogenize_gtrs(&inst)?;
                (h.objective.clone(), h.rows[0].mat.clone())
            } else {
                let first = inst
                    .constraints()
                    .first()
                    .ok_or_else(|| Failure::Input("need at least one constraint matrix".into()))?;
                (inst.objective().quad.clone(), first.form.quad.clone())
            };
            let t = tridiagonalize_seeded(&k, &m, c.seed.unwrap_or(DEFAULT_SEED))?;
            let r = TridiagReport::new(&t);
            emit(c.json, &r, || r.render());
            Ok(ExitCode::SUCCESS)
        }
        Command::Gtrs { file } => {
            let inst = load(file)?;
            let opts = GtrsOptions {
                certify: c.certify_options(),
                recovery: c.recovery_options()?,
                seed: c.seed.unwrap_or(DEFAULT_SEED),
            };
            let sol = solve_gtrs_with(&inst, &opts)?;
            let r = GtrsReport::new(&sol);
            emit(c.json, &r, || r.render());
            Ok(ExitCode::SUCCESS)
        }
        Command::Gen(g) => {
            let seed = c.seed.unwrap_or(0);
            let shape = match g.shape {
                ShapeArg::Tridiagonal => Some(Shape::Tridiagonal),
                ShapeArg::Arrow => Some(Shape::Arrow),
                ShapeArg::Tree => Some(Shape::RandomTree),
                ShapeArg::Forest => Some(Shape::RandomForest { components: g.components }),
                ShapeArg::Trs => None,
            };
            let inst = match shape {
                Some(s) => random_forest_qcqp(g.n, g.m, s, g.sign_definite, seed)?,
                None => random_trs(g.n, seed)?,
            };
            match &g.out {
                Some(path) => {
                    write_instance(path, &inst)?;
                    let r = GenReport { schema_version: SCHEMA_VERSION, command: "gen", written: path.display().to_string() };
                    emit(c.json, &r, || format!("wrote {}\n", r.written));
                }
                None => println!("{}", instance_to_json(&inst)),
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Solver(msg)) => {
            eprintln!("solver failure: {msg}");
            ExitCode::from(3)
        }
    }
}
