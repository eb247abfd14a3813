//! `effham` — effective Hamiltonians of controlled diffusions on the torus.
//!
//! Subcommands solve one route each (`cell`, `spectral`, `lp`, `measure`,
//! `simulate`, `sweep`); `validate` runs them all on one instance and emits
//! a reconciliation report. Every command writes a versioned JSON document
//! (plus a CSV table where the result is naturally tabular) into the output
//! directory and prints a short deterministic summary to stdout.
//!
//! Exit codes: 0 success (all checks pass for `validate`), 1 failed
//! validation checks, 2 errors — with a machine-readable `{"error": …}`
//! line on stderr.

use clap::{Args, Parser, Subcommand};
use effham_cli::config::{
    defaults, load_model, resolve, resolve_momentum, resolve_out_dir, FileConfig, RunConfig,
};
use effham_cli::{error, io, validate};
use effham::cell::{hbar_gradient, solve_cell, CellConfig};
use effham::density::{check_identities, mather_measure, GraphMeasure, IdentityReport};
use effham::lp::{build_lp, solve_lp, LpSolution};
use effham::model::{HamiltonianModel, VelocityBox};
use effham::sim::{simulate, PathEnsemble, SimConfig};
use effham::spectral::{principal_eigenvalue, SpectralConfig};
use effham::sweep::sigma_sweep;
use error::CliError;
use io::{write_checks_csv, write_field_csv, write_json, write_sweep_csv, Document};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "effham",
    version,
    about = "Effective Hamiltonians, stationary measures, and occupation-measure programs for controlled diffusions on the torus"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Model: `cos:<n>`, `zero:<n>`, `cos2d:<n>`, or a model JSON path
    #[arg(long)]
    model: Option<String>,
    /// Momentum components, comma-separated (default: origin)
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    p: Option<Vec<f64>>,
    /// Noise level σ (default 1)
    #[arg(long)]
    sigma: Option<f64>,
    /// JSON config file mirroring the long flags; explicit flags win
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (default: $SM_OUT_DIR, else `.`)
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Output JSON path (default: <out-dir>/<subcommand>.json); the CSV
    /// companion, where one is written, swaps the extension
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CellOpts {
    /// Policy-iteration residual tolerance
    #[arg(long)]
    tol: Option<f64>,
    /// Policy-iteration cap
    #[arg(long)]
    max_iter: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve the cell problem: H̄, corrector u, optimal drift
    Cell {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        cell: CellOpts,
    },
    /// Principal eigenvalue of the linearized operator (mechanical models)
    Spectral {
        #[command(flatten)]
        common: Common,
        /// Eigenvalue bracket width tolerance
        #[arg(long)]
        tol: Option<f64>,
        /// Inverse-iteration cap
        #[arg(long)]
        max_iter: Option<usize>,
    },
    /// Stationary density of the optimal drift plus the stationarity identities
    Measure {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        cell: CellOpts,
        /// Momentum step for the central-difference gradient of H̄
        #[arg(long)]
        dp: Option<f64>,
    },
    /// Occupation-measure linear program
    Lp {
        #[command(flatten)]
        common: Common,
        /// Velocity box half-width (mechanical models)
        #[arg(long)]
        v_max: Option<f64>,
        /// Velocity nodes per axis (mechanical models)
        #[arg(long)]
        m: Option<usize>,
    },
    /// Euler–Maruyama ensemble driven by the optimal drift
    Simulate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        cell: CellOpts,
        #[arg(long)]
        t_final: Option<f64>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        paths: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Momentum step for the gradient the rotation vector is compared to
        #[arg(long)]
        dp: Option<f64>,
    },
    /// Vanishing-viscosity sweep over a decreasing σ list
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        cell: CellOpts,
        /// Decreasing noise levels, comma-separated
        #[arg(long, value_delimiter = ',')]
        sigmas: Option<Vec<f64>>,
    },
    /// Run every route and emit a cross-route reconciliation report
    Validate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        cell: CellOpts,
        #[arg(long)]
        eig_tol: Option<f64>,
        #[arg(long)]
        eig_max_iter: Option<usize>,
        #[arg(long)]
        dp: Option<f64>,
        #[arg(long)]
        v_max: Option<f64>,
        #[arg(long)]
        m: Option<usize>,
        /// LP grid size (default min(n, 40))
        #[arg(long)]
        n_lp: Option<usize>,
        #[arg(long)]
        t_final: Option<f64>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        paths: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Also run the σ-sweep stage
        #[arg(long)]
        sweep: bool,
        /// Run the eigenvalue and LP stages on separate threads
        #[arg(long)]
        concurrent: bool,
        /// Sweep σ list (with --sweep)
        #[arg(long, value_delimiter = ',')]
        sigmas: Option<Vec<f64>>,
    },
}

fn main() {
    let cli = Cli::parse();
    let code = match run(cli.cmd) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{}", e.to_json());
            2
        }
    };
    std::process::exit(code);
}

/// Everything a handler needs before doing its work.
struct Resolved {
    model: HamiltonianModel,
    model_spec: String,
    p: Vec<f64>,
    sigma: f64,
    out_json: PathBuf,
    file: FileConfig,
}

fn resolve_common(common: &Common, default_name: &str) -> Result<Resolved, CliError> {
    let file = FileConfig::load(common.config.as_deref())?;
    let model_spec = common
        .model
        .clone()
        .or_else(|| file.model.clone())
        .ok_or_else(|| CliError::Config("no model given (flag --model or config `model`)".into()))?;
    let model = load_model(&model_spec)?;
    let p = resolve_momentum(common.p.clone(), file.p.clone(), model.grid().dim())?;
    let sigma = resolve(common.sigma, file.sigma, defaults::SIGMA);
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(CliError::Config(format!("sigma must be positive, got {sigma}")));
    }
    let out_dir = resolve_out_dir(common.out_dir.clone(), file.out_dir.clone());
    let out_json = common
        .out
        .clone()
        .unwrap_or_else(|| out_dir.join(format!("{default_name}.json")));
    Ok(Resolved { model, model_spec, p, sigma, out_json, file })
}

fn cell_config(opts: &CellOpts, file: &FileConfig) -> CellConfig {
    CellConfig {
        tol: resolve(opts.tol, file.tol, defaults::TOL),
        max_iter: resolve(opts.max_iter, file.max_iter, defaults::MAX_ITER),
    }
}

fn csv_path(json: &PathBuf) -> PathBuf {
    let mut p = json.clone();
    p.set_extension("csv");
    p
}

#[derive(Serialize, Deserialize)]
struct MeasureDoc {
    measure: GraphMeasure,
    identities: IdentityReport,
}

#[derive(Serialize, Deserialize)]
struct LpDoc {
    /// LP optimum negated and shift-corrected to the raw convention.
    hbar: f64,
    solution: LpSolution,
}

#[derive(Serialize, Deserialize)]
struct SimDoc {
    hbar: f64,
    /// ∂H̄/∂P by central differences; the rotation vector estimates its
    /// negative.
    hbar_gradient: Vec<f64>,
    ensemble: PathEnsemble,
}

fn run(cmd: Cmd) -> Result<i32, CliError> {
    match cmd {
        Cmd::Cell { common, cell } => {
            let r = resolve_common(&common, "cell")?;
            let cfg = cell_config(&cell, &r.file);
            let sol = solve_cell(&r.model, &r.p, r.sigma, cfg)?;
            println!(
                "hbar = {}  (residual {:.3e}, {} iterations)",
                sol.hbar, sol.residual, sol.iterations
            );
            write_field_csv(&csv_path(&r.out_json), &sol.u, "u")?;
            write_json(&r.out_json, &Document::new("cell_solution", sol))?;
            println!("wrote {}", r.out_json.display());
            Ok(0)
        }
        Cmd::Spectral { common, tol, max_iter } => {
            let r = resolve_common(&common, "spectral")?;
            let cfg = SpectralConfig {
                tol: resolve(tol, r.file.eig_tol, defaults::EIG_TOL),
                max_iter: resolve(max_iter, r.file.eig_max_iter, defaults::EIG_MAX_ITER),
            };
            let sol = principal_eigenvalue(&r.model, &r.p, r.sigma, cfg)?;
            println!(
                "lambda = {}  (residual {:.3e}, {} iterations)",
                sol.lambda, sol.residual, sol.iterations
            );
            write_field_csv(&csv_path(&r.out_json), &sol.psi, "psi")?;
            write_json(&r.out_json, &Document::new("eigen_solution", sol))?;
            println!("wrote {}", r.out_json.display());
            Ok(0)
        }
        Cmd::Measure { common, cell, dp } => {
            let r = resolve_common(&common, "measure")?;
            let cfg = cell_config(&cell, &r.file);
            let dp = resolve(dp, r.file.dp, defaults::DP);
            let sol = solve_cell(&r.model, &r.p, r.sigma, cfg)?;
            let measure = mather_measure(&sol)?;
            let identities = check_identities(&r.model, &sol, &measure, cfg, dp)?;
            println!(
                "hbar = {}  mean velocity = {:?}",
                sol.hbar, measure.mean_velocity
            );
            println!(
                "identities: id1 = {:.3e}, id2 = {:.3e}, id3 = {:.3e}",
                identities.id1_err, identities.id2_err, identities.id3_gap
            );
            write_field_csv(&csv_path(&r.out_json), &measure.density.theta, "theta")?;
            write_json(&r.out_json, &Document::new("graph_measure", MeasureDoc { measure, identities }))?;
            println!("wrote {}", r.out_json.display());
            Ok(0)
        }
        Cmd::Lp { common, v_max, m } => {
            let r = resolve_common(&common, "lp")?;
            let (default_v_max, default_m) = match r.model.grid().dim() {
                1 => (defaults::V_MAX, defaults::M),
                _ => (2.0, 9),
            };
            let vbox = match r.model.velocity_box() {
                Some(native) => native,
                None => VelocityBox::new(
                    resolve(v_max, r.file.v_max, default_v_max),
                    resolve(m, r.file.m, default_m),
                )?,
            };
            let sol = solve_lp(&build_lp(&r.model, &r.p, r.sigma, vbox)?)?;
            println!(
                "hbar = {}  (duality gap {:.3e}, {} pivots)",
                sol.hbar_raw(),
                sol.duality_gap,
                sol.iterations
            );
            write_field_csv(&csv_path(&r.out_json), &sol.measure.x_marginal(), "marginal")?;
            let doc = LpDoc { hbar: sol.hbar_raw(), solution: sol };
            write_json(&r.out_json, &Document::new("lp_solution", doc))?;
            println!("wrote {}", r.out_json.display());
            Ok(0)
        }
        Cmd::Simulate { common, cell, t_final, dt, paths, seed, dp } => {
            let r = resolve_common(&common, "simulate")?;
            let cfg = cell_config(&cell, &r.file);
            let sim_cfg = SimConfig {
                t_final: resolve(t_final, r.file.t_final, defaults::T_FINAL),
                dt: resolve(dt, r.file.dt, defaults::DT),
                paths: resolve(paths, r.file.paths, defaults::PATHS),
                seed: resolve(seed, r.file.seed, defaults::SEED),
            };
            let dp = resolve(dp, r.file.dp, defaults::DP);
            let sol = solve_cell(&r.model, &r.p, r.sigma, cfg)?;
            let grad = hbar_gradient(&r.model, &r.p, r.sigma, cfg, dp)?;
            let ens = simulate(&sol.drift, r.sigma, &sim_cfg)?;
            println!(
                "rotation = {:?} ± {:?}   (−gradient = {:?})",
                ens.mean_displacement,
                ens.se_displacement,
                grad.iter().map(|g| -g).collect::<Vec<_>>()
            );
            write_field_csv(&csv_path(&r.out_json), &ens.histogram, "histogram")?;
            let doc = SimDoc { hbar: sol.hbar, hbar_gradient: grad, ensemble: ens };
            write_json(&r.out_json, &Document::new("path_ensemble", doc))?;
            println!("wrote {}", r.out_json.display());
            Ok(0)
        }
        Cmd::Sweep { common, cell, sigmas } => {
            let r = resolve_common(&common, "sweep")?;
            let cfg = cell_config(&cell, &r.file);
            let sigmas = resolve(sigmas, r.file.sigmas.clone(), defaults::SIGMAS.to_vec());
            let sweep = sigma_sweep(&r.model, &r.p, &sigmas, cfg)?;
            for e in &sweep.entries {
                println!(
                    "sigma = {}  hbar = {}  action gap = {:.3e}",
                    e.sigma, e.hbar, e.action_gap
                );
            }
            if let (Some(r0), Some(g)) = (sweep.analytic_ref, sweep.final_gap) {
                println!("inviscid reference = {r0}  endpoint gap = {g:.3e}");
            }
            write_sweep_csv(&csv_path(&r.out_json), &sweep)?;
            write_json(&r.out_json, &Document::new("sigma_sweep", sweep))?;
            println!("wrote {}", r.out_json.display());
            Ok(0)
        }
        Cmd::Validate {
            common,
            cell,
            eig_tol,
            eig_max_iter,
            dp,
            v_max,
            m,
            n_lp,
            t_final,
            dt,
            paths,
            seed,
            sweep,
            concurrent,
            sigmas,
        } => {
            let r = resolve_common(&common, "validate_report")?;
            let n = r.model.grid().nodes_per_axis();
            // the dense LP's column count is (n·m)^dim: defaults that are
            // comfortable in 1D are enormous in 2D, so coarsen harder there
            // while keeping the velocity spacing (= 2·v_max/(m−1)) usable
            let (default_v_max, default_m, default_n_lp) = match r.model.grid().dim() {
                1 => (defaults::V_MAX, defaults::M, n.min(40)),
                _ => (2.0, 9, n.min(12)),
            };
            let cfg = RunConfig {
                model: r.model_spec.clone(),
                p: r.p.clone(),
                sigma: r.sigma,
                tol: resolve(cell.tol, r.file.tol, defaults::TOL),
                max_iter: resolve(cell.max_iter, r.file.max_iter, defaults::MAX_ITER),
                eig_tol: resolve(eig_tol, r.file.eig_tol, defaults::EIG_TOL),
                eig_max_iter: resolve(eig_max_iter, r.file.eig_max_iter, defaults::EIG_MAX_ITER),
                dp: resolve(dp, r.file.dp, defaults::DP),
                v_max: resolve(v_max, r.file.v_max, default_v_max),
                m: resolve(m, r.file.m, default_m),
                n_lp: resolve(n_lp, r.file.n_lp, default_n_lp),
                t_final: resolve(t_final, r.file.t_final, defaults::T_FINAL),
                dt: resolve(dt, r.file.dt, defaults::DT),
                paths: resolve(paths, r.file.paths, defaults::PATHS),
                seed: resolve(seed, r.file.seed, defaults::SEED),
                sigmas: resolve(sigmas, r.file.sigmas.clone(), defaults::SIGMAS.to_vec()),
                sweep: sweep || r.file.sweep.unwrap_or(false),
                concurrent: concurrent || r.file.concurrent.unwrap_or(false),
                out_dir: r.out_json.parent().unwrap_or(std::path::Path::new(".")).to_path_buf(),
            };
            cfg.validate()?;
            let report = validate::run_validate(&r.model, &cfg);
            for c in &report.checks {
                println!(
                    "{} {}: {} {} {}",
                    if c.pass { "PASS" } else { "FAIL" },
                    c.name,
                    c.value,
                    c.comparison.symbol(),
                    c.threshold
                );
            }
            for e in &report.stage_errors {
                println!("STAGE ERROR {e}");
            }
            println!("verdict: {}", if report.pass { "PASS" } else { "FAIL" });
            write_checks_csv(&csv_path(&r.out_json), &report.checks)?;
            let pass = report.pass;
            write_json(&r.out_json, &Document::new("validation_report", report))?;
            println!("wrote {}", r.out_json.display());
            Ok(if pass { 0 } else { 1 })
        }
    }
}
