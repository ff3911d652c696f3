//! Batch front-end. One JSON config per run describes the model and the
//! analysis; artifacts (CSV tables, JSON verdicts, gnuplot scripts) land in
//! the output directory. Identical configs produce identical bytes.

// validation guards are written as !(x > 0.0) so NaN fails them too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nalgebra::DVector;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::Deserialize;

use idde::error::Error;
use idde::functional::LinearFunctionalSpec;
use idde::history::{HistoryFunction, InterpOrder, Tail};
use idde::io::{
    self, HistoryDescriptor, ReportRow, StateDescriptor, VerdictSummary,
};
use idde::models;
use idde::resolvent;
use idde::solver::{self, Termination};
use idde::spectral::{self, ScanRegion};
use idde::stability;

#[derive(Parser)]
#[command(
    name = "idde",
    version,
    about = "Spectral analysis and simulation for delay equations with unbounded memory"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON config describing the run
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// directory the artifacts are written to (created if missing)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// seed for the randomized checks of `verify`
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// worker cap; the numerical kernels are serial, so any value >= 1 only
    /// asserts the interface
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate a model forward and write the trajectory
    Simulate,
    /// Characteristic roots of a linear functional or a linearized model
    Spectrum,
    /// Apply the eigenprojector of one root to a state
    Projector,
    /// Scan the spectrum and issue a stability verdict
    Stability,
    /// Continue the rightmost root through a parameter range and locate a
    /// Hopf point
    HopfScan,
    /// Apply the weight gauge (or its inverse) to a history
    Gauge,
    /// Run the invariant suite against a named preset
    Verify,
}

/// Preset selection: name plus numeric overrides.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelRef {
    name: String,
    #[serde(default)]
    params: BTreeMap<String, f64>,
}

fn default_tol() -> f64 {
    1e-12
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulateConfig {
    model: ModelRef,
    history: HistoryDescriptor,
    horizon: f64,
    step: f64,
    #[serde(default)]
    plot: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SpectrumConfig {
    #[serde(default)]
    functional: Option<ModelRef>,
    #[serde(default)]
    model: Option<ModelRef>,
    #[serde(default)]
    equilibrium_guess: Option<Vec<f64>>,
    region: ScanRegion,
    #[serde(default = "default_tol")]
    tol: f64,
    #[serde(default)]
    plot: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ProjectorConfig {
    #[serde(default)]
    functional: Option<ModelRef>,
    #[serde(default)]
    model: Option<ModelRef>,
    #[serde(default)]
    equilibrium_guess: Option<Vec<f64>>,
    region: ScanRegion,
    root_index: usize,
    #[serde(default)]
    state: Option<StateDescriptor>,
    #[serde(default)]
    state_file: Option<PathBuf>,
    #[serde(default = "default_tol")]
    tol: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StabilityConfig {
    #[serde(default)]
    functional: Option<ModelRef>,
    #[serde(default)]
    model: Option<ModelRef>,
    #[serde(default)]
    equilibrium_guess: Option<Vec<f64>>,
    #[serde(default)]
    region: Option<ScanRegion>,
}

fn default_scan_step() -> f64 {
    0.05
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct HopfScanConfig {
    family: ModelRef,
    mu_min: f64,
    mu_max: f64,
    #[serde(default = "default_scan_step")]
    step: f64,
    #[serde(default)]
    verify: Option<HopfVerifyConfig>,
}

fn default_perturbation() -> f64 {
    0.02
}

fn default_sim_horizon() -> f64 {
    400.0
}

fn default_sim_step() -> f64 {
    0.02
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct HopfVerifyConfig {
    offsets: Vec<f64>,
    #[serde(default = "default_perturbation")]
    perturbation: f64,
    #[serde(default = "default_sim_horizon")]
    horizon: f64,
    #[serde(default = "default_sim_step")]
    step: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GaugeConfig {
    eta: f64,
    history: HistoryDescriptor,
    #[serde(default)]
    inverse: bool,
}

fn default_cases() -> usize {
    100
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct VerifyConfig {
    family: ModelRef,
    #[serde(default = "default_cases")]
    cases: usize,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // clap prints its own message; keep usage failures at exit 1
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp
                | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    if cli.threads == 0 {
        return usage_exit(&Error::InvalidSpec("--threads must be at least 1".into()));
    }
    let (config, out) = match (&cli.config, &cli.out) {
        (Some(c), Some(o)) => (c.clone(), o.clone()),
        _ => {
            return usage_exit(&Error::InvalidSpec(
                "--config and --out are required".into(),
            ));
        }
    };
    if let Err(e) = fs::create_dir_all(&out) {
        return usage_exit(&Error::Io(e));
    }
    let result = match cli.command {
        Command::Simulate => run_simulate(&config, &out),
        Command::Spectrum => run_spectrum(&config, &out),
        Command::Projector => run_projector(&config, &out),
        Command::Stability => run_stability(&config, &out),
        Command::HopfScan => run_hopf_scan(&config, &out),
        Command::Gauge => run_gauge(&config, &out),
        Command::Verify => run_verify(&config, &out, cli.seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            emit_error_json(&e);
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn emit_error_json(e: &Error) {
    let payload = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
    eprintln!("{payload}");
}

fn usage_exit(e: &Error) -> ExitCode {
    emit_error_json(e);
    ExitCode::from(1)
}

/// Config and input mistakes exit 1; numerical failures exit 2.
fn exit_code_for(e: &Error) -> u8 {
    match e {
        Error::InvalidHistory(_)
        | Error::DimensionMismatch { .. }
        | Error::EtaMismatch { .. }
        | Error::InvalidSpec(_)
        | Error::Io(_)
        | Error::Json(_)
        | Error::CsvFormat(_) => 1,
        _ => 2,
    }
}

fn load_config<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, Error> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Error> {
    let mut f = fs::File::create(path)?;
    f.write_all(bytes)?;
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

/// Builds the linear functional a spectral subcommand operates on: either a
/// named functional directly, or a model linearized at an equilibrium found
/// from the supplied guess.
fn resolve_functional(
    functional: &Option<ModelRef>,
    model: &Option<ModelRef>,
    guess: &Option<Vec<f64>>,
) -> Result<LinearFunctionalSpec, Error> {
    match (functional, model) {
        (Some(f), None) => models::build_linear_named(&f.name, &f.params),
        (None, Some(m)) => {
            let model = models::build_named(&m.name, &m.params)?;
            let guess = guess.as_ref().ok_or_else(|| {
                Error::InvalidSpec(
                    "model-based analysis needs an equilibrium_guess".into(),
                )
            })?;
            let xbar = solver::find_equilibrium(&model, &DVector::from_vec(guess.clone()))?;
            solver::linearize(&model, &xbar)
        }
        _ => Err(Error::InvalidSpec(
            "specify exactly one of 'functional' or 'model'".into(),
        )),
    }
}

fn run_simulate(config: &Path, out: &Path) -> Result<(), Error> {
    let cfg: SimulateConfig = load_config(config)?;
    let model = models::build_named(&cfg.model.name, &cfg.model.params)?;
    let phi = io::build_history(&cfg.history, model.eta())?;
    let trace = solver::integrate(&model, &phi, cfg.horizon, cfg.step)?;
    let mut buf = Vec::new();
    io::write_trace_csv(&mut buf, &trace)?;
    write_file(&out.join("trace.csv"), &buf)?;
    if cfg.plot {
        let dim = trace.states().first().map_or(1, |x| x.len());
        write_file(
            &out.join("trace.gp"),
            io::trace_plot_script("trace.csv", dim).as_bytes(),
        )?;
    }
    if let Termination::BlowUp { t } = trace.termination() {
        return Err(Error::NonFiniteState {
            t,
            detail: "trajectory escaped before the horizon; partial trace written".into(),
        });
    }
    println!("wrote {}", out.join("trace.csv").display());
    Ok(())
}

fn run_spectrum(config: &Path, out: &Path) -> Result<(), Error> {
    let cfg: SpectrumConfig = load_config(config)?;
    let spec = resolve_functional(&cfg.functional, &cfg.model, &cfg.equilibrium_guess)?;
    let roots = spectral::find_roots(&spec, &cfg.region, cfg.tol)?;
    let mut buf = Vec::new();
    io::write_roots_csv(&mut buf, &roots)?;
    write_file(&out.join("roots.csv"), &buf)?;
    if cfg.plot {
        write_file(
            &out.join("roots.gp"),
            io::roots_plot_script("roots.csv").as_bytes(),
        )?;
    }
    println!("wrote {} ({} roots)", out.join("roots.csv").display(), roots.len());
    Ok(())
}

fn run_projector(config: &Path, out: &Path) -> Result<(), Error> {
    let cfg: ProjectorConfig = load_config(config)?;
    let spec = resolve_functional(&cfg.functional, &cfg.model, &cfg.equilibrium_guess)?;
    let state_desc = match (&cfg.state, &cfg.state_file) {
        (Some(s), None) => s.clone(),
        (None, Some(p)) => load_config(p)?,
        _ => {
            return Err(Error::InvalidSpec(
                "specify exactly one of 'state' or 'state_file'".into(),
            ));
        }
    };
    let roots = spectral::find_roots(&spec, &cfg.region, cfg.tol)?;
    let root = roots.get(cfg.root_index).ok_or_else(|| {
        Error::InvalidSpec(format!(
            "root_index {} out of range: the region holds {} roots",
            cfg.root_index,
            roots.len()
        ))
    })?;
    let state = io::build_state(&state_desc, spec.eta())?.to_complex();
    let proj = spectral::projector_general(&spec, root, &state)?;
    let mut buf = Vec::new();
    io::write_complex_history_csv(&mut buf, &proj)?;
    write_file(&out.join("projector.csv"), &buf)?;
    println!("wrote {}", out.join("projector.csv").display());
    Ok(())
}

/// Smallest valid scan floor for a spec: right of every kernel pole and of
/// the essential boundary at -eta.
fn scan_floor(spec: &LinearFunctionalSpec) -> f64 {
    let mut floor = -spec.eta();
    if let Some(d) = spec.min_delta() {
        floor = floor.max(-d);
    }
    floor + 2.0 * spectral::POLE_MARGIN
}

fn run_stability(config: &Path, out: &Path) -> Result<(), Error> {
    let cfg: StabilityConfig = load_config(config)?;
    let spec = resolve_functional(&cfg.functional, &cfg.model, &cfg.equilibrium_guess)?;
    let region = match cfg.region {
        Some(r) => r,
        None => ScanRegion::new(scan_floor(&spec), 0.5, -1.0, 1.0)?,
    };
    let verdict = stability::assess_stability(&spec, &region)?;
    write_json(&out.join("verdict.json"), &VerdictSummary::from(&verdict))?;
    let mut buf = Vec::new();
    io::write_roots_csv(&mut buf, &verdict.roots)?;
    write_file(&out.join("roots.csv"), &buf)?;
    println!(
        "wrote {} (stable: {})",
        out.join("verdict.json").display(),
        verdict.stable
    );
    Ok(())
}

fn run_hopf_scan(config: &Path, out: &Path) -> Result<(), Error> {
    let cfg: HopfScanConfig = load_config(config)?;
    if !(cfg.mu_min < cfg.mu_max) {
        return Err(Error::InvalidSpec(format!(
            "mu range [{}, {}] is empty",
            cfg.mu_min, cfg.mu_max
        )));
    }
    let family = models::linear_family(&cfg.family.name, &cfg.family.params)?;
    let spec0 = family(cfg.mu_min)?;
    // seed on the rightmost root of the upper half-plane at mu_min; the
    // conjugate branch mirrors it
    let bound = spec0.root_radius_bound(0.0)?;
    let top = bound + 0.5;
    let seed_region = ScanRegion::new(scan_floor(&spec0), top, 1e-3, top)?;
    let roots = spectral::find_roots(&spec0, &seed_region, 1e-12)?;
    let seed_root = roots
        .iter()
        .max_by(|a, b| a.lambda0.re.total_cmp(&b.lambda0.re))
        .ok_or_else(|| {
            Error::BranchFailure(format!(
                "no root with positive imaginary part at mu = {} to continue from",
                cfg.mu_min
            ))
        })?;
    let fam = |mu: f64| family(mu);
    let branch = stability::continue_branch(
        &fam,
        (cfg.mu_min, cfg.mu_max),
        (cfg.mu_min, seed_root.lambda0),
        cfg.step,
    )?;
    let mut buf = Vec::new();
    io::write_branch_csv(&mut buf, &branch)?;
    let record = stability::detect_hopf(&fam, &branch)?;
    let record = match record {
        Some(mut rec) => {
            if let Some(v) = &cfg.verify {
                let model_family = models::model_family(&cfg.family.name, &cfg.family.params)?;
                let mfam = |mu: f64| model_family(mu);
                let dim = spec0.dim();
                rec = stability::verify_hopf_by_simulation(
                    &mfam,
                    &rec,
                    &v.offsets,
                    &DVector::zeros(dim),
                    v.perturbation,
                    v.horizon,
                    v.step,
                )?;
            }
            Some(rec)
        }
        None => None,
    };
    let payload = serde_json::json!({
        "found": record.is_some(),
        "record": record,
    });
    write_json(&out.join("hopf.json"), &payload)?;
    if let Some(rec) = &record {
        let mut buf = Vec::new();
        io::write_hopf_rows_csv(&mut buf, &rec.rows)?;
        write_file(&out.join("hopf_rows.csv"), &buf)?;
        println!(
            "wrote {} (mu* = {}, omega = {})",
            out.join("hopf.json").display(),
            rec.mu_star,
            rec.omega
        );
    } else {
        println!("wrote {} (no crossing in range)", out.join("hopf.json").display());
    }
    Ok(())
}

fn run_gauge(config: &Path, out: &Path) -> Result<(), Error> {
    let cfg: GaugeConfig = load_config(config)?;
    if !(cfg.eta > 0.0) {
        return Err(Error::InvalidSpec(format!("eta must be positive, got {}", cfg.eta)));
    }
    let (result, in_norm) = if cfg.inverse {
        let unweighted = io::build_history(&cfg.history, 0.0)?;
        let norm = unweighted.eta_norm();
        (unweighted.gauge_inverse(cfg.eta)?, norm)
    } else {
        let phi = io::build_history(&cfg.history, cfg.eta)?;
        let norm = phi.eta_norm();
        (phi.gauge_transform()?, norm)
    };
    let mut buf = Vec::new();
    io::write_history_csv(&mut buf, &result)?;
    write_file(&out.join("gauge.csv"), &buf)?;
    let payload = serde_json::json!({
        "input_norm": in_norm,
        "output_norm": result.eta_norm(),
    });
    write_json(&out.join("gauge.json"), &payload)?;
    println!("wrote {}", out.join("gauge.csv").display());
    Ok(())
}

/// Random history with bounded weighted norm: decaying cosine samples on the
/// default grid.
fn random_history(
    rng: &mut ChaCha12Rng,
    eta: f64,
    dim: usize,
) -> Result<HistoryFunction<f64>, Error> {
    let amp: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let rate: f64 = rng.gen_range(0.0..1.0);
    let freq: f64 = rng.gen_range(0.0..5.0);
    let amp = DVector::from_vec(amp);
    HistoryFunction::from_fn(eta, 128, Tail::WeightedContinuation, InterpOrder::Cubic, |t| {
        &amp * ((rate * t).exp() * (freq * t).cos())
    })
}

fn run_verify(config: &Path, out: &Path, seed: u64) -> Result<(), Error> {
    let cfg: VerifyConfig = load_config(config)?;
    let spec = models::build_linear_named(&cfg.family.name, &cfg.family.params)?;
    if cfg.cases == 0 {
        return Err(Error::InvalidSpec("cases must be at least 1".into()));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let eta = spec.eta();
    let dim = spec.dim();
    let mut rows = Vec::new();

    // resolvent contraction of the free part: lambda ||R(lambda)(alpha, phi)||
    // stays under ||alpha|| + ||phi||
    let mut worst = 0.0f64;
    for _ in 0..cfg.cases {
        let lambda = rng.gen_range(0.1..50.0);
        let alpha =
            DVector::from_vec((0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>());
        let phi = random_history(&mut rng, eta, dim)?;
        let denom = alpha.norm() + phi.eta_norm();
        if denom == 0.0 {
            continue;
        }
        let state = idde::history::BoundaryAugmentedState::new(alpha, phi)?;
        let psi = resolvent::resolvent_a(lambda, &state)?;
        worst = worst.max(lambda * psi.eta_norm() / denom);
    }
    rows.push(ReportRow {
        check: "resolvent_contraction".into(),
        passed: worst <= 1.0 + 1e-6,
        observed: worst,
        bound: 1.0 + 1e-6,
    });

    // essential part of the shift semigroup decays like 2 e^{-eta t}
    let mut worst = 0.0f64;
    for _ in 0..cfg.cases.min(25) {
        let phi = random_history(&mut rng, eta, dim)?;
        let norm = phi.eta_norm();
        if norm == 0.0 {
            continue;
        }
        for t in [0.5, 1.0, 2.0, 5.0] {
            let (_, s) = resolvent::decay_decomposition(t, &phi)?;
            worst = worst.max(s.eta_norm() * (eta * t).exp() / (2.0 * norm));
        }
    }
    rows.push(ReportRow {
        check: "essential_decay".into(),
        passed: worst <= 1.0 + 1e-12,
        observed: worst,
        bound: 1.0 + 1e-12,
    });

    // det Delta(conj lambda) = conj det Delta(lambda)
    let floor = scan_floor(&spec);
    let mut worst = 0.0f64;
    for _ in 0..cfg.cases {
        let lambda = Complex64::new(
            rng.gen_range(floor..floor + 3.0),
            rng.gen_range(-3.0..3.0),
        );
        let d1 = spec.char_matrix(lambda)?.determinant();
        let d2 = spec.char_matrix(lambda.conj())?.determinant();
        worst = worst.max((d2 - d1.conj()).norm() / (1.0 + d1.norm()));
    }
    rows.push(ReportRow {
        check: "conjugate_symmetry".into(),
        passed: worst <= 1e-12,
        observed: worst,
        bound: 1e-12,
    });

    // winding count equals the sum of isolated multiplicities
    let bound = spec.root_radius_bound(0.0)?;
    let top = bound + 0.5;
    let region = ScanRegion::new(floor, top, -top, top)?;
    let roots = spectral::find_roots(&spec, &region, 1e-12)?;
    let total: usize = roots.iter().map(|r| r.multiplicity).sum();
    let counted = spectral::count_roots(&spec, &region)?;
    rows.push(ReportRow {
        check: "root_count_consistency".into(),
        passed: counted == total,
        observed: counted as f64 - total as f64,
        bound: 0.0,
    });

    // the gauge to the unweighted space preserves the norm
    let mut worst = 0.0f64;
    for _ in 0..cfg.cases {
        let phi = random_history(&mut rng, eta, dim)?;
        let norm = phi.eta_norm();
        if norm == 0.0 {
            continue;
        }
        let g = phi.gauge_transform()?;
        worst = worst.max((g.eta_norm() - norm).abs() / norm);
    }
    rows.push(ReportRow {
        check: "gauge_isometry".into(),
        passed: worst <= 1e-12,
        observed: worst,
        bound: 1e-12,
    });

    let mut buf = Vec::new();
    io::write_report_csv(&mut buf, &rows)?;
    write_file(&out.join("report.csv"), &buf)?;
    let failed = rows.iter().filter(|r| !r.passed).count();
    for r in &rows {
        println!("{}: {}", r.check, if r.passed { "PASS" } else { "FAIL" });
    }
    if failed > 0 {
        return Err(Error::Domain(format!("{failed} invariant checks failed")));
    }
    Ok(())
}
