//! Deterministic emission of traces, root tables, histories and reports:
//! comma-separated, header row, LF line endings, 17 significant digits.
//! Also the JSON descriptors the CLI accepts for histories and states.

use std::io::Write;

use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::history::{BoundaryAugmentedState, HistoryFunction};
use crate::solver::SimulationTrace;
use crate::spectral::{ScanRegion, SpectralRoot};
use crate::stability::{BranchSample, HopfVerificationRow, StabilityVerdict};

/// 17 significant digits: enough to round-trip any f64, so identical runs
/// produce identical bytes.
pub fn g17(x: f64) -> String {
    format!("{x:.16e}")
}

fn line<W: Write>(w: &mut W, cells: &[String]) -> Result<()> {
    w.write_all(cells.join(",").as_bytes())?;
    w.write_all(b"\n")?;
    Ok(())
}

/// Knot rows of a simulation trace: t, then one column per component.
pub fn write_trace_csv<W: Write>(w: &mut W, trace: &SimulationTrace) -> Result<()> {
    let dim = trace.states().first().map_or(0, |x| x.len());
    let mut header = vec!["t".to_string()];
    header.extend((0..dim).map(|i| format!("x{i}")));
    line(w, &header)?;
    for (t, x) in trace.times().iter().zip(trace.states()) {
        let mut row = vec![g17(*t)];
        row.extend(x.iter().map(|v| g17(*v)));
        line(w, &row)?;
    }
    Ok(())
}

/// Root table sorted the way find_roots returns it (by real part, then
/// imaginary part).
pub fn write_roots_csv<W: Write>(w: &mut W, roots: &[SpectralRoot]) -> Result<()> {
    line(
        w,
        &["re", "im", "multiplicity", "pole_order", "null_dim", "residual", "simple"]
            .map(String::from),
    )?;
    for r in roots {
        line(
            w,
            &[
                g17(r.lambda0.re),
                g17(r.lambda0.im),
                r.multiplicity.to_string(),
                r.pole_order.to_string(),
                r.null_dim.to_string(),
                g17(r.residual),
                (r.is_simple as u8).to_string(),
            ],
        )?;
    }
    Ok(())
}

/// History samples: theta, then one column per component.
pub fn write_history_csv<W: Write>(w: &mut W, h: &HistoryFunction<f64>) -> Result<()> {
    let mut header = vec!["theta".to_string()];
    header.extend((0..h.dim()).map(|i| format!("x{i}")));
    line(w, &header)?;
    for (t, v) in h.grid().iter().zip(h.values()) {
        let mut row = vec![g17(*t)];
        row.extend(v.iter().map(|x| g17(*x)));
        line(w, &row)?;
    }
    Ok(())
}

/// Complex history samples: theta, then re/im column pairs.
pub fn write_complex_history_csv<W: Write>(
    w: &mut W,
    h: &HistoryFunction<Complex64>,
) -> Result<()> {
    let mut header = vec!["theta".to_string()];
    for i in 0..h.dim() {
        header.push(format!("x{i}_re"));
        header.push(format!("x{i}_im"));
    }
    line(w, &header)?;
    for (t, v) in h.grid().iter().zip(h.values()) {
        let mut row = vec![g17(*t)];
        for x in v.iter() {
            row.push(g17(x.re));
            row.push(g17(x.im));
        }
        line(w, &row)?;
    }
    Ok(())
}

/// Continuation samples: parameter, root, implicit derivative, conditioning.
pub fn write_branch_csv<W: Write>(w: &mut W, branch: &[BranchSample]) -> Result<()> {
    line(
        w,
        &["mu", "re", "im", "dre_dmu", "dim_dmu", "condition"].map(String::from),
    )?;
    for s in branch {
        line(
            w,
            &[
                g17(s.mu),
                g17(s.lambda.re),
                g17(s.lambda.im),
                g17(s.dlambda_dmu.re),
                g17(s.dlambda_dmu.im),
                g17(s.condition),
            ],
        )?;
    }
    Ok(())
}

/// Limit-cycle measurements at parameter offsets above a Hopf point.
pub fn write_hopf_rows_csv<W: Write>(w: &mut W, rows: &[HopfVerificationRow]) -> Result<()> {
    line(w, &["offset", "period", "amplitude", "cycle_found"].map(String::from))?;
    for r in rows {
        line(
            w,
            &[
                g17(r.offset),
                r.period.map_or_else(|| "nan".to_string(), g17),
                r.amplitude.map_or_else(|| "nan".to_string(), g17),
                (r.cycle_found as u8).to_string(),
            ],
        )?;
    }
    Ok(())
}

/// One invariant-check outcome in a verification report.
#[derive(Debug, Clone, Serialize)]
pub struct ReportRow {
    pub check: String,
    pub passed: bool,
    /// worst observed value of the checked quantity
    pub observed: f64,
    /// bound it must stay under
    pub bound: f64,
}

pub fn write_report_csv<W: Write>(w: &mut W, rows: &[ReportRow]) -> Result<()> {
    line(w, &["check", "status", "observed", "bound"].map(String::from))?;
    for r in rows {
        line(
            w,
            &[
                r.check.clone(),
                if r.passed { "PASS" } else { "FAIL" }.to_string(),
                g17(r.observed),
                g17(r.bound),
            ],
        )?;
    }
    Ok(())
}

/// JSON-friendly root summary (the Laurent matrices and null vectors stay
/// in-process; tables carry the scalar data).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RootSummary {
    pub re: f64,
    pub im: f64,
    pub multiplicity: usize,
    pub pole_order: usize,
    pub null_dim: usize,
    pub residual: f64,
    pub simple: bool,
}

impl From<&SpectralRoot> for RootSummary {
    fn from(r: &SpectralRoot) -> Self {
        RootSummary {
            re: r.lambda0.re,
            im: r.lambda0.im,
            multiplicity: r.multiplicity,
            pole_order: r.pole_order,
            null_dim: r.null_dim,
            residual: r.residual,
            simple: r.is_simple,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerdictSummary {
    pub stable: bool,
    pub decay_estimate: Option<f64>,
    pub region: ScanRegion,
    pub rightmost: Option<RootSummary>,
    pub roots: Vec<RootSummary>,
}

impl From<&StabilityVerdict> for VerdictSummary {
    fn from(v: &StabilityVerdict) -> Self {
        VerdictSummary {
            stable: v.stable,
            decay_estimate: v.decay_estimate,
            region: v.region,
            rightmost: v.rightmost.as_ref().map(RootSummary::from),
            roots: v.roots.iter().map(RootSummary::from).collect(),
        }
    }
}

/// Closed-form initial histories selectable from config.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum HistoryDescriptor {
    /// phi(theta) = value
    Constant {
        value: Vec<f64>,
        #[serde(default = "default_nodes")]
        nodes: usize,
    },
    /// phi(theta) = amplitude * e^{rate theta} cos(frequency theta)
    Cosine {
        amplitude: Vec<f64>,
        #[serde(default)]
        rate: f64,
        frequency: f64,
        #[serde(default = "default_nodes")]
        nodes: usize,
    },
}

fn default_nodes() -> usize {
    512
}

/// Realizes a descriptor at the given weight.
pub fn build_history(desc: &HistoryDescriptor, eta: f64) -> Result<HistoryFunction<f64>> {
    match desc {
        HistoryDescriptor::Constant { value, nodes } => {
            HistoryFunction::constant(eta, DVector::from_vec(value.clone()), *nodes)
        }
        HistoryDescriptor::Cosine { amplitude, rate, frequency, nodes } => {
            if *rate < 0.0 {
                return Err(Error::InvalidHistory(format!(
                    "cosine history rate {rate} would grow into the past"
                )));
            }
            let amp = DVector::from_vec(amplitude.clone());
            HistoryFunction::from_fn(
                eta,
                *nodes,
                crate::history::Tail::WeightedContinuation,
                crate::history::InterpOrder::Cubic,
                |t| &amp * ((rate * t).exp() * (frequency * t).cos()),
            )
        }
    }
}

/// A point of the state space: boundary value plus history.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateDescriptor {
    pub alpha: Vec<f64>,
    pub history: HistoryDescriptor,
}

pub fn build_state(desc: &StateDescriptor, eta: f64) -> Result<BoundaryAugmentedState<f64>> {
    let history = build_history(&desc.history, eta)?;
    BoundaryAugmentedState::new(DVector::from_vec(desc.alpha.clone()), history)
}

/// Gnuplot script plotting every component of a trace CSV against time.
pub fn trace_plot_script(csv_name: &str, dim: usize) -> String {
    let mut s = String::from(
        "set datafile separator ','\nset key autotitle columnhead\nset xlabel 't'\n",
    );
    s.push_str("plot ");
    for i in 0..dim.max(1) {
        if i > 0 {
            s.push_str(", ");
        }
        s.push_str(&format!("'{csv_name}' using 1:{} with lines", i + 2));
    }
    s.push('\n');
    s
}

/// Gnuplot script scattering a root table in the complex plane.
pub fn roots_plot_script(csv_name: &str) -> String {
    format!(
        "set datafile separator ','\nset key autotitle columnhead\nset xlabel 'Re'\nset ylabel 'Im'\nset zeroaxis\nplot '{csv_name}' using 1:2 with points pt 7\n"
    )
}
