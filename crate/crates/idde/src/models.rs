//! Built-in models: a chemostat and a fishery with exponentially distributed
//! delays, plus scalar nonlinear companions whose linearizations are the
//! stock test functionals. All carry analytic linearizations.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functional::{self, DiscreteTerm, KernelTerm, LinearFunctionalSpec};
use crate::solver::{AssembleCtx, KernelChannel, ModelSpec};

/// Nutrient/microorganism chemostat with the uptake history entering
/// through an exponential kernel:
/// S' = D (s_in - S) - a x p(S),
/// x' = x [ -d1 + integral of delta e^{delta theta} p(S(t+theta)) ],
/// with Michaelis-Menten uptake p(S) = S / (k + S).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChemostatParams {
    /// inflow nutrient concentration
    pub s_in: f64,
    /// dilution rate
    pub d: f64,
    /// microorganism removal rate
    pub d1: f64,
    /// uptake gain
    pub a: f64,
    /// kernel rate (mean delay 1/delta)
    pub delta: f64,
    /// half-saturation constant of p
    pub k: f64,
    /// history-space weight
    pub eta: f64,
}

impl Default for ChemostatParams {
    fn default() -> Self {
        ChemostatParams { s_in: 1.0, d: 1.0, d1: 0.5, a: 1.0, delta: 2.0, k: 0.5, eta: 0.5 }
    }
}

impl ChemostatParams {
    fn validate(&self) -> Result<()> {
        if [self.s_in, self.d, self.d1, self.a, self.delta, self.k, self.eta]
            .iter()
            .any(|v| !(*v > 0.0))
        {
            return Err(Error::InvalidSpec("chemostat parameters must be positive".into()));
        }
        if self.delta <= self.eta {
            return Err(Error::InvalidSpec(format!(
                "kernel rate {} must exceed the weight {}",
                self.delta, self.eta
            )));
        }
        Ok(())
    }

    fn as_map(&self) -> BTreeMap<String, f64> {
        [
            ("s_in", self.s_in),
            ("d", self.d),
            ("d1", self.d1),
            ("a", self.a),
            ("delta", self.delta),
            ("k", self.k),
            ("eta", self.eta),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}

/// Nutrient state where the microorganisms are absent.
pub fn chemostat_washout(p: &ChemostatParams) -> DVector<f64> {
    DVector::from_vec(vec![p.s_in, 0.0])
}

/// Coexistence state, when uptake at inflow level exceeds removal.
pub fn chemostat_interior(p: &ChemostatParams) -> Option<DVector<f64>> {
    if p.d1 >= 1.0 {
        return None;
    }
    let s = p.k * p.d1 / (1.0 - p.d1);
    if s >= p.s_in {
        return None;
    }
    let x = p.d * (p.s_in - s) / (p.a * p.d1);
    Some(DVector::from_vec(vec![s, x]))
}

pub fn chemostat(params: &ChemostatParams) -> Result<ModelSpec> {
    params.validate()?;
    let p = *params;
    let uptake = move |s: f64| s / (p.k + s);
    let uptake_d = move |s: f64| p.k / ((p.k + s) * (p.k + s));
    let chan = KernelChannel::new(
        p.delta,
        0,
        1,
        Arc::new(move |v: &DVector<f64>| DVector::from_vec(vec![uptake(v[0])])),
    );
    let assemble = Arc::new(move |ctx: &AssembleCtx| {
        let (s, x) = (ctx.x[0], ctx.x[1]);
        // channel integral carries weight e^{delta theta}; the kernel
        // delta e^{-delta s} needs the extra factor delta
        let conv = p.delta * ctx.kernels[0][0];
        DVector::from_vec(vec![p.d * (p.s_in - s) - p.a * x * uptake(s), x * (-p.d1 + conv)])
    });
    let linearize = Arc::new(
        move |_params: &BTreeMap<String, f64>, xbar: &DVector<f64>| -> Result<LinearFunctionalSpec> {
            let (s, x) = (xbar[0], xbar[1]);
            let a0 = DMatrix::from_row_slice(
                2,
                2,
                &[
                    -p.d - p.a * x * uptake_d(s),
                    -p.a * uptake(s),
                    0.0,
                    -p.d1 + uptake(s),
                ],
            );
            let c = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, x * p.delta * uptake_d(s), 0.0]);
            LinearFunctionalSpec::new(
                2,
                p.eta,
                vec![DiscreteTerm { matrix: a0, tau: 0.0 }],
                vec![KernelTerm { matrix: c, delta: p.delta, power: 0 }],
            )
        },
    );
    Ok(
        ModelSpec::new("chemostat", 2, p.eta, vec![], vec![chan], assemble, params.as_map())?
            .with_linearization(linearize),
    )
}

/// Resource/effort fishery where past catches drive effort growth:
/// n' = r n (1 - n) - q n E,
/// E' = p (1 - eta_share) q n E
///      + eta_share p integral of delta e^{delta theta} q n(t+theta) E(t+theta)
///      - c E.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FisheryParams {
    /// logistic growth rate of the stock
    pub r: f64,
    /// price-to-investment conversion
    pub p: f64,
    /// share of revenue reinvested with delay
    pub eta_share: f64,
    /// kernel rate
    pub delta: f64,
    /// effort operating cost
    pub c: f64,
    /// catchability
    pub q: f64,
    /// history-space weight
    pub eta: f64,
}

impl Default for FisheryParams {
    fn default() -> Self {
        FisheryParams { r: 1.0, p: 1.0, eta_share: 0.5, delta: 1.0, c: 0.25, q: 1.0, eta: 0.5 }
    }
}

impl FisheryParams {
    fn validate(&self) -> Result<()> {
        if [self.r, self.p, self.delta, self.c, self.q, self.eta].iter().any(|v| !(*v > 0.0)) {
            return Err(Error::InvalidSpec("fishery parameters must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.eta_share) {
            return Err(Error::InvalidSpec(format!(
                "reinvested share {} must lie in [0, 1]",
                self.eta_share
            )));
        }
        if self.delta <= self.eta {
            return Err(Error::InvalidSpec(format!(
                "kernel rate {} must exceed the weight {}",
                self.delta, self.eta
            )));
        }
        Ok(())
    }

    fn as_map(&self) -> BTreeMap<String, f64> {
        [
            ("r", self.r),
            ("p", self.p),
            ("eta_share", self.eta_share),
            ("delta", self.delta),
            ("c", self.c),
            ("q", self.q),
            ("eta", self.eta),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}

/// Coexistence state: catch revenue balances effort cost.
pub fn fishery_interior(p: &FisheryParams) -> Option<DVector<f64>> {
    let n = p.c / (p.p * p.q);
    if n >= 1.0 {
        return None;
    }
    let e = p.r * (1.0 - n) / p.q;
    Some(DVector::from_vec(vec![n, e]))
}

pub fn fishery(params: &FisheryParams) -> Result<ModelSpec> {
    params.validate()?;
    let p = *params;
    let chan = KernelChannel::new(
        p.delta,
        0,
        1,
        Arc::new(move |v: &DVector<f64>| DVector::from_vec(vec![p.q * v[0] * v[1]])),
    );
    let assemble = Arc::new(move |ctx: &AssembleCtx| {
        let (n, e) = (ctx.x[0], ctx.x[1]);
        let catch = p.q * n * e;
        let conv = p.delta * ctx.kernels[0][0];
        DVector::from_vec(vec![
            p.r * n * (1.0 - n) - catch,
            p.p * (1.0 - p.eta_share) * catch + p.eta_share * p.p * conv - p.c * e,
        ])
    });
    let linearize = Arc::new(
        move |_params: &BTreeMap<String, f64>, xbar: &DVector<f64>| -> Result<LinearFunctionalSpec> {
            let (n, e) = (xbar[0], xbar[1]);
            let j0 = DMatrix::from_row_slice(
                2,
                2,
                &[
                    p.r * (1.0 - 2.0 * n) - p.q * e,
                    -p.q * n,
                    p.p * (1.0 - p.eta_share) * p.q * e,
                    p.p * (1.0 - p.eta_share) * p.q * n - p.c,
                ],
            );
            let j1 = DMatrix::from_row_slice(
                2,
                2,
                &[
                    0.0,
                    0.0,
                    p.eta_share * p.p * p.q * e,
                    p.eta_share * p.p * p.q * n,
                ],
            );
            LinearFunctionalSpec::new(
                2,
                p.eta,
                vec![DiscreteTerm { matrix: j0, tau: 0.0 }],
                vec![KernelTerm { matrix: j1 * p.delta, delta: p.delta, power: 0 }],
            )
        },
    );
    Ok(
        ModelSpec::new("fishery", 2, p.eta, vec![], vec![chan], assemble, params.as_map())?
            .with_linearization(linearize),
    )
}

/// Scalar delayed-feedback model x' = -a (1 + x) <kernel, x> with the
/// Erlang-2 kernel delta^2 (-theta) e^{delta theta}; linearization at 0 is
/// the Erlang-2 functional, with a Hopf point at a = 2 delta.
pub fn wright_erlang2(a: f64, delta: f64, eta: f64) -> Result<ModelSpec> {
    if !(a.is_finite() && delta > eta && eta > 0.0) {
        return Err(Error::InvalidSpec(format!(
            "wright-erlang2 needs delta > eta > 0, got delta {delta}, eta {eta}"
        )));
    }
    let chan = KernelChannel::new(delta, 1, 1, Arc::new(|x: &DVector<f64>| x.clone()));
    let d2 = delta * delta;
    let assemble = Arc::new(move |ctx: &AssembleCtx| {
        DVector::from_vec(vec![-a * d2 * ctx.kernels[0][0] * (1.0 + ctx.x[0])])
    });
    let params: BTreeMap<String, f64> =
        [("a".to_string(), a), ("delta".to_string(), delta)].into_iter().collect();
    let linearize = Arc::new(
        move |_p: &BTreeMap<String, f64>, xbar: &DVector<f64>| -> Result<LinearFunctionalSpec> {
            // kernel has unit mass at constants: <kernel, xbar> = xbar
            let base = functional::erlang2(a * (1.0 + xbar[0]), delta, eta);
            if xbar[0] == 0.0 {
                return Ok(base);
            }
            LinearFunctionalSpec::new(
                1,
                eta,
                vec![DiscreteTerm {
                    matrix: DMatrix::from_element(1, 1, -a * xbar[0]),
                    tau: 0.0,
                }],
                base.kernel_terms().to_vec(),
            )
        },
    );
    Ok(ModelSpec::new("wright-erlang2", 1, eta, vec![], vec![chan], assemble, params)?
        .with_linearization(linearize))
}

/// Classical delayed logistic feedback x' = -a x(t - tau) (1 + x(t));
/// linearization at 0 is the discrete-lag functional, Hopf at a tau = pi/2.
pub fn wright_discrete(a: f64, tau: f64, eta: f64) -> Result<ModelSpec> {
    if !(a.is_finite() && tau > 0.0 && eta > 0.0) {
        return Err(Error::InvalidSpec(format!(
            "wright-discrete needs tau > 0 and eta > 0, got tau {tau}, eta {eta}"
        )));
    }
    let assemble = Arc::new(move |ctx: &AssembleCtx| {
        DVector::from_vec(vec![-a * ctx.taps[0][0] * (1.0 + ctx.x[0])])
    });
    let params: BTreeMap<String, f64> =
        [("a".to_string(), a), ("tau".to_string(), tau)].into_iter().collect();
    let linearize = Arc::new(
        move |_p: &BTreeMap<String, f64>, xbar: &DVector<f64>| -> Result<LinearFunctionalSpec> {
            let mut discrete = vec![DiscreteTerm {
                matrix: DMatrix::from_element(1, 1, -a * (1.0 + xbar[0])),
                tau,
            }];
            if xbar[0] != 0.0 {
                discrete.push(DiscreteTerm {
                    matrix: DMatrix::from_element(1, 1, -a * xbar[0]),
                    tau: 0.0,
                });
            }
            LinearFunctionalSpec::new(1, eta, discrete, vec![])
        },
    );
    Ok(ModelSpec::new("wright-discrete", 1, eta, vec![tau], vec![], assemble, params)?
        .with_linearization(linearize))
}

fn get(overrides: &BTreeMap<String, f64>, key: &str, default: f64) -> f64 {
    overrides.get(key).copied().unwrap_or(default)
}

fn reject_unknown(overrides: &BTreeMap<String, f64>, allowed: &[&str]) -> Result<()> {
    for k in overrides.keys() {
        if !allowed.contains(&k.as_str()) {
            return Err(Error::InvalidSpec(format!(
                "unknown parameter '{k}'; allowed: {allowed:?}"
            )));
        }
    }
    Ok(())
}

/// Builds a preset model by name with parameter overrides. Known names:
/// chemostat, fishery, wright-erlang2, wright-discrete, and the linear
/// families one-exponential, erlang2, discrete, jordan.
pub fn build_named(name: &str, overrides: &BTreeMap<String, f64>) -> Result<ModelSpec> {
    match name {
        "chemostat" => {
            let d = ChemostatParams::default();
            reject_unknown(overrides, &["s_in", "d", "d1", "a", "delta", "k", "eta"])?;
            chemostat(&ChemostatParams {
                s_in: get(overrides, "s_in", d.s_in),
                d: get(overrides, "d", d.d),
                d1: get(overrides, "d1", d.d1),
                a: get(overrides, "a", d.a),
                delta: get(overrides, "delta", d.delta),
                k: get(overrides, "k", d.k),
                eta: get(overrides, "eta", d.eta),
            })
        }
        "fishery" => {
            let d = FisheryParams::default();
            reject_unknown(overrides, &["r", "p", "eta_share", "delta", "c", "q", "eta"])?;
            fishery(&FisheryParams {
                r: get(overrides, "r", d.r),
                p: get(overrides, "p", d.p),
                eta_share: get(overrides, "eta_share", d.eta_share),
                delta: get(overrides, "delta", d.delta),
                c: get(overrides, "c", d.c),
                q: get(overrides, "q", d.q),
                eta: get(overrides, "eta", d.eta),
            })
        }
        "wright-erlang2" => {
            reject_unknown(overrides, &["a", "delta", "eta"])?;
            wright_erlang2(
                get(overrides, "a", 2.1),
                get(overrides, "delta", 1.0),
                get(overrides, "eta", 0.5),
            )
        }
        "wright-discrete" => {
            reject_unknown(overrides, &["a", "tau", "eta"])?;
            wright_discrete(
                get(overrides, "a", 1.65),
                get(overrides, "tau", 1.0),
                get(overrides, "eta", 0.3),
            )
        }
        _ => Ok(ModelSpec::from_functional(&build_linear_named(name, overrides)?)),
    }
}

/// Stock linear functionals by name with overrides.
pub fn build_linear_named(
    name: &str,
    overrides: &BTreeMap<String, f64>,
) -> Result<LinearFunctionalSpec> {
    match name {
        "one-exponential" => {
            reject_unknown(overrides, &["a", "delta", "eta"])?;
            Ok(functional::one_exponential(
                get(overrides, "a", 1.0),
                get(overrides, "delta", 2.0),
                get(overrides, "eta", 0.5),
            ))
        }
        "erlang2" => {
            reject_unknown(overrides, &["a", "delta", "eta"])?;
            Ok(functional::erlang2(
                get(overrides, "a", 2.0),
                get(overrides, "delta", 1.0),
                get(overrides, "eta", 0.5),
            ))
        }
        "discrete" => {
            reject_unknown(overrides, &["a", "tau", "eta"])?;
            Ok(functional::discrete_scalar(
                get(overrides, "a", std::f64::consts::FRAC_PI_2),
                get(overrides, "tau", 1.0),
                get(overrides, "eta", 0.3),
            ))
        }
        "jordan" => {
            reject_unknown(overrides, &["eta"])?;
            Ok(functional::jordan_block(get(overrides, "eta", 0.5)))
        }
        "free" => {
            reject_unknown(overrides, &["dim", "eta"])?;
            let dim = get(overrides, "dim", 1.0);
            if dim < 1.0 || dim.fract() != 0.0 {
                return Err(Error::InvalidSpec(format!("dim must be a positive integer, got {dim}")));
            }
            LinearFunctionalSpec::new(dim as usize, get(overrides, "eta", 0.5), vec![], vec![])
        }
        other => Err(Error::InvalidSpec(format!("unknown model or family '{other}'"))),
    }
}

/// One-parameter linear families for branch continuation, keyed by name;
/// the scanned parameter is the feedback gain a.
pub fn linear_family(
    name: &str,
    overrides: &BTreeMap<String, f64>,
) -> Result<Arc<dyn Fn(f64) -> Result<LinearFunctionalSpec> + Send + Sync>> {
    match name {
        "erlang2" => {
            reject_unknown(overrides, &["delta", "eta"])?;
            let delta = get(overrides, "delta", 1.0);
            let eta = get(overrides, "eta", 0.5);
            Ok(Arc::new(move |a| Ok(functional::erlang2(a, delta, eta))))
        }
        "one-exponential" => {
            reject_unknown(overrides, &["delta", "eta"])?;
            let delta = get(overrides, "delta", 2.0);
            let eta = get(overrides, "eta", 0.5);
            Ok(Arc::new(move |a| Ok(functional::one_exponential(a, delta, eta))))
        }
        "discrete" => {
            reject_unknown(overrides, &["tau", "eta"])?;
            let tau = get(overrides, "tau", 1.0);
            let eta = get(overrides, "eta", 0.3);
            Ok(Arc::new(move |a| Ok(functional::discrete_scalar(a, tau, eta))))
        }
        other => Err(Error::InvalidSpec(format!("unknown linear family '{other}'"))),
    }
}

/// Nonlinear companions of the linear families, for Hopf verification.
pub fn model_family(
    name: &str,
    overrides: &BTreeMap<String, f64>,
) -> Result<Arc<dyn Fn(f64) -> Result<ModelSpec> + Send + Sync>> {
    match name {
        "erlang2" | "wright-erlang2" => {
            reject_unknown(overrides, &["delta", "eta"])?;
            let delta = get(overrides, "delta", 1.0);
            let eta = get(overrides, "eta", 0.5);
            Ok(Arc::new(move |a| wright_erlang2(a, delta, eta)))
        }
        "discrete" | "wright-discrete" => {
            reject_unknown(overrides, &["tau", "eta"])?;
            let tau = get(overrides, "tau", 1.0);
            let eta = get(overrides, "eta", 0.3);
            Ok(Arc::new(move |a| wright_discrete(a, tau, eta)))
        }
        other => Err(Error::InvalidSpec(format!("unknown model family '{other}'"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::history::HistoryFunction;
    use crate::solver;
    use num_complex::Complex64;

    #[test]
    fn chemostat_washout_is_an_equilibrium() {
        let p = ChemostatParams::default();
        let model = chemostat(&p).unwrap();
        let f = solver::constant_field(&model, &chemostat_washout(&p)).unwrap();
        assert!(f.norm() < 1e-12, "field at washout: {f}");
    }

    #[test]
    fn chemostat_interior_matches_algebra() {
        let p = ChemostatParams::default();
        let model = chemostat(&p).unwrap();
        let alg = chemostat_interior(&p).unwrap();
        assert!((alg[0] - 0.5).abs() < 1e-14 && (alg[1] - 1.0).abs() < 1e-14);
        let guess = DVector::from_vec(vec![0.4, 1.2]);
        let xbar = solver::find_equilibrium(&model, &guess).unwrap();
        assert!((xbar - alg).norm() < 1e-10);
    }

    #[test]
    fn chemostat_char_matrix_at_zero_is_minus_jacobian() {
        let p = ChemostatParams::default();
        let model = chemostat(&p).unwrap();
        let xbar = chemostat_interior(&p).unwrap();
        let spec = solver::linearize(&model, &xbar).unwrap();
        let delta0 = spec.char_matrix(Complex64::new(0.0, 0.0)).unwrap();
        let jac = solver::jacobian_fd(&|x| solver::constant_field(&model, x), &xbar).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!(
                    (delta0[(i, j)].re + jac[(i, j)]).abs() < 1e-6,
                    "entry ({i},{j}): {} vs {}",
                    delta0[(i, j)].re,
                    -jac[(i, j)]
                );
            }
        }
    }

    #[test]
    fn fishery_logistic_state_is_an_equilibrium() {
        let p = FisheryParams::default();
        let model = fishery(&p).unwrap();
        let f = solver::constant_field(&model, &DVector::from_vec(vec![1.0, 0.0])).unwrap();
        assert!(f.norm() < 1e-14);
    }

    #[test]
    fn fishery_interior_matches_algebra() {
        let p = FisheryParams::default();
        let model = fishery(&p).unwrap();
        let alg = fishery_interior(&p).unwrap();
        assert!((alg[0] - 0.25).abs() < 1e-14 && (alg[1] - 0.75).abs() < 1e-14);
        let xbar = solver::find_equilibrium(&model, &DVector::from_vec(vec![0.3, 0.6])).unwrap();
        assert!((&xbar - alg).norm() < 1e-10);
        let f = solver::constant_field(&model, &xbar).unwrap();
        assert!(f.norm() < 1e-10);
    }

    #[test]
    fn fishery_char_matrix_matches_hand_form() {
        let p = FisheryParams::default();
        let model = fishery(&p).unwrap();
        let xbar = fishery_interior(&p).unwrap();
        let spec = solver::linearize(&model, &xbar).unwrap();
        let (n, e) = (xbar[0], xbar[1]);
        let j0 = [
            [p.r * (1.0 - 2.0 * n) - p.q * e, -p.q * n],
            [
                p.p * (1.0 - p.eta_share) * p.q * e,
                p.p * (1.0 - p.eta_share) * p.q * n - p.c,
            ],
        ];
        let j1 = [
            [0.0, 0.0],
            [p.eta_share * p.p * p.q * e, p.eta_share * p.p * p.q * n],
        ];
        for lam in [Complex64::new(0.3, 0.7), Complex64::new(-0.2, 1.1)] {
            let d = spec.char_matrix(lam).unwrap();
            let gain = p.delta / (lam + p.delta);
            for i in 0..2 {
                for j in 0..2 {
                    let want = if i == j { lam } else { Complex64::new(0.0, 0.0) }
                        - j0[i][j]
                        - gain * j1[i][j];
                    assert!((d[(i, j)] - want).norm() < 1e-12, "lam {lam} entry ({i},{j})");
                }
            }
        }
    }

    #[test]
    fn analytic_and_structured_fd_linearizations_agree() {
        for model in [
            chemostat(&ChemostatParams::default()).unwrap(),
            fishery(&FisheryParams::default()).unwrap(),
        ] {
            let guess = DVector::from_vec(vec![0.4, 0.8]);
            let xbar = solver::find_equilibrium(&model, &guess).unwrap();
            let analytic = solver::linearize(&model, &xbar).unwrap();
            let fd = solver::linearize_fd(&model, &xbar).unwrap();
            for lam in [Complex64::new(0.0, 0.0), Complex64::new(0.3, 0.7)] {
                let a = analytic.char_matrix(lam).unwrap();
                let b = fd.char_matrix(lam).unwrap();
                assert!((a - b).norm() < 1e-5, "model {} at {lam}", model.name());
            }
        }
    }

    #[test]
    fn positive_data_stays_positive() {
        for (model, init) in [
            (chemostat(&ChemostatParams::default()).unwrap(), vec![0.8, 0.3]),
            (fishery(&FisheryParams::default()).unwrap(), vec![0.5, 0.4]),
        ] {
            let phi =
                HistoryFunction::constant(model.eta(), DVector::from_vec(init), 512).unwrap();
            let trace = solver::integrate(&model, &phi, 30.0, 0.01).unwrap();
            let report = solver::positivity_check(&trace, 1e-9);
            assert!(report.is_none(), "violation: {report:?}");
        }
    }

    #[test]
    fn wright_companions_linearize_to_stock_specs() {
        let zero = DVector::from_vec(vec![0.0]);
        let m1 = wright_erlang2(2.0, 1.0, 0.5).unwrap();
        let l1 = solver::linearize(&m1, &zero).unwrap();
        let want1 = functional::erlang2(2.0, 1.0, 0.5);
        let m2 = wright_discrete(1.0, 1.0, 0.3).unwrap();
        let l2 = solver::linearize(&m2, &zero).unwrap();
        let want2 = functional::discrete_scalar(1.0, 1.0, 0.3);
        for lam in [Complex64::new(0.2, 0.4), Complex64::new(-0.1, 1.3)] {
            assert!((l1.char_matrix(lam).unwrap() - want1.char_matrix(lam).unwrap()).norm() < 1e-12);
            assert!((l2.char_matrix(lam).unwrap() - want2.char_matrix(lam).unwrap()).norm() < 1e-12);
        }
    }

    #[test]
    fn wright_companions_relax_below_their_hopf_points() {
        // exercises the assembled fields, not just the linearizations
        for (model, horizon) in [
            (wright_discrete(0.8, 1.0, 0.3).unwrap(), 40.0),
            (wright_erlang2(1.0, 1.0, 0.5).unwrap(), 40.0),
        ] {
            let phi =
                HistoryFunction::constant(model.eta(), DVector::from_vec(vec![0.2]), 256).unwrap();
            let trace = solver::integrate(&model, &phi, horizon, 0.01).unwrap();
            let last = trace.states().last().unwrap()[0].abs();
            assert!(last < 0.02, "{} still at {last}", model.name());
        }
    }

    #[test]
    fn registry_knows_all_presets() {
        let empty = BTreeMap::new();
        for name in [
            "chemostat",
            "fishery",
            "wright-erlang2",
            "wright-discrete",
            "one-exponential",
            "erlang2",
            "discrete",
            "jordan",
            "free",
        ] {
            assert!(build_named(name, &empty).is_ok(), "preset {name}");
        }
        assert!(build_named("nope", &empty).is_err());
        let bad: BTreeMap<String, f64> = [("zzz".to_string(), 1.0)].into_iter().collect();
        assert!(build_named("chemostat", &bad).is_err());
    }
}
