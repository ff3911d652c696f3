//! Bounded linear functionals L: BUC_eta -> R^n of the representable class
//!
//! ```text
//! L(phi) = sum_k A_k phi(-tau_k) + sum_j int_{-inf}^0 C_j (-theta)^{m_j} e^{delta_j theta} phi(theta) dtheta
//! ```
//!
//! with delta_j > eta so every kernel integral converges on BUC_eta. The
//! characteristic matrix Delta(lambda) = lambda I - L(e^{lambda .} I) and its
//! lambda-derivatives have closed forms on this class.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::history::{HScalar, HistoryFunction, Tail};
use crate::polyexp::{binomial, factorial, int_uk_exp, tail_moments};

/// Guard distance from kernel poles -delta_j for characteristic-matrix
/// evaluation.
pub const POLE_GUARD: f64 = 1e-8;

/// Highest supported kernel power and derivative order.
pub const MAX_POWER: u32 = 8;
pub const MAX_DERIVATIVE: usize = 6;

#[derive(Debug, Clone)]
pub struct DiscreteTerm {
    pub matrix: DMatrix<f64>,
    pub tau: f64,
}

#[derive(Debug, Clone)]
pub struct KernelTerm {
    pub matrix: DMatrix<f64>,
    pub delta: f64,
    pub power: u32,
}

#[derive(Debug, Clone)]
pub struct LinearFunctionalSpec {
    dim: usize,
    eta: f64,
    discrete: Vec<DiscreteTerm>,
    kernels: Vec<KernelTerm>,
}

impl LinearFunctionalSpec {
    pub fn new(
        dim: usize,
        eta: f64,
        discrete: Vec<DiscreteTerm>,
        kernels: Vec<KernelTerm>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidSpec("dim must be >= 1".into()));
        }
        if !(eta > 0.0) || !eta.is_finite() {
            return Err(Error::InvalidSpec(format!("eta must be finite > 0, got {eta}")));
        }
        for t in &discrete {
            if t.matrix.nrows() != dim || t.matrix.ncols() != dim {
                return Err(Error::InvalidSpec(format!(
                    "discrete coefficient must be {dim}x{dim}, got {}x{}",
                    t.matrix.nrows(),
                    t.matrix.ncols()
                )));
            }
            if !(t.tau >= 0.0) || !t.tau.is_finite() {
                return Err(Error::InvalidSpec(format!("lag must be finite >= 0, got {}", t.tau)));
            }
        }
        for k in &kernels {
            if k.matrix.nrows() != dim || k.matrix.ncols() != dim {
                return Err(Error::InvalidSpec(format!(
                    "kernel coefficient must be {dim}x{dim}, got {}x{}",
                    k.matrix.nrows(),
                    k.matrix.ncols()
                )));
            }
            if !(k.delta > eta) {
                return Err(Error::InvalidSpec(format!(
                    "kernel rate delta = {} must exceed eta = {eta} for convergence on the weighted space",
                    k.delta
                )));
            }
            if k.power > MAX_POWER {
                return Err(Error::InvalidSpec(format!(
                    "kernel power {} exceeds supported maximum {MAX_POWER}",
                    k.power
                )));
            }
        }
        Ok(Self { dim, eta, discrete, kernels })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn discrete_terms(&self) -> &[DiscreteTerm] {
        &self.discrete
    }

    pub fn kernel_terms(&self) -> &[KernelTerm] {
        &self.kernels
    }

    /// Smallest kernel rate; scan regions must stay right of -min_delta.
    pub fn min_delta(&self) -> Option<f64> {
        self.kernels.iter().map(|k| k.delta).fold(None, |acc, d| {
            Some(acc.map_or(d, |a: f64| a.min(d)))
        })
    }

    /// L(phi). Requires matching dimension and weight.
    pub fn apply<S: HScalar>(&self, phi: &HistoryFunction<S>) -> Result<DVector<S>> {
        self.check_history(phi)?;
        let mut out = DVector::<S>::zeros(self.dim);
        for t in &self.discrete {
            let v = phi.evaluate(-t.tau)?;
            accumulate_real_mat_mul(&mut out, &t.matrix, &v);
        }
        for k in &self.kernels {
            let moments = kernel_moments(phi, k.delta, k.power as usize)?;
            accumulate_real_mat_mul(&mut out, &k.matrix, &moments[k.power as usize]);
        }
        Ok(out)
    }

    /// Delta(lambda) = lambda I - sum_k A_k e^{-lambda tau_k}
    ///                 - sum_j C_j m_j! / (lambda + delta_j)^{m_j + 1}.
    pub fn char_matrix(&self, lambda: Complex64) -> Result<DMatrix<Complex64>> {
        self.char_matrix_derivative(lambda, 0)
    }

    /// i-th lambda-derivative of Delta, i <= MAX_DERIVATIVE:
    /// [i == 1] I - sum_k A_k (-tau_k)^i e^{-lambda tau_k}
    ///          - sum_j C_j (-1)^i (m_j + i)! / (lambda + delta_j)^{m_j + 1 + i}.
    pub fn char_matrix_derivative(&self, lambda: Complex64, order: usize) -> Result<DMatrix<Complex64>> {
        if order > MAX_DERIVATIVE {
            return Err(Error::Domain(format!(
                "characteristic-matrix derivative order {order} exceeds {MAX_DERIVATIVE}"
            )));
        }
        self.guard_poles(lambda)?;
        let n = self.dim;
        let mut m = DMatrix::<Complex64>::zeros(n, n);
        if order == 0 {
            m.fill_diagonal(lambda);
        } else if order == 1 {
            m.fill_diagonal(Complex64::new(1.0, 0.0));
        }
        for t in &self.discrete {
            let w = (-lambda * t.tau).exp() * (-t.tau).powi(order as i32);
            for i in 0..n {
                for j in 0..n {
                    m[(i, j)] -= w * t.matrix[(i, j)];
                }
            }
        }
        for k in &self.kernels {
            let p = k.power as usize;
            let sign = if order.is_multiple_of(2) { 1.0 } else { -1.0 };
            let num = sign * factorial(p + order);
            let denom = (lambda + Complex64::new(k.delta, 0.0)).powi((p + 1 + order) as i32);
            let w = num / denom;
            for i in 0..n {
                for j in 0..n {
                    m[(i, j)] -= w * k.matrix[(i, j)];
                }
            }
        }
        Ok(m)
    }

    pub fn guard_poles(&self, lambda: Complex64) -> Result<()> {
        for k in &self.kernels {
            let dist = (lambda + Complex64::new(k.delta, 0.0)).norm();
            if dist < POLE_GUARD {
                return Err(Error::KernelPole { delta: k.delta, dist });
            }
        }
        Ok(())
    }

    /// Radius R such that every zero of det Delta with Re lambda >= re_min has
    /// |lambda| <= R. From |lambda| <= ||L(e^{lambda .} I)|| at a root and the
    /// termwise bounds e^{-Re lambda tau} and m!/(delta + Re lambda)^{m+1};
    /// both decrease in Re lambda, so the floor value dominates. Requires
    /// re_min > -min_delta.
    pub fn root_radius_bound(&self, re_min: f64) -> Result<f64> {
        let mut b = 0.0;
        for t in &self.discrete {
            b += t.matrix.norm() * (-re_min * t.tau).exp();
        }
        for k in &self.kernels {
            let shifted = k.delta + re_min;
            if !(shifted > 0.0) {
                return Err(Error::Domain(format!(
                    "root radius bound needs re_min > {}, got {re_min}",
                    -k.delta
                )));
            }
            b += k.matrix.norm() * factorial(k.power as usize) / shifted.powi(k.power as i32 + 1);
        }
        Ok(b)
    }

    fn check_history<S: HScalar>(&self, phi: &HistoryFunction<S>) -> Result<()> {
        if phi.dim() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: phi.dim() });
        }
        if phi.eta() != self.eta {
            return Err(Error::EtaMismatch { left: self.eta, right: phi.eta() });
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let j = SpecJson::from(self);
        serde_json::to_string_pretty(&j).expect("spec serialization")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let j: SpecJson = serde_json::from_str(s)?;
        j.try_into()
    }
}

/// out += M v with M real and v over S.
fn accumulate_real_mat_mul<S: HScalar>(out: &mut DVector<S>, m: &DMatrix<f64>, v: &DVector<S>) {
    for i in 0..m.nrows() {
        let mut acc = S::zero();
        for j in 0..m.ncols() {
            acc += v[j] * S::from_real(m[(i, j)]);
        }
        out[i] += acc;
    }
}

pub fn mat_to_complex(m: &DMatrix<f64>) -> DMatrix<Complex64> {
    m.map(|x| Complex64::new(x, 0.0))
}

/// Moments M_p = int_{-inf}^0 (-theta)^p e^{delta theta} phi(theta) dtheta for
/// p = 0..=pmax, integrating the stored interpolant exactly piece by piece and
/// the tail model in closed form. Requires delta > phi.eta when the weighted
/// tail is present.
pub fn kernel_moments<S: HScalar>(
    phi: &HistoryFunction<S>,
    delta: f64,
    pmax: usize,
) -> Result<Vec<DVector<S>>> {
    if !(delta > 0.0) {
        return Err(Error::Domain(format!("kernel rate must be > 0, got {delta}")));
    }
    let dim = phi.dim();
    let grid = phi.grid();
    let mut out = vec![DVector::<S>::zeros(dim); pmax + 1];
    for i in 0..grid.len() - 1 {
        let theta_i = grid[i];
        let w = grid[i + 1] - theta_i;
        let coeffs = phi.piece_coeffs(i);
        let ints = int_uk_exp(delta, w, pmax + 3);
        let scale = (delta * theta_i).exp();
        for (p, slot) in out.iter_mut().enumerate() {
            // (-theta)^p = sum_q C(p,q) (-theta_i)^{p-q} (-1)^q u^q
            let mut acc = DVector::<S>::zeros(dim);
            for q in 0..=p {
                let base = binomial(p, q) * (-theta_i).powi((p - q) as i32) * if q % 2 == 0 { 1.0 } else { -1.0 };
                if base == 0.0 {
                    continue;
                }
                let mut inner = DVector::<S>::zeros(dim);
                for (r, c) in coeffs.iter().enumerate() {
                    inner += c * S::from_real(ints[q + r]);
                }
                acc += inner * S::from_real(base);
            }
            *slot += acc * S::from_real(scale);
        }
    }
    match phi.tail() {
        Tail::Zero => {}
        Tail::WeightedContinuation => {
            let theta0 = grid[0];
            let beta = delta - phi.eta();
            if !(beta > 0.0) {
                return Err(Error::Domain(format!(
                    "kernel rate {delta} must exceed history weight {} for the tail integral",
                    phi.eta()
                )));
            }
            let tm = tail_moments(beta, -theta0, pmax);
            let v0 = phi.value_at_node(0);
            let scale = (phi.eta() * theta0).exp();
            for p in 0..=pmax {
                out[p] += v0 * S::from_real(scale * tm[p]);
            }
        }
    }
    Ok(out)
}

// -- JSON schema ------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecJson {
    dim: usize,
    #[serde(default)]
    discrete: Vec<DiscreteJson>,
    #[serde(default)]
    kernels: Vec<KernelJson>,
    eta: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DiscreteJson {
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    tau: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KernelJson {
    #[serde(rename = "C")]
    c: Vec<Vec<f64>>,
    delta: f64,
    power: u32,
}

fn rows_to_matrix(dim: usize, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
        return Err(Error::InvalidSpec(format!("coefficient matrix must be {dim}x{dim}")));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(dim, dim, &flat))
}

fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

impl From<&LinearFunctionalSpec> for SpecJson {
    fn from(s: &LinearFunctionalSpec) -> Self {
        SpecJson {
            dim: s.dim,
            discrete: s
                .discrete
                .iter()
                .map(|t| DiscreteJson { a: matrix_to_rows(&t.matrix), tau: t.tau })
                .collect(),
            kernels: s
                .kernels
                .iter()
                .map(|k| KernelJson { c: matrix_to_rows(&k.matrix), delta: k.delta, power: k.power })
                .collect(),
            eta: s.eta,
        }
    }
}

impl TryFrom<SpecJson> for LinearFunctionalSpec {
    type Error = Error;

    fn try_from(j: SpecJson) -> Result<Self> {
        let discrete = j
            .discrete
            .iter()
            .map(|t| Ok(DiscreteTerm { matrix: rows_to_matrix(j.dim, &t.a)?, tau: t.tau }))
            .collect::<Result<Vec<_>>>()?;
        let kernels = j
            .kernels
            .iter()
            .map(|k| Ok(KernelTerm { matrix: rows_to_matrix(j.dim, &k.c)?, delta: k.delta, power: k.power }))
            .collect::<Result<Vec<_>>>()?;
        LinearFunctionalSpec::new(j.dim, j.eta, discrete, kernels)
    }
}

// -- Stock constructions used across tests and models -----------------------

/// Scalar functional L(phi) = -a * int delta e^{delta theta} phi dtheta
/// (unit-mass one-exponential kernel). Characteristic function
/// lambda + a delta / (lambda + delta).
pub fn one_exponential(a: f64, delta: f64, eta: f64) -> LinearFunctionalSpec {
    LinearFunctionalSpec::new(
        1,
        eta,
        vec![],
        vec![KernelTerm { matrix: DMatrix::from_element(1, 1, -a * delta), delta, power: 0 }],
    )
    .expect("one-exponential spec")
}

/// Scalar functional with the unit-mass Erlang-2 kernel delta^2 (-theta) e^{delta theta}:
/// characteristic function lambda + a delta^2 / (lambda + delta)^2.
pub fn erlang2(a: f64, delta: f64, eta: f64) -> LinearFunctionalSpec {
    LinearFunctionalSpec::new(
        1,
        eta,
        vec![],
        vec![KernelTerm { matrix: DMatrix::from_element(1, 1, -a * delta * delta), delta, power: 1 }],
    )
    .expect("erlang2 spec")
}

/// Scalar functional L(phi) = -a phi(-tau): characteristic function
/// lambda + a e^{-lambda tau}.
pub fn discrete_scalar(a: f64, tau: f64, eta: f64) -> LinearFunctionalSpec {
    LinearFunctionalSpec::new(
        1,
        eta,
        vec![DiscreteTerm { matrix: DMatrix::from_element(1, 1, -a), tau }],
        vec![],
    )
    .expect("discrete scalar spec")
}

/// Nilpotent 2x2 block at lag zero: Delta(lambda)^{-1} has a second-order pole
/// at 0 with a one-dimensional null space.
pub fn jordan_block(eta: f64) -> LinearFunctionalSpec {
    LinearFunctionalSpec::new(
        2,
        eta,
        vec![DiscreteTerm {
            matrix: DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
            tau: 0.0,
        }],
        vec![],
    )
    .expect("jordan block spec")
}
