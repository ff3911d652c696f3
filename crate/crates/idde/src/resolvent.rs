//! Resolvents and semigroup actions on the state space R^n x BUC_eta.
//!
//! The generator A(0, phi) = (-phi'(0), phi') is non-densely defined; its
//! resolvent and the perturbed resolvent (lambda - (A + L))^{-1} have explicit
//! convolution representations which are evaluated here exactly on the stored
//! interpolant (piecewise polynomial times exponential, closed form per piece).

use nalgebra::DVector;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::functional::LinearFunctionalSpec;
use crate::history::{BoundaryAugmentedState, HScalar, HistoryFunction, Tail};
use crate::polyexp::{binomial, int_uk_exp};
use crate::solver::{SimulationTrace, Termination};

/// Determinant floor (relative to ||Delta||_F^n) below which the perturbed
/// resolvent refuses to solve.
pub const NEAR_SINGULAR_REL: f64 = 1e-12;

/// chi_i(theta) = int_theta^0 (theta - s)^i e^{lambda (theta - s)} phi(s) ds
/// for i = 0..=imax, sampled exactly at phi's grid nodes (cumulative from 0
/// backwards, closed form per piece).
///
/// These convolutions are the building blocks of both resolvent formulas and
/// of the eigenprojector expansions.
pub fn inner_convolutions<S: HScalar>(
    phi: &HistoryFunction<S>,
    lambda: S,
    imax: usize,
) -> Vec<HistoryFunction<S>> {
    let grid = phi.grid();
    let n = grid.len();
    let dim = phi.dim();
    // chi[i][node]
    let mut chi = vec![vec![DVector::<S>::zeros(dim); n]; imax + 1];
    for j in (0..n - 1).rev() {
        let (ta, tb) = (grid[j], grid[j + 1]);
        let w = tb - ta;
        let coeffs = phi.piece_coeffs(j);
        let ints = int_uk_exp(-lambda, w, imax + 3);
        let shift = (lambda * S::from_real(ta - tb)).exp();
        for i in 0..=imax {
            // local part: (-1)^i sum_r c_r int_0^w u^{i+r} e^{-lambda u} du
            let mut local = DVector::<S>::zeros(dim);
            for (r, c) in coeffs.iter().enumerate() {
                local += c * ints[i + r];
            }
            if i % 2 == 1 {
                local = -local;
            }
            // transported part: e^{lambda(ta-tb)} sum_r C(i,r) (ta-tb)^{i-r} chi_r(tb)
            let mut carried = DVector::<S>::zeros(dim);
            for (r, row) in chi.iter().enumerate().take(i + 1) {
                let f = binomial(i, r) * (ta - tb).powi((i - r) as i32);
                carried += &row[j + 1] * S::from_real(f);
            }
            chi[i][j] = local + carried * shift;
        }
    }
    chi.into_iter()
        .map(|values| {
            HistoryFunction::from_samples(phi.eta(), grid.to_vec(), values, Tail::WeightedContinuation, phi.interp())
                .expect("convolution grid mirrors a valid history")
        })
        .collect()
}

/// (lambda I - A)^{-1}(alpha, phi) for lambda > 0:
/// psi(theta) = e^{lambda theta} (alpha + phi(0)) / lambda
///              + int_theta^0 e^{lambda(theta - l)} phi(l) dl.
pub fn resolvent_a(lambda: f64, state: &BoundaryAugmentedState<f64>) -> Result<HistoryFunction<f64>> {
    if !(lambda > 0.0) {
        return Err(Error::Domain(format!(
            "resolvent of the generator requires lambda > 0, got {lambda}"
        )));
    }
    let phi = &state.history;
    let chi = inner_convolutions(phi, lambda, 0).remove(0);
    let c = (&state.alpha + phi.at_zero()) / lambda;
    let values = phi
        .grid()
        .iter()
        .zip(chi.values())
        .map(|(&t, x)| x + &c * (lambda * t).exp())
        .collect();
    HistoryFunction::from_samples(phi.eta(), phi.grid().to_vec(), values, Tail::WeightedContinuation, phi.interp())
}

/// (lambda I - (A + L))^{-1}(alpha, phi):
/// psi = chi_0 + e^{lambda theta} Delta(lambda)^{-1} [alpha + phi(0) + L(chi_0)].
pub fn resolvent_al(
    spec: &LinearFunctionalSpec,
    lambda: Complex64,
    state: &BoundaryAugmentedState<Complex64>,
) -> Result<HistoryFunction<Complex64>> {
    let phi = &state.history;
    let chi = inner_convolutions(phi, lambda, 0).remove(0);
    let l_chi = spec.apply(&chi)?;
    let c = &state.alpha + phi.at_zero() + l_chi;
    let delta = spec.char_matrix(lambda)?;
    let det = delta.determinant();
    let scale = delta.norm().powi(spec.dim() as i32).max(f64::MIN_POSITIVE);
    if det.norm() <= NEAR_SINGULAR_REL * scale {
        return Err(Error::NearSingular { lambda: (lambda.re, lambda.im), det_abs: det.norm() });
    }
    let x = delta
        .lu()
        .solve(&c)
        .ok_or(Error::NearSingular { lambda: (lambda.re, lambda.im), det_abs: det.norm() })?;
    let values = phi
        .grid()
        .iter()
        .zip(chi.values())
        .map(|(&t, v)| v + &x * (lambda * t).exp())
        .collect();
    HistoryFunction::from_samples(phi.eta(), phi.grid().to_vec(), values, Tail::WeightedContinuation, phi.interp())
}

/// Shifted sample set of theta -> phi(t + theta): the original nodes moved
/// down by t (values exact) plus the original nodes above -t for the frozen /
/// vanished region. Returns (grid, exact shifted values, split index of the
/// first node with t + theta > 0).
fn shifted_graph<S: HScalar>(phi: &HistoryFunction<S>, t: f64) -> (Vec<f64>, Vec<DVector<S>>, usize) {
    let grid = phi.grid();
    let mut out_grid = Vec::with_capacity(2 * grid.len());
    let mut out_vals = Vec::with_capacity(2 * grid.len());
    for (&g, v) in grid.iter().zip(phi.values()) {
        out_grid.push(g - t);
        out_vals.push(v.clone());
    }
    let split = out_grid.len();
    for (&g, _) in grid.iter().zip(phi.values()) {
        if g > -t && g < 0.0 {
            out_grid.push(g);
            out_vals.push(phi.at_zero().clone());
        }
    }
    if t > 0.0 {
        out_grid.push(0.0);
        out_vals.push(phi.at_zero().clone());
    }
    (out_grid, out_vals, split)
}

/// Strongly continuous part of the semigroup on {0} x BUC_eta:
/// (T(t) phi)(theta) = phi(0) for t + theta >= 0, phi(t + theta) otherwise.
pub fn apply_t_a0<S: HScalar>(t: f64, phi: &HistoryFunction<S>) -> Result<HistoryFunction<S>> {
    if !(t >= 0.0) {
        return Err(Error::Domain(format!("semigroup time must be >= 0, got {t}")));
    }
    if t == 0.0 {
        return Ok(phi.clone());
    }
    let (grid, values, _) = shifted_graph(phi, t);
    HistoryFunction::from_samples(phi.eta(), grid, values, phi.tail(), phi.interp())
}

/// Split T(t) phi = phi(0) + S(t) phi into the rank-one part and a part that
/// decays like 2 e^{-eta t} ||phi||_eta. Returns (phi(0), S(t) phi).
pub fn decay_decomposition<S: HScalar>(
    t: f64,
    phi: &HistoryFunction<S>,
) -> Result<(DVector<S>, HistoryFunction<S>)> {
    if !(t >= 0.0) {
        return Err(Error::Domain(format!("semigroup time must be >= 0, got {t}")));
    }
    let p0 = phi.at_zero().clone();
    if t == 0.0 {
        let s = phi.map_values(|v| v - &p0);
        return Ok((p0, s));
    }
    let (grid, mut values, split) = shifted_graph(phi, t);
    for (i, v) in values.iter_mut().enumerate() {
        if i < split {
            *v -= &p0;
        } else {
            *v = DVector::zeros(phi.dim());
        }
    }
    // last shifted node (theta = -t) is the frozen boundary: phi(0) - phi(0) = 0
    let s = HistoryFunction::from_samples(phi.eta(), grid, values, Tail::Zero, phi.interp())?;
    Ok((p0, s))
}

/// Integrated semigroup applied to (x, phi):
/// (t + theta)^+ (x + phi(0)) + int_theta^{min(t+theta, 0)} phi(s) ds.
pub fn apply_s_a<S: HScalar>(
    t: f64,
    state: &BoundaryAugmentedState<S>,
) -> Result<HistoryFunction<S>> {
    if !(t >= 0.0) {
        return Err(Error::Domain(format!("integrated-semigroup time must be >= 0, got {t}")));
    }
    let phi = &state.history;
    let grid = phi.grid();
    // cumulative integral Phi(theta) = int_theta^0 phi at nodes, exact per piece
    let cum = inner_convolutions(phi, S::zero(), 0).remove(0);
    let cum_at = |x: f64| -> DVector<S> {
        // x <= 0, above the lowest node
        let idx = grid.partition_point(|&g| g < x);
        if idx < grid.len() && grid[idx] == x {
            return cum.value_at_node(idx).clone();
        }
        let i = idx - 1;
        let coeffs = phi.piece_coeffs(i);
        let u = x - grid[i];
        let w = grid[i + 1] - grid[i];
        // Phi(x) = Phi(grid[i+1]) + int_x^{grid[i+1]} phi
        let mut local = DVector::<S>::zeros(phi.dim());
        for (r, c) in coeffs.iter().enumerate() {
            let p = (w.powi(r as i32 + 1) - u.powi(r as i32 + 1)) / (r as f64 + 1.0);
            local += c * S::from_real(p);
        }
        cum.value_at_node(i + 1) + local
    };
    let boundary = &state.alpha + phi.at_zero();
    let lo = grid[0];
    // int_theta^0 phi, splitting off the analytic tail when theta is below
    // the stored window
    let int_to_zero = |theta: f64| -> DVector<S> {
        if theta >= lo {
            cum_at(theta)
        } else {
            tail_integral(phi, theta, lo) + cum_at(lo)
        }
    };
    let (out_grid, _, _) = shifted_graph(phi, t);
    let mut values = Vec::with_capacity(out_grid.len());
    for &theta in &out_grid {
        let shifted = t + theta;
        let v = if shifted >= 0.0 {
            &boundary * S::from_real(shifted) + int_to_zero(theta.min(0.0))
        } else {
            int_to_zero(theta) - int_to_zero(shifted)
        };
        values.push(v);
    }
    HistoryFunction::from_samples(phi.eta(), out_grid, values, Tail::Zero, phi.interp())
}

/// int_a^b phi(s) ds where the whole segment lies below phi's grid window.
fn tail_integral<S: HScalar>(phi: &HistoryFunction<S>, a: f64, b: f64) -> DVector<S> {
    debug_assert!(a <= b && b <= phi.grid()[0]);
    match phi.tail() {
        Tail::Zero => DVector::zeros(phi.dim()),
        Tail::WeightedContinuation => {
            let eta = phi.eta();
            let t0 = phi.grid()[0];
            if eta == 0.0 {
                return phi.value_at_node(0) * S::from_real(b - a);
            }
            // int e^{-eta (s - t0)} ds
            let f = ((-eta * (b - t0)).exp() - (-eta * (a - t0)).exp()) / (-eta);
            phi.value_at_node(0) * S::from_real(f)
        }
    }
}

/// Solution of the forced boundary problem: x(t) = phi(0) + int_0^t h(s) ds
/// for t in [0, horizon], stepped with per-interval Simpson quadrature.
pub fn integrate_forced(
    phi: &HistoryFunction<f64>,
    h: impl Fn(f64) -> DVector<f64>,
    horizon: f64,
    step: f64,
) -> Result<SimulationTrace> {
    if !(horizon > 0.0) || !(step > 0.0) || step > horizon {
        return Err(Error::Domain(format!(
            "forced integration needs 0 < step <= horizon, got step {step}, horizon {horizon}"
        )));
    }
    let n_steps = (horizon / step).round().max(1.0) as usize;
    let h_eff = horizon / n_steps as f64;
    let dim = phi.dim();
    let mut times = Vec::with_capacity(n_steps + 1);
    let mut states = Vec::with_capacity(n_steps + 1);
    let mut dense = Vec::with_capacity(n_steps);
    let mut x = phi.at_zero().clone();
    let mut slope = h(0.0);
    if slope.len() != dim {
        return Err(Error::DimensionMismatch { expected: dim, got: slope.len() });
    }
    times.push(0.0);
    states.push(x.clone());
    for i in 0..n_steps {
        let t0 = i as f64 * h_eff;
        let t1 = t0 + h_eff;
        let mid = h(t0 + 0.5 * h_eff);
        let next_slope = h(t1);
        let inc = (&slope + &mid * 4.0 + &next_slope) * (h_eff / 6.0);
        let x1 = &x + inc;
        // Hermite cubic on [t0, t1] from endpoint values and slopes
        let d = (&x1 - &x) / h_eff;
        let a2 = (&d * 3.0 - &slope * 2.0 - &next_slope) / h_eff;
        let a3 = (&slope + &next_slope - &d * 2.0) / (h_eff * h_eff);
        dense.push([x.clone(), slope.clone(), a2, a3]);
        x = x1;
        slope = next_slope;
        times.push(t1);
        states.push(x.clone());
    }
    SimulationTrace::from_parts(phi.clone(), times, states, dense, h_eff, Termination::Completed)
}
