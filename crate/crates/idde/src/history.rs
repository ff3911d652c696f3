//! Sampled histories on the weighted space BUC_eta: functions phi(theta) for
//! theta <= 0 with finite norm sup_{theta<=0} e^{eta theta} |phi(theta)|.
//!
//! A history is stored on a finite grid theta_0 < ... < theta_{M-1} = 0 with a
//! closed-form tail model below theta_0, so norms, kernel integrals and
//! evaluations stay well-defined on the whole half-line.

use nalgebra::{ComplexField, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scalar of a stored history: f64 for trajectories, Complex64 for spectral
/// objects (eigenfunctions, resolvent outputs).
pub trait HScalar: ComplexField<RealField = f64> + Copy {
    fn to_c64(self) -> Complex64;
}

impl HScalar for f64 {
    fn to_c64(self) -> Complex64 {
        Complex64::new(self, 0.0)
    }
}

impl HScalar for Complex64 {
    fn to_c64(self) -> Complex64 {
        self
    }
}

/// Continuation model below the lowest grid node theta_0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tail {
    /// phi(theta) = e^{-eta (theta - theta_0)} phi(theta_0): the weighted value
    /// e^{eta theta} phi(theta) is constant on the tail, so the tail never
    /// dominates the norm beyond its boundary node.
    WeightedContinuation,
    /// phi(theta) = 0 below the grid.
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InterpOrder {
    Linear,
    Cubic,
}

impl InterpOrder {
    pub fn from_order(order: usize) -> Result<Self> {
        match order {
            1 => Ok(InterpOrder::Linear),
            3 => Ok(InterpOrder::Cubic),
            o => Err(Error::InvalidHistory(format!(
                "interpolation order {o} unsupported (1 or 3)"
            ))),
        }
    }

    pub fn order(self) -> usize {
        match self {
            InterpOrder::Linear => 1,
            InterpOrder::Cubic => 3,
        }
    }
}

/// Relative truncation target for default grids: the weighted tail below the
/// window carries less than this fraction of the norm scale.
pub const TAIL_TRUNCATION: f64 = 1e-12;

/// Default node count for generated grids.
pub const DEFAULT_NODES: usize = 512;

/// Ratio between the widest (far) and narrowest (near zero) grid interval of
/// the default geometric grid.
const GRID_SPAN_RATIO: f64 = 1e3;

/// Window length so that e^{-eta T} < TAIL_TRUNCATION.
pub fn default_window(eta: f64) -> Result<f64> {
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(Error::Domain(format!(
            "window sizing needs eta > 0, got {eta}"
        )));
    }
    Ok((-TAIL_TRUNCATION.ln()) / eta * 1.0000001)
}

/// Geometric grid on [-window, 0]: interval widths grow by a fixed ratio away
/// from 0, last node exactly 0.
pub fn geometric_grid(window: f64, nodes: usize) -> Result<Vec<f64>> {
    if !(window > 0.0) || !window.is_finite() {
        return Err(Error::Domain(format!("grid window must be > 0, got {window}")));
    }
    if nodes < 4 {
        return Err(Error::InvalidHistory(format!(
            "geometric grid needs >= 4 nodes, got {nodes}"
        )));
    }
    let m = nodes;
    let r = GRID_SPAN_RATIO.powf(1.0 / (m - 2) as f64);
    // widths w_k = w0 r^k, k = 0..m-2 summing to window; k = 0 farthest out
    let w0 = window * (r - 1.0) / (r.powi((m - 1) as i32) - 1.0);
    let mut grid = Vec::with_capacity(m);
    grid.push(-window);
    let mut acc = -window;
    for k in (1..m - 1).rev() {
        acc += w0 * r.powi(k as i32);
        grid.push(acc);
    }
    grid.push(0.0);
    debug_assert!(grid.windows(2).all(|w| w[0] < w[1]));
    Ok(grid)
}

#[derive(Debug, Clone)]
pub struct HistoryFunction<S: HScalar = f64> {
    eta: f64,
    dim: usize,
    grid: Vec<f64>,
    values: Vec<DVector<S>>,
    tail: Tail,
    interp: InterpOrder,
}

impl<S: HScalar> HistoryFunction<S> {
    /// Build from explicit samples. The grid must be strictly increasing and
    /// end exactly at 0; eta >= 0 (0 only arises for gauge-transformed data).
    pub fn from_samples(
        eta: f64,
        grid: Vec<f64>,
        values: Vec<DVector<S>>,
        tail: Tail,
        interp: InterpOrder,
    ) -> Result<Self> {
        if !(eta >= 0.0) || !eta.is_finite() {
            return Err(Error::InvalidHistory(format!("eta must be finite >= 0, got {eta}")));
        }
        if grid.len() < 2 {
            return Err(Error::InvalidHistory("grid needs at least 2 nodes".into()));
        }
        if grid.len() != values.len() {
            return Err(Error::InvalidHistory(format!(
                "grid has {} nodes but {} values",
                grid.len(),
                values.len()
            )));
        }
        if *grid.last().unwrap() != 0.0 {
            return Err(Error::InvalidHistory(format!(
                "last grid node must be exactly 0, got {}",
                grid.last().unwrap()
            )));
        }
        if !grid.windows(2).all(|w| w[0] < w[1] && w[0].is_finite()) {
            return Err(Error::InvalidHistory("grid must be strictly increasing".into()));
        }
        let dim = values[0].len();
        if dim == 0 {
            return Err(Error::InvalidHistory("zero-dimensional values".into()));
        }
        for v in &values {
            if v.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: v.len() });
            }
            if v.iter().any(|x| !x.to_c64().is_finite()) {
                return Err(Error::InvalidHistory("non-finite sample value".into()));
            }
        }
        Ok(Self { eta, dim, grid, values, tail, interp })
    }

    /// Sample a closure on the default geometric grid for this eta.
    pub fn from_fn(
        eta: f64,
        nodes: usize,
        tail: Tail,
        interp: InterpOrder,
        f: impl Fn(f64) -> DVector<S>,
    ) -> Result<Self> {
        let grid = geometric_grid(default_window(eta)?, nodes)?;
        let values = grid.iter().map(|&t| f(t)).collect();
        Self::from_samples(eta, grid, values, tail, interp)
    }

    pub fn constant(eta: f64, value: DVector<S>, nodes: usize) -> Result<Self> {
        Self::from_fn(eta, nodes, Tail::WeightedContinuation, InterpOrder::Cubic, |_| {
            value.clone()
        })
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn values(&self) -> &[DVector<S>] {
        &self.values
    }

    pub fn value_at_node(&self, i: usize) -> &DVector<S> {
        &self.values[i]
    }

    pub fn tail(&self) -> Tail {
        self.tail
    }

    pub fn interp(&self) -> InterpOrder {
        self.interp
    }

    /// Value at theta = 0 (always a stored node).
    pub fn at_zero(&self) -> &DVector<S> {
        self.values.last().unwrap()
    }

    /// Evaluate at theta <= 0. Grid nodes return the stored value exactly;
    /// between nodes the configured interpolant applies; below the grid the
    /// tail model applies.
    pub fn evaluate(&self, theta: f64) -> Result<DVector<S>> {
        if !(theta <= 0.0) {
            return Err(Error::Domain(format!("history evaluated at theta = {theta} > 0")));
        }
        let first = self.grid[0];
        if theta < first {
            return Ok(match self.tail {
                Tail::WeightedContinuation => {
                    &self.values[0] * S::from_real((-self.eta * (theta - first)).exp())
                }
                Tail::Zero => DVector::zeros(self.dim),
            });
        }
        // partition_point: number of nodes strictly below theta
        let idx = self.grid.partition_point(|&g| g < theta);
        if idx < self.grid.len() && self.grid[idx] == theta {
            return Ok(self.values[idx].clone());
        }
        let i = idx - 1; // grid[i] < theta < grid[i+1]
        Ok(self.interpolate_on(i, theta))
    }

    fn interpolate_on(&self, i: usize, theta: f64) -> DVector<S> {
        match self.interp {
            InterpOrder::Linear => {
                let (a, b) = (self.grid[i], self.grid[i + 1]);
                let t = (theta - a) / (b - a);
                &self.values[i] * S::from_real(1.0 - t) + &self.values[i + 1] * S::from_real(t)
            }
            InterpOrder::Cubic => {
                let j0 = self.stencil_start(i);
                let mut acc = DVector::zeros(self.dim);
                for j in j0..j0 + 4 {
                    let mut w = 1.0;
                    for k in j0..j0 + 4 {
                        if k != j {
                            w *= (theta - self.grid[k]) / (self.grid[j] - self.grid[k]);
                        }
                    }
                    acc += &self.values[j] * S::from_real(w);
                }
                acc
            }
        }
    }

    /// First node of the 4-point stencil covering piece i (between nodes i and
    /// i+1), clipped at the grid ends. Falls back to linear when < 4 nodes.
    fn stencil_start(&self, i: usize) -> usize {
        let m = self.grid.len();
        debug_assert!(m >= 4 || self.interp == InterpOrder::Linear);
        i.saturating_sub(1).min(m - 4)
    }

    /// Monomial coefficients (in u = theta - grid[i], u in [0, w_i]) of the
    /// interpolant on piece i. Degree <= 3; unused entries are zero.
    pub fn piece_coeffs(&self, i: usize) -> [DVector<S>; 4] {
        let zero = || DVector::<S>::zeros(self.dim);
        match self.interp {
            InterpOrder::Linear => {
                let w = self.grid[i + 1] - self.grid[i];
                let slope = (&self.values[i + 1] - &self.values[i]) * S::from_real(1.0 / w);
                [self.values[i].clone(), slope, zero(), zero()]
            }
            InterpOrder::Cubic => {
                if self.grid.len() < 4 {
                    let w = self.grid[i + 1] - self.grid[i];
                    let slope = (&self.values[i + 1] - &self.values[i]) * S::from_real(1.0 / w);
                    return [self.values[i].clone(), slope, zero(), zero()];
                }
                let j0 = self.stencil_start(i);
                let mut coeffs = [zero(), zero(), zero(), zero()];
                for j in j0..j0 + 4 {
                    // Lagrange basis ell_j in u-coordinates: product of
                    // (u - d_k)/(d_j - d_k), d_k = grid[k] - grid[i]
                    let dj = self.grid[j] - self.grid[i];
                    let mut num = [0.0; 4]; // polynomial, starts as 1
                    num[0] = 1.0;
                    let mut deg = 0;
                    let mut denom = 1.0;
                    for k in j0..j0 + 4 {
                        if k == j {
                            continue;
                        }
                        let dk = self.grid[k] - self.grid[i];
                        denom *= dj - dk;
                        // num *= (u - dk)
                        deg += 1;
                        for q in (1..=deg).rev() {
                            num[q] = num[q - 1] - dk * num[q];
                        }
                        num[0] *= -dk;
                    }
                    for q in 0..4 {
                        coeffs[q] += &self.values[j] * S::from_real(num[q] / denom);
                    }
                }
                coeffs
            }
        }
    }

    /// Weighted norm sup_theta e^{eta theta} |phi(theta)| evaluated over grid
    /// nodes plus the tail closed form (the weighted tail is constant for the
    /// weighted continuation, zero for the zero tail, so nodes suffice).
    pub fn eta_norm(&self) -> f64 {
        self.grid
            .iter()
            .zip(&self.values)
            .map(|(&t, v)| (self.eta * t).exp() * v.norm())
            .fold(0.0, f64::max)
    }

    /// Bound factor for interpolation overshoot between nodes:
    /// e^{eta theta}|phi(theta)| <= eta_norm() * weighted_overshoot_bound().
    pub fn weighted_overshoot_bound(&self) -> f64 {
        // Lebesgue constant of the 4-point stencils (1.25 on uniform spacing,
        // grows mildly with local grading) times the weight swing across one
        // stencil span.
        let mut max_span: f64 = 0.0;
        let mut max_ratio: f64 = 1.0;
        for w in self.grid.windows(2) {
            max_span = max_span.max(w[1] - w[0]);
        }
        for w in self.grid.windows(3) {
            let (a, b) = (w[1] - w[0], w[2] - w[1]);
            max_ratio = max_ratio.max(a / b).max(b / a);
        }
        let lebesgue = 1.25 * max_ratio.powi(2);
        lebesgue * (self.eta * 3.0 * max_span).exp()
    }

    /// Rescale to the weight-free space: (gauge phi)(theta) = e^{eta theta} phi(theta).
    /// Output carries eta = 0 and the same grid/tail; the sup-norm of the
    /// output equals the eta-norm of the input.
    pub fn gauge_transform(&self) -> Result<HistoryFunction<S>> {
        if self.eta == 0.0 {
            return Err(Error::Domain("history already weight-free (eta = 0)".into()));
        }
        let values = self
            .grid
            .iter()
            .zip(&self.values)
            .map(|(&t, v)| v * S::from_real((self.eta * t).exp()))
            .collect();
        HistoryFunction::from_samples(0.0, self.grid.clone(), values, self.tail, self.interp)
    }

    /// Inverse gauge: take a weight-free history back to weight eta.
    pub fn gauge_inverse(&self, eta: f64) -> Result<HistoryFunction<S>> {
        if self.eta != 0.0 {
            return Err(Error::Domain(format!(
                "gauge_inverse expects a weight-free history, got eta = {}",
                self.eta
            )));
        }
        if !(eta > 0.0) {
            return Err(Error::Domain(format!("target eta must be > 0, got {eta}")));
        }
        let values = self
            .grid
            .iter()
            .zip(&self.values)
            .map(|(&t, v)| v * S::from_real((-eta * t).exp()))
            .collect();
        HistoryFunction::from_samples(eta, self.grid.clone(), values, self.tail, self.interp)
    }

    /// Map sample values pointwise, keeping grid and tail model.
    pub fn map_values<T: HScalar>(&self, f: impl Fn(&DVector<S>) -> DVector<T>) -> HistoryFunction<T> {
        let values: Vec<_> = self.values.iter().map(f).collect();
        let dim = values[0].len();
        HistoryFunction {
            eta: self.eta,
            dim,
            grid: self.grid.clone(),
            values,
            tail: self.tail,
            interp: self.interp,
        }
    }

    pub fn to_complex(&self) -> HistoryFunction<Complex64> {
        self.map_values(|v| v.map(|x| x.to_c64()))
    }
}

impl HistoryFunction<f64> {
    /// Largest imaginary part among values; real histories have 0.
    pub fn from_complex_real_part(h: &HistoryFunction<Complex64>) -> HistoryFunction<f64> {
        h.map_values(|v| v.map(|z| z.re))
    }
}

/// State of the evolution problem on R^n x BUC_eta: boundary value alpha
/// paired with a history. alpha = 0 characterizes states reachable by the flow.
#[derive(Debug, Clone)]
pub struct BoundaryAugmentedState<S: HScalar = f64> {
    pub alpha: DVector<S>,
    pub history: HistoryFunction<S>,
}

impl<S: HScalar> BoundaryAugmentedState<S> {
    pub fn new(alpha: DVector<S>, history: HistoryFunction<S>) -> Result<Self> {
        if alpha.len() != history.dim() {
            return Err(Error::DimensionMismatch { expected: history.dim(), got: alpha.len() });
        }
        Ok(Self { alpha, history })
    }

    pub fn flow_state(history: HistoryFunction<S>) -> Self {
        let alpha = DVector::zeros(history.dim());
        Self { alpha, history }
    }

    /// Product norm |alpha| + ||phi||_eta.
    pub fn norm(&self) -> f64 {
        self.alpha.norm() + self.history.eta_norm()
    }

    pub fn to_complex(&self) -> BoundaryAugmentedState<Complex64> {
        BoundaryAugmentedState {
            alpha: self.alpha.map(|x| x.to_c64()),
            history: self.history.to_complex(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_history(eta: f64, grid: Vec<f64>, vals: Vec<f64>, interp: InterpOrder) -> HistoryFunction {
        let values = vals.into_iter().map(|v| DVector::from_vec(vec![v])).collect();
        HistoryFunction::from_samples(eta, grid, values, Tail::WeightedContinuation, interp).unwrap()
    }

    #[test]
    fn construction_rejects_bad_grids() {
        let v = vec![DVector::from_vec(vec![1.0]); 2];
        assert!(HistoryFunction::from_samples(0.5, vec![-1.0, 0.1], v.clone(), Tail::Zero, InterpOrder::Linear).is_err());
        assert!(HistoryFunction::from_samples(0.5, vec![0.0, -1.0], v.clone(), Tail::Zero, InterpOrder::Linear).is_err());
        assert!(HistoryFunction::from_samples(-0.5, vec![-1.0, 0.0], v.clone(), Tail::Zero, InterpOrder::Linear).is_err());
        assert!(HistoryFunction::from_samples(0.5, vec![-1.0, -1.0, 0.0], v, Tail::Zero, InterpOrder::Linear).is_err());
    }

    #[test]
    fn nodes_evaluate_exactly() {
        let h = scalar_history(0.5, vec![-1.0, -0.5, 0.0], vec![1.0, 0.0, 1.0], InterpOrder::Linear);
        assert_eq!(h.evaluate(-0.5).unwrap()[0], 0.0);
        assert_eq!(h.evaluate(0.0).unwrap()[0], 1.0);
        assert_eq!(h.evaluate(-1.0).unwrap()[0], 1.0);
    }

    #[test]
    fn linear_interpolation_between_nodes() {
        let h = scalar_history(0.5, vec![-1.0, -0.5, 0.0], vec![1.0, 0.0, 1.0], InterpOrder::Linear);
        let v = h.evaluate(-0.35).unwrap()[0];
        assert!((v - 0.3).abs() < 1e-15, "got {v}");
    }

    #[test]
    fn cubic_interpolation_hits_sine_tightly() {
        // sin sampled at 1e-2 spacing; interior point error well under 1e-8
        let m = 201;
        let grid: Vec<f64> = (0..m).map(|i| -(m - 1 - i) as f64 * 0.01).collect();
        let values = grid.iter().map(|&t| DVector::from_vec(vec![t.sin()])).collect();
        let h = HistoryFunction::from_samples(0.5, grid, values, Tail::Zero, InterpOrder::Cubic).unwrap();
        let v = h.evaluate(-0.505).unwrap()[0];
        assert!((v - (-0.505f64).sin()).abs() < 1e-8, "err {}", (v - (-0.505f64).sin()).abs());
        let v2 = h.evaluate(-1.7321).unwrap()[0];
        assert!((v2 - (-1.7321f64).sin()).abs() < 1e-8);
    }

    #[test]
    fn tail_is_weighted_continuation() {
        let h = scalar_history(0.7, vec![-2.0, -1.0, 0.0], vec![3.0, 2.0, 1.0], InterpOrder::Linear);
        let v = h.evaluate(-5.0).unwrap()[0];
        let want = (-0.7f64 * (-5.0 - (-2.0))).exp() * 3.0;
        assert!((v - want).abs() < 1e-14);
        // weighted value on the tail stays constant
        let w1 = (0.7f64 * -5.0).exp() * v;
        let w2 = (0.7f64 * -2.0).exp() * 3.0;
        assert!((w1 - w2).abs() < 1e-14);
    }

    #[test]
    fn zero_tail_evaluates_to_zero() {
        let values = vec![DVector::from_vec(vec![3.0]), DVector::from_vec(vec![1.0])];
        let h = HistoryFunction::from_samples(0.5, vec![-1.0, 0.0], values, Tail::Zero, InterpOrder::Linear).unwrap();
        assert_eq!(h.evaluate(-2.0).unwrap()[0], 0.0);
    }

    #[test]
    fn future_evaluation_rejected() {
        let h = scalar_history(0.5, vec![-1.0, 0.0], vec![1.0, 1.0], InterpOrder::Linear);
        assert!(h.evaluate(0.25).is_err());
    }

    #[test]
    fn eta_norm_matches_dense_oracle() {
        // phi(theta) = 1/(1+theta^2) on [-20, 0], eta = 0.5
        let m = 200;
        let grid: Vec<f64> = (0..m).map(|i| -20.0 * (1.0 - i as f64 / (m - 1) as f64)).collect();
        let mut grid = grid;
        *grid.last_mut().unwrap() = 0.0;
        let values = grid
            .iter()
            .map(|&t| DVector::from_vec(vec![1.0 / (1.0 + t * t)]))
            .collect();
        let h = HistoryFunction::from_samples(0.5, grid, values, Tail::WeightedContinuation, InterpOrder::Cubic).unwrap();
        let norm = h.eta_norm();
        let mut dense: f64 = 0.0;
        for i in 0..100_000 {
            let t = -20.0 * (1.0 - i as f64 / 99_999.0);
            dense = dense.max((0.5 * t).exp() * h.evaluate(t).unwrap().norm());
        }
        assert!((norm - dense).abs() < 1e-6, "norm {norm} dense {dense}");
    }

    #[test]
    fn weighted_interpolation_respects_overshoot_bound() {
        let h = HistoryFunction::from_fn(0.5, 128, Tail::WeightedContinuation, InterpOrder::Cubic, |t| {
            DVector::from_vec(vec![(0.3 * t).exp() * (2.0 * t).cos()])
        })
        .unwrap();
        let bound = h.eta_norm() * h.weighted_overshoot_bound();
        for i in 0..5000 {
            let t = -54.0 * i as f64 / 4999.0;
            let w = (0.5 * t).exp() * h.evaluate(t).unwrap().norm();
            assert!(w <= bound + 1e-12, "t={t} w={w} bound={bound}");
        }
    }

    #[test]
    fn gauge_round_trip_and_isometry() {
        let h = HistoryFunction::from_fn(0.8, 256, Tail::WeightedContinuation, InterpOrder::Cubic, |t| {
            DVector::from_vec(vec![(0.2 * t).exp(), (1.0 + t * t).recip()])
        })
        .unwrap();
        let g = h.gauge_transform().unwrap();
        assert_eq!(g.eta(), 0.0);
        assert!((g.eta_norm() - h.eta_norm()).abs() < 1e-12);
        let back = g.gauge_inverse(0.8).unwrap();
        for (a, b) in h.values().iter().zip(back.values()) {
            assert!((a - b).norm() <= 1e-12 * a.norm().max(1.0));
        }
    }

    #[test]
    fn geometric_grid_shape() {
        let g = geometric_grid(55.0, 512).unwrap();
        assert_eq!(g.len(), 512);
        assert_eq!(*g.last().unwrap(), 0.0);
        assert_eq!(g[0], -55.0);
        // widths increase away from zero
        let w_near = g[511] - g[510];
        let w_far = g[1] - g[0];
        assert!(w_far > 100.0 * w_near);
    }

    #[test]
    fn product_norm_adds_components() {
        let h = scalar_history(0.5, vec![-1.0, 0.0], vec![0.0, 2.0], InterpOrder::Linear);
        let s = BoundaryAugmentedState::new(DVector::from_vec(vec![3.0]), h).unwrap();
        assert!((s.norm() - 5.0).abs() < 1e-14);
    }
}
