//! Time stepping for delay models with discrete taps and gamma-type memory
//! channels.
//!
//! The memory integrals int_{-inf}^t (t-s)^m e^{-delta (t-s)} g(x(s)) ds are
//! never re-quadratured: the part over the initial history collapses to a
//! finite moment combination, and the computed part is carried as running
//! state advanced once per step in closed form against the dense output. Each
//! right-hand-side evaluation is then O(1) in the elapsed time.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::functional::{
    kernel_moments, DiscreteTerm, KernelTerm, LinearFunctionalSpec, MAX_POWER,
};
use crate::history::HistoryFunction;
use crate::polyexp::{binomial, factorial, int_uk_exp};

/// State norm beyond which integration stops and reports blow-up.
pub const BLOWUP_NORM: f64 = 1e12;

pub type Observable = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type AssembleFn = Arc<dyn Fn(&AssembleCtx) -> DVector<f64> + Send + Sync>;
pub type LinearizeFn =
    Arc<dyn Fn(&BTreeMap<String, f64>, &DVector<f64>) -> Result<LinearFunctionalSpec> + Send + Sync>;

/// One distributed-memory channel: carries
/// I(t) = int_{-inf}^t (t-s)^power e^{-delta (t-s)} g(x(s)) ds
/// for an observable g: R^dim -> R^obs_dim.
#[derive(Clone)]
pub struct KernelChannel {
    pub delta: f64,
    pub power: u32,
    pub obs_dim: usize,
    pub observable: Observable,
}

impl KernelChannel {
    pub fn new(delta: f64, power: u32, obs_dim: usize, observable: Observable) -> Self {
        KernelChannel { delta, power, obs_dim, observable }
    }
}

/// Everything the right-hand side may look at during one evaluation.
pub struct AssembleCtx<'a> {
    pub t: f64,
    /// current state x(t)
    pub x: &'a DVector<f64>,
    /// x(t - tau_k), ordered as in the model's tap list
    pub taps: &'a [DVector<f64>],
    /// channel integrals I_j(t), ordered as in the model's channel list
    pub kernels: &'a [DVector<f64>],
    pub params: &'a BTreeMap<String, f64>,
}

/// A delay model: x'(t) = assemble(t, x(t), taps, kernel integrals).
#[derive(Clone)]
pub struct ModelSpec {
    name: String,
    dim: usize,
    eta: f64,
    taps: Vec<f64>,
    channels: Vec<KernelChannel>,
    assemble: AssembleFn,
    params: BTreeMap<String, f64>,
    linearization: Option<LinearizeFn>,
}

impl fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("eta", &self.eta)
            .field("taps", &self.taps)
            .field("channels", &self.channels.len())
            .field("params", &self.params)
            .finish()
    }
}

impl ModelSpec {
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        eta: f64,
        taps: Vec<f64>,
        channels: Vec<KernelChannel>,
        assemble: AssembleFn,
        params: BTreeMap<String, f64>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidSpec("model dimension must be at least 1".into()));
        }
        if !(eta > 0.0) || !eta.is_finite() {
            return Err(Error::InvalidSpec(format!("model weight rate must be positive, got {eta}")));
        }
        for &tau in &taps {
            if !(tau >= 0.0) || !tau.is_finite() {
                return Err(Error::InvalidSpec(format!("tap delay must be finite and >= 0, got {tau}")));
            }
        }
        for ch in &channels {
            if !(ch.delta > eta) || !ch.delta.is_finite() {
                return Err(Error::InvalidSpec(format!(
                    "channel decay rate must exceed the weight rate {eta}, got {}",
                    ch.delta
                )));
            }
            if ch.power > MAX_POWER {
                return Err(Error::InvalidSpec(format!(
                    "channel power {} exceeds the supported maximum {MAX_POWER}",
                    ch.power
                )));
            }
            if ch.obs_dim == 0 {
                return Err(Error::InvalidSpec("channel observable dimension must be at least 1".into()));
            }
        }
        Ok(ModelSpec {
            name: name.into(),
            dim,
            eta,
            taps,
            channels,
            assemble,
            params,
            linearization: None,
        })
    }

    pub fn with_linearization(mut self, l: LinearizeFn) -> Self {
        self.linearization = Some(l);
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn channels(&self) -> &[KernelChannel] {
        &self.channels
    }

    pub fn params(&self) -> &BTreeMap<String, f64> {
        &self.params
    }

    pub fn param(&self, name: &str) -> Result<f64> {
        self.params
            .get(name)
            .copied()
            .ok_or_else(|| Error::InvalidSpec(format!("model '{}' has no parameter '{name}'", self.name)))
    }

    pub fn set_param(&mut self, name: &str, value: f64) -> Result<()> {
        match self.params.get_mut(name) {
            Some(slot) => {
                *slot = value;
                Ok(())
            }
            None => Err(Error::InvalidSpec(format!(
                "model '{}' has no parameter '{name}'",
                self.name
            ))),
        }
    }

    pub fn has_analytic_linearization(&self) -> bool {
        self.linearization.is_some()
    }

    /// Wraps a linear functional as a model whose right-hand side is exactly
    /// that functional applied to the segment.
    pub fn from_functional(spec: &LinearFunctionalSpec) -> Self {
        let dim = spec.dim();
        let taps: Vec<f64> = spec.discrete_terms().iter().map(|t| t.tau).collect();
        let channels: Vec<KernelChannel> = spec
            .kernel_terms()
            .iter()
            .map(|k| {
                KernelChannel::new(k.delta, k.power, dim, Arc::new(|x: &DVector<f64>| x.clone()))
            })
            .collect();
        let a_mats: Vec<DMatrix<f64>> =
            spec.discrete_terms().iter().map(|t| t.matrix.clone()).collect();
        let c_mats: Vec<DMatrix<f64>> =
            spec.kernel_terms().iter().map(|k| k.matrix.clone()).collect();
        let assemble: AssembleFn = Arc::new(move |ctx: &AssembleCtx| {
            let mut out = DVector::zeros(ctx.x.len());
            for (m, v) in a_mats.iter().zip(ctx.taps) {
                out += m * v;
            }
            for (m, v) in c_mats.iter().zip(ctx.kernels) {
                out += m * v;
            }
            out
        });
        let frozen = spec.clone();
        let lin: LinearizeFn = Arc::new(move |_, _| Ok(frozen.clone()));
        ModelSpec {
            name: "linear".into(),
            dim,
            eta: spec.eta(),
            taps,
            channels,
            assemble,
            params: BTreeMap::new(),
            linearization: Some(lin),
        }
    }
}

/// Why a trace ends.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Termination {
    Completed,
    /// State norm crossed [`BLOWUP_NORM`] (or went non-finite) during the step
    /// ending at `t`; the trace holds the part before that step.
    BlowUp { t: f64 },
}

/// Uniform-step trajectory with a cubic dense output per step.
#[derive(Debug, Clone)]
pub struct SimulationTrace {
    history: HistoryFunction<f64>,
    times: Vec<f64>,
    states: Vec<DVector<f64>>,
    /// per step, coefficients [a0, a1, a2, a3] of the interpolant in u = t - t_i
    dense: Vec<[DVector<f64>; 4]>,
    step: f64,
    termination: Termination,
}

impl SimulationTrace {
    pub fn from_parts(
        history: HistoryFunction<f64>,
        times: Vec<f64>,
        states: Vec<DVector<f64>>,
        dense: Vec<[DVector<f64>; 4]>,
        step: f64,
        termination: Termination,
    ) -> Result<Self> {
        if times.is_empty() || times.len() != states.len() || dense.len() + 1 != times.len() {
            return Err(Error::InvalidSpec("trace arrays have inconsistent lengths".into()));
        }
        if times[0] != 0.0 || !(step > 0.0) {
            return Err(Error::InvalidSpec("trace must start at t = 0 with a positive step".into()));
        }
        if states.iter().any(|s| s.len() != history.dim()) {
            return Err(Error::DimensionMismatch { expected: history.dim(), got: states[0].len() });
        }
        Ok(SimulationTrace { history, times, states, dense, step, termination })
    }

    pub fn history(&self) -> &HistoryFunction<f64> {
        &self.history
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[DVector<f64>] {
        &self.states
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn termination(&self) -> Termination {
        self.termination
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn dim(&self) -> usize {
        self.history.dim()
    }

    /// x(t) for t in [-inf, final_time]: history for t <= 0, dense output above.
    pub fn state_at(&self, t: f64) -> Result<DVector<f64>> {
        if t <= 0.0 {
            return self.history.evaluate(t);
        }
        if t > self.final_time() {
            return Err(Error::Domain(format!(
                "time {t} is past the end of the trace ({})",
                self.final_time()
            )));
        }
        let j = (t / self.step).round() as usize;
        if j < self.times.len() && self.times[j] == t {
            return Ok(self.states[j].clone());
        }
        let idx = ((t / self.step).floor() as usize).min(self.dense.len() - 1);
        let u = t - idx as f64 * self.step;
        Ok(horner(&self.dense[idx], u))
    }

    /// The segment x_t as a history function: node set is the initial history
    /// shifted by -t plus every computed knot in (0, t], all values exact.
    pub fn segment(&self, t: f64) -> Result<HistoryFunction<f64>> {
        if t == 0.0 {
            return Ok(self.history.clone());
        }
        if !(t > 0.0) || t > self.final_time() {
            return Err(Error::Domain(format!(
                "segment time must lie in [0, {}], got {t}",
                self.final_time()
            )));
        }
        let mut grid: Vec<f64> = self.history.grid().iter().map(|&g| g - t).collect();
        let mut values = self.history.values().to_vec();
        for (tk, xk) in self.times.iter().zip(&self.states).skip(1) {
            if *tk < t {
                grid.push(tk - t);
                values.push(xk.clone());
            }
        }
        grid.push(0.0);
        values.push(self.state_at(t)?);
        HistoryFunction::from_samples(
            self.history.eta(),
            grid,
            values,
            self.history.tail(),
            self.history.interp(),
        )
    }
}

fn horner(c: &[DVector<f64>; 4], u: f64) -> DVector<f64> {
    &c[0] + (&c[1] + (&c[2] + &c[3] * u) * u) * u
}

/// Hermite cubic on [0, w] from endpoint values and slopes.
fn hermite(x0: &DVector<f64>, s0: &DVector<f64>, x1: &DVector<f64>, s1: &DVector<f64>, w: f64) -> [DVector<f64>; 4] {
    let d = (x1 - x0) / w;
    let a2 = (&d * 3.0 - s0 * 2.0 - s1) / w;
    let a3 = (s0 + s1 - &d * 2.0) / (w * w);
    [x0.clone(), s0.clone(), a2, a3]
}

/// Re-centers a cubic from u to u' = u - w (evaluating the same polynomial
/// past its right end when used as an extrapolating predictor).
fn shift_cubic(c: &[DVector<f64>; 4], w: f64) -> [DVector<f64>; 4] {
    [
        &c[0] + (&c[1] + (&c[2] + &c[3] * w) * w) * w,
        &c[1] + (&c[2] * 2.0 + &c[3] * (3.0 * w)) * w,
        &c[2] + &c[3] * (3.0 * w),
        c[3].clone(),
    ]
}

/// Cubic through samples at 0, span/3, 2 span/3, span (coefficients in the
/// local variable, constant term first).
fn fit_cubic(y: &[DVector<f64>; 4], span: f64) -> [DVector<f64>; 4] {
    let c1 = (&y[0] * -11.0 + &y[1] * 18.0 - &y[2] * 9.0 + &y[3] * 2.0) / 2.0;
    let c2 = &y[0] * 9.0 - &y[1] * 22.5 + &y[2] * 18.0 - &y[3] * 4.5;
    let c3 = (&y[1] * 27.0 - &y[0] * 9.0 - &y[2] * 27.0 + &y[3] * 9.0) / 2.0;
    [y[0].clone(), c1 / span, c2 / (span * span), c3 / (span * span * span)]
}

/// Running state of one memory channel.
struct ChannelState {
    delta: f64,
    m: usize,
    /// moments of g(history): M_j = int_{-inf}^0 (-s)^j e^{delta s} g(phi(s)) ds
    moments: Vec<DVector<f64>>,
    /// computed-part integrals P_q(t_i) = int_0^{t_i} (t_i-s)^q e^{-delta (t_i-s)} g ds
    p: Vec<DVector<f64>>,
}

impl ChannelState {
    fn new(ch: &KernelChannel, phi: &HistoryFunction<f64>) -> Result<Self> {
        let g0 = (ch.observable)(phi.at_zero());
        if g0.len() != ch.obs_dim {
            return Err(Error::DimensionMismatch { expected: ch.obs_dim, got: g0.len() });
        }
        let g_phi = phi.map_values(|v| (ch.observable)(v));
        let moments = kernel_moments(&g_phi, ch.delta, ch.power as usize)?;
        let p = vec![DVector::zeros(ch.obs_dim); ch.power as usize + 1];
        Ok(ChannelState { delta: ch.delta, m: ch.power as usize, moments, p })
    }

    /// Contribution of the initial history at absolute time sigma >= 0:
    /// e^{-delta sigma} sum_j C(m,j) sigma^{m-j} M_j.
    fn history_part(&self, sigma: f64) -> DVector<f64> {
        let damp = (-self.delta * sigma).exp();
        let mut out = DVector::zeros(self.moments[0].len());
        if damp == 0.0 {
            return out;
        }
        for (j, mom) in self.moments.iter().enumerate() {
            out += mom * (binomial(self.m, j) * sigma.powi((self.m - j) as i32));
        }
        out * damp
    }

    /// Expansion coefficients (in u = sigma - s) of the g-cubic over a partial
    /// step of length v, g given in the step-local variable.
    fn local_coeffs(gcub: &[DVector<f64>; 4], v: f64) -> [DVector<f64>; 4] {
        let dim = gcub[0].len();
        let mut coef = [
            DVector::<f64>::zeros(dim),
            DVector::<f64>::zeros(dim),
            DVector::<f64>::zeros(dim),
            DVector::<f64>::zeros(dim),
        ];
        for (p, b) in gcub.iter().enumerate() {
            for (w, c) in coef.iter_mut().enumerate().take(p + 1) {
                let sign = if w % 2 == 1 { -1.0 } else { 1.0 };
                *c += b * (sign * binomial(p, w) * v.powi((p - w) as i32));
            }
        }
        coef
    }

    /// Channel value at sigma = step start + v, with g on the partial step
    /// described by gcub (step-local variable).
    fn value_at(&self, sigma: f64, v: f64, gcub: &[DVector<f64>; 4]) -> DVector<f64> {
        let mut out = self.history_part(sigma);
        // carried part shifted by v
        let damp = (-self.delta * v).exp();
        for r in 0..=self.m {
            out += &self.p[r] * (damp * binomial(self.m, r) * v.powi((self.m - r) as i32));
        }
        // local integral over the partial step
        let ints = int_uk_exp(-self.delta, v, self.m + 4);
        let coef = Self::local_coeffs(gcub, v);
        for (w, c) in coef.iter().enumerate() {
            out += c * ints[self.m + w];
        }
        out
    }

    /// Advances the carried integrals across a completed step of length h.
    fn advance(&mut self, h: f64, gcub: &[DVector<f64>; 4]) {
        let damp = (-self.delta * h).exp();
        let ints = int_uk_exp(-self.delta, h, self.m + 4);
        let coef = Self::local_coeffs(gcub, h);
        let mut next = Vec::with_capacity(self.m + 1);
        for q in 0..=self.m {
            let mut v = DVector::zeros(self.p[0].len());
            for r in 0..=q {
                v += &self.p[r] * (damp * binomial(q, r) * h.powi((q - r) as i32));
            }
            for (w, c) in coef.iter().enumerate() {
                v += c * ints[q + w];
            }
            next.push(v);
        }
        self.p = next;
    }
}

/// x(arg) for arg <= current step start, from history or committed dense steps.
fn eval_past(
    phi: &HistoryFunction<f64>,
    states: &[DVector<f64>],
    dense: &[[DVector<f64>; 4]],
    h: f64,
    arg: f64,
) -> Result<DVector<f64>> {
    if arg <= 0.0 {
        return phi.evaluate(arg);
    }
    if dense.is_empty() {
        return Ok(states[0].clone());
    }
    let idx = ((arg / h).floor() as usize).min(dense.len() - 1);
    let u = arg - idx as f64 * h;
    Ok(horner(&dense[idx], u))
}

struct StepEval<'a> {
    model: &'a ModelSpec,
    phi: &'a HistoryFunction<f64>,
    states: &'a [DVector<f64>],
    dense: &'a [[DVector<f64>; 4]],
    chans: &'a [ChannelState],
    h: f64,
    t0: f64,
}

impl StepEval<'_> {
    /// Right-hand side at sigma = t0 + v with candidate state xc; pred_x and
    /// gcubs describe the current step's interior in its local variable.
    fn rhs(
        &self,
        v: f64,
        xc: &DVector<f64>,
        pred_x: &[DVector<f64>; 4],
        gcubs: &[[DVector<f64>; 4]],
    ) -> Result<DVector<f64>> {
        let sigma = self.t0 + v;
        let mut taps = Vec::with_capacity(self.model.taps.len());
        for &tau in &self.model.taps {
            if tau == 0.0 {
                taps.push(xc.clone());
            } else {
                let arg = sigma - tau;
                if arg > self.t0 {
                    taps.push(horner(pred_x, arg - self.t0));
                } else {
                    taps.push(eval_past(self.phi, self.states, self.dense, self.h, arg)?);
                }
            }
        }
        let kernels: Vec<DVector<f64>> = self
            .chans
            .iter()
            .zip(gcubs)
            .map(|(c, g)| c.value_at(sigma, v, g))
            .collect();
        let ctx = AssembleCtx {
            t: sigma,
            x: xc,
            taps: &taps,
            kernels: &kernels,
            params: &self.model.params,
        };
        let out = (self.model.assemble)(&ctx);
        if out.len() != self.model.dim {
            return Err(Error::DimensionMismatch { expected: self.model.dim, got: out.len() });
        }
        Ok(out)
    }

    /// Fits per-channel cubics for g along a candidate state cubic.
    fn fit_g(&self, pred_x: &[DVector<f64>; 4]) -> Result<Vec<[DVector<f64>; 4]>> {
        let mut out = Vec::with_capacity(self.model.channels.len());
        for ch in &self.model.channels {
            let mut samples = Vec::with_capacity(4);
            for k in 0..4 {
                let v = self.h * k as f64 / 3.0;
                let g = (ch.observable)(&horner(pred_x, v));
                if g.len() != ch.obs_dim {
                    return Err(Error::DimensionMismatch { expected: ch.obs_dim, got: g.len() });
                }
                samples.push(g);
            }
            let arr = [samples[0].clone(), samples[1].clone(), samples[2].clone(), samples[3].clone()];
            out.push(fit_cubic(&arr, self.h));
        }
        Ok(out)
    }

    fn stages(
        &self,
        x0: &DVector<f64>,
        k1: &DVector<f64>,
        pred_x: &[DVector<f64>; 4],
        gcubs: &[[DVector<f64>; 4]],
    ) -> Result<(DVector<f64>, DVector<f64>, DVector<f64>)> {
        let h = self.h;
        let k2 = self.rhs(0.5 * h, &(x0 + k1 * (0.5 * h)), pred_x, gcubs)?;
        let k3 = self.rhs(0.5 * h, &(x0 + &k2 * (0.5 * h)), pred_x, gcubs)?;
        let k4 = self.rhs(h, &(x0 + &k3 * h), pred_x, gcubs)?;
        Ok((k2, k3, k4))
    }
}

/// Integrates the model from the given history over [0, horizon] with a fixed
/// step (rounded so the horizon is an integer number of steps).
pub fn integrate(
    model: &ModelSpec,
    phi: &HistoryFunction<f64>,
    horizon: f64,
    step: f64,
) -> Result<SimulationTrace> {
    if phi.dim() != model.dim {
        return Err(Error::DimensionMismatch { expected: model.dim, got: phi.dim() });
    }
    if phi.eta() != model.eta {
        return Err(Error::EtaMismatch { left: model.eta, right: phi.eta() });
    }
    if !(horizon > 0.0) || !(step > 0.0) || step > horizon {
        return Err(Error::Domain(format!(
            "integration needs 0 < step <= horizon, got step {step}, horizon {horizon}"
        )));
    }
    let n_steps = (horizon / step).round().max(1.0) as usize;
    let h = horizon / n_steps as f64;
    let mut chans = model
        .channels
        .iter()
        .map(|ch| ChannelState::new(ch, phi))
        .collect::<Result<Vec<_>>>()?;
    let x0 = phi.at_zero().clone();
    let mut times = vec![0.0];
    let mut states = vec![x0];
    let mut dense: Vec<[DVector<f64>; 4]> = Vec::new();
    let mut termination = Termination::Completed;
    let mut prev_cubic: Option<[DVector<f64>; 4]> = None;
    for i in 0..n_steps {
        let t0 = i as f64 * h;
        let x_i = states.last().unwrap().clone();
        let (x1, ce) = {
            let ev = StepEval {
                model,
                phi,
                states: &states,
                dense: &dense,
                chans: &chans,
                h,
                t0,
            };
            // k1 depends only on committed values (v = 0), so the rough
            // first-step predictor below does not pollute it
            let pred0 = match &prev_cubic {
                Some(c) => shift_cubic(c, h),
                None => [
                    x_i.clone(),
                    DVector::zeros(model.dim),
                    DVector::zeros(model.dim),
                    DVector::zeros(model.dim),
                ],
            };
            let g0 = ev.fit_g(&pred0)?;
            let k1 = ev.rhs(0.0, &x_i, &pred0, &g0)?;
            let (pred1, g1) = if prev_cubic.is_some() {
                (pred0, g0)
            } else {
                let p = [
                    x_i.clone(),
                    k1.clone(),
                    DVector::zeros(model.dim),
                    DVector::zeros(model.dim),
                ];
                let g = ev.fit_g(&p)?;
                (p, g)
            };
            let (k2, k3, k4) = ev.stages(&x_i, &k1, &pred1, &g1)?;
            let x1p = &x_i + (&k1 + &k2 * 2.0 + &k3 * 2.0 + &k4) * (h / 6.0);
            let ce1 = hermite(&x_i, &k1, &x1p, &k4, h);
            let g2 = ev.fit_g(&ce1)?;
            let (k2, k3, k4) = ev.stages(&x_i, &k1, &ce1, &g2)?;
            let x1 = &x_i + (&k1 + &k2 * 2.0 + &k3 * 2.0 + &k4) * (h / 6.0);
            let ce = hermite(&x_i, &k1, &x1, &k4, h);
            (x1, ce)
        };
        if !x1.iter().all(|v| v.is_finite()) || x1.norm() > BLOWUP_NORM {
            termination = Termination::BlowUp { t: t0 + h };
            break;
        }
        // advance channel state with the accepted dense output
        {
            let ev = StepEval {
                model,
                phi,
                states: &states,
                dense: &dense,
                chans: &chans,
                h,
                t0,
            };
            let g_final = ev.fit_g(&ce)?;
            for (c, g) in chans.iter_mut().zip(&g_final) {
                c.advance(h, g);
            }
        }
        dense.push(ce);
        states.push(x1);
        times.push((i + 1) as f64 * h);
        prev_cubic = Some(dense.last().unwrap().clone());
    }
    SimulationTrace::from_parts(phi.clone(), times, states, dense, h, termination)
}

/// Right-hand side at a constant state (taps collapse to x, channel integrals
/// to g_j(x) m! / delta^{m+1}); equilibria are its zeros.
pub fn constant_field(model: &ModelSpec, x: &DVector<f64>) -> Result<DVector<f64>> {
    if x.len() != model.dim {
        return Err(Error::DimensionMismatch { expected: model.dim, got: x.len() });
    }
    let taps = vec![x.clone(); model.taps.len()];
    let mut kernels = Vec::with_capacity(model.channels.len());
    for ch in &model.channels {
        let g = (ch.observable)(x);
        if g.len() != ch.obs_dim {
            return Err(Error::DimensionMismatch { expected: ch.obs_dim, got: g.len() });
        }
        kernels.push(g * (factorial(ch.power as usize) / ch.delta.powi(ch.power as i32 + 1)));
    }
    let ctx = AssembleCtx { t: 0.0, x, taps: &taps, kernels: &kernels, params: &model.params };
    let out = (model.assemble)(&ctx);
    if out.len() != model.dim {
        return Err(Error::DimensionMismatch { expected: model.dim, got: out.len() });
    }
    Ok(out)
}

/// Central-difference Jacobian with per-coordinate scaled steps.
pub fn jacobian_fd(
    f: &dyn Fn(&DVector<f64>) -> Result<DVector<f64>>,
    x: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let n = x.len();
    let probe = f(x)?;
    let m = probe.len();
    let mut jac = DMatrix::zeros(m, n);
    for j in 0..n {
        let hstep = 1e-6 * (1.0 + x[j].abs());
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += hstep;
        xm[j] -= hstep;
        let fp = f(&xp)?;
        let fm = f(&xm)?;
        jac.set_column(j, &((fp - fm) / (2.0 * hstep)));
    }
    Ok(jac)
}

/// Newton iteration on the constant field, starting from `guess`.
pub fn find_equilibrium(model: &ModelSpec, guess: &DVector<f64>) -> Result<DVector<f64>> {
    if guess.len() != model.dim {
        return Err(Error::DimensionMismatch { expected: model.dim, got: guess.len() });
    }
    let mut x = guess.clone();
    for _ in 0..50 {
        let f = constant_field(model, &x)?;
        if f.norm() < 1e-12 * (1.0 + x.norm()) {
            return Ok(x);
        }
        let jac = jacobian_fd(&|y| constant_field(model, y), &x)?;
        let step = jac.lu().solve(&(-&f)).ok_or_else(|| {
            Error::EquilibriumDivergence(format!(
                "singular Jacobian at x = {:?}",
                x.iter().copied().collect::<Vec<_>>()
            ))
        })?;
        x += &step;
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::EquilibriumDivergence("iterate left the finite domain".into()));
        }
    }
    Err(Error::EquilibriumDivergence(format!(
        "no convergence within 50 iterations from {:?}",
        guess.iter().copied().collect::<Vec<_>>()
    )))
}

/// Linear functional describing the model's right-hand side at first order
/// around an equilibrium. Uses the model's analytic linearization when
/// provided, otherwise differentiates the assembled field.
pub fn linearize(model: &ModelSpec, equilibrium: &DVector<f64>) -> Result<LinearFunctionalSpec> {
    if equilibrium.len() != model.dim {
        return Err(Error::DimensionMismatch { expected: model.dim, got: equilibrium.len() });
    }
    if let Some(l) = &model.linearization {
        return l(&model.params, equilibrium);
    }
    linearize_fd(model, equilibrium)
}

/// Structured finite-difference linearization: differentiates the assembled
/// field through each tap and channel separately. Ignores any analytic
/// closure, so it doubles as a cross-check for one.
pub fn linearize_fd(model: &ModelSpec, equilibrium: &DVector<f64>) -> Result<LinearFunctionalSpec> {
    if equilibrium.len() != model.dim {
        return Err(Error::DimensionMismatch { expected: model.dim, got: equilibrium.len() });
    }
    let base_taps = vec![equilibrium.clone(); model.taps.len()];
    let mut base_kernels = Vec::with_capacity(model.channels.len());
    for ch in &model.channels {
        let g = (ch.observable)(equilibrium);
        if g.len() != ch.obs_dim {
            return Err(Error::DimensionMismatch { expected: ch.obs_dim, got: g.len() });
        }
        base_kernels.push(g * (factorial(ch.power as usize) / ch.delta.powi(ch.power as i32 + 1)));
    }
    let eval = |x: &DVector<f64>, taps: &[DVector<f64>], kernels: &[DVector<f64>]| -> Result<DVector<f64>> {
        let ctx = AssembleCtx { t: 0.0, x, taps, kernels, params: &model.params };
        let out = (model.assemble)(&ctx);
        if out.len() != model.dim {
            return Err(Error::DimensionMismatch { expected: model.dim, got: out.len() });
        }
        Ok(out)
    };
    let mut discrete = Vec::new();
    // direct dependence on x(t) enters as a zero-delay term
    let dx = jacobian_fd(
        &|y: &DVector<f64>| eval(y, &base_taps, &base_kernels),
        equilibrium,
    )?;
    if dx.amax() > 0.0 {
        discrete.push(DiscreteTerm { matrix: dx, tau: 0.0 });
    }
    for (k, &tau) in model.taps.iter().enumerate() {
        let a = jacobian_fd(
            &|y: &DVector<f64>| {
                let mut taps = base_taps.clone();
                taps[k] = y.clone();
                eval(equilibrium, &taps, &base_kernels)
            },
            equilibrium,
        )?;
        discrete.push(DiscreteTerm { matrix: a, tau });
    }
    let mut kernels = Vec::new();
    for (j, ch) in model.channels.iter().enumerate() {
        let di = jacobian_fd(
            &|y: &DVector<f64>| {
                let mut ks = base_kernels.clone();
                ks[j] = y.clone();
                eval(equilibrium, &base_taps, &ks)
            },
            &base_kernels[j],
        )?;
        let dg = jacobian_fd(&|y: &DVector<f64>| Ok((ch.observable)(y)), equilibrium)?;
        kernels.push(KernelTerm { matrix: di * dg, delta: ch.delta, power: ch.power });
    }
    LinearFunctionalSpec::new(model.dim, model.eta, discrete, kernels)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositivityViolation {
    pub t: f64,
    pub component: usize,
    pub value: f64,
}

/// Scans knots and quarter-step interior points for components below -tol;
/// returns the deepest violation.
pub fn positivity_check(trace: &SimulationTrace, tol: f64) -> Option<PositivityViolation> {
    let mut worst: Option<PositivityViolation> = None;
    let mut consider = |t: f64, comp: usize, val: f64| {
        if val < -tol && worst.is_none_or(|w| val < w.value) {
            worst = Some(PositivityViolation { t, component: comp, value: val });
        }
    };
    for (t, x) in trace.times().iter().zip(trace.states()) {
        for (c, &v) in x.iter().enumerate() {
            consider(*t, c, v);
        }
    }
    for (i, cub) in trace.dense.iter().enumerate() {
        let t0 = trace.times[i];
        for q in 1..4 {
            let u = trace.step * q as f64 / 4.0;
            let x = horner(cub, u);
            for (c, &v) in x.iter().enumerate() {
                consider(t0 + u, c, v);
            }
        }
    }
    worst
}

/// Largest deviation between the trace restarted at s and the original,
/// compared at the restarted trace's knots over [s, s + t].
pub fn semiflow_defect(model: &ModelSpec, trace: &SimulationTrace, s: f64, t: f64) -> Result<f64> {
    if !(s >= 0.0) || !(t > 0.0) || s + t > trace.final_time() + 1e-12 {
        return Err(Error::Domain(format!(
            "restart window [{s}, {}] must lie inside the trace",
            s + t
        )));
    }
    let seg = trace.segment(s)?;
    let sub = integrate(model, &seg, t, trace.step())?;
    let mut worst: f64 = 0.0;
    for (tk, xk) in sub.times().iter().zip(sub.states()) {
        let reference = trace.state_at((s + tk).min(trace.final_time()))?;
        worst = worst.max((xk - reference).norm());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functional;
    use crate::history::{InterpOrder, Tail};

    fn decay_model() -> ModelSpec {
        // x' = -x, no memory at all
        ModelSpec::new(
            "decay",
            1,
            0.5,
            vec![],
            vec![],
            Arc::new(|ctx: &AssembleCtx| -ctx.x.clone()),
            BTreeMap::new(),
        )
        .unwrap()
    }

    fn wright_model(a: f64) -> ModelSpec {
        // x'(t) = -a x(t-1) (1 + x(t))
        let mut params = BTreeMap::new();
        params.insert("a".to_string(), a);
        ModelSpec::new(
            "wright",
            1,
            0.5,
            vec![1.0],
            vec![],
            Arc::new(|ctx: &AssembleCtx| {
                let a = ctx.params["a"];
                DVector::from_vec(vec![-a * ctx.taps[0][0] * (1.0 + ctx.x[0])])
            }),
            params,
        )
        .unwrap()
    }

    #[test]
    fn plain_ode_fourth_order() {
        let model = decay_model();
        let phi = HistoryFunction::constant(0.5, DVector::from_vec(vec![1.0]), 64).unwrap();
        let mut errs = Vec::new();
        for h in [0.1, 0.05] {
            let trace = integrate(&model, &phi, 2.0, h).unwrap();
            let err = (trace.states().last().unwrap()[0] - (-2.0f64).exp()).abs();
            errs.push(err);
        }
        let order = (errs[0] / errs[1]).log2();
        assert!(order > 3.7, "observed order {order}");
        assert_eq!(trace_len(&integrate(&model, &phi, 2.0, 0.1).unwrap()), 21);
    }

    fn trace_len(t: &SimulationTrace) -> usize {
        t.times().len()
    }

    #[test]
    fn discrete_delay_matches_method_of_steps() {
        // x' = -a x(t-1), phi = 1: polynomial pieces per unit interval
        let a = 0.5;
        let spec = functional::discrete_scalar(a, 1.0, 0.5);
        let model = ModelSpec::from_functional(&spec);
        let phi = HistoryFunction::constant(0.5, DVector::from_vec(vec![1.0]), 128).unwrap();
        let trace = integrate(&model, &phi, 4.0, 1e-3).unwrap();
        // oracle: coefficients of x on [k, k+1] built by exact integration
        let mut piece = vec![1.0f64]; // x on [-1, 0] in (t - k + 1), constant 1
        let mut x_left = 1.0;
        let mut oracle_at = std::collections::BTreeMap::new();
        for k in 0..4 {
            // x'(t) = -a * piece(t - k), t in [k, k+1]; antiderivative in local var
            let mut next = vec![x_left];
            for (d, &c) in piece.iter().enumerate() {
                next.push(-a * c / (d as f64 + 1.0));
            }
            for frac in [0.25, 0.5, 0.75, 1.0] {
                let mut v = 0.0;
                for &c in next.iter().rev() {
                    v = v * frac + c;
                }
                oracle_at.insert(((k as f64 + frac) * 1000.0).round() as i64, v);
            }
            x_left = next.iter().sum();
            piece = next;
        }
        for (ti, want) in oracle_at {
            let t = ti as f64 / 1000.0;
            let got = trace.state_at(t).unwrap()[0];
            assert!((got - want).abs() < 1e-10, "t = {t}: {got} vs {want}");
        }
    }

    #[test]
    fn exponential_kernel_matches_chain_ode() {
        // x' = -a int delta e^{delta theta} x(t+theta) dtheta, smooth history;
        // oracle is the equivalent (x, y) system with y' = delta (x - y)
        let (a, delta, eta) = (1.3, 2.0, 0.5);
        let spec = functional::one_exponential(a, delta, eta);
        let model = ModelSpec::from_functional(&spec);
        let phi = HistoryFunction::from_fn(eta, 512, Tail::WeightedContinuation, InterpOrder::Cubic, |t| {
            DVector::from_vec(vec![(0.4 * t).exp() * (1.0 + 0.5 * (2.0 * t).sin())])
        })
        .unwrap();
        let trace = integrate(&model, &phi, 5.0, 1e-3).unwrap();
        // y(0) = delta * M_0, exact on the interpolant
        let y0 = functional::kernel_moments(&phi, delta, 0).unwrap()[0][0] * delta;
        let (mut x, mut y) = (phi.at_zero()[0], y0);
        let h = 1e-3;
        let f = |x: f64, y: f64| (-a * y, delta * (x - y));
        for _ in 0..5000 {
            let (k1x, k1y) = f(x, y);
            let (k2x, k2y) = f(x + 0.5 * h * k1x, y + 0.5 * h * k1y);
            let (k3x, k3y) = f(x + 0.5 * h * k2x, y + 0.5 * h * k2y);
            let (k4x, k4y) = f(x + h * k3x, y + h * k3y);
            x += h / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
            y += h / 6.0 * (k1y + 2.0 * k2y + 2.0 * k3y + k4y);
        }
        let got = trace.states().last().unwrap()[0];
        assert!((got - x).abs() < 1e-8, "{got} vs {x}");
    }

    #[test]
    fn erlang_kernel_matches_chain_ode() {
        // kernel (-theta) e^{delta theta}: oracle chain x' = -a delta^2 I1,
        // with I1 carried through y1, y2
        let (a, delta, eta) = (0.8, 1.5, 0.5);
        let spec = functional::erlang2(a, delta, eta);
        let model = ModelSpec::from_functional(&spec);
        let phi = HistoryFunction::constant(eta, DVector::from_vec(vec![0.7]), 128).unwrap();
        let trace = integrate(&model, &phi, 6.0, 1e-3).unwrap();
        // y1 = int delta e^{-delta(t-s)} x, y2 = int delta^2 (t-s) e^{-delta(t-s)} x
        // constant history: y1(0) = 0.7, y2(0) = 0.7
        let (mut x, mut y1, mut y2) = (0.7, 0.7, 0.7);
        let h = 1e-3;
        let f = |x: f64, y1: f64, y2: f64| (-a * y2, delta * (x - y1), delta * (y1 - y2));
        for _ in 0..6000 {
            let (k1a, k1b, k1c) = f(x, y1, y2);
            let (k2a, k2b, k2c) = f(x + 0.5 * h * k1a, y1 + 0.5 * h * k1b, y2 + 0.5 * h * k1c);
            let (k3a, k3b, k3c) = f(x + 0.5 * h * k2a, y1 + 0.5 * h * k2b, y2 + 0.5 * h * k2c);
            let (k4a, k4b, k4c) = f(x + h * k3a, y1 + h * k3b, y2 + h * k3c);
            x += h / 6.0 * (k1a + 2.0 * k2a + 2.0 * k3a + k4a);
            y1 += h / 6.0 * (k1b + 2.0 * k2b + 2.0 * k3b + k4b);
            y2 += h / 6.0 * (k1c + 2.0 * k2c + 2.0 * k3c + k4c);
        }
        let got = trace.states().last().unwrap()[0];
        assert!((got - x).abs() < 1e-8, "{got} vs {x}");
    }

    #[test]
    fn segment_at_zero_is_identity() {
        let model = decay_model();
        let phi = HistoryFunction::constant(0.5, DVector::from_vec(vec![2.0]), 64).unwrap();
        let trace = integrate(&model, &phi, 1.0, 0.01).unwrap();
        let seg = trace.segment(0.0).unwrap();
        assert_eq!(seg.grid(), phi.grid());
        for (a, b) in seg.values().iter().zip(phi.values()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn semiflow_restart_consistency() {
        let spec = functional::one_exponential(1.0, 2.0, 0.5);
        let model = ModelSpec::from_functional(&spec);
        let phi = HistoryFunction::from_fn(0.5, 256, Tail::WeightedContinuation, InterpOrder::Cubic, |t| {
            DVector::from_vec(vec![(0.3 * t).exp()])
        })
        .unwrap();
        let trace = integrate(&model, &phi, 4.0, 1e-3).unwrap();
        // the restarted segment interpolates across the C0 junction kink at
        // t = 0 (history slope vs flow slope), which caps the match near 1e-8
        let defect = semiflow_defect(&model, &trace, 1.5, 2.0).unwrap();
        assert!(defect < 1e-7, "defect {defect}");
    }

    #[test]
    fn equilibria_of_logistic_delay() {
        let model = wright_model(0.8);
        let zero = find_equilibrium(&model, &DVector::from_vec(vec![0.3])).unwrap();
        assert!(zero[0].abs() < 1e-10);
        let minus_one = find_equilibrium(&model, &DVector::from_vec(vec![-1.2])).unwrap();
        assert!((minus_one[0] + 1.0).abs() < 1e-10);
    }

    #[test]
    fn fd_linearization_matches_hand_derivative() {
        let a = 0.8;
        let model = wright_model(a);
        // around 0: x' = -a x(t-1)
        let lin0 = linearize(&model, &DVector::from_vec(vec![0.0])).unwrap();
        let hand = functional::discrete_scalar(a, 1.0, 0.5);
        for lam in [
            num_complex::Complex64::new(0.3, 0.4),
            num_complex::Complex64::new(-0.2, 1.0),
        ] {
            let d1 = lin0.char_matrix(lam).unwrap();
            let d2 = hand.char_matrix(lam).unwrap();
            assert!((&d1 - &d2).norm() < 1e-6);
        }
        // around -1: tap coefficient vanishes, x(t) coefficient becomes +a
        let lin1 = linearize(&model, &DVector::from_vec(vec![-1.0])).unwrap();
        let lam = num_complex::Complex64::new(0.1, 0.2);
        let d = lin1.char_matrix(lam).unwrap();
        assert!((d[(0, 0)] - (lam - a)).norm() < 1e-6);
    }

    #[test]
    fn linear_model_roundtrip_through_fd() {
        let spec = functional::erlang2(2.0, 1.0, 0.5);
        let model = ModelSpec::from_functional(&spec);
        // from_functional installs the exact linearization; strip it to force FD
        let stripped = ModelSpec {
            linearization: None,
            ..model.clone()
        };
        let lin = linearize(&stripped, &DVector::from_vec(vec![0.0])).unwrap();
        for lam in [num_complex::Complex64::new(0.5, 1.1), num_complex::Complex64::new(-0.3, 0.2)] {
            let d1 = lin.char_matrix(lam).unwrap();
            let d2 = spec.char_matrix(lam).unwrap();
            assert!((&d1 - &d2).norm() < 1e-6);
        }
    }

    #[test]
    fn blowup_terminates_early() {
        let model = ModelSpec::new(
            "riccati",
            1,
            0.5,
            vec![],
            vec![],
            Arc::new(|ctx: &AssembleCtx| DVector::from_vec(vec![ctx.x[0] * ctx.x[0]])),
            BTreeMap::new(),
        )
        .unwrap();
        let phi = HistoryFunction::constant(0.5, DVector::from_vec(vec![5.0]), 32).unwrap();
        // blows up near t = 0.2
        let trace = integrate(&model, &phi, 1.0, 1e-3).unwrap();
        match trace.termination() {
            Termination::BlowUp { t } => assert!(t < 0.35, "blow-up reported at {t}"),
            Termination::Completed => panic!("expected blow-up"),
        }
        assert!(trace.final_time() < 0.35);
        assert!(trace.states().iter().all(|s| s[0].is_finite()));
    }

    #[test]
    fn positivity_scan_finds_crossing() {
        let model = ModelSpec::new(
            "drop",
            1,
            0.5,
            vec![],
            vec![],
            Arc::new(|_ctx: &AssembleCtx| DVector::from_vec(vec![-1.0])),
            BTreeMap::new(),
        )
        .unwrap();
        let phi = HistoryFunction::constant(0.5, DVector::from_vec(vec![0.5]), 32).unwrap();
        let trace = integrate(&model, &phi, 1.0, 1e-2).unwrap();
        let v = positivity_check(&trace, 1e-9).expect("crosses zero");
        assert!(v.t > 0.5 && v.value < 0.0);
        let calm = integrate(&decay_model(), &phi, 1.0, 1e-2).unwrap();
        assert!(positivity_check(&calm, 1e-9).is_none());
    }
}
