//! Rightmost-root stability verdicts, empirical decay rates, eigenvalue
//! branch continuation in a scalar parameter, and Hopf-point detection with
//! simulation-based verification of period and amplitude scaling.

use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functional::LinearFunctionalSpec;
use crate::history::HistoryFunction;
use crate::solver::{self, ModelSpec, Termination};
use crate::spectral::{self, ScanRegion, SpectralRoot};

/// Roots with |Re| below this count as neutral, not as decay.
pub const NEUTRAL_TOL: f64 = 1e-9;
/// Transversality below this is treated as a degenerate crossing.
pub const TRANSVERSALITY_TOL: f64 = 1e-8;

/// Outcome of a rightmost-root scan.
#[derive(Debug, Clone)]
pub struct StabilityVerdict {
    pub stable: bool,
    /// root with the largest real part found in the scanned region
    pub rightmost: Option<SpectralRoot>,
    /// region actually scanned (extended to cover the a-priori root bound)
    pub region: ScanRegion,
    /// certified exponential decay rate when stable
    pub decay_estimate: Option<f64>,
    pub roots: Vec<SpectralRoot>,
}

/// One point of an eigenvalue branch mu -> lambda(mu).
#[derive(Debug, Clone)]
pub struct BranchSample {
    pub mu: f64,
    pub lambda: Complex64,
    /// implicit-function derivative -d_mu det / d_lambda det
    pub dlambda_dmu: Complex64,
    /// |d_lambda det| at the sample; small values mean poor conditioning
    pub condition: f64,
}

/// A detected Hopf point with optional simulation evidence.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HopfRecord {
    pub mu_star: f64,
    pub omega: f64,
    /// d Re lambda / d mu at the crossing
    pub transversality: f64,
    pub simple: bool,
    pub nonresonant: bool,
    pub rows: Vec<HopfVerificationRow>,
}

/// Measured limit-cycle data at one parameter offset from the Hopf point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HopfVerificationRow {
    /// mu - mu_star
    pub offset: f64,
    pub period: Option<f64>,
    pub amplitude: Option<f64>,
    pub cycle_found: bool,
}

/// Scans for characteristic roots, extending the region rightward and in Im
/// so the a-priori bound on root moduli certifies nothing lies outside.
pub fn assess_stability(
    spec: &LinearFunctionalSpec,
    region: &ScanRegion,
) -> Result<StabilityVerdict> {
    let bound = spec.root_radius_bound(0.0)?;
    let re_max = region.re_max.max(bound + 0.5);
    let im_abs = region.im_min.abs().max(region.im_max).max(bound + 0.5);
    let scanned = ScanRegion::new(region.re_min, re_max, -im_abs, im_abs)?;
    let roots = spectral::find_roots(spec, &scanned, 1e-12)?;
    let rightmost = roots
        .iter()
        .max_by(|a, b| {
            (a.lambda0.re, a.lambda0.im)
                .partial_cmp(&(b.lambda0.re, b.lambda0.im))
                .expect("finite roots")
        })
        .cloned();
    let stable = roots.iter().all(|r| r.lambda0.re < -NEUTRAL_TOL);
    let decay_estimate = if !stable {
        None
    } else {
        // semigroup decay is capped by the essential bound eta
        let cap = 0.999 * spec.eta();
        Some(match &rightmost {
            Some(r) => (-r.lambda0.re).min(cap),
            None => cap,
        })
    };
    Ok(StabilityVerdict { stable, rightmost, region: scanned, decay_estimate, roots })
}

/// Fits the exponential rate of the trajectory norm on the second half of
/// [0, horizon]: through peak envelopes when the decay is oscillatory,
/// through all samples otherwise. Returns the slope (negative = decay).
pub fn decay_rate_empirical(
    spec: &LinearFunctionalSpec,
    phi: &HistoryFunction<f64>,
    horizon: f64,
    step: f64,
) -> Result<f64> {
    let model = ModelSpec::from_functional(spec);
    let trace = solver::integrate(&model, phi, horizon, step)?;
    if trace.termination() != Termination::Completed {
        return Err(Error::Domain("trajectory blew up before the fit window".into()));
    }
    let t0 = 0.5 * trace.final_time();
    let mut times = Vec::new();
    let mut norms = Vec::new();
    for (t, x) in trace.times().iter().zip(trace.states()) {
        if *t >= t0 {
            let n = x.norm();
            if n > 1e-300 {
                times.push(*t);
                norms.push(n);
            }
        }
    }
    if times.len() < 4 {
        return Err(Error::Domain("too few samples above the noise floor".into()));
    }
    // strict interior maxima of the norm sequence
    let mut pt = Vec::new();
    let mut pv = Vec::new();
    for i in 1..norms.len() - 1 {
        if norms[i] > norms[i - 1] && norms[i] >= norms[i + 1] {
            pt.push(times[i]);
            pv.push(norms[i]);
        }
    }
    let (ts, vs) = if pt.len() >= 3 { (pt, pv) } else { (times, norms) };
    Ok(fit_slope(&ts, &vs))
}

fn fit_slope(ts: &[f64], vs: &[f64]) -> f64 {
    let n = ts.len() as f64;
    let mx = ts.iter().sum::<f64>() / n;
    let my = vs.iter().map(|v| v.ln()).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (&t, &v) in ts.iter().zip(vs) {
        sxx += (t - mx) * (t - mx);
        sxy += (t - mx) * (v.ln() - my);
    }
    sxy / sxx
}

fn branch_derivative<F>(
    family: &F,
    mu: f64,
    lambda: Complex64,
) -> Result<(Complex64, f64)>
where
    F: Fn(f64) -> Result<LinearFunctionalSpec>,
{
    let spec = family(mu)?;
    let d_lambda = spectral::det_derivative(&spec, lambda)?;
    let h = 1e-6 * (1.0 + mu.abs());
    let dp = spectral::det_with_scale(&family(mu + h)?, lambda)?.0;
    let dm = spectral::det_with_scale(&family(mu - h)?, lambda)?.0;
    let d_mu = (dp - dm) / (2.0 * h);
    if d_lambda.norm() == 0.0 {
        return Err(Error::BranchFailure(format!(
            "flat determinant derivative at mu = {mu}"
        )));
    }
    Ok((-d_mu / d_lambda, d_lambda.norm()))
}

/// Largest jump accepted between corrector result and predictor; beyond it
/// the corrector likely landed on a different root.
const BASIN_JUMP: f64 = 0.3;

/// Tracks one root of det Delta(mu, lambda) = 0 across a parameter range
/// with a secant predictor and Newton corrector; the step halves locally
/// when the corrector fails or jumps basins.
pub fn continue_branch<F>(
    family: &F,
    range: (f64, f64),
    seed: (f64, Complex64),
    step: f64,
) -> Result<Vec<BranchSample>>
where
    F: Fn(f64) -> Result<LinearFunctionalSpec>,
{
    let (lo, hi) = range;
    if !(lo < hi) || !(step > 0.0) {
        return Err(Error::InvalidSpec(format!(
            "branch range [{lo}, {hi}] and step {step} must be increasing and positive"
        )));
    }
    if seed.0 < lo - 1e-12 || seed.0 > hi + 1e-12 {
        return Err(Error::InvalidSpec(format!(
            "seed parameter {} outside range [{lo}, {hi}]",
            seed.0
        )));
    }
    let spec0 = family(seed.0)?;
    let l0 = spectral::newton_polish(&spec0, seed.1, 1, 1e-12)?;
    let (d0, c0) = branch_derivative(family, seed.0, l0)?;
    let mut samples = vec![BranchSample { mu: seed.0, lambda: l0, dlambda_dmu: d0, condition: c0 }];
    for dir in [1.0f64, -1.0] {
        let target = if dir > 0.0 { hi } else { lo };
        if (target - seed.0).abs() < 1e-12 {
            continue;
        }
        let mut prev = (seed.0, l0);
        let mut prev2: Option<(f64, Complex64)> = None;
        let mut tangent = d0;
        let mut h = step;
        while (target - prev.0) * dir > 1e-12 {
            let mut hcur = h.min((target - prev.0) * dir);
            let mut accepted = None;
            for _ in 0..8 {
                let mu = prev.0 + dir * hcur;
                let predictor = match prev2 {
                    Some((m2, l2)) if (prev.0 - m2).abs() > 1e-14 => {
                        prev.1 + (prev.1 - l2) * ((mu - prev.0) / (prev.0 - m2))
                    }
                    _ => prev.1 + tangent * (mu - prev.0),
                };
                let spec = family(mu)?;
                match spectral::newton_polish(&spec, predictor, 1, 1e-12) {
                    Ok(l) if (l - predictor).norm() < BASIN_JUMP => {
                        accepted = Some((mu, l));
                        break;
                    }
                    Ok(_) | Err(Error::NewtonDivergence(_)) => hcur *= 0.5,
                    Err(e) => return Err(e),
                }
            }
            let (mu, l) = accepted.ok_or_else(|| {
                Error::BranchFailure(format!(
                    "corrector kept failing near mu = {} (direction {dir})",
                    prev.0
                ))
            })?;
            let (dl, cond) = branch_derivative(family, mu, l)?;
            samples.push(BranchSample { mu, lambda: l, dlambda_dmu: dl, condition: cond });
            prev2 = Some(prev);
            prev = (mu, l);
            tangent = dl;
            h = (hcur * 2.0).min(step);
        }
    }
    samples.sort_by(|a, b| a.mu.partial_cmp(&b.mu).expect("finite mu"));
    Ok(samples)
}

/// Locates an axis crossing on a continued branch: bisection on Re lambda(mu)
/// to |Re| < 1e-10, then simplicity, non-resonance (only +-i omega on the
/// axis strip up to 8 omega), and transversality checks. Returns None for a
/// real crossing (omega ~ 0) or when no sign change is present.
pub fn detect_hopf<F>(family: &F, branch: &[BranchSample]) -> Result<Option<HopfRecord>>
where
    F: Fn(f64) -> Result<LinearFunctionalSpec>,
{
    let mut bracket = None;
    for w in branch.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if a.lambda.re == 0.0 || a.lambda.re.signum() != b.lambda.re.signum() {
            bracket = Some((a.clone(), b.clone()));
            break;
        }
    }
    let (mut a, mut b) = match bracket {
        Some(p) => p,
        None => return Ok(None),
    };
    let mut crossing = None;
    for _ in 0..200 {
        if (b.mu - a.mu).abs() < 1e-14 * (1.0 + a.mu.abs()) {
            break;
        }
        let mu = 0.5 * (a.mu + b.mu);
        let guess = a.lambda + (b.lambda - a.lambda) * ((mu - a.mu) / (b.mu - a.mu));
        let spec = family(mu)?;
        let l = spectral::newton_polish(&spec, guess, 1, 1e-13)?;
        let (dl, cond) = branch_derivative(family, mu, l)?;
        let sample = BranchSample { mu, lambda: l, dlambda_dmu: dl, condition: cond };
        if l.re.abs() < 1e-10 {
            crossing = Some(sample);
            break;
        }
        if l.re.signum() == a.lambda.re.signum() {
            a = sample;
        } else {
            b = sample;
        }
    }
    let at = crossing.ok_or_else(|| {
        Error::HopfFailure("bisection exhausted without |Re lambda| < 1e-10".into())
    })?;
    let omega = at.lambda.im.abs();
    if omega < 1e-6 {
        // steady-state crossing, not a Hopf point
        return Ok(None);
    }
    let spec = family(at.mu)?;
    let k0 = spectral::pole_order(&spec, at.lambda)?;
    let (null_dim, _) = spectral::null_space(&spec, at.lambda)?;
    if k0 != 1 || null_dim != 1 {
        return Err(Error::HopfFailure(format!(
            "critical root is not simple: pole order {k0}, null dimension {null_dim}"
        )));
    }
    let strip = ScanRegion::new(-1e-6, 1e-6, -8.0 * omega, 8.0 * omega)?;
    let axis_count = spectral::count_roots(&spec, &strip)?;
    if axis_count != 2 {
        return Err(Error::HopfFailure(format!(
            "{axis_count} roots on the axis strip; expected exactly the conjugate pair"
        )));
    }
    let transversality = at.dlambda_dmu.re;
    if transversality.abs() <= TRANSVERSALITY_TOL {
        return Err(Error::HopfFailure(format!(
            "transversality {transversality} below tolerance"
        )));
    }
    Ok(Some(HopfRecord {
        mu_star: at.mu,
        omega,
        transversality,
        simple: true,
        nonresonant: true,
        rows: vec![],
    }))
}

/// Period and amplitude of the tail of a scalar signal: mean up-crossing
/// spacing and half peak-to-peak after discarding the first 60%.
fn cycle_metrics(times: &[f64], signal: &[f64]) -> (Option<f64>, Option<f64>) {
    if signal.len() < 8 {
        return (None, None);
    }
    let mean = signal.iter().sum::<f64>() / signal.len() as f64;
    let s: Vec<f64> = signal.iter().map(|v| v - mean).collect();
    let mut crossings = Vec::new();
    for i in 0..s.len() - 1 {
        if s[i] < 0.0 && s[i + 1] >= 0.0 {
            let frac = -s[i] / (s[i + 1] - s[i]);
            crossings.push(times[i] + frac * (times[i + 1] - times[i]));
        }
    }
    let period = if crossings.len() >= 3 {
        Some((crossings[crossings.len() - 1] - crossings[0]) / (crossings.len() - 1) as f64)
    } else {
        None
    };
    let hi = signal.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = signal.iter().cloned().fold(f64::INFINITY, f64::min);
    (period, Some(0.5 * (hi - lo)))
}

/// Integrates the nonlinear family at mu_star + offset from a perturbed
/// equilibrium and measures the limit cycle; rows where the trajectory blew
/// up, decayed, or never settled into a cycle are flagged, not dropped.
#[allow(clippy::too_many_arguments)]
pub fn verify_hopf_by_simulation<F>(
    model_family: &F,
    record: &HopfRecord,
    offsets: &[f64],
    equilibrium_guess: &DVector<f64>,
    perturbation: f64,
    horizon: f64,
    step: f64,
) -> Result<HopfRecord>
where
    F: Fn(f64) -> Result<ModelSpec>,
{
    if !(perturbation > 0.0) {
        return Err(Error::InvalidSpec("perturbation must be positive".into()));
    }
    let mut out = record.clone();
    for &offset in offsets {
        let model = model_family(record.mu_star + offset)?;
        let xbar = solver::find_equilibrium(&model, equilibrium_guess)?;
        let mut init = xbar.clone();
        init[0] += perturbation;
        let phi = HistoryFunction::constant(model.eta(), init, 512)?;
        let trace = solver::integrate(&model, &phi, horizon, step)?;
        let row = if trace.termination() != Termination::Completed {
            HopfVerificationRow { offset, period: None, amplitude: None, cycle_found: false }
        } else {
            let t0 = 0.6 * trace.final_time();
            let mut ts = Vec::new();
            let mut sig = Vec::new();
            for (t, x) in trace.times().iter().zip(trace.states()) {
                if *t >= t0 {
                    ts.push(*t);
                    sig.push(x[0]);
                }
            }
            let (period, amplitude) = cycle_metrics(&ts, &sig);
            let cycle_found = period.is_some()
                && amplitude.is_some_and(|a| a > 5.0 * perturbation);
            HopfVerificationRow { offset, period, amplitude, cycle_found }
        };
        out.rows.push(row);
    }
    out.rows
        .sort_by(|a, b| a.offset.partial_cmp(&b.offset).expect("finite offsets"));
    Ok(out)
}

/// R^2 of the through-origin fit amplitude^2 = c * offset over rows with
/// found cycles; None with fewer than two usable rows.
pub fn amplitude_scaling_r2(rows: &[HopfVerificationRow]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.cycle_found && r.offset > 0.0)
        .filter_map(|r| r.amplitude.map(|a| (r.offset, a * a)))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let sxx: f64 = pts.iter().map(|(x, _)| x * x).sum();
    let sxy: f64 = pts.iter().map(|(x, y)| x * y).sum();
    let c = sxy / sxx;
    let my = pts.iter().map(|(_, y)| y).sum::<f64>() / pts.len() as f64;
    let ss_res: f64 = pts.iter().map(|(x, y)| (y - c * x).powi(2)).sum();
    let ss_tot: f64 = pts.iter().map(|(_, y)| (y - my).powi(2)).sum();
    if ss_tot == 0.0 {
        return Some(1.0);
    }
    Some(1.0 - ss_res / ss_tot)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functional::{self, DiscreteTerm};
    use crate::solver::{AssembleCtx, KernelChannel};
    use nalgebra::DMatrix;
    use std::collections::BTreeMap;
    use std::sync::Arc;

    #[test]
    fn free_generator_is_neutral() {
        let spec = LinearFunctionalSpec::new(1, 0.5, vec![], vec![]).unwrap();
        let region = ScanRegion::new(-0.4, 1.0, -1.0, 1.0).unwrap();
        let v = assess_stability(&spec, &region).unwrap();
        assert!(!v.stable);
        assert!(v.decay_estimate.is_none());
        let r = v.rightmost.unwrap();
        assert!(r.lambda0.norm() < 1e-9);
    }

    #[test]
    fn quadratic_spec_is_stable_with_capped_decay() {
        let spec = functional::one_exponential(1.0, 2.0, 0.5);
        let region = ScanRegion::new(-1.5, 0.0, -2.0, 2.0).unwrap();
        let v = assess_stability(&spec, &region).unwrap();
        assert!(v.stable);
        let r = v.rightmost.unwrap();
        assert!((r.lambda0.re + 1.0).abs() < 1e-9);
        let d = v.decay_estimate.unwrap();
        assert!(d > 0.0 && d <= 1.0 + 1e-12);
        // essential bound eta = 0.5 caps the certified rate
        assert!((d - 0.4995).abs() < 1e-9);
    }

    #[test]
    fn erlang_above_crossing_is_unstable() {
        let spec = functional::erlang2(3.0, 1.0, 0.5);
        let region = ScanRegion::new(-0.9, 0.5, -1.5, 1.5).unwrap();
        let v = assess_stability(&spec, &region).unwrap();
        assert!(!v.stable);
        assert!(v.rightmost.unwrap().lambda0.re > 0.05);
    }

    #[test]
    fn empirical_decay_of_pure_exponential() {
        // x' = -x via a tau = 0 discrete term
        let spec = LinearFunctionalSpec::new(
            1,
            0.5,
            vec![DiscreteTerm { matrix: DMatrix::from_element(1, 1, -1.0), tau: 0.0 }],
            vec![],
        )
        .unwrap();
        let phi = HistoryFunction::constant(0.5, DVector::from_vec(vec![1.0]), 256).unwrap();
        let slope = decay_rate_empirical(&spec, &phi, 20.0, 0.01).unwrap();
        assert!((slope + 1.0).abs() < 0.01, "slope {slope}");
    }

    #[test]
    fn empirical_decay_matches_rightmost_pair() {
        let spec = functional::one_exponential(1.0, 2.0, 0.5);
        let phi = HistoryFunction::constant(0.5, DVector::from_vec(vec![1.0]), 256).unwrap();
        let slope = decay_rate_empirical(&spec, &phi, 24.0, 0.005).unwrap();
        assert!((slope + 1.0).abs() < 0.05, "slope {slope}");
    }

    #[test]
    fn linear_family_branch_is_exact() {
        // L phi = mu phi(0): lambda(mu) = mu
        let family = |mu: f64| {
            LinearFunctionalSpec::new(
                1,
                0.5,
                vec![DiscreteTerm { matrix: DMatrix::from_element(1, 1, mu), tau: 0.0 }],
                vec![],
            )
        };
        let seed = (-0.5, Complex64::new(-0.5, 0.0));
        let branch = continue_branch(&family, (-0.5, 0.5), seed, 0.1).unwrap();
        assert!(branch.len() >= 11);
        for s in &branch {
            assert!((s.lambda - Complex64::new(s.mu, 0.0)).norm() < 1e-10);
            assert!((s.dlambda_dmu - Complex64::new(1.0, 0.0)).norm() < 1e-5);
        }
        // real crossing at mu = 0 is not a Hopf point
        assert!(detect_hopf(&family, &branch).unwrap().is_none());
    }

    fn erlang_family(mu: f64) -> Result<LinearFunctionalSpec> {
        Ok(functional::erlang2(mu, 1.0, 0.5))
    }

    fn erlang_seed() -> (f64, Complex64) {
        let spec = erlang_family(1.5).unwrap();
        let region = ScanRegion::new(-0.9, 0.5, 0.2, 1.5).unwrap();
        let roots = spectral::find_roots(&spec, &region, 1e-12).unwrap();
        assert_eq!(roots.len(), 1);
        (1.5, roots[0].lambda0)
    }

    #[test]
    fn erlang_branch_crosses_with_consistent_derivative() {
        let branch = continue_branch(&erlang_family, (1.5, 2.5), erlang_seed(), 0.05).unwrap();
        assert!(branch.first().unwrap().lambda.re < 0.0);
        assert!(branch.last().unwrap().lambda.re > 0.0);
        // derivative vs finite-difference slope of consecutive samples
        for w in branch.windows(2) {
            let fd = (w[1].lambda - w[0].lambda) / (w[1].mu - w[0].mu);
            let avg = 0.5 * (w[0].dlambda_dmu + w[1].dlambda_dmu);
            assert!(
                (fd - avg).norm() < 0.05 * avg.norm().max(1e-3),
                "mu {} fd {fd} avg {avg}",
                w[0].mu
            );
        }
    }

    #[test]
    fn erlang_hopf_point_is_sharp() {
        let branch = continue_branch(&erlang_family, (1.5, 2.5), erlang_seed(), 0.05).unwrap();
        let rec = detect_hopf(&erlang_family, &branch).unwrap().unwrap();
        assert!((rec.mu_star - 2.0).abs() < 1e-8, "mu* {}", rec.mu_star);
        assert!((rec.omega - 1.0).abs() < 1e-8, "omega {}", rec.omega);
        assert!((rec.transversality - 0.1).abs() < 1e-6);
        assert!(rec.simple && rec.nonresonant);
    }

    fn discrete_family(mu: f64) -> Result<LinearFunctionalSpec> {
        Ok(functional::discrete_scalar(mu, 1.0, 0.3))
    }

    #[test]
    fn discrete_lag_hopf_at_half_pi() {
        let spec = discrete_family(1.2).unwrap();
        let region = ScanRegion::new(-0.8, 0.3, 0.2, 2.0).unwrap();
        let roots = spectral::find_roots(&spec, &region, 1e-12).unwrap();
        assert_eq!(roots.len(), 1);
        let seed = (1.2, roots[0].lambda0);
        let branch = continue_branch(&discrete_family, (1.2, 1.9), seed, 0.05).unwrap();
        let rec = detect_hopf(&discrete_family, &branch).unwrap().unwrap();
        let half_pi = std::f64::consts::FRAC_PI_2;
        assert!((rec.mu_star - half_pi).abs() < 1e-8, "mu* {}", rec.mu_star);
        assert!((rec.omega - half_pi).abs() < 1e-8, "omega {}", rec.omega);
        assert!(rec.transversality > 0.0);
    }

    /// x'(t) = -a (1 + x(t)) * integral of (-theta) e^{theta} x(t+theta):
    /// linearization at 0 is the Erlang-2 functional with rate 1.
    fn wright_erlang(a: f64) -> Result<ModelSpec> {
        let chan = KernelChannel::new(1.0, 1, 1, Arc::new(|x: &DVector<f64>| x.clone()));
        let assemble = Arc::new(move |ctx: &AssembleCtx| {
            DVector::from_vec(vec![-a * ctx.kernels[0][0] * (1.0 + ctx.x[0])])
        });
        Ok(ModelSpec::new("wright-erlang", 1, 0.5, vec![], vec![chan], assemble, BTreeMap::new())?
            .with_linearization(Arc::new(move |_p: &BTreeMap<String, f64>, xbar: &DVector<f64>| {
                // D f = -a(1+xbar) <kernel, .> - a <kernel, xbar> phi(0)
                let mass = xbar[0]; // kernel has unit mass at constants
                let mut spec = functional::erlang2(a * (1.0 + xbar[0]), 1.0, 0.5);
                if mass != 0.0 {
                    spec = LinearFunctionalSpec::new(
                        1,
                        0.5,
                        vec![DiscreteTerm {
                            matrix: DMatrix::from_element(1, 1, -a * mass),
                            tau: 0.0,
                        }],
                        spec.kernel_terms().to_vec(),
                    )?;
                }
                Ok(spec)
            })))
    }

    #[test]
    fn wright_erlang_limit_cycle_above_hopf() {
        let rec = HopfRecord {
            mu_star: 2.0,
            omega: 1.0,
            transversality: 0.1,
            simple: true,
            nonresonant: true,
            rows: vec![],
        };
        let out = verify_hopf_by_simulation(
            &wright_erlang,
            &rec,
            &[0.1],
            &DVector::from_vec(vec![0.0]),
            0.02,
            400.0,
            0.02,
        )
        .unwrap();
        assert_eq!(out.rows.len(), 1);
        let row = &out.rows[0];
        assert!(row.cycle_found, "no cycle: {row:?}");
        let period = row.period.unwrap();
        let tau = std::f64::consts::TAU;
        assert!(
            (period - tau).abs() < 0.02 * tau,
            "period {period} vs {tau}"
        );
        let amp = row.amplitude.unwrap();
        assert!(amp > 0.05 && amp < 1.0, "amplitude {amp}");
    }

    #[test]
    fn at_criticality_no_cycle_is_flagged() {
        let rec = HopfRecord {
            mu_star: 2.0,
            omega: 1.0,
            transversality: 0.1,
            simple: true,
            nonresonant: true,
            rows: vec![],
        };
        let out = verify_hopf_by_simulation(
            &wright_erlang,
            &rec,
            &[0.0],
            &DVector::from_vec(vec![0.0]),
            1e-3,
            200.0,
            0.02,
        )
        .unwrap();
        assert!(!out.rows[0].cycle_found);
    }
}
