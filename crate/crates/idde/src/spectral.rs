//! Characteristic roots and spectral data: argument-principle counting,
//! quadtree isolation with Newton polish on det Delta, pole orders, Laurent
//! coefficients of Delta(lambda)^{-1}, and the eigenprojectors built from
//! them.

use std::f64::consts::{FRAC_PI_3, TAU};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functional::LinearFunctionalSpec;
use crate::history::{BoundaryAugmentedState, HistoryFunction, Tail};
use crate::polyexp::binomial;
use crate::resolvent::inner_convolutions;

/// Scan rectangles must keep this much clearance from the kernel poles at
/// -delta_j, where the closed characteristic form stops representing L.
pub const POLE_MARGIN: f64 = 1e-3;
/// |det| below this (relative to ||Delta||_F^n) counts as "on a root".
pub const DET_FLOOR_REL: f64 = 1e-12;
/// Winding totals must land within this fraction of a turn on an integer.
pub const WINDING_SETTLE: f64 = 1e-3;
/// Cells smaller than this are treated as one (possibly multiple) root.
pub const CLUSTER_SIZE: f64 = 1e-6;
/// Singular values below this times sigma_max count as null directions.
pub const NULL_TOL: f64 = 1e-8;
/// Residual ceiling for the Laurent block-system validation.
pub const LAURENT_BLOCK_TOL: f64 = 1e-6;
/// Largest pole order the Laurent / projector machinery supports.
pub const MAX_POLE_SUPPORTED: usize = 4;

const MAX_PHASE_DEPTH: usize = 48;
const MAX_SUBDIV_DEPTH: usize = 40;
const NEWTON_START_DIAG: f64 = 0.1;
const SPLIT_FRACTIONS: [f64; 6] = [0.5, 0.53, 0.47, 0.56, 0.44, 0.515];

/// Rectangle in the complex plane searched for characteristic roots.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanRegion {
    pub re_min: f64,
    pub re_max: f64,
    pub im_min: f64,
    pub im_max: f64,
}

impl ScanRegion {
    pub fn new(re_min: f64, re_max: f64, im_min: f64, im_max: f64) -> Result<Self> {
        let r = ScanRegion { re_min, re_max, im_min, im_max };
        if ![re_min, re_max, im_min, im_max].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidSpec("scan region must have finite corners".into()));
        }
        if !(re_min < re_max) || !(im_min < im_max) {
            return Err(Error::InvalidSpec(format!(
                "scan region is degenerate: [{re_min}, {re_max}] x [{im_min}, {im_max}]"
            )));
        }
        Ok(r)
    }

    /// The closed form of Delta only represents L right of the kernel poles;
    /// reject regions that reach into them.
    pub fn validate_for(&self, spec: &LinearFunctionalSpec) -> Result<()> {
        if let Some(d) = spec.min_delta() {
            if self.re_min < -d + POLE_MARGIN {
                return Err(Error::InvalidSpec(format!(
                    "scan region reaches Re = {} but the characteristic form is only valid right of {} (kernel pole at -{d} plus margin)",
                    self.re_min,
                    -d + POLE_MARGIN
                )));
            }
        }
        Ok(())
    }

    pub fn center(&self) -> Complex64 {
        Complex64::new(0.5 * (self.re_min + self.re_max), 0.5 * (self.im_min + self.im_max))
    }

    pub fn diag(&self) -> f64 {
        let dr = self.re_max - self.re_min;
        let di = self.im_max - self.im_min;
        (dr * dr + di * di).sqrt()
    }

    pub fn contains(&self, z: Complex64, slack: f64) -> bool {
        z.re >= self.re_min - slack
            && z.re <= self.re_max + slack
            && z.im >= self.im_min - slack
            && z.im <= self.im_max + slack
    }

    fn corners(&self) -> [Complex64; 4] {
        [
            Complex64::new(self.re_min, self.im_min),
            Complex64::new(self.re_max, self.im_min),
            Complex64::new(self.re_max, self.im_max),
            Complex64::new(self.re_min, self.im_max),
        ]
    }

    fn split(&self, fr: f64, fi: f64) -> [ScanRegion; 4] {
        let rm = self.re_min + fr * (self.re_max - self.re_min);
        let im = self.im_min + fi * (self.im_max - self.im_min);
        [
            ScanRegion { re_min: self.re_min, re_max: rm, im_min: self.im_min, im_max: im },
            ScanRegion { re_min: rm, re_max: self.re_max, im_min: self.im_min, im_max: im },
            ScanRegion { re_min: self.re_min, re_max: rm, im_min: im, im_max: self.im_max },
            ScanRegion { re_min: rm, re_max: self.re_max, im_min: im, im_max: self.im_max },
        ]
    }
}

/// One characteristic root with its spectral data.
#[derive(Debug, Clone)]
pub struct SpectralRoot {
    pub lambda0: Complex64,
    /// order of lambda0 as a zero of det Delta
    pub multiplicity: usize,
    /// order of the pole of Delta(lambda)^{-1}
    pub pole_order: usize,
    /// Delta_{-1}, ..., Delta_{-pole_order}
    pub laurent: Vec<DMatrix<Complex64>>,
    /// right null vector of Delta(lambda0), present when the null space is 1D
    pub v: Option<DVector<Complex64>>,
    /// left null vector: w^T Delta(lambda0) = 0 (transpose, not conjugate)
    pub w: Option<DVector<Complex64>>,
    pub null_dim: usize,
    /// |det Delta(lambda0)| after polishing
    pub residual: f64,
    pub is_simple: bool,
}

pub(crate) fn det_with_scale(spec: &LinearFunctionalSpec, z: Complex64) -> Result<(Complex64, f64)> {
    let delta = spec.char_matrix(z)?;
    let scale = delta.norm().powi(spec.dim() as i32).max(f64::MIN_POSITIVE);
    Ok((delta.determinant(), scale))
}

/// Determinant with the near-root floor applied (contour traversal must not
/// step onto a root).
fn det_checked(spec: &LinearFunctionalSpec, z: Complex64) -> Result<Complex64> {
    let (d, scale) = det_with_scale(spec, z)?;
    if d.norm() <= DET_FLOOR_REL * scale {
        return Err(Error::ContourProximity { det_abs: d.norm() });
    }
    Ok(d)
}

/// Adjugate via cofactors; stays finite at singular matrices, which is what
/// Newton needs at a root.
fn adjugate(m: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let n = m.nrows();
    if n == 1 {
        return DMatrix::identity(1, 1);
    }
    let mut adj = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let minor = m.clone().remove_row(i).remove_column(j);
            let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
            adj[(j, i)] = minor.determinant() * sign;
        }
    }
    adj
}

/// d/dlambda det Delta = tr(adj(Delta) Delta') (Jacobi's formula).
pub(crate) fn det_derivative(spec: &LinearFunctionalSpec, z: Complex64) -> Result<Complex64> {
    let delta = spec.char_matrix(z)?;
    let dprime = spec.char_matrix_derivative(z, 1)?;
    let adj = adjugate(&delta);
    let mut tr = Complex64::new(0.0, 0.0);
    for i in 0..delta.nrows() {
        for k in 0..delta.nrows() {
            tr += adj[(i, k)] * dprime[(k, i)];
        }
    }
    Ok(tr)
}

fn phase_along(
    spec: &LinearFunctionalSpec,
    z0: Complex64,
    d0: Complex64,
    z1: Complex64,
    d1: Complex64,
    depth: usize,
) -> Result<f64> {
    let zm = 0.5 * (z0 + z1);
    let dm = det_checked(spec, zm)?;
    let a = (dm / d0).arg();
    let b = (d1 / dm).arg();
    if a.abs() < FRAC_PI_3 && b.abs() < FRAC_PI_3 && depth >= 1 {
        return Ok(a + b);
    }
    if depth >= MAX_PHASE_DEPTH {
        return Err(Error::WindingUnstable(format!(
            "phase increment did not settle between {z0} and {z1}"
        )));
    }
    Ok(phase_along(spec, z0, d0, zm, dm, depth + 1)?
        + phase_along(spec, zm, dm, z1, d1, depth + 1)?)
}

fn winding_along_loop(spec: &LinearFunctionalSpec, pts: &[Complex64]) -> Result<usize> {
    let dets: Vec<Complex64> =
        pts.iter().map(|&z| det_checked(spec, z)).collect::<Result<_>>()?;
    let mut total = 0.0;
    for i in 0..pts.len() {
        let j = (i + 1) % pts.len();
        total += phase_along(spec, pts[i], dets[i], pts[j], dets[j], 0)?;
    }
    let turns = total / TAU;
    let rounded = turns.round();
    if (turns - rounded).abs() > WINDING_SETTLE {
        return Err(Error::WindingUnstable(format!(
            "winding total {turns} is not close to an integer"
        )));
    }
    if rounded < -0.5 {
        return Err(Error::WindingUnstable(format!(
            "negative winding {rounded} for an analytic determinant"
        )));
    }
    Ok(rounded.max(0.0) as usize)
}

fn rect_winding(spec: &LinearFunctionalSpec, rect: &ScanRegion) -> Result<usize> {
    winding_along_loop(spec, &rect.corners())
}

fn circle_winding(spec: &LinearFunctionalSpec, center: Complex64, radius: f64) -> Result<usize> {
    let n = 16;
    let pts: Vec<Complex64> = (0..n)
        .map(|k| center + Complex64::from_polar(radius, TAU * k as f64 / n as f64))
        .collect();
    winding_along_loop(spec, &pts)
}

/// Number of zeros of det Delta inside the rectangle, counted with
/// multiplicity (argument principle on the boundary).
pub fn count_roots(spec: &LinearFunctionalSpec, region: &ScanRegion) -> Result<usize> {
    region.validate_for(spec)?;
    rect_winding(spec, region)
}

pub(crate) fn newton_polish(
    spec: &LinearFunctionalSpec,
    start: Complex64,
    mult: usize,
    tol: f64,
) -> Result<Complex64> {
    let mut z = start;
    for _ in 0..80 {
        let (d, _) = det_with_scale(spec, z)?;
        let dp = det_derivative(spec, z)?;
        if dp.norm() == 0.0 {
            if d.norm() == 0.0 {
                // sitting exactly on a multiple root
                return Ok(z);
            }
            return Err(Error::NewtonDivergence(format!("flat determinant derivative at {z}")));
        }
        let step = d / dp * mult as f64;
        z -= step;
        if !z.re.is_finite() || !z.im.is_finite() {
            return Err(Error::NewtonDivergence(format!("iterate diverged from {start}")));
        }
        if step.norm() <= tol * (1.0 + z.norm()) {
            return Ok(z);
        }
    }
    Err(Error::NewtonDivergence(format!("no convergence from {start}")))
}

/// Newton refinement of a root estimate with known multiplicity. Works
/// anywhere the characteristic determinant is meromorphic, including left
/// of every scan floor, but does no isolation: the start must be close.
pub fn refine_root(
    spec: &LinearFunctionalSpec,
    start: Complex64,
    multiplicity: usize,
    tol: f64,
) -> Result<Complex64> {
    if multiplicity == 0 {
        return Err(Error::InvalidSpec("multiplicity must be positive".into()));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidSpec(format!("tolerance {tol} must be positive")));
    }
    newton_polish(spec, start, multiplicity, tol)
}

fn isolate(
    spec: &LinearFunctionalSpec,
    rect: &ScanRegion,
    count: usize,
    depth: usize,
    tol: f64,
    out: &mut Vec<(Complex64, usize)>,
) -> Result<()> {
    if count == 0 {
        return Ok(());
    }
    let diag = rect.diag();
    // a count-m cell of diameter d has |det| ~ (d/2)^m on its boundary, so
    // subdividing below this hits the near-root determinant floor
    let cluster = if count == 1 {
        NEWTON_START_DIAG
    } else {
        (DET_FLOOR_REL * 1e2).powf(1.0 / count as f64).max(CLUSTER_SIZE)
    };
    if diag < cluster {
        match newton_polish(spec, rect.center(), count, tol) {
            Ok(z) if count > 1 || rect.contains(z, diag) => {
                out.push((z, count));
                return Ok(());
            }
            Ok(_) => {
                // landed outside the cell: distrust, subdivide more
            }
            Err(Error::NewtonDivergence(_)) if count == 1 => {
                // stalled: subdivide more
            }
            Err(e) => return Err(e),
        }
    }
    if depth >= MAX_SUBDIV_DEPTH {
        return Err(Error::SubdivisionDepth);
    }
    let mut last_err: Option<Error> = None;
    'attempts: for &fr in &SPLIT_FRACTIONS {
        let children = rect.split(fr, fr);
        let mut counts = [0usize; 4];
        for (k, child) in children.iter().enumerate() {
            match rect_winding(spec, child) {
                Ok(c) => counts[k] = c,
                Err(e @ (Error::ContourProximity { .. } | Error::WindingUnstable(_))) => {
                    last_err = Some(e);
                    continue 'attempts;
                }
                Err(e) => return Err(e),
            }
        }
        if counts.iter().sum::<usize>() != count {
            last_err = Some(Error::WindingUnstable(format!(
                "child counts {counts:?} disagree with parent count {count}"
            )));
            continue;
        }
        for (child, c) in children.iter().zip(counts) {
            isolate(spec, child, c, depth + 1, tol, out)?;
        }
        return Ok(());
    }
    Err(last_err.unwrap_or(Error::SubdivisionDepth))
}

/// Distance from lambda0 to the nearest kernel pole of the characteristic
/// form (infinity when the spec has no kernels).
fn pole_distance(spec: &LinearFunctionalSpec, z: Complex64) -> f64 {
    spec.kernel_terms()
        .iter()
        .map(|k| (z + Complex64::new(k.delta, 0.0)).norm())
        .fold(f64::INFINITY, f64::min)
}

fn ring_inverse_sup(
    spec: &LinearFunctionalSpec,
    center: Complex64,
    radius: f64,
    k: usize,
) -> Result<f64> {
    let n = 16;
    let mut sup: f64 = 0.0;
    for l in 0..n {
        let w = Complex64::from_polar(radius, TAU * l as f64 / n as f64);
        let delta = spec.char_matrix(center + w)?;
        let inv = delta.try_inverse().ok_or(Error::PoleOrderAmbiguous {
            lambda: (center.re, center.im),
            reason: "singular characteristic matrix on the probe ring".into(),
        })?;
        sup = sup.max(w.norm().powi(k as i32) * inv.norm());
    }
    Ok(sup)
}

/// Order of the pole of Delta(lambda)^{-1} at a root: smallest k for which
/// (lambda - lambda0)^k Delta^{-1} stays bounded and nonzero on shrinking
/// rings, cross-checked against the det multiplicity when the null space is
/// one-dimensional.
pub fn pole_order(spec: &LinearFunctionalSpec, lambda0: Complex64) -> Result<usize> {
    pole_order_with_radius(spec, lambda0, default_probe_radius(spec, lambda0))
}

fn default_probe_radius(spec: &LinearFunctionalSpec, lambda0: Complex64) -> f64 {
    (0.4 * pole_distance(spec, lambda0)).min(1e-3)
}

fn pole_order_with_radius(
    spec: &LinearFunctionalSpec,
    lambda0: Complex64,
    r0: f64,
) -> Result<usize> {
    if !(r0 > 1e-9) {
        return Err(Error::PoleOrderAmbiguous {
            lambda: (lambda0.re, lambda0.im),
            reason: format!("probe radius {r0} too small"),
        });
    }
    let radii = [r0, r0 / 10.0, r0 / 100.0];
    let mut sups = Vec::new();
    for k in 0..=MAX_POLE_SUPPORTED + 1 {
        let row: Vec<f64> = radii
            .iter()
            .map(|&r| ring_inverse_sup(spec, lambda0, r, k))
            .collect::<Result<_>>()?;
        sups.push(row);
    }
    let mut k0 = None;
    for (k, row) in sups.iter().enumerate().skip(1).take(MAX_POLE_SUPPORTED) {
        let t1 = row[1] / row[0];
        let t2 = row[2] / row[1];
        if (0.3..3.0).contains(&t1) && (0.3..3.0).contains(&t2) {
            k0 = Some(k);
            break;
        }
    }
    let k0 = k0.ok_or_else(|| Error::PoleOrderAmbiguous {
        lambda: (lambda0.re, lambda0.im),
        reason: format!(
            "no stabilizing power up to {MAX_POLE_SUPPORTED}; sup table {sups:?}"
        ),
    })?;
    // one-dimensional null space forces pole order == det multiplicity
    let (null_dim, _) = null_space(spec, lambda0)?;
    if null_dim == 1 {
        let mdet = circle_winding(spec, lambda0, r0)?;
        if mdet != k0 {
            return Err(Error::PoleOrderAmbiguous {
                lambda: (lambda0.re, lambda0.im),
                reason: format!(
                    "ring limit suggests order {k0} but det multiplicity is {mdet} with a 1D null space"
                ),
            });
        }
    }
    Ok(k0)
}

/// Right and left null vectors (v, w) with Delta v = 0 and w^T Delta = 0.
pub type NullVectors = (DVector<Complex64>, DVector<Complex64>);

/// Null-space dimension of Delta(lambda0) and, when it is one-dimensional,
/// the deterministic right/left null vectors.
pub fn null_space(
    spec: &LinearFunctionalSpec,
    lambda0: Complex64,
) -> Result<(usize, Option<NullVectors>)> {
    let delta = spec.char_matrix(lambda0)?;
    let n = delta.nrows();
    let svd = delta.clone().svd(true, true);
    let sigma = &svd.singular_values;
    // sigma_max alone is no scale when the whole matrix vanishes (scalar
    // specs at a root); fall back on derivative norms
    let scale = sigma
        .max()
        .max(spec.char_matrix_derivative(lambda0, 1)?.norm())
        .max(spec.char_matrix_derivative(lambda0, 2)?.norm())
        .max(f64::MIN_POSITIVE);
    let null_dim = sigma.iter().filter(|&&s| s < NULL_TOL * scale).count();
    if null_dim != 1 {
        return Ok((null_dim, None));
    }
    let u = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v_t requested");
    // right null vector: conjugate of the last row of V^H
    let mut v = DVector::from_fn(n, |i, _| vt[(n - 1, i)].conj());
    // left null vector in the transpose sense: w^T Delta = 0 with w = conj(u_last)
    let mut w = DVector::from_fn(n, |i, _| u[(i, n - 1)].conj());
    normalize_phase(&mut v);
    normalize_phase(&mut w);
    Ok((1, Some((v, w))))
}

/// Unit norm, largest-magnitude entry rotated to the positive real axis.
fn normalize_phase(v: &mut DVector<Complex64>) {
    let norm = v.norm();
    if norm > 0.0 {
        *v /= Complex64::new(norm, 0.0);
    }
    let mut best = 0;
    for i in 1..v.len() {
        if v[i].norm() > v[best].norm() {
            best = i;
        }
    }
    let pivot = v[best];
    if pivot.norm() > 0.0 {
        let rot = pivot.conj() / pivot.norm();
        *v *= rot;
    }
}

/// Principal-part matrices Delta_{-1}, ..., Delta_{-k0} of Delta(lambda)^{-1}
/// at lambda0, extracted on a sample ring and validated against the Cauchy
/// product identity Delta^{-1}(lambda) Delta(lambda) = I order by order.
pub fn laurent_coeffs(
    spec: &LinearFunctionalSpec,
    lambda0: Complex64,
    k0: usize,
) -> Result<Vec<DMatrix<Complex64>>> {
    let base = if k0 <= 2 { 1e-3 } else { 1e-2 };
    laurent_with_radius(spec, lambda0, k0, (0.4 * pole_distance(spec, lambda0)).min(base))
}

fn laurent_with_radius(
    spec: &LinearFunctionalSpec,
    lambda0: Complex64,
    k0: usize,
    r0: f64,
) -> Result<Vec<DMatrix<Complex64>>> {
    if k0 == 0 || k0 > MAX_POLE_SUPPORTED {
        return Err(Error::UnsupportedPoleOrder { k0 });
    }
    let n_pts = 64;
    let dim = spec.dim();
    let mut last_residual = f64::INFINITY;
    let mut radius = r0;
    for _ in 0..3 {
        let mut coeffs = vec![DMatrix::<Complex64>::zeros(dim, dim); k0];
        let mut ok = true;
        for l in 0..n_pts {
            let w = Complex64::from_polar(radius, TAU * l as f64 / n_pts as f64);
            let delta = spec.char_matrix(lambda0 + w)?;
            let inv = match delta.try_inverse() {
                Some(m) => m,
                None => {
                    ok = false;
                    break;
                }
            };
            for (j, c) in coeffs.iter_mut().enumerate() {
                // Delta_{-j-1} = (1/N) sum_l Delta^{-1}(lambda_l) w_l^{j+1}
                *c += &inv * (w.powu(j as u32 + 1) / n_pts as f64);
            }
        }
        if ok {
            let residual = laurent_block_residual(spec, lambda0, &coeffs)?;
            if residual < LAURENT_BLOCK_TOL {
                return Ok(coeffs);
            }
            last_residual = residual;
        }
        radius /= 10.0;
    }
    Err(Error::LaurentResidual { residual: last_residual })
}

/// Residual of the order-by-order identity: with T_s = Delta^{(s)}(l0)/s!,
/// sum_{s=0}^{i} Delta_{-k0+i-s} T_s = 0 for i = 0..k0-1, plus the
/// transposed-side version. Scaled by the participating norms.
fn laurent_block_residual(
    spec: &LinearFunctionalSpec,
    lambda0: Complex64,
    coeffs: &[DMatrix<Complex64>],
) -> Result<f64> {
    let k0 = coeffs.len();
    let dim = spec.dim();
    let mut taylor = Vec::with_capacity(k0);
    let mut fact = 1.0;
    for s in 0..k0 {
        if s > 0 {
            fact *= s as f64;
        }
        taylor.push(spec.char_matrix_derivative(lambda0, s)? / Complex64::new(fact, 0.0));
    }
    let scale = coeffs
        .iter()
        .chain(taylor.iter())
        .map(|m| m.norm())
        .fold(1.0f64, f64::max);
    let get = |j: usize| -> &DMatrix<Complex64> { &coeffs[j - 1] }; // Delta_{-j}
    let mut worst: f64 = 0.0;
    for i in 0..k0 {
        let mut left = DMatrix::<Complex64>::zeros(dim, dim);
        let mut right = DMatrix::<Complex64>::zeros(dim, dim);
        for (s, tay) in taylor.iter().enumerate().take(i + 1) {
            let j = k0 - i + s; // Delta_{-k0+i-s} = Delta_{-j}
            left += get(j) * tay;
            right += tay * get(j);
        }
        worst = worst.max(left.norm()).max(right.norm());
    }
    Ok(worst / (scale * scale))
}

/// Finds all roots in the region with full spectral data attached, sorted by
/// (Re, Im); conjugate pairs are returned exactly symmetric.
pub fn find_roots(
    spec: &LinearFunctionalSpec,
    region: &ScanRegion,
    tol: f64,
) -> Result<Vec<SpectralRoot>> {
    region.validate_for(spec)?;
    if !(tol > 0.0) {
        return Err(Error::InvalidSpec(format!("root tolerance must be positive, got {tol}")));
    }
    let total = rect_winding(spec, region)?;
    let mut raw: Vec<(Complex64, usize)> = Vec::new();
    if total > 0 {
        isolate(spec, region, total, 0, tol, &mut raw)?;
    }
    // merge candidates that landed on the same root from adjacent cells
    let mut merged: Vec<(Complex64, usize)> = Vec::new();
    'outer: for (z, m) in raw {
        for (zm, mm) in merged.iter_mut() {
            if (z - *zm).norm() < 1e-7 * (1.0 + z.norm()) {
                *mm = (*mm).max(m);
                continue 'outer;
            }
        }
        merged.push((z, m));
    }
    if merged.iter().map(|&(_, m)| m).sum::<usize>() != total {
        return Err(Error::WindingUnstable(format!(
            "isolated multiplicities sum to {} but the region count is {total}",
            merged.iter().map(|&(_, m)| m).sum::<usize>()
        )));
    }
    // snap near-real roots, then enforce exact conjugate symmetry
    for (z, _) in merged.iter_mut() {
        if z.im.abs() < 1e-9 * (1.0 + z.norm()) {
            z.im = 0.0;
        }
    }
    let snapshot = merged.clone();
    for (z, _) in merged.iter_mut() {
        if z.im < 0.0 {
            if let Some((zp, _)) = snapshot
                .iter()
                .find(|(q, _)| q.im > 0.0 && (q.conj() - *z).norm() < 1e-6 * (1.0 + z.norm()))
            {
                *z = zp.conj();
            }
        }
    }
    merged.sort_by(|a, b| {
        (a.0.re, a.0.im)
            .partial_cmp(&(b.0.re, b.0.im))
            .expect("finite roots")
    });
    let lambdas: Vec<Complex64> = merged.iter().map(|&(z, _)| z).collect();
    let mut out = Vec::with_capacity(merged.len());
    for (idx, &(z, mult)) in merged.iter().enumerate() {
        let mut nearest = f64::INFINITY;
        for (j, &zq) in lambdas.iter().enumerate() {
            if j != idx {
                nearest = nearest.min((zq - z).norm());
            }
        }
        let probe = default_probe_radius(spec, z).min(0.3 * nearest).max(1e-8);
        let k0 = pole_order_with_radius(spec, z, probe)?;
        let laurent = laurent_with_radius(
            spec,
            z,
            k0,
            (0.4 * pole_distance(spec, z))
                .min(0.3 * nearest)
                .min(if k0 <= 2 { 1e-3 } else { 1e-2 }),
        )?;
        let (null_dim, vw) = null_space(spec, z)?;
        let (v, w) = match vw {
            Some((v, w)) => (Some(v), Some(w)),
            None => (None, None),
        };
        let (d, _) = det_with_scale(spec, z)?;
        out.push(SpectralRoot {
            lambda0: z,
            multiplicity: mult,
            pole_order: k0,
            laurent,
            v,
            w,
            null_dim,
            residual: d.norm(),
            is_simple: k0 == 1 && null_dim == 1,
        });
    }
    Ok(out)
}

/// Residue-normalized rank-one principal coefficient for a simple root:
/// Delta_{-1} = V W^T / (W^T Delta'(lambda0) V).
fn simple_residue_matrix(
    spec: &LinearFunctionalSpec,
    root: &SpectralRoot,
) -> Result<DMatrix<Complex64>> {
    let (v, w) = match (&root.v, &root.w) {
        (Some(v), Some(w)) => (v, w),
        _ => {
            return Err(Error::NotSimple {
                lambda: (root.lambda0.re, root.lambda0.im),
                reason: format!("null space dimension is {}", root.null_dim),
            })
        }
    };
    let dprime = spec.char_matrix_derivative(root.lambda0, 1)?;
    let denom: Complex64 = (w.transpose() * &dprime * v)[(0, 0)];
    if denom.norm() <= 1e-12 * dprime.norm().max(1.0) {
        return Err(Error::NotSimple {
            lambda: (root.lambda0.re, root.lambda0.im),
            reason: "degenerate normalization w^T Delta' v ~ 0".into(),
        });
    }
    let n = v.len();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] = v[i] * w[j] / denom;
        }
    }
    Ok(m)
}

fn check_projector_domain(spec: &LinearFunctionalSpec, lambda0: Complex64) -> Result<()> {
    if let Some(d) = spec.min_delta() {
        if lambda0.re <= -d + POLE_MARGIN {
            return Err(Error::Domain(format!(
                "projector convolutions diverge for Re lambda0 <= {} (kernel pole at -{d})",
                -d + POLE_MARGIN
            )));
        }
    }
    Ok(())
}

/// Spectral projection onto the eigenspace of a simple root:
/// psi(theta) = e^{lambda0 theta} Delta_{-1} [alpha + phi(0) + L(chi_0)],
/// with chi_0 the inner convolution of phi at lambda0.
pub fn projector_simple(
    spec: &LinearFunctionalSpec,
    root: &SpectralRoot,
    state: &BoundaryAugmentedState<Complex64>,
) -> Result<HistoryFunction<Complex64>> {
    if !root.is_simple {
        return Err(Error::NotSimple {
            lambda: (root.lambda0.re, root.lambda0.im),
            reason: format!(
                "pole order {} with {}-dimensional null space",
                root.pole_order, root.null_dim
            ),
        });
    }
    check_projector_domain(spec, root.lambda0)?;
    let phi = &state.history;
    let chi = inner_convolutions(phi, root.lambda0, 0).remove(0);
    let l_chi = spec.apply(&chi)?;
    let bracket = &state.alpha + phi.at_zero() + l_chi;
    let residue = simple_residue_matrix(spec, root)?;
    let coeff = residue * bracket;
    let values = phi
        .grid()
        .iter()
        .map(|&t| &coeff * (root.lambda0 * t).exp())
        .collect();
    HistoryFunction::from_samples(
        phi.eta(),
        phi.grid().to_vec(),
        values,
        Tail::WeightedContinuation,
        phi.interp(),
    )
}

/// Spectral projection for a root of any supported pole order:
/// psi = sum_{j<k0} (1/j!) Delta_{-1-j} sum_{k<=j} C(j,k) theta^k e^{lambda0 theta} d_{j-k},
/// where d_0 = alpha + phi(0) + L(chi_0) and d_i = L(chi_i) for i >= 1.
pub fn projector_general(
    spec: &LinearFunctionalSpec,
    root: &SpectralRoot,
    state: &BoundaryAugmentedState<Complex64>,
) -> Result<HistoryFunction<Complex64>> {
    let k0 = root.pole_order;
    if k0 > MAX_POLE_SUPPORTED {
        return Err(Error::UnsupportedPoleOrder { k0 });
    }
    if root.laurent.len() != k0 {
        return Err(Error::InvalidSpec(format!(
            "root carries {} Laurent matrices for pole order {k0}",
            root.laurent.len()
        )));
    }
    check_projector_domain(spec, root.lambda0)?;
    let phi = &state.history;
    let chis = inner_convolutions(phi, root.lambda0, k0 - 1);
    let mut d = Vec::with_capacity(k0);
    d.push(&state.alpha + phi.at_zero() + spec.apply(&chis[0])?);
    for chi in chis.iter().skip(1) {
        d.push(spec.apply(chi)?);
    }
    let mut fact = 1.0;
    // coefficient of theta^k e^{lambda0 theta}: sum over j of the matrices
    let mut theta_coeffs: Vec<DVector<Complex64>> =
        vec![DVector::zeros(spec.dim()); k0];
    for j in 0..k0 {
        if j > 0 {
            fact *= j as f64;
        }
        for k in 0..=j {
            let scal = binomial(j, k) / fact;
            theta_coeffs[k] += &root.laurent[j] * &d[j - k] * Complex64::new(scal, 0.0);
        }
    }
    let values = phi
        .grid()
        .iter()
        .map(|&t| {
            let e = (root.lambda0 * t).exp();
            let mut acc = DVector::<Complex64>::zeros(spec.dim());
            let mut p = Complex64::new(1.0, 0.0);
            for c in &theta_coeffs {
                acc += c * (p * e);
                p *= Complex64::new(t, 0.0);
            }
            acc
        })
        .collect();
    HistoryFunction::from_samples(
        phi.eta(),
        phi.grid().to_vec(),
        values,
        Tail::WeightedContinuation,
        phi.interp(),
    )
}
