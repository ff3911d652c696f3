//! Shared fixtures for the integration suites: seeded random states, a plain
//! RK4 driver for chain-ODE oracles, and composite Gauss-Legendre quadrature.

#![allow(dead_code)]

use idde::history::{HistoryFunction, Tail, InterpOrder};
use idde::history::BoundaryAugmentedState;
use nalgebra::DVector;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

pub fn rng(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}

/// Bounded smooth history: a random three-term trigonometric mixture per
/// component, so it lies in every BUC_eta with an O(1) sup norm.
pub fn random_history(
    rng: &mut ChaCha12Rng,
    dim: usize,
    eta: f64,
    nodes: usize,
) -> HistoryFunction<f64> {
    let mut coefs = Vec::new();
    for _ in 0..dim {
        let base: f64 = rng.gen_range(-1.5..1.5);
        let terms: Vec<(f64, f64, f64)> = (0..3)
            .map(|_| {
                (
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(0.3..3.0),
                    rng.gen_range(0.0..std::f64::consts::TAU),
                )
            })
            .collect();
        coefs.push((base, terms));
    }
    HistoryFunction::from_fn(eta, nodes, Tail::WeightedContinuation, InterpOrder::Cubic, |t| {
        DVector::from_iterator(
            dim,
            coefs.iter().map(|(base, terms)| {
                base + terms
                    .iter()
                    .map(|(a, w, p)| a * (w * t + p).cos())
                    .sum::<f64>()
            }),
        )
    })
    .expect("valid random history")
}

pub fn random_state(
    rng: &mut ChaCha12Rng,
    dim: usize,
    eta: f64,
    nodes: usize,
) -> BoundaryAugmentedState<f64> {
    let phi = random_history(rng, dim, eta, nodes);
    let alpha = DVector::from_iterator(dim, (0..dim).map(|_| rng.gen_range(-2.0..2.0)));
    BoundaryAugmentedState::new(alpha, phi).expect("dims agree")
}

pub fn random_complex_state(
    rng: &mut ChaCha12Rng,
    dim: usize,
    eta: f64,
    nodes: usize,
) -> BoundaryAugmentedState<Complex64> {
    let re = random_state(rng, dim, eta, nodes);
    let im_phi = random_history(rng, dim, eta, nodes);
    let im_alpha =
        DVector::from_iterator(dim, (0..dim).map(|_| rng.gen_range(-2.0..2.0)));
    let phi = HistoryFunction::from_samples(
        eta,
        re.history.grid().to_vec(),
        re.history
            .values()
            .iter()
            .zip(im_phi.values())
            .map(|(a, b)| {
                DVector::from_iterator(
                    dim,
                    a.iter().zip(b.iter()).map(|(&x, &y)| Complex64::new(x, y)),
                )
            })
            .collect(),
        Tail::WeightedContinuation,
        InterpOrder::Cubic,
    )
    .expect("valid complex history");
    let alpha = DVector::from_iterator(
        dim,
        re.alpha
            .iter()
            .zip(im_alpha.iter())
            .map(|(&x, &y)| Complex64::new(x, y)),
    );
    BoundaryAugmentedState::new(alpha, phi).expect("dims agree")
}

/// Fixed-step RK4 on y' = f(t, y), recording every step (t_k, y_k) including
/// the initial point. The horizon is trimmed to an integer number of steps.
pub fn rk4_trace<F>(f: F, y0: DVector<f64>, t1: f64, h: f64) -> Vec<(f64, DVector<f64>)>
where
    F: Fn(f64, &DVector<f64>) -> DVector<f64>,
{
    let n = (t1 / h).round() as usize;
    let mut out = Vec::with_capacity(n + 1);
    let mut y = y0;
    out.push((0.0, y.clone()));
    for k in 0..n {
        let t = k as f64 * h;
        let k1 = f(t, &y);
        let k2 = f(t + 0.5 * h, &(&y + &k1 * (0.5 * h)));
        let k3 = f(t + 0.5 * h, &(&y + &k2 * (0.5 * h)));
        let k4 = f(t + h, &(&y + &k3 * h));
        y += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        out.push(((k + 1) as f64 * h, y.clone()));
    }
    out
}

/// 8-point Gauss-Legendre abscissae/weights on [-1, 1].
const GL8_X: [f64; 8] = [
    -0.960_289_856_497_536_2,
    -0.796_666_477_413_626_7,
    -0.525_532_409_916_329,
    -0.183_434_642_495_65,
    0.183_434_642_495_65,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_2,
];
const GL8_W: [f64; 8] = [
    0.101_228_536_290_376_26,
    0.222_381_034_453_374_47,
    0.313_706_645_877_887_3,
    0.362_683_783_378_362,
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_47,
    0.101_228_536_290_376_26,
];

/// Composite Gauss-Legendre with panels no wider than `panel`, accurate to
/// machine precision for the mildly oscillatory integrands used here.
pub fn integrate_gl<F>(a: f64, b: f64, panel: f64, f: F) -> DVector<Complex64>
where
    F: Fn(f64) -> DVector<Complex64>,
{
    assert!(b >= a && panel > 0.0);
    let n = ((b - a) / panel).ceil().max(1.0) as usize;
    let w = (b - a) / n as f64;
    let mut acc: Option<DVector<Complex64>> = None;
    for k in 0..n {
        let (lo, hi) = (a + k as f64 * w, a + (k + 1) as f64 * w);
        let (mid, half) = (0.5 * (lo + hi), 0.5 * (hi - lo));
        for (x, wt) in GL8_X.iter().zip(GL8_W.iter()) {
            let v = f(mid + half * x) * Complex64::new(wt * half, 0.0);
            acc = Some(match acc {
                Some(s) => s + v,
                None => v,
            });
        }
    }
    acc.expect("at least one panel")
}

/// Max over grid nodes of the eta-weighted pointwise distance between two
/// complex histories sharing a grid.
pub fn weighted_node_distance(
    a: &HistoryFunction<Complex64>,
    b: &HistoryFunction<Complex64>,
) -> f64 {
    assert_eq!(a.grid().len(), b.grid().len());
    let eta = a.eta();
    a.grid()
        .iter()
        .zip(a.values().iter().zip(b.values()))
        .map(|(&t, (x, y))| (eta * t).exp() * (x - y).norm())
        .fold(0.0, f64::max)
}
