//! Closed-form integrals of u^k * exp(a*u) used throughout the crate:
//! kernel moments, resolvent convolutions, and the solver's running
//! convolution state all reduce to these primitives.

use nalgebra::ComplexField;

/// I_k = int_0^h u^k e^{a u} du for k = 0..=kmax.
///
/// Branches keep every path cancellation-free:
/// small |a h| uses the entire-series expansion, Re a >= 0 the upward
/// recurrence, Re a < 0 the reflection u -> h - u onto the stable side.
pub fn int_uk_exp<T>(a: T, h: f64, kmax: usize) -> Vec<T>
where
    T: ComplexField<RealField = f64> + Copy,
{
    assert!(h >= 0.0, "negative interval width");
    if h == 0.0 {
        return vec![T::zero(); kmax + 1];
    }
    let ah = a.modulus() * h;
    if ah < 0.9 {
        return series(a, h, kmax);
    }
    if a.real() >= 0.0 {
        return recurrence(a, h, kmax);
    }
    // Re a < 0: I_k(a) = e^{a h} * sum_r C(k,r) h^{k-r} (-1)^r J_r with
    // J_r = int_0^h v^r e^{-a v} dv, Re(-a) > 0.
    let j = recurrence(-a, h, kmax);
    let eah = (a * T::from_real(h)).exp();
    let mut out = Vec::with_capacity(kmax + 1);
    for k in 0..=kmax {
        let mut acc = T::zero();
        let mut sign = 1.0;
        for (r, &jr) in j.iter().enumerate().take(k + 1) {
            let c = binomial(k, r) * h.powi((k - r) as i32) * sign;
            acc += jr * T::from_real(c);
            sign = -sign;
        }
        out.push(eah * acc);
    }
    out
}

fn series<T>(a: T, h: f64, kmax: usize) -> Vec<T>
where
    T: ComplexField<RealField = f64> + Copy,
{
    let mut out = Vec::with_capacity(kmax + 1);
    for k in 0..=kmax {
        // sum_j a^j h^{k+j+1} / (j! (k+j+1))
        let mut term = T::from_real(h.powi(k as i32 + 1));
        let mut acc = term * T::from_real(1.0 / (k as f64 + 1.0));
        let mut j = 1.0;
        loop {
            term = term * a * T::from_real(h / j);
            let add = term * T::from_real(1.0 / (k as f64 + j + 1.0));
            acc += add;
            if add.modulus() <= 1e-18 * acc.modulus().max(1e-300) {
                break;
            }
            j += 1.0;
            debug_assert!(j < 200.0);
        }
        out.push(acc);
    }
    out
}

fn recurrence<T>(a: T, h: f64, kmax: usize) -> Vec<T>
where
    T: ComplexField<RealField = f64> + Copy,
{
    let eah = (a * T::from_real(h)).exp();
    let ainv = T::one() / a;
    let mut out = Vec::with_capacity(kmax + 1);
    out.push((eah - T::one()) * ainv);
    for k in 1..=kmax {
        let prev = out[k - 1];
        let hk = T::from_real(h.powi(k as i32));
        out.push((hk * eah - prev * T::from_real(k as f64)) * ainv);
    }
    out
}

/// M_p = int_T^inf u^p e^{-beta u} du for p = 0..=pmax; requires Re beta > 0.
pub fn tail_moments<T>(beta: T, big_t: f64, pmax: usize) -> Vec<T>
where
    T: ComplexField<RealField = f64> + Copy,
{
    assert!(beta.real() > 0.0, "divergent tail moment");
    let binv = T::one() / beta;
    let ebt = (-beta * T::from_real(big_t)).exp();
    let mut out = Vec::with_capacity(pmax + 1);
    out.push(ebt * binv);
    for p in 1..=pmax {
        let tp = T::from_real(big_t.powi(p as i32));
        let m = (ebt * tp + out[p - 1] * T::from_real(p as f64)) * binv;
        out.push(m);
    }
    out
}

pub fn binomial(n: usize, k: usize) -> f64 {
    let mut acc = 1.0;
    for i in 0..k.min(n - k) {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc
}

pub fn factorial(n: usize) -> f64 {
    (1..=n).fold(1.0, |acc, i| acc * i as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    fn simpson<F: Fn(f64) -> Complex64>(f: F, a: f64, b: f64, n: usize) -> Complex64 {
        let h = (b - a) / n as f64;
        let mut acc = f(a) + f(b);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += f(a + i as f64 * h) * w;
        }
        acc * (h / 3.0)
    }

    #[test]
    fn matches_quadrature_across_branches() {
        let cases = [
            (Complex64::new(0.0, 0.0), 0.7),
            (Complex64::new(0.3, 0.0), 1.3),
            (Complex64::new(-0.2, 0.1), 0.4),
            (Complex64::new(4.0, 3.0), 2.0),
            (Complex64::new(-5.0, 2.0), 1.5),
            (Complex64::new(-12.0, 0.0), 2.0),
            (Complex64::new(0.0, 8.0), 1.0),
        ];
        for (a, h) in cases {
            let got = int_uk_exp(a, h, 6);
            for (k, g) in got.iter().enumerate() {
                let want = simpson(|u| u.powi(k as i32) * (a * u).exp(), 0.0, h, 4000);
                let scale = want.norm().max(1e-12);
                assert!(
                    (g - want).norm() / scale < 1e-9,
                    "a={a} h={h} k={k}: got {g}, want {want}"
                );
            }
        }
    }

    #[test]
    fn zero_width_is_zero() {
        let v = int_uk_exp(Complex64::new(1.0, 1.0), 0.0, 3);
        assert!(v.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn tail_moment_matches_gamma() {
        // int_T^inf u^p e^{-bu} du with b real: compare against truncated quadrature
        let b = Complex64::new(1.7, 0.0);
        let big_t = 2.5;
        let m = tail_moments(b, big_t, 4);
        for (p, got) in m.iter().enumerate() {
            let want = simpson(
                |u| Complex64::new(u.powi(p as i32), 0.0) * (-b * u).exp(),
                big_t,
                big_t + 60.0,
                20000,
            );
            assert!((got - want).norm() < 1e-10, "p={p}");
        }
    }

    #[test]
    fn tail_moment_complex_beta() {
        let b = Complex64::new(0.8, 1.9);
        let m = tail_moments(b, 1.0, 3);
        for (p, got) in m.iter().enumerate() {
            let want = simpson(
                |u| Complex64::new(u.powi(p as i32), 0.0) * (-b * u).exp(),
                1.0,
                1.0 + 80.0,
                40000,
            );
            assert!((got - want).norm() < 1e-9, "p={p}: got {got} want {want}");
        }
    }

    #[test]
    fn binomial_and_factorial() {
        assert_eq!(binomial(6, 2), 15.0);
        assert_eq!(binomial(5, 0), 1.0);
        assert_eq!(factorial(5), 120.0);
        assert_eq!(factorial(0), 1.0);
    }
}
