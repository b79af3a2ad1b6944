//! Independent reference implementations used by the integration tests.
//! Nothing here calls into the library's analytic code.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};

/// `exp(-z) I0(z)` for `z >= 0`.
pub fn bessel_i0e(z: f64) -> f64 {
    if z < 30.0 {
        let q = z * z / 4.0;
        let mut term = 1.0;
        let mut sum = 1.0;
        let mut k = 1.0;
        while term > 1e-18 * sum {
            term *= q / (k * k);
            sum += term;
            k += 1.0;
        }
        sum * (-z).exp()
    } else {
        // asymptotic series, terms ((2k-1)!!)^2 / (k! (8z)^k)
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..20 {
            let kf = k as f64;
            term *= (2.0 * kf - 1.0).powi(2) / (kf * 8.0 * z);
            sum += term;
        }
        sum / (2.0 * std::f64::consts::PI * z).sqrt()
    }
}

/// Gauss-Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
    }
    out
}

/// Composite Gauss-Legendre nodes on [0, hi].
fn panels(hi: f64, count: usize, order: usize) -> Vec<(f64, f64)> {
    let gl = gauss_legendre(order);
    let h = hi / count as f64;
    let mut out = Vec::with_capacity(count * order);
    for p in 0..count {
        let mid = (p as f64 + 0.5) * h;
        for &(x, w) in &gl {
            out.push((mid + 0.5 * h * x, 0.5 * h * w));
        }
    }
    out
}

fn poisson_pmf(k: usize, lambda: f64) -> f64 {
    let mut ln = k as f64 * lambda.ln() - lambda;
    for j in 2..=k {
        ln -= (j as f64).ln();
    }
    if lambda == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    ln.exp()
}

/// `P[m][n]` for `m, n <= kmax` by integrating the Poisson pair over the
/// bivariate thermal intensity density (`mu < 1`).
pub fn quadrature_pmn(nbar: f64, mu: f64, kmax: usize) -> Vec<Vec<f64>> {
    assert!(mu < 1.0);
    let s = nbar * (1.0 - mu);
    let nodes = panels(nbar * 50.0, 64, 16);
    let pois: Vec<Vec<f64>> = nodes
        .iter()
        .map(|&(x, _)| (0..=kmax).map(|k| poisson_pmf(k, x)).collect())
        .collect();
    let mut out = vec![vec![0.0; kmax + 1]; kmax + 1];
    for (i, &(x, wx)) in nodes.iter().enumerate() {
        for (j, &(y, wy)) in nodes.iter().enumerate() {
            let z = 2.0 * (mu * x * y).sqrt() / s;
            let density = (-(x + y) / s + z).exp() * bessel_i0e(z) / (nbar * nbar * (1.0 - mu));
            let w = wx * wy * density;
            if w == 0.0 {
                continue;
            }
            for (m, row) in out.iter_mut().enumerate() {
                let a = w * pois[i][m];
                for (n, cell) in row.iter_mut().enumerate() {
                    *cell += a * pois[j][n];
                }
            }
        }
    }
    out
}

/// Fully coherent limit: both detectors see the same exponential intensity.
pub fn quadrature_pmn_coherent(nbar: f64, kmax: usize) -> Vec<Vec<f64>> {
    let nodes = panels(nbar * 60.0, 200, 20);
    let mut out = vec![vec![0.0; kmax + 1]; kmax + 1];
    for &(x, w) in &nodes {
        let d = w * (-x / nbar).exp() / nbar;
        for (m, row) in out.iter_mut().enumerate() {
            for (n, cell) in row.iter_mut().enumerate() {
                *cell += d * poisson_pmf(m, x) * poisson_pmf(n, x);
            }
        }
    }
    out
}

/// Bose-Einstein marginal written out directly.
pub fn bose_einstein(m: u32, nbar: f64) -> f64 {
    nbar.powi(m as i32) / (1.0 + nbar).powi(m as i32 + 1)
}

/// Joint zero-count probability `P[m][0]` written out directly.
pub fn pm0_closed(m: u32, nbar: f64, mu: f64) -> f64 {
    let beta = (1.0 - mu) * nbar * nbar;
    (nbar + beta).powi(m as i32) / (1.0 + 2.0 * nbar + beta).powi(m as i32 + 1)
}

/// Coherent-limit joint probability from the binomial expansion.
pub fn pmn_coherent(m: u32, n: u32, nbar: f64) -> f64 {
    let k = (m + n) as i32;
    let mut binom = 1.0;
    for i in 0..n {
        binom *= (m + n - i) as f64 / (i + 1) as f64;
    }
    binom * nbar.powi(k) / (1.0 + 2.0 * nbar).powi(k + 1)
}

/// `g2_m0(0)` written out directly.
pub fn g2_m0_closed(m: u32, nbar: f64, mu: f64) -> f64 {
    let mi = m as i32;
    let beta = (1.0 - mu) * nbar * nbar;
    (1.0 + nbar).powi(mi + 2) * (1.0 + (1.0 - mu) * nbar).powi(mi) / (1.0 + 2.0 * nbar + beta).powi(mi + 1)
}

/// Draw `(m, n)` pairs from the thermal joint distribution: a shared
/// complex Gaussian mode mixed with independent parts gives intensities with
/// coherence `mu`, then Poisson counts.
pub fn sample_pairs(nbar: f64, mu: f64, count: usize, seed: u64) -> Vec<(u64, u64)> {
    let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
    let gauss = |rng: &mut rand::rngs::StdRng| -> (f64, f64) {
        // Box-Muller, unit variance per quadrature
        let u1: f64 = 1.0 - rng.random::<f64>();
        let u2: f64 = rng.random();
        let r = (-2.0 * u1.ln()).sqrt();
        let t = 2.0 * std::f64::consts::PI * u2;
        (r * t.cos(), r * t.sin())
    };
    // field correlation |g1| = sqrt(mu), so the shared weight is mu^(1/4)
    let c = mu.powf(0.25);
    let d = (1.0 - mu.sqrt()).sqrt();
    (0..count)
        .map(|_| {
            let s = gauss(&mut rng);
            let a = gauss(&mut rng);
            let b = gauss(&mut rng);
            let e1 = (c * s.0 + d * a.0, c * s.1 + d * a.1);
            let e2 = (c * s.0 + d * b.0, c * s.1 + d * b.1);
            let i1 = nbar * (e1.0 * e1.0 + e1.1 * e1.1) / 2.0;
            let i2 = nbar * (e2.0 * e2.0 + e2.1 * e2.1) / 2.0;
            (knuth_poisson(&mut rng, i1), knuth_poisson(&mut rng, i2))
        })
        .collect()
}

fn knuth_poisson<R: Rng>(rng: &mut R, lambda: f64) -> u64 {
    if lambda > 30.0 {
        // split to keep exp(-lambda) representable
        let half = lambda / 2.0;
        return knuth_poisson(rng, half) + knuth_poisson(rng, lambda - half);
    }
    let limit = (-lambda).exp();
    let mut p: f64 = rng.random();
    let mut k = 0;
    while p > limit {
        p *= rng.random::<f64>();
        k += 1;
    }
    k
}

/// Golden-section minimum of a unimodal function on [lo, hi].
pub fn golden_min(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - r * (hi - lo);
    let mut b = lo + r * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    while hi - lo > tol {
        if fa < fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - r * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + r * (hi - lo);
            fb = f(b);
        }
    }
    0.5 * (lo + hi)
}

/// Root of `f` on [lo, hi] by bisection; `f(lo)` and `f(hi)` must differ in sign.
pub fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let flo = f(lo);
    assert!(flo * f(hi) < 0.0, "no sign change");
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if (f(mid) < 0.0) == (flo < 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}
