//! Least-squares fit of the time-resolved zero-photon correlation
//! `g2_m0(tau)` with `mu(tau) = v exp(-sigma^2 tau^2)` to measured curves.
//!
//! The search is derivative free: a coarse grid picks the basin, Nelder-Mead
//! refines it in unconstrained coordinates (`nbar = e^a`, `sigma = e^b`,
//! `v = sin^2 c`), and a damped Gauss-Newton step on finite-difference
//! Jacobians polishes the optimum. Standard errors come from the weighted
//! normal matrix, or from refitting jackknife replicates.

use crate::analytic::{g2_m0_tau, PhotonStatsParams};
use crate::error::{Error, Result};
use crate::estimator::jackknife_stderr;

/// One measured point of a correlation curve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitPoint {
    pub m: u32,
    /// Lag in the unit of the fitted `1/sigma`.
    pub tau: f64,
    pub g2: f64,
    pub stderr: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct CurveParams {
    pub nbar: f64,
    pub sigma: f64,
    pub v: f64,
}

impl CurveParams {
    pub fn model(&self, m: u32, tau: f64) -> f64 {
        let p = PhotonStatsParams::new(self.nbar, self.v)
            .and_then(|p| p.with_sigma(self.sigma))
            .and_then(|p| p.with_v(self.v));
        match p {
            Ok(p) => g2_m0_tau(m, tau, &p),
            Err(_) => f64::NAN,
        }
    }

    fn to_free(self) -> [f64; 3] {
        [self.nbar.ln(), self.sigma.ln(), self.v.sqrt().asin()]
    }

    fn from_free(x: &[f64; 3]) -> Self {
        CurveParams {
            nbar: x[0].clamp(-700.0, 700.0).exp(),
            sigma: x[1].clamp(-700.0, 700.0).exp(),
            v: x[2].sin().powi(2).min(1.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct FitResult {
    pub params: CurveParams,
    pub nbar_se: f64,
    pub sigma_se: f64,
    pub v_se: f64,
    /// How the standard errors were obtained.
    pub se_method: String,
    pub chi2: f64,
    pub dof: usize,
    /// Euclidean norm of the unweighted residuals.
    pub residual_norm: f64,
    /// False when the curve never departs from 1 by more than its noise,
    /// leaving the width unconstrained.
    pub sigma_identifiable: bool,
    pub evaluations: usize,
}

const MIN_POINTS: usize = 5;
const MAX_EVALS: usize = 40_000;

fn check_points(points: &[FitPoint]) -> Result<Vec<FitPoint>> {
    let usable: Vec<FitPoint> = points
        .iter()
        .copied()
        .filter(|p| p.g2.is_finite() && p.tau.is_finite() && p.stderr.is_finite() && p.stderr > 0.0)
        .collect();
    if usable.len() < MIN_POINTS {
        return Err(Error::InsufficientEvents {
            index: "fit".into(),
            detail: format!("{} usable points, need at least {MIN_POINTS}", usable.len()),
        });
    }
    Ok(usable)
}

fn residuals(points: &[FitPoint], p: &CurveParams, out: &mut [f64]) {
    for (r, pt) in out.iter_mut().zip(points) {
        *r = (pt.g2 - p.model(pt.m, pt.tau)) / pt.stderr;
    }
}

fn chi2(points: &[FitPoint], p: &CurveParams) -> f64 {
    let c: f64 = points
        .iter()
        .map(|pt| ((pt.g2 - p.model(pt.m, pt.tau)) / pt.stderr).powi(2))
        .sum();
    if c.is_nan() {
        f64::INFINITY
    } else {
        c
    }
}

/// Grid over nbar, v and sigma; sigma candidates come from the lag spacing.
fn grid_start(points: &[FitPoint]) -> CurveParams {
    let mut taus: Vec<f64> = points.iter().map(|p| p.tau.abs()).filter(|t| *t > 0.0).collect();
    taus.sort_by(f64::total_cmp);
    taus.dedup();
    let mut sigmas: Vec<f64> = if taus.is_empty() {
        vec![1.0]
    } else {
        let (lo, hi) = (taus[0], taus[taus.len() - 1]);
        (0..=16).map(|i| (1.0 / hi) * (hi / lo).powf(i as f64 / 16.0) * 2.0).collect()
    };
    sigmas.dedup();
    let mut best = (f64::INFINITY, CurveParams { nbar: 1.0, sigma: sigmas[0], v: 0.5 });
    for i in 0..=30 {
        let nbar = 10f64.powf(-3.0 + 6.0 * i as f64 / 30.0);
        for j in 1..=20 {
            let v = j as f64 / 20.0;
            for &sigma in &sigmas {
                let p = CurveParams { nbar, sigma, v };
                let c = chi2(points, &p);
                if c < best.0 {
                    best = (c, p);
                }
            }
        }
    }
    best.1
}

struct NelderMead<'a> {
    points: &'a [FitPoint],
    evals: usize,
    trace: Vec<f64>,
}

impl NelderMead<'_> {
    fn f(&mut self, x: &[f64; 3]) -> f64 {
        self.evals += 1;
        chi2(self.points, &CurveParams::from_free(x))
    }

    fn run(&mut self, start: [f64; 3], step: f64) -> ([f64; 3], f64) {
        let mut simplex: Vec<([f64; 3], f64)> = Vec::with_capacity(4);
        simplex.push((start, self.f(&start)));
        for k in 0..3 {
            let mut x = start;
            x[k] += step;
            let fx = self.f(&x);
            simplex.push((x, fx));
        }
        loop {
            simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
            self.trace.push(simplex[0].1);
            let spread = simplex[3].1 - simplex[0].1;
            let size = (1..4)
                .map(|i| (0..3).map(|k| (simplex[i].0[k] - simplex[0].0[k]).abs()).fold(0.0, f64::max))
                .fold(0.0, f64::max);
            if (spread <= 1e-15 * (1.0 + simplex[0].1.abs()) && size < 1e-9) || self.evals > MAX_EVALS {
                return simplex[0];
            }
            let mut centroid = [0.0; 3];
            for s in &simplex[..3] {
                for k in 0..3 {
                    centroid[k] += s.0[k] / 3.0;
                }
            }
            let toward = |t: f64, from: &[f64; 3]| -> [f64; 3] {
                let mut x = [0.0; 3];
                for k in 0..3 {
                    x[k] = centroid[k] + t * (from[k] - centroid[k]);
                }
                x
            };
            let worst = simplex[3];
            let xr = toward(-1.0, &worst.0);
            let fr = self.f(&xr);
            if fr < simplex[0].1 {
                let xe = toward(-2.0, &worst.0);
                let fe = self.f(&xe);
                simplex[3] = if fe < fr { (xe, fe) } else { (xr, fr) };
            } else if fr < simplex[2].1 {
                simplex[3] = (xr, fr);
            } else {
                let (xc, fc) = if fr < worst.1 {
                    let x = toward(-0.5, &worst.0);
                    (x, self.f(&x))
                } else {
                    let x = toward(0.5, &worst.0);
                    (x, self.f(&x))
                };
                if fc < worst.1.min(fr) {
                    simplex[3] = (xc, fc);
                } else {
                    let best = simplex[0].0;
                    for s in simplex.iter_mut().skip(1) {
                        for k in 0..3 {
                            s.0[k] = best[k] + 0.5 * (s.0[k] - best[k]);
                        }
                        s.1 = self.f(&s.0);
                    }
                }
            }
        }
    }
}

/// Solve the 3x3 system `a x = b`; `None` if singular.
fn solve3(a: &[[f64; 3]; 3], b: &[f64; 3]) -> Option<[f64; 3]> {
    let inv = invert3(a)?;
    let mut x = [0.0; 3];
    for i in 0..3 {
        x[i] = (0..3).map(|j| inv[i][j] * b[j]).sum();
    }
    Some(x)
}

fn invert3(a: &[[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    let c = |i: usize, j: usize| {
        let (r0, r1) = ((i + 1) % 3, (i + 2) % 3);
        let (c0, c1) = ((j + 1) % 3, (j + 2) % 3);
        a[r0][c0] * a[r1][c1] - a[r0][c1] * a[r1][c0]
    };
    let det = a[0][0] * c(0, 0) + a[0][1] * c(0, 1) + a[0][2] * c(0, 2);
    if !det.is_finite() || det.abs() < 1e-300 {
        return None;
    }
    let mut inv = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            inv[j][i] = c(i, j) / det;
        }
    }
    Some(inv)
}

/// Weighted residual Jacobian with respect to `(nbar, sigma, v)` by central differences.
fn jacobian(points: &[FitPoint], p: &CurveParams) -> Vec<[f64; 3]> {
    let mut jac = vec![[0.0; 3]; points.len()];
    for k in 0..3 {
        let base = [p.nbar, p.sigma, p.v][k];
        let h = 1e-6 * base.abs().max(1e-6);
        let shifted = |d: f64| {
            let mut q = *p;
            match k {
                0 => q.nbar += d,
                1 => q.sigma += d,
                _ => q.v += d,
            }
            q
        };
        // one-sided at the v bounds
        let (lo, hi) = match k {
            2 if p.v + h > 1.0 => (shifted(-h), *p),
            2 if p.v - h < 0.0 => (*p, shifted(h)),
            _ => (shifted(-h), shifted(h)),
        };
        let width = [hi.nbar, hi.sigma, hi.v][k] - [lo.nbar, lo.sigma, lo.v][k];
        for (row, pt) in jac.iter_mut().zip(points) {
            row[k] = (hi.model(pt.m, pt.tau) - lo.model(pt.m, pt.tau)) / (width * pt.stderr);
        }
    }
    jac
}

fn normal_matrix(jac: &[[f64; 3]]) -> [[f64; 3]; 3] {
    let mut a = [[0.0; 3]; 3];
    for row in jac {
        for i in 0..3 {
            for j in 0..3 {
                a[i][j] += row[i] * row[j];
            }
        }
    }
    a
}

/// Levenberg-damped Gauss-Newton in free coordinates.
fn polish(points: &[FitPoint], mut x: [f64; 3], evals: &mut usize) -> [f64; 3] {
    let n = points.len();
    let mut r = vec![0.0; n];
    let mut cur = chi2(points, &CurveParams::from_free(&x));
    let mut lambda = 1e-3;
    for _ in 0..200 {
        let p = CurveParams::from_free(&x);
        residuals(points, &p, &mut r);
        // Jacobian in free coordinates
        let mut jac = vec![[0.0; 3]; n];
        for k in 0..3 {
            let h = 1e-7 * x[k].abs().max(1.0);
            let (mut xp, mut xm) = (x, x);
            xp[k] += h;
            xm[k] -= h;
            let (pp, pm) = (CurveParams::from_free(&xp), CurveParams::from_free(&xm));
            for (row, pt) in jac.iter_mut().zip(points) {
                row[k] = -(pp.model(pt.m, pt.tau) - pm.model(pt.m, pt.tau)) / (2.0 * h * pt.stderr);
            }
            *evals += 2;
        }
        let a = normal_matrix(&jac);
        let mut g = [0.0; 3];
        for (row, ri) in jac.iter().zip(&r) {
            for k in 0..3 {
                g[k] += row[k] * ri;
            }
        }
        let mut improved = false;
        for _ in 0..30 {
            let mut damped = a;
            for k in 0..3 {
                damped[k][k] += lambda * a[k][k].max(1e-12);
            }
            let Some(step) = solve3(&damped, &g) else {
                lambda *= 10.0;
                continue;
            };
            let trial = [x[0] - step[0], x[1] - step[1], x[2] - step[2]];
            let c = chi2(points, &CurveParams::from_free(&trial));
            *evals += 1;
            if c < cur {
                let gain = cur - c;
                x = trial;
                cur = c;
                lambda = (lambda / 10.0).max(1e-12);
                improved = gain > 1e-16 * (1.0 + cur);
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    x
}

/// Fit `(nbar, sigma, v)` to one or more zero-photon correlation curves.
pub fn fit_curve(points: &[FitPoint]) -> Result<FitResult> {
    let points = check_points(points)?;
    let start = grid_start(&points);
    let mut nm = NelderMead {
        points: &points,
        evals: 0,
        trace: Vec::new(),
    };
    let mut best = nm.run(start.to_free(), 0.3);
    for step in [0.1, 0.02] {
        let again = nm.run(best.0, step);
        if again.1 <= best.1 {
            best = again;
        }
    }
    let mut evals = nm.evals;
    let x = polish(&points, best.0, &mut evals);
    let params = CurveParams::from_free(&x);
    let chi2v = chi2(&points, &params);
    if !chi2v.is_finite() {
        let tail: Vec<String> = nm.trace.iter().rev().take(10).map(|c| format!("{c:.6e}")).collect();
        return Err(Error::Fit(format!(
            "no finite optimum after {evals} evaluations; last chi2 values [{}]",
            tail.join(", ")
        )));
    }
    if evals > MAX_EVALS + 10_000 {
        let tail: Vec<String> = nm.trace.iter().rev().take(10).map(|c| format!("{c:.6e}")).collect();
        return Err(Error::Fit(format!(
            "did not converge in {evals} evaluations; last chi2 values [{}]",
            tail.join(", ")
        )));
    }

    let jac = jacobian(&points, &params);
    let cov = invert3(&normal_matrix(&jac));
    let se = |k: usize| cov.map_or(f64::NAN, |c| c[k][k].max(0.0).sqrt());
    let residual_norm = points
        .iter()
        .map(|pt| (pt.g2 - params.model(pt.m, pt.tau)).powi(2))
        .sum::<f64>()
        .sqrt();

    let mut ses: Vec<f64> = points.iter().map(|p| p.stderr).collect();
    ses.sort_by(f64::total_cmp);
    let median_se = ses[ses.len() / 2];
    let departure = points
        .iter()
        .map(|pt| (params.model(pt.m, pt.tau) - 1.0).abs())
        .fold(0.0, f64::max);
    let sigma_identifiable = departure >= 3.0 * median_se && params.v > 1e-9;

    Ok(FitResult {
        params,
        nbar_se: se(0),
        sigma_se: if sigma_identifiable { se(1) } else { f64::NAN },
        v_se: se(2),
        se_method: "weighted normal matrix".into(),
        chi2: chi2v,
        dof: points.len().saturating_sub(3),
        residual_norm,
        sigma_identifiable,
        evaluations: evals,
    })
}

/// Fit the full curve, then refit each leave-one-block-out replicate and
/// replace the standard errors with jackknife ones.
pub fn fit_curve_jackknife(points: &[FitPoint], replicates: &[Vec<FitPoint>]) -> Result<FitResult> {
    let mut fit = fit_curve(points)?;
    if replicates.len() < 2 {
        return Err(Error::config("jackknife needs at least two replicates"));
    }
    let mut nbar = Vec::with_capacity(replicates.len());
    let mut sigma = Vec::with_capacity(replicates.len());
    let mut v = Vec::with_capacity(replicates.len());
    for rep in replicates {
        let r = fit_curve(rep)?;
        nbar.push(r.params.nbar);
        sigma.push(r.params.sigma);
        v.push(r.params.v);
    }
    fit.nbar_se = jackknife_stderr(&nbar);
    fit.sigma_se = jackknife_stderr(&sigma);
    fit.v_se = jackknife_stderr(&v);
    fit.se_method = format!("jackknife over {} blocks", replicates.len());
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn analytic_points(p: CurveParams, m: u32, lags: usize, step: f64) -> Vec<FitPoint> {
        (0..lags)
            .map(|i| {
                let tau = i as f64 * step;
                FitPoint {
                    m,
                    tau,
                    g2: p.model(m, tau),
                    stderr: 1e-3,
                }
            })
            .collect()
    }

    #[test]
    fn recovers_noise_free_parameters() {
        for truth in [
            CurveParams { nbar: 0.5, sigma: 0.05, v: 1.0 },
            CurveParams { nbar: 2.0, sigma: 0.3, v: 0.6 },
            CurveParams { nbar: 0.1, sigma: 1.5, v: 0.85 },
        ] {
            let pts = analytic_points(truth, 1, 20, 0.6 / truth.sigma / 10.0);
            let fit = fit_curve(&pts).unwrap();
            let p = fit.params;
            assert!((p.nbar - truth.nbar).abs() < 1e-6, "{truth:?} -> {p:?}");
            assert!((p.sigma - truth.sigma).abs() < 1e-6, "{truth:?} -> {p:?}");
            assert!((p.v - truth.v).abs() < 1e-6, "{truth:?} -> {p:?}");
            assert!(fit.sigma_identifiable);
            assert!(fit.chi2 < 1e-12);
        }
    }

    #[test]
    fn flat_curve_flags_sigma() {
        let pts: Vec<FitPoint> = (0..12)
            .map(|i| FitPoint {
                m: 1,
                tau: i as f64,
                g2: 1.0,
                stderr: 0.01,
            })
            .collect();
        let fit = fit_curve(&pts).unwrap();
        assert!(fit.params.v < 1e-3 || fit.params.sigma > 10.0 || !fit.sigma_identifiable);
        assert!(!fit.sigma_identifiable);
    }

    #[test]
    fn too_few_points() {
        let pts = analytic_points(CurveParams { nbar: 1.0, sigma: 0.1, v: 1.0 }, 1, 4, 1.0);
        assert!(matches!(fit_curve(&pts), Err(Error::InsufficientEvents { .. })));
        let mut pts = analytic_points(CurveParams { nbar: 1.0, sigma: 0.1, v: 1.0 }, 1, 6, 1.0);
        pts[0].stderr = f64::NAN;
        pts[1].stderr = 0.0;
        assert!(fit_curve(&pts).is_err());
    }

    #[test]
    fn inverse_of_three_by_three() {
        let a = [[4.0, 1.0, 0.5], [1.0, 3.0, 0.2], [0.5, 0.2, 2.0]];
        let inv = invert3(&a).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let e: f64 = (0..3).map(|k| a[i][k] * inv[k][j]).sum();
                assert!((e - if i == j { 1.0 } else { 0.0 }).abs() < 1e-14);
            }
        }
        assert!(invert3(&[[1.0, 2.0, 3.0], [2.0, 4.0, 6.0], [0.0, 0.0, 1.0]]).is_none());
    }
}
