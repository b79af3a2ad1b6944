//! Closed-form photon statistics of single-mode thermal light seen by two
//! photon-number-resolving detectors.
//!
//! The joint probability generating function of the counts `(m, n)` is
//!
//! ```text
//! G(x, y) = 1 / (1 - n(x-1) - n(y-1) + (1-mu) n^2 (x-1)(y-1))
//!         = 1 / (A - B x - B y + C x y)
//! ```
//!
//! with `beta = (1-mu) n^2`, `A = 1 + 2n + beta`, `B = n + beta`, `C = beta`.
//! Multiplying through by the denominator gives the two-index recurrence
//! `A P[m][n] = B P[m-1][n] + B P[m][n-1] - C P[m-1][n-1]`, `P[0][0] = 1/A`,
//! which is how every joint probability here is computed.

use crate::error::{Error, Result};

/// Inputs to the analytic photon statistics.
///
/// `sigma` and `v` only enter the time-resolved correlations, where the
/// coherence between the two detection events is `mu(tau) = v exp(-sigma^2 tau^2)`.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct PhotonStatsParams {
    nbar: f64,
    mu: f64,
    sigma: f64,
    v: f64,
    central_freq: f64,
}

impl PhotonStatsParams {
    /// `sigma = 1`, `v = 1`, `central_freq = 0`.
    pub fn new(nbar: f64, mu: f64) -> Result<Self> {
        let p = PhotonStatsParams {
            nbar,
            mu,
            sigma: 1.0,
            v: 1.0,
            central_freq: 0.0,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_sigma(mut self, sigma: f64) -> Result<Self> {
        self.sigma = sigma;
        self.validate()?;
        Ok(self)
    }

    pub fn with_v(mut self, v: f64) -> Result<Self> {
        self.v = v;
        self.validate()?;
        Ok(self)
    }

    pub fn with_mu(mut self, mu: f64) -> Result<Self> {
        self.mu = mu;
        self.validate()?;
        Ok(self)
    }

    pub fn with_nbar(mut self, nbar: f64) -> Result<Self> {
        self.nbar = nbar;
        self.validate()?;
        Ok(self)
    }

    /// Central angular frequency; informational, it cancels out of `mu`.
    pub fn with_central_freq(mut self, w0: f64) -> Result<Self> {
        self.central_freq = w0;
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        if !(self.nbar >= 0.0 && self.nbar.is_finite()) {
            return Err(Error::domain(format!("nbar must be finite and >= 0, got {}", self.nbar)));
        }
        if !(0.0..=1.0).contains(&self.mu) {
            return Err(Error::domain(format!("mu must lie in [0, 1], got {}", self.mu)));
        }
        if !(0.0..=1.0).contains(&self.v) {
            return Err(Error::domain(format!("v must lie in [0, 1], got {}", self.v)));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::domain(format!("sigma must be finite and > 0, got {}", self.sigma)));
        }
        if !self.central_freq.is_finite() {
            return Err(Error::domain("central_freq must be finite"));
        }
        Ok(())
    }

    pub fn nbar(&self) -> f64 {
        self.nbar
    }
    pub fn mu(&self) -> f64 {
        self.mu
    }
    pub fn sigma(&self) -> f64 {
        self.sigma
    }
    pub fn v(&self) -> f64 {
        self.v
    }
    pub fn central_freq(&self) -> f64 {
        self.central_freq
    }

    /// Coherence `v exp(-sigma^2 tau^2)` between events separated by `tau`.
    pub fn mu_at(&self, tau: f64) -> f64 {
        self.v * (-(self.sigma * tau).powi(2)).exp()
    }

    fn coefficients(&self) -> (f64, f64, f64) {
        let beta = (1.0 - self.mu) * self.nbar * self.nbar;
        (1.0 + 2.0 * self.nbar + beta, self.nbar + beta, beta)
    }
}

/// Bose-Einstein probability of `m` photons, `nbar^m / (1+nbar)^(m+1)`.
pub fn bose_einstein_pm(m: u32, nbar: f64) -> Result<f64> {
    if !(nbar >= 0.0 && nbar.is_finite()) {
        return Err(Error::domain(format!("nbar must be finite and >= 0, got {nbar}")));
    }
    if nbar == 0.0 {
        return Ok(if m == 0 { 1.0 } else { 0.0 });
    }
    let ln = m as f64 * nbar.ln() - (m as f64 + 1.0) * nbar.ln_1p();
    Ok(ln.exp())
}

fn be(m: u32, nbar: f64) -> f64 {
    bose_einstein_pm(m, nbar).expect("validated nbar")
}

/// Fill `out` (row-major, `(rows) x (cols)`) with `P[m][n]` from the recurrence.
fn fill_table(params: &PhotonStatsParams, rows: usize, cols: usize, out: &mut [f64]) {
    let (a, b, c) = params.coefficients();
    for m in 0..rows {
        for n in 0..cols {
            let mut acc = if m == 0 && n == 0 { 1.0 } else { 0.0 };
            if m > 0 {
                acc += b * out[(m - 1) * cols + n];
            }
            if n > 0 {
                acc += b * out[m * cols + n - 1];
            }
            if m > 0 && n > 0 {
                acc -= c * out[(m - 1) * cols + n - 1];
            }
            out[m * cols + n] = (acc / a).max(0.0);
        }
    }
}

/// Joint probability that detector 1 counts `m` and detector 2 counts `n`.
pub fn p_mn(m: u32, n: u32, params: &PhotonStatsParams) -> f64 {
    // the recurrence only needs the previous row; iterate over the shorter index
    let (rows, cols) = if m <= n { (m as usize, n as usize) } else { (n as usize, m as usize) };
    let (a, b, c) = params.coefficients();
    let mut prev = vec![0.0; cols + 1];
    let mut cur = vec![0.0; cols + 1];
    for r in 0..=rows {
        for k in 0..=cols {
            let mut acc = if r == 0 && k == 0 { 1.0 } else { 0.0 };
            if r > 0 {
                acc += b * prev[k];
            }
            if k > 0 {
                acc += b * cur[k - 1];
            }
            if r > 0 && k > 0 {
                acc -= c * prev[k - 1];
            }
            cur[k] = (acc / a).max(0.0);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[cols]
}

/// `P[m][0] = (n + beta)^m / (1 + 2n + beta)^(m+1)` in closed form.
pub fn p_m0_closed(m: u32, params: &PhotonStatsParams) -> f64 {
    let (a, b, _) = params.coefficients();
    if b == 0.0 {
        return if m == 0 { 1.0 / a } else { 0.0 };
    }
    (m as f64 * b.ln() - (m as f64 + 1.0) * a.ln()).exp()
}

/// Normalized correlation of "m photons at detector 1, none at detector 2".
///
/// Defined as 1 at `nbar = 0`, where both detectors see deterministic vacuum.
pub fn g2_m0(m: u32, params: &PhotonStatsParams) -> f64 {
    let n = params.nbar;
    if n == 0.0 {
        return 1.0;
    }
    let (a, _, _) = params.coefficients();
    let mf = m as f64;
    let ln = (mf + 2.0) * n.ln_1p() + mf * ((1.0 - params.mu) * n).ln_1p() - (mf + 1.0) * a.ln();
    ln.exp()
}

/// General `g2_mn = P[m][n] / (P_m P_n)`; 1 at `nbar = 0`.
pub fn g2_mn(m: u32, n: u32, params: &PhotonStatsParams) -> f64 {
    if params.nbar == 0.0 {
        return 1.0;
    }
    p_mn(m, n, params) / (be(m, params.nbar) * be(n, params.nbar))
}

/// `g2_m0` at time separation `tau` for a Gaussian spectrum.
pub fn g2_m0_tau(m: u32, tau: f64, params: &PhotonStatsParams) -> f64 {
    let mut p = *params;
    p.mu = params.mu_at(tau);
    g2_m0(m, &p)
}

/// Time-resolved "one photon / zero photons" correlation.
pub fn g2_10_tau(tau: f64, params: &PhotonStatsParams) -> f64 {
    g2_m0_tau(1, tau, params)
}

/// Upper bound on the marginal probability of more than `k` photons,
/// `(nbar / (1 + nbar))^(k+1)`.
pub fn marginal_tail(nbar: f64, k: u32) -> f64 {
    if nbar <= 0.0 {
        return 0.0;
    }
    (nbar / (1.0 + nbar)).powi(k as i32 + 1)
}

/// Smallest truncation order whose table misses at most `eps` of the mass.
pub fn truncation_order(nbar: f64, eps: f64) -> u32 {
    let mut k = 0;
    while 2.0 * marginal_tail(nbar, k) > eps && k < 100_000 {
        k += 1;
    }
    k
}

/// `P[m][n]` for `0 <= m, n <= mmax`.
#[derive(Clone, Debug)]
pub struct JointPmnTable {
    pmn: Vec<f64>,
    mmax: u32,
    params: PhotonStatsParams,
}

impl JointPmnTable {
    pub fn get(&self, m: u32, n: u32) -> f64 {
        let w = self.mmax as usize + 1;
        self.pmn[m as usize * w + n as usize]
    }

    pub fn mmax(&self) -> u32 {
        self.mmax
    }

    pub fn params(&self) -> &PhotonStatsParams {
        &self.params
    }

    pub fn row_sum(&self, m: u32) -> f64 {
        (0..=self.mmax).map(|n| self.get(m, n)).sum()
    }

    pub fn total(&self) -> f64 {
        self.pmn.iter().sum()
    }

    /// Upper bound on the probability mass outside the table.
    pub fn tail_bound(&self) -> f64 {
        (2.0 * marginal_tail(self.params.nbar, self.mmax)).min(1.0)
    }

    /// Upper bound on `P_m - row_sum(m)`.
    pub fn row_tail_bound(&self, m: u32) -> f64 {
        marginal_tail(self.params.nbar, self.mmax).min(be(m, self.params.nbar))
    }
}

pub fn pmn_table(params: &PhotonStatsParams, mmax: u32) -> JointPmnTable {
    let w = mmax as usize + 1;
    let mut pmn = vec![0.0; w * w];
    fill_table(params, w, w, &mut pmn);
    JointPmnTable {
        pmn,
        mmax,
        params: *params,
    }
}
