//! GTR rate matrices, transition probabilities and discrete-gamma rate classes.

use nalgebra::{Matrix4 as NMatrix4, SymmetricEigen};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma_lr;

use crate::dna::EXCHANGE_PAIRS;
use crate::error::{Error, Result};

pub type Matrix4 = [[f64; 4]; 4];

pub const IDENTITY: Matrix4 = [
    [1.0, 0.0, 0.0, 0.0],
    [0.0, 1.0, 0.0, 0.0],
    [0.0, 0.0, 1.0, 0.0],
    [0.0, 0.0, 0.0, 1.0],
];

/// Exchangeabilities (AC, AG, AT, CG, CT, GT) and equilibrium frequencies (A, C, G, T).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GtrParams {
    pub exchangeabilities: [f64; 6],
    pub base_freqs: [f64; 4],
}

impl GtrParams {
    pub fn new(exchangeabilities: [f64; 6], base_freqs: [f64; 4]) -> Result<Self> {
        let p = Self {
            exchangeabilities,
            base_freqs,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn jukes_cantor() -> Self {
        Self {
            exchangeabilities: [1.0; 6],
            base_freqs: [0.25; 4],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(e) = self
            .exchangeabilities
            .iter()
            .find(|e| !(e.is_finite() && **e > 0.0))
        {
            return Err(Error::param(format!("exchangeability {e} is not positive")));
        }
        if let Some(p) = self.base_freqs.iter().find(|p| !(p.is_finite() && **p > 0.0)) {
            return Err(Error::param(format!("base frequency {p} is not positive")));
        }
        let sum: f64 = self.base_freqs.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::param(format!("base frequencies sum to {sum}")));
        }
        Ok(())
    }
}

/// A unit-rate GTR generator together with the eigensystem of its
/// frequency-symmetrized form, used to exponentiate it.
#[derive(Debug, Clone)]
pub struct RateMatrix {
    q: Matrix4,
    freqs: [f64; 4],
    eigenvalues: [f64; 4],
    // Orthonormal eigenvectors of diag(sqrt pi) Q diag(1/sqrt pi), stored by column.
    eigenvectors: Matrix4,
}

impl RateMatrix {
    pub fn q(&self) -> &Matrix4 {
        &self.q
    }

    pub fn freqs(&self) -> &[f64; 4] {
        &self.freqs
    }

    /// P(t) = exp(Qt). Entries are clamped to [0, 1] to remove round-off.
    pub fn transition(&self, t: f64) -> Result<Matrix4> {
        if !t.is_finite() || t < 0.0 {
            return Err(Error::arg(format!("branch length {t} must be finite and >= 0")));
        }
        Ok(self.transition_unchecked(t))
    }

    pub(crate) fn transition_unchecked(&self, t: f64) -> Matrix4 {
        if t == 0.0 {
            return IDENTITY;
        }
        let exps = self.eigenvalues.map(|l| (l * t).exp());
        let u = &self.eigenvectors;
        let mut p = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                let mut s = 0.0;
                for k in 0..4 {
                    s += u[i][k] * u[j][k] * exps[k];
                }
                p[i][j] = (s * (self.freqs[j] / self.freqs[i]).sqrt()).clamp(0.0, 1.0);
            }
        }
        p
    }
}

/// Builds Q with Q_ij = e_ij * pi_j off the diagonal, zero row sums, and one
/// expected substitution per unit time at stationarity.
pub fn build_rate_matrix(params: &GtrParams) -> Result<RateMatrix> {
    params.validate()?;
    let pi = params.base_freqs;
    let mut q = [[0.0; 4]; 4];
    for (&(i, j), &e) in EXCHANGE_PAIRS.iter().zip(&params.exchangeabilities) {
        q[i][j] = e * pi[j];
        q[j][i] = e * pi[i];
    }
    for (i, row) in q.iter_mut().enumerate() {
        row[i] = -row.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, v)| v).sum::<f64>();
    }
    let mu: f64 = -(0..4).map(|i| pi[i] * q[i][i]).sum::<f64>();
    for row in q.iter_mut() {
        for v in row.iter_mut() {
            *v /= mu;
        }
    }

    let sqrt_pi = pi.map(f64::sqrt);
    let sym = NMatrix4::from_fn(|i, j| {
        if i == j {
            q[i][i]
        } else {
            // Symmetric by detailed balance; average the two halves against round-off.
            0.5 * (q[i][j] * sqrt_pi[i] / sqrt_pi[j] + q[j][i] * sqrt_pi[j] / sqrt_pi[i])
        }
    });
    let eig = SymmetricEigen::new(sym);
    let mut eigenvalues = [0.0; 4];
    let mut eigenvectors = [[0.0; 4]; 4];
    for k in 0..4 {
        eigenvalues[k] = eig.eigenvalues[k];
        for i in 0..4 {
            eigenvectors[i][k] = eig.eigenvectors[(i, k)];
        }
    }
    Ok(RateMatrix {
        q,
        freqs: pi,
        eigenvalues,
        eigenvectors,
    })
}

/// Convenience wrapper matching the free-function form used throughout the crate.
pub fn transition_matrix(q: &RateMatrix, t: f64) -> Result<Matrix4> {
    q.transition(t)
}

/// Discrete-gamma among-site rate variation: `K` equiprobable classes of
/// Gamma(alpha, alpha), each represented by its conditional mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateModel {
    pub alpha: f64,
    pub rates: Vec<f64>,
}

impl RateModel {
    pub fn k(&self) -> usize {
        self.rates.len()
    }

    /// A single rate class of rate 1 (no rate heterogeneity).
    pub fn uniform() -> Self {
        Self {
            alpha: f64::INFINITY,
            rates: vec![1.0],
        }
    }
}

const QUANTILE_RTOL: f64 = 1e-12;

/// x such that the Gamma(shape, rate = shape) CDF equals p.
fn gamma_quantile(shape: f64, p: f64) -> f64 {
    let cdf = |x: f64| gamma_lr(shape, shape * x);
    let mut lo = 0.0;
    let mut hi = 1.0;
    while cdf(hi) < p {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= QUANTILE_RTOL * hi {
            break;
        }
    }
    0.5 * (lo + hi)
}

pub fn discrete_gamma_rates(alpha: f64, k: usize) -> Result<RateModel> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::param(format!("gamma shape {alpha} must be positive")));
    }
    if k == 0 {
        return Err(Error::param("rate category count must be at least 1"));
    }
    if k == 1 {
        return Ok(RateModel {
            alpha,
            rates: vec![1.0],
        });
    }
    // E[X; a < X < b] for X ~ Gamma(alpha, alpha) is P(alpha + 1, alpha * x) evaluated at the bounds.
    let mut upper_mass = Vec::with_capacity(k + 1);
    upper_mass.push(0.0);
    for i in 1..k {
        let x = gamma_quantile(alpha, i as f64 / k as f64);
        upper_mass.push(gamma_lr(alpha + 1.0, alpha * x));
    }
    upper_mass.push(1.0);
    let mut rates: Vec<f64> = upper_mass
        .windows(2)
        .map(|w| k as f64 * (w[1] - w[0]))
        .collect();
    let mean = rates.iter().sum::<f64>() / k as f64;
    for r in &mut rates {
        *r /= mean;
    }
    Ok(RateModel { alpha, rates })
}
