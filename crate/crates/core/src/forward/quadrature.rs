//! Wavenumber quadrature for the inverse cosine transform.
//!
//! The 2.5-D potential is recovered from its strike-direction transform as
//! `φ(x) = (2/π) Σ_j g_j φ̃(x; k_j)`. Abscissas are four Gauss–Legendre
//! points on `[ln k_min, ln k_max]` plus two Gauss–Laguerre points for the
//! tail beyond `k_max`; the weights are fit by least squares so that the
//! rule reproduces `1/r` through `(2/π) Σ_j g_j K0(k_j r)` over the
//! electrode-distance range. `k_min`, `k_max` are chosen by grid search.

use super::bessel::k0;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

const LEGENDRE_4: [f64; 4] = [
    -0.861_136_311_594_052_6,
    -0.339_981_043_584_856_3,
    0.339_981_043_584_856_3,
    0.861_136_311_594_052_6,
];
const LAGUERRE_2: [f64; 2] = [
    2.0 - std::f64::consts::SQRT_2,
    2.0 + std::f64::consts::SQRT_2,
];
const FIT_SAMPLES: usize = 200;
const SEARCH_STEPS: usize = 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WavenumberQuadrature {
    /// Wavenumbers in 1/m, strictly increasing.
    pub wavenumbers: Vec<f64>,
    pub weights: Vec<f64>,
    /// Distance range (m) the rule was fit over.
    pub fit_range: (f64, f64),
    /// Largest relative error of the `1/r` reconstruction over the fit range.
    pub max_relative_error: f64,
}

impl WavenumberQuadrature {
    /// Fits the six-point rule for distances in `[r_min, r_max]`.
    pub fn fit(r_min: f64, r_max: f64) -> Self {
        assert!(r_min > 0.0 && r_max >= r_min, "invalid distance range");
        // Fit in units of r_min; the rule scales as k -> k / r_min, g -> g / r_min.
        let ratio = (r_max / r_min).max(2.0);
        let samples: Vec<f64> = (0..FIT_SAMPLES)
            .map(|i| ratio.powf(i as f64 / (FIT_SAMPLES - 1) as f64))
            .collect();
        let kmins = geomspace(1e-3, 0.5, SEARCH_STEPS);
        let kmaxs = geomspace(0.05, 5.0, SEARCH_STEPS);
        let mut best: Option<(f64, Vec<f64>, Vec<f64>)> = None;
        for &kmin in &kmins {
            for &kmax in &kmaxs {
                if kmax <= 2.0 * kmin {
                    continue;
                }
                let ks = abscissas(kmin, kmax);
                let Some(gs) = fit_weights(&ks, &samples) else {
                    continue;
                };
                if gs.iter().any(|&g| g <= 0.0) {
                    continue;
                }
                let err = max_rel_error(&ks, &gs, &samples);
                if best.as_ref().is_none_or(|b| err < b.0) {
                    best = Some((err, ks, gs));
                }
            }
        }
        let (err, ks, gs) = best.expect("quadrature search found no positive-weight rule");
        Self {
            wavenumbers: ks.iter().map(|k| k / r_min).collect(),
            weights: gs.iter().map(|g| g / r_min).collect(),
            fit_range: (r_min, r_min * ratio),
            max_relative_error: err,
        }
    }

    pub fn len(&self) -> usize {
        self.wavenumbers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.wavenumbers.is_empty()
    }

    /// `(2/π) Σ g_j f(k_j)`.
    pub fn integrate(&self, mut f: impl FnMut(usize, f64) -> f64) -> f64 {
        let s: f64 = self
            .wavenumbers
            .iter()
            .zip(&self.weights)
            .enumerate()
            .map(|(j, (&k, &g))| g * f(j, k))
            .sum();
        2.0 / PI * s
    }

    /// Quadrature estimate of the unit point-source potential `1/(2πr)`
    /// of a full space with unit conductivity.
    pub fn point_source(&self, r: f64) -> f64 {
        self.integrate(|_, k| k0(k * r) / (2.0 * PI))
    }
}

fn geomspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| (a.ln() + (b.ln() - a.ln()) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

fn abscissas(kmin: f64, kmax: f64) -> Vec<f64> {
    let (la, lb) = (kmin.ln(), kmax.ln());
    let mut ks: Vec<f64> = LEGENDRE_4
        .iter()
        .map(|x| (la + (lb - la) * (x + 1.0) / 2.0).exp())
        .collect();
    ks.extend(LAGUERRE_2.iter().map(|t| kmax + t * kmax));
    ks
}

/// Rows `(2/π) K0(k_j r) r`, target 1: minimizes relative error.
fn design_row(ks: &[f64], r: f64) -> Vec<f64> {
    ks.iter().map(|&k| 2.0 / PI * k0(k * r) * r).collect()
}

fn fit_weights(ks: &[f64], samples: &[f64]) -> Option<Vec<f64>> {
    let rows: Vec<Vec<f64>> = samples.iter().map(|&r| design_row(ks, r)).collect();
    least_squares(&rows, &vec![1.0; samples.len()])
}

fn max_rel_error(ks: &[f64], gs: &[f64], samples: &[f64]) -> f64 {
    samples
        .iter()
        .map(|&r| {
            let v: f64 = design_row(ks, r).iter().zip(gs).map(|(a, g)| a * g).sum();
            (v - 1.0).abs()
        })
        .fold(0.0, f64::max)
}

/// Householder QR least squares for a tall dense system.
fn least_squares(rows: &[Vec<f64>], rhs: &[f64]) -> Option<Vec<f64>> {
    let m = rows.len();
    let n = rows.first()?.len();
    let mut a: Vec<Vec<f64>> = rows.to_vec();
    let mut b = rhs.to_vec();
    for col in 0..n {
        let norm: f64 = (col..m).map(|i| a[i][col] * a[i][col]).sum::<f64>().sqrt();
        if norm == 0.0 {
            return None;
        }
        let alpha = if a[col][col] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = (col..m).map(|i| a[i][col]).collect();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        for c in col..n {
            let dot: f64 = (col..m).map(|i| v[i - col] * a[i][c]).sum();
            let f = 2.0 * dot / vnorm2;
            for i in col..m {
                a[i][c] -= f * v[i - col];
            }
        }
        let dot: f64 = (col..m).map(|i| v[i - col] * b[i]).sum();
        let f = 2.0 * dot / vnorm2;
        for i in col..m {
            b[i] -= f * v[i - col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = ((i + 1)..n).map(|j| a[i][j] * x[j]).sum();
        if a[i][i].abs() < 1e-300 {
            return None;
        }
        x[i] = (b[i] - s) / a[i][i];
    }
    Some(x)
}
