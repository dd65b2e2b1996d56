//! Gaussian summaries and the Fréchet distance
//! `‖μ₁−μ₂‖² + Tr(Σ₁+Σ₂−2(Σ₁Σ₂)^{1/2})`, with the matrix square root taken
//! through a symmetric eigendecomposition of `Σ₁^{1/2} Σ₂ Σ₁^{1/2}` and
//! eigenvalues clamped at zero. Dimensions stay small (≤ 8), so a Jacobi
//! sweep is plenty.

use crate::error::{Error, Result};

/// Mean and covariance (unbiased, n−1) of a sample set.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianSummary {
    pub mean: Vec<f64>,
    /// Row-major d×d, symmetric.
    pub cov: Vec<f64>,
    pub dim: usize,
}

impl GaussianSummary {
    pub fn fit(samples: &[Vec<f64>]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Data("cannot summarize zero samples".into()));
        }
        let d = samples[0].len();
        if samples.len() < d + 1 {
            return Err(Error::Data(format!(
                "need at least {} samples for a {d}-dim Gaussian, got {}",
                d + 1,
                samples.len()
            )));
        }
        let n = samples.len() as f64;
        let mut mean = vec![0.0; d];
        for s in samples {
            assert_eq!(s.len(), d, "ragged sample set");
            for (m, &v) in mean.iter_mut().zip(s) {
                *m += v;
            }
        }
        for m in mean.iter_mut() {
            *m /= n;
        }
        let mut cov = vec![0.0; d * d];
        for s in samples {
            for i in 0..d {
                let di = s[i] - mean[i];
                for j in i..d {
                    cov[i * d + j] += di * (s[j] - mean[j]);
                }
            }
        }
        for i in 0..d {
            for j in i..d {
                let v = cov[i * d + j] / (n - 1.0);
                cov[i * d + j] = v;
                cov[j * d + i] = v;
            }
        }
        Ok(GaussianSummary { mean, cov, dim: d })
    }
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns
/// (eigenvalues, row-major eigenvector matrix V with rows as coordinates:
/// `A = V diag(λ) Vᵀ`).
fn jacobi_eigen(mat: &[f64], d: usize) -> (Vec<f64>, Vec<f64>) {
    let mut a = mat.to_vec();
    let mut v = vec![0.0; d * d];
    for i in 0..d {
        v[i * d + i] = 1.0;
    }
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..d {
            for j in i + 1..d {
                off += a[i * d + j] * a[i * d + j];
            }
        }
        if off < 1e-24 {
            break;
        }
        for p in 0..d {
            for q in p + 1..d {
                let apq = a[p * d + q];
                if apq.abs() < 1e-18 {
                    continue;
                }
                let app = a[p * d + p];
                let aqq = a[q * d + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..d {
                    let akp = a[k * d + p];
                    let akq = a[k * d + q];
                    a[k * d + p] = c * akp - s * akq;
                    a[k * d + q] = s * akp + c * akq;
                }
                for k in 0..d {
                    let apk = a[p * d + k];
                    let aqk = a[q * d + k];
                    a[p * d + k] = c * apk - s * aqk;
                    a[q * d + k] = s * apk + c * aqk;
                }
                for k in 0..d {
                    let vkp = v[k * d + p];
                    let vkq = v[k * d + q];
                    v[k * d + p] = c * vkp - s * vkq;
                    v[k * d + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let eig: Vec<f64> = (0..d).map(|i| a[i * d + i]).collect();
    (eig, v)
}

fn matmul_sq(a: &[f64], b: &[f64], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        for k in 0..d {
            let aik = a[i * d + k];
            for j in 0..d {
                out[i * d + j] += aik * b[k * d + j];
            }
        }
    }
    out
}

/// PSD square root via eigendecomposition, eigenvalues clamped at 0.
pub fn sqrt_psd(mat: &[f64], d: usize) -> Vec<f64> {
    let (eig, v) = jacobi_eigen(mat, d);
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            let mut acc = 0.0;
            for k in 0..d {
                acc += v[i * d + k] * eig[k].max(0.0).sqrt() * v[j * d + k];
            }
            out[i * d + j] = acc;
        }
    }
    out
}

/// Fréchet distance between Gaussians fitted to the two sample sets.
pub fn frechet_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    let ga = GaussianSummary::fit(a)?;
    let gb = GaussianSummary::fit(b)?;
    if ga.dim != gb.dim {
        return Err(Error::Data(format!(
            "sample dimensions disagree: {} vs {}",
            ga.dim, gb.dim
        )));
    }
    Ok(frechet_between(&ga, &gb))
}

pub fn frechet_between(ga: &GaussianSummary, gb: &GaussianSummary) -> f64 {
    let d = ga.dim;
    let mean_term: f64 = ga
        .mean
        .iter()
        .zip(&gb.mean)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    let tr_a: f64 = (0..d).map(|i| ga.cov[i * d + i]).sum();
    let tr_b: f64 = (0..d).map(|i| gb.cov[i * d + i]).sum();
    // Tr((Σ₁Σ₂)^{1/2}) computed symmetrically: eigenvalues of
    // Σ₁^{1/2} Σ₂ Σ₁^{1/2}, clamped at zero against round-off.
    let sa = sqrt_psd(&ga.cov, d);
    let inner = matmul_sq(&matmul_sq(&sa, &gb.cov, d), &sa, d);
    let (eig, _) = jacobi_eigen(&inner, d);
    let tr_sqrt: f64 = eig.iter().map(|&l| l.max(0.0).sqrt()).sum();
    (mean_term + tr_a + tr_b - 2.0 * tr_sqrt).max(0.0)
}
