//! Brute-force reference computations written without the library's
//! factorizations or closed forms.

use nalgebra::{DMatrix, DVector};

use super::quadrature::integrate_rn;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Log of `∫ N(v; Xα, I) π(α_A) dα` with a unit flat prior on the base block
/// and `α_A ~ N(0, (2n/p) S⁻¹)`, by nested adaptive quadrature.
pub fn quadrature_log_marginal(x: &DMatrix<f64>, base_dim: usize, v: &[f64]) -> f64 {
    let n = x.nrows();
    let p = x.ncols();
    let k = p - base_dim;
    let vv = DVector::from_column_slice(v);

    let x0 = x.columns(0, base_dim).into_owned();
    let xa = x.columns(base_dim, k).into_owned();
    let h0 = &x0 * (x0.transpose() * &x0).try_inverse().unwrap() * x0.transpose();
    let resid = DMatrix::<f64>::identity(n, n) - h0;
    let s = xa.transpose() * resid * &xa;
    let c = 2.0 * n as f64 / p as f64;
    let (prior_prec, prior_logdet) = if k > 0 {
        let cov = s.try_inverse().unwrap() * c;
        (cov.clone().try_inverse().unwrap(), cov.determinant().ln())
    } else {
        (DMatrix::zeros(0, 0), 0.0)
    };

    let xtx = x.transpose() * x;
    let xtv = x.transpose() * &vv;
    let v2 = vv.norm_squared();
    let log_integrand = |a: &[f64]| -> f64 {
        let mut rss = v2;
        for i in 0..p {
            rss -= 2.0 * a[i] * xtv[i];
            for j in 0..p {
                rss += a[i] * xtx[(i, j)] * a[j];
            }
        }
        let mut out = -0.5 * rss - 0.5 * n as f64 * LN_2PI;
        if k > 0 {
            let aa = &a[base_dim..];
            let mut q = 0.0;
            for i in 0..k {
                for j in 0..k {
                    q += aa[i] * prior_prec[(i, j)] * aa[j];
                }
            }
            out += -0.5 * k as f64 * LN_2PI - 0.5 * prior_logdet - 0.5 * q;
        }
        out
    };

    // Integrate in the eigenbasis of X'X so collinear columns do not leave
    // a thin diagonal ridge: α = â + U Λ^{-1/2} t.
    let ls = xtx.clone().try_inverse().unwrap() * &xtv;
    let eig = xtx.clone().symmetric_eigen();
    let map = &eig.eigenvectors * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
    let log_jacobian: f64 = eig.eigenvalues.iter().map(|l| -0.5 * l.ln()).sum();
    assert!(p <= 8);
    let to_alpha = |t: &[f64]| -> [f64; 8] {
        let mut a = [0.0; 8];
        for i in 0..p {
            a[i] = ls[i] + (0..p).map(|j| map[(i, j)] * t[j]).sum::<f64>();
        }
        a
    };
    let shift = log_integrand(&to_alpha(&vec![0.0; p]));
    let mut f = |t: &[f64]| (log_integrand(&to_alpha(t)) - shift).exp();
    let val = integrate_rn(&mut f, p, &vec![0.0; p], &vec![1.0; p], 1e-9);
    let shift = shift + log_jacobian;
    shift + val.ln()
}

fn phi(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Log likelihood by explicit summation over every configuration of the
/// presence indicators at sites without detections.
pub fn brute_force_loglik(surveys: &[Vec<u8>], eta_z: &[f64], eta_y: &[Vec<f64>]) -> f64 {
    let unknown: Vec<usize> = (0..surveys.len()).filter(|&i| surveys[i].iter().all(|&y| y == 0)).collect();
    assert!(unknown.len() <= 16);
    let mut total = 0.0;
    for mask in 0u32..(1 << unknown.len()) {
        let mut lik = 1.0;
        for i in 0..surveys.len() {
            let z = match unknown.iter().position(|&u| u == i) {
                Some(k) => (mask >> k) & 1 == 1,
                None => true,
            };
            // Complements as Φ(−η) so large predictors keep their digits.
            lik *= if z { phi(eta_z[i]) } else { phi(-eta_z[i]) };
            for (j, &y) in surveys[i].iter().enumerate() {
                lik *= match (z, y) {
                    (true, 1) => phi(eta_y[i][j]),
                    (true, _) => phi(-eta_y[i][j]),
                    (false, 1) => 0.0,
                    (false, _) => 1.0,
                };
            }
        }
        total += lik;
    }
    total.ln()
}
