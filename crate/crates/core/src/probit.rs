//! Standard normal numerics for the probit link: stable log-CDF tails,
//! the quantile function, and one-sided truncated normal sampling.

use std::f64::consts::{FRAC_1_SQRT_2, SQRT_2};

use rand::Rng;
use rand_distr::{Exp1, Open01, StandardNormal};
use libm::erfc;
use statrs::function::erf::erfc_inv;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Boundary distance (in standard deviations) above which the truncated
/// sampler switches from inverse-CDF to exponential rejection.
pub const TAIL_SWITCH: f64 = 5.0;

pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x - LN_SQRT_2PI).exp()
}

pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// `ln Φ(x)`, accurate in both tails.
pub fn log_norm_cdf(x: f64) -> f64 {
    if x > 5.0 {
        (-0.5 * erfc(x * FRAC_1_SQRT_2)).ln_1p()
    } else if x > -30.0 {
        (0.5 * erfc(-x * FRAC_1_SQRT_2)).ln()
    } else {
        // Asymptotic Mills-ratio series; relative error < 1e-13 here.
        let r = 1.0 / (x * x);
        let series = 1.0 - r * (1.0 - 3.0 * r * (1.0 - 5.0 * r * (1.0 - 7.0 * r)));
        -0.5 * x * x - (-x).ln() - LN_SQRT_2PI + series.ln()
    }
}

/// `ln(1 - Φ(x))`.
#[inline]
pub fn log_norm_sf(x: f64) -> f64 {
    log_norm_cdf(-x)
}

/// `φ(x) / Φ(x)`, the inverse Mills ratio, without cancellation in the
/// lower tail.
pub fn inv_mills(x: f64) -> f64 {
    if x > -30.0 {
        (-0.5 * x * x - LN_SQRT_2PI - log_norm_cdf(x)).exp()
    } else {
        let r = 1.0 / (x * x);
        let series = 1.0 - r * (1.0 - 3.0 * r * (1.0 - 5.0 * r * (1.0 - 7.0 * r)));
        -x / series
    }
}

/// `(ln Φ(x), φ(x)/Φ(x))` sharing one tail evaluation.
pub fn log_cdf_and_mills(x: f64) -> (f64, f64) {
    let lc = log_norm_cdf(x);
    let mills = if x > -30.0 {
        (-0.5 * x * x - LN_SQRT_2PI - lc).exp()
    } else {
        inv_mills(x)
    };
    (lc, mills)
}

pub fn norm_quantile(p: f64) -> f64 {
    let x = -SQRT_2 * erfc_inv(2.0 * p);
    if !x.is_finite() {
        return x;
    }
    // One Halley step against the CDF.
    let e = if x < 0.0 {
        (norm_cdf(x) - p) / norm_pdf(x)
    } else {
        ((1.0 - p) - norm_cdf(-x)) / norm_pdf(x)
    };
    x - e / (1.0 + 0.5 * x * e)
}

/// Log density of `N(mean, 1)` at `x`.
#[inline]
pub fn log_std_normal_pdf(x: f64, mean: f64) -> f64 {
    let d = x - mean;
    -0.5 * d * d - LN_SQRT_2PI
}

/// Draw `Y ~ N(0,1)` conditioned on `Y > a`.
pub fn sample_std_above<R: Rng + ?Sized>(a: f64, rng: &mut R) -> f64 {
    if a <= TAIL_SWITCH {
        let u: f64 = rng.sample(Open01);
        let tail = norm_cdf(-a);
        let y = -norm_quantile(u * tail);
        // Guard the last ulp when the tail mass rounds.
        if y > a {
            y
        } else {
            a + f64::EPSILON * a.abs().max(1.0)
        }
    } else {
        let rate = 0.5 * (a + (a * a + 4.0).sqrt());
        loop {
            let e: f64 = rng.sample(Exp1);
            let z = a + e / rate;
            let d = z - rate;
            let u: f64 = rng.sample(Open01);
            if u <= (-0.5 * d * d).exp() {
                return z;
            }
        }
    }
}

/// Draw from `N(mean, 1)` truncated to `(0, ∞)`.
#[inline]
pub fn sample_positive<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> f64 {
    let x = mean + sample_std_above(-mean, rng);
    if x > 0.0 {
        x
    } else {
        f64::MIN_POSITIVE
    }
}

/// Draw from `N(mean, 1)` truncated to `(-∞, 0]`.
#[inline]
pub fn sample_nonpositive<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> f64 {
    let x = mean - sample_std_above(mean, rng);
    x.min(0.0)
}

#[inline]
pub fn sample_normal<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> f64 {
    let e: f64 = rng.sample(StandardNormal);
    mean + e
}

/// `ln(exp(a) + exp(b))`.
#[inline]
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Log-sum-exp over a slice; `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Normalize log scores into probabilities.
pub fn softmax(log_scores: &[f64]) -> Option<Vec<f64>> {
    let lse = log_sum_exp(log_scores);
    if !lse.is_finite() {
        return None;
    }
    Some(log_scores.iter().map(|s| (s - lse).exp()).collect())
}

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_5;
