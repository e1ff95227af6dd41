//! Adaptive Gauss-Kronrod (7/15) integration, nested for low dimensions.

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut vals = [(0.0, 0.0); 7];
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for i in 0..7 {
        let x = h * XGK[i];
        vals[i] = (f(c - x), f(c + x));
        let s = vals[i].0 + vals[i].1;
        k += WGK[i] * s;
        if i % 2 == 1 {
            g += WG[i / 2] * s;
        }
    }
    // QUADPACK error scaling.
    let mean = 0.5 * k;
    let mut asc = WGK[7] * (fc - mean).abs();
    for i in 0..7 {
        asc += WGK[i] * ((vals[i].0 - mean).abs() + (vals[i].1 - mean).abs());
    }
    let asc = asc * h.abs();
    let mut err = ((k - g) * h).abs();
    if asc != 0.0 && err != 0.0 {
        err = asc * (200.0 * err / asc).powf(1.5).min(1.0);
    }
    (k * h, err)
}

/// Integrate `f` over `[a, b]` until the error estimate is below
/// `max(rel·|I|, abs)`.
pub fn integrate<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, rel: f64, abs: f64) -> f64 {
    let first = gk15(&mut f, a, b);
    let (mut total, mut err) = first;
    let mut parts = vec![(a, b, first)];
    for _ in 0..4000 {
        if err <= (rel * total.abs()).max(abs) {
            break;
        }
        let (worst, _) = parts
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .2 .1.total_cmp(&y.1 .2 .1))
            .unwrap();
        let (lo, hi, old) = parts.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        let left = gk15(&mut f, lo, mid);
        let right = gk15(&mut f, mid, hi);
        total += left.0 + right.0 - old.0;
        err += left.1 + right.1 - old.1;
        parts.push((lo, mid, left));
        parts.push((mid, hi, right));
    }
    parts.iter().map(|p| p.2 .0).sum()
}

/// Integrate over the real line via `x = c + s·t/(1−t²)`.
pub fn integrate_real<F: FnMut(f64) -> f64>(mut f: F, center: f64, scale: f64, rel: f64, abs: f64) -> f64 {
    integrate(
        |t| {
            let d = 1.0 - t * t;
            if d <= 0.0 {
                return 0.0;
            }
            let x = center + scale * t / d;
            let jac = scale * (1.0 + t * t) / (d * d);
            let v = f(x);
            if v == 0.0 {
                0.0
            } else {
                v * jac
            }
        },
        -1.0,
        1.0,
        rel,
        abs,
    )
}

/// Integrate `f` over `R^dim` by nesting one-dimensional rules. `f` should
/// peak near 1; inner integrals below `rel·1e-4` in absolute terms stop early.
pub fn integrate_rn<F: FnMut(&[f64]) -> f64>(f: &mut F, dim: usize, center: &[f64], scales: &[f64], rel: f64) -> f64 {
    let mut point = vec![0.0; dim];
    nest(f, &mut point, 0, center, scales, rel)
}

fn nest<F: FnMut(&[f64]) -> f64>(
    f: &mut F,
    point: &mut Vec<f64>,
    depth: usize,
    center: &[f64],
    scales: &[f64],
    rel: f64,
) -> f64 {
    if depth == point.len() {
        return f(point);
    }
    integrate_real(
        |x| {
            point[depth] = x;
            nest(f, point, depth + 1, center, scales, rel)
        },
        center[depth],
        scales[depth],
        rel,
        rel * 1e-4,
    )
}
