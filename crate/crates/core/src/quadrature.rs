//! Numerical integration used by the event-law functionals.

use std::sync::OnceLock;

/// Nodes and weights of the `n`-point Gauss-Legendre rule on `[-1, 1]`,
/// found by Newton iteration on the Legendre recurrence.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, 0.0);
            for j in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * j + 1) as f64 * z * p1 - j as f64 * p2) / (j + 1) as f64;
            }
            dp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn gl64() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(64))
}

/// 64-point Gauss-Legendre approximation of `∫_a^b f`.
pub fn gl64_integrate<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let (x, w) = gl64();
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    x.iter()
        .zip(w)
        .map(|(xi, wi)| wi * f(mid + half * xi))
        .sum::<f64>()
        * half
}

/// Adaptive trapezoid rule: each interval is halved until the refined and
/// coarse estimates agree to `tol` (scaled by the interval share).
pub fn adaptive_trapezoid<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let coarse = 0.5 * (b - a) * (fa + fb);
    refine(&mut f, a, b, fa, fb, coarse, tol, 0)
}

#[allow(clippy::too_many_arguments)]
fn refine<F: FnMut(f64) -> f64>(
    f: &mut F,
    a: f64,
    b: f64,
    fa: f64,
    fb: f64,
    coarse: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let fm = f(m);
    let left = 0.25 * (b - a) * (fa + fm);
    let right = 0.25 * (b - a) * (fm + fb);
    let fine = left + right;
    // require a few levels so that a lucky agreement on a coarse grid is not
    // taken for convergence
    if depth >= 4 && ((fine - coarse).abs() <= 3.0 * tol || depth >= 40) {
        // Richardson step removes the leading h² error term
        return fine + (fine - coarse) / 3.0;
    }
    refine(f, a, m, fa, fm, left, 0.5 * tol, depth + 1)
        + refine(f, m, b, fm, fb, right, 0.5 * tol, depth + 1)
}

/// `∫_0^{1/2} s^{p-1} h(s) ds` for smooth `h`.
///
/// For `p < 1` the substitution `s = v^{1/p}` absorbs the singular factor.
/// The remaining integrand is only finitely smooth at 0, so the interval is
/// cut geometrically towards 0 and every piece gets its own rule.
fn singular_half<H: FnMut(f64) -> f64>(mut h: H, p: f64) -> f64 {
    if p < 1.0 {
        return geometric_pieces(|v| h(v.powf(1.0 / p)), 0.5f64.powf(p)) / p;
    }
    geometric_pieces(|s| s.powf(p - 1.0) * h(s), 0.5)
}

fn geometric_pieces<F: FnMut(f64) -> f64>(mut f: F, top: f64) -> f64 {
    let mut hi = top;
    let mut total = 0.0;
    // below 2^-52 of the range the remaining mass is negligible
    for _ in 0..52 {
        let lo = 0.5 * hi;
        total += gl64_integrate(&mut f, lo, hi);
        hi = lo;
    }
    total
}

/// `E[g(U)]` for `U ~ Beta(a, b)`.
///
/// The interval is split at 1/2 and each half is handled by
/// [`singular_half`], so the rule is accurate for every `a, b > 0`.
pub fn beta_expectation<G: FnMut(f64) -> f64>(mut g: G, a: f64, b: f64) -> f64 {
    let ln_b = statrs::function::beta::ln_beta(a, b);
    let left = singular_half(|u| g(u) * (1.0 - u).powf(b - 1.0), a);
    let right = singular_half(|s| g(1.0 - s) * (1.0 - s).powf(a - 1.0), b);
    (left + right) * (-ln_b).exp()
}
