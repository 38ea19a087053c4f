//! Monotone piecewise-cubic Hermite interpolation (Fritsch–Butland slopes).

#[derive(Debug, Clone)]
pub(crate) struct MonotoneCubic {
    x: Vec<f64>,
    y: Vec<f64>,
    d: Vec<f64>,
}

impl MonotoneCubic {
    /// `x` strictly increasing, `y` non-decreasing, at least two points.
    pub(crate) fn new(x: Vec<f64>, y: Vec<f64>) -> Self {
        let n = x.len();
        debug_assert!(n >= 2 && y.len() == n);
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let s: Vec<f64> = (0..n - 1).map(|k| (y[k + 1] - y[k]) / h[k]).collect();
        let mut d = vec![0.0; n];
        if n == 2 {
            d[0] = s[0];
            d[1] = s[0];
            return Self { x, y, d };
        }
        for k in 1..n - 1 {
            if s[k - 1] > 0.0 && s[k] > 0.0 {
                // Weighted harmonic mean of the neighbouring secants.
                let w1 = 2.0 * h[k] + h[k - 1];
                let w2 = h[k] + 2.0 * h[k - 1];
                d[k] = (w1 + w2) / (w1 / s[k - 1] + w2 / s[k]);
            }
        }
        d[0] = end_slope(h[0], h[1], s[0], s[1]);
        d[n - 1] = end_slope(h[n - 2], h[n - 3], s[n - 2], s[n - 3]);
        Self { x, y, d }
    }

    fn segment(&self, x: f64) -> usize {
        let n = self.x.len();
        match self.x.binary_search_by(|v| v.partial_cmp(&x).unwrap()) {
            Ok(k) => k.min(n - 2),
            Err(k) => k.saturating_sub(1).min(n - 2),
        }
    }

    fn eval_in(&self, k: usize, x: f64) -> f64 {
        let h = self.x[k + 1] - self.x[k];
        let t = (x - self.x[k]) / h;
        let t2 = t * t;
        let t3 = t2 * t;
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        h00 * self.y[k] + h10 * h * self.d[k] + h01 * self.y[k + 1] + h11 * h * self.d[k + 1]
    }

    pub(crate) fn eval(&self, x: f64) -> f64 {
        self.eval_in(self.segment(x), x)
    }
}

/// Shape-preserving one-sided three-point slope at an end point.
fn end_slope(h0: f64, h1: f64, s0: f64, s1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * s0 - h0 * s1) / (h0 + h1);
    if d.signum() != s0.signum() {
        0.0
    } else if s0.signum() != s1.signum() && d.abs() > 3.0 * s0.abs() {
        3.0 * s0
    } else {
        d
    }
}

/// Inverse of the sum of two monotone interpolants on a shared knot set,
/// by bisection within the bracketing knot interval.
pub(crate) fn invert_sum(a: &MonotoneCubic, b: &MonotoneCubic, target: f64) -> f64 {
    let n = a.x.len();
    let total = |k: usize| a.y[k] + b.y[k];
    // Last knot with cumulative value ≤ target.
    let (mut lo_k, mut hi_k) = (0usize, n - 1);
    while hi_k - lo_k > 1 {
        let mid = (lo_k + hi_k) / 2;
        if total(mid) <= target {
            lo_k = mid;
        } else {
            hi_k = mid;
        }
    }
    let k = lo_k;
    let (mut lo, mut hi) = (a.x[k], a.x[k + 1]);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if a.eval_in(k, mid) + b.eval_in(k, mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}
