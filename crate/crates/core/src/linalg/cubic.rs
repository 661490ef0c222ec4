//! Unique positive root of `aΔ³ + bΔ² + cΔ = ε`.
//!
//! With `a > 0`, `b, c ≥ 0` and `ε > 0` the left-hand side is strictly
//! increasing on `Δ > 0` and starts at 0, so exactly one positive root
//! exists. It is found through the depressed cubic `t = Δ + b/(3a)`: the
//! Cardano radicals when the discriminant is nonnegative, the trigonometric
//! form when it is negative. A short Newton polish removes the cancellation
//! error of `t − b/(3a)`.

use super::LinalgError;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CubicProblem {
    cubic: f64,
    quad: f64,
    linear: f64,
    target: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CubicBranch {
    /// `b = c = 0`: `Δ = (ε/a)^{1/3}`.
    PureCube,
    /// Nonnegative discriminant, one real root.
    Cardano,
    /// Negative discriminant, three real roots; the largest is taken.
    Trigonometric,
    /// Closed form was non-finite or non-positive after cancellation; Newton
    /// started from the bracketing upper bound instead.
    NewtonFallback,
}

impl CubicBranch {
    pub fn as_str(self) -> &'static str {
        match self {
            CubicBranch::PureCube => "pure_cube",
            CubicBranch::Cardano => "cardano",
            CubicBranch::Trigonometric => "trigonometric",
            CubicBranch::NewtonFallback => "newton_fallback",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CubicRoot {
    pub root: f64,
    pub branch: CubicBranch,
    /// `|aΔ³ + bΔ² + cΔ − ε|` at the returned root.
    pub residual: f64,
    pub newton_steps: usize,
}

impl CubicProblem {
    /// `cubic·Δ³ + quad·Δ² = target`.
    pub fn new(cubic: f64, quad: f64, target: f64) -> Result<Self, LinalgError> {
        Self::with_linear(cubic, quad, 0.0, target)
    }

    /// `cubic·Δ³ + quad·Δ² + linear·Δ = target`.
    pub fn with_linear(
        cubic: f64,
        quad: f64,
        linear: f64,
        target: f64,
    ) -> Result<Self, LinalgError> {
        let ok = cubic.is_finite()
            && cubic > 0.0
            && quad.is_finite()
            && quad >= 0.0
            && linear.is_finite()
            && linear >= 0.0
            && target.is_finite()
            && target > 0.0;
        if !ok {
            return Err(LinalgError::InvalidCubic {
                cubic,
                quad,
                linear,
                target,
            });
        }
        Ok(Self {
            cubic,
            quad,
            linear,
            target,
        })
    }

    pub fn cubic(&self) -> f64 {
        self.cubic
    }

    pub fn quad(&self) -> f64 {
        self.quad
    }

    pub fn linear(&self) -> f64 {
        self.linear
    }

    pub fn target(&self) -> f64 {
        self.target
    }

    /// Left-hand side minus target.
    pub fn eval(&self, delta: f64) -> f64 {
        ((self.cubic * delta + self.quad) * delta + self.linear) * delta - self.target
    }

    fn derivative(&self, delta: f64) -> f64 {
        (3.0 * self.cubic * delta + 2.0 * self.quad) * delta + self.linear
    }

    /// An upper bound on the root: each term alone must not exceed the target.
    pub fn upper_bound(&self) -> f64 {
        let mut hi = (self.target / self.cubic).cbrt();
        if self.quad > 0.0 {
            hi = hi.min((self.target / self.quad).sqrt());
        }
        if self.linear > 0.0 {
            hi = hi.min(self.target / self.linear);
        }
        hi
    }
}

pub fn unique_positive_cubic_root(p: &CubicProblem) -> CubicRoot {
    let (closed, branch) = closed_form(p);
    let (start, branch) = if closed.is_finite() && closed > 0.0 {
        (closed, branch)
    } else {
        (p.upper_bound(), CubicBranch::NewtonFallback)
    };
    let (root, newton_steps) = newton_polish(p, start);
    CubicRoot {
        root,
        branch,
        residual: p.eval(root).abs(),
        newton_steps,
    }
}

fn closed_form(p: &CubicProblem) -> (f64, CubicBranch) {
    if p.quad == 0.0 && p.linear == 0.0 {
        return ((p.target / p.cubic).cbrt(), CubicBranch::PureCube);
    }
    // Monic form Δ³ + αΔ² + γΔ − β = 0.
    let alpha = p.quad / p.cubic;
    let gamma = p.linear / p.cubic;
    let beta = p.target / p.cubic;
    let shift = alpha / 3.0;
    let dp = gamma - alpha * alpha / 3.0;
    let dq = 2.0 * alpha.powi(3) / 27.0 - alpha * gamma / 3.0 - beta;
    let disc = (dq / 2.0).powi(2) + (dp / 3.0).powi(3);
    if disc >= 0.0 {
        // Sign choice avoids cancellation between the two radicals.
        let big = -dq.signum() * (dq.abs() / 2.0 + disc.sqrt()).cbrt();
        let small = if big != 0.0 { -dp / (3.0 * big) } else { 0.0 };
        (big + small - shift, CubicBranch::Cardano)
    } else {
        let m = 2.0 * (-dp / 3.0).sqrt();
        let arg = ((3.0 * dq) / (2.0 * dp) * (-3.0 / dp).sqrt()).clamp(-1.0, 1.0);
        let theta = arg.acos() / 3.0;
        // The k = 0 root, the largest of the three.
        let t = m * theta.cos();
        (t - shift, CubicBranch::Trigonometric)
    }
}

/// Newton on a function that is increasing and convex for `Δ > 0`. Iterates
/// that step to the right of the root then decrease monotonically.
fn newton_polish(p: &CubicProblem, start: f64) -> (f64, usize) {
    let mut x = start;
    let mut best = x;
    let mut best_res = p.eval(x).abs();
    let mut steps = 0;
    for _ in 0..60 {
        let f = p.eval(x);
        let d = p.derivative(x);
        if f == 0.0 || d <= 0.0 || !d.is_finite() {
            break;
        }
        let mut next = x - f / d;
        if next <= 0.0 {
            next = x / 2.0;
        }
        steps += 1;
        let res = p.eval(next).abs();
        if res < best_res || (res == best_res && next != best) {
            best = next;
            best_res = res;
        }
        let moved = (next - x).abs();
        x = next;
        if moved <= 4.0 * f64::EPSILON * x.abs() {
            break;
        }
    }
    (best, steps)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pure_cube() {
        let r = unique_positive_cubic_root(&CubicProblem::new(1.0, 0.0, 8.0).unwrap());
        assert_eq!(r.branch, CubicBranch::PureCube);
        assert!((r.root - 2.0).abs() < 1e-15);
    }

    #[test]
    fn zero_sharpness_limit() {
        // k = 2, m = 3, L = 1 gives kmL³/24 = 1/4.
        let r = unique_positive_cubic_root(&CubicProblem::new(0.25, 0.0, 0.25).unwrap());
        assert!((r.root - 1.0).abs() < 1e-15);
    }

    #[test]
    fn both_branches_reached() {
        // Quadratic-dominated: negative discriminant.
        let t = unique_positive_cubic_root(&CubicProblem::new(1e-3, 5.0, 0.1).unwrap());
        assert_eq!(t.branch, CubicBranch::Trigonometric);
        assert!(t.residual < 1e-12);
        // Cubic-dominated: Cardano radicals.
        let c = unique_positive_cubic_root(&CubicProblem::new(5.0, 1e-3, 10.0).unwrap());
        assert_eq!(c.branch, CubicBranch::Cardano);
        assert!(c.residual < 1e-12);
    }

    #[test]
    fn linear_term_supported() {
        let p = CubicProblem::with_linear(1.0, 2.0, 3.0, 6.0).unwrap();
        let r = unique_positive_cubic_root(&p);
        assert!((r.root - 1.0).abs() < 1e-14);
    }

    #[test]
    fn invalid_problems_rejected() {
        assert!(CubicProblem::new(0.0, 1.0, 1.0).is_err());
        assert!(CubicProblem::new(1.0, -1.0, 1.0).is_err());
        assert!(CubicProblem::new(1.0, 1.0, 0.0).is_err());
        assert!(CubicProblem::new(1.0, f64::NAN, 1.0).is_err());
    }

    #[test]
    fn extreme_ratio_stays_accurate() {
        let p = CubicProblem::new(1e-9, 1e6, 1e-3).unwrap();
        let r = unique_positive_cubic_root(&p);
        assert!(r.root > 0.0);
        assert!(r.residual < 1e-12, "{r:?}");
        assert!((r.root - (1e-3f64 / 1e6).sqrt()).abs() / r.root < 1e-6);
    }
}
