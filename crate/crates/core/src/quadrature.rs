//! Quadrature rules shared by the kernel, Weyl-derivative and norm code.

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    /// `n`-point rule; nodes are found by Newton iteration on `P_n`.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let nf = n as f64;
        for i in 0..n.div_ceil(2) {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Nodes and weights mapped to `[a, b]`.
    pub fn on(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let c = 0.5 * (a + b);
        let h = 0.5 * (b - a);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(x, w)| (c + h * x, h * w))
    }

    pub fn integrate(&self, a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.on(a, b).map(|(x, w)| w * f(x)).sum()
    }

    /// Nodes and weights on `[a, b]` after the quintic smoothstep substitution
    /// `x = a + (b-a) S(u)`, `S(u) = u^3 (10 - 15u + 6u^2)`.
    ///
    /// `S'` vanishes to second order at both ends, which turns endpoint power
    /// singularities `|x-a|^{-p}` (p < 1) into integrable, much milder ones.
    pub fn graded_on(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let h = b - a;
        self.on(0.0, 1.0).map(move |(u, w)| {
            let s = u * u * u * (10.0 - 15.0 * u + 6.0 * u * u);
            let ds = 30.0 * u * u * (1.0 - u) * (1.0 - u);
            (a + h * s, w * h * ds)
        })
    }
}

/// `(P_n(x), P_n'(x))` by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let nf = n as f64;
    let d = nf * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Adaptive Gauss–Legendre quadrature by interval bisection.
///
/// Each panel is integrated with a 10-point rule and compared with the sum over
/// its two halves; panels are split until the difference is below
/// `tol * max(1, |total|)` scaled by the panel's share of the interval.
pub fn adaptive(f: &mut dyn FnMut(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let rule = GaussLegendre::new(10);
    let whole = rule.integrate(a, b, &mut *f);
    adaptive_rec(f, &rule, a, b, whole, tol, 0)
}

fn adaptive_rec(
    f: &mut dyn FnMut(f64) -> f64,
    rule: &GaussLegendre,
    a: f64,
    b: f64,
    whole: f64,
    tol: f64,
    depth: usize,
) -> f64 {
    let m = 0.5 * (a + b);
    let left = rule.integrate(a, m, &mut *f);
    let right = rule.integrate(m, b, &mut *f);
    let refined = left + right;
    if depth >= 40 || (refined - whole).abs() <= tol * refined.abs().max(1e-300) {
        return refined;
    }
    adaptive_rec(f, rule, a, m, left, tol, depth + 1) + adaptive_rec(f, rule, m, b, right, tol, depth + 1)
}

/// `phi_1(z) = (e^z - 1)/z`, accurate near zero.
pub fn phi1(z: f64) -> f64 {
    if z.abs() < 1e-5 {
        1.0 + z / 2.0 + z * z / 6.0
    } else {
        z.exp_m1() / z
    }
}

/// `phi_2(z) = (e^z - 1 - z)/z^2`.
pub fn phi2(z: f64) -> f64 {
    if z.abs() < 0.1 {
        series_phi(z, 2)
    } else {
        (z.exp_m1() - z) / (z * z)
    }
}

/// `phi_3(z) = (e^z - 1 - z - z^2/2)/z^3`.
pub fn phi3(z: f64) -> f64 {
    if z.abs() < 0.2 {
        series_phi(z, 3)
    } else {
        (z.exp_m1() - z - 0.5 * z * z) / (z * z * z)
    }
}

/// `sum_{k>=0} z^k / (k+j)!`.
fn series_phi(z: f64, j: u32) -> f64 {
    let mut fact: f64 = (1..=j).map(f64::from).product();
    let mut term = 1.0 / fact;
    let mut sum = term;
    for k in 1..30u32 {
        fact *= f64::from(k + j);
        term = z.powi(k as i32) / fact;
        sum += term;
        if term.abs() < 1e-18 * sum.abs() {
            break;
        }
    }
    sum
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_is_exact_for_polynomials() {
        let rule = GaussLegendre::new(5);
        // exact up to degree 9
        let v = rule.integrate(0.0, 2.0, |x| x.powi(9) - 3.0 * x.powi(4));
        let exact = 2f64.powi(10) / 10.0 - 3.0 * 2f64.powi(5) / 5.0;
        assert!((v - exact).abs() < 1e-11 * exact.abs());
        let wsum: f64 = GaussLegendre::new(12).on(-1.0, 1.0).map(|(_, w)| w).sum();
        assert!((wsum - 2.0).abs() < 1e-14);
    }

    #[test]
    fn graded_rule_handles_endpoint_singularity() {
        let rule = GaussLegendre::new(16);
        let v: f64 = rule.graded_on(0.0, 1.0).map(|(x, w)| w * x.powf(-0.3)).sum();
        assert!((v - 1.0 / 0.7).abs() < 1e-5, "{v}");
    }

    #[test]
    fn adaptive_converges() {
        let v = adaptive(&mut |x: f64| x.sqrt(), 0.0, 1.0, 1e-13);
        assert!((v - 2.0 / 3.0).abs() < 1e-11);
    }

    #[test]
    fn phi_functions_are_continuous_at_switch() {
        for (f, name) in [(phi1 as fn(f64) -> f64, "phi1"), (phi2, "phi2"), (phi3, "phi3")] {
            for z in [-0.2001, -0.1999, -0.1001, -0.0999, -1e-5, 1e-5, 0.0999, 0.1001] {
                let a = f(z);
                let b = f(z * (1.0 + 1e-9));
                assert!((a - b).abs() < 1e-8, "{name} at {z}");
            }
        }
        assert!((phi1(0.0) - 1.0).abs() < 1e-16);
        assert!((phi2(0.0) - 0.5).abs() < 1e-16);
        assert!((phi3(0.0) - 1.0 / 6.0).abs() < 1e-16);
        assert!((phi3(-3.0) - ((-3f64).exp() - 1.0 + 3.0 - 4.5) / -27.0).abs() < 1e-15);
    }
}
