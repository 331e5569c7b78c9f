//! Composite Gauss–Legendre quadrature.

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..(n + 1) / 2 {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
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
        dp = if d != 0.0 { d } else { dp };
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Composite rule: `panels` equal panels on `[a, b]`, each with an
/// `points`-point Gauss rule (order `2 * points`).
pub struct Composite {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl Composite {
    pub fn new(points: usize) -> Self {
        let (nodes, weights) = gauss_legendre(points);
        Self { nodes, weights }
    }

    pub fn integrate(&self, f: &mut impl FnMut(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
        let w = (b - a) / panels as f64;
        let mut total = 0.0;
        for p in 0..panels {
            let lo = a + w * p as f64;
            let mid = lo + 0.5 * w;
            let mut s = 0.0;
            for (x, wt) in self.nodes.iter().zip(&self.weights) {
                s += wt * f(mid + 0.5 * w * x);
            }
            total += 0.5 * w * s;
        }
        total
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_for_polynomials() {
        for n in 1..=8 {
            let q = Composite::new(n);
            for deg in 0..(2 * n) {
                let got = q.integrate(&mut |x: f64| x.powi(deg as i32), 0.0, 1.0, 1);
                let want = 1.0 / (deg as f64 + 1.0);
                assert!((got - want).abs() < 1e-14, "n={n} deg={deg}");
            }
        }
    }

    #[test]
    fn weights_sum_to_two() {
        let (_, w) = gauss_legendre(10);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
    }
}
