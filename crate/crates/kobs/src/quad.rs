//! Gauss–Legendre quadrature nodes and weights.

/// Nodes and weights on `[−1, 1]`, exact for polynomials of degree `2m − 1`.
///
/// Newton iteration on the Legendre recurrence; nodes are returned ascending.
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(m >= 1);
    let mut nodes = vec![0.0; m];
    let mut weights = vec![0.0; m];
    for i in 0..m.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(m, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x.abs();
        weights[i] = w;
        nodes[m - 1 - i] = x.abs();
        weights[m - 1 - i] = w;
    }
    if m % 2 == 1 {
        let (_, d) = legendre_with_derivative(m, 0.0);
        nodes[m / 2] = 0.0;
        weights[m / 2] = 2.0 / (d * d);
    }
    (nodes, weights)
}

fn legendre_with_derivative(m: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=m {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    if m == 0 {
        return (1.0, 0.0);
    }
    if m == 1 {
        return (x, 1.0);
    }
    let d = m as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Rule mapped to `[a, b]`.
pub fn gauss_legendre_on(m: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (n, w) = gauss_legendre(m);
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    (
        n.iter().map(|t| mid + half * t).collect(),
        w.iter().map(|wi| wi * half).collect(),
    )
}
