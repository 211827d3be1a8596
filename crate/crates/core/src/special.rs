//! Exponential integrals and Gauss-Legendre rules.

pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Entire exponential integral Ein(x) = ∫₀ˣ (1 − e^{−t})/t dt.
pub fn ein(x: f64) -> f64 {
    if x.abs() <= 2.0 {
        let mut term = x;
        let mut sum = x;
        let mut m = 1.0;
        loop {
            term *= -x * m / ((m + 1.0) * (m + 1.0));
            m += 1.0;
            sum += term;
            if term.abs() <= 1e-17 * sum.abs() || m > 60.0 {
                break;
            }
        }
        sum
    } else {
        e1(x) + x.ln() + EULER_GAMMA
    }
}

/// Exponential integral E₁(x) for x > 0.
pub fn e1(x: f64) -> f64 {
    debug_assert!(x > 0.0);
    if x > 745.0 {
        return 0.0;
    }
    if x <= 1.0 {
        return -EULER_GAMMA - x.ln() + ein(x);
    }
    // modified Lentz on the continued fraction
    let tiny = 1e-300;
    let mut b = x + 1.0;
    let mut c = 1.0 / tiny;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..500 {
        let an = -((i * i) as f64);
        b += 2.0;
        d = 1.0 / (an * d + b);
        c = b + an / c;
        let del = c * d;
        h *= del;
        if (del - 1.0).abs() < 1e-16 {
            break;
        }
    }
    h * (-x).exp()
}

/// φ(s) = (1 − e^{−s})/s and its derivative.
pub fn phi(s: f64) -> (f64, f64) {
    if s < 0.1 {
        // series in s
        let mut p = 0.0;
        let mut dp = 0.0;
        let mut fact = 1.0; // (m+1)!
        let mut pow = 1.0; // (-s)^m
        let mut dpow = 0.0; // d/ds (-s)^m
        for m in 0..14 {
            fact *= (m + 1) as f64;
            p += pow / fact;
            dp += dpow / fact;
            dpow = -((m + 1) as f64) * pow;
            pow *= -s;
        }
        (p, dp)
    } else {
        let e = (-s).exp();
        ((1.0 - e) / s, (e * (1.0 + s) - 1.0) / (s * s))
    }
}

/// Gauss-Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    for i in 0..(n + 1) / 2 {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            if n == 1 {
                p0 = 1.0;
                p1 = z;
            }
            dp = nf * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Gauss-Legendre rule mapped to [a, b].
pub fn gl_interval(n: usize, a: f64, b: f64) -> Vec<(f64, f64)> {
    let (x, w) = gauss_legendre(n);
    let h = 0.5 * (b - a);
    let m = 0.5 * (a + b);
    x.iter().zip(w.iter()).map(|(xi, wi)| (m + h * xi, h * wi)).collect()
}
