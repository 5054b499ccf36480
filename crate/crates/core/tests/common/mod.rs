//! Test oracles written independently of the library's rate-matrix and propagator code.

#![allow(dead_code)]

/// Hand-written reduced-model derivative over [S0, S1, Tx, Ty, Tz]; S1 stays empty.
/// `k`, `w` = [wxy, wxz, wyz], `p` branching, `g` = pump·yield (0 when dark).
pub fn derivative(n: &[f64; 5], k: [f64; 3], w: [f64; 3], p: [f64; 3], g: f64) -> [f64; 5] {
    let [s0, _, tx, ty, tz] = *n;
    let [wxy, wxz, wyz] = w;
    let mut d = [0.0; 5];
    d[0] = -g * s0 + k[0] * tx + k[1] * ty + k[2] * tz;
    d[2] = g * p[0] * s0 - k[0] * tx - wxy * (tx - ty) - wxz * (tx - tz);
    d[3] = g * p[1] * s0 - k[1] * ty - wxy * (ty - tx) - wyz * (ty - tz);
    d[4] = g * p[2] * s0 - k[2] * tz - wxz * (tz - tx) - wyz * (tz - ty);
    d
}

/// Classical fourth-order Runge-Kutta with fixed step `dt` up to time `t`.
pub fn rk4(n0: [f64; 5], k: [f64; 3], w: [f64; 3], p: [f64; 3], g: f64, t: f64, dt: f64) -> [f64; 5] {
    let steps = (t / dt).round() as usize;
    let h = t / steps as f64;
    let mut n = n0;
    let add = |a: &[f64; 5], b: &[f64; 5], s: f64| {
        let mut o = *a;
        for i in 0..5 {
            o[i] += s * b[i];
        }
        o
    };
    for _ in 0..steps {
        let k1 = derivative(&n, k, w, p, g);
        let k2 = derivative(&add(&n, &k1, h / 2.0), k, w, p, g);
        let k3 = derivative(&add(&n, &k2, h / 2.0), k, w, p, g);
        let k4 = derivative(&add(&n, &k3, h), k, w, p, g);
        for i in 0..5 {
            n[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    n
}
