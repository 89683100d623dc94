//! Reference computations written independently of the library: closed-form
//! energies, grid quadrature, rejection sampling, finite differences and a
//! plain event sweep.

#![allow(dead_code)]

use rand::Rng;

pub const KB: f64 = 0.0019872041;

pub fn beta(t: f64) -> f64 {
    1.0 / (KB * t)
}

pub fn double_well(a: f64, b: f64, x: f64) -> f64 {
    a * x.powi(4) - b * x.powi(2)
}

pub fn torsion(a: f64, b: f64, c: f64, phi_deg: f64, psi_deg: f64) -> f64 {
    let (p, s) = (phi_deg.to_radians(), psi_deg.to_radians());
    a * (1.0 - p.cos()) + b * (1.0 - s.cos()) + c * (p + s).cos()
}

/// Signed angular difference folded into [-180, 180).
pub fn fold_degrees(d: f64) -> f64 {
    let mut r = d % 360.0;
    if r >= 180.0 {
        r -= 360.0;
    }
    if r < -180.0 {
        r += 360.0;
    }
    r
}

/// Bin probabilities of exp(-U/kT) over `bins` equal bins of [lo, hi] from a
/// trapezoid rule on `grid` evenly spaced points; `grid - 1` must be a
/// multiple of `bins`.
pub fn bin_probabilities(u: impl Fn(f64) -> f64, t: f64, lo: f64, hi: f64, bins: usize, grid: usize) -> Vec<f64> {
    assert_eq!((grid - 1) % bins, 0);
    let per = (grid - 1) / bins;
    let h = (hi - lo) / (grid - 1) as f64;
    let w: Vec<f64> = (0..grid).map(|i| (-beta(t) * u(lo + i as f64 * h)).exp()).collect();
    let mut p: Vec<f64> = (0..bins)
        .map(|k| (k * per..(k + 1) * per).map(|i| 0.5 * h * (w[i] + w[i + 1])).sum())
        .collect();
    let z: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= z);
    p
}

pub fn histogram(xs: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    let mut h = vec![0.0; bins];
    for &x in xs {
        let k = ((x - lo) / (hi - lo) * bins as f64).floor();
        if k >= 0.0 && (k as usize) < bins {
            h[k as usize] += 1.0;
        }
    }
    h.iter_mut().for_each(|v| *v /= xs.len() as f64);
    h
}

pub fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Rejection sampler for exp(-U/kT) on [lo, hi] given a lower bound of U.
pub struct Rejection<F> {
    pub u: F,
    pub beta: f64,
    pub lo: f64,
    pub hi: f64,
    pub u_min: f64,
}

impl<F: Fn(f64) -> f64> Rejection<F> {
    pub fn draw<R: Rng>(&self, rng: &mut R) -> f64 {
        loop {
            let x = rng.random_range(self.lo..self.hi);
            let accept = (-self.beta * ((self.u)(x) - self.u_min)).exp();
            if rng.random::<f64>() < accept {
                return x;
            }
        }
    }
}

/// E[min(1, exp(-Δ))] with Δ = (β_i − β_j)(U(x_j) − U(x_i)), x_i and x_j drawn
/// from their own Boltzmann distributions; trapezoid product rule.
pub fn temperature_swap_acceptance(u: impl Fn(f64) -> f64, t_i: f64, t_j: f64, lo: f64, hi: f64, grid: usize) -> f64 {
    let h = (hi - lo) / (grid - 1) as f64;
    let xs: Vec<f64> = (0..grid).map(|k| lo + k as f64 * h).collect();
    let us: Vec<f64> = xs.iter().map(|&x| u(x)).collect();
    let weight = |k: usize| if k == 0 || k == grid - 1 { 0.5 } else { 1.0 };
    let density = |t: f64| {
        let d: Vec<f64> = (0..grid).map(|k| weight(k) * (-beta(t) * us[k]).exp()).collect();
        let z: f64 = d.iter().sum();
        d.into_iter().map(|v| v / z).collect::<Vec<_>>()
    };
    let (pi, pj) = (density(t_i), density(t_j));
    let db = beta(t_i) - beta(t_j);
    let mut acc = 0.0;
    for a in 0..grid {
        for b in 0..grid {
            acc += pi[a] * pj[b] * (-(db * (us[b] - us[a]))).exp().min(1.0);
        }
    }
    acc
}

pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let (mut p, mut m) = (x.to_vec(), x.to_vec());
    p[i] += h;
    m[i] -= h;
    (f(&p) - f(&m)) / (2.0 * h)
}

/// Peak of the running sum of `+cores` at starts and `-cores` at ends, with
/// ends processed before starts at equal times.
pub fn peak_cores(intervals: &[(f64, f64, u32)]) -> u32 {
    let mut points: Vec<(f64, i64)> = Vec::new();
    for &(s, e, c) in intervals {
        points.push((s, c as i64));
        points.push((e, -(c as i64)));
    }
    points.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let (mut now, mut peak) = (0i64, 0i64);
    for (_, d) in points {
        now += d;
        peak = peak.max(now);
    }
    peak as u32
}
