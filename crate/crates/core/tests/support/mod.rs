//! Test-only reference implementations, written densely and line by line
//! with no shared code from the library's learners.

#![allow(dead_code)]

use nexting_core::FeatureVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn dense(x: &FeatureVector) -> Vec<f64> {
    let mut v = vec![0.0; x.len()];
    for &i in x.active() {
        v[i as usize] = 1.0;
    }
    v
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// Dense TD(λ) with accumulating traces.
pub struct NaiveTd {
    pub w: Vec<f64>,
    pub z: Vec<f64>,
    pub alpha: f64,
    pub gamma: f64,
    pub lambda: f64,
}

impl NaiveTd {
    pub fn new(n: usize, alpha: f64, gamma: f64, lambda: f64) -> Self {
        Self { w: vec![0.0; n], z: vec![0.0; n], alpha, gamma, lambda }
    }

    pub fn step(&mut self, x: &[f64], x_next: &[f64], c: f64) -> f64 {
        let delta = c + self.gamma * dot(&self.w, x_next) - dot(&self.w, x);
        for i in 0..self.w.len() {
            self.z[i] = self.z[i] * self.gamma * self.lambda + x[i];
        }
        for i in 0..self.w.len() {
            self.w[i] = self.w[i] + self.alpha * delta * self.z[i];
        }
        delta
    }
}

/// Dense TD(λ) with AutoStep TIDBD(λ), one statement per algorithm line.
pub struct NaiveTidbd {
    pub w: Vec<f64>,
    pub z: Vec<f64>,
    pub h: Vec<f64>,
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub xi: Vec<f64>,
    pub theta: f64,
    pub tau: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub consistent: bool,
}

impl NaiveTidbd {
    pub fn new(n: usize, alpha0: f64, theta: f64, tau: f64, gamma: f64, lambda: f64) -> Self {
        let beta = vec![alpha0.ln(); n];
        let alpha = beta.iter().map(|b: &f64| b.exp()).collect();
        Self {
            w: vec![0.0; n],
            z: vec![0.0; n],
            h: vec![0.0; n],
            beta,
            alpha,
            xi: vec![0.0; n],
            theta,
            tau,
            gamma,
            lambda,
            consistent: false,
        }
    }

    /// Returns (δ, M).
    pub fn step(&mut self, x: &[f64], x_next: &[f64], c: f64) -> (f64, f64) {
        let n = self.w.len();
        let gamma = self.gamma;
        let delta = c + gamma * dot(&self.w, x_next) - dot(&self.w, x);
        for i in 0..n {
            let g = gamma * x_next[i] - x[i];
            let first = (delta * g * self.h[i]).abs();
            let inner = if self.consistent {
                (delta * g * self.h[i]).abs()
            } else {
                (delta * x[i] * self.h[i]).abs()
            };
            let second =
                self.xi[i] - (1.0 / self.tau) * self.alpha[i] * g * self.z[i] * (inner - self.xi[i]);
            self.xi[i] = if first > second { first } else { second };
            if self.xi[i] != 0.0 {
                self.beta[i] = self.beta[i] - self.theta * (1.0 / self.xi[i]) * delta * g * self.h[i];
            }
        }
        let mut s = 0.0;
        for i in 0..n {
            s += self.beta[i].exp() * (gamma * x_next[i] - x[i]) * self.z[i];
        }
        let m = if -s > 1.0 { -s } else { 1.0 };
        for i in 0..n {
            let g = gamma * x_next[i] - x[i];
            self.beta[i] = self.beta[i] - m.ln();
            self.alpha[i] = self.beta[i].exp();
            self.z[i] = self.z[i] * gamma * self.lambda + x[i];
            self.w[i] = self.w[i] + self.alpha[i] * delta * self.z[i];
            let keep = 1.0 + self.alpha[i] * self.z[i] * g;
            self.h[i] = self.h[i] * (if keep > 0.0 { keep } else { 0.0 }) + self.alpha[i] * delta * self.z[i];
        }
        (delta, m)
    }
}

/// `max_i |a_i − b_i| ≤ tol · max(max_i |b_i|, f64::MIN_POSITIVE)`.
pub fn assert_close_vec(what: &str, got: &[f64], want: &[f64], tol: f64) {
    assert_eq!(got.len(), want.len(), "{what}: length");
    let scale = want.iter().fold(f64::MIN_POSITIVE, |m, v| m.max(v.abs()));
    for (i, (g, w)) in got.iter().zip(want).enumerate() {
        assert!(
            (g - w).abs() <= tol * scale,
            "{what}[{i}]: got {g:e}, want {w:e} (scale {scale:e})"
        );
    }
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// Random sparse binary vector with between 1 and `max_active` features.
pub fn random_features(rng: &mut ChaCha8Rng, n: usize, max_active: usize) -> FeatureVector {
    let k = rng.random_range(1..=max_active.min(n));
    let idx: Vec<u32> = (0..k).map(|_| rng.random_range(0..n as u32)).collect();
    FeatureVector::from_unsorted(idx, n).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Absolute tolerance below unit magnitude, relative above it. Suits TD
/// errors, which are differences of O(1) terms and may cancel to near zero.
pub fn near(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}
