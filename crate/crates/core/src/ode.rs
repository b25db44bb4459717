//! Adaptive Dormand–Prince 5(4) integrator for complex-valued systems.
//!
//! Steps are clipped to land exactly on every requested output time, so the
//! sequence of accepted steps depends only on the inputs.

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dopri5 {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl Default for Dopri5 {
    fn default() -> Self {
        Dopri5 { rtol: 1e-8, atol: 1e-12, max_steps: 10_000_000 }
    }
}

// Butcher tableau
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// fifth minus fourth order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 5.0;

struct Stages {
    k: [Vec<C64>; 7],
    tmp: Vec<C64>,
    next: Vec<C64>,
}

fn combo(out: &mut [C64], y: &[C64], h: f64, terms: &[(f64, &[C64])]) {
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = C64::new(0.0, 0.0);
        for (c, k) in terms {
            acc += k[i] * *c;
        }
        *o = y[i] + acc * h;
    }
}

impl Dopri5 {
    pub fn with_rtol(mut self, rtol: f64) -> Self {
        self.rtol = rtol;
        self
    }

    pub fn with_atol(mut self, atol: f64) -> Self {
        self.atol = atol;
        self
    }

    /// Integrates `dy/dt = f(t, y)` from `t0` and returns the state at each of
    /// `t_out` (ascending, all ≥ `t0`). `observe` is called once per output.
    pub fn integrate<F, O>(&self, mut f: F, t0: f64, y0: &[C64], t_out: &[f64], mut observe: O) -> Result<()>
    where
        F: FnMut(f64, &[C64], &mut [C64]),
        O: FnMut(usize, f64, &[C64]) -> Result<()>,
    {
        if t_out.windows(2).any(|w| w[1] < w[0]) || t_out.first().is_some_and(|&t| t < t0) {
            return Err(Error::InvalidSpec("output times must be ascending and start at or after t0".into()));
        }
        let n = y0.len();
        let mut y = y0.to_vec();
        let mut s = Stages {
            k: std::array::from_fn(|_| vec![C64::new(0.0, 0.0); n]),
            tmp: vec![C64::new(0.0, 0.0); n],
            next: vec![C64::new(0.0, 0.0); n],
        };
        let mut t = t0;
        f(t, &y, &mut s.k[0]);
        let span = t_out.last().map_or(0.0, |&te| te - t0);
        let mut h = self.initial_step(&mut f, t, &y, &mut s, span);
        let mut steps = 0usize;

        for (idx, &target) in t_out.iter().enumerate() {
            while t < target {
                let remaining = target - t;
                let clipped = h >= remaining;
                let step = if clipped { remaining } else { h };
                let err = self.attempt(&mut f, t, &y, step, &mut s);
                steps += 1;
                if steps > self.max_steps {
                    return Err(Error::StepUnderflow(t));
                }
                let factor =
                    if err == 0.0 { MAX_FACTOR } else { (SAFETY * err.powf(-0.2)).clamp(MIN_FACTOR, MAX_FACTOR) };
                if err <= 1.0 {
                    t = if clipped { target } else { t + step };
                    std::mem::swap(&mut y, &mut s.next);
                    // first-same-as-last: k7 is f(t+h, y_next)
                    s.k.swap(0, 6);
                    // a clipped step says little about the natural stride
                    if !clipped {
                        h = step * factor;
                    }
                } else {
                    h = step * factor.min(1.0);
                    if h <= f64::EPSILON * t.abs().max(1.0) * 16.0 {
                        return Err(Error::StepUnderflow(t));
                    }
                }
            }
            observe(idx, target, &y)?;
        }
        Ok(())
    }

    fn initial_step<F>(&self, f: &mut F, t: f64, y: &[C64], s: &mut Stages, span: f64) -> f64
    where
        F: FnMut(f64, &[C64], &mut [C64]),
    {
        if span <= 0.0 {
            return 1.0;
        }
        let scale: Vec<f64> = y.iter().map(|z| self.atol + self.rtol * z.norm()).collect();
        let norm = |v: &[C64]| -> f64 {
            (v.iter().zip(&scale).map(|(z, sc)| (z.norm() / sc).powi(2)).sum::<f64>() / v.len().max(1) as f64).sqrt()
        };
        let d0 = norm(y);
        let d1 = norm(&s.k[0]);
        let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        let h0 = h0.min(span);
        combo(&mut s.tmp, y, h0, &[(1.0, &s.k[0])]);
        f(t + h0, &s.tmp, &mut s.k[1]);
        let diff: Vec<C64> = s.k[1].iter().zip(&s.k[0]).map(|(a, b)| a - b).collect();
        let d2 = norm(&diff) / h0;
        let h1 = if d1.max(d2) <= 1e-15 { (h0 * 1e-3).max(1e-6) } else { (0.01 / d1.max(d2)).powf(0.2) };
        (100.0 * h0).min(h1).min(span)
    }

    /// One trial step; leaves the candidate in `s.next` and returns the scaled
    /// error (accept when ≤ 1).
    fn attempt<F>(&self, f: &mut F, t: f64, y: &[C64], h: f64, s: &mut Stages) -> f64
    where
        F: FnMut(f64, &[C64], &mut [C64]),
    {
        let Stages { k, tmp, next } = s;
        let [k1, k2, k3, k4, k5, k6, k7] = k;
        combo(tmp, y, h, &[(A21, k1.as_slice())]);
        f(t + C2 * h, tmp, k2);
        combo(tmp, y, h, &[(A31, k1.as_slice()), (A32, k2.as_slice())]);
        f(t + C3 * h, tmp, k3);
        combo(tmp, y, h, &[(A41, k1.as_slice()), (A42, k2.as_slice()), (A43, k3.as_slice())]);
        f(t + C4 * h, tmp, k4);
        combo(tmp, y, h, &[(A51, k1.as_slice()), (A52, k2.as_slice()), (A53, k3.as_slice()), (A54, k4.as_slice())]);
        f(t + C5 * h, tmp, k5);
        combo(
            tmp,
            y,
            h,
            &[
                (A61, k1.as_slice()),
                (A62, k2.as_slice()),
                (A63, k3.as_slice()),
                (A64, k4.as_slice()),
                (A65, k5.as_slice()),
            ],
        );
        f(t + h, tmp, k6);
        combo(
            next,
            y,
            h,
            &[(B1, k1.as_slice()), (B3, k3.as_slice()), (B4, k4.as_slice()), (B5, k5.as_slice()), (B6, k6.as_slice())],
        );
        f(t + h, next, k7);
        let mut err = 0.0f64;
        for i in 0..y.len() {
            let e = (k1[i] * E1 + k3[i] * E3 + k4[i] * E4 + k5[i] * E5 + k6[i] * E6 + k7[i] * E7) * h;
            let sc = self.atol + self.rtol * y[i].norm().max(next[i].norm());
            err = err.max(e.norm() / sc);
        }
        err
    }
}
