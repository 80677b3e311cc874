//! Dryden low-altitude turbulence.
//!
//! Scale lengths and intensities use the MIL-F-8785C low-altitude form with
//! altitude in feet. The longitudinal and lateral channels are first-order
//! shaping filters, the vertical channel is the usual second-order filter
//! `(1 + sqrt(3) tau s) / (1 + tau s)^2`. Every filter is discretized exactly
//! and normalized by its stationary variance, so each channel has standard
//! deviation sigma at any sample rate. Gusts are resolved in the inertial frame.

use nalgebra::{DMatrix, Matrix2, Vector2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};


const FEET_PER_METER: f64 = 1.0 / 0.3048;

/// Steady wind plus Dryden gust intensity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindConfig {
    /// Steady wind in the inertial frame (m/s).
    pub steady: Vector3<f64>,
    /// Low-altitude intensity W0 (m/s).
    pub w0: f64,
    pub seed: u64,
}

impl Default for WindConfig {
    fn default() -> Self {
        Self { steady: Vector3::zeros(), w0: 0.0, seed: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DrydenScales {
    pub sigma: Vector3<f64>,
    /// Scale lengths (m).
    pub length: Vector3<f64>,
}

impl DrydenScales {
    pub fn low_altitude(w0: f64, altitude_m: f64) -> Self {
        let h = (altitude_m * FEET_PER_METER).clamp(10.0, 1000.0);
        let k = 0.177 + 0.000823 * h;
        let sigma_w = 0.1 * w0.max(0.0);
        let sigma_uv = sigma_w / k.powf(0.4);
        let l_uv = h / k.powf(1.2) / FEET_PER_METER;
        let l_w = h / FEET_PER_METER;
        Self { sigma: Vector3::new(sigma_uv, sigma_uv, sigma_w), length: Vector3::new(l_uv, l_uv, l_w) }
    }
}

/// Stateful gust generator. Each axis draws from its own ChaCha20 stream.
#[derive(Clone, Debug)]
pub struct DrydenGust {
    scales: DrydenScales,
    rngs: [ChaCha20Rng; 3],
    // first-order channels: x <- a x + sqrt(1 - a^2) n, unit variance
    ar: [f64; 2],
    x_uv: [f64; 2],
    // second-order vertical channel
    phi: Matrix2<f64>,
    q_chol: Matrix2<f64>,
    c_w: Vector2<f64>,
    x_w: Vector2<f64>,
    w_scale: f64,
}

fn normal(rng: &mut ChaCha20Rng) -> f64 {
    StandardNormal.sample(rng)
}

impl DrydenGust {
    pub fn new(cfg: &WindConfig, airspeed: f64, altitude_m: f64, dt: f64) -> Self {
        let scales = DrydenScales::low_altitude(cfg.w0, altitude_m);
        let airspeed = airspeed.max(1e-3);
        let mut rngs = [0u64, 1, 2].map(|stream| {
            let mut r = ChaCha20Rng::seed_from_u64(cfg.seed);
            r.set_stream(stream);
            r
        });

        let ar = [0, 1].map(|i| (-airspeed * dt / scales.length[i]).exp());
        let x_uv = [normal(&mut rngs[0]), normal(&mut rngs[1])];

        let tau = scales.length.z / airspeed;
        let (a21, a22) = (-1.0 / (tau * tau), -2.0 / tau);
        let a = Matrix2::new(0.0, 1.0, a21, a22);
        let c_w = Vector2::new(1.0 / (tau * tau), 3f64.sqrt() / tau);

        // Van Loan: exp([[-A, BB^T], [0, A^T]] dt) = [[., G12], [0, G22]]
        let mut m = DMatrix::<f64>::zeros(4, 4);
        m.view_mut((0, 0), (2, 2)).copy_from(&(-a * dt));
        m[(1, 3)] = dt;
        m.view_mut((2, 2), (2, 2)).copy_from(&(a.transpose() * dt));
        let e = m.exp();
        let g12 = Matrix2::new(e[(0, 2)], e[(0, 3)], e[(1, 2)], e[(1, 3)]);
        let g22 = Matrix2::new(e[(2, 2)], e[(2, 3)], e[(3, 2)], e[(3, 3)]);
        let phi = g22.transpose();
        let qd = phi * g12;
        let qd = 0.5 * (qd + qd.transpose());
        let q_chol = qd
            .cholesky()
            .map(|c| c.l())
            .unwrap_or_else(|| Matrix2::from_diagonal(&Vector2::new(qd[(0, 0)].max(0.0).sqrt(), qd[(1, 1)].max(0.0).sqrt())));

        // stationary covariance of the continuous filter is diag(p11, p22)
        let p22 = -1.0 / (2.0 * a22);
        let p11 = -p22 / a21;
        let out_var = c_w.x * c_w.x * p11 + c_w.y * c_w.y * p22;
        let x_w = Vector2::new(p11.sqrt() * normal(&mut rngs[2]), p22.sqrt() * normal(&mut rngs[2]));

        Self { scales, rngs, ar, x_uv, phi, q_chol, c_w, x_w, w_scale: 1.0 / out_var.sqrt() }
    }

    pub fn scales(&self) -> &DrydenScales {
        &self.scales
    }

    /// Current gust, then advance one step.
    pub fn next_gust(&mut self) -> Vector3<f64> {
        let s = self.scales.sigma;
        let gust = Vector3::new(s.x * self.x_uv[0], s.y * self.x_uv[1], s.z * self.w_scale * self.c_w.dot(&self.x_w));
        for i in 0..2 {
            let a = self.ar[i];
            self.x_uv[i] = a * self.x_uv[i] + (1.0 - a * a).sqrt() * normal(&mut self.rngs[i]);
        }
        let n = Vector2::new(normal(&mut self.rngs[2]), normal(&mut self.rngs[2]));
        self.x_w = self.phi * self.x_w + self.q_chol * n;
        gust
    }
}

/// `n` gust samples at spacing `dt`.
pub fn dryden_gust_sequence(cfg: &WindConfig, airspeed: f64, altitude_m: f64, dt: f64, n: usize) -> Vec<Vector3<f64>> {
    let mut g = DrydenGust::new(cfg, airspeed, altitude_m, dt);
    (0..n).map(|_| g.next_gust()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_intensity_is_calm() {
        let cfg = WindConfig { steady: Vector3::zeros(), w0: 0.0, seed: 3 };
        assert!(dryden_gust_sequence(&cfg, 5.0, 20.0, 0.01, 1000).iter().all(|g| *g == Vector3::zeros()));
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let cfg = WindConfig { steady: Vector3::zeros(), w0: 10.0, seed: 42 };
        let a = dryden_gust_sequence(&cfg, 5.0, 20.0, 0.002, 5000);
        let b = dryden_gust_sequence(&cfg, 5.0, 20.0, 0.002, 5000);
        assert_eq!(a, b);
        let c = dryden_gust_sequence(&WindConfig { seed: 43, ..cfg }, 5.0, 20.0, 0.002, 5000);
        assert_ne!(a, c);
    }

    #[test]
    fn scales_follow_low_altitude_form() {
        let s = DrydenScales::low_altitude(10.0, 20.0);
        let h = 20.0 / 0.3048;
        let k: f64 = 0.177 + 0.000823 * h;
        assert!((s.sigma.z - 1.0).abs() < 1e-15);
        assert!((s.sigma.x - 1.0 / k.powf(0.4)).abs() < 1e-12);
        assert!((s.length.z - 20.0).abs() < 1e-9);
        assert!((s.length.x - h / k.powf(1.2) * 0.3048).abs() < 1e-9);
    }

    #[test]
    fn rms_matches_design_sigma() {
        let cfg = WindConfig { steady: Vector3::zeros(), w0: 10.0, seed: 11 };
        let n = 100_000;
        let seq = dryden_gust_sequence(&cfg, 20.0, 20.0, 0.2, n);
        let sigma = DrydenScales::low_altitude(10.0, 20.0).sigma;
        for axis in 0..3 {
            let mean = seq.iter().map(|g| g[axis]).sum::<f64>() / n as f64;
            let rms = (seq.iter().map(|g| g[axis] * g[axis]).sum::<f64>() / n as f64).sqrt();
            assert!((rms / sigma[axis] - 1.0).abs() < 0.2, "axis {axis}: rms {rms} vs {}", sigma[axis]);
            assert!(mean.abs() < 0.2 * sigma[axis], "axis {axis}: mean {mean}");
        }
    }
}
