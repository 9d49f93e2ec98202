//! Ground-truth single-input single-output plants: realization, zero-order-hold
//! discretization, simulation and seeded probing signals.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::hankel::Signal;
use crate::rng::{standard_normal_vec, stream};

/// State-space realization `x+ = A x + B u`, `y = C x + D u`.
///
/// `dt == 0` marks a continuous-time system.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiSystem {
    a: DMatrix<f64>,
    b: DVector<f64>,
    c: DVector<f64>,
    d: f64,
    dt: f64,
}

impl LtiSystem {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>, c: DVector<f64>, d: f64, dt: f64) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || a.ncols() != n || b.len() != n || c.len() != n {
            return Err(Error::Dimension(format!(
                "A is {}x{}, B has {} rows, C has {} columns",
                a.nrows(),
                a.ncols(),
                b.len(),
                c.len()
            )));
        }
        let finite = a.iter().chain(b.iter()).chain(c.iter()).all(|v| v.is_finite()) && d.is_finite();
        if !finite {
            return Err(Error::NonFinite("state-space matrices"));
        }
        if !(dt >= 0.0 && dt.is_finite()) {
            return Err(Error::Parameter(format!("sampling period must be >= 0, got {dt}")));
        }
        Ok(Self { a, b, c, d, dt })
    }

    pub fn order(&self) -> usize {
        self.a.nrows()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    /// Output row, stored as a column vector.
    pub fn c(&self) -> &DVector<f64> {
        &self.c
    }

    pub fn d(&self) -> f64 {
        self.d
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn is_discrete(&self) -> bool {
        self.dt > 0.0
    }

    /// Steady-state gain: transfer function at `z = 1` (discrete) or `s = 0`
    /// (continuous).
    pub fn dc_gain(&self) -> Result<f64> {
        let n = self.order();
        let m = if self.is_discrete() { DMatrix::identity(n, n) - &self.a } else { -self.a.clone() };
        let x = m.lu().solve(&self.b).ok_or(Error::Singular("dc gain"))?;
        Ok(self.c.dot(&x) + self.d)
    }

    /// Markov parameters `D, CB, CAB, ...` (`count` of them).
    pub fn impulse_response(&self, count: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(count);
        if count == 0 {
            return out;
        }
        out.push(self.d);
        let mut x = self.b.clone();
        for _ in 1..count {
            out.push(self.c.dot(&x));
            x = &self.a * x;
        }
        out
    }
}

/// Measurement noise: iid `N(0, variance)` reproducible from `seed`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub variance: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(variance: f64, seed: u64) -> Result<Self> {
        if !(variance >= 0.0 && variance.is_finite()) {
            return Err(Error::Parameter(format!("noise variance must be >= 0, got {variance}")));
        }
        Ok(Self { variance, seed })
    }

    pub fn none() -> Self {
        Self { variance: 0.0, seed: 0 }
    }

    pub fn samples(&self, len: usize) -> Vec<f64> {
        let sd = self.variance.sqrt();
        standard_normal_vec(&mut stream(self.seed), len).into_iter().map(|w| sd * w).collect()
    }
}

/// Controllable canonical realization of `num(x) / den(x)`, both given in
/// descending powers.
pub fn tf_to_ss(num: &[f64], den: &[f64], dt: f64) -> Result<LtiSystem> {
    let lead = *den.first().ok_or_else(|| Error::Realization("empty denominator".into()))?;
    if lead == 0.0 {
        return Err(Error::Realization("leading denominator coefficient is zero".into()));
    }
    if num.is_empty() {
        return Err(Error::Realization("empty numerator".into()));
    }
    if num.len() > den.len() {
        return Err(Error::Realization(format!(
            "numerator degree {} exceeds denominator degree {}",
            num.len() - 1,
            den.len() - 1
        )));
    }
    let n = den.len() - 1;
    if n == 0 {
        return Err(Error::Realization("denominator must have degree >= 1".into()));
    }
    let a_coef: Vec<f64> = den[1..].iter().map(|v| v / lead).collect();
    let mut b_coef = vec![0.0; n + 1 - num.len()];
    b_coef.extend(num.iter().map(|v| v / lead));
    let d = b_coef[0];

    let a = DMatrix::from_fn(n, n, |i, j| {
        if i == 0 {
            -a_coef[j]
        } else if i == j + 1 {
            1.0
        } else {
            0.0
        }
    });
    let mut b = DVector::zeros(n);
    b[0] = 1.0;
    let c = DVector::from_fn(n, |j, _| b_coef[j + 1] - a_coef[j] * d);
    LtiSystem::new(a, b, c, d, dt)
}

/// Zero-order-hold discretization via the exponential of `[[A, B], [0, 0]] * Ts`.
pub fn c2d_zoh(sys: &LtiSystem, ts: f64) -> Result<LtiSystem> {
    if !(ts > 0.0 && ts.is_finite()) {
        return Err(Error::Parameter(format!("sampling time must be positive, got {ts}")));
    }
    if sys.is_discrete() {
        return Err(Error::Parameter("system is already discrete".into()));
    }
    let n = sys.order();
    let mut aug = DMatrix::zeros(n + 1, n + 1);
    aug.view_mut((0, 0), (n, n)).copy_from(&(sys.a() * ts));
    aug.view_mut((0, n), (n, 1)).copy_from(&(sys.b() * ts));
    let e = aug.exp();
    let ad = e.view((0, 0), (n, n)).into_owned();
    let bd = e.view((0, n), (n, 1)).column(0).into_owned();
    LtiSystem::new(ad, bd, sys.c().clone(), sys.d(), ts)
}

/// Runs the state recursion from `x0` (origin when `None`).
///
/// Returns `(y_clean, y_noisy)`; the noisy output is the clean one plus iid
/// Gaussian noise drawn from `noise`.
pub fn simulate(sys: &LtiSystem, u: &Signal, x0: Option<&[f64]>, noise: NoiseSpec) -> Result<(Signal, Signal)> {
    if !sys.is_discrete() {
        return Err(Error::Parameter("simulation requires a discrete-time system".into()));
    }
    let n = sys.order();
    let mut x = match x0 {
        Some(v) if v.len() != n => {
            return Err(Error::Dimension(format!("initial state has {} entries, system order is {n}", v.len())))
        }
        Some(v) => DVector::from_column_slice(v),
        None => DVector::zeros(n),
    };
    let mut y = Vec::with_capacity(u.len());
    for &ut in u.values() {
        y.push(sys.c().dot(&x) + sys.d() * ut);
        x = sys.a() * &x + sys.b() * ut;
    }
    let clean = Signal::with_start(y, u.start_index())?;
    let noisy = if noise.variance == 0.0 {
        clean.clone()
    } else {
        let w = noise.samples(clean.len());
        let v = clean.values().iter().zip(&w).map(|(a, b)| a + b).collect();
        Signal::with_start(v, u.start_index())?
    };
    Ok((clean, noisy))
}

/// Standard normal probing signal.
pub fn gaussian_signal(len: usize, seed: u64) -> Result<Signal> {
    if len == 0 {
        return Err(Error::Parameter("signal length must be >= 1".into()));
    }
    Signal::new(standard_normal_vec(&mut stream(seed), len))
}

/// `1 / (s^2 + 0.5 s + 1)` sampled with zero-order hold at 0.1 s.
pub fn second_order_benchmark() -> LtiSystem {
    let ct = tf_to_ss(&[1.0], &[1.0, 0.5, 1.0], 0.0).expect("valid benchmark coefficients");
    c2d_zoh(&ct, 0.1).expect("valid sampling time")
}

/// The fourth-order discrete benchmark
/// `0.1159 (z^3 + 0.5 z) / (z^4 - 2.2 z^3 + 2.42 z^2 - 1.87 z + 0.7225)`.
pub fn fourth_order_benchmark() -> LtiSystem {
    tf_to_ss(&[0.1159, 0.0, 0.1159 * 0.5, 0.0], &[1.0, -2.2, 2.42, -1.87, 0.7225], 1.0)
        .expect("valid benchmark coefficients")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::spectral_radius;

    #[test]
    fn first_order_realization() {
        let sys = tf_to_ss(&[1.0], &[1.0, -0.5], 1.0).unwrap();
        assert_eq!(sys.a(), &DMatrix::from_element(1, 1, 0.5));
        assert_eq!(sys.b()[0], 1.0);
        assert_eq!(sys.c()[0], 1.0);
        assert_eq!(sys.d(), 0.0);

        let delay = tf_to_ss(&[1.0], &[1.0, 0.0], 1.0).unwrap();
        assert_eq!(delay.a(), &DMatrix::from_element(1, 1, 0.0));
    }

    #[test]
    fn realization_errors() {
        assert!(matches!(tf_to_ss(&[1.0], &[0.0, 1.0], 1.0), Err(Error::Realization(_))));
        assert!(matches!(tf_to_ss(&[1.0, 0.0, 0.0], &[1.0, 1.0], 1.0), Err(Error::Realization(_))));
        assert!(matches!(tf_to_ss(&[1.0], &[], 1.0), Err(Error::Realization(_))));
    }

    #[test]
    fn fourth_order_plant_gain() {
        let p = fourth_order_benchmark();
        assert_eq!(p.order(), 4);
        assert_eq!(p.d(), 0.0);
        // P(1) = 0.1159 * 1.5 / 0.0725
        let expected = 0.1159 * 1.5 / (1.0 - 2.2 + 2.42 - 1.87 + 0.7225);
        assert!((p.dc_gain().unwrap() - expected).abs() < 1e-12);
        assert!((expected - 2.3979).abs() < 1e-4);
        assert!(spectral_radius(p.a()) < 1.0);
    }

    #[test]
    fn zoh_scalar_cases() {
        let integ = LtiSystem::new(DMatrix::zeros(1, 1), DVector::from_element(1, 1.0), DVector::from_element(1, 1.0), 0.0, 0.0).unwrap();
        let d = c2d_zoh(&integ, 0.1).unwrap();
        assert!((d.a()[(0, 0)] - 1.0).abs() < 1e-15);
        assert!((d.b()[0] - 0.1).abs() < 1e-15);
        assert_eq!(d.dt(), 0.1);

        let lag = LtiSystem::new(DMatrix::from_element(1, 1, -1.0), DVector::from_element(1, 1.0), DVector::from_element(1, 1.0), 0.0, 0.0).unwrap();
        let d = c2d_zoh(&lag, 0.1).unwrap();
        assert!((d.a()[(0, 0)] - (-0.1f64).exp()).abs() < 1e-15);
        assert!((d.b()[0] - (1.0 - (-0.1f64).exp())).abs() < 1e-15);

        assert!(matches!(c2d_zoh(&lag, 0.0), Err(Error::Parameter(_))));
        assert!(matches!(c2d_zoh(&d, 0.1), Err(Error::Parameter(_))));
    }

    /// Scaling-and-squaring with a long Taylor series, independent of the
    /// Padé-based exponential used by `c2d_zoh`.
    fn expm_taylor(m: &DMatrix<f64>) -> DMatrix<f64> {
        let norm = m.abs().max() * m.nrows() as f64;
        let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
        let scaled = m / 2f64.powi(squarings);
        let n = m.nrows();
        let mut term = DMatrix::identity(n, n);
        let mut sum = DMatrix::identity(n, n);
        for k in 1..30 {
            term = &term * &scaled / k as f64;
            sum += &term;
        }
        for _ in 0..squarings {
            sum = &sum * &sum;
        }
        sum
    }

    #[test]
    fn zoh_matches_taylor_oracle() {
        let ct = tf_to_ss(&[1.0], &[1.0, 0.5, 1.0], 0.0).unwrap();
        let d = c2d_zoh(&ct, 0.1).unwrap();
        let mut aug = DMatrix::zeros(3, 3);
        aug.view_mut((0, 0), (2, 2)).copy_from(&(ct.a() * 0.1));
        aug.view_mut((0, 2), (2, 1)).copy_from(&(ct.b() * 0.1));
        let e = expm_taylor(&aug);
        assert!((d.a() - e.view((0, 0), (2, 2))).abs().max() < 1e-12);
        assert!((d.b() - e.view((0, 2), (2, 1)).column(0)).abs().max() < 1e-12);
    }

    #[test]
    fn zoh_preserves_stability() {
        for den in [[1.0, 0.5, 1.0], [1.0, 3.0, 2.0], [1.0, 0.01, 25.0]] {
            let ct = tf_to_ss(&[1.0], &den, 0.0).unwrap();
            for ts in [0.01, 0.1, 1.0] {
                assert!(spectral_radius(c2d_zoh(&ct, ts).unwrap().a()) < 1.0);
            }
        }
    }

    /// Power-series coefficients of num/den in z^-1 by long division.
    fn long_division(num: &[f64], den: &[f64], count: usize) -> Vec<f64> {
        let mut rem: Vec<f64> = vec![0.0; den.len() - num.len()];
        rem.extend_from_slice(num);
        rem.resize(count + den.len(), 0.0);
        let mut out = Vec::with_capacity(count);
        for k in 0..count {
            let q = rem[k] / den[0];
            out.push(q);
            for (i, dc) in den.iter().enumerate() {
                rem[k + i] -= q * dc;
            }
        }
        out
    }

    #[test]
    fn impulse_response_matches_long_division() {
        let cases: [(&[f64], &[f64]); 3] = [
            (&[0.1159, 0.0, 0.05795, 0.0], &[1.0, -2.2, 2.42, -1.87, 0.7225]),
            (&[2.0, 1.0, 0.5], &[1.0, -0.3, 0.2]),
            (&[1.0], &[2.0, -1.0, 0.1]),
        ];
        for (num, den) in cases {
            let sys = tf_to_ss(num, den, 1.0).unwrap();
            let h = sys.impulse_response(50);
            let oracle = long_division(num, den, 50);
            for (a, b) in h.iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-10, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn simulate_basics() {
        let sys = second_order_benchmark();
        let zero = Signal::new(vec![0.0; 50]).unwrap();
        let (clean, noisy) = simulate(&sys, &zero, None, NoiseSpec::none()).unwrap();
        assert!(clean.values().iter().all(|&v| v == 0.0));
        assert_eq!(clean, noisy);

        let u = gaussian_signal(100, 4).unwrap();
        let (clean, noisy) = simulate(&sys, &u, None, NoiseSpec { variance: 0.0, seed: 99 }).unwrap();
        assert_eq!(clean.values(), noisy.values());
        let (_, noisy) = simulate(&sys, &u, None, NoiseSpec { variance: 0.5, seed: 99 }).unwrap();
        assert_ne!(clean.values(), noisy.values());

        assert!(matches!(simulate(&sys, &u, Some(&[0.0]), NoiseSpec::none()), Err(Error::Dimension(_))));
    }

    #[test]
    fn step_response_settles_to_unit_gain() {
        let sys = second_order_benchmark();
        assert!((sys.dc_gain().unwrap() - 1.0).abs() < 1e-12);
        let step = Signal::new(vec![1.0; 2001]).unwrap();
        let (y, _) = simulate(&sys, &step, None, NoiseSpec::none()).unwrap();
        assert!((y[2000] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn simulate_is_linear() {
        let sys = fourth_order_benchmark();
        let u1 = gaussian_signal(80, 1).unwrap();
        let u2 = gaussian_signal(80, 2).unwrap();
        let (a, b) = (1.7, -0.4);
        let mix = Signal::new(u1.values().iter().zip(u2.values()).map(|(x, y)| a * x + b * y).collect()).unwrap();
        let (y1, _) = simulate(&sys, &u1, None, NoiseSpec::none()).unwrap();
        let (y2, _) = simulate(&sys, &u2, None, NoiseSpec::none()).unwrap();
        let (ym, _) = simulate(&sys, &mix, None, NoiseSpec::none()).unwrap();
        for t in 0..80 {
            assert!((ym[t] - (a * y1[t] + b * y2[t])).abs() < 1e-10);
        }
    }

    #[test]
    fn gaussian_signal_statistics() {
        assert_eq!(gaussian_signal(64, 5).unwrap(), gaussian_signal(64, 5).unwrap());
        assert!(gaussian_signal(1, 5).unwrap()[0].is_finite());
        assert!(gaussian_signal(0, 5).is_err());
        let z = gaussian_signal(100_000, 17).unwrap();
        let (mean, sd) = crate::linalg::mean_std(z.values());
        assert!(mean.abs() < 0.02);
        assert!((sd * sd - 1.0).abs() < 0.02);
    }

    #[test]
    fn noise_spec_validation() {
        assert!(NoiseSpec::new(-1.0, 0).is_err());
        assert!(NoiseSpec::new(0.1, 0).is_ok());
    }
}
