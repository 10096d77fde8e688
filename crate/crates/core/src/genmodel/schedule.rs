use serde::{Deserialize, Serialize};

/// Noise schedule `x_t = a(t) z + b(t) eps` over `t in [0, T]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    /// `a = 1 - t/T`, `b = t/T`; the rectified-flow interpolant.
    Linear { total: u32 },
    /// `a = cos(pi/2 t/T)`, `b = sin(pi/2 t/T)`.
    Cosine { total: u32 },
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule::Linear { total: 1000 }
    }
}

impl Schedule {
    pub fn total(&self) -> u32 {
        match *self {
            Schedule::Linear { total } | Schedule::Cosine { total } => total,
        }
    }

    pub fn coeffs(&self, t: f64) -> (f64, f64) {
        let s = (t / f64::from(self.total())).clamp(0.0, 1.0);
        match self {
            Schedule::Linear { .. } => (1.0 - s, s),
            Schedule::Cosine { .. } => {
                if s == 1.0 {
                    return (0.0, 1.0);
                }
                let angle = s * std::f64::consts::FRAC_PI_2;
                (angle.cos(), angle.sin())
            }
        }
    }

    /// `(da/ds, db/ds)` with `s = t/T`; the flow-matching velocity is
    /// `da/ds z + db/ds eps`, which is `eps - z` for the linear schedule.
    pub fn velocity_coeffs(&self, t: f64) -> (f64, f64) {
        match self {
            Schedule::Linear { .. } => (-1.0, 1.0),
            Schedule::Cosine { .. } => {
                let s = (t / f64::from(self.total())).clamp(0.0, 1.0);
                let angle = s * std::f64::consts::FRAC_PI_2;
                let k = std::f64::consts::FRAC_PI_2;
                (-k * angle.sin(), k * angle.cos())
            }
        }
    }
}

/// `a(t) z + b(t) eps`.
pub fn forward_noise(z: &[f64], t: f64, eps: &[f64], schedule: &Schedule) -> Vec<f64> {
    let (a, b) = schedule.coeffs(t);
    z.iter().zip(eps).map(|(z, e)| a * z + b * e).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boundaries() {
        for sched in [Schedule::Linear { total: 1000 }, Schedule::Cosine { total: 1000 }] {
            assert_eq!(sched.coeffs(0.0), (1.0, 0.0));
            assert_eq!(sched.coeffs(1000.0), (0.0, 1.0));
            let mut prev = sched.coeffs(0.0);
            for t in 1..=1000 {
                let c = sched.coeffs(f64::from(t));
                assert!(c.0 <= prev.0 && c.1 >= prev.1);
                assert!((0.0..=1.0).contains(&c.0) && (0.0..=1.0).contains(&c.1));
                prev = c;
            }
        }
    }

    #[test]
    fn noising_endpoints_and_midpoint() {
        let sched = Schedule::default();
        let z = [1.0, -2.0, 0.5];
        let eps = [0.3, 0.1, -1.0];
        assert_eq!(forward_noise(&z, 0.0, &eps, &sched), z.to_vec());
        assert_eq!(forward_noise(&z, 1000.0, &eps, &sched), eps.to_vec());
        let mid = forward_noise(&z, 500.0, &eps, &sched);
        for i in 0..3 {
            assert_eq!(mid[i], 0.5 * z[i] + 0.5 * eps[i]);
        }
    }
}
