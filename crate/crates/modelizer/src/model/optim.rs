//! AdamW with decoupled weight decay, gradient-norm clipping, and the
//! three learning-rate schedules.

use super::layers::{Param, Scalar};

/// Per-epoch learning-rate policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    /// Cosine annealing from the base rate to 0.1× over the epoch budget.
    Cosine,
    /// Halve the rate every 3 epochs.
    Step,
    /// Multiply the rate by 0.95 every epoch.
    Multiplicative,
    /// Keep the base rate fixed; used by the architecture search phase.
    Constant,
}

impl Schedule {
    pub fn lr_at(self, base: f64, epoch: usize, total_epochs: usize) -> f64 {
        match self {
            Schedule::Cosine => {
                let floor = 0.1 * base;
                if total_epochs <= 1 {
                    return base;
                }
                let t = epoch as f64 / (total_epochs - 1) as f64;
                floor + 0.5 * (base - floor) * (1.0 + (std::f64::consts::PI * t).cos())
            }
            Schedule::Step => base * 0.5f64.powi((epoch / 3) as i32),
            Schedule::Multiplicative => base * 0.95f64.powi(epoch as i32),
            Schedule::Constant => base,
        }
    }
}

impl std::str::FromStr for Schedule {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "cosine" => Ok(Schedule::Cosine),
            "step" => Ok(Schedule::Step),
            "multiplicative" => Ok(Schedule::Multiplicative),
            "constant" => Ok(Schedule::Constant),
            other => Err(format!("unknown schedule {other:?}")),
        }
    }
}

/// AdamW optimizer state. Moment buffers live inside each [`Param`]; this
/// struct tracks the step count and fixed coefficients.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub weight_decay: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
}

impl AdamW {
    pub fn new(weight_decay: f64) -> Self {
        AdamW {
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
        }
    }

    /// One optimizer step over all parameters at learning rate `lr`.
    pub fn step<F: Scalar>(&mut self, params: &mut [&mut Param<F>], lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let b1 = F::from(self.beta1).unwrap();
        let b2 = F::from(self.beta2).unwrap();
        let one = F::one();
        let eps = F::from(self.eps).unwrap();
        let lr_f = F::from(lr).unwrap();
        let wd = F::from(self.weight_decay).unwrap();
        let bc1 = F::from(bc1).unwrap();
        let bc2 = F::from(bc2).unwrap();
        for p in params.iter_mut() {
            ndarray::Zip::from(&mut p.m)
                .and(&p.g)
                .for_each(|m, &g| *m = b1 * *m + (one - b1) * g);
            ndarray::Zip::from(&mut p.v)
                .and(&p.g)
                .for_each(|v, &g| *v = b2 * *v + (one - b2) * g * g);
            ndarray::Zip::from(&mut p.w)
                .and(&p.m)
                .and(&p.v)
                .for_each(|w, &m, &v| {
                    let mhat = m / bc1;
                    let vhat = v / bc2;
                    // Decoupled weight decay, applied alongside the step.
                    *w = *w - lr_f * (mhat / (vhat.sqrt() + eps) + wd * *w);
                });
        }
    }
}

/// Scales all gradients so the global L2 norm does not exceed `max_norm`.
pub fn clip_gradients<F: Scalar>(params: &mut [&mut Param<F>], max_norm: f64) {
    let mut sq_sum = F::zero();
    for p in params.iter() {
        for &g in p.g.iter() {
            sq_sum = sq_sum + g * g;
        }
    }
    let norm = sq_sum.sqrt();
    let max = F::from(max_norm).unwrap();
    if norm > max {
        let scale = max / norm;
        for p in params.iter_mut() {
            p.g.mapv_inplace(|g| g * scale);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedules_follow_documented_constants() {
        let base = 1e-3;
        assert!((Schedule::Cosine.lr_at(base, 0, 10) - base).abs() < 1e-12);
        assert!((Schedule::Cosine.lr_at(base, 9, 10) - 0.1 * base).abs() < 1e-12);
        assert_eq!(Schedule::Step.lr_at(base, 0, 10), base);
        assert_eq!(Schedule::Step.lr_at(base, 3, 10), base * 0.5);
        assert_eq!(Schedule::Step.lr_at(base, 6, 10), base * 0.25);
        assert!((Schedule::Multiplicative.lr_at(base, 2, 10) - base * 0.9025).abs() < 1e-15);
    }

    #[test]
    fn clipping_bounds_global_norm() {
        let mut p = Param::<f64>::zeros(2, 2);
        p.g = ndarray::arr2(&[[3.0, 0.0], [0.0, 4.0]]); // norm 5
        clip_gradients(&mut [&mut p], 1.0);
        let norm: f64 = p.g.iter().map(|g| g * g).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn adamw_moves_weights_against_gradient() {
        let mut p = Param::<f64>::constant(1, 1, 1.0);
        p.g[(0, 0)] = 1.0;
        let mut opt = AdamW::new(0.0);
        opt.step(&mut [&mut p], 0.1);
        assert!(p.w[(0, 0)] < 1.0);
    }
}
