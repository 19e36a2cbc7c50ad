//! Adam and the step-decay learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ParamId, ParamSet};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moments and step count of one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

/// Adam with one step counter per parameter, so tensors that join the
/// optimization late (the prototypes) get their own bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    /// Indexed by [`ParamId::index`]; `None` until the parameter is first stepped.
    pub state: Vec<Option<Moments>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            state: Vec::new(),
        }
    }

    /// Applies one bias-corrected update to each parameter in `ids` using
    /// its accumulated gradient. With `strict`, a non-finite gradient is an
    /// error naming the parameter and nothing is updated.
    pub fn step(
        &mut self,
        params: &mut ParamSet,
        ids: &[ParamId],
        lr: f64,
        strict: bool,
    ) -> Result<()> {
        if strict {
            for &id in ids {
                let finite = params
                    .get(id)
                    .grad()
                    .is_none_or(|g| g.iter().all(|x| x.is_finite()));
                if !finite {
                    return Err(Error::NonFinite {
                        op: "adam_step",
                        context: Some(format!("gradient of {}", params.name(id))),
                    });
                }
            }
        }
        let AdamConfig { beta1, beta2, eps } = self.config;
        for &id in ids {
            if self.state.len() <= id.index() {
                self.state.resize(id.index() + 1, None);
            }
            let t = params.get_mut(id);
            let n = t.numel();
            let st = self.state[id.index()].get_or_insert_with(|| Moments {
                step: 0,
                m: vec![0.0; n],
                v: vec![0.0; n],
            });
            st.step += 1;
            let bc1 = 1.0 - beta1.powi(st.step as i32);
            let bc2 = 1.0 - beta2.powi(st.step as i32);
            let grad = t
                .grad()
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; n]);
            let data = t.data_mut();
            for i in 0..n {
                let g = grad[i];
                st.m[i] = beta1 * st.m[i] + (1.0 - beta1) * g;
                st.v[i] = beta2 * st.v[i] + (1.0 - beta2) * g * g;
                let mhat = st.m[i] / bc1;
                let vhat = st.v[i] / bc2;
                data[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Learning-rate schedule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepDecay {
    pub factor: f64,
    pub every: usize,
}

impl Default for StepDecay {
    fn default() -> Self {
        Self {
            factor: 0.3,
            every: 30,
        }
    }
}

/// `base * factor^floor(epoch / every)` when a decay is given, else `base`.
pub fn lr_schedule(epoch: usize, base: f64, decay: Option<StepDecay>) -> f64 {
    match decay {
        Some(d) if d.every > 0 => base * d.factor.powi((epoch / d.every) as i32),
        _ => base,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = ParamSet::new();
        let id = p.add("w", Tensor::vector(vec![1.5, -2.0]));
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(&mut p, &[id], 1e-3, true).unwrap();
        assert_eq!(p.get(id).data(), &[1.5, -2.0]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = ParamSet::new();
        let id = p.add("w", Tensor::vector(vec![0.0]));
        p.get_mut(id).grad_mut().unwrap()[0] = 1.0;
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(&mut p, &[id], 1e-3, false).unwrap();
        // mhat = 1, vhat = 1, step = lr / (1 + eps)
        let expected = -1e-3 / (1.0 + 1e-8);
        assert!((p.get(id).data()[0] - expected).abs() < 1e-18);
    }

    #[test]
    fn identical_inputs_identical_states() {
        let run = || {
            let mut p = ParamSet::new();
            let id = p.add("w", Tensor::vector(vec![0.3, 0.1]));
            let mut adam = Adam::new(AdamConfig::default());
            for k in 0..5 {
                p.get_mut(id)
                    .grad_mut()
                    .unwrap()
                    .copy_from_slice(&[k as f64, -0.5]);
                adam.step(&mut p, &[id], 1e-2, false).unwrap();
            }
            (p, adam)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn strict_mode_names_the_parameter() {
        let mut p = ParamSet::new();
        let id = p.add("gin.layer0.w1", Tensor::vector(vec![0.0]));
        p.get_mut(id).grad_mut().unwrap()[0] = f64::NAN;
        let err = Adam::new(AdamConfig::default())
            .step(&mut p, &[id], 1e-3, true)
            .unwrap_err();
        assert!(err.to_string().contains("gin.layer0.w1"), "{err}");
        assert_eq!(p.get(id).data(), &[0.0]);
    }

    #[test]
    fn late_parameters_get_their_own_counter() {
        let mut p = ParamSet::new();
        let a = p.add("a", Tensor::vector(vec![0.0]));
        let b = p.add("b", Tensor::vector(vec![0.0]));
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(&mut p, &[a], 1e-3, false).unwrap();
        adam.step(&mut p, &[a, b], 1e-3, false).unwrap();
        assert_eq!(adam.state[a.index()].as_ref().unwrap().step, 2);
        assert_eq!(adam.state[b.index()].as_ref().unwrap().step, 1);
    }

    #[test]
    fn quadratic_converges() {
        // f(w) = sum_i c_i (w_i - t_i)^2
        let (c, t) = ([1.0, 4.0, 0.5], [0.3, -0.2, 0.1]);
        let mut p = ParamSet::new();
        let id = p.add("w", Tensor::vector(vec![1.0, 1.0, -1.0]));
        let loss = |w: &[f64]| (0..3).map(|i| c[i] * (w[i] - t[i]).powi(2)).sum::<f64>();
        let start = loss(p.get(id).data());
        let mut adam = Adam::new(AdamConfig::default());
        for _ in 0..200 {
            let w = p.get(id).data().to_vec();
            let g: Vec<f64> = (0..3).map(|i| 2.0 * c[i] * (w[i] - t[i])).collect();
            p.get_mut(id).grad_mut().unwrap().copy_from_slice(&g);
            adam.step(&mut p, &[id], 0.05, true).unwrap();
        }
        assert!(loss(p.get(id).data()) <= 0.1 * start);
    }

    #[test]
    fn schedule_values() {
        let d = Some(StepDecay::default());
        assert_eq!(lr_schedule(0, 1e-3, d), 1e-3);
        assert!((lr_schedule(30, 1e-3, d) - 3e-4).abs() < 1e-18);
        assert!((lr_schedule(95, 1e-3, d) - 2.7e-5).abs() < 1e-18);
        assert_eq!(lr_schedule(95, 1e-3, None), 1e-3);
        for e in 0..200 {
            let same = lr_schedule(e, 1e-3, d) == lr_schedule(e + 1, 1e-3, d);
            assert_eq!(same, (e + 1) % 30 != 0, "epoch {e}");
        }
    }
}
