use nmt_tensor::{ParamStore, Scalar, Tensor};

/// Adam with optional AMSGrad and L2 weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub use_ams: bool,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
            use_ams: false,
            weight_decay: 0.0,
        }
    }
}

/// Moment buffers of one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments<T> {
    pub m: Tensor<T>,
    pub v: Tensor<T>,
    /// Running maximum of `v`, kept only with AMSGrad.
    pub v_max: Option<Tensor<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub cfg: AdamConfig,
    pub step: u64,
    /// Indexed like the parameter store; `None` until a parameter first gets a gradient.
    pub slots: Vec<Option<Moments<T>>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(cfg: AdamConfig, nparams: usize) -> Self {
        Self {
            cfg,
            step: 0,
            slots: vec![None; nparams],
        }
    }

    /// Applies one update from the accumulated gradients times `grad_scale`,
    /// then clears the gradients. Frozen parameters are left untouched.
    pub fn step(&mut self, store: &mut ParamStore<T>, lr: f64, grad_scale: f64) {
        self.step += 1;
        let c = &self.cfg;
        let (b1, b2) = (T::cast(c.beta1), T::cast(c.beta2));
        let (one, eps, wd) = (T::one(), T::cast(c.eps), T::cast(c.weight_decay));
        let bc1 = T::cast(1.0 - c.beta1.powi(self.step as i32));
        let bc2 = T::cast(1.0 - c.beta2.powi(self.step as i32));
        let (lr, scale) = (T::cast(lr), T::cast(grad_scale));
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            if store.is_frozen(id) {
                continue;
            }
            let Some(g) = store.grad(id) else { continue };
            let g: Vec<T> = g.data().iter().map(|&g| g * scale).collect();
            let shape = store.get(id).shape().to_vec();
            let slot = self.slots[id.0].get_or_insert_with(|| Moments {
                m: Tensor::zeros(&shape),
                v: Tensor::zeros(&shape),
                v_max: c.use_ams.then(|| Tensor::zeros(&shape)),
            });
            let theta = store.get_mut(id).data_mut();
            let (m, v) = (slot.m.data_mut(), slot.v.data_mut());
            let mut vmax = slot.v_max.as_mut().map(|t| t.data_mut());
            for i in 0..theta.len() {
                let gi = g[i] + wd * theta[i];
                m[i] = b1 * m[i] + (one - b1) * gi;
                v[i] = b2 * v[i] + (one - b2) * gi * gi;
                let vh = match vmax.as_deref_mut() {
                    Some(vm) => {
                        vm[i] = vm[i].max(v[i]);
                        vm[i]
                    }
                    None => v[i],
                };
                theta[i] -= lr * (m[i] / bc1) / ((vh / bc2).sqrt() + eps);
            }
        }
        store.zero_grad();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nmt_tensor::Tape;

    fn store_with(v: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add("theta", Tensor::from_vec(vec![v])).unwrap();
        s
    }

    fn set_grad(s: &mut ParamStore<f64>, g: f64) {
        let tape = Tape::new(false, 0);
        let id = s.id("theta").unwrap();
        let p = tape.param(s, id);
        let loss = p.scale(g).sum();
        tape.backward_into(loss, s).unwrap();
    }

    #[test]
    fn zero_gradient_is_no_op() {
        let mut s = store_with(1.5);
        let mut opt = Adam::new(AdamConfig::default(), 1);
        set_grad(&mut s, 0.0);
        opt.step(&mut s, 0.1, 1.0);
        assert_eq!(s.get(s.id("theta").unwrap()).data(), &[1.5]);
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        for g in [3.0, -0.02] {
            let mut s = store_with(1.0);
            let mut opt = Adam::new(AdamConfig::default(), 1);
            set_grad(&mut s, g);
            opt.step(&mut s, 0.01, 1.0);
            let after = s.get(s.id("theta").unwrap()).data()[0];
            assert!((after - (1.0 - 0.01 * g.signum())).abs() < 1e-9);
        }
    }

    #[test]
    fn ams_second_moment_never_decreases() {
        let mut s = store_with(1.0);
        let mut opt = Adam::new(
            AdamConfig {
                use_ams: true,
                ..AdamConfig::default()
            },
            1,
        );
        let mut prev = 0.0;
        for g in [5.0, 0.1, 0.1, 3.0, 0.0, 0.0] {
            set_grad(&mut s, g);
            opt.step(&mut s, 0.01, 1.0);
            let vm = opt.slots[0].as_ref().unwrap().v_max.as_ref().unwrap().data()[0];
            assert!(vm >= prev);
            prev = vm;
        }
    }

    #[test]
    fn weight_decay_shrinks_without_gradient_signal() {
        let mut s = store_with(2.0);
        let mut opt = Adam::new(
            AdamConfig {
                weight_decay: 0.1,
                ..AdamConfig::default()
            },
            1,
        );
        set_grad(&mut s, 0.0);
        opt.step(&mut s, 0.01, 1.0);
        assert!(s.get(s.id("theta").unwrap()).data()[0] < 2.0);
    }
}
