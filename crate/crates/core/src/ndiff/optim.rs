use super::{ParamStore, Tensor2};
use crate::error::{Error, Result};

/// Adaptive-moment optimizer with bias-corrected first and second moments.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor2>,
    v: Vec<Tensor2>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update from the gradients accumulated in `params`.
    ///
    /// Every gradient is checked before anything is modified, so a rejected
    /// step leaves both the parameters and the moment estimates untouched.
    pub fn step(&mut self, params: &mut ParamStore) -> Result<()> {
        for id in params.ids() {
            if !params.grad(id).is_finite() {
                return Err(Error::NonFinite(format!(
                    "gradient of parameter {}",
                    params.name(id)
                )));
            }
        }
        if self.m.len() != params.len() {
            self.m = params
                .ids()
                .map(|id| {
                    let (r, c) = params.value(id).shape();
                    Tensor2::zeros(r, c)
                })
                .collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for id in params.ids() {
            let i = id.index();
            let g = params.grad(id).clone();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let w = params.value_mut(id).data_mut();
            for k in 0..g.len() {
                let gk = g.data()[k];
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * gk;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * gk * gk;
                let mh = m[k] / bc1;
                let vh = v[k] / bc2;
                w[k] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(())
    }

    /// Moment tensors and step count, for checkpointing.
    pub fn state(&self) -> (u64, &[Tensor2], &[Tensor2]) {
        (self.step, &self.m, &self.v)
    }

    pub fn restore(&mut self, step: u64, m: Vec<Tensor2>, v: Vec<Tensor2>) -> Result<()> {
        if m.len() != v.len() {
            return Err(Error::invalid("optimizer state: moment counts differ"));
        }
        self.step = step;
        self.m = m;
        self.v = v;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(v: f64) -> (ParamStore, crate::ndiff::ParamId) {
        let mut s = ParamStore::new(0);
        let id = s.insert("x", Tensor2::scalar(v)).unwrap();
        (s, id)
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let (mut s, id) = scalar_store(1.5);
        let mut opt = Adam::new(0.1);
        opt.step(&mut s).unwrap();
        assert_eq!(s.value(id).item(), 1.5);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m_hat = g and v_hat = g^2 after bias correction, so the step is lr * g / (|g| + eps).
        let (mut s, id) = scalar_store(0.0);
        s.accumulate(id, &Tensor2::scalar(1.0)).unwrap();
        let mut opt = Adam::new(0.1);
        opt.step(&mut s).unwrap();
        let expected = -0.1 / (1.0 + 1e-8);
        assert!((s.value(id).item() - expected).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let (mut s, id) = scalar_store(0.0);
        s.accumulate(id, &Tensor2::scalar(f64::NAN)).unwrap();
        let err = Adam::new(0.1).step(&mut s).unwrap_err().to_string();
        assert!(err.contains("parameter x"), "{err}");
        assert_eq!(s.value(id).item(), 0.0);
    }

    #[test]
    fn identical_runs_are_bitwise_identical() {
        let run = || {
            let mut s = ParamStore::new(9);
            let id = s.add_weight("w", 3, 3).unwrap();
            let mut opt = Adam::new(1e-3);
            for k in 0..5 {
                s.zero_grads();
                let g = s.value(id).map(|v| v.sin() + k as f64);
                s.accumulate(id, &g).unwrap();
                opt.step(&mut s).unwrap();
            }
            s.value(id).clone()
        };
        let (a, b) = (run(), run());
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
