use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Moment decay rates and denominator guard for ADAM.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// A trainable tensor together with its gradient and ADAM moment state.
#[derive(Debug, Clone)]
pub struct ParamTensor {
    pub value: Tensor,
    pub grad: Tensor,
    pub adam_m: Tensor,
    pub adam_v: Tensor,
    pub step_count: u64,
}

impl ParamTensor {
    pub fn new(value: Tensor) -> Self {
        let zeros = Tensor::zeros(value.shape());
        Self {
            grad: zeros.clone(),
            adam_m: zeros.clone(),
            adam_v: zeros,
            value,
            step_count: 0,
        }
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn zero_grad(&mut self) {
        self.grad.data_mut().fill(0.0);
    }

    pub fn set_grad(&mut self, grad: Tensor) -> Result<()> {
        if !grad.same_shape(&self.value) {
            return Err(Error::dim(
                "gradient",
                format!("expected shape {:?}, got {:?}", self.value.shape(), grad.shape()),
            ));
        }
        self.grad = grad;
        Ok(())
    }

    /// One bias-corrected ADAM update from the stored gradient. `name`
    /// identifies the parameter in error messages.
    pub fn adam_step(&mut self, lr: f64, cfg: &AdamConfig, name: &str) -> Result<()> {
        if let Some(pos) = self.grad.data().iter().position(|g| !g.is_finite()) {
            return Err(Error::Numeric {
                name: name.to_string(),
                detail: format!("gradient element {pos} is {}", self.grad.data()[pos]),
            });
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let (b1, b2) = (cfg.beta1 as f32, cfg.beta2 as f32);
        let m_corr = (1.0 - cfg.beta1.powi(t)) as f32;
        let v_corr = (1.0 - cfg.beta2.powi(t)) as f32;
        let lr = lr as f32;
        let eps = cfg.epsilon as f32;
        let value = self.value.data_mut();
        let m = self.adam_m.data_mut();
        let v = self.adam_v.data_mut();
        for (((p, &g), m), v) in value.iter_mut().zip(self.grad.data()).zip(m).zip(v) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / m_corr;
            let v_hat = *v / v_corr;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}
