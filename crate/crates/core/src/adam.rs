//! Adam optimizer with standard bias correction.

use crate::error::TensorError;
use crate::param::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { alpha: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn with_alpha(alpha: f64) -> Self {
        Self { alpha, ..Self::default() }
    }
}

/// Step counter plus first/second moment estimates, one slot per parameter
/// in the store (non-trainable slots stay empty).
#[derive(Debug, Clone)]
pub struct AdamState<F: Scalar> {
    pub config: AdamConfig,
    pub step: u64,
    pub moments: Vec<Option<(Tensor<F>, Tensor<F>)>>,
}

impl<F: Scalar> AdamState<F> {
    pub fn new(config: AdamConfig, store: &ParamStore<F>) -> Self {
        let moments = store
            .iter()
            .map(|(_, e)| {
                e.trainable.then(|| {
                    let z = Tensor::zeros(e.value.shape().to_vec());
                    (z.clone(), z)
                })
            })
            .collect();
        Self { config, step: 0, moments }
    }

    /// One bias-corrected update over all trainable parameters. `grads` is
    /// aligned with store order; `None` means zero gradient this step.
    pub fn step(&mut self, store: &mut ParamStore<F>, grads: &[Option<Vec<F>>]) -> Result<()> {
        assert_eq!(grads.len(), store.len(), "gradient slots must align with the store");
        self.step += 1;
        let t = self.step as i32;
        let b1 = F::from_f64(self.config.beta1);
        let b2 = F::from_f64(self.config.beta2);
        let lr = F::from_f64(self.config.alpha);
        let eps = F::from_f64(self.config.eps);
        let one = F::one();
        let bc1 = one - b1.powi(t);
        let bc2 = one - b2.powi(t);

        let zero_grad: Vec<F> = Vec::new();
        for (idx, slot) in self.moments.iter_mut().enumerate() {
            let Some((m, v)) = slot else { continue };
            let id = crate::param::ParamId(idx);
            let entry = store.get(id);
            let numel = entry.value.numel();
            let g: &[F] = match &grads[idx] {
                Some(g) => {
                    if g.len() != numel {
                        return Err(TensorError::Shape {
                            op: "adam_step",
                            msg: format!(
                                "gradient len {} vs parameter {:?} ({} values)",
                                g.len(),
                                entry.name,
                                numel
                            ),
                        });
                    }
                    if !g.iter().all(|x| x.is_finite()) {
                        return Err(TensorError::NonFiniteGrad(entry.name.clone()));
                    }
                    g
                }
                None => &zero_grad,
            };

            let mut new_value = entry.value.data().to_vec();
            let mut md = m.data().to_vec();
            let mut vd = v.data().to_vec();
            for i in 0..numel {
                let gi = if g.is_empty() { F::zero() } else { g[i] };
                md[i] = b1 * md[i] + (one - b1) * gi;
                vd[i] = b2 * vd[i] + (one - b2) * gi * gi;
                let m_hat = md[i] / bc1;
                let v_hat = vd[i] / bc2;
                new_value[i] = new_value[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
            let shape = entry.value.shape().to_vec();
            store.set_value(id, Tensor::from_vec(shape.clone(), new_value)?);
            *m = Tensor::from_vec(shape.clone(), md)?;
            *v = Tensor::from_vec(shape, vd)?;
        }
        Ok(())
    }
}
