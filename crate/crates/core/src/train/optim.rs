use crate::error::{Error, Result};
use crate::layers::ParamStore;
use crate::models::EMBEDDING;
use crate::numerics::Tensor;
use crate::textpipe::PAD;

/// Adam moments for every tensor of a [`ParamStore`], in store order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &ParamStore, lr: f64) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {lr}"
            )));
        }
        let zeros: Vec<Tensor> = params
            .iter()
            .map(|(_, t)| Tensor::zeros(t.shape()))
            .collect();
        Ok(Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        })
    }

    /// One bias-corrected update. `grads` follow store order. Row 0 of the
    /// embedding table is never touched.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Tensor]) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::Dimension(format!(
                "{} gradients / {} moment slots for {} parameters",
                grads.len(),
                self.m.len(),
                params.len()
            )));
        }
        self.t += 1;
        let t = i32::try_from(self.t).unwrap_or(i32::MAX);
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let names: Vec<String> = params.names().map(String::from).collect();
        for (i, name) in names.iter().enumerate() {
            let g = &grads[i];
            if g.shape() != self.m[i].shape() {
                return Err(Error::Dimension(format!(
                    "gradient {:?} does not match parameter \"{name}\" {:?}",
                    g.shape(),
                    self.m[i].shape()
                )));
            }
            let skip = if name == EMBEDDING {
                g.shape()[1] * (PAD + 1)
            } else {
                0
            };
            let p = params.tensor_at_mut(i);
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for j in skip..g.numel() {
                let gj = g.data()[j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                p.data_mut()[j] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Multiplies the learning rate by `factor` whenever validation loss has
/// not strictly decreased for `patience` consecutive epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauScheduler {
    lr0: f64,
    factor: f64,
    patience: usize,
    best: f64,
    stale: usize,
    reductions: i32,
}

impl PlateauScheduler {
    // Negated comparisons also reject NaN.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn new(lr0: f64, factor: f64, patience: usize) -> Result<Self> {
        if !(lr0 > 0.0) || !(factor > 0.0 && factor < 1.0) || patience == 0 {
            return Err(Error::Config(format!(
                "plateau schedule needs lr0 > 0, factor in (0, 1), patience ≥ 1; got {lr0}, {factor}, {patience}"
            )));
        }
        Ok(Self {
            lr0,
            factor,
            patience,
            best: f64::INFINITY,
            stale: 0,
            reductions: 0,
        })
    }

    /// `lr0 · factor^k` after `k` reductions.
    pub fn lr(&self) -> f64 {
        self.lr0 * self.factor.powi(self.reductions)
    }

    pub fn reductions(&self) -> i32 {
        self.reductions
    }

    /// Records an epoch's validation loss; returns whether the rate dropped.
    pub fn observe(&mut self, val_loss: f64) -> bool {
        if val_loss < self.best {
            self.best = val_loss;
            self.stale = 0;
            return false;
        }
        self.stale += 1;
        if self.stale >= self.patience {
            self.stale = 0;
            self.reductions += 1;
            return true;
        }
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(p: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("p", Tensor::vector(vec![p]).unwrap()).unwrap();
        s
    }

    #[test]
    fn zero_gradient_is_identity_but_advances_time() {
        let mut s = scalar_store(2.5);
        let mut adam = AdamState::new(&s, 0.001).unwrap();
        adam.step(&mut s, &[Tensor::zeros(&[1])]).unwrap();
        assert_eq!(s.get("p").unwrap().data(), &[2.5]);
        assert_eq!(adam.t, 1);
    }

    #[test]
    fn first_step_matches_hand_trace() {
        let mut s = scalar_store(0.0);
        let mut adam = AdamState::new(&s, 0.001).unwrap();
        adam.step(&mut s, &[Tensor::vector(vec![1.0]).unwrap()])
            .unwrap();
        // m̂ = 0.1/0.1 = 1 and v̂ = 0.001/0.001 = 1
        let m_hat: f64 = 0.1 / (1.0 - 0.9);
        let v_hat: f64 = 0.001 / (1.0 - 0.999);
        let expect = -0.001 * m_hat / (v_hat.sqrt() + 1e-8);
        assert!((s.get("p").unwrap().data()[0] - expect).abs() < 1e-12);
        assert!((expect + 0.001).abs() < 1e-10);
    }

    #[test]
    fn constant_gradient_steps_descend_a_quadratic() {
        let f = |p: f64| (p - 3.0) * (p - 3.0);
        let mut s = scalar_store(0.0);
        let mut adam = AdamState::new(&s, 0.1).unwrap();
        let g0 = Tensor::vector(vec![2.0 * (0.0 - 3.0)]).unwrap();
        let mut losses = vec![f(0.0)];
        for _ in 0..2 {
            adam.step(&mut s, std::slice::from_ref(&g0)).unwrap();
            losses.push(f(s.get("p").unwrap().data()[0]));
        }
        assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
    }

    #[test]
    fn pad_row_is_frozen() {
        let mut s = ParamStore::new();
        s.insert(EMBEDDING, Tensor::zeros(&[3, 2])).unwrap();
        let mut adam = AdamState::new(&s, 0.01).unwrap();
        for _ in 0..5 {
            adam.step(&mut s, &[Tensor::ones(&[3, 2])]).unwrap();
        }
        let w = s.get(EMBEDDING).unwrap();
        assert_eq!(w.row(0), &[0.0, 0.0]);
        assert!(w.row(1).iter().all(|&v| v < 0.0));
    }

    #[test]
    fn plateau_rule_trace() {
        let mut sched = PlateauScheduler::new(0.001, 0.1, 2).unwrap();
        let losses = [1.0, 0.9, 0.95, 0.98, 0.97, 0.99];
        let lrs: Vec<f64> = losses
            .iter()
            .map(|&l| {
                sched.observe(l);
                sched.lr()
            })
            .collect();
        assert_eq!(lrs[..3], [0.001; 3]);
        assert_eq!(lrs[3], 0.001 * 0.1f64.powi(1));
        assert_eq!(lrs[5], 0.001 * 0.1f64.powi(2));
        assert!(PlateauScheduler::new(0.001, 0.1, 0).is_err());
    }
}
