use serde::{Deserialize, Serialize};

use crate::data::container::{DType, TensorContainer};
use crate::error::{Error, Result};
use crate::numerics::Array;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Validation(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Validation("Adam betas must lie in [0, 1)".into()));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Validation("Adam eps must be positive".into()));
        }
        Ok(())
    }
}

/// Moment buffers for a list of parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Array>,
    pub v: Vec<Array>,
}

impl AdamState {
    pub fn new(params: &[Array]) -> Self {
        Self {
            step: 0,
            m: params.iter().map(|p| Array::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Array::zeros(p.shape())).collect(),
        }
    }

    pub fn export(&self, prefix: &str, c: &mut TensorContainer) -> Result<()> {
        c.push(
            format!("{prefix}.step"),
            Array::scalar(self.step as f64),
            DType::F64,
        )?;
        for (i, (m, v)) in self.m.iter().zip(&self.v).enumerate() {
            c.push(format!("{prefix}.m{i}"), m.clone(), DType::F64)?;
            c.push(format!("{prefix}.v{i}"), v.clone(), DType::F64)?;
        }
        Ok(())
    }

    pub fn import(&mut self, prefix: &str, c: &TensorContainer) -> Result<()> {
        self.step = c.require(&format!("{prefix}.step"))?.item() as u64;
        for i in 0..self.m.len() {
            let m = c.require(&format!("{prefix}.m{i}"))?;
            let v = c.require(&format!("{prefix}.v{i}"))?;
            if m.shape() != self.m[i].shape() || v.shape() != self.v[i].shape() {
                return Err(Error::Format(format!(
                    "{prefix}: optimizer buffer {i} has the wrong shape"
                )));
            }
            self.m[i] = m.clone();
            self.v[i] = v.clone();
        }
        Ok(())
    }
}

fn check_grad(g: &Array, checked: bool) -> Result<()> {
    if checked && !g.all_finite() {
        return Err(Error::Numeric(
            "non-finite gradient reached the optimizer".into(),
        ));
    }
    Ok(())
}

fn update(p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], step: u64, cfg: &AdamConfig) {
    let bc1 = 1.0 - cfg.beta1.powi(step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(step as i32);
    for i in 0..p.len() {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        let mh = m[i] / bc1;
        let vh = v[i] / bc2;
        p[i] -= cfg.learning_rate * mh / (vh.sqrt() + cfg.eps);
    }
}

/// One bias-corrected Adam update over every tensor in `params`.
pub fn adam_step(
    params: &mut [Array],
    grads: &[Array],
    state: &mut AdamState,
    cfg: &AdamConfig,
    checked: bool,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Contract(format!(
            "Adam step over {} params, {} grads and {} moment buffers",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::Dimension(format!(
                "parameter {:?} and gradient {:?} shapes differ",
                p.shape(),
                g.shape()
            )));
        }
        check_grad(g, checked)?;
    }
    state.step += 1;
    for i in 0..params.len() {
        update(
            params[i].data_mut(),
            grads[i].data(),
            state.m[i].data_mut(),
            state.v[i].data_mut(),
            state.step,
            cfg,
        );
    }
    Ok(())
}

/// Adam over the rows of a prompt set where only the rows that took part in
/// a step are updated. Each row keeps its own step count, so a row's
/// trajectory depends only on the steps it was involved in.
#[derive(Clone, Debug, PartialEq)]
pub struct SlicedAdam {
    pub steps: Vec<u64>,
    pub m: Array,
    pub v: Array,
}

impl SlicedAdam {
    pub fn new(values: &Array) -> Self {
        Self {
            steps: vec![0; values.rows()],
            m: Array::zeros(values.shape()),
            v: Array::zeros(values.shape()),
        }
    }

    /// Updates rows in `rows` (each at most once) from the full gradient.
    pub fn step(
        &mut self,
        values: &mut Array,
        grad: &Array,
        rows: &[usize],
        cfg: &AdamConfig,
        checked: bool,
    ) -> Result<()> {
        if values.shape() != grad.shape() || values.shape() != self.m.shape() {
            return Err(Error::Dimension("prompt gradient shape mismatch".into()));
        }
        check_grad(grad, checked)?;
        let mut seen = vec![false; values.rows()];
        for &r in rows {
            if r >= values.rows() || std::mem::replace(&mut seen[r], true) {
                return Err(Error::Contract(format!(
                    "invalid or repeated prompt row {r}"
                )));
            }
            self.steps[r] += 1;
            update(
                values.row_mut(r),
                grad.row(r),
                self.m.row_mut(r),
                self.v.row_mut(r),
                self.steps[r],
                cfg,
            );
        }
        Ok(())
    }

    pub fn export(&self, prefix: &str, c: &mut TensorContainer) -> Result<()> {
        let steps = self.steps.iter().map(|&s| s as f64).collect();
        c.push(format!("{prefix}.steps"), Array::vector(steps)?, DType::F64)?;
        c.push(format!("{prefix}.m"), self.m.clone(), DType::F64)?;
        c.push(format!("{prefix}.v"), self.v.clone(), DType::F64)
    }

    pub fn import(&mut self, prefix: &str, c: &TensorContainer) -> Result<()> {
        let steps = c.require(&format!("{prefix}.steps"))?;
        let m = c.require(&format!("{prefix}.m"))?;
        let v = c.require(&format!("{prefix}.v"))?;
        if steps.len() != self.steps.len()
            || m.shape() != self.m.shape()
            || v.shape() != self.v.shape()
        {
            return Err(Error::Format(format!(
                "{prefix}: prompt optimizer state has the wrong shape"
            )));
        }
        self.steps = steps.data().iter().map(|&s| s as u64).collect();
        self.m = m.clone();
        self.v = v.clone();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![Array::vector(vec![1.0, -2.0]).unwrap()];
        let g = vec![Array::zeros(&[2])];
        let mut s = AdamState::new(&p);
        let before = p[0].clone();
        adam_step(&mut p, &g, &mut s, &AdamConfig::default(), true).unwrap();
        assert!(p[0].bit_eq(&before));
    }

    #[test]
    fn first_step_matches_hand_computation() {
        let cfg = AdamConfig {
            learning_rate: 0.1,
            ..Default::default()
        };
        let mut p = vec![Array::vector(vec![1.0, 1.0, 1.0]).unwrap()];
        let g = vec![Array::vector(vec![0.5, -4.0, 1e-3]).unwrap()];
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &g, &mut s, &cfg, true).unwrap();
        for (i, &gi) in g[0].data().iter().enumerate() {
            // m̂ = g, v̂ = g², so the step is lr·g/(|g|+eps)
            let expect = 1.0 - 0.1 * gi / (gi.abs() + 1e-8);
            assert!((p[0].data()[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn deterministic_and_rejects_nan() {
        let run = || {
            let mut p = vec![Array::vector(vec![0.3, 0.7]).unwrap()];
            let mut s = AdamState::new(&p);
            for k in 0..5 {
                let g = vec![Array::vector(vec![k as f64 * 0.1, -0.2]).unwrap()];
                adam_step(&mut p, &g, &mut s, &AdamConfig::default(), true).unwrap();
            }
            p
        };
        assert!(run()[0].bit_eq(&run()[0]));

        let mut p = vec![Array::zeros(&[1])];
        let mut s = AdamState::new(&p);
        let mut g = Array::zeros(&[1]);
        g.data_mut()[0] = f64::NAN;
        assert!(matches!(
            adam_step(&mut p, &[g], &mut s, &AdamConfig::default(), true),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn sliced_adam_touches_only_listed_rows() {
        let mut vals = Array::full(&[3, 2], 1.0);
        let grad = Array::full(&[3, 2], 0.5);
        let mut opt = SlicedAdam::new(&vals);
        opt.step(&mut vals, &grad, &[1], &AdamConfig::default(), true)
            .unwrap();
        assert_eq!(vals.row(0), &[1.0, 1.0]);
        assert_eq!(vals.row(2), &[1.0, 1.0]);
        assert!(vals.row(1).iter().all(|v| *v < 1.0));
        assert_eq!(opt.steps, vec![0, 1, 0]);
        assert!(opt
            .step(&mut vals, &grad, &[0, 0], &AdamConfig::default(), true)
            .is_err());
    }
}
