use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::kv::Entry;
use crate::params::Parameters;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub const KEYS: [&'static str; 4] = ["lr", "beta1", "beta2", "adam_eps"];

    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("lr must be finite and >= 0, got {}", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(format!("{name} must be in [0, 1), got {b}")));
            }
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::config(format!("adam_eps must be > 0, got {}", self.epsilon)));
        }
        Ok(())
    }

    /// Sets one field from a config entry; false for foreign keys.
    pub fn apply(&mut self, entry: &Entry) -> Result<bool> {
        match entry.key.as_str() {
            "lr" => self.lr = entry.parse()?,
            "beta1" => self.beta1 = entry.parse()?,
            "beta2" => self.beta2 = entry.parse()?,
            "adam_eps" => self.epsilon = entry.parse()?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn to_kv_lines(&self) -> Vec<(String, String)> {
        vec![
            ("lr".into(), self.lr.to_string()),
            ("beta1".into(), self.beta1.to_string()),
            ("beta2".into(), self.beta2.to_string()),
            ("adam_eps".into(), self.epsilon.to_string()),
        ]
    }
}

/// First and second moments per learnable parameter plus the shared step
/// counter.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: BTreeMap<String, Tensor<T>>,
    pub v: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(config: AdamConfig, params: &Parameters<T>) -> Self {
        let zeros: BTreeMap<_, _> = params
            .learnable()
            .iter()
            .map(|(k, t)| (k.clone(), Tensor::zeros(t.shape())))
            .collect();
        OptimizerState {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One Adam update of every learnable parameter. The step counter
    /// advances once, before bias correction.
    pub fn update(&mut self, params: &mut Parameters<T>, grads: &BTreeMap<String, Vec<T>>) -> Result<()> {
        for (name, p) in params.learnable() {
            let g = grads
                .get(name)
                .ok_or_else(|| Error::Internal(format!("missing gradient for parameter {name}")))?;
            if g.len() != p.numel() {
                return Err(Error::Internal(format!(
                    "gradient for {name} has {} elements, parameter has {}",
                    g.len(),
                    p.numel()
                )));
            }
            if !self.m.contains_key(name) || !self.v.contains_key(name) {
                return Err(Error::Internal(format!("no optimizer moments for parameter {name}")));
            }
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let correct1 = T::lit(1.0 / (1.0 - c.beta1.powi(t)));
        let correct2 = T::lit(1.0 / (1.0 - c.beta2.powi(t)));
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (one_b1, one_b2) = (T::lit(1.0 - c.beta1), T::lit(1.0 - c.beta2));
        let (lr, eps) = (T::lit(c.lr), T::lit(c.epsilon));
        for (name, p) in params.learnable_mut().iter_mut() {
            let g = &grads[name];
            let m = self.m.get_mut(name).expect("checked above").data_mut();
            let v = self.v.get_mut(name).expect("checked above").data_mut();
            for (i, theta) in p.data_mut().iter_mut().enumerate() {
                m[i] = b1 * m[i] + one_b1 * g[i];
                v[i] = b2 * v[i] + one_b2 * g[i] * g[i];
                let m_hat = m[i] * correct1;
                let v_hat = v[i] * correct2;
                *theta = *theta - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }

    pub fn bitwise_eq(&self, other: &Self) -> bool {
        let same = |a: &BTreeMap<String, Tensor<T>>, b: &BTreeMap<String, Tensor<T>>| {
            a.len() == b.len()
                && a.iter().zip(b).all(|((ka, ta), (kb, tb))| {
                    ka == kb
                        && ta.shape() == tb.shape()
                        && ta
                            .data()
                            .iter()
                            .zip(tb.data())
                            .all(|(x, y)| x.as_f64().to_bits() == y.as_f64().to_bits())
                })
        };
        self.step == other.step && self.config == other.config && same(&self.m, &other.m) && same(&self.v, &other.v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn scalar_param(v: f64) -> Parameters<f64> {
        let mut p = Parameters::new();
        p.insert_learnable("w", Tensor::full(Shape::vector(1), v)).unwrap();
        p
    }

    fn grads(g: f64) -> BTreeMap<String, Vec<f64>> {
        BTreeMap::from([("w".to_string(), vec![g])])
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = scalar_param(1.0);
        let mut s = OptimizerState::new(AdamConfig::default(), &p);
        s.update(&mut p, &grads(0.5)).unwrap();
        let delta = p.get("w").unwrap().data()[0] - 1.0;
        assert!((delta + 0.001).abs() < 1e-5, "{delta}");
        assert_eq!(s.step, 1);
    }

    #[test]
    fn matches_closed_form_over_steps() {
        let c = AdamConfig::default();
        let mut p = scalar_param(0.3);
        let mut s = OptimizerState::new(c, &p);
        let gs = [0.5, -0.2, 0.9, 0.0, 1e-3];
        let (mut m, mut v, mut theta) = (0.0f64, 0.0f64, 0.3f64);
        for (t, &g) in gs.iter().enumerate() {
            s.update(&mut p, &grads(g)).unwrap();
            let t = t as i32 + 1;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            theta -= 0.001 * (m / (1.0 - 0.9f64.powi(t))) / ((v / (1.0 - 0.999f64.powi(t))).sqrt() + 1e-8);
            assert!((p.get("w").unwrap().data()[0] - theta).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_gradient_and_zero_lr_leave_parameters() {
        let mut p = scalar_param(2.0);
        let mut s = OptimizerState::new(AdamConfig::default(), &p);
        s.update(&mut p, &grads(0.0)).unwrap();
        assert_eq!(p.get("w").unwrap().data()[0], 2.0);
        assert_eq!(s.step, 1);

        let mut s = OptimizerState::new(
            AdamConfig {
                lr: 0.0,
                ..AdamConfig::default()
            },
            &p,
        );
        s.update(&mut p, &grads(3.0)).unwrap();
        assert_eq!(p.get("w").unwrap().data()[0], 2.0);
    }

    #[test]
    fn missing_gradient_names_parameter() {
        let mut p = scalar_param(2.0);
        let mut s = OptimizerState::new(AdamConfig::default(), &p);
        let err = s.update(&mut p, &BTreeMap::new()).unwrap_err();
        assert!(matches!(&err, Error::Internal(m) if m.contains('w')), "{err}");
        assert_eq!(s.step, 0);
    }
}
