use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Named tensors of a model: learnable parameters (weights, biases, BN
/// gamma/beta) and non-learnable buffers (BN running statistics). Both maps
/// iterate in lexicographic name order.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameters<T> {
    learnable: BTreeMap<String, Tensor<T>>,
    buffers: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> Default for Parameters<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Parameters<T> {
    pub fn new() -> Self {
        Parameters {
            learnable: BTreeMap::new(),
            buffers: BTreeMap::new(),
        }
    }

    fn check_free(&self, name: &str) -> Result<()> {
        if self.learnable.contains_key(name) || self.buffers.contains_key(name) {
            return Err(Error::config(format!("duplicate tensor name {name}")));
        }
        Ok(())
    }

    pub fn insert_learnable(&mut self, name: impl Into<String>, t: Tensor<T>) -> Result<()> {
        let name = name.into();
        self.check_free(&name)?;
        self.learnable.insert(name, t);
        Ok(())
    }

    pub fn insert_buffer(&mut self, name: impl Into<String>, t: Tensor<T>) -> Result<()> {
        let name = name.into();
        self.check_free(&name)?;
        self.buffers.insert(name, t);
        Ok(())
    }

    pub fn learnable(&self) -> &BTreeMap<String, Tensor<T>> {
        &self.learnable
    }

    pub fn learnable_mut(&mut self) -> &mut BTreeMap<String, Tensor<T>> {
        &mut self.learnable
    }

    pub fn buffers(&self) -> &BTreeMap<String, Tensor<T>> {
        &self.buffers
    }

    pub fn buffers_mut(&mut self) -> &mut BTreeMap<String, Tensor<T>> {
        &mut self.buffers
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.learnable.get(name).or_else(|| self.buffers.get(name))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        match self.learnable.get_mut(name) {
            Some(t) => Some(t),
            None => self.buffers.get_mut(name),
        }
    }

    pub(crate) fn require(&self, name: &str) -> Result<&Tensor<T>> {
        self.get(name)
            .ok_or_else(|| Error::Internal(format!("missing parameter {name}")))
    }

    /// Total learnable elements; running statistics are excluded.
    pub fn learnable_count(&self) -> usize {
        self.learnable.values().map(Tensor::numel).sum()
    }

    pub fn cast<U: Scalar>(&self) -> Parameters<U> {
        Parameters {
            learnable: self.learnable.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
            buffers: self.buffers.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    /// Every tensor, learnable first, each group in name order.
    pub fn iter_all(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.learnable.iter().chain(self.buffers.iter())
    }

    /// True when every learnable and buffer value is bitwise equal.
    pub fn bitwise_eq(&self, other: &Parameters<T>) -> bool {
        fn same<T: Scalar>(a: &BTreeMap<String, Tensor<T>>, b: &BTreeMap<String, Tensor<T>>) -> bool {
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
        }
        same(&self.learnable, &other.learnable) && same(&self.buffers, &other.buffers)
    }
}

/// Seeded source of initial weights (ChaCha8 stream).
pub struct Initializer {
    rng: ChaCha8Rng,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Initializer {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Zero-mean Gaussian with standard deviation sqrt(2 / fan_in).
    pub fn he_normal<T: Scalar>(&mut self, shape: Shape, fan_in: usize) -> Tensor<T> {
        let std = (2.0 / fan_in.max(1) as f64).sqrt();
        let data = (0..shape.numel())
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut self.rng);
                T::lit(z * std)
            })
            .collect();
        Tensor::from_vec(shape, data).expect("generated length matches shape")
    }
}
