use crate::error::{Error, Result};
use crate::shuffle::{permutation, seeded_rng, SPLIT_STREAM};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SplitMode {
    /// Training share of the non-validation samples, rounded down.
    Fraction(f64),
    /// Exact sizes; together with the validation count they must cover the dataset.
    Counts { train: usize, test: usize },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitSpec {
    pub mode: SplitMode,
    pub validation: usize,
    pub seed: u64,
}

impl SplitSpec {
    pub fn fraction(f: f64, seed: u64) -> Self {
        SplitSpec {
            mode: SplitMode::Fraction(f),
            validation: 0,
            seed,
        }
    }

    pub fn counts(train: usize, test: usize, seed: u64) -> Self {
        SplitSpec {
            mode: SplitMode::Counts { train, test },
            validation: 0,
            seed,
        }
    }

    pub fn with_validation(mut self, n: usize) -> Self {
        self.validation = n;
        self
    }
}

/// Sample indices of each partition, in shuffled order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub validation: Vec<usize>,
}

impl Split {
    pub fn select<T: Clone>(items: &[T], idx: &[usize]) -> Vec<T> {
        idx.iter().map(|&i| items[i].clone()).collect()
    }
}

/// Seeded shuffle of `0..n`, then validation, train and test are cut in
/// that order.
pub fn split_dataset(n: usize, spec: &SplitSpec) -> Result<Split> {
    if spec.validation > n {
        return Err(Error::config(format!(
            "validation count {} exceeds dataset size {n}",
            spec.validation
        )));
    }
    let rest = n - spec.validation;
    let n_train = match spec.mode {
        SplitMode::Fraction(f) => {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::config(format!("train_fraction must be in [0, 1], got {f}")));
            }
            (f * rest as f64).floor() as usize
        }
        SplitMode::Counts { train, test } => {
            if train + test + spec.validation != n {
                return Err(Error::config(format!(
                    "train {train} + test {test} + validation {} does not equal dataset size {n}",
                    spec.validation
                )));
            }
            train
        }
    };
    let order = permutation(n, &mut seeded_rng(spec.seed, SPLIT_STREAM));
    let (validation, rest) = order.split_at(spec.validation);
    let (train, test) = rest.split_at(n_train);
    Ok(Split {
        train: train.to_vec(),
        test: test.to_vec(),
        validation: validation.to_vec(),
    })
}
