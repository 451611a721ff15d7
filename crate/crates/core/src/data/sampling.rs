//! Mini-batch samplers: class-balanced on the source side, uniform on the
//! target side.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::LabeledDataset;
use crate::error::{Error, Result};

/// Indices into a dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub indices: Vec<usize>,
    /// Set when some draws had to repeat samples.
    pub with_replacement: bool,
}

fn draw<R: Rng + ?Sized>(rng: &mut R, pool: usize, n: usize) -> (Vec<usize>, bool) {
    if n <= pool {
        (index::sample(rng, pool, n).into_vec(), false)
    } else {
        ((0..n).map(|_| rng.random_range(0..pool)).collect(), true)
    }
}

fn balanced<R: Rng + ?Sized>(rng: &mut R, classes: &[Vec<usize>], n: usize) -> Result<Batch> {
    let cc = classes.len();
    if n == 0 || n % cc != 0 {
        return Err(Error::Data(format!(
            "class-balanced batch size {n} is not a positive multiple of {cc} classes"
        )));
    }
    if let Some(c) = classes.iter().position(Vec::is_empty) {
        return Err(Error::Data(format!("class {c} has no samples")));
    }
    let per = n / cc;
    let mut indices = Vec::with_capacity(n);
    let mut with_replacement = false;
    for members in classes {
        let (picks, repl) = draw(rng, members.len(), per);
        with_replacement |= repl;
        indices.extend(picks.into_iter().map(|p| members[p]));
    }
    if with_replacement {
        log::warn!("class-balanced batch drawn with replacement");
    }
    Ok(Batch {
        indices,
        with_replacement,
    })
}

/// Exactly `n / class_count` samples of every class, without replacement
/// within a class unless the class is too small.
pub fn class_balanced_sample(ds: &LabeledDataset, n: usize, seed: u64) -> Result<Batch> {
    balanced(&mut ChaCha8Rng::seed_from_u64(seed), &ds.class_indices(), n)
}

/// Uniform draw of `n` of `len` indices, without replacement when `n <= len`.
pub fn random_sample(len: usize, n: usize, seed: u64) -> Result<Batch> {
    Sampler::new(seed).random(len, n)
}

/// Seeded sampler owning its RNG, for drawing many batches in sequence.
#[derive(Debug, Clone)]
pub struct Sampler {
    rng: ChaCha8Rng,
}

impl Sampler {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn class_balanced(&mut self, class_indices: &[Vec<usize>], n: usize) -> Result<Batch> {
        balanced(&mut self.rng, class_indices, n)
    }

    pub fn random(&mut self, len: usize, n: usize) -> Result<Batch> {
        if len == 0 {
            return Err(Error::Data("cannot sample from an empty dataset".into()));
        }
        let (indices, with_replacement) = draw(&mut self.rng, len, n);
        if with_replacement {
            log::warn!("random batch of {n} from {len} samples drawn with replacement");
        }
        Ok(Batch {
            indices,
            with_replacement,
        })
    }

    /// A fresh permutation of `0..len`.
    pub fn permutation(&mut self, len: usize) -> Vec<usize> {
        index::sample(&mut self.rng, len, len).into_vec()
    }
}
