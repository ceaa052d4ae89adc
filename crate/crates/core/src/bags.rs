//! Bags of same-date instances and random bag-pair sampling.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{Dataset, ProportionTable};
use crate::error::{Error, Result};
use crate::ordinal::ProportionVector;
use crate::scalar::Scalar;

/// `N` instances sharing one date label and its class proportions.
#[derive(Clone, Debug, PartialEq)]
pub struct Bag<T> {
    pub date: String,
    pub proportion: ProportionVector<T>,
    /// Dataset row of each member.
    pub members: Vec<usize>,
    pub inputs: Vec<Vec<T>>,
}

impl<T> Bag<T> {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Shuffles each date group with `seed` and cuts it into `⌊count / N⌋`
/// bags; leftovers are dropped. Dates are visited in order of first
/// appearance in the dataset.
pub fn build_bags<T: Scalar>(
    dataset: &Dataset<T>,
    table: &ProportionTable<T>,
    bag_size: usize,
    seed: u64,
) -> Result<Vec<Bag<T>>> {
    if bag_size == 0 {
        return Err(Error::InvalidParameter("bag size must be >= 1".into()));
    }
    if table.classes() != dataset.classes {
        return Err(Error::LengthMismatch {
            expected: dataset.classes,
            actual: table.classes(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bags = Vec::new();
    for date in dataset.dates() {
        let proportion = table.get(&date)?;
        let mut rows: Vec<usize> = dataset
            .instances
            .iter()
            .enumerate()
            .filter(|(_, inst)| inst.date == date)
            .map(|(i, _)| i)
            .collect();
        if rows.len() < bag_size {
            return Err(Error::DateTooSmall {
                date,
                available: rows.len(),
                bag_size,
            });
        }
        rows.shuffle(&mut rng);
        for chunk in rows.chunks_exact(bag_size) {
            bags.push(Bag {
                date: date.clone(),
                proportion: proportion.clone(),
                members: chunk.to_vec(),
                inputs: chunk.iter().map(|&i| dataset.instances[i].input.clone()).collect(),
            });
        }
    }
    Ok(bags)
}

/// Two distinct bags (by position in the bag list) and the permutation
/// pairing `a`'s `n`-th instance with `b`'s `permutation[n]`-th.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BagPair {
    pub a: usize,
    pub b: usize,
    pub permutation: Vec<usize>,
}

/// Seeded source of bag pairs.
#[derive(Clone, Debug)]
pub struct BagSampler {
    rng: ChaCha8Rng,
}

impl BagSampler {
    pub fn new(seed: u64) -> Self {
        BagSampler {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Uniform unordered pair without replacement, any dates.
    pub fn sample_pair<T>(&mut self, bags: &[Bag<T>]) -> Result<BagPair> {
        let n = bags.len();
        if n < 2 {
            return Err(Error::TooFewBags(n));
        }
        let a = self.rng.random_range(0..n);
        let mut b = self.rng.random_range(0..n - 1);
        if b >= a {
            b += 1;
        }
        let len = bags[a].len().min(bags[b].len());
        let mut permutation: Vec<usize> = (0..len).collect();
        permutation.shuffle(&mut self.rng);
        Ok(BagPair { a, b, permutation })
    }

    /// Visiting order for one pass over `n` bags.
    pub fn epoch_order(&mut self, n: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut self.rng);
        order
    }
}
