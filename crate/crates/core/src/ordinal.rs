//! Ordinal class similarity and the similarity distribution it induces
//! between two bags with known class proportions.

use crate::error::{Error, Result};
use crate::scalar::{count, Scalar};

/// Tolerance on `‖p‖₁ = 1` for proportion vectors.
fn norm_tolerance<T: Scalar>(len: usize) -> T {
    T::of(1e-9).max(T::epsilon() * count(4 * len.max(1)))
}

/// Similarity of 1-based classes `k` and `k2` among `classes` ordinal
/// classes: `1 - |k2 - k| / (classes - 1)`.
pub fn class_similarity<T: Scalar>(k: usize, k2: usize, classes: usize) -> Result<T> {
    if classes < 2 {
        return Err(Error::TooFewClasses(classes));
    }
    for idx in [k, k2] {
        if idx == 0 || idx > classes {
            return Err(Error::ClassOutOfRange { index: idx, classes });
        }
    }
    Ok(similarity_at_distance(k.abs_diff(k2), classes))
}

/// Similarity value for two classes `distance` ranks apart.
#[inline]
pub fn similarity_at_distance<T: Scalar>(distance: usize, classes: usize) -> T {
    T::one() - count::<T>(distance) / count::<T>(classes - 1)
}

/// Dense `K × K` table of [`class_similarity`] values (0-based storage).
#[derive(Clone, Debug, PartialEq)]
pub struct ClassSimilarityMatrix<T> {
    classes: usize,
    entries: Vec<T>,
}

impl<T: Scalar> ClassSimilarityMatrix<T> {
    pub fn new(classes: usize) -> Result<Self> {
        if classes < 2 {
            return Err(Error::TooFewClasses(classes));
        }
        let mut entries = Vec::with_capacity(classes * classes);
        for k in 0..classes {
            for k2 in 0..classes {
                entries.push(similarity_at_distance(k.abs_diff(k2), classes));
            }
        }
        Ok(ClassSimilarityMatrix { classes, entries })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Entry for 1-based classes.
    pub fn get(&self, k: usize, k2: usize) -> Result<T> {
        for idx in [k, k2] {
            if idx == 0 || idx > self.classes {
                return Err(Error::ClassOutOfRange {
                    index: idx,
                    classes: self.classes,
                });
            }
        }
        Ok(self.entries[(k - 1) * self.classes + (k2 - 1)])
    }
}

/// Class-proportion vector on the probability simplex.
#[derive(Clone, Debug, PartialEq)]
pub struct ProportionVector<T>(Vec<T>);

impl<T: Scalar> ProportionVector<T> {
    /// Validates entries in `[0, 1]` and unit L1 norm.
    pub fn new(p: Vec<T>) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::Empty("proportion vector"));
        }
        let tol = norm_tolerance::<T>(p.len());
        for &v in &p {
            if !(v >= -tol && v <= T::one() + tol) {
                return Err(Error::InvalidProportion { value: v.as_f64() });
            }
        }
        let sum: T = p.iter().copied().sum();
        if (sum - T::one()).abs() > tol {
            return Err(Error::NotNormalized { sum: sum.as_f64() });
        }
        Ok(ProportionVector(p))
    }

    /// One-hot vector for 0-based `class`.
    pub fn one_hot(class: usize, classes: usize) -> Result<Self> {
        if class >= classes {
            return Err(Error::ClassOutOfRange {
                index: class + 1,
                classes,
            });
        }
        let mut p = vec![T::zero(); classes];
        p[class] = T::one();
        Ok(ProportionVector(p))
    }

    pub fn uniform(classes: usize) -> Result<Self> {
        if classes == 0 {
            return Err(Error::Empty("proportion vector"));
        }
        Ok(ProportionVector(vec![T::one() / count(classes); classes]))
    }

    pub fn classes(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<T> {
        self.0
    }
}

impl<T> std::ops::Index<usize> for ProportionVector<T> {
    type Output = T;

    fn index(&self, i: usize) -> &T {
        &self.0[i]
    }
}

/// Discrete distribution over the `K` possible similarity values
/// `1 - m / (K - 1)`, indexed by rank distance `m`.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruthSimPdf<T> {
    masses: Vec<T>,
}

impl<T: Scalar> GroundTruthSimPdf<T> {
    pub fn classes(&self) -> usize {
        self.masses.len()
    }

    /// Mass on the atom for rank distance `m`.
    pub fn mass_at_distance(&self, m: usize) -> T {
        self.masses[m]
    }

    pub fn masses(&self) -> &[T] {
        &self.masses
    }

    /// `(similarity, mass)` pairs ordered by rank distance (similarity 1 first).
    pub fn atoms(&self) -> impl Iterator<Item = (T, T)> + '_ {
        let k = self.masses.len();
        self.masses
            .iter()
            .enumerate()
            .map(move |(m, &mass)| (similarity_at_distance(m, k), mass))
    }

    /// Mass on the atom whose similarity equals `s`, if `s` is a support point.
    pub fn mass_at(&self, s: T) -> Option<T> {
        let tol = T::of(1e-9);
        self.atoms().find(|(a, _)| (*a - s).abs() <= tol).map(|(_, m)| m)
    }

    pub fn total(&self) -> T {
        self.masses.iter().copied().sum()
    }
}

/// Similarity distribution of a random cross-bag instance pair.
///
/// Each unordered class pair `{k, k'}` contributes `p_k p'_k` when equal and
/// `p_k p'_k' + p_k' p'_k` otherwise; pairs sharing a similarity value are
/// pooled into one atom.
pub fn ground_truth_pdf<T: Scalar>(
    p: &ProportionVector<T>,
    q: &ProportionVector<T>,
) -> Result<GroundTruthSimPdf<T>> {
    let k = p.classes();
    if q.classes() != k {
        return Err(Error::LengthMismatch {
            expected: k,
            actual: q.classes(),
        });
    }
    if k < 2 {
        return Err(Error::TooFewClasses(k));
    }
    let mut masses = vec![T::zero(); k];
    for a in 0..k {
        masses[0] += p[a] * q[a];
        for b in (a + 1)..k {
            masses[b - a] += p[a] * q[b] + p[b] * q[a];
        }
    }
    Ok(GroundTruthSimPdf { masses })
}
