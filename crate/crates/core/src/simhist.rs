//! Scaled cosine similarity and histograms over the similarity range
//! `[0, 1]`: an exact counting histogram and a differentiable Gaussian
//! expansion of it.

use std::io::Write;

use crate::diffcore::{std_normal_cdf, std_normal_pdf, Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::{count, Scalar};

/// Lower end of the similarity range.
pub const SIM_MIN: f64 = 0.0;
/// Upper end of the similarity range.
pub const SIM_MAX: f64 = 1.0;
/// Default Gaussian expansion width.
pub const DEFAULT_SIGMA: f64 = 0.1;
/// Default bin count.
pub const DEFAULT_BINS: usize = 20;

/// Uniform binning of `[0, 1]` into `b` bins, `i = 0..b`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Bins(usize);

impl Bins {
    pub fn new(b: usize) -> Result<Self> {
        if b == 0 {
            return Err(Error::InvalidParameter("bin count must be >= 1".into()));
        }
        Ok(Bins(b))
    }

    pub fn count(self) -> usize {
        self.0
    }

    pub fn width<T: Scalar>(self) -> T {
        T::of(SIM_MAX - SIM_MIN) / count(self.0)
    }

    /// Center `(i + 1/2) Δ` of bin `i`.
    pub fn center<T: Scalar>(self, i: usize) -> T {
        T::of(SIM_MIN) + (count::<T>(i) + T::of(0.5)) * self.width::<T>()
    }

    /// Bounds `(iΔ, (i + 1)Δ)` of bin `i`.
    pub fn edges<T: Scalar>(self, i: usize) -> (T, T) {
        let w = self.width::<T>();
        (T::of(SIM_MIN) + count::<T>(i) * w, T::of(SIM_MIN) + count::<T>(i + 1) * w)
    }

    pub fn centers<T: Scalar>(self) -> Vec<T> {
        (0..self.0).map(|i| self.center(i)).collect()
    }

    /// Bin holding `s`: half-open `[iΔ, (i+1)Δ)`, last bin closed at 1.
    pub fn index_of<T: Scalar>(self, s: T) -> Result<usize> {
        if !(s >= T::of(SIM_MIN) && s <= T::of(SIM_MAX)) {
            return Err(Error::SimilarityOutOfRange(s.as_f64()));
        }
        let raw = ((s - T::of(SIM_MIN)) / self.width::<T>()).floor();
        let idx = raw.to_usize().unwrap_or(0);
        Ok(idx.min(self.0 - 1))
    }
}

/// Histogram over `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityHistogram<T> {
    bins: Bins,
    values: Vec<T>,
    normalized: bool,
}

impl<T: Scalar> SimilarityHistogram<T> {
    pub fn from_values(bins: Bins, values: Vec<T>, normalized: bool) -> Result<Self> {
        if values.len() != bins.count() {
            return Err(Error::LengthMismatch {
                expected: bins.count(),
                actual: values.len(),
            });
        }
        Ok(SimilarityHistogram {
            bins,
            values,
            normalized,
        })
    }

    pub fn bins(&self) -> Bins {
        self.bins
    }

    pub fn width(&self) -> T {
        self.bins.width()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn total(&self) -> T {
        self.values.iter().copied().sum()
    }

    /// Rescales to unit total mass. An all-zero histogram is left unchanged.
    pub fn normalized(mut self) -> Self {
        let total = self.total();
        if total > T::zero() {
            for v in &mut self.values {
                *v /= total;
            }
            self.normalized = true;
        }
        self
    }

    /// Writes `bin_center,value` rows with a header line.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "bin_center,value")?;
        for (i, v) in self.values.iter().enumerate() {
            writeln!(w, "{},{}", self.bins.center::<T>(i), v)?;
        }
        Ok(())
    }
}

/// `0.5 · Σ |a_i − b_i|`.
pub fn total_variation<T: Scalar>(a: &[T], b: &[T]) -> T {
    assert_eq!(a.len(), b.len(), "total_variation: length mismatch");
    T::of(0.5) * a.iter().zip(b).map(|(&x, &y)| (x - y).abs()).sum::<T>()
}

/// `½ (x·y / (‖x‖ ‖y‖) + 1)`, clamped into `[0, 1]` against rounding.
pub fn scaled_cosine_similarity<T: Scalar>(x: &[T], y: &[T]) -> Result<T> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            expected: x.len(),
            actual: y.len(),
        });
    }
    let dot: T = x.iter().zip(y).map(|(&a, &b)| a * b).sum();
    let nx: T = x.iter().map(|&a| a * a).sum::<T>().sqrt();
    let ny: T = y.iter().map(|&a| a * a).sum::<T>().sqrt();
    if nx == T::zero() || ny == T::zero() {
        return Err(Error::ZeroNorm);
    }
    let s = T::of(0.5) * (dot / (nx * ny) + T::one());
    Ok(s.max(T::zero()).min(T::one()))
}

/// Differentiable [`scaled_cosine_similarity`] (unclamped).
pub fn scaled_cosine_similarity_on<T: Scalar>(tape: &mut Tape<T>, x: &[Var], y: &[Var]) -> Result<Var> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            expected: x.len(),
            actual: y.len(),
        });
    }
    let dot = tape.dot(x, y);
    let xx = tape.dot(x, x);
    let yy = tape.dot(y, y);
    if tape.value(xx) == T::zero() || tape.value(yy) == T::zero() {
        return Err(Error::ZeroNorm);
    }
    let prod = tape.mul(xx, yy);
    let norm = tape.sqrt(prod);
    let cos = tape.div(dot, norm);
    let half = tape.scale(cos, T::of(0.5));
    Ok(tape.add_const(half, T::of(0.5)))
}

/// Counting histogram (unnormalized; counts sum to `sims.len()`).
pub fn indicator_histogram<T: Scalar>(sims: &[T], bins: Bins) -> Result<SimilarityHistogram<T>> {
    let mut values = vec![T::zero(); bins.count()];
    for &s in sims {
        values[bins.index_of(s)?] += T::one();
    }
    SimilarityHistogram::from_values(bins, values, false)
}

fn check_sigma<T: Scalar>(sigma: T) -> Result<()> {
    if !(sigma > T::zero()) || !sigma.is_finite() {
        return Err(Error::InvalidParameter(format!("sigma must be > 0, got {sigma}")));
    }
    Ok(())
}

/// How one sample's Gaussian is turned into a bin value.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Kernel {
    /// Gaussian probability mass inside the bin,
    /// `Φ((hi − s)/σ) − Φ((lo − s)/σ)`.
    #[default]
    BinIntegral,
    /// Density at the bin center times the bin width,
    /// `φ_σ(s − μ_i) Δ` (midpoint rule for the same integral).
    Midpoint,
}

impl Kernel {
    pub fn name(self) -> &'static str {
        match self {
            Kernel::BinIntegral => "bin_integral",
            Kernel::Midpoint => "midpoint",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "bin_integral" => Ok(Kernel::BinIntegral),
            "midpoint" => Ok(Kernel::Midpoint),
            _ => Err(Error::InvalidParameter(format!(
                "kernel must be bin_integral or midpoint, got `{s}`"
            ))),
        }
    }

    /// Value that a sample at `s` contributes to bin `i`.
    pub fn mass<T: Scalar>(self, s: T, bins: Bins, i: usize, sigma: T) -> T {
        match self {
            Kernel::Midpoint => {
                let z = (s - bins.center::<T>(i)) / sigma;
                std_normal_pdf(z) / sigma * bins.width::<T>()
            }
            Kernel::BinIntegral => {
                let (lo, hi) = bins.edges::<T>(i);
                let (a, b) = ((lo - s) / sigma, (hi - s) / sigma);
                // evaluate in whichever tail keeps both terms small
                if a > T::zero() {
                    std_normal_cdf(-a) - std_normal_cdf(-b)
                } else {
                    std_normal_cdf(b) - std_normal_cdf(a)
                }
            }
        }
    }

    fn mass_on<T: Scalar>(self, tape: &mut Tape<T>, s: Var, bins: Bins, i: usize, sigma: T) -> Var {
        let inv = sigma.recip();
        match self {
            Kernel::Midpoint => {
                let d = tape.add_const(s, -bins.center::<T>(i));
                let d2 = tape.square(d);
                let arg = tape.scale(d2, -inv * inv * T::of(0.5));
                let e = tape.exp(arg);
                tape.scale(e, bins.width::<T>() * inv / T::TAU().sqrt())
            }
            Kernel::BinIntegral => {
                let (lo, hi) = bins.edges::<T>(i);
                let sv = tape.value(s);
                if lo - sv > T::zero() {
                    // Φ(−a) − Φ(−b) with −a = (s − lo)/σ
                    let shifted = tape.add_const(s, -lo);
                    let na = tape.scale(shifted, inv);
                    let shifted = tape.add_const(s, -hi);
                    let nb = tape.scale(shifted, inv);
                    let ca = tape.norm_cdf(na);
                    let cb = tape.norm_cdf(nb);
                    tape.sub(ca, cb)
                } else {
                    // Φ(b) − Φ(a) with b = (hi − s)/σ
                    let shifted = tape.add_const(s, -hi);
                    let b = tape.scale(shifted, -inv);
                    let shifted = tape.add_const(s, -lo);
                    let a = tape.scale(shifted, -inv);
                    let cb = tape.norm_cdf(b);
                    let ca = tape.norm_cdf(a);
                    tape.sub(cb, ca)
                }
            }
        }
    }
}

/// Gaussian expansion of weighted points `(s, weight)` onto the bins,
/// without normalization.
pub fn gaussian_expansion<T: Scalar>(
    points: impl IntoIterator<Item = (T, T)> + Clone,
    bins: Bins,
    sigma: T,
    kernel: Kernel,
) -> Result<SimilarityHistogram<T>> {
    check_sigma(sigma)?;
    let values = (0..bins.count())
        .map(|i| {
            points
                .clone()
                .into_iter()
                .map(|(s, w)| w * kernel.mass(s, bins, i, sigma))
                .sum()
        })
        .collect();
    SimilarityHistogram::from_values(bins, values, false)
}

/// Soft histogram of plain similarity values, normalized to unit mass.
pub fn gaussian_histogram_values<T: Scalar>(
    sims: &[T],
    bins: Bins,
    sigma: T,
    kernel: Kernel,
) -> Result<SimilarityHistogram<T>> {
    Ok(gaussian_expansion(sims.iter().map(|&s| (s, T::one())), bins, sigma, kernel)?.normalized())
}

/// Differentiable soft histogram of `sims`.
///
/// Bin `i` receives the summed kernel mass of every sample; when
/// `normalize` is set the bins are divided by their total so they form a
/// distribution.
pub fn gaussian_histogram_on<T: Scalar>(
    tape: &mut Tape<T>,
    sims: &[Var],
    bins: Bins,
    sigma: T,
    kernel: Kernel,
    normalize: bool,
) -> Result<Vec<Var>> {
    check_sigma(sigma)?;
    if sims.is_empty() {
        return Err(Error::Empty("similarities"));
    }
    let mut raw = Vec::with_capacity(bins.count());
    let mut terms = Vec::with_capacity(sims.len());
    for i in 0..bins.count() {
        terms.clear();
        for &s in sims {
            terms.push(kernel.mass_on(tape, s, bins, i, sigma));
        }
        raw.push(tape.sum(&terms));
    }
    if !normalize {
        return Ok(raw);
    }
    let total = tape.sum(&raw);
    Ok(raw.iter().map(|&v| tape.div(v, total)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bins(b: usize) -> Bins {
        Bins::new(b).unwrap()
    }

    #[test]
    fn cosine_examples() {
        let x = [1.0f64, 2.0, -3.0];
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((scaled_cosine_similarity(&x, &x).unwrap() - 1.0).abs() < 1e-15);
        assert!(scaled_cosine_similarity(&x, &neg).unwrap().abs() < 1e-15);
        assert_eq!(scaled_cosine_similarity(&[1.0, 0.0], &[0.0, 4.0]).unwrap(), 0.5);
        assert!(matches!(
            scaled_cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::ZeroNorm)
        ));
    }

    #[test]
    fn cosine_tape_matches_plain() {
        let x = [0.3f64, -1.1, 0.7, 2.0];
        let y = [1.2, 0.4, -0.9, 0.1];
        let mut t = Tape::new();
        let xv = t.leaves(&x);
        let yv = t.leaves(&y);
        let s = scaled_cosine_similarity_on(&mut t, &xv, &yv).unwrap();
        assert!((t.value(s) - scaled_cosine_similarity(&x, &y).unwrap()).abs() < 1e-15);
        let z = t.leaves(&[0.0; 4]);
        assert!(matches!(
            scaled_cosine_similarity_on(&mut t, &xv, &z),
            Err(Error::ZeroNorm)
        ));
    }

    #[test]
    fn indicator_bin_assignment() {
        let h = indicator_histogram(&[0.55], bins(10)).unwrap();
        assert_eq!(h.values()[5], 1.0);
        assert_eq!(h.total(), 1.0);
        let h = indicator_histogram(&[1.0], bins(10)).unwrap();
        assert_eq!(h.values()[9], 1.0);
        let h = indicator_histogram(&[0.0, 0.1], bins(10)).unwrap();
        assert_eq!(h.values()[0], 1.0);
        assert_eq!(h.values()[1], 1.0);
        assert!(matches!(
            indicator_histogram(&[1.01], bins(10)),
            Err(Error::SimilarityOutOfRange(_))
        ));
        assert!(indicator_histogram(&[f64::NAN], bins(10)).is_err());
        assert!(Bins::new(0).is_err());
    }

    #[test]
    fn indicator_uniform_chi_square() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let sims: Vec<f64> = (0..1000).map(|_| rng.random::<f64>()).collect();
        let h = indicator_histogram(&sims, bins(10)).unwrap();
        assert_eq!(h.total(), 1000.0);
        let chi2: f64 = h.values().iter().map(|&c| (c - 100.0).powi(2) / 100.0).sum();
        // chi-square, 9 dof, 99.9th percentile
        assert!(chi2 < 27.88, "chi2 = {chi2}");
    }

    #[test]
    fn gaussian_peak_is_symmetric_around_its_bin() {
        let b = bins(10);
        let s = b.center::<f64>(4);
        let h = gaussian_histogram_values(&[s], b, 0.1, Kernel::default()).unwrap();
        let v = h.values();
        let argmax = (0..10).max_by(|&i, &j| v[i].total_cmp(&v[j])).unwrap();
        assert_eq!(argmax, 4);
        for d in 1..=4 {
            assert!((v[4 - d] - v[4 + d]).abs() < 1e-14);
        }
    }

    #[test]
    fn gaussian_rejects_bad_sigma() {
        assert!(gaussian_histogram_values(&[0.5], bins(10), 0.0, Kernel::default()).is_err());
        assert!(gaussian_histogram_values(&[0.5], bins(10), -1.0, Kernel::default()).is_err());
        let mut t = Tape::new();
        let s = t.leaf(0.5);
        assert!(gaussian_histogram_on(&mut t, &[s], bins(10), 0.0, Kernel::default(), true).is_err());
    }

    #[test]
    fn gaussian_tape_matches_plain_and_normalizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sims: Vec<f64> = (0..37).map(|_| rng.random::<f64>()).collect();
        let plain = gaussian_histogram_values(&sims, bins(20), 0.1, Kernel::default()).unwrap();
        let mut t = Tape::new();
        let sv = t.leaves(&sims);
        let hv = gaussian_histogram_on(&mut t, &sv, bins(20), 0.1, Kernel::default(), true).unwrap();
        let tv = t.values(&hv);
        let sum: f64 = tv.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
        for (a, b) in tv.iter().zip(plain.values()) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn unnormalized_mass_is_about_one_per_interior_sample() {
        let b = bins(50);
        let h = gaussian_expansion([(0.5f64, 1.0), (0.45, 1.0)], b, 0.05, Kernel::default()).unwrap();
        assert!((h.total() - 2.0).abs() < 1e-3);
    }

    #[test]
    fn tv_decreases_as_sigma_shrinks() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let b = bins(20);
        let sims: Vec<f64> = (0..500).map(|_| rng.random::<f64>()).collect();
        let exact = indicator_histogram(&sims, b).unwrap().normalized();
        let tvs: Vec<f64> = [0.1, 0.05, 0.01, 0.005]
            .iter()
            .map(|&sigma| {
                let g = gaussian_histogram_values(&sims, b, sigma, Kernel::default()).unwrap();
                total_variation(g.values(), exact.values())
            })
            .collect();
        for w in tvs.windows(2) {
            assert!(w[1] < w[0], "{tvs:?}");
        }
    }

    #[test]
    fn shifting_by_one_bin_shifts_mass_pattern() {
        let b = bins(20);
        let sigma = 0.01;
        let w = b.width::<f64>();
        let sims = [0.31, 0.42, 0.44, 0.58, 0.61];
        let shifted: Vec<f64> = sims.iter().map(|s| s + w).collect();
        let pts = |v: &[f64]| v.iter().map(|&s| (s, 1.0)).collect::<Vec<_>>();
        let h0 = gaussian_expansion(pts(&sims), b, sigma, Kernel::default()).unwrap();
        let h1 = gaussian_expansion(pts(&shifted), b, sigma, Kernel::default()).unwrap();
        for i in 0..19 {
            assert!((h0.values()[i] - h1.values()[i + 1]).abs() < 1e-12);
        }
    }

    #[test]
    fn csv_export() {
        let h = indicator_histogram(&[0.1, 0.9], bins(2)).unwrap();
        let mut buf = Vec::new();
        h.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "bin_center,value\n0.25,1\n0.75,1\n");
    }

    #[test]
    fn bin_integral_kernel_partitions_unit_mass() {
        let b = bins(20);
        for s in [0.5f64, 0.4999, 0.31] {
            let total: f64 = (0..20).map(|i| Kernel::BinIntegral.mass(s, b, i, 0.01)).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
        // half the mass of an edge sample falls on each side
        let m = Kernel::BinIntegral.mass(0.5f64, b, 10, 0.01);
        assert!((m - 0.5).abs() < 1e-6);
        // far tails stay accurate instead of cancelling to zero
        let tail = Kernel::BinIntegral.mass(0.75f64, b, 19, 0.01);
        assert!(tail > 0.0 && tail < 1e-80);
    }

    #[test]
    fn kernels_agree_when_sigma_is_wide() {
        let b = bins(20);
        // bins within 2σ of the sample
        for i in 4..11 {
            let a = Kernel::BinIntegral.mass(0.37f64, b, i, 0.1);
            let m = Kernel::Midpoint.mass(0.37f64, b, i, 0.1);
            // midpoint-rule error is about Δ²/(24σ²) of the bin mass
            assert!((a - m).abs() < 0.025 * a.max(m), "bin {i}: {a} vs {m}");
        }
    }

    #[test]
    fn kernel_tape_matches_plain_for_both_kernels() {
        let sims = [0.02f64, 0.33, 0.5, 0.71, 0.97];
        for kernel in [Kernel::BinIntegral, Kernel::Midpoint] {
            let plain = gaussian_histogram_values(&sims, bins(10), 0.05, kernel).unwrap();
            let mut t = Tape::new();
            let sv = t.leaves(&sims);
            let hv = gaussian_histogram_on(&mut t, &sv, bins(10), 0.05, kernel, true).unwrap();
            for (&v, &p) in hv.iter().zip(plain.values()) {
                assert!((t.value(v) - p).abs() < 1e-13);
            }
        }
        assert_eq!(Kernel::parse("midpoint").unwrap(), Kernel::Midpoint);
        assert_eq!(Kernel::parse(Kernel::BinIntegral.name()).unwrap(), Kernel::BinIntegral);
        assert!(Kernel::parse("box").is_err());
    }
}
