//! Synthetic ordinal-class data.
//!
//! Class centers sit at equal arc length on a circular arc embedded in a
//! random plane of the input space, displaced from the origin by a random
//! offset. Instances are a center plus isotropic Gaussian noise, so the
//! class order is encoded in the geometry but spread over all input
//! dimensions. Each date draws its classes from a proportion schedule.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::{Dataset, Instance, ProportionTable};
use crate::error::{Error, Result};
use crate::ordinal::ProportionVector;
use crate::scalar::Scalar;
use crate::seeds::derive_seed;

/// Per-date class proportions in date order.
pub type ProportionSchedule<T> = ProportionTable<T>;

/// Five-stage recovery schedule. Only the `day0` row is fixed (all class 1);
/// the other rows are hand-set defaults with the ghost-fiber stage (class 2)
/// peaking at day 3, myoblasts then myotubes rising through days 5 and 7,
/// and recovered fibers (class 5) dominating day 14.
pub fn default_schedule<T: Scalar>(classes: usize) -> Result<ProportionSchedule<T>> {
    if classes != 5 {
        return Err(Error::InvalidParameter(format!(
            "the default schedule has 5 classes, requested {classes}"
        )));
    }
    const ROWS: [(&str, [f64; 5]); 5] = [
        ("day0", [1.0, 0.0, 0.0, 0.0, 0.0]),
        ("day3", [0.15, 0.55, 0.25, 0.05, 0.0]),
        ("day5", [0.05, 0.2, 0.45, 0.25, 0.05]),
        ("day7", [0.05, 0.05, 0.2, 0.5, 0.2]),
        ("day14", [0.1, 0.0, 0.05, 0.25, 0.6]),
    ];
    let rows = ROWS
        .iter()
        .map(|(d, p)| Ok((d.to_string(), ProportionVector::new(p.iter().map(|&v| T::of(v)).collect())?)))
        .collect::<Result<Vec<_>>>()?;
    ProportionTable::new(rows)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifoldConfig {
    pub input_dim: usize,
    pub classes: usize,
    /// Arc radius.
    pub radius: f64,
    /// Total arc angle in radians spanned from class 1 to class K.
    pub arc: f64,
    /// Norm of the shared displacement of all centers.
    pub offset: f64,
    /// Standard deviation of the isotropic noise per coordinate.
    pub noise: f64,
    /// Jitters each instance along the arc by up to 3/4 of the class spacing.
    pub hard_mode: bool,
    /// Seed for the embedding (plane and offset direction).
    pub seed: u64,
}

impl Default for ManifoldConfig {
    fn default() -> Self {
        ManifoldConfig {
            input_dim: 32,
            classes: 5,
            radius: 2.0,
            arc: 0.9 * std::f64::consts::PI,
            offset: 1.0,
            noise: 0.5,
            hard_mode: false,
            seed: 17,
        }
    }
}

fn random_unit<R: Rng>(dim: usize, rng: &mut R, against: &[Vec<f64>]) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        for u in against {
            let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            for (x, y) in v.iter_mut().zip(u) {
                *x -= d * y;
            }
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            v.iter_mut().for_each(|x| *x /= n);
            return v;
        }
    }
}

/// Fixed embedding derived from a [`ManifoldConfig`].
#[derive(Clone, Debug)]
pub struct Manifold {
    cfg: ManifoldConfig,
    u: Vec<f64>,
    v: Vec<f64>,
    offset: Vec<f64>,
}

impl Manifold {
    pub fn new(cfg: &ManifoldConfig) -> Result<Self> {
        if cfg.input_dim < 3 {
            return Err(Error::InvalidParameter("input_dim must be >= 3".into()));
        }
        if cfg.classes < 2 {
            return Err(Error::TooFewClasses(cfg.classes));
        }
        if !(cfg.radius > 0.0) || !(cfg.noise >= 0.0) || !(cfg.offset >= 0.0) {
            return Err(Error::InvalidParameter(
                "radius must be > 0; noise and offset >= 0".into(),
            ));
        }
        if !(cfg.arc > 0.0 && cfg.arc <= std::f64::consts::PI) {
            return Err(Error::InvalidParameter(
                "arc must lie in (0, pi] so center distance grows with rank distance".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let u = random_unit(cfg.input_dim, &mut rng, &[]);
        let v = random_unit(cfg.input_dim, &mut rng, &[u.clone()]);
        let w = random_unit(cfg.input_dim, &mut rng, &[u.clone(), v.clone()]);
        let offset = w.iter().map(|x| x * cfg.offset).collect();
        Ok(Manifold {
            cfg: cfg.clone(),
            u,
            v,
            offset,
        })
    }

    pub fn config(&self) -> &ManifoldConfig {
        &self.cfg
    }

    fn spacing(&self) -> f64 {
        self.cfg.arc / (self.cfg.classes - 1) as f64
    }

    fn point(&self, angle: f64) -> Vec<f64> {
        let (s, c) = angle.sin_cos();
        (0..self.cfg.input_dim)
            .map(|i| self.offset[i] + self.cfg.radius * (c * self.u[i] + s * self.v[i]))
            .collect()
    }

    /// Center of 0-based class `k`.
    pub fn center(&self, k: usize) -> Vec<f64> {
        self.point(self.spacing() * k as f64)
    }

    pub fn centers(&self) -> Vec<Vec<f64>> {
        (0..self.cfg.classes).map(|k| self.center(k)).collect()
    }

    pub fn sample<R: Rng>(&self, k: usize, rng: &mut R) -> Vec<f64> {
        let mut angle = self.spacing() * k as f64;
        if self.cfg.hard_mode {
            angle += rng.random_range(-0.75..0.75) * self.spacing();
        }
        let mut x = self.point(angle);
        if self.cfg.noise > 0.0 {
            for xi in &mut x {
                let z: f64 = rng.sample(StandardNormal);
                *xi += self.cfg.noise * z;
            }
        }
        x
    }
}

fn draw_class<R: Rng>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (k, &pk) in p.iter().enumerate() {
        if pk > 0.0 {
            acc += pk;
            last = k;
            if u < acc {
                return k;
            }
        }
    }
    last
}

/// Draws `per_date_count` instances per schedule date. Date `i` uses its
/// own stream derived from `seed`, so dates are independent of each other.
pub fn generate<T: Scalar>(
    schedule: &ProportionSchedule<T>,
    manifold: &Manifold,
    per_date_count: usize,
    seed: u64,
) -> Result<Dataset<T>> {
    if per_date_count == 0 {
        return Err(Error::InvalidParameter("per_date_count must be >= 1".into()));
    }
    let classes = manifold.cfg.classes;
    if schedule.classes() != classes {
        return Err(Error::LengthMismatch {
            expected: classes,
            actual: schedule.classes(),
        });
    }
    let mut instances = Vec::with_capacity(per_date_count * schedule.rows().len());
    for (i, (date, p)) in schedule.rows().iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64));
        let probs: Vec<f64> = p.as_slice().iter().map(|v| v.as_f64()).collect();
        for _ in 0..per_date_count {
            let k = draw_class(&probs, &mut rng);
            let input = manifold.sample(k, &mut rng).into_iter().map(T::of).collect();
            instances.push(Instance {
                date: date.clone(),
                class: Some(k),
                input,
            });
        }
    }
    Ok(Dataset {
        input_dim: manifold.cfg.input_dim,
        classes,
        instances,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dist(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
    }

    #[test]
    fn default_schedule_shape() {
        let s = default_schedule::<f64>(5).unwrap();
        let rows = s.rows();
        assert_eq!(rows.len(), 5);
        assert_eq!(rows[0].1.as_slice(), &[1.0, 0.0, 0.0, 0.0, 0.0]);
        let day3 = rows[1].1.as_slice();
        let argmax = (0..5).max_by(|&a, &b| day3[a].total_cmp(&day3[b])).unwrap();
        assert_eq!(argmax, 1);
        for (_, p) in rows {
            assert!((p.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        assert!(default_schedule::<f64>(3).is_err());
    }

    #[test]
    fn centers_respect_ordinal_geometry() {
        let m = Manifold::new(&ManifoldConfig::default()).unwrap();
        let c = m.centers();
        for a in 0..5 {
            for d in 1..(5 - a) {
                if a + d + 1 < 5 {
                    assert!(dist(&c[a], &c[a + d]) < dist(&c[a], &c[a + d + 1]));
                }
            }
        }
        assert!(dist(&c[0], &c[1]) < dist(&c[0], &c[4]));
    }

    #[test]
    fn zero_noise_reproduces_centers() {
        let cfg = ManifoldConfig {
            noise: 0.0,
            ..ManifoldConfig::default()
        };
        let m = Manifold::new(&cfg).unwrap();
        let ds = generate::<f64>(&default_schedule(5).unwrap(), &m, 50, 1).unwrap();
        for inst in &ds.instances {
            assert_eq!(inst.input, m.center(inst.class.unwrap()));
        }
    }

    #[test]
    fn generation_is_seed_deterministic() {
        let m = Manifold::new(&ManifoldConfig::default()).unwrap();
        let s = default_schedule::<f64>(5).unwrap();
        let a = generate(&s, &m, 20, 9).unwrap();
        let b = generate(&s, &m, 20, 9).unwrap();
        let c = generate(&s, &m, 20, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn empirical_proportions_follow_schedule() {
        let m = Manifold::new(&ManifoldConfig::default()).unwrap();
        let s = default_schedule::<f64>(5).unwrap();
        let n = 10_000;
        let ds = generate(&s, &m, n, 123).unwrap();
        for (date, p) in s.rows() {
            let mut counts = [0usize; 5];
            for inst in ds.instances.iter().filter(|i| &i.date == date) {
                counts[inst.class.unwrap()] += 1;
            }
            for k in 0..5 {
                let emp = counts[k] as f64 / n as f64;
                assert!((emp - p[k]).abs() < 0.02, "{date} class {k}: {emp}");
            }
        }
    }

    #[test]
    fn invalid_configs() {
        let bad = ManifoldConfig {
            arc: 4.0,
            ..ManifoldConfig::default()
        };
        assert!(Manifold::new(&bad).is_err());
        let m = Manifold::new(&ManifoldConfig::default()).unwrap();
        assert!(generate::<f64>(&default_schedule(5).unwrap(), &m, 0, 0).is_err());
    }
}
