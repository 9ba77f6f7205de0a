//! Truncated log-normal particle sizes and the five shape families.
//!
//! Radii follow `f(r) = exp(-(ln r - ln r0)^2 / (2 s^2)) / (sqrt(2 pi) s r)`
//! restricted to `[r_min, r_max]` and renormalised. Sampling inverts a
//! tabulated CDF (Gauss-Legendre quadrature on a log-spaced grid) through a
//! monotone cubic Hermite spline, so a seed maps to the same radii on every
//! platform.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DistributionError, GeometryError};
use crate::geometry::{Particle, ParticleShape};
use crate::scalar::{lit, to_f64, Real};

/// Number of nodes in the inverse-CDF table.
pub const CDF_TABLE_SIZE: usize = 4096;

/// Mass beyond this many log-space spreads from `r0` is dropped from the table.
const TAIL_SPREADS: f64 = 10.0;

/// Name of the random generator used for every seeded draw.
pub const RNG_NAME: &str = "chacha8";

/// Seeded generator shared by all stochastic stages.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SizeDistribution<T: Real> {
    pub r0: T,
    pub sigma: T,
    pub r_min: T,
    pub r_max: T,
}

impl<T: Real> Default for SizeDistribution<T> {
    fn default() -> Self {
        Self {
            r0: T::one(),
            sigma: lit(0.25),
            r_min: lit(0.2),
            r_max: lit(2.5),
        }
    }
}

impl<T: Real> SizeDistribution<T> {
    pub fn new(r0: T, sigma: T, r_min: T, r_max: T) -> Result<Self, DistributionError> {
        let d = Self {
            r0,
            sigma,
            r_min,
            r_max,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<(), DistributionError> {
        if !(self.sigma > T::zero()) || !self.sigma.is_finite() {
            return Err(DistributionError::Invalid(format!(
                "sigma must be > 0, got {}",
                to_f64(self.sigma)
            )));
        }
        if !(T::zero() < self.r_min && self.r_min < self.r0 && self.r0 < self.r_max) || !self.r_max.is_finite() {
            return Err(DistributionError::Invalid(format!(
                "need 0 < r_min < r0 < r_max, got r_min={} r0={} r_max={}",
                to_f64(self.r_min),
                to_f64(self.r0),
                to_f64(self.r_max)
            )));
        }
        Ok(())
    }

    /// Log-normal density before truncation.
    pub fn raw_pdf(&self, r: T) -> T {
        let z = (r.ln() - self.r0.ln()) / self.sigma;
        (-(z * z) / lit(2.0)).exp() / ((T::two_pi()).sqrt() * self.sigma * r)
    }
}

/// Truncated distribution with its tabulated inverse CDF.
#[derive(Debug, Clone)]
pub struct TruncatedLogNormal<T: Real> {
    dist: SizeDistribution<T>,
    /// Untruncated probability mass inside the truncation window.
    mass: T,
    /// ln r at the table nodes.
    log_r: Vec<T>,
    /// Truncated CDF at the table nodes, from 0 to 1.
    cdf: Vec<T>,
    /// d(ln r)/dF at the nodes, limited for monotonicity.
    slope: Vec<T>,
}

const GL_NODES: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683,
    0.0,
    0.538_469_310_105_683,
    0.906_179_845_938_664,
];
const GL_WEIGHTS: [f64; 5] = [
    0.236_926_885_056_189,
    0.478_628_670_499_366,
    0.568_888_888_888_889,
    0.478_628_670_499_366,
    0.236_926_885_056_189,
];

impl<T: Real> TruncatedLogNormal<T> {
    pub fn new(dist: SizeDistribution<T>) -> Result<Self, DistributionError> {
        dist.validate()?;
        let spread = dist.sigma * lit(TAIL_SPREADS);
        let lo = dist.r_min.ln().max(dist.r0.ln() - spread);
        let hi = dist.r_max.ln().min(dist.r0.ln() + spread);
        let n = CDF_TABLE_SIZE;
        let step = (hi - lo) / lit((n - 1) as f64);
        let log_r: Vec<T> = (0..n).map(|k| lo + step * lit(k as f64)).collect();

        // integrate f(r) dr = g(x) dx with x = ln r, g(x) = r f(r)
        let density_in_log = |x: T| {
            let z = (x - dist.r0.ln()) / dist.sigma;
            (-(z * z) / lit(2.0)).exp() / ((T::two_pi()).sqrt() * dist.sigma)
        };
        let mut cum = vec![T::zero(); n];
        for k in 1..n {
            let (a, b) = (log_r[k - 1], log_r[k]);
            let mid = (a + b) / lit(2.0);
            let half = (b - a) / lit(2.0);
            let mut s = T::zero();
            for (x, w) in GL_NODES.iter().zip(GL_WEIGHTS.iter()) {
                s += lit::<T>(*w) * density_in_log(mid + half * lit(*x));
            }
            cum[k] = cum[k - 1] + s * half;
        }
        let mass = cum[n - 1];
        let cdf: Vec<T> = cum.iter().map(|&c| c / mass).collect();

        // slopes dx/dF = mass / g(x), then Fritsch-Carlson limiting
        let mut slope: Vec<T> = log_r.iter().map(|&x| mass / density_in_log(x)).collect();
        for k in 0..n - 1 {
            let df = cdf[k + 1] - cdf[k];
            if df <= T::zero() {
                slope[k] = T::zero();
                slope[k + 1] = T::zero();
                continue;
            }
            let secant = (log_r[k + 1] - log_r[k]) / df;
            let alpha = slope[k] / secant;
            let beta = slope[k + 1] / secant;
            let r2 = alpha * alpha + beta * beta;
            if r2 > lit(9.0) {
                let tau = lit::<T>(3.0) / r2.sqrt();
                slope[k] = tau * alpha * secant;
                slope[k + 1] = tau * beta * secant;
            }
        }
        Ok(Self {
            dist,
            mass,
            log_r,
            cdf,
            slope,
        })
    }

    pub fn distribution(&self) -> &SizeDistribution<T> {
        &self.dist
    }

    /// Truncated, renormalised density; zero outside `[r_min, r_max]`.
    pub fn pdf(&self, r: T) -> Result<T, DistributionError> {
        if !(r > T::zero()) {
            return Err(DistributionError::NonPositiveRadius(to_f64(r)));
        }
        if r < self.dist.r_min || r > self.dist.r_max {
            return Ok(T::zero());
        }
        Ok(self.dist.raw_pdf(r) / self.mass)
    }

    /// Truncated CDF from the table, cubic Hermite in ln r using the exact density as slope.
    pub fn cdf(&self, r: T) -> T {
        if r <= T::zero() {
            return T::zero();
        }
        let x = r.ln();
        let n = self.log_r.len();
        if x <= self.log_r[0] {
            return T::zero();
        }
        if x >= self.log_r[n - 1] {
            return T::one();
        }
        let k = self.log_r.partition_point(|&v| v <= x) - 1;
        let h = self.log_r[k + 1] - self.log_r[k];
        let t = (x - self.log_r[k]) / h;
        let slope = |x: T| {
            let r = x.exp();
            self.dist.raw_pdf(r) * r / self.mass
        };
        let (t2, t3) = (t * t, t * t * t);
        let two: T = lit(2.0);
        let three: T = lit(3.0);
        let f = (two * t3 - three * t2 + T::one()) * self.cdf[k]
            + (t3 - two * t2 + t) * h * slope(self.log_r[k])
            + (three * t2 - two * t3) * self.cdf[k + 1]
            + (t3 - t2) * h * slope(self.log_r[k + 1]);
        f.max(self.cdf[k]).min(self.cdf[k + 1])
    }

    /// Radius with truncated CDF equal to `p` in `[0, 1]`.
    pub fn quantile(&self, p: T) -> T {
        let n = self.cdf.len();
        let p = p.max(T::zero()).min(T::one());
        let k = (self.cdf.partition_point(|&c| c <= p)).clamp(1, n - 1) - 1;
        let h = self.cdf[k + 1] - self.cdf[k];
        let x = if h > T::zero() {
            let t = (p - self.cdf[k]) / h;
            let t2 = t * t;
            let t3 = t2 * t;
            let two: T = lit(2.0);
            let three: T = lit(3.0);
            let h00 = two * t3 - three * t2 + T::one();
            let h10 = t3 - two * t2 + t;
            let h01 = -two * t3 + three * t2;
            let h11 = t3 - t2;
            h00 * self.log_r[k] + h10 * h * self.slope[k] + h01 * self.log_r[k + 1] + h11 * h * self.slope[k + 1]
        } else {
            self.log_r[k]
        };
        x.exp().max(self.dist.r_min).min(self.dist.r_max)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> T {
        let u: f64 = rng.random();
        let r = self.quantile(lit(u));
        assert!(r >= self.dist.r_min && r <= self.dist.r_max);
        r
    }
}

/// Convenience for a single draw; builds the table each call.
pub fn sample_radius<T: Real, R: Rng + ?Sized>(d: &SizeDistribution<T>, rng: &mut R) -> Result<T, DistributionError> {
    Ok(TruncatedLogNormal::new(*d)?.sample(rng))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    Sphere,
    Prolate,
    Oblate,
    Carrot,
    HalfDome,
}

/// Named shape family with per-semi-length ratios to the drawn radius.
///
/// `ratios[axis][0]` is the positive half-axis, `[1]` the negative one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapeFamily {
    pub kind: FamilyKind,
    pub ratios: [[f64; 2]; 3],
}

impl ShapeFamily {
    pub fn default_for(kind: FamilyKind) -> Self {
        let ratios = match kind {
            FamilyKind::Sphere => [[1.0, 1.0], [1.0, 1.0], [1.0, 1.0]],
            FamilyKind::Prolate => [[1.0, 1.0], [0.6, 0.6], [0.6, 0.6]],
            FamilyKind::Oblate => [[1.0, 1.0], [1.0, 1.0], [0.6, 0.6]],
            FamilyKind::Carrot => [[1.0, 0.4], [0.35, 0.35], [0.35, 0.35]],
            FamilyKind::HalfDome => [[1.0, 1.0], [1.0, 1.0], [0.25 / 0.7, 1.0]],
        };
        Self { kind, ratios }
    }

    pub fn validate(&self) -> Result<(), DistributionError> {
        let flat: Vec<f64> = self.ratios.iter().flatten().copied().collect();
        if flat.iter().any(|&r| !(r > 0.0 && r <= 1.0)) {
            return Err(DistributionError::Invalid("shape ratios must lie in (0, 1]".into()));
        }
        if !flat.iter().any(|&r| r == 1.0) {
            return Err(DistributionError::Invalid(
                "one semi-length ratio must be 1 (major semi-length equals r)".into(),
            ));
        }
        let paired = self.ratios.iter().all(|p| p[0] == p[1]);
        match self.kind {
            FamilyKind::Sphere if flat.iter().any(|&r| r != 1.0) => {
                Err(DistributionError::Invalid("sphere ratios must all be 1".into()))
            }
            FamilyKind::Prolate | FamilyKind::Oblate if !paired => Err(DistributionError::Invalid(
                "ellipsoid families need equal positive and negative ratios".into(),
            )),
            FamilyKind::Prolate | FamilyKind::Oblate
                if !(self.ratios[0][0] >= self.ratios[1][0] && self.ratios[1][0] >= self.ratios[2][0]) =>
            {
                Err(DistributionError::Invalid("ellipsoid ratios must be ordered a >= b >= c".into()))
            }
            _ => Ok(()),
        }
    }

    /// Shape whose major semi-length is `r`.
    pub fn shape<T: Real>(&self, r: T) -> Result<ParticleShape<T>, GeometryError> {
        let s = |axis: usize, half: usize| -> T {
            let q = self.ratios[axis][half];
            if q == 1.0 {
                r
            } else {
                r * lit(q)
            }
        };
        match self.kind {
            FamilyKind::Sphere => ParticleShape::sphere(r),
            FamilyKind::Prolate | FamilyKind::Oblate => ParticleShape::ellipsoid(s(0, 0), s(1, 0), s(2, 0)),
            FamilyKind::Carrot | FamilyKind::HalfDome => {
                ParticleShape::poly_ellipsoid(s(0, 0), s(0, 1), s(1, 0), s(1, 1), s(2, 0), s(2, 1))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssemblySpec<T: Real> {
    pub n: usize,
    pub family: ShapeFamily,
    pub distribution: SizeDistribution<T>,
    pub density: T,
    pub seed: u64,
}

/// Draws `n` radii and instantiates particles at the origin.
pub fn build_assembly<T: Real>(spec: &AssemblySpec<T>) -> Result<Vec<Particle<T>>, DistributionError> {
    if spec.n == 0 {
        return Err(DistributionError::Invalid("n must be >= 1".into()));
    }
    spec.family.validate()?;
    let sampler = TruncatedLogNormal::new(spec.distribution)?;
    let mut rng = rng_from_seed(spec.seed);
    (0..spec.n)
        .map(|id| {
            let r = sampler.sample(&mut rng);
            let shape = spec
                .family
                .shape(r)
                .map_err(|e| DistributionError::Invalid(e.to_string()))?;
            Particle::new(id, shape, spec.density).map_err(|e| DistributionError::Invalid(e.to_string()))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramRow {
    pub bin_center: f64,
    pub empirical: f64,
    pub analytic: f64,
}

/// Normalised histogram of major semi-lengths over `[r_min, r_max]` next to
/// the bin-averaged analytic density.
pub fn histogram_report<T: Real>(
    assembly: &[Particle<T>],
    d: &SizeDistribution<T>,
    bins: usize,
) -> Result<Vec<HistogramRow>, DistributionError> {
    if bins < 2 {
        return Err(DistributionError::TooFewBins(bins));
    }
    let sampler = TruncatedLogNormal::new(*d)?;
    let lo = to_f64(d.r_min);
    let hi = to_f64(d.r_max);
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for p in assembly {
        let r = to_f64(p.shape.major_semi_length());
        let k = (((r - lo) / width).floor().max(0.0) as usize).min(bins - 1);
        counts[k] += 1;
    }
    let n = assembly.len().max(1) as f64;
    Ok((0..bins)
        .map(|k| {
            let a = lo + width * k as f64;
            let b = a + width;
            let mass = to_f64(sampler.cdf(lit(b))) - to_f64(sampler.cdf(lit(a)));
            HistogramRow {
                bin_center: a + width / 2.0,
                empirical: counts[k] as f64 / (n * width),
                analytic: mass / width,
            }
        })
        .collect())
}
