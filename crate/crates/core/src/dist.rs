//! One-dimensional distributions used for gaps, lifetimes, route lengths
//! and bypass times.
//!
//! All laws live on `[0, inf]`. [`Distribution::Never`] is the law
//! concentrated at `+inf`, used for "bypass prohibited".

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution as _, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Distribution {
    Exponential { rate: f64 },
    Deterministic { value: f64 },
    Uniform { lo: f64, hi: f64 },
    /// Finitely many atoms `(value, weight)`.
    Discrete { atoms: Vec<(f64, f64)> },
    /// Sorted sample; the cdf is the right-continuous empirical cdf.
    Empirical { sample: Vec<f64> },
    /// Point mass at `+inf`.
    Never,
}

impl Distribution {
    pub fn exponential(rate: f64) -> Result<Self> {
        Self::Exponential { rate }.validated()
    }

    pub fn deterministic(value: f64) -> Result<Self> {
        Self::Deterministic { value }.validated()
    }

    pub fn uniform(lo: f64, hi: f64) -> Result<Self> {
        Self::Uniform { lo, hi }.validated()
    }

    pub fn discrete(atoms: Vec<(f64, f64)>) -> Result<Self> {
        Self::Discrete { atoms }.validated()
    }

    pub fn empirical(mut sample: Vec<f64>) -> Result<Self> {
        sample.sort_by(f64::total_cmp);
        Self::Empirical { sample }.validated()
    }

    pub fn validated(self) -> Result<Self> {
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = |x: f64| x.is_finite() && x >= 0.0;
        match self {
            Self::Exponential { rate } => {
                if !(rate.is_finite() && *rate > 0.0) {
                    return Err(Error::param("rate", "must be finite and > 0"));
                }
            }
            Self::Deterministic { value } => {
                if !nonneg(*value) {
                    return Err(Error::param("value", "must be finite and >= 0"));
                }
            }
            Self::Uniform { lo, hi } => {
                if !nonneg(*lo) || !nonneg(*hi) || lo > hi {
                    return Err(Error::param("lo/hi", "need 0 <= lo <= hi < inf"));
                }
            }
            Self::Discrete { atoms } => {
                if atoms.is_empty() {
                    return Err(Error::param("atoms", "at least one atom required"));
                }
                if atoms.iter().any(|&(x, w)| !nonneg(x) || !nonneg(w)) {
                    return Err(Error::param("atoms", "values and weights must be >= 0"));
                }
                let total: f64 = atoms.iter().map(|a| a.1).sum();
                if (total - 1.0).abs() > 1e-12 {
                    return Err(Error::param("atoms", "weights must sum to 1"));
                }
            }
            Self::Empirical { sample } => {
                if sample.is_empty() {
                    return Err(Error::param("sample", "empirical sample must be nonempty"));
                }
                if sample.iter().any(|x| !nonneg(*x)) {
                    return Err(Error::param("sample", "values must be finite and >= 0"));
                }
                if sample.windows(2).any(|w| w[0] > w[1]) {
                    return Err(Error::param("sample", "sample must be sorted"));
                }
            }
            Self::Never => {}
        }
        Ok(())
    }

    /// `P(X <= x)`.
    pub fn cdf(&self, x: f64) -> f64 {
        if x < 0.0 {
            return 0.0;
        }
        match self {
            Self::Exponential { rate } => -(-rate * x).exp_m1(),
            Self::Deterministic { value } => {
                if x >= *value {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Uniform { lo, hi } => {
                if x >= *hi {
                    1.0
                } else if x < *lo {
                    0.0
                } else {
                    (x - lo) / (hi - lo)
                }
            }
            Self::Discrete { atoms } => atoms.iter().filter(|a| a.0 <= x).map(|a| a.1).sum(),
            Self::Empirical { sample } => {
                let k = sample.partition_point(|s| *s <= x);
                k as f64 / sample.len() as f64
            }
            Self::Never => 0.0,
        }
    }

    pub fn survival(&self, x: f64) -> f64 {
        match self {
            Self::Exponential { rate } if x >= 0.0 => (-rate * x).exp(),
            _ => 1.0 - self.cdf(x),
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            Self::Exponential { rate } => 1.0 / rate,
            Self::Deterministic { value } => *value,
            Self::Uniform { lo, hi } => 0.5 * (lo + hi),
            Self::Discrete { atoms } => atoms.iter().map(|(x, w)| x * w).sum(),
            Self::Empirical { sample } => sample.iter().sum::<f64>() / sample.len() as f64,
            Self::Never => f64::INFINITY,
        }
    }

    pub fn second_moment(&self) -> f64 {
        match self {
            Self::Exponential { rate } => 2.0 / (rate * rate),
            Self::Deterministic { value } => value * value,
            Self::Uniform { lo, hi } => (lo * lo + lo * hi + hi * hi) / 3.0,
            Self::Discrete { atoms } => atoms.iter().map(|(x, w)| x * x * w).sum(),
            Self::Empirical { sample } => {
                sample.iter().map(|x| x * x).sum::<f64>() / sample.len() as f64
            }
            Self::Never => f64::INFINITY,
        }
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.second_moment() - m * m
    }

    /// `int_0^x (1 - F(u)) du`, in closed form for every kind.
    pub fn integrated_survival(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        match self {
            Self::Exponential { rate } => -(-rate * x).exp_m1() / rate,
            Self::Deterministic { value } => x.min(*value),
            Self::Uniform { lo, hi } => {
                if x <= *lo {
                    x
                } else if x >= *hi {
                    0.5 * (lo + hi)
                } else {
                    let s = x - lo;
                    lo + s - s * s / (2.0 * (hi - lo))
                }
            }
            Self::Discrete { atoms } => atoms.iter().map(|(v, w)| w * x.min(*v)).sum(),
            Self::Empirical { sample } => {
                sample.iter().map(|v| x.min(*v)).sum::<f64>() / sample.len() as f64
            }
            Self::Never => x,
        }
    }

    /// Smallest `x` with `F(x) >= p`.
    pub fn quantile(&self, p: f64) -> f64 {
        let p = p.clamp(0.0, 1.0);
        match self {
            Self::Exponential { rate } => -(-p).ln_1p() / rate,
            Self::Deterministic { value } => *value,
            Self::Uniform { lo, hi } => lo + p * (hi - lo),
            Self::Discrete { atoms } => {
                let mut sorted = atoms.clone();
                sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
                let mut acc = 0.0;
                for (x, w) in &sorted {
                    acc += w;
                    if acc >= p - 1e-15 {
                        return *x;
                    }
                }
                sorted.last().map(|a| a.0).unwrap_or(0.0)
            }
            Self::Empirical { sample } => {
                let n = sample.len();
                let k = ((p * n as f64).ceil() as usize).clamp(1, n);
                sample[k - 1]
            }
            Self::Never => f64::INFINITY,
        }
    }

    /// Points where the cdf is not smooth.
    pub fn breakpoints(&self) -> Vec<f64> {
        match self {
            Self::Exponential { .. } | Self::Never => vec![],
            Self::Deterministic { value } => vec![*value],
            Self::Uniform { lo, hi } => vec![*lo, *hi],
            Self::Discrete { atoms } => atoms.iter().map(|a| a.0).collect(),
            Self::Empirical { sample } => {
                let mut s = sample.clone();
                s.dedup();
                s
            }
        }
    }

    /// The law of `factor * X`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        if !(factor.is_finite() && factor > 0.0) {
            return Err(Error::param("factor", "scale factor must be finite and > 0"));
        }
        Ok(match self {
            Self::Exponential { rate } => Self::Exponential {
                rate: rate / factor,
            },
            Self::Deterministic { value } => Self::Deterministic {
                value: value * factor,
            },
            Self::Uniform { lo, hi } => Self::Uniform {
                lo: lo * factor,
                hi: hi * factor,
            },
            Self::Discrete { atoms } => Self::Discrete {
                atoms: atoms.iter().map(|(x, w)| (x * factor, *w)).collect(),
            },
            Self::Empirical { sample } => Self::Empirical {
                sample: sample.iter().map(|x| x * factor).collect(),
            },
            Self::Never => Self::Never,
        })
    }

    /// True when `P(X > 0) = 1`.
    pub fn is_positive_supported(&self) -> bool {
        match self {
            Self::Exponential { .. } | Self::Never => true,
            Self::Deterministic { value } => *value > 0.0,
            Self::Uniform { lo, hi } => *lo > 0.0 || hi > lo,
            Self::Discrete { atoms } => atoms.iter().all(|(x, w)| *x > 0.0 || *w == 0.0),
            Self::Empirical { sample } => sample[0] > 0.0,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Self::Exponential { rate } => Exp::new(*rate).expect("validated rate").sample(rng),
            Self::Deterministic { value } => *value,
            Self::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
            Self::Discrete { atoms } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (x, w) in atoms {
                    acc += w;
                    if u < acc {
                        return *x;
                    }
                }
                atoms.last().map(|a| a.0).unwrap_or(0.0)
            }
            Self::Empirical { sample } => sample[rng.random_range(0..sample.len())],
            Self::Never => f64::INFINITY,
        }
    }

    /// The residual-life (stationary delay) law with density `(1 - F(s)) / m`.
    pub fn residual_life(&self) -> Result<ResidualLife> {
        ResidualLife::new(self.clone())
    }
}

/// Law with density `m^{-1} (1 - F(s))` built from a base law `F` with
/// finite positive mean `m`: the stationary first-point delay of a renewal
/// process and the residual lifetime seen by a random inspection.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualLife {
    base: Distribution,
    base_mean: f64,
}

impl ResidualLife {
    pub fn new(base: Distribution) -> Result<Self> {
        base.validate()?;
        let m = base.mean();
        if !(m.is_finite() && m > 0.0) {
            return Err(Error::param("mean", "base law must have finite positive mean"));
        }
        Ok(Self { base, base_mean: m })
    }

    pub fn base(&self) -> &Distribution {
        &self.base
    }

    pub fn density(&self, s: f64) -> f64 {
        if s < 0.0 {
            0.0
        } else {
            self.base.survival(s) / self.base_mean
        }
    }

    pub fn cdf(&self, s: f64) -> f64 {
        (self.base.integrated_survival(s) / self.base_mean).min(1.0)
    }

    pub fn survival(&self, s: f64) -> f64 {
        match self.base {
            // avoids cancellation in the far tail
            Distribution::Exponential { rate } if s >= 0.0 => (-rate * s).exp(),
            _ => 1.0 - self.cdf(s),
        }
    }

    /// `m2 / (2 m)`.
    pub fn mean(&self) -> f64 {
        self.base.second_moment() / (2.0 * self.base_mean)
    }

    pub fn quantile(&self, p: f64) -> f64 {
        if let Distribution::Exponential { rate } = self.base {
            return -(-p).ln_1p() / rate;
        }
        let mut hi = self.base.quantile(1.0).max(self.base_mean);
        if !hi.is_finite() {
            hi = self.base_mean;
        }
        while self.cdf(hi) < p && hi < 1e300 {
            hi *= 2.0;
        }
        numeric::invert_monotone(|s| self.cdf(s), p, 0.0, hi, 1e-13 * hi.max(1.0))
    }

    pub fn breakpoints(&self) -> Vec<f64> {
        self.base.breakpoints()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        self.quantile(u)
    }
}

impl fmt::Display for Distribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Exponential { rate } => write!(f, "exponential({rate})"),
            Self::Deterministic { value } => write!(f, "deterministic({value})"),
            Self::Uniform { lo, hi } => write!(f, "uniform({lo},{hi})"),
            Self::Discrete { atoms } => {
                let parts: Vec<String> = atoms.iter().map(|(x, w)| format!("{x}:{w}")).collect();
                write!(f, "discrete({})", parts.join(","))
            }
            Self::Empirical { sample } => {
                let parts: Vec<String> = sample.iter().map(|x| x.to_string()).collect();
                write!(f, "empirical({})", parts.join(","))
            }
            Self::Never => write!(f, "never"),
        }
    }
}

/// Parses `exponential(1)`, `deterministic(2)`, `uniform(0,2)`,
/// `discrete(1:0.5,2:0.5)`, `empirical(0.3,1.2,...)` and `never`.
impl FromStr for Distribution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "never" || s == "infinite" {
            return Ok(Self::Never);
        }
        let bad = || Error::param("distribution", format!("cannot parse `{s}`"));
        let open = s.find('(').ok_or_else(bad)?;
        if !s.ends_with(')') {
            return Err(bad());
        }
        let kind = s[..open].trim();
        let args = &s[open + 1..s.len() - 1];
        let nums = |args: &str| -> Result<Vec<f64>> {
            args.split(',')
                .filter(|p| !p.trim().is_empty())
                .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
                .collect()
        };
        match kind {
            "exponential" | "exp" => match nums(args)?.as_slice() {
                [rate] => Self::exponential(*rate),
                _ => Err(bad()),
            },
            "deterministic" | "det" => match nums(args)?.as_slice() {
                [v] => Self::deterministic(*v),
                _ => Err(bad()),
            },
            "uniform" => match nums(args)?.as_slice() {
                [lo, hi] => Self::uniform(*lo, *hi),
                _ => Err(bad()),
            },
            "discrete" => {
                let atoms = args
                    .split(',')
                    .map(|p| {
                        let (x, w) = p.split_once(':').ok_or_else(bad)?;
                        Ok((
                            x.trim().parse().map_err(|_| bad())?,
                            w.trim().parse().map_err(|_| bad())?,
                        ))
                    })
                    .collect::<Result<Vec<(f64, f64)>>>()?;
                Self::discrete(atoms)
            }
            "empirical" => Self::empirical(nums(args)?),
            _ => Err(bad()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::integrate_piecewise;
    use crate::rng::seeded;

    #[test]
    fn moments_match_quadrature() {
        let laws = [
            Distribution::exponential(2.0).unwrap(),
            Distribution::uniform(0.5, 1.5).unwrap(),
            Distribution::discrete(vec![(1.0, 0.25), (3.0, 0.75)]).unwrap(),
            Distribution::deterministic(2.0).unwrap(),
        ];
        for law in &laws {
            let upper = law.quantile(1.0 - 1e-15).max(1.0) * 1.01;
            let m = integrate_piecewise(&|x| law.survival(x), 0.0, upper, &law.breakpoints(), 1e-12);
            assert!((m - law.mean()).abs() < 1e-9, "{law}: {m} vs {}", law.mean());
            let m2 = integrate_piecewise(
                &|x| 2.0 * x * law.survival(x),
                0.0,
                upper,
                &law.breakpoints(),
                1e-12,
            );
            assert!((m2 - law.second_moment()).abs() < 1e-8, "{law}");
        }
    }

    #[test]
    fn integrated_survival_closed_forms() {
        let u = Distribution::uniform(0.0, 1.0).unwrap();
        for x in [0.0, 0.3, 0.7, 1.0, 2.0] {
            let q = integrate_piecewise(&|s| u.survival(s), 0.0, x, &[], 1e-13);
            assert!((u.integrated_survival(x) - q).abs() < 1e-12);
        }
    }

    #[test]
    fn validation_rejects_bad_parameters() {
        assert!(Distribution::exponential(0.0).is_err());
        assert!(Distribution::uniform(2.0, 1.0).is_err());
        assert!(Distribution::discrete(vec![(1.0, 0.5)]).is_err());
        assert!(Distribution::empirical(vec![]).is_err());
        assert!(Distribution::deterministic(-1.0).is_err());
    }

    #[test]
    fn parse_round_trip() {
        for s in ["exponential(1.5)", "uniform(0,2)", "discrete(1:0.5,2:0.5)", "never"] {
            let d: Distribution = s.parse().unwrap();
            let again: Distribution = d.to_string().parse().unwrap();
            assert_eq!(d, again);
        }
        assert!("gamma(2)".parse::<Distribution>().is_err());
    }

    #[test]
    fn empirical_cdf_is_right_continuous() {
        let d = Distribution::empirical(vec![2.0, 1.0, 1.0, 3.0]).unwrap();
        assert_eq!(d.cdf(1.0), 0.5);
        assert_eq!(d.cdf(0.999), 0.0);
        assert_eq!(d.quantile(0.5), 1.0);
        assert_eq!(d.quantile(0.51), 2.0);
    }

    #[test]
    fn residual_life_of_deterministic_is_uniform() {
        let r = Distribution::deterministic(2.0).unwrap().residual_life().unwrap();
        assert!((r.density(0.5) - 0.5).abs() < 1e-15);
        assert_eq!(r.density(2.5), 0.0);
        assert!((r.mean() - 1.0).abs() < 1e-15);
        assert!((r.quantile(0.25) - 0.5).abs() < 1e-10);
        let mut rng = seeded(3);
        let xs: Vec<f64> = (0..1000).map(|_| r.sample(&mut rng)).collect();
        assert!(xs.iter().all(|x| (0.0..=2.0).contains(x)));
    }

    #[test]
    fn scaling_preserves_kind() {
        let d = Distribution::exponential(1.0).unwrap().scaled(2.0).unwrap();
        assert!((d.mean() - 2.0).abs() < 1e-15);
        assert!(Distribution::Never.scaled(3.0).unwrap() == Distribution::Never);
    }
}
