//! Road capacity as a function of speed, growth of a jam behind a stopped
//! obstacle, and bottleneck regime classification.

use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dist::Distribution;
use crate::error::{Error, Result};
use crate::numeric;

/// Driver-chosen following distance `D+(v)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Headway {
    /// `intercept + slope * v`.
    Affine { intercept: f64, slope: f64 },
    /// `coef * v^exponent`.
    Power { coef: f64, exponent: f64 },
    /// Piecewise-linear interpolation of `(v, D+)` samples, constant beyond
    /// the end points.
    Table { points: Vec<(f64, f64)> },
}

impl Headway {
    pub fn constant(value: f64) -> Self {
        Self::Affine {
            intercept: value,
            slope: 0.0,
        }
    }

    pub fn eval(&self, v: f64) -> f64 {
        match self {
            Self::Affine { intercept, slope } => intercept + slope * v,
            Self::Power { coef, exponent } => coef * v.powf(*exponent),
            Self::Table { points } => {
                let first = points[0];
                let last = points[points.len() - 1];
                if v <= first.0 {
                    return first.1;
                }
                if v >= last.0 {
                    return last.1;
                }
                let k = points.partition_point(|p| p.0 <= v);
                let (a, b) = (points[k - 1], points[k]);
                a.1 + (b.1 - a.1) * (v - a.0) / (b.0 - a.0)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Affine { intercept, slope } => {
                if *intercept < 0.0 || *slope < 0.0 {
                    return Err(Error::param("headway", "affine headway must be nonnegative and nondecreasing"));
                }
            }
            Self::Power { coef, exponent } => {
                if *coef < 0.0 || *exponent < 0.0 {
                    return Err(Error::param("headway", "power headway needs coef, exponent >= 0"));
                }
            }
            Self::Table { points } => {
                if points.is_empty() {
                    return Err(Error::param("headway", "table is empty"));
                }
                if points.windows(2).any(|w| w[1].0 <= w[0].0 || w[1].1 < w[0].1) {
                    return Err(Error::param(
                        "headway",
                        "table speeds must increase and headways must not decrease",
                    ));
                }
                if points.iter().any(|p| p.1 < 0.0) {
                    return Err(Error::param("headway", "headways must be >= 0"));
                }
            }
        }
        Ok(())
    }

    /// Reads a `(v, D+)` table from CSV with a header row.
    pub fn from_csv<R: Read>(input: R) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(input);
        let mut points = Vec::new();
        for row in reader.records() {
            let row = row.map_err(|e| Error::param("headway", e.to_string()))?;
            let parse = |i: usize| -> Result<f64> {
                row.get(i)
                    .and_then(|s| s.trim().parse().ok())
                    .ok_or_else(|| Error::param("headway", format!("bad row {row:?}")))
            };
            points.push((parse(0)?, parse(1)?));
        }
        let h = Self::Table { points };
        h.validate()?;
        Ok(h)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CarGeometry {
    /// Car length.
    pub d: f64,
    /// Bumper gap of a standing car behind its predecessor.
    pub d0_plus: f64,
    pub headway: Headway,
    pub lanes: u32,
}

impl CarGeometry {
    pub fn new(d: f64, d0_plus: f64, headway: Headway, lanes: u32) -> Result<Self> {
        let g = Self {
            d,
            d0_plus,
            headway,
            lanes,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.d.is_finite() && self.d > 0.0) {
            return Err(Error::param("d", "car length must be > 0"));
        }
        if !(self.d0_plus.is_finite() && self.d0_plus >= 0.0) {
            return Err(Error::param("d0_plus", "standstill gap must be >= 0"));
        }
        if self.lanes == 0 {
            return Err(Error::param("lanes", "need at least one lane"));
        }
        self.headway.validate()
    }
}

/// Cars per unit length at speed `v`: `k / (d + D+(v))`.
pub fn flow_density(geom: &CarGeometry, v: f64) -> f64 {
    geom.lanes as f64 / (geom.d + geom.headway.eval(v))
}

/// Maximum of the current `v * lambda(v)` over `[v_lo, v_hi]`, by a dense
/// grid followed by golden-section refinement. Returns `(J_max, argmax)`.
pub fn road_capacity(geom: &CarGeometry, v_lo: f64, v_hi: f64) -> Result<(f64, f64)> {
    if !(v_lo.is_finite() && v_hi.is_finite() && v_lo >= 0.0) || v_lo > v_hi {
        return Err(Error::param("v_lo/v_hi", "need 0 <= v_lo <= v_hi"));
    }
    let current = |v: f64| v * flow_density(geom, v);
    if v_lo == v_hi {
        return Ok((current(v_lo), v_lo));
    }
    const GRID: usize = 10_000;
    let step = (v_hi - v_lo) / GRID as f64;
    let (best_i, _) = (0..=GRID)
        .map(|i| (i, current(v_lo + i as f64 * step)))
        .fold((0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
    let a = v_lo + best_i.saturating_sub(1) as f64 * step;
    let b = (v_lo + (best_i + 1) as f64 * step).min(v_hi);
    let refined = numeric::golden_max(current, a, b, 1e-12 * v_hi.max(1.0));
    let grid_v = v_lo + best_i as f64 * step;
    // keep whichever is better; golden section can only land inside [a, b]
    let v = if current(refined) >= current(grid_v) {
        refined
    } else {
        grid_v
    };
    Ok((current(v), v))
}

/// Asymptotic growth speed of the standing queue behind an obstacle:
/// `v (d + d0+) / (d+ - d0+)` with `d+ = D+(v)`.
pub fn jam_growth_rate(geom: &CarGeometry, v: f64) -> Result<f64> {
    if v == 0.0 {
        return Ok(0.0);
    }
    if !(v.is_finite() && v > 0.0) {
        return Err(Error::param("v", "speed must be finite and >= 0"));
    }
    let d_plus = geom.headway.eval(v);
    if d_plus <= geom.d0_plus {
        return Err(Error::Singularity(format!(
            "moving headway {d_plus} does not exceed standstill gap {}",
            geom.d0_plus
        )));
    }
    Ok(v * (geom.d + geom.d0_plus) / (d_plus - geom.d0_plus))
}

/// Step function `L(t)`: jam length after each car stops.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JamTrace {
    /// `(stop time, jam length after that stop)`, times increasing.
    pub steps: Vec<(f64, f64)>,
    pub t_max: f64,
}

impl JamTrace {
    pub fn length_at(&self, t: f64) -> f64 {
        let k = self.steps.partition_point(|s| s.0 <= t);
        if k == 0 {
            0.0
        } else {
            self.steps[k - 1].1
        }
    }

    pub fn final_length(&self) -> f64 {
        self.length_at(self.t_max)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,L")?;
        for (t, l) in &self.steps {
            writeln!(out, "{t},{l}")?;
        }
        Ok(())
    }
}

/// Discrete-event simulation of cars at speed `v` arriving at an obstacle
/// at `x = 0`. The first car reaches the obstacle at `t = 0`. Moving cars
/// keep bumper gap `D+(v)`, or i.i.d. gaps from `gap_law` when given; each
/// arriving car stops `d0+` behind the rear bumper of its predecessor.
///
/// `L(t)` is measured from the obstacle to the rear bumper of the last
/// stopped car.
pub fn simulate_jam<R: Rng + ?Sized>(
    geom: &CarGeometry,
    v: f64,
    t_max: f64,
    gap_law: Option<&Distribution>,
    rng: &mut R,
) -> Result<JamTrace> {
    geom.validate()?;
    if !(v.is_finite() && v > 0.0) {
        return Err(Error::param("v", "speed must be > 0"));
    }
    if !(t_max.is_finite() && t_max >= 0.0) {
        return Err(Error::param("t_max", "must be finite and >= 0"));
    }
    let d_plus = geom.headway.eval(v);
    match gap_law {
        Some(law) => {
            law.validate()?;
            if law.mean() <= geom.d0_plus {
                return Err(Error::Singularity("mean moving gap <= standstill gap".into()));
            }
        }
        None => {
            if d_plus <= geom.d0_plus {
                return Err(Error::Singularity("moving headway <= standstill gap".into()));
            }
        }
    }

    // Front bumper of the next moving car at t = 0, and where it will stop.
    let mut front = 0.0_f64;
    let mut stop_at = 0.0_f64;
    let mut steps = Vec::new();
    loop {
        let t_stop = (stop_at - front) / v;
        if t_stop > t_max {
            break;
        }
        let tail = stop_at - geom.d;
        steps.push((t_stop, -tail));
        let gap = match gap_law {
            Some(law) => law.sample(rng),
            None => d_plus,
        };
        front -= geom.d + gap;
        stop_at = tail - geom.d0_plus;
    }
    Ok(JamTrace { steps, t_max })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "regime", rename_all = "snake_case")]
pub enum Regime {
    Free,
    /// Classification only; no stochastic model is attached.
    Delay,
    /// Cars accumulate at `rate` per unit time.
    GrowingJam { rate: f64 },
}

pub const DEFAULT_FREE_THRESHOLD: f64 = 0.5;

/// Classifies a bottleneck with incoming current `j_in` and outgoing
/// capacity `j_out_max`. Free flow means `j_in < free_threshold * j_out_max`.
pub fn classify_bottleneck(j_in: f64, j_out_max: f64, free_threshold: f64) -> Result<Regime> {
    if !(j_in >= 0.0 && j_out_max >= 0.0) {
        return Err(Error::param("current", "currents must be >= 0"));
    }
    if !(0.0..=1.0).contains(&free_threshold) {
        return Err(Error::param("free_threshold", "must lie in [0, 1]"));
    }
    if j_in > j_out_max {
        Ok(Regime::GrowingJam {
            rate: j_in - j_out_max,
        })
    } else if j_in == 0.0 || j_in < free_threshold * j_out_max {
        Ok(Regime::Free)
    } else {
        Ok(Regime::Delay)
    }
}

/// Travel-time gain `L/v - L/v1` over a segment of length `l` when the
/// speed changes from `v` to `v1`.
pub fn widening_time_gain(l: f64, v: f64, v1: f64) -> Result<f64> {
    if !(v > 0.0 && v1 > 0.0) {
        return Err(Error::param("v/v1", "speeds must be > 0"));
    }
    Ok(l / v - l / v1)
}
