//! Random point configurations on the line: Poisson, stationary renewal,
//! alternating renewal and marked fields.
//!
//! Positions are stored in ascending order. Car labels that count from the
//! front of the flow are obtained by reversing the vector.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution as _, Exp};
use serde::Serialize;

use crate::dist::Distribution;
use crate::error::{Error, Result};

/// Closed interval `[lo, hi]` on the line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Window {
    pub lo: f64,
    pub hi: f64,
}

impl Window {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::param("window", "need finite lo < hi"));
        }
        Ok(Self { lo, hi })
    }

    pub fn len(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointConfiguration {
    positions: Vec<f64>,
    marks: Option<Vec<f64>>,
    window: Window,
}

impl PointConfiguration {
    pub fn new(positions: Vec<f64>, marks: Option<Vec<f64>>, window: Window) -> Result<Self> {
        if positions.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::param("positions", "must be strictly increasing"));
        }
        if positions.iter().any(|x| !window.contains(*x)) {
            return Err(Error::param("positions", "must lie inside the window"));
        }
        if let Some(m) = &marks {
            if m.len() != positions.len() {
                return Err(Error::param("marks", "must match positions in length"));
            }
        }
        Ok(Self {
            positions,
            marks,
            window,
        })
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn marks(&self) -> Option<&[f64]> {
        self.marks.as_deref()
    }

    pub fn window(&self) -> Window {
        self.window
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Gaps between consecutive points.
    pub fn gaps(&self) -> Vec<f64> {
        self.positions.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Number of points in `[a, b)`.
    pub fn count_in(&self, a: f64, b: f64) -> usize {
        let lo = self.positions.partition_point(|x| *x < a);
        let hi = self.positions.partition_point(|x| *x < b);
        hi - lo
    }

    /// CSV with columns `index,position[,mark]`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        match &self.marks {
            Some(m) => {
                writeln!(out, "index,position,mark")?;
                for (i, (x, s)) in self.positions.iter().zip(m).enumerate() {
                    writeln!(out, "{i},{x},{s}")?;
                }
            }
            None => {
                writeln!(out, "index,position")?;
                for (i, x) in self.positions.iter().enumerate() {
                    writeln!(out, "{i},{x}")?;
                }
            }
        }
        Ok(())
    }
}

fn check_gap_law(gap: &Distribution, name: &str) -> Result<()> {
    gap.validate()?;
    let m = gap.mean();
    if !(m.is_finite() && m > 0.0) {
        return Err(Error::param(name, "gap law needs a finite positive mean"));
    }
    if !gap.is_positive_supported() {
        return Err(Error::param(name, "gap law must be supported on (0, inf)"));
    }
    Ok(())
}

// A zero gap would break strict monotonicity; for admissible laws it has
// probability zero, so redraw.
fn positive_gap<R: Rng + ?Sized>(gap: &Distribution, rng: &mut R) -> f64 {
    loop {
        let g = gap.sample(rng);
        if g > 0.0 {
            return g;
        }
    }
}

/// Homogeneous Poisson field of intensity `rho` on `window`.
pub fn sample_poisson<R: Rng + ?Sized>(
    rho: f64,
    window: Window,
    rng: &mut R,
) -> Result<PointConfiguration> {
    if !(rho.is_finite() && rho >= 0.0) {
        return Err(Error::param("rho", "density must be finite and >= 0"));
    }
    let mut positions = Vec::new();
    if rho > 0.0 {
        let exp = Exp::new(rho).expect("positive rate");
        let mut x = window.lo + exp.sample(rng);
        while x <= window.hi {
            positions.push(x);
            x += exp.sample(rng);
        }
    }
    PointConfiguration::new(positions, None, window)
}

/// Stationary renewal field: the first point sits at a delay drawn from the
/// density `rho (1 - G(s))`, `rho = 1 / E gap`, later gaps are i.i.d. `G`.
pub fn sample_stationary_renewal<R: Rng + ?Sized>(
    gap: &Distribution,
    window: Window,
    rng: &mut R,
) -> Result<PointConfiguration> {
    check_gap_law(gap, "gap")?;
    let delay = gap.residual_life()?;
    let mut positions = Vec::new();
    let mut x = window.lo + delay.sample(rng);
    while x <= window.hi {
        if positions.last().is_none_or(|p| x > *p) {
            positions.push(x);
        }
        x += positive_gap(gap, rng);
    }
    PointConfiguration::new(positions, None, window)
}

/// Alternating renewal field started at the left edge with a `gap_a` gap:
/// `x_1 = a_1, x_2 = a_1 + b_1, x_3 = a_1 + b_1 + a_2, ...`.
pub fn sample_alternating<R: Rng + ?Sized>(
    gap_a: &Distribution,
    gap_b: &Distribution,
    window: Window,
    rng: &mut R,
) -> Result<PointConfiguration> {
    check_gap_law(gap_a, "gap_a")?;
    check_gap_law(gap_b, "gap_b")?;
    let mut positions = Vec::new();
    let mut x = window.lo;
    let mut use_a = true;
    loop {
        let law = if use_a { gap_a } else { gap_b };
        x += positive_gap(law, rng);
        use_a = !use_a;
        if x > window.hi {
            break;
        }
        positions.push(x);
    }
    PointConfiguration::new(positions, None, window)
}

/// Attaches i.i.d. marks, independent of the positions.
pub fn attach_marks<R: Rng + ?Sized>(
    config: &PointConfiguration,
    mark: &Distribution,
    rng: &mut R,
) -> Result<PointConfiguration> {
    if config.marks.is_some() {
        return Err(Error::Usage("configuration is already marked".into()));
    }
    mark.validate()?;
    let marks = (0..config.len()).map(|_| mark.sample(rng)).collect();
    Ok(PointConfiguration {
        positions: config.positions.clone(),
        marks: Some(marks),
        window: config.window,
    })
}

/// Distance from `t` to the next renewal point of an ordinary renewal
/// process started at 0, one sample per replica. For the stationary limit
/// callers should take `t >= 20 * E gap`; this is not enforced.
pub fn forward_recurrence_samples<R: Rng + ?Sized>(
    gap: &Distribution,
    t: f64,
    replicas: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    check_gap_law(gap, "gap")?;
    if !(t.is_finite() && t >= 0.0) {
        return Err(Error::param("t", "must be finite and >= 0"));
    }
    Ok((0..replicas)
        .map(|_| {
            let mut x = 0.0;
            while x <= t {
                x += positive_gap(gap, rng);
            }
            x - t
        })
        .collect())
}
