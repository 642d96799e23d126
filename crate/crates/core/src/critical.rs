//! Critical car density of large closed networks: the limiting load
//! measure, the saddle-point approximation of the partition function,
//! limiting marginals and the location of jams.

use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numeric::{adaptive_simpson, bisect};
use crate::qnet::{closed_means, log_partition};

const QUAD_TOL: f64 = 1e-12;
/// `z0_N` closer than this to 1 triggers the near-critical warning.
pub const NEAR_CRITICAL: f64 = 1e-6;

/// Polynomial density `sum_k coeffs[k] r^k` on `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensityPiece {
    pub lo: f64,
    pub hi: f64,
    pub coeffs: Vec<f64>,
}

impl DensityPiece {
    pub fn eval(&self, r: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * r + c)
    }

    /// Integral of the density over `[lo, min(x, hi)]`.
    fn mass_to(&self, x: f64) -> f64 {
        let x = x.clamp(self.lo, self.hi);
        let anti = |r: f64| {
            self.coeffs
                .iter()
                .enumerate()
                .map(|(k, c)| c * r.powi(k as i32 + 1) / (k as f64 + 1.0))
                .sum::<f64>()
        };
        anti(x) - anti(self.lo)
    }
}

/// Probability measure on `[0, 1]` made of atoms and polynomial density
/// pieces.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LimitMeasure {
    /// `(value, mass)`.
    pub atoms: Vec<(f64, f64)>,
    pub density: Vec<DensityPiece>,
}

impl LimitMeasure {
    pub fn new(atoms: Vec<(f64, f64)>, density: Vec<DensityPiece>) -> Result<Self> {
        let m = LimitMeasure { atoms, density };
        m.validate()?;
        Ok(m)
    }

    pub fn dirac(r: f64) -> Result<Self> {
        Self::new(vec![(r, 1.0)], vec![])
    }

    pub fn uniform() -> Self {
        LimitMeasure {
            atoms: vec![],
            density: vec![DensityPiece {
                lo: 0.0,
                hi: 1.0,
                coeffs: vec![1.0],
            }],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for &(r, m) in &self.atoms {
            if !(0.0..=1.0).contains(&r) || !(m.is_finite() && m >= 0.0) {
                return Err(Error::param("atoms", "need value in [0,1] and mass >= 0"));
            }
        }
        for p in &self.density {
            if !(0.0 <= p.lo && p.lo < p.hi && p.hi <= 1.0) || p.coeffs.is_empty() {
                return Err(Error::param("density", "pieces need 0 <= lo < hi <= 1"));
            }
            // nonnegativity on a grid
            if (0..=200).any(|k| p.eval(p.lo + (p.hi - p.lo) * k as f64 / 200.0) < -1e-12) {
                return Err(Error::param("density", "density must be nonnegative"));
            }
        }
        let total = self.total_mass();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::param("mass", format!("total mass {total} is not 1")));
        }
        Ok(())
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.1).sum::<f64>()
            + self.density.iter().map(|p| p.mass_to(p.hi)).sum::<f64>()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        self.atoms.iter().filter(|a| a.0 <= x).map(|a| a.1).sum::<f64>()
            + self.density.iter().map(|p| p.mass_to(x)).sum::<f64>()
    }

    pub fn is_dirac_zero(&self) -> bool {
        self.density.is_empty() && self.atoms.iter().all(|&(r, m)| r == 0.0 || m == 0.0)
    }

    /// Right end of the support.
    pub fn support_max(&self) -> f64 {
        let a = self
            .atoms
            .iter()
            .filter(|a| a.1 > 0.0)
            .map(|a| a.0)
            .fold(0.0, f64::max);
        self.density.iter().map(|p| p.hi).fold(a, f64::max)
    }
}

/// TOML form:
///
/// ```toml
/// atoms = [[0.5, 0.25]]
/// [[density]]
/// lo = 0.0
/// hi = 1.0
/// coeffs = [0.75]
/// ```
impl FromStr for LimitMeasure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let usage = |m: String| Error::Usage(m);
        let t: toml::Table = s
            .parse()
            .map_err(|e: toml::de::Error| usage(format!("measure file: {e}")))?;
        let num = |v: &toml::Value, f: &str| {
            v.as_float()
                .or_else(|| v.as_integer().map(|i| i as f64))
                .ok_or_else(|| usage(format!("`{f}`: expected a number")))
        };
        let mut atoms = Vec::new();
        let mut density = Vec::new();
        for (key, v) in &t {
            match key.as_str() {
                "atoms" => {
                    for (k, a) in v.as_array().into_iter().flatten().enumerate() {
                        let f = format!("atoms[{k}]");
                        let a = a
                            .as_array()
                            .filter(|a| a.len() == 2)
                            .ok_or_else(|| usage(format!("`{f}` must be [value, mass]")))?;
                        atoms.push((num(&a[0], &f)?, num(&a[1], &f)?));
                    }
                }
                "density" => {
                    for (k, p) in v.as_array().into_iter().flatten().enumerate() {
                        let f = format!("density[{k}]");
                        let p = p
                            .as_table()
                            .ok_or_else(|| usage(format!("`{f}` must be a table")))?;
                        let get = |name: &str| {
                            p.get(name)
                                .ok_or_else(|| usage(format!("`{f}.{name}` missing")))
                        };
                        let coeffs = get("coeffs")?
                            .as_array()
                            .ok_or_else(|| usage(format!("`{f}.coeffs` must be an array")))?
                            .iter()
                            .map(|c| num(c, &f))
                            .collect::<Result<Vec<_>>>()?;
                        density.push(DensityPiece {
                            lo: num(get("lo")?, &f)?,
                            hi: num(get("hi")?, &f)?,
                            coeffs,
                        });
                    }
                }
                other => return Err(usage(format!("unknown measure key `{other}`"))),
            }
        }
        LimitMeasure::new(atoms, density)
    }
}

/// Empirical measure with mass `1/N` per load.
pub fn sample_measure(loads: &[f64]) -> Result<LimitMeasure> {
    if loads.is_empty() {
        return Err(Error::param("loads", "need at least one load"));
    }
    if loads.iter().any(|r| !(0.0..=1.0).contains(r)) {
        return Err(Error::param("loads", "loads must lie in [0,1]"));
    }
    let mut sorted = loads.to_vec();
    sorted.sort_by(f64::total_cmp);
    let w = 1.0 / loads.len() as f64;
    let mut atoms: Vec<(f64, f64)> = Vec::new();
    for r in sorted {
        match atoms.last_mut() {
            Some(last) if last.0 == r => last.1 += w,
            _ => atoms.push((r, w)),
        }
    }
    Ok(LimitMeasure {
        atoms,
        density: vec![],
    })
}

/// `h(z) = int r / (1 - z r) dI(r)` for `0 <= z < 1`.
pub fn h_of_z(measure: &LimitMeasure, z: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&z) {
        return Err(Error::Domain(format!("h(z) needs 0 <= z < 1, got {z}")));
    }
    let atoms: f64 = measure
        .atoms
        .iter()
        .map(|&(r, m)| m * r / (1.0 - z * r))
        .sum();
    let dens: f64 = measure
        .density
        .iter()
        .map(|p| adaptive_simpson(&|r: f64| p.eval(r) * r / (1.0 - z * r), p.lo, p.hi, QUAD_TOL))
        .sum();
    Ok(atoms + dens)
}

/// `lambda_cr = lim_{z -> 1-} h(z)`, possibly infinite.
pub fn lambda_critical(measure: &LimitMeasure) -> f64 {
    let mut total = 0.0;
    for &(r, m) in &measure.atoms {
        if m == 0.0 {
            continue;
        }
        if r >= 1.0 {
            return f64::INFINITY;
        }
        total += m * r / (1.0 - r);
    }
    for p in &measure.density {
        if p.hi < 1.0 {
            total += adaptive_simpson(&|r: f64| p.eval(r) * r / (1.0 - r), p.lo, p.hi, QUAD_TOL);
            continue;
        }
        // p(r) = (r - 1) s(r) + p(1); the integral diverges unless p(1) = 0
        let d = p.coeffs.len() - 1;
        let mut s = vec![0.0; d];
        let mut carry = 0.0;
        for k in (1..=d).rev() {
            carry += p.coeffs[k];
            s[k - 1] = carry;
        }
        let p1 = p.coeffs[0] + carry;
        if p1.abs() > 1e-12 {
            return f64::INFINITY;
        }
        // r p(r) / (1 - r) = -r s(r), integrated exactly
        let anti = |x: f64| {
            -s.iter()
                .enumerate()
                .map(|(k, c)| c * x.powi(k as i32 + 2) / (k as f64 + 2.0))
                .sum::<f64>()
        };
        total += anti(1.0) - anti(p.lo);
    }
    total
}

/// Limiting saddle point: the root of `z h(z) = lambda` in `(0, 1)` below
/// criticality, and 1 at or above it.
pub fn z0_limit(measure: &LimitMeasure, lambda: f64) -> Result<f64> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::param("lambda", "must be finite and > 0"));
    }
    if lambda >= lambda_critical(measure) {
        return Ok(1.0);
    }
    let g = |z: f64| z * h_of_z(measure, z).expect("z < 1") - lambda;
    let mut hi = 1.0 - 1e-3;
    while g(hi) < 0.0 {
        hi = 1.0 - (1.0 - hi) * 1e-2;
        if 1.0 - hi < 1e-15 {
            return Ok(hi);
        }
    }
    Ok(bisect(g, 0.0, hi, 1e-16).expect("bracketed"))
}

/// Normalized loads `r_i = rho_i tau_i / C_N` of a finite closed network
/// with `m` cars.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoadProfile {
    pub loads: Vec<f64>,
    pub m: u32,
}

impl LoadProfile {
    pub fn new(loads: Vec<f64>, m: u32) -> Result<Self> {
        if loads.is_empty() {
            return Err(Error::param("loads", "need at least one node"));
        }
        if loads.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::param("loads", "loads must lie in [0,1]"));
        }
        if loads.iter().cloned().fold(0.0, f64::max) != 1.0 {
            return Err(Error::param("loads", "maximum load must be exactly 1"));
        }
        Ok(LoadProfile { loads, m })
    }

    /// Divides raw loads `rho_i tau_i` by their maximum `C_N`.
    pub fn from_raw(raw: &[f64], m: u32) -> Result<Self> {
        let c = raw.iter().cloned().fold(0.0, f64::max);
        if !(c.is_finite() && c > 0.0) || raw.iter().any(|x| *x < 0.0) {
            return Err(Error::param("loads", "raw loads must be >= 0 with a positive maximum"));
        }
        Self::new(raw.iter().map(|x| x / c).collect(), m)
    }

    /// Profile whose sample measure replicates the atoms of `measure`, with
    /// `m = floor(lambda N)`. Masses must be multiples of `1/n`.
    pub fn replicate(measure: &LimitMeasure, n: usize, lambda: f64) -> Result<Self> {
        if !measure.density.is_empty() {
            return Err(Error::Unsupported("only atomic measures can be replicated".into()));
        }
        let mut loads = Vec::with_capacity(n);
        for &(r, mass) in &measure.atoms {
            let k = mass * n as f64;
            if (k - k.round()).abs() > 1e-9 {
                return Err(Error::param("n", "atom masses must be multiples of 1/n"));
            }
            loads.extend(std::iter::repeat_n(r, k.round() as usize));
        }
        Self::new(loads, (lambda * n as f64).floor() as u32)
    }

    pub fn n(&self) -> usize {
        self.loads.len()
    }

    /// `M / N = lambda (1 + eps_N)`.
    pub fn density(&self) -> f64 {
        self.m as f64 / self.n() as f64
    }

    pub fn epsilon(&self, lambda: f64) -> f64 {
        self.density() / lambda - 1.0
    }

    /// `S_N(z) = -(M/N) ln z - (1/N) sum ln(1 - z r_i)`.
    pub fn s(&self, z: f64) -> f64 {
        -self.density() * z.ln()
            - self.loads.iter().map(|r| (-z * r).ln_1p()).sum::<f64>() / self.n() as f64
    }

    pub fn s_prime(&self, z: f64) -> f64 {
        -self.density() / z
            + self.loads.iter().map(|r| r / (1.0 - z * r)).sum::<f64>() / self.n() as f64
    }

    pub fn s_second(&self, z: f64) -> f64 {
        self.density() / (z * z)
            + self
                .loads
                .iter()
                .map(|r| (r / (1.0 - z * r)).powi(2))
                .sum::<f64>()
                / self.n() as f64
    }

    /// Exact `ln Z_{N,M}` by convolution.
    pub fn log_z_exact(&self) -> f64 {
        log_partition(&self.loads, self.m).expect("validated loads")[self.m as usize]
    }

    /// Exact mean queue lengths.
    pub fn exact_means(&self) -> Vec<f64> {
        closed_means(&self.loads, self.m).expect("validated loads")
    }

    pub fn max_load_nodes(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.loads[i] == 1.0).collect()
    }
}

/// Root of `S_N'(z) = 0` in `(0, 1)`.
pub fn saddle_point_finite(profile: &LoadProfile) -> Result<f64> {
    if profile.m == 0 {
        return Err(Error::Singularity("M = 0: the saddle point degenerates to z = 0".into()));
    }
    // z S_N'(z) is increasing, negative at 0+ and +inf at 1- (a load equals 1)
    let n = profile.n() as f64;
    let g = |z: f64| {
        z * profile.loads.iter().map(|r| r / (1.0 - z * r)).sum::<f64>() / n - profile.density()
    };
    let hi = 1.0 - 1e-12;
    bisect(g, 0.0, hi, 1e-15)
        .ok_or_else(|| Error::Singularity("no sign change of S_N' on (0, 1)".into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Regime {
    Subcritical,
    Supercritical,
}

pub fn regime(lambda: f64, lambda_cr: f64) -> Regime {
    if lambda < lambda_cr {
        Regime::Subcritical
    } else {
        Regime::Supercritical
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SaddleReport {
    pub z0: f64,
    pub lambda: f64,
    pub lambda_cr: f64,
    pub regime: Regime,
    pub s_z0: f64,
    pub s_second_z0: f64,
    /// `N S_N(z0) - ln z0 - ln sqrt(2 pi N S_N''(z0))`.
    pub log_z_approx: f64,
    /// `S_N(z0)`, the approximation of `(1/N) ln Z_N`.
    pub free_energy: f64,
    pub warnings: Vec<String>,
}

/// Saddle-point approximation of `ln Z_{N,M}`. The regime is judged
/// against `limit` when given, else against the profile's own sample
/// measure (whose critical density is infinite whenever a load equals 1).
pub fn partition_asymptotics(
    profile: &LoadProfile,
    limit: Option<&LimitMeasure>,
) -> Result<SaddleReport> {
    let z0 = saddle_point_finite(profile)?;
    let lambda = profile.density();
    let lambda_cr = match limit {
        Some(m) => lambda_critical(m),
        None => lambda_critical(&sample_measure(&profile.loads)?),
    };
    let n = profile.n() as f64;
    let s = profile.s(z0);
    let s2 = profile.s_second(z0);
    let mut warnings = Vec::new();
    if z0 > 1.0 - NEAR_CRITICAL {
        warnings.push(format!(
            "near-critical: z0 = {z0} is within {NEAR_CRITICAL} of 1; the Gaussian approximation degrades"
        ));
    }
    let reg = regime(lambda, lambda_cr);
    if reg == Regime::Supercritical {
        warnings.push("density is at or above the critical density".into());
    }
    Ok(SaddleReport {
        z0,
        lambda,
        lambda_cr,
        regime: reg,
        s_z0: s,
        s_second_z0: s2,
        log_z_approx: n * s - z0.ln() - 0.5 * (2.0 * std::f64::consts::PI * n * s2).ln(),
        free_energy: s,
        warnings,
    })
}

/// Geometric law `P(n) = (1 - q) q^n` of one queue in the limit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GeometricLaw {
    pub r: f64,
    pub q: f64,
    pub mean: f64,
}

impl GeometricLaw {
    pub fn pmf(&self, n: u32) -> f64 {
        (1.0 - self.q) * self.q.powi(n as i32)
    }
}

/// Limiting marginals `geometric(z0 r_i)` for the given loads.
pub fn limiting_marginals(
    measure: &LimitMeasure,
    lambda: f64,
    loads: &[f64],
) -> Result<Vec<GeometricLaw>> {
    if regime(lambda, lambda_critical(measure)) == Regime::Supercritical {
        return Err(Error::Domain(
            "supercritical density: queues at maximal load diverge, use classify_jams".into(),
        ));
    }
    let z0 = z0_limit(measure, lambda)?;
    loads
        .iter()
        .map(|&r| {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::param("loads", "loads must lie in [0,1]"));
            }
            let q = z0 * r;
            Ok(GeometricLaw {
                r,
                q,
                mean: q / (1.0 - q),
            })
        })
        .collect()
}

/// Exact means at the maximal-load nodes for one `M` of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeanTrend {
    pub m: u32,
    pub means: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct JamReport {
    pub regime: Regime,
    pub lambda_cr: f64,
    /// Heuristic witness for the uniform bound: the largest limiting mean
    /// over the support of the measure.
    pub bound: Option<f64>,
    /// Profile nodes with maximal load, listed when jams are expected.
    pub jam_nodes: Vec<usize>,
    /// Exact finite-N means at the maximal-load nodes along the sweep.
    pub evidence: Vec<MeanTrend>,
    /// Whether the evidence is nondecreasing in `M` at every such node.
    pub monotone: bool,
}

pub fn classify_jams(
    measure: &LimitMeasure,
    lambda: f64,
    profile: Option<&LoadProfile>,
    m_sweep: &[u32],
) -> Result<JamReport> {
    let lambda_cr = lambda_critical(measure);
    let reg = regime(lambda, lambda_cr);
    let bound = match reg {
        Regime::Subcritical => {
            let z0 = z0_limit(measure, lambda)?;
            let q = z0 * measure.support_max();
            Some(q / (1.0 - q))
        }
        Regime::Supercritical => None,
    };
    let mut evidence = Vec::new();
    let mut jam_nodes = Vec::new();
    if let Some(p) = profile {
        let nodes = p.max_load_nodes();
        if reg == Regime::Supercritical {
            jam_nodes = nodes.clone();
        }
        for &m in m_sweep {
            let means = closed_means(&p.loads, m)?;
            evidence.push(MeanTrend {
                m,
                means: nodes.iter().map(|&i| means[i]).collect(),
            });
        }
    }
    let monotone = evidence
        .windows(2)
        .all(|w| w[0].m > w[1].m || w[0].means.iter().zip(&w[1].means).all(|(a, b)| b >= a));
    Ok(JamReport {
        regime: reg,
        lambda_cr,
        bound,
        jam_nodes,
        evidence,
        monotone,
    })
}

/// `lambda_cr = 1/alpha + lim_{w -> 1-} int q / (1 - w q) dI(q)` for networks
/// with an infinite-server node. `alpha = inf` drops the first term.
pub fn lambda_critical_infinite_server(measure: &LimitMeasure, alpha: f64) -> Result<f64> {
    if alpha.is_nan() || alpha <= 0.0 {
        return Err(Error::param("alpha", "must be > 0"));
    }
    Ok(1.0 / alpha + lambda_critical(measure))
}

/// Loads of a network with one infinite-server node: `q_i = r_i / p_N`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InfiniteServerProfile {
    pub q: Vec<f64>,
    pub p_n: f64,
}

impl InfiniteServerProfile {
    pub fn new(r: &[f64], p_n: f64) -> Result<Self> {
        if !(p_n > 0.0 && p_n.is_finite()) {
            return Err(Error::param("p_N", "must be finite and > 0"));
        }
        Ok(InfiniteServerProfile {
            q: r.iter().map(|r| r / p_n).collect(),
            p_n,
        })
    }

    pub fn w_of(&self, z: f64) -> f64 {
        z * self.p_n
    }

    /// `ln Xi(w) = w / p_N - sum ln(1 - w q_i)`, for `w q_i < 1`.
    pub fn log_grand_partition(&self, w: f64) -> f64 {
        w / self.p_n - self.q.iter().map(|q| (-w * q).ln_1p()).sum::<f64>()
    }
}

/// `P(n_1 .. n_K fixed) = prod_{i<K} r_i^{n_i} Z_rest(M - sum n) / Z(M)`,
/// with `Z_rest` the partition function of nodes `K..N`.
pub fn finite_joint_law(loads: &[f64], m: u32, first: &[u32]) -> Result<f64> {
    let k = first.len();
    if k > loads.len() {
        return Err(Error::param("first", "more fixed nodes than nodes"));
    }
    let used: u32 = first.iter().sum();
    if used > m {
        return Ok(0.0);
    }
    let z = log_partition(loads, m)?[m as usize];
    let rest = log_partition(&loads[k..], m - used)?[(m - used) as usize];
    let head: f64 = first
        .iter()
        .zip(loads)
        .map(|(&n, r)| if n == 0 { 0.0 } else { n as f64 * r.ln() })
        .sum();
    Ok((head + rest - z).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mixture(n: usize) -> LoadProfile {
        // one node at 1, the rest split between 0.3 and 0.6
        let mut loads = vec![1.0];
        for i in 1..n {
            loads.push(if i % 2 == 0 { 0.3 } else { 0.6 });
        }
        LoadProfile::new(loads, (0.3 * n as f64) as u32).unwrap()
    }

    #[test]
    fn h_examples() {
        let d = LimitMeasure::dirac(0.4).unwrap();
        assert!((h_of_z(&d, 0.5).unwrap() - 0.4 / 0.8).abs() < 1e-15);
        let zero = LimitMeasure::dirac(0.0).unwrap();
        assert_eq!(h_of_z(&zero, 0.9).unwrap(), 0.0);
        let u = LimitMeasure::uniform();
        let exact = -2.0 + 4.0 * 2f64.ln();
        assert!((h_of_z(&u, 0.5).unwrap() - exact).abs() < 1e-11);
        assert!(matches!(h_of_z(&u, 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn lambda_cr_examples() {
        assert!((lambda_critical(&LimitMeasure::dirac(0.5).unwrap()) - 1.0).abs() < 1e-15);
        let with_one = LimitMeasure::new(vec![(1.0, 0.1), (0.5, 0.9)], vec![]).unwrap();
        assert_eq!(lambda_critical(&with_one), f64::INFINITY);
        assert_eq!(lambda_critical(&LimitMeasure::uniform()), f64::INFINITY);
        // density 2(1 - r) vanishes at 1: int 2 r dr = 1
        let tri = LimitMeasure::new(
            vec![],
            vec![DensityPiece {
                lo: 0.0,
                hi: 1.0,
                coeffs: vec![2.0, -2.0],
            }],
        )
        .unwrap();
        assert!((lambda_critical(&tri) - 1.0).abs() < 1e-14);
        assert!(h_of_z(&tri, 0.999999).unwrap() < 1.0);
    }

    #[test]
    fn z0_examples() {
        let d = LimitMeasure::dirac(0.5).unwrap();
        assert!((z0_limit(&d, 0.5).unwrap() - 2.0 / 3.0).abs() < 1e-14);
        assert_eq!(z0_limit(&d, 1.0).unwrap(), 1.0);
        assert_eq!(z0_limit(&d, 1.5).unwrap(), 1.0);
        let mut prev = 0.0;
        for k in 1..50 {
            let z = z0_limit(&d, k as f64 * 0.02).unwrap();
            assert!(z > prev);
            prev = z;
        }
        assert!(z0_limit(&d, 1e-9).unwrap() < 1e-8);
    }

    #[test]
    fn saddle_constant_loads() {
        let p = LoadProfile::new(vec![1.0; 10], 5).unwrap();
        let z = saddle_point_finite(&p).unwrap();
        assert!((z - 0.5 / 1.5).abs() < 1e-13);
        let p = LoadProfile::new(vec![1.0, 0.5], 2).unwrap();
        let z = saddle_point_finite(&p).unwrap();
        assert!(p.s_prime(z - 1e-12) < 0.0 && p.s_prime(z + 1e-12) > 0.0);
        assert!(saddle_point_finite(&LoadProfile::new(vec![1.0], 0).unwrap()).is_err());
    }

    #[test]
    fn asymptotics_close_to_exact() {
        let small = mixture(200);
        let big = mixture(400);
        let err = |p: &LoadProfile| {
            let exact = p.log_z_exact();
            let rep = partition_asymptotics(p, None).unwrap();
            (rep.log_z_approx - exact).abs() / exact.abs()
        };
        let (e1, e2) = (err(&small), err(&big));
        assert!(e1 < 0.01, "{e1}");
        assert!(e2 < e1);
    }

    #[test]
    fn limiting_marginal_example() {
        let d = LimitMeasure::dirac(0.5).unwrap();
        let laws = limiting_marginals(&d, 0.5, &[0.5, 0.0]).unwrap();
        assert!((laws[0].mean - 0.5).abs() < 1e-14);
        assert_eq!(laws[1].mean, 0.0);
        assert_eq!(laws[1].pmf(0), 1.0);
        assert!(limiting_marginals(&d, 1.5, &[0.5]).is_err());
    }

    #[test]
    fn jam_classification() {
        let d = LimitMeasure::dirac(0.5).unwrap();
        let rep = classify_jams(&d, 0.5, None, &[]).unwrap();
        assert_eq!(rep.regime, Regime::Subcritical);
        assert!((rep.bound.unwrap() - 0.5).abs() < 1e-14);
        let mut loads = vec![0.5; 49];
        loads.push(1.0);
        let p = LoadProfile::new(loads, 75).unwrap();
        let rep = classify_jams(&d, 1.5, Some(&p), &[25, 50, 100, 200, 400]).unwrap();
        assert_eq!(rep.jam_nodes, vec![49]);
        assert!(rep.monotone);
        assert!(rep.evidence.last().unwrap().means[0] > 10.0);
    }

    #[test]
    fn infinite_server_lambda_cr() {
        let d = LimitMeasure::dirac(0.5).unwrap();
        assert!((lambda_critical_infinite_server(&d, 2.0).unwrap() - 1.5).abs() < 1e-15);
        assert_eq!(lambda_critical_infinite_server(&d, f64::INFINITY).unwrap(), 1.0);
        let one = LimitMeasure::dirac(1.0).unwrap();
        assert_eq!(lambda_critical_infinite_server(&one, 1.0).unwrap(), f64::INFINITY);
        let prof = InfiniteServerProfile::new(&[0.2, 0.4], 0.5).unwrap();
        assert_eq!(prof.q, vec![0.4, 0.8]);
        assert!((prof.w_of(0.5) - 0.25).abs() < 1e-15);
        assert!(prof.log_grand_partition(0.0).abs() < 1e-15);
    }

    #[test]
    fn sample_measure_examples() {
        assert_eq!(sample_measure(&[1.0, 1.0, 1.0]).unwrap().atoms, vec![(1.0, 1.0)]);
        assert_eq!(
            sample_measure(&[0.4, 0.2]).unwrap().atoms,
            vec![(0.2, 0.5), (0.4, 0.5)]
        );
        assert!(sample_measure(&[1.5]).is_err());
    }

    #[test]
    fn measure_file_parses() {
        let m: LimitMeasure = "atoms = [[0.5, 0.25]]\n[[density]]\nlo = 0.0\nhi = 1.0\ncoeffs = [0.75]\n"
            .parse()
            .unwrap();
        assert!((m.cdf(0.5) - (0.25 + 0.375)).abs() < 1e-15);
        assert!("atoms = [[0.5, 0.5]]".parse::<LimitMeasure>().is_err());
    }
}
