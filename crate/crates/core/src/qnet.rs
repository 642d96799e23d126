//! Closed and open exponential queueing networks: traffic equations,
//! product-form stationary laws, partition functions by convolution,
//! CTMC simulation and plug-in parameter estimation.
//!
//! Nodes are indexed from 0 in code. Files and CSV output number nodes
//! from 1 and use 0 for the outside world.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution as _, Exp1};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::numeric::log_add;

/// Row sums within this distance of one count as stochastic.
const ROW_TOL: f64 = 1e-12;
/// Largest state space that `stationary_closed` enumerates explicitly.
pub const ENUMERATION_LIMIT: usize = 200_000;
/// Largest truncated state space handed to the dense generator solve.
pub const TRUNCATED_LIMIT: usize = 5_000;

/// Service intensity `mu(n)` of a node holding `n` cars.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum ServiceRate {
    Constant(f64),
    /// `mu(1), mu(2), ...`; the last entry is used for all larger `n`.
    Table(Vec<f64>),
    /// Infinite-server node, `mu(n) = n * nu`.
    InfiniteServer(f64),
}

impl ServiceRate {
    pub fn rate(&self, n: u32) -> f64 {
        if n == 0 {
            return 0.0;
        }
        match self {
            ServiceRate::Constant(mu) => *mu,
            ServiceRate::Table(t) => t[(n as usize).min(t.len()) - 1],
            ServiceRate::InfiniteServer(nu) => n as f64 * nu,
        }
    }

    pub fn constant(&self) -> Option<f64> {
        match self {
            ServiceRate::Constant(mu) => Some(*mu),
            ServiceRate::Table(t) if t.len() == 1 => Some(t[0]),
            _ => None,
        }
    }

    fn validate(&self, node: usize) -> Result<()> {
        let field = format!("mu[{}]", node + 1);
        let ok = |x: f64| x.is_finite() && x > 0.0;
        match self {
            ServiceRate::Constant(mu) | ServiceRate::InfiniteServer(mu) => {
                if !ok(*mu) {
                    return Err(Error::param(field, "service rate must be finite and > 0"));
                }
            }
            ServiceRate::Table(t) => {
                if t.is_empty() || !t.iter().all(|&x| ok(x)) {
                    return Err(Error::param(field, "table must be non-empty with entries > 0"));
                }
            }
        }
        Ok(())
    }

    /// `ln(mu(1) ... mu(k))` for `k = 0..=m`.
    fn log_products(&self, m: u32) -> Vec<f64> {
        let mut out = Vec::with_capacity(m as usize + 1);
        let mut acc = 0.0;
        out.push(0.0);
        for k in 1..=m {
            acc += self.rate(k).ln();
            out.push(acc);
        }
        out
    }
}

/// How a node splits its total intensity among the cars it holds. The
/// queue-length chain only sees the total, so this is informational.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
pub enum Discipline {
    #[default]
    Fifo,
    ProcessorSharing,
}

impl Discipline {
    /// Shares `mu_{i,k}(n)` for `k = 1..=n`.
    pub fn shares(&self, n: u32, total: f64) -> Vec<f64> {
        let n = n as usize;
        match self {
            Discipline::Fifo => {
                let mut v = vec![0.0; n];
                if n > 0 {
                    v[0] = total;
                }
                v
            }
            Discipline::ProcessorSharing => vec![total / n as f64; n],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum NetworkKind {
    Closed,
    Open,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NetworkSpec {
    /// Routing matrix; `1 - sum_j p[i][j]` is the exit probability.
    pub p: Vec<Vec<f64>>,
    pub mu: Vec<ServiceRate>,
    pub lambda_ext: Vec<f64>,
    pub discipline: Vec<Discipline>,
}

impl NetworkSpec {
    pub fn new(p: Vec<Vec<f64>>, mu: Vec<ServiceRate>, lambda_ext: Vec<f64>) -> Result<Self> {
        let n = p.len();
        let spec = NetworkSpec {
            p,
            mu,
            lambda_ext,
            discipline: vec![Discipline::Fifo; n],
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Closed network with constant service rates.
    pub fn closed(p: Vec<Vec<f64>>, mu: &[f64]) -> Result<Self> {
        let n = p.len();
        Self::new(
            p,
            mu.iter().map(|&m| ServiceRate::Constant(m)).collect(),
            vec![0.0; n],
        )
    }

    /// Open network with constant service rates.
    pub fn open(p: Vec<Vec<f64>>, mu: &[f64], lambda_ext: Vec<f64>) -> Result<Self> {
        Self::new(p, mu.iter().map(|&m| ServiceRate::Constant(m)).collect(), lambda_ext)
    }

    pub fn n(&self) -> usize {
        self.p.len()
    }

    pub fn exit_prob(&self, i: usize) -> f64 {
        (1.0 - self.p[i].iter().sum::<f64>()).max(0.0)
    }

    pub fn kind(&self) -> NetworkKind {
        if self.lambda_ext.iter().all(|&l| l == 0.0) {
            NetworkKind::Closed
        } else {
            NetworkKind::Open
        }
    }

    pub fn constant_rates(&self) -> Option<Vec<f64>> {
        self.mu.iter().map(|m| m.constant()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if n == 0 {
            return Err(Error::param("N", "network needs at least one node"));
        }
        if self.mu.len() != n || self.lambda_ext.len() != n || self.discipline.len() != n {
            return Err(Error::param("N", "mu, lambda and discipline must have N entries"));
        }
        for (i, row) in self.p.iter().enumerate() {
            if row.len() != n {
                return Err(Error::param(format!("P[{}]", i + 1), "row length differs from N"));
            }
            if !row.iter().all(|&x| x.is_finite() && x >= 0.0) {
                return Err(Error::param(format!("P[{}]", i + 1), "entries must be >= 0"));
            }
            if row.iter().sum::<f64>() > 1.0 + ROW_TOL {
                return Err(Error::param(format!("P[{}]", i + 1), "row sum exceeds 1"));
            }
        }
        for (i, m) in self.mu.iter().enumerate() {
            m.validate(i)?;
        }
        for (i, &l) in self.lambda_ext.iter().enumerate() {
            if !(l.is_finite() && l >= 0.0) {
                return Err(Error::param(format!("lambda[{}]", i + 1), "must be finite and >= 0"));
            }
        }
        let stochastic = (0..n).all(|i| (self.p[i].iter().sum::<f64>() - 1.0).abs() <= ROW_TOL);
        match self.kind() {
            NetworkKind::Closed => {
                if !stochastic {
                    return Err(Error::Structural(
                        "no external arrivals but some rows of P sum to less than 1".into(),
                    ));
                }
                if !strongly_connected(n, |i, j| self.p[i][j] > 0.0) {
                    return Err(Error::Structural("routing matrix is reducible".into()));
                }
            }
            NetworkKind::Open => {
                if stochastic {
                    return Err(Error::Structural(
                        "open network needs a node with exit probability > 0".into(),
                    ));
                }
                // node n stands for the outside world
                let edge = |i: usize, j: usize| {
                    if i == n {
                        j < n && self.lambda_ext[j] > 0.0
                    } else if j == n {
                        self.exit_prob(i) > ROW_TOL
                    } else {
                        self.p[i][j] > 0.0
                    }
                };
                if !strongly_connected(n + 1, edge) {
                    return Err(Error::Structural(
                        "some node is not fed by arrivals or cannot reach an exit".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Parses the TOML network format:
    ///
    /// ```toml
    /// nodes = 2
    /// edges = [[1, 2, 1.0]]
    /// lambda = [[1, 0.3]]
    /// [[mu]]
    /// node = 1
    /// rate = 1.0        # or table = [...], or per_car = nu
    /// ```
    pub fn from_toml(table: &toml::Table) -> Result<Self> {
        let usage = |m: &str| Error::Usage(m.to_string());
        for key in table.keys() {
            if !["nodes", "edges", "mu", "lambda", "discipline"].contains(&key.as_str()) {
                return Err(usage(&format!("unknown network key `{key}`")));
            }
        }
        let n = table
            .get("nodes")
            .and_then(|v| v.as_integer())
            .filter(|&n| n > 0)
            .ok_or_else(|| usage("`nodes` must be a positive integer"))? as usize;
        let node = |v: &toml::Value, field: &str| -> Result<usize> {
            v.as_integer()
                .filter(|&k| k >= 1 && k as usize <= n)
                .map(|k| k as usize - 1)
                .ok_or_else(|| usage(&format!("`{field}`: node index must be in 1..={n}")))
        };
        let mut p = vec![vec![0.0; n]; n];
        for (k, e) in array(table, "edges")?.iter().enumerate() {
            let field = format!("edges[{k}]");
            let e = e
                .as_array()
                .filter(|a| a.len() == 3)
                .ok_or_else(|| usage(&format!("`{field}` must be [i, j, p]")))?;
            p[node(&e[0], &field)?][node(&e[1], &field)?] = number(&e[2], &field)?;
        }
        let mut lambda = vec![0.0; n];
        for (k, e) in array(table, "lambda")?.iter().enumerate() {
            let field = format!("lambda[{k}]");
            let e = e
                .as_array()
                .filter(|a| a.len() == 2)
                .ok_or_else(|| usage(&format!("`{field}` must be [node, rate]")))?;
            lambda[node(&e[0], &field)?] = number(&e[1], &field)?;
        }
        let mut mu: Vec<Option<ServiceRate>> = vec![None; n];
        for (k, e) in array(table, "mu")?.iter().enumerate() {
            let field = format!("mu[{k}]");
            let t = e
                .as_table()
                .ok_or_else(|| usage(&format!("`{field}` must be a table")))?;
            let i = node(
                t.get("node").ok_or_else(|| usage(&format!("`{field}.node` missing")))?,
                &field,
            )?;
            let rate = match (t.get("rate"), t.get("table"), t.get("per_car")) {
                (Some(r), None, None) => ServiceRate::Constant(number(r, &field)?),
                (None, Some(tb), None) => ServiceRate::Table(
                    tb.as_array()
                        .ok_or_else(|| usage(&format!("`{field}.table` must be an array")))?
                        .iter()
                        .map(|x| number(x, &field))
                        .collect::<Result<_>>()?,
                ),
                (None, None, Some(r)) => ServiceRate::InfiniteServer(number(r, &field)?),
                _ => {
                    return Err(usage(&format!(
                        "`{field}` needs exactly one of rate, table, per_car"
                    )))
                }
            };
            mu[i] = Some(rate);
        }
        let mu = mu
            .into_iter()
            .enumerate()
            .map(|(i, m)| m.ok_or_else(|| usage(&format!("no service rate for node {}", i + 1))))
            .collect::<Result<Vec<_>>>()?;
        let mut discipline = vec![Discipline::Fifo; n];
        for (k, e) in array(table, "discipline")?.iter().enumerate() {
            let field = format!("discipline[{k}]");
            let e = e
                .as_array()
                .filter(|a| a.len() == 2)
                .ok_or_else(|| usage(&format!("`{field}` must be [node, \"fifo\"|\"ps\"]")))?;
            discipline[node(&e[0], &field)?] = match e[1].as_str() {
                Some("fifo") => Discipline::Fifo,
                Some("ps") => Discipline::ProcessorSharing,
                _ => return Err(usage(&format!("`{field}`: unknown discipline"))),
            };
        }
        let spec = NetworkSpec {
            p,
            mu,
            lambda_ext: lambda,
            discipline,
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl FromStr for NetworkSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let table: toml::Table = s
            .parse()
            .map_err(|e: toml::de::Error| Error::Usage(format!("network file: {e}")))?;
        Self::from_toml(&table)
    }
}

fn array<'a>(table: &'a toml::Table, key: &str) -> Result<&'a [toml::Value]> {
    match table.get(key) {
        None => Ok(&[]),
        Some(v) => v
            .as_array()
            .map(|a| a.as_slice())
            .ok_or_else(|| Error::Usage(format!("`{key}` must be an array"))),
    }
}

fn number(v: &toml::Value, field: &str) -> Result<f64> {
    v.as_float()
        .or_else(|| v.as_integer().map(|i| i as f64))
        .ok_or_else(|| Error::Usage(format!("`{field}`: expected a number")))
}

/// Every vertex reachable from vertex 0 forwards and backwards.
fn strongly_connected(n: usize, edge: impl Fn(usize, usize) -> bool) -> bool {
    let reach = |fwd: bool| {
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for w in 0..n {
                let e = if fwd { edge(u, w) } else { edge(w, u) };
                if e && !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        seen.iter().all(|&s| s)
    };
    reach(true) && reach(false)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrafficSolution {
    pub rho: Vec<f64>,
    /// Closed solutions are defined up to a factor and scaled to max 1.
    pub normalized: bool,
    /// Relative residual of the traffic equations.
    pub residual: f64,
}

impl TrafficSolution {
    /// Visit frequencies `rho_i / sum rho`.
    pub fn pi(&self) -> Vec<f64> {
        let s: f64 = self.rho.iter().sum();
        self.rho.iter().map(|r| r / s).collect()
    }
}

fn check_square(p: &[Vec<f64>]) -> Result<usize> {
    let n = p.len();
    if n == 0 || p.iter().any(|r| r.len() != n) {
        return Err(Error::param("P", "must be a non-empty square matrix"));
    }
    Ok(n)
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |a, x| a.max(x.abs()))
}

/// Left Perron vector of a stochastic irreducible `P`: `rho P = rho`.
pub fn solve_traffic_closed(p: &[Vec<f64>]) -> Result<TrafficSolution> {
    let n = check_square(p)?;
    if p.iter().any(|r| (r.iter().sum::<f64>() - 1.0).abs() > ROW_TOL) {
        return Err(Error::Structural("routing matrix is not stochastic".into()));
    }
    if !strongly_connected(n, |i, j| p[i][j] > 0.0) {
        return Err(Error::Structural("routing matrix is reducible".into()));
    }
    // (P^T - I) rho = 0 with the last equation replaced by sum rho = 1
    let mut a = DMatrix::from_fn(n, n, |i, j| p[j][i] - if i == j { 1.0 } else { 0.0 });
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut b = DVector::zeros(n);
    b[n - 1] = 1.0;
    let x = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Structural("traffic equations are singular".into()))?;
    let max = x.iter().fold(0.0_f64, |m, v| m.max(*v));
    let rho: Vec<f64> = x.iter().map(|v| (v / max).max(0.0)).collect();
    if rho.iter().any(|&r| r <= 0.0) {
        return Err(Error::Structural("traffic solution is not positive".into()));
    }
    let rp: Vec<f64> = (0..n)
        .map(|j| (0..n).map(|i| rho[i] * p[i][j]).sum::<f64>() - rho[j])
        .collect();
    Ok(TrafficSolution {
        residual: sup_norm(&rp) / sup_norm(&rho),
        rho,
        normalized: true,
    })
}

/// `sum_{k < terms} lambda P^k`.
pub fn neumann_traffic(lambda: &[f64], p: &[Vec<f64>], terms: usize) -> Vec<f64> {
    let n = lambda.len();
    let mut term = lambda.to_vec();
    let mut acc = lambda.to_vec();
    for _ in 1..terms {
        let next: Vec<f64> = (0..n)
            .map(|j| (0..n).map(|i| term[i] * p[i][j]).sum())
            .collect();
        for j in 0..n {
            acc[j] += next[j];
        }
        term = next;
    }
    acc
}

/// Solves `rho = lambda + rho P` directly and cross-checks the result
/// against the Neumann series.
pub fn solve_traffic_open(lambda: &[f64], p: &[Vec<f64>]) -> Result<TrafficSolution> {
    let n = check_square(p)?;
    if lambda.len() != n {
        return Err(Error::param("lambda", "length differs from N"));
    }
    let a = DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 } - p[j][i]);
    let b = DVector::from_column_slice(lambda);
    let lu = a.lu();
    if !lu.is_invertible() {
        return Err(Error::Structural("I - P is singular; P is not properly substochastic".into()));
    }
    let x = lu.solve(&b).expect("invertible");
    let rho: Vec<f64> = x.iter().copied().collect();
    if rho.iter().any(|r| !r.is_finite() || *r < -1e-12) {
        return Err(Error::Structural("traffic solution is not nonnegative".into()));
    }
    let res: Vec<f64> = (0..n)
        .map(|j| lambda[j] + (0..n).map(|i| rho[i] * p[i][j]).sum::<f64>() - rho[j])
        .collect();
    let scale = sup_norm(&rho).max(f64::MIN_POSITIVE);
    // the series converges geometrically; only compare once it has settled
    let s1 = neumann_traffic(lambda, p, 2000);
    let s2 = neumann_traffic(lambda, p, 2001);
    let settled = s1.iter().zip(&s2).all(|(a, b)| (a - b).abs() <= 1e-15 * scale);
    if settled && s1.iter().zip(&rho).any(|(a, b)| (a - b).abs() > 1e-8 * scale) {
        return Err(Error::Structural("direct solve disagrees with Neumann series".into()));
    }
    Ok(TrafficSolution {
        residual: sup_norm(&res) / scale,
        rho: rho.into_iter().map(|r| r.max(0.0)).collect(),
        normalized: false,
    })
}

/// Traffic solution for whichever kind of network `spec` is.
pub fn traffic(spec: &NetworkSpec) -> Result<TrafficSolution> {
    match spec.kind() {
        NetworkKind::Closed => solve_traffic_closed(&spec.p),
        NetworkKind::Open => solve_traffic_open(&spec.lambda_ext, &spec.p),
    }
}

/// `ln Z(m)` for `m = 0..=m_max` with `Z(m) = sum_{n_1+..+n_N=m} prod r_i^{n_i}`.
/// Adding node `i` to the convolution `Z'(m) = sum_k r_i^k Z(m-k)` is done
/// in the equivalent form `Z'(m) = Z(m) + r_i Z'(m-1)`.
pub fn log_partition(r: &[f64], m_max: u32) -> Result<Vec<f64>> {
    if r.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(Error::param("r", "load factors must be finite and >= 0"));
    }
    let len = m_max as usize + 1;
    let mut z = vec![f64::NEG_INFINITY; len];
    z[0] = 0.0;
    for &ri in r {
        let lr = ri.ln();
        for m in 1..len {
            z[m] = log_add(z[m], lr + z[m - 1]);
        }
    }
    Ok(z)
}

/// `Z_{N,M}`; overflows to infinity where `log_partition` does not.
pub fn partition_function(r: &[f64], m: u32) -> Result<f64> {
    Ok(log_partition(r, m)?[m as usize].exp())
}

/// Convolution of general node factors given as `ln f_i(k)`, `k = 0..=m`.
pub fn log_convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    let len = a.len().min(b.len());
    (0..len)
        .map(|m| {
            let mut acc = f64::NEG_INFINITY;
            for k in 0..=m {
                acc = log_add(acc, a[k] + b[m - k]);
            }
            acc
        })
        .collect()
}

fn log_unit(len: usize) -> Vec<f64> {
    let mut v = vec![f64::NEG_INFINITY; len];
    v[0] = 0.0;
    v
}

/// Compositions of `m` into `n` nonnegative parts, in lexicographic order
/// (first coordinate largest first).
pub fn enumerate_states(n: usize, m: u32) -> Vec<Vec<u32>> {
    fn go(n: usize, m: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if cur.len() == n - 1 {
            cur.push(m);
            out.push(cur.clone());
            cur.pop();
            return;
        }
        for k in (0..=m).rev() {
            cur.push(k);
            go(n, m - k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if n > 0 {
        go(n, m, &mut Vec::with_capacity(n), &mut out);
    }
    out
}

/// `|S_M| = binom(M + N - 1, N - 1)`, saturating.
pub fn state_count(n: usize, m: u32) -> usize {
    let (top, k) = (m as u128 + n as u128 - 1, (n as u128).saturating_sub(1));
    let mut c: u128 = 1;
    for i in 0..k {
        c = c * (top - i) / (i + 1);
        if c > usize::MAX as u128 {
            return usize::MAX;
        }
    }
    c as usize
}

#[derive(Debug, Clone, Serialize)]
pub struct ClosedLaw {
    pub m: u32,
    pub rho: Vec<f64>,
    pub log_z: f64,
    pub means: Vec<f64>,
    /// `marginals[i][k] = P(n_i = k)`.
    pub marginals: Vec<Vec<f64>>,
    /// Full law when `|S_M| <= ENUMERATION_LIMIT`.
    pub states: Option<Vec<(Vec<u32>, f64)>>,
}

impl ClosedLaw {
    pub fn prob(&self, state: &[u32]) -> Option<f64> {
        self.states
            .as_ref()?
            .iter()
            .find(|(s, _)| s.as_slice() == state)
            .map(|(_, p)| *p)
    }
}

/// Exact marginals and means from constant load factors.
fn closed_constant(r: &[f64], m: u32) -> Result<(f64, Vec<f64>, Vec<Vec<f64>>)> {
    let lz = log_partition(r, m)?;
    let top = lz[m as usize];
    let mut means = Vec::with_capacity(r.len());
    let mut marginals = Vec::with_capacity(r.len());
    for &ri in r {
        let lr = ri.ln();
        // P(n_i >= k) = r^k Z(M-k) / Z(M)
        let tail: Vec<f64> = (0..=m as usize)
            .map(|k| {
                if k == 0 {
                    1.0
                } else {
                    (k as f64 * lr + lz[m as usize - k] - top).exp()
                }
            })
            .collect();
        means.push(tail[1..].iter().sum());
        let marg: Vec<f64> = (0..=m as usize)
            .map(|k| (tail[k] - tail.get(k + 1).copied().unwrap_or(0.0)).max(0.0))
            .collect();
        marginals.push(marg);
    }
    Ok((top, means, marginals))
}

/// Means `m_i = sum_{k>=1} r_i^k Z(M-k) / Z(M)` for constant load factors.
pub fn closed_means(r: &[f64], m: u32) -> Result<Vec<f64>> {
    Ok(closed_constant(r, m)?.1)
}

/// Stationary law of a closed network with `m` cars.
pub fn stationary_closed(spec: &NetworkSpec, m: u32) -> Result<ClosedLaw> {
    spec.validate()?;
    if spec.kind() != NetworkKind::Closed {
        return Err(Error::Usage("stationary_closed needs a closed network".into()));
    }
    let rho = solve_traffic_closed(&spec.p)?.rho;
    let n = spec.n();
    let len = m as usize + 1;
    let log_f: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let lp = spec.mu[i].log_products(m);
            (0..len).map(|k| k as f64 * rho[i].ln() - lp[k]).collect()
        })
        .collect();

    let (log_z, means, marginals) = if let Some(mu) = spec.constant_rates() {
        let r: Vec<f64> = rho.iter().zip(&mu).map(|(a, b)| a / b).collect();
        closed_constant(&r, m)?
    } else {
        // Z without node i from prefix and suffix convolutions
        let mut prefix = vec![log_unit(len)];
        for f in &log_f {
            let next = log_convolve(prefix.last().unwrap(), f);
            prefix.push(next);
        }
        let mut suffix = vec![log_unit(len); n + 1];
        for i in (0..n).rev() {
            suffix[i] = log_convolve(&suffix[i + 1], &log_f[i]);
        }
        let top = prefix[n][m as usize];
        let mut means = Vec::with_capacity(n);
        let mut marginals = Vec::with_capacity(n);
        for i in 0..n {
            let rest = log_convolve(&prefix[i], &suffix[i + 1]);
            let marg: Vec<f64> = (0..len)
                .map(|k| (log_f[i][k] + rest[m as usize - k] - top).exp())
                .collect();
            means.push(marg.iter().enumerate().map(|(k, p)| k as f64 * p).sum());
            marginals.push(marg);
        }
        (top, means, marginals)
    };

    let states = (state_count(n, m) <= ENUMERATION_LIMIT).then(|| {
        enumerate_states(n, m)
            .into_iter()
            .map(|s| {
                let lw: f64 = s.iter().enumerate().map(|(i, &k)| log_f[i][k as usize]).sum();
                let p = (lw - log_z).exp();
                (s, p)
            })
            .collect()
    });
    Ok(ClosedLaw {
        m,
        rho,
        log_z,
        means,
        marginals,
        states,
    })
}

/// Largest `|(nu Q)(s)|` over `S_M`, with `Q` the generator of the closed
/// chain, `alpha(n, T_ij n) = mu_i(n_i) p_ij`.
pub fn global_balance_residual(spec: &NetworkSpec, law: &ClosedLaw) -> Result<f64> {
    let states = law
        .states
        .as_ref()
        .ok_or_else(|| Error::Unsupported("law was not enumerated".into()))?;
    let n = spec.n();
    let index: HashMap<&[u32], usize> = states
        .iter()
        .enumerate()
        .map(|(k, (s, _))| (s.as_slice(), k))
        .collect();
    let mut net = vec![0.0; states.len()];
    let mut target = vec![0u32; n];
    for (k, (s, nu)) in states.iter().enumerate() {
        for i in 0..n {
            if s[i] == 0 {
                continue;
            }
            let rate = spec.mu[i].rate(s[i]);
            for j in 0..n {
                let pij = spec.p[i][j];
                if j == i || pij == 0.0 {
                    continue;
                }
                target.copy_from_slice(s);
                target[i] -= 1;
                target[j] += 1;
                let flow = nu * rate * pij;
                net[k] -= flow;
                net[index[target.as_slice()]] += flow;
            }
        }
    }
    Ok(sup_norm(&net))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum OpenLaw {
    /// Product of geometric laws with parameters `r`.
    Ergodic {
        rho: Vec<f64>,
        r: Vec<f64>,
        means: Vec<f64>,
    },
    /// Queues at the listed nodes grow without bound.
    NonErgodic {
        rho: Vec<f64>,
        r: Vec<f64>,
        overloaded: Vec<usize>,
    },
}

impl OpenLaw {
    pub fn is_ergodic(&self) -> bool {
        matches!(self, OpenLaw::Ergodic { .. })
    }

    pub fn loads(&self) -> &[f64] {
        match self {
            OpenLaw::Ergodic { r, .. } | OpenLaw::NonErgodic { r, .. } => r,
        }
    }

    /// `prod (1 - r_i) r_i^{n_i}`; `None` in the non-ergodic case.
    pub fn prob(&self, state: &[u32]) -> Option<f64> {
        match self {
            OpenLaw::Ergodic { r, .. } => Some(
                r.iter()
                    .zip(state)
                    .map(|(r, &k)| (1.0 - r) * r.powi(k as i32))
                    .product(),
            ),
            OpenLaw::NonErgodic { .. } => None,
        }
    }

    /// `P(n_i = k)` for `k = 0..=k_max`.
    pub fn marginal(&self, i: usize, k_max: u32) -> Option<Vec<f64>> {
        match self {
            OpenLaw::Ergodic { r, .. } => Some(
                (0..=k_max)
                    .map(|k| (1.0 - r[i]) * r[i].powi(k as i32))
                    .collect(),
            ),
            OpenLaw::NonErgodic { .. } => None,
        }
    }
}

/// Loads at or above this are reported as overloaded.
const ERGODIC_EDGE: f64 = 1.0 - 1e-12;

pub fn stationary_open(spec: &NetworkSpec) -> Result<OpenLaw> {
    spec.validate()?;
    if spec.kind() != NetworkKind::Open {
        return Err(Error::Usage("stationary_open needs an open network".into()));
    }
    let mu = spec.constant_rates().ok_or_else(|| {
        Error::Unsupported("open networks need constant service rates".into())
    })?;
    let rho = solve_traffic_open(&spec.lambda_ext, &spec.p)?.rho;
    let r: Vec<f64> = rho.iter().zip(&mu).map(|(a, b)| a / b).collect();
    let overloaded: Vec<usize> = (0..r.len()).filter(|&i| r[i] >= ERGODIC_EDGE).collect();
    if overloaded.is_empty() {
        let means = r.iter().map(|r| r / (1.0 - r)).collect();
        Ok(OpenLaw::Ergodic { rho, r, means })
    } else {
        Ok(OpenLaw::NonErgodic { rho, r, overloaded })
    }
}

/// Stationary law of the open chain restricted to `n_i <= cap`, solved
/// from the dense generator. Arrivals to a full queue are lost and
/// transfers into a full queue are blocked.
pub fn truncated_open_stationary(spec: &NetworkSpec, cap: u32) -> Result<Vec<(Vec<u32>, f64)>> {
    spec.validate()?;
    let n = spec.n();
    let side = cap as usize + 1;
    let size = side
        .checked_pow(n as u32)
        .filter(|&s| s <= TRUNCATED_LIMIT)
        .ok_or_else(|| Error::Unsupported(format!("truncated state space exceeds {TRUNCATED_LIMIT}")))?;
    let decode = |mut k: usize| {
        let mut s = vec![0u32; n];
        for x in s.iter_mut() {
            *x = (k % side) as u32;
            k /= side;
        }
        s
    };
    let encode = |s: &[u32]| s.iter().rev().fold(0usize, |acc, &x| acc * side + x as usize);
    // a holds Q^T
    let mut a = DMatrix::<f64>::zeros(size, size);
    for k in 0..size {
        let s = decode(k);
        let mut add = |t: &[u32], rate: f64| {
            if rate > 0.0 {
                let to = encode(t);
                a[(to, k)] += rate;
                a[(k, k)] -= rate;
            }
        };
        for i in 0..n {
            if s[i] < cap {
                let mut t = s.clone();
                t[i] += 1;
                add(&t, spec.lambda_ext[i]);
            }
            if s[i] == 0 {
                continue;
            }
            let mu = spec.mu[i].rate(s[i]);
            let mut t = s.clone();
            t[i] -= 1;
            add(&t, mu * spec.exit_prob(i));
            for j in 0..n {
                if j != i && s[j] < cap {
                    let mut t = s.clone();
                    t[i] -= 1;
                    t[j] += 1;
                    add(&t, mu * spec.p[i][j]);
                }
            }
        }
    }
    for j in 0..size {
        a[(size - 1, j)] = 1.0;
    }
    let mut b = DVector::zeros(size);
    b[size - 1] = 1.0;
    let x = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Structural("truncated generator is singular".into()))?;
    Ok((0..size).map(|k| (decode(k), x[k])).collect())
}

/// Jump counts `N_ij`; exits and entries are kept apart from node-to-node
/// moves.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct JumpCounts {
    pub moves: Vec<Vec<u64>>,
    pub exits: Vec<u64>,
    pub entries: Vec<u64>,
}

impl JumpCounts {
    pub fn new(n: usize) -> Self {
        JumpCounts {
            moves: vec![vec![0; n]; n],
            exits: vec![0; n],
            entries: vec![0; n],
        }
    }

    /// Departures from node `i`, exits included.
    pub fn departures(&self, i: usize) -> u64 {
        self.moves[i].iter().sum::<u64>() + self.exits[i]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CtmcOptions {
    pub t_max: f64,
    pub max_events: Option<u64>,
    /// Record occupation time per full state.
    pub track_joint: bool,
}

impl CtmcOptions {
    pub fn until(t_max: f64) -> Self {
        CtmcOptions {
            t_max,
            max_events: None,
            track_joint: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CtmcTrace {
    /// Total simulated time `T`.
    pub t_total: f64,
    pub events: u64,
    /// `occupation[i][k]`: time node `i` held `k` cars.
    pub occupation: Vec<Vec<f64>>,
    pub busy_time: Vec<f64>,
    pub joint: Option<BTreeMap<Vec<u32>, f64>>,
    pub counts: JumpCounts,
    pub final_state: Vec<u32>,
}

impl CtmcTrace {
    pub fn marginal(&self, i: usize) -> Vec<f64> {
        self.occupation[i].iter().map(|t| t / self.t_total).collect()
    }

    pub fn time_weighted_means(&self) -> Vec<f64> {
        self.occupation
            .iter()
            .map(|occ| {
                occ.iter().enumerate().map(|(k, t)| k as f64 * t).sum::<f64>() / self.t_total
            })
            .collect()
    }

    /// Empirical joint law over visited states.
    pub fn joint_law(&self) -> Option<BTreeMap<Vec<u32>, f64>> {
        self.joint.as_ref().map(|j| {
            j.iter()
                .map(|(s, t)| (s.clone(), t / self.t_total))
                .collect()
        })
    }

    /// `node,time_weighted_mean,busy_time`, nodes numbered from 1.
    pub fn write_means_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["node", "time_weighted_mean", "busy_time"])
            .map_err(csv_err)?;
        for (i, m) in self.time_weighted_means().iter().enumerate() {
            w.write_record([(i + 1).to_string(), m.to_string(), self.busy_time[i].to_string()])
                .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    /// `from,to,count` with 0 standing for the outside world.
    pub fn write_jumps_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["from", "to", "count"]).map_err(csv_err)?;
        let c = &self.counts;
        let n = c.exits.len();
        for i in 0..n {
            if c.entries[i] > 0 {
                w.write_record(["0".to_string(), (i + 1).to_string(), c.entries[i].to_string()])
                    .map_err(csv_err)?;
            }
        }
        for i in 0..n {
            for j in 0..n {
                if c.moves[i][j] > 0 {
                    w.write_record([
                        (i + 1).to_string(),
                        (j + 1).to_string(),
                        c.moves[i][j].to_string(),
                    ])
                    .map_err(csv_err)?;
                }
            }
            if c.exits[i] > 0 {
                w.write_record([(i + 1).to_string(), "0".to_string(), c.exits[i].to_string()])
                    .map_err(csv_err)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Gillespie simulation of the queue-length chain from `initial`.
pub fn simulate_ctmc<R: Rng + ?Sized>(
    spec: &NetworkSpec,
    initial: &[u32],
    opts: CtmcOptions,
    rng: &mut R,
) -> Result<CtmcTrace> {
    spec.validate()?;
    let n = spec.n();
    if initial.len() != n {
        return Err(Error::param("initial", "length differs from N"));
    }
    if !(opts.t_max.is_finite() && opts.t_max >= 0.0) {
        return Err(Error::param("t_max", "must be finite and >= 0"));
    }
    let mut state = initial.to_vec();
    let mut occupation: Vec<Vec<f64>> = state.iter().map(|&k| vec![0.0; k as usize + 1]).collect();
    let mut busy_time = vec![0.0; n];
    let mut joint = opts.track_joint.then(BTreeMap::new);
    let mut counts = JumpCounts::new(n);
    let lambda_total: f64 = spec.lambda_ext.iter().sum();
    let mut rates: Vec<f64> = (0..n).map(|i| spec.mu[i].rate(state[i])).collect();
    let mut t = 0.0;
    let mut events = 0u64;

    loop {
        let total = rates.iter().sum::<f64>() + lambda_total;
        let dt = if total > 0.0 {
            let e: f64 = Exp1.sample(rng);
            e / total
        } else {
            f64::INFINITY
        };
        let hold = dt.min(opts.t_max - t);
        for i in 0..n {
            let k = state[i] as usize;
            if occupation[i].len() <= k {
                occupation[i].resize(k + 1, 0.0);
            }
            occupation[i][k] += hold;
            if k > 0 {
                busy_time[i] += hold;
            }
        }
        if let Some(j) = joint.as_mut() {
            *j.entry(state.clone()).or_insert(0.0) += hold;
        }
        t += hold;
        if t >= opts.t_max {
            break;
        }
        let mut u = rng.random::<f64>() * total;
        let mut fired = false;
        for i in 0..n {
            if u < rates[i] {
                // departure from i, routed by row i
                let mut v = rng.random::<f64>();
                let mut dest = None;
                for j in 0..n {
                    if v < spec.p[i][j] {
                        dest = Some(j);
                        break;
                    }
                    v -= spec.p[i][j];
                }
                state[i] -= 1;
                match dest {
                    Some(j) => {
                        counts.moves[i][j] += 1;
                        state[j] += 1;
                        rates[j] = spec.mu[j].rate(state[j]);
                    }
                    None => counts.exits[i] += 1,
                }
                rates[i] = spec.mu[i].rate(state[i]);
                fired = true;
                break;
            }
            u -= rates[i];
        }
        if !fired {
            let mut i = 0;
            while i + 1 < n && u >= spec.lambda_ext[i] {
                u -= spec.lambda_ext[i];
                i += 1;
            }
            counts.entries[i] += 1;
            state[i] += 1;
            rates[i] = spec.mu[i].rate(state[i]);
        }
        debug_assert!(spec.kind() == NetworkKind::Open || state.iter().sum::<u32>() == initial.iter().sum::<u32>());
        events += 1;
        if opts.max_events.is_some_and(|m| events >= m) {
            break;
        }
    }
    Ok(CtmcTrace {
        t_total: t,
        events,
        occupation,
        busy_time,
        joint,
        counts,
        final_state: state,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RowEstimate {
    pub to: Vec<f64>,
    pub exit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParameterEstimate {
    /// `p_ij ~ N_ij / sum_j N_ij`; `None` marks a row with no departures.
    pub p_hat: Vec<Option<RowEstimate>>,
    /// `mu_i ~ (1/T) sum_j N_ij`, valid when node `i` is never idle.
    pub mu_hat: Vec<Option<f64>>,
    /// Extension: departures divided by the time node `i` was busy.
    pub mu_hat_busy: Option<Vec<Option<f64>>>,
}

impl ParameterEstimate {
    pub fn unidentifiable(&self) -> Vec<usize> {
        (0..self.p_hat.len()).filter(|&i| self.p_hat[i].is_none()).collect()
    }

    /// `max |p_hat_ij - p_ij|` over identified rows, exits included.
    pub fn routing_error(&self, spec: &NetworkSpec) -> f64 {
        let mut err = 0.0_f64;
        for (i, row) in self.p_hat.iter().enumerate() {
            if let Some(row) = row {
                for j in 0..row.to.len() {
                    err = err.max((row.to[j] - spec.p[i][j]).abs());
                }
                err = err.max((row.exit - spec.exit_prob(i)).abs());
            }
        }
        err
    }
}

pub fn estimate_parameters(
    counts: &JumpCounts,
    t: f64,
    busy_time: Option<&[f64]>,
) -> Result<ParameterEstimate> {
    if !(t.is_finite() && t > 0.0) {
        return Err(Error::param("T", "must be finite and > 0"));
    }
    let n = counts.exits.len();
    let mut p_hat = Vec::with_capacity(n);
    let mut mu_hat = Vec::with_capacity(n);
    for i in 0..n {
        let total = counts.departures(i);
        if total == 0 {
            p_hat.push(None);
            mu_hat.push(None);
            continue;
        }
        let tot = total as f64;
        p_hat.push(Some(RowEstimate {
            to: counts.moves[i].iter().map(|&c| c as f64 / tot).collect(),
            exit: counts.exits[i] as f64 / tot,
        }));
        mu_hat.push(Some(tot / t));
    }
    let mu_hat_busy = busy_time.map(|b| {
        (0..n)
            .map(|i| {
                let d = counts.departures(i);
                (d > 0 && b[i] > 0.0).then(|| d as f64 / b[i])
            })
            .collect()
    });
    Ok(ParameterEstimate {
        p_hat,
        mu_hat,
        mu_hat_busy,
    })
}
