//! Start-up of a standing queue and the velocity-mark flow with overtaking.
//!
//! Cars are points. In the start-up models the front car has index 0 and
//! car `i - 1` drives ahead of car `i`.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution as _, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pointfield::{sample_poisson, Window};
use crate::stats::{covariance_jackknife, Estimate};

const POS_TOL: f64 = 1e-9;

fn exp1<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    Exp::new(1.0).expect("unit rate").sample(rng)
}

/// Result of one run of the exponential-clock start-up model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StartupATrace {
    pub initial_positions: Vec<f64>,
    pub stop_counts: Vec<u32>,
    /// Time and place of each car's last start.
    pub final_start_times: Vec<f64>,
    pub final_start_positions: Vec<f64>,
    /// `x_{i-1}(t_{i-1}) - x_i(t_i)`, each car taken at its own final start.
    pub literal_gaps: Vec<f64>,
    /// Spacing of the free-flow trajectories `x_i(t) = x_i(t_i) + t - t_i`
    /// once both cars have made their last start.
    pub free_flow_gaps: Vec<f64>,
    pub all_started: bool,
    pub t_end: f64,
}

impl StartupATrace {
    pub fn mean_stops(&self) -> f64 {
        if self.stop_counts.is_empty() {
            return 0.0;
        }
        self.stop_counts.iter().map(|c| *c as f64).sum::<f64>() / self.stop_counts.len() as f64
    }

    /// CSV `car,x0,stops,t_final,x_final,literal_gap,free_flow_gap`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "car,x0,stops,t_final,x_final,literal_gap,free_flow_gap")?;
        for i in 0..self.initial_positions.len() {
            let (lg, fg) = if i == 0 {
                (String::new(), String::new())
            } else {
                (self.literal_gaps[i - 1].to_string(), self.free_flow_gaps[i - 1].to_string())
            };
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                i,
                self.initial_positions[i],
                self.stop_counts[i],
                self.final_start_times[i],
                self.final_start_positions[i],
                lg,
                fg
            )?;
        }
        Ok(())
    }
}

/// Standing cars on a Poisson(`rho`) field inside `window` start at speed 1
/// after independent unit-mean exponential times. A car that reaches a
/// standing predecessor stops, and restarts an independent unit-mean
/// exponential time after the predecessor moves off.
pub fn simulate_startup_a<R: Rng + ?Sized>(
    rho: f64,
    window: Window,
    t_max: f64,
    rng: &mut R,
) -> Result<StartupATrace> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::param("rho", "start-up model needs 0 < rho < 1"));
    }
    let field = sample_poisson(rho, window, rng)?;
    let mut pos: Vec<f64> = field.positions().iter().rev().copied().collect();
    let initial_positions = pos.clone();
    let n = pos.len();
    let mut moving = vec![false; n];
    let mut last = vec![0.0; n];
    let mut start: Vec<f64> = (0..n).map(|_| exp1(rng)).collect();
    let mut stops = vec![0u32; n];
    let mut t_final = vec![f64::NAN; n];
    let mut x_final = vec![f64::NAN; n];
    let mut n_moving = 0;
    let mut t = 0.0;

    let at = |pos: &[f64], last: &[f64], moving: &[bool], i: usize, t: f64| {
        if moving[i] {
            pos[i] + (t - last[i])
        } else {
            pos[i]
        }
    };

    while n_moving < n {
        let mut next_start = (f64::INFINITY, usize::MAX);
        let mut next_catch = (f64::INFINITY, usize::MAX);
        for i in 0..n {
            if !moving[i] {
                if start[i] < next_start.0 {
                    next_start = (start[i], i);
                }
            } else if i > 0 && !moving[i - 1] {
                let tc = t + (pos[i - 1] - at(&pos, &last, &moving, i, t));
                if tc < next_catch.0 {
                    next_catch = (tc, i);
                }
            }
        }
        let t_next = next_start.0.min(next_catch.0);
        if t_next > t_max {
            t = t_max;
            break;
        }
        t = t_next;
        if next_start.0 <= next_catch.0 {
            let i = next_start.1;
            moving[i] = true;
            last[i] = t;
            n_moving += 1;
            t_final[i] = t;
            x_final[i] = pos[i];
            if i + 1 < n && !moving[i + 1] && start[i + 1].is_infinite() {
                start[i + 1] = t + exp1(rng);
            }
        } else {
            let j = next_catch.1;
            pos[j] = pos[j - 1];
            moving[j] = false;
            last[j] = t;
            n_moving -= 1;
            stops[j] += 1;
            start[j] = f64::INFINITY;
        }
        debug_assert!((1..n).all(|i| at(&pos, &last, &moving, i, t)
            <= at(&pos, &last, &moving, i - 1, t) + POS_TOL));
    }

    let literal_gaps = (1..n).map(|i| x_final[i - 1] - x_final[i]).collect();
    let free_flow_gaps = (1..n)
        .map(|i| (x_final[i - 1] - t_final[i - 1]) - (x_final[i] - t_final[i]))
        .collect();
    Ok(StartupATrace {
        initial_positions,
        stop_counts: stops,
        final_start_times: t_final,
        final_start_positions: x_final,
        literal_gaps,
        free_flow_gaps,
        all_started: n_moving == n,
        t_end: t,
    })
}

/// Per-car statistics of the threshold start-up model. Entries are `NaN`
/// for cars that had not made their last start by the time limit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StartupBSample {
    /// First start time `tau_k^(1)`.
    pub first_start: Vec<f64>,
    /// Time `tau_k^(2)` after which the car never stops.
    pub final_start: Vec<f64>,
    /// Distance from car `k` to the lead car from `tau_k^(2)` on.
    pub distance_to_lead: Vec<f64>,
    pub stop_counts: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSpec {
    pub rho: f64,
    pub v: f64,
    pub d_eff: f64,
    pub n_cars: usize,
}

impl ThresholdSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho.is_finite() && self.rho > 0.0) {
            return Err(Error::param("rho", "must be finite and > 0"));
        }
        if !(self.v.is_finite() && self.v > 0.0) {
            return Err(Error::param("v", "must be finite and > 0"));
        }
        if !(self.d_eff.is_finite() && self.d_eff > 0.0) {
            return Err(Error::param("d_eff", "must be finite and > 0"));
        }
        if self.n_cars == 0 {
            return Err(Error::param("n_cars", "need at least one car"));
        }
        Ok(())
    }
}

/// Threshold start-up on the left half-axis: a car moves at speed `v`
/// while its gap to the car ahead is at least `d_eff` and stands
/// otherwise. The lead car has an empty road and always moves.
pub fn simulate_startup_b<R: Rng + ?Sized>(
    spec: &ThresholdSpec,
    t_max: f64,
    rng: &mut R,
) -> Result<StartupBSample> {
    spec.validate()?;
    let n = spec.n_cars;
    let gap = Exp::new(spec.rho).expect("positive rate");
    let mut pos = Vec::with_capacity(n);
    let mut x = -gap.sample(rng);
    for _ in 0..n {
        pos.push(x);
        x -= gap.sample(rng);
    }
    initial_positions_b(spec, pos, t_max)
}

/// Threshold dynamics from given initial positions (front first, strictly
/// decreasing).
pub fn initial_positions_b(spec: &ThresholdSpec, mut pos: Vec<f64>, t_max: f64) -> Result<StartupBSample> {
    spec.validate()?;
    if pos.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::param("positions", "must be strictly decreasing from the front"));
    }
    let n = pos.len();
    let (v, d) = (spec.v, spec.d_eff);
    let tol = POS_TOL * (1.0 + d);
    let mut moving = vec![false; n];
    let mut first = vec![f64::NAN; n];
    let mut fin = vec![f64::NAN; n];
    let mut stops = vec![0u32; n];
    let mut t = 0.0;

    let cascade = |pos: &[f64], moving: &mut [bool], first: &mut [f64], fin: &mut [f64], t: f64| {
        for i in 0..n {
            if moving[i] {
                continue;
            }
            let free = i == 0 || pos[i - 1] - pos[i] > d + tol || (moving[i - 1] && pos[i - 1] - pos[i] >= d - tol);
            if free {
                moving[i] = true;
                if first[i].is_nan() {
                    first[i] = t;
                }
                fin[i] = t;
            }
        }
    };
    cascade(&pos, &mut moving, &mut first, &mut fin, t);

    loop {
        if moving.iter().all(|m| *m) {
            break;
        }
        // next start (stopped behind a mover) or stop (mover behind a stopped car)
        let mut next = (f64::INFINITY, usize::MAX);
        for i in 1..n {
            let g = pos[i - 1] - pos[i];
            let dt = match (moving[i - 1], moving[i]) {
                (true, false) => (d - g).max(0.0) / v,
                (false, true) => (g - d).max(0.0) / v,
                _ => continue,
            };
            if dt < next.0 {
                next = (dt, i);
            }
        }
        if t + next.0 > t_max {
            break;
        }
        let dt = next.0;
        for i in 0..n {
            if moving[i] {
                pos[i] += v * dt;
            }
        }
        t += dt;
        let i = next.1;
        if moving[i] {
            moving[i] = false;
            stops[i] += 1;
            pos[i] = pos[i - 1] - d;
        } else {
            pos[i] = pos[i - 1] - d;
        }
        cascade(&pos, &mut moving, &mut first, &mut fin, t);
        debug_assert!((1..n).all(|i| {
            let g = pos[i - 1] - pos[i];
            g >= -tol && if moving[i] { g >= d - tol } else { g <= d + tol }
        }));
    }
    // once both move they keep their distance, so it can be read off at the end
    let distance_to_lead = (0..n)
        .map(|k| if moving[k] { pos[0] - pos[k] } else { f64::NAN })
        .collect();
    let unfinished = |xs: Vec<f64>| -> Vec<f64> {
        xs.into_iter()
            .zip(&moving)
            .map(|(x, m)| if *m { x } else { f64::NAN })
            .collect()
    };
    Ok(StartupBSample {
        first_start: first,
        final_start: unfinished(fin),
        distance_to_lead,
        stop_counts: stops,
    })
}

/// Long-format CSV `replica,k,tau1,tau2,x` over a batch of replicas.
pub fn write_startup_b_csv<W: Write>(samples: &[StartupBSample], mut out: W) -> Result<()> {
    writeln!(out, "replica,k,tau1,tau2,x")?;
    for (r, s) in samples.iter().enumerate() {
        for k in 0..s.first_start.len() {
            writeln!(
                out,
                "{},{},{},{},{}",
                r,
                k + 1,
                s.first_start[k],
                s.final_start[k],
                s.distance_to_lead[k]
            )?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VelocityFlowSpec {
    pub n_cars: usize,
    /// Free-road speed process: two-state Markov switching `v_a <-> v_b`.
    pub v_a: f64,
    pub v_b: f64,
    /// Switching rate from `v_a` to `v_b`.
    pub q_ab: f64,
    pub q_ba: f64,
    pub c1: f64,
    pub c2: f64,
    /// Overtaking intensity; `0` disables overtaking, `inf` overtakes on contact.
    pub lambda_overtake: f64,
    /// Rate of the exponential initial gaps.
    pub rho0: f64,
}

impl VelocityFlowSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.c1 > 0.0 && self.c1 < self.v_a && self.v_a < self.v_b && self.v_b < self.c2 && self.c2.is_finite()) {
            return Err(Error::param("v_a/v_b", "need 0 < c1 < v_a < v_b < c2 < inf"));
        }
        if !(self.q_ab > 0.0 && self.q_ba > 0.0 && self.q_ab.is_finite() && self.q_ba.is_finite()) {
            return Err(Error::param("q_ab/q_ba", "switching rates must be finite and > 0"));
        }
        if self.lambda_overtake.is_nan() || self.lambda_overtake < 0.0 {
            return Err(Error::param("lambda_overtake", "must be >= 0 (inf allowed)"));
        }
        if !(self.rho0.is_finite() && self.rho0 > 0.0) {
            return Err(Error::param("rho0", "must be finite and > 0"));
        }
        Ok(())
    }

    fn speed(&self, fast: bool) -> f64 {
        if fast {
            self.v_b
        } else {
            self.v_a
        }
    }
}

/// State of the flow at one instant. Vectors are indexed by car identity
/// (initial order, 0 = front); `order` lists identities front to back.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowSnapshot {
    pub time: f64,
    pub positions: Vec<f64>,
    pub velocities: Vec<f64>,
    /// Free-road speed `w_i(t)`.
    pub desired: Vec<f64>,
    /// True when the car touches the car ahead of it.
    pub contact: Vec<bool>,
    pub order: Vec<usize>,
}

impl FlowSnapshot {
    /// Sizes of maximal runs of cars in mutual contact (singletons included).
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = Vec::new();
        for (k, id) in self.order.iter().enumerate() {
            if k > 0 && self.contact[*id] {
                *sizes.last_mut().expect("run started") += 1;
            } else {
                sizes.push(1);
            }
        }
        sizes
    }

    /// True when every car in contact moves exactly at the speed of the
    /// head of its cluster.
    pub fn contact_speeds_equal(&self) -> bool {
        let mut head = f64::NAN;
        for (k, id) in self.order.iter().enumerate() {
            if k > 0 && self.contact[*id] {
                if self.velocities[*id] != head {
                    return false;
                }
            } else {
                head = self.velocities[*id];
            }
        }
        true
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VelocityFlowTrace {
    pub snapshots: Vec<FlowSnapshot>,
    pub overtakes: u64,
    pub events: u64,
}

struct Flow<'a> {
    spec: &'a VelocityFlowSpec,
    x: Vec<f64>,
    fast: Vec<bool>,
    vel: Vec<f64>,
    contact: Vec<bool>,
    order: Vec<usize>,
    overtakes: u64,
}

impl Flow<'_> {
    fn settle(&mut self) {
        loop {
            self.velocities();
            if self.spec.lambda_overtake.is_infinite() {
                if let Some(k) = self.eligible().first().copied() {
                    self.swap(k);
                    continue;
                }
            }
            break;
        }
    }

    fn velocities(&mut self) {
        for k in 0..self.order.len() {
            let id = self.order[k];
            let w = self.spec.speed(self.fast[id]);
            if k == 0 {
                self.contact[id] = false;
                self.vel[id] = w;
                continue;
            }
            let ahead = self.vel[self.order[k - 1]];
            if self.contact[id] && w >= ahead {
                self.vel[id] = ahead;
            } else {
                self.contact[id] = false;
                self.vel[id] = w;
            }
        }
    }

    /// Order slots `k` whose car is blocked while wanting to go faster.
    fn eligible(&self) -> Vec<usize> {
        (1..self.order.len())
            .filter(|&k| {
                let id = self.order[k];
                self.contact[id] && self.spec.speed(self.fast[id]) > self.vel[self.order[k - 1]]
            })
            .collect()
    }

    /// The car in slot `k` passes the car in slot `k - 1` at the same point.
    fn swap(&mut self, k: usize) {
        let (ahead, behind) = (self.order[k - 1], self.order[k]);
        self.contact[behind] = self.contact[ahead];
        self.contact[ahead] = true;
        self.order.swap(k - 1, k);
        self.overtakes += 1;
    }

    fn next_catch(&self) -> (f64, usize) {
        let mut best = (f64::INFINITY, 0);
        for k in 1..self.order.len() {
            let (a, b) = (self.order[k - 1], self.order[k]);
            if !self.contact[b] && self.vel[b] > self.vel[a] {
                let dt = (self.x[a] - self.x[b]).max(0.0) / (self.vel[b] - self.vel[a]);
                if dt < best.0 {
                    best = (dt, k);
                }
            }
        }
        best
    }

    fn snapshot(&self, time: f64) -> FlowSnapshot {
        FlowSnapshot {
            time,
            positions: self.x.clone(),
            velocities: self.vel.clone(),
            desired: self.fast.iter().map(|f| self.spec.speed(*f)).collect(),
            contact: self.contact.clone(),
            order: self.order.clone(),
        }
    }

    fn check(&self) {
        for id in 0..self.x.len() {
            debug_assert!(self.vel[id] > self.spec.c1 && self.vel[id] < self.spec.c2);
        }
        for k in 1..self.order.len() {
            let (a, b) = (self.order[k - 1], self.order[k]);
            debug_assert!(self.x[b] <= self.x[a] + POS_TOL);
            if self.contact[b] {
                debug_assert_eq!(self.vel[b], self.vel[a]);
                debug_assert_eq!(self.x[b], self.x[a]);
            }
        }
    }
}

/// Event-driven run of the velocity-mark flow. Snapshots are taken at the
/// requested times (clipped to `t_max`, sorted).
pub fn simulate_velocity_flow<R: Rng + ?Sized>(
    spec: &VelocityFlowSpec,
    t_max: f64,
    snapshot_times: &[f64],
    rng: &mut R,
) -> Result<VelocityFlowTrace> {
    spec.validate()?;
    if !(t_max.is_finite() && t_max >= 0.0) {
        return Err(Error::param("t_max", "must be finite and >= 0"));
    }
    let n = spec.n_cars;
    let p_fast = spec.q_ab / (spec.q_ab + spec.q_ba);
    let gap = Exp::new(spec.rho0).expect("positive rate");
    let mut x = Vec::with_capacity(n);
    let mut pos = 0.0;
    for _ in 0..n {
        x.push(pos);
        pos -= gap.sample(rng);
    }
    let fast: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < p_fast).collect();
    let mut flow = Flow {
        spec,
        x,
        fast,
        vel: vec![0.0; n],
        contact: vec![false; n],
        order: (0..n).collect(),
        overtakes: 0,
    };
    flow.settle();
    let mut times: Vec<f64> = snapshot_times.iter().copied().filter(|s| *s <= t_max).collect();
    times.sort_by(f64::total_cmp);
    let mut snaps = Vec::with_capacity(times.len());
    let mut next_snap = 0;
    let mut t = 0.0;
    let mut events = 0u64;
    let finite_lambda = spec.lambda_overtake.is_finite() && spec.lambda_overtake > 0.0;

    loop {
        let switch_rate: f64 = flow
            .fast
            .iter()
            .map(|f| if *f { spec.q_ba } else { spec.q_ab })
            .sum();
        let eligible = if finite_lambda { flow.eligible() } else { Vec::new() };
        let overtake_rate = spec.lambda_overtake * eligible.len() as f64;
        let total = switch_rate + if finite_lambda { overtake_rate } else { 0.0 };
        let dt_rand = if total > 0.0 {
            Exp::new(total).expect("positive rate").sample(rng)
        } else {
            f64::INFINITY
        };
        let (dt_catch, k_catch) = flow.next_catch();
        let dt = dt_rand.min(dt_catch);
        while next_snap < times.len() && times[next_snap] <= (t + dt).min(t_max) {
            let s = times[next_snap];
            let mut snap = flow.snapshot(s);
            for id in 0..n {
                snap.positions[id] += flow.vel[id] * (s - t);
            }
            snaps.push(snap);
            next_snap += 1;
        }
        if t + dt > t_max {
            break;
        }
        for id in 0..n {
            flow.x[id] += flow.vel[id] * dt;
        }
        t += dt;
        events += 1;
        if dt_catch <= dt_rand {
            let (a, b) = (flow.order[k_catch - 1], flow.order[k_catch]);
            flow.x[b] = flow.x[a];
            flow.contact[b] = true;
        } else {
            let u = rng.random::<f64>() * total;
            if u < switch_rate {
                let mut acc = 0.0;
                let mut pick = n - 1;
                for id in 0..n {
                    acc += if flow.fast[id] { spec.q_ba } else { spec.q_ab };
                    if u < acc {
                        pick = id;
                        break;
                    }
                }
                flow.fast[pick] = !flow.fast[pick];
            } else {
                let j = ((u - switch_rate) / spec.lambda_overtake) as usize;
                flow.swap(eligible[j.min(eligible.len() - 1)]);
            }
        }
        // cars at the same point move together, so re-pin contact positions
        for k in 1..n {
            let (a, b) = (flow.order[k - 1], flow.order[k]);
            if flow.contact[b] {
                flow.x[b] = flow.x[a];
            }
        }
        flow.settle();
        flow.check();
    }
    Ok(VelocityFlowTrace {
        snapshots: snaps,
        overtakes: flow.overtakes,
        events,
    })
}

/// Across-replica covariance of `v_i(t)` and `v_j(t)` at snapshot `snap`,
/// with a jackknife standard error.
pub fn covariance_estimate(traces: &[VelocityFlowTrace], i: usize, j: usize, snap: usize) -> Result<Estimate> {
    if traces.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "covariance needs at least 3 replicas, got {}",
            traces.len()
        )));
    }
    let mut vi = Vec::with_capacity(traces.len());
    let mut vj = Vec::with_capacity(traces.len());
    for tr in traces {
        let s = tr
            .snapshots
            .get(snap)
            .ok_or_else(|| Error::Usage(format!("snapshot {snap} missing")))?;
        if i >= s.velocities.len() || j >= s.velocities.len() {
            return Err(Error::Usage(format!("car index out of range ({i}, {j})")));
        }
        vi.push(s.velocities[i]);
        vj.push(s.velocities[j]);
    }
    covariance_jackknife(&vi, &vj)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PhaseRow {
    pub lambda: f64,
    /// Mean over `i` of `Cov(v_i, v_{i+1})` at `t_max`, by car identity.
    pub nn_covariance: f64,
    pub mean_cluster_size: f64,
    pub max_cluster_size: usize,
    /// False when the flow is too small for the statistics to exist.
    pub defined: bool,
}

/// Exploratory sweep over overtaking intensities.
pub fn phase_sweep<R: Rng + ?Sized>(
    template: &VelocityFlowSpec,
    lambda_grid: &[f64],
    t_max: f64,
    replicas: usize,
    rng: &mut R,
) -> Result<Vec<PhaseRow>> {
    if lambda_grid.is_empty() {
        return Err(Error::param("lambda_grid", "grid must be nonempty"));
    }
    let mut rows = Vec::with_capacity(lambda_grid.len());
    for &lambda in lambda_grid {
        let spec = VelocityFlowSpec {
            lambda_overtake: lambda,
            ..*template
        };
        spec.validate()?;
        if spec.n_cars < 2 || replicas < 3 {
            rows.push(PhaseRow {
                lambda,
                nn_covariance: f64::NAN,
                mean_cluster_size: if spec.n_cars == 0 { 0.0 } else { 1.0 },
                max_cluster_size: spec.n_cars.min(1),
                defined: false,
            });
            continue;
        }
        let traces = (0..replicas)
            .map(|_| simulate_velocity_flow(&spec, t_max, &[t_max], rng))
            .collect::<Result<Vec<_>>>()?;
        let covs: Vec<f64> = (0..spec.n_cars - 1)
            .map(|i| covariance_estimate(&traces, i, i + 1, 0).map(|e| e.mean))
            .collect::<Result<_>>()?;
        let sizes: Vec<usize> = traces.iter().flat_map(|tr| tr.snapshots[0].cluster_sizes()).collect();
        rows.push(PhaseRow {
            lambda,
            nn_covariance: covs.iter().sum::<f64>() / covs.len() as f64,
            mean_cluster_size: sizes.iter().sum::<usize>() as f64 / sizes.len() as f64,
            max_cluster_size: sizes.iter().copied().max().unwrap_or(0),
            defined: true,
        });
    }
    Ok(rows)
}

pub fn write_phase_csv<W: Write>(rows: &[PhaseRow], mut out: W) -> Result<()> {
    writeln!(out, "lambda,nn_covariance,mean_cluster_size,max_cluster_size,defined")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.lambda, r.nn_covariance, r.mean_cluster_size, r.max_cluster_size, r.defined
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use crate::stats::ks_one_sample;

    #[test]
    fn startup_a_rejects_dense_fields() {
        let w = Window::new(-10.0, 0.0).unwrap();
        assert!(simulate_startup_a(1.0, w, 10.0, &mut seeded(1)).is_err());
        assert!(simulate_startup_a(0.0, w, 10.0, &mut seeded(1)).is_err());
    }

    #[test]
    fn startup_a_single_car_never_stops() {
        let mut rng = seeded(2);
        for _ in 0..50 {
            let tr = simulate_startup_a(0.5, Window::new(-1.0, 0.0).unwrap(), 1e6, &mut rng).unwrap();
            if tr.initial_positions.len() == 1 {
                assert_eq!(tr.stop_counts, vec![0]);
                assert!(tr.literal_gaps.is_empty());
                assert!(tr.final_start_times[0] > 0.0);
                return;
            }
        }
        panic!("no single-car draw");
    }

    #[test]
    fn startup_a_free_flow_gaps_exponential() {
        let rho = 0.5;
        let tr = simulate_startup_a(rho, Window::new(-2000.0, 0.0).unwrap(), 1e7, &mut seeded(3)).unwrap();
        assert!(tr.all_started);
        let ks = ks_one_sample(&tr.free_flow_gaps, |x| 1.0 - (-rho * x).exp());
        assert!(ks.passes(0.01), "{ks:?}");
    }

    #[test]
    fn startup_a_literal_gaps_have_atom_at_zero() {
        let tr = simulate_startup_a(0.5, Window::new(-2000.0, 0.0).unwrap(), 1e7, &mut seeded(4)).unwrap();
        let zeros = tr.literal_gaps.iter().filter(|g| **g == 0.0).count();
        assert!(zeros > tr.literal_gaps.len() / 10);
    }

    #[test]
    fn startup_a_stop_counts_stable_in_window() {
        let mut rng = seeded(5);
        let mean_for = |len: f64, rng: &mut crate::rng::SimRng| {
            let xs: Vec<f64> = (0..40)
                .map(|_| {
                    simulate_startup_a(0.5, Window::new(-len, 0.0).unwrap(), 1e8, rng)
                        .unwrap()
                        .mean_stops()
                })
                .collect();
            Estimate::from_samples(&xs)
        };
        let a = mean_for(500.0, &mut rng);
        let b = mean_for(1000.0, &mut rng);
        let se = (a.std_error.powi(2) + b.std_error.powi(2)).sqrt();
        assert!((a.mean - b.mean).abs() < 4.0 * se, "{a:?} {b:?}");
    }

    #[test]
    fn startup_a_order_and_speeds() {
        let tr = simulate_startup_a(0.7, Window::new(-200.0, 0.0).unwrap(), 1e7, &mut seeded(6)).unwrap();
        // trajectories after the last start never cross
        for i in 1..tr.final_start_times.len() {
            assert!(tr.free_flow_gaps[i - 1] >= -1e-9);
            assert!(tr.final_start_positions[i] <= tr.final_start_positions[i - 1]);
            assert!(tr.final_start_positions[i] >= tr.initial_positions[i]);
        }
    }

    fn tspec(d_eff: f64) -> ThresholdSpec {
        ThresholdSpec {
            rho: 0.9,
            v: 1.0,
            d_eff,
            n_cars: 2,
        }
    }

    #[test]
    fn startup_b_lead_never_blocked() {
        let s = simulate_startup_b(&ThresholdSpec { n_cars: 50, ..tspec(1.0) }, 1e6, &mut seeded(7)).unwrap();
        assert_eq!(s.first_start[0], 0.0);
        assert_eq!(s.final_start[0], 0.0);
        assert_eq!(s.distance_to_lead[0], 0.0);
    }

    #[test]
    fn startup_b_wide_gap_moves_at_once() {
        let s = initial_positions_b(&tspec(1.0), vec![0.0, -1.5], 100.0).unwrap();
        assert_eq!(s.first_start, vec![0.0, 0.0]);
        assert_eq!(s.stop_counts, vec![0, 0]);
        assert!((s.distance_to_lead[1] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn startup_b_short_gap_waits() {
        let s = initial_positions_b(&tspec(1.0), vec![0.0, -0.25], 100.0).unwrap();
        assert!((s.first_start[1] - 0.75).abs() < 1e-12);
        assert!((s.distance_to_lead[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn startup_b_stop_and_restart() {
        // car 2 is stuck behind car 1; car 3 starts, catches up and stops
        let spec = ThresholdSpec { n_cars: 3, ..tspec(1.0) };
        let s = initial_positions_b(&spec, vec![0.0, -0.5, -1.8], 100.0).unwrap();
        assert_eq!(s.first_start[2], 0.0);
        assert_eq!(s.stop_counts[2], 1);
        // car 3 stops at t = 0.3 one d_eff behind car 2, which starts at 0.5
        assert!((s.final_start[1] - 0.5).abs() < 1e-12);
        assert!((s.final_start[2] - 0.5).abs() < 1e-12);
        assert!((s.distance_to_lead[2] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn startup_b_first_start_monotone_in_mean() {
        let spec = ThresholdSpec {
            rho: 0.9,
            v: 1.0,
            d_eff: 1.0,
            n_cars: 60,
        };
        let mut rng = seeded(8);
        let runs: Vec<StartupBSample> = (0..300).map(|_| simulate_startup_b(&spec, 1e6, &mut rng).unwrap()).collect();
        let means: Vec<f64> = (0..60)
            .map(|k| runs.iter().map(|r| r.first_start[k]).sum::<f64>() / runs.len() as f64)
            .collect();
        for k in (10..60).step_by(10) {
            assert!(means[k] >= means[k - 10], "{means:?}");
        }
        for r in &runs {
            for k in 0..60 {
                assert!(r.final_start[k] >= r.first_start[k]);
            }
        }
    }

    fn flow(lambda: f64, n: usize) -> VelocityFlowSpec {
        VelocityFlowSpec {
            n_cars: n,
            v_a: 1.0,
            v_b: 2.0,
            q_ab: 0.5,
            q_ba: 0.5,
            c1: 0.5,
            c2: 3.0,
            lambda_overtake: lambda,
            rho0: 1.0,
        }
    }

    #[test]
    fn flow_spec_validation() {
        assert!(VelocityFlowSpec { v_a: 0.4, ..flow(1.0, 3) }.validate().is_err());
        assert!(VelocityFlowSpec { lambda_overtake: f64::NAN, ..flow(1.0, 3) }.validate().is_err());
        assert!(flow(f64::INFINITY, 3).validate().is_ok());
    }

    #[test]
    fn flow_queue_without_overtaking() {
        let spec = flow(0.0, 30);
        let times: Vec<f64> = (1..=20).map(|k| k as f64 * 5.0).collect();
        let tr = simulate_velocity_flow(&spec, 100.0, &times, &mut seeded(9)).unwrap();
        assert_eq!(tr.overtakes, 0);
        for s in &tr.snapshots {
            assert_eq!(s.order, (0..30).collect::<Vec<_>>());
            assert!(s.contact_speeds_equal());
        }
        let last = tr.snapshots.last().unwrap();
        assert!(last.contact.iter().any(|c| *c));
    }

    #[test]
    fn flow_instant_overtaking_is_free() {
        let spec = flow(f64::INFINITY, 20);
        let tr = simulate_velocity_flow(&spec, 50.0, &[10.0, 50.0], &mut seeded(10)).unwrap();
        assert!(tr.overtakes > 0);
        for s in &tr.snapshots {
            assert_eq!(s.velocities, s.desired);
        }
    }

    #[test]
    fn flow_seed_determinism() {
        let spec = flow(0.7, 15);
        let a = simulate_velocity_flow(&spec, 30.0, &[30.0], &mut seeded(11)).unwrap();
        let b = simulate_velocity_flow(&spec, 30.0, &[30.0], &mut seeded(11)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn covariance_positive_in_queue() {
        // dense flow with no overtaking: cars 1 and 2 often share car 0's speed
        let spec = VelocityFlowSpec { rho0: 5.0, ..flow(0.0, 3) };
        let mut rng = seeded(12);
        let traces: Vec<_> = (0..400)
            .map(|_| simulate_velocity_flow(&spec, 20.0, &[20.0], &mut rng).unwrap())
            .collect();
        let c = covariance_estimate(&traces, 1, 2, 0).unwrap();
        assert!(c.mean > 3.0 * c.std_error, "{c:?}");
        let var = covariance_estimate(&traces, 1, 1, 0).unwrap();
        assert!(var.mean >= 0.0);
        assert!(covariance_estimate(&traces[..2], 0, 1, 0).is_err());
    }

    #[test]
    fn phase_sweep_rows() {
        let rows = phase_sweep(&flow(1.0, 10), &[f64::INFINITY, 0.0], 20.0, 60, &mut seeded(13)).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows[0].nn_covariance.abs() < 0.05);
        assert!(rows[1].mean_cluster_size >= rows[0].mean_cluster_size);
        let empty = phase_sweep(&flow(1.0, 0), &[1.0], 5.0, 10, &mut seeded(13)).unwrap();
        assert!(!empty[0].defined);
        assert!(phase_sweep(&flow(1.0, 5), &[], 5.0, 10, &mut seeded(13)).is_err());
    }
}
