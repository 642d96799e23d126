//! Mean speed on a single road: fast cars behind slow servers (tandem
//! M/M/1), a car crossing a space-time field of temporary obstacles, and a
//! fast car among slow cars with random routes.

use std::collections::BTreeMap;
use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution as _, Exp, Poisson};
use serde::Serialize;

use crate::dist::{Distribution, ResidualLife};
use crate::error::{Error, Result};
use crate::numeric::integrate_piecewise;

const QUAD_TOL: f64 = 1e-12;
const TAIL_P: f64 = 1.0 - 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TandemSpec {
    /// Fast-car density per unit length.
    pub lambda1: f64,
    /// Slow-car density per unit length.
    pub lambda2: f64,
    /// Overtaking rate.
    pub mu: f64,
    pub v1: f64,
    pub v2: f64,
}

impl TandemSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1.is_finite() && self.lambda1 >= 0.0) {
            return Err(Error::param("lambda1", "must be finite and >= 0"));
        }
        if !(self.lambda2.is_finite() && self.lambda2 > 0.0) {
            return Err(Error::param("lambda2", "must be finite and > 0"));
        }
        if !(self.mu.is_finite() && self.mu > 0.0) {
            return Err(Error::param("mu", "must be finite and > 0"));
        }
        if !(self.v2 >= 0.0 && self.v1 > self.v2 && self.v1.is_finite()) {
            return Err(Error::param("v1/v2", "need v1 > v2 >= 0"));
        }
        Ok(())
    }

    /// Speed relative to the slow cars.
    pub fn relative_speed(&self) -> f64 {
        self.v1 - self.v2
    }

    /// Server load `lambda1 (v1 - v2) / mu`.
    pub fn load(&self) -> f64 {
        self.lambda1 * self.relative_speed() / self.mu
    }

    fn stable(&self) -> Result<()> {
        self.validate()?;
        let r = self.load();
        if r >= 1.0 {
            return Err(Error::Unstable { load: r });
        }
        Ok(())
    }
}

/// Mean speed of fast cars relative to the slow ones:
/// `lambda2^-1 / ((mu - lambda1 v)^-1 + (lambda2 v)^-1)` with `v = v1 - v2`.
pub fn tandem_relative_speed(spec: &TandemSpec) -> Result<f64> {
    spec.stable()?;
    let v = spec.relative_speed();
    Ok((1.0 / spec.lambda2) / (1.0 / (spec.mu - spec.lambda1 * v) + 1.0 / (spec.lambda2 * v)))
}

/// Mean speed of fast cars in the road frame (relative speed plus `v2`).
pub fn tandem_mean_speed(spec: &TandemSpec) -> Result<f64> {
    Ok(tandem_relative_speed(spec)? + spec.v2)
}

/// Stationary queue-length law behind one slow car.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Mm1Law {
    pub r: f64,
    /// `P_n` for `n = 0..len`, truncated once the tail drops below `1e-12`.
    pub probs: Vec<f64>,
    /// Mean time from joining the queue to overtaking, `1 / (mu - lambda1 v)`.
    pub mean_overtake_time: f64,
}

impl Mm1Law {
    pub fn p(&self, n: usize) -> f64 {
        (1.0 - self.r) * self.r.powi(n as i32)
    }
}

pub fn mm1_queue_distribution(spec: &TandemSpec) -> Result<Mm1Law> {
    spec.stable()?;
    let r = spec.load();
    let mut probs = vec![1.0 - r];
    // tail beyond n is r^(n+1)
    let mut tail = r;
    while tail >= 1e-12 {
        probs.push((1.0 - r) * tail);
        tail *= r;
    }
    Ok(Mm1Law {
        r,
        probs,
        mean_overtake_time: 1.0 / (spec.mu - spec.lambda1 * spec.relative_speed()),
    })
}

/// Time-averaged queue-length law of a single M/M/1 server observed over
/// `events` transitions, started empty.
pub fn simulate_mm1<R: Rng + ?Sized>(
    arrival_rate: f64,
    service_rate: f64,
    events: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if !(arrival_rate > 0.0 && service_rate > 0.0) {
        return Err(Error::param("rates", "arrival and service rates must be > 0"));
    }
    let mut occupancy: Vec<f64> = vec![0.0];
    let mut n = 0usize;
    for _ in 0..events {
        let total = arrival_rate + if n > 0 { service_rate } else { 0.0 };
        let dt = Exp::new(total).expect("positive rate").sample(rng);
        occupancy[n] += dt;
        if rng.random::<f64>() * total < arrival_rate {
            n += 1;
            if n == occupancy.len() {
                occupancy.push(0.0);
            }
        } else {
            n -= 1;
        }
    }
    let total: f64 = occupancy.iter().sum();
    Ok(occupancy.into_iter().map(|x| x / total).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TandemRun {
    /// Road-frame speed of each tagged car.
    pub speeds: Vec<f64>,
    pub servers: usize,
    pub road_length: f64,
}

impl TandemRun {
    /// Total distance over total time across tagged cars.
    pub fn mean_speed(&self) -> f64 {
        self.speeds.iter().sum::<f64>() / self.speeds.len() as f64
    }
}

/// Discrete-event run of the tandem: slow cars are FIFO exponential servers
/// at exponential spacings on `[0, road_length]` (relative frame), fast cars
/// join the first one as a Poisson stream. The first `warmup` cars fill the
/// queues; the next `tagged` cars are measured.
pub fn simulate_tandem<R: Rng + ?Sized>(
    spec: &TandemSpec,
    road_length: f64,
    warmup: usize,
    tagged: usize,
    rng: &mut R,
) -> Result<TandemRun> {
    spec.stable()?;
    if spec.lambda1 == 0.0 {
        return Err(Error::param("lambda1", "simulation needs a positive fast-car density"));
    }
    if road_length.is_nan() || road_length <= 0.0 || tagged == 0 {
        return Err(Error::param("road_length/tagged", "need a positive road and tagged cars"));
    }
    let v = spec.relative_speed();
    let spacing = Exp::new(spec.lambda2).expect("positive rate");
    let mut servers = vec![0.0];
    loop {
        let next = servers[servers.len() - 1] + spacing.sample(rng);
        if next > road_length {
            break;
        }
        servers.push(next);
    }
    let k = servers.len();
    let service = Exp::new(spec.mu).expect("positive rate");
    let arrivals = Exp::new(spec.lambda1 * v).expect("positive rate");
    let mut last_departure = vec![f64::NEG_INFINITY; k];
    let mut a0 = 0.0;
    let mut speeds = Vec::with_capacity(tagged);
    let distance = servers[k - 1];
    for i in 0..warmup + tagged {
        a0 += arrivals.sample(rng);
        let mut a = a0;
        let mut d = a0;
        for s in 0..k {
            d = a.max(last_departure[s]) + service.sample(rng);
            last_departure[s] = d;
            if s + 1 < k {
                a = d + (servers[s + 1] - servers[s]) / v;
            }
        }
        if i >= warmup {
            let time = d - a0;
            speeds.push(if distance > 0.0 { distance / time + spec.v2 } else { spec.v2 });
        }
    }
    Ok(TandemRun {
        speeds,
        servers: k,
        road_length: distance,
    })
}

/// Density `h(t) = m_Q^-1 (1 - Q(t))` of the residual lifetime.
pub fn residual_life_density(q: &Distribution) -> Result<ResidualLife> {
    q.residual_life()
}

/// `E min(X, Y)` for independent `X ~ x` and `Y ~ y` by quadrature of the
/// survival product up to the `1 - 1e-10` quantile.
fn expected_min(x: &Distribution, y: &ResidualLife) -> f64 {
    if matches!(x, Distribution::Never) {
        return y.mean();
    }
    let mut upper = y.quantile(TAIL_P);
    let xq = x.quantile(TAIL_P);
    if xq.is_finite() {
        upper = upper.min(xq);
    }
    if upper <= 0.0 {
        return 0.0;
    }
    let mut cuts = x.breakpoints();
    cuts.extend(y.breakpoints());
    integrate_piecewise(&|s: f64| x.survival(s) * y.survival(s), 0.0, upper, &cuts, QUAD_TOL)
}

fn check_lifetime(q: &Distribution, field: &str) -> Result<()> {
    q.validate()?;
    let (m, m2) = (q.mean(), q.second_moment());
    if !(m.is_finite() && m > 0.0 && m2.is_finite()) {
        return Err(Error::param(field, "needs finite positive mean and finite second moment"));
    }
    Ok(())
}

/// `a = E min(eta, zeta)` with `eta ~ F` and `zeta` the residual lifetime of `Q`.
pub fn obstacle_delay_mean(q: &Distribution, f: &Distribution) -> Result<f64> {
    check_lifetime(q, "q")?;
    f.validate()?;
    Ok(expected_min(f, &q.residual_life()?))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObstacleRoadSpec {
    /// Space-time intensity of obstacle appearance.
    pub lambda: f64,
    /// Obstacle lifetime.
    pub q: Distribution,
    /// Bypass time; `Never` means bypass is prohibited.
    pub f: Distribution,
    pub v: f64,
}

impl ObstacleRoadSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::param("lambda", "must be finite and >= 0"));
        }
        if !(self.v.is_finite() && self.v > 0.0) {
            return Err(Error::param("v", "must be finite and > 0"));
        }
        check_lifetime(&self.q, "q")?;
        self.f.validate()
    }

    /// Spatial density of obstacles met along any line, `lambda m_Q`.
    pub fn b(&self) -> f64 {
        self.lambda * self.q.mean()
    }
}

/// `v / (1 + a b v)`.
pub fn mean_speed_obstacles(spec: &ObstacleRoadSpec) -> Result<f64> {
    spec.validate()?;
    if spec.lambda == 0.0 {
        return Ok(spec.v);
    }
    let a = obstacle_delay_mean(&spec.q, &spec.f)?;
    Ok(spec.v / (1.0 + a * spec.b() * spec.v))
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct FieldPoint {
    id: u64,
    x: f64,
    t: f64,
    mark: f64,
}

/// Marked Poisson field on the plane, generated cell by cell on demand.
struct LazyField {
    rate: f64,
    hx: f64,
    ht: f64,
    marks: Distribution,
    cells: BTreeMap<(i64, i64), Vec<FieldPoint>>,
    next_id: u64,
}

impl LazyField {
    fn new(lambda: f64, hx: f64, ht: f64, marks: Distribution) -> Self {
        Self {
            rate: lambda * hx * ht,
            hx,
            ht,
            marks,
            cells: BTreeMap::new(),
            next_id: 0,
        }
    }

    fn for_each_in<R: Rng + ?Sized, F: FnMut(&FieldPoint)>(
        &mut self,
        (x0, x1): (f64, f64),
        (t0, t1): (f64, f64),
        rng: &mut R,
        mut f: F,
    ) {
        let (ix0, ix1) = ((x0 / self.hx).floor() as i64, (x1 / self.hx).floor() as i64);
        let (it0, it1) = ((t0 / self.ht).floor() as i64, (t1 / self.ht).floor() as i64);
        for ix in ix0..=ix1 {
            for it in it0..=it1 {
                let cell = match self.cells.get(&(ix, it)) {
                    Some(c) => c,
                    None => {
                        let pts = self.generate(ix, it, rng);
                        self.cells.entry((ix, it)).or_insert(pts)
                    }
                };
                for p in cell {
                    if p.x >= x0 && p.x <= x1 && p.t >= t0 && p.t <= t1 {
                        f(p);
                    }
                }
            }
        }
    }

    fn generate<R: Rng + ?Sized>(&mut self, ix: i64, it: i64, rng: &mut R) -> Vec<FieldPoint> {
        if self.rate <= 0.0 {
            return Vec::new();
        }
        let n = Poisson::new(self.rate).expect("positive mean").sample(rng) as usize;
        (0..n)
            .map(|_| {
                let x = (ix as f64 + rng.random::<f64>()) * self.hx;
                let t = (it as f64 + rng.random::<f64>()) * self.ht;
                let mark = self.marks.sample(rng);
                self.next_id += 1;
                FieldPoint {
                    id: self.next_id,
                    x,
                    t,
                    mark,
                }
            })
            .collect()
    }

    /// Drops cells lying entirely left of `x`.
    fn prune_before(&mut self, x: f64) {
        let keep = (x / self.hx).floor() as i64;
        while let Some((&(ix, _), _)) = self.cells.first_key_value() {
            if ix >= keep {
                break;
            }
            self.cells.pop_first();
        }
    }
}

/// One obstacle met by the car.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Encounter {
    pub x: f64,
    /// Time lost at this obstacle.
    pub delay: f64,
    /// Remaining lifetime of the obstacle when the car arrived.
    pub residual: f64,
    pub bypassed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObstacleRun {
    pub x: f64,
    pub t: f64,
    pub idle: f64,
    pub encounters: Vec<Encounter>,
}

impl ObstacleRun {
    pub fn mean_speed(&self) -> f64 {
        self.x / self.t
    }

    /// Delay log as CSV `encounter_x,delay`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "encounter_x,delay")?;
        for e in &self.encounters {
            writeln!(out, "{},{}", e.x, e.delay)?;
        }
        Ok(())
    }
}

/// Look-back span for the lazy field. A point older than this is alive
/// with probability 1e-12 or less, so skipping it is invisible at any
/// simulated length we run.
const GUARD_P: f64 = 1.0 - 1e-12;

fn guard(d: &Distribution) -> f64 {
    d.quantile(GUARD_P).max(f64::MIN_POSITIVE)
}

/// Drives one car from `(0, 0)` to `x_max` through the obstacle field. The
/// field is stationary: obstacles born before the car set off are present.
pub fn simulate_obstacle_road<R: Rng + ?Sized>(
    spec: &ObstacleRoadSpec,
    x_max: f64,
    rng: &mut R,
) -> Result<ObstacleRun> {
    spec.validate()?;
    if !(x_max.is_finite() && x_max > 0.0) {
        return Err(Error::param("x_max", "must be finite and > 0"));
    }
    let v = spec.v;
    let mut run = ObstacleRun {
        x: 0.0,
        t: 0.0,
        idle: 0.0,
        encounters: Vec::new(),
    };
    if spec.lambda == 0.0 {
        run.x = x_max;
        run.t = x_max / v;
        return Ok(run);
    }
    let b = spec.b();
    let step = (2.0 / b).min(x_max);
    let g = guard(&spec.q);
    let mut field = LazyField::new(spec.lambda, step, step / v, spec.q.clone());
    let (mut x, mut t) = (0.0, 0.0);
    while x < x_max {
        let xe = (x + step).min(x_max);
        let t_hi = t + (xe - x) / v;
        let mut best: Option<(f64, f64)> = None;
        field.for_each_in((x, xe), (t - g, t_hi), rng, |p| {
            if p.x <= x {
                return;
            }
            let s = t + (p.x - x) / v;
            if p.t <= s && s < p.t + p.mark && best.is_none_or(|(bx, _)| p.x < bx) {
                best = Some((p.x, p.t + p.mark - s));
            }
        });
        match best {
            None => {
                x = xe;
                t = t_hi;
            }
            Some((xj, residual)) => {
                let s = t + (xj - x) / v;
                let eta = spec.f.sample(rng);
                let delay = eta.min(residual);
                run.encounters.push(Encounter {
                    x: xj,
                    delay,
                    residual,
                    bypassed: eta < residual,
                });
                run.idle += delay;
                x = xj;
                t = s + delay;
            }
        }
        field.prune_before(x - step);
    }
    run.x = x;
    run.t = t;
    Ok(run)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlowCarRoadSpec {
    /// Space-time intensity of slow-car entries.
    pub lambda: f64,
    /// Route length of a slow car.
    pub g: Distribution,
    /// Time to overtake; `Never` means overtaking is prohibited.
    pub f: Distribution,
    pub v1: f64,
    pub v2: f64,
}

impl SlowCarRoadSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::param("lambda", "must be finite and >= 0"));
        }
        if !(self.v2 > 0.0 && self.v1 >= self.v2 && self.v1.is_finite()) {
            return Err(Error::param("v1/v2", "need v1 >= v2 > 0"));
        }
        check_lifetime(&self.g, "g")?;
        self.f.validate()
    }

    /// `d = lambda m_G (1/v2 - 1/v1)`.
    pub fn d(&self) -> f64 {
        self.lambda * self.g.mean() * (1.0 / self.v2 - 1.0 / self.v1)
    }

    /// `c = E min(v2 tau, beta)`, `beta` the residual route length.
    pub fn c(&self) -> Result<f64> {
        self.validate()?;
        Ok(expected_min(&self.f.scaled(self.v2)?, &self.g.residual_life()?))
    }

    /// The same road seen from a frame moving with the slow cars: slow cars
    /// become standing obstacles with lifetime `route / v2`.
    pub fn moving_frame(&self) -> Result<ObstacleRoadSpec> {
        self.validate()?;
        if self.v1 == self.v2 {
            return Err(Error::Domain("no relative motion between fast and slow cars".into()));
        }
        Ok(ObstacleRoadSpec {
            lambda: self.lambda,
            q: self.g.scaled(1.0 / self.v2)?,
            f: self.f.clone(),
            v: self.v1 - self.v2,
        })
    }
}

/// `(1 + d c) / (1 + d c v1 / v2) * v1`.
pub fn mean_speed_slow_cars(spec: &SlowCarRoadSpec) -> Result<f64> {
    spec.validate()?;
    let d = spec.d();
    if d == 0.0 {
        return Ok(spec.v1);
    }
    let dc = d * spec.c()?;
    Ok((1.0 + dc) / (1.0 + dc * spec.v1 / spec.v2) * spec.v1)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlowCarRun {
    pub x: f64,
    pub t: f64,
    pub catches: usize,
    pub overtakes: usize,
}

impl SlowCarRun {
    pub fn mean_speed(&self) -> f64 {
        self.x / self.t
    }
}

/// One fast car from `(0, 0)` to `x_max` in the road frame. Slow cars enter
/// at the points of a stationary space-time Poisson field and drive their
/// route at `v2`. A caught fast car trails at `v2` until it overtakes after
/// a draw from `F` or the slow car leaves, whichever comes first.
pub fn simulate_slow_car_road<R: Rng + ?Sized>(
    spec: &SlowCarRoadSpec,
    x_max: f64,
    rng: &mut R,
) -> Result<SlowCarRun> {
    spec.validate()?;
    if spec.v1 == spec.v2 {
        return Err(Error::Domain("simulation needs v1 > v2".into()));
    }
    if !(x_max.is_finite() && x_max > 0.0) {
        return Err(Error::param("x_max", "must be finite and > 0"));
    }
    let (v1, v2) = (spec.v1, spec.v2);
    let mut run = SlowCarRun {
        x: x_max,
        t: x_max / v1,
        catches: 0,
        overtakes: 0,
    };
    if spec.lambda == 0.0 {
        return Ok(run);
    }
    let route_guard = guard(&spec.g);
    let density = spec.lambda * spec.g.mean() / v2;
    let step = (2.0 / density).min(x_max);
    let mut field = LazyField::new(spec.lambda, step, step / v2, spec.g.clone());
    let (mut x, mut t) = (0.0, 0.0);
    let mut released: Option<u64> = None;
    while x < x_max {
        let xe = (x + step).min(x_max);
        let t_hi = t + (xe - x) / v1;
        let mut best: Option<(f64, FieldPoint)> = None;
        field.for_each_in((x - route_guard, xe), (t - route_guard / v2, t_hi), rng, |p| {
            if Some(p.id) == released {
                return;
            }
            let s = (p.x - x + v1 * t - v2 * p.t) / (v1 - v2);
            let exit = p.t + p.mark / v2;
            if s < t || s < p.t || s > exit {
                return;
            }
            if x + v1 * (s - t) > xe {
                return;
            }
            if best.is_none_or(|(bs, _)| s < bs) {
                best = Some((s, *p));
            }
        });
        match best {
            None => {
                x = xe;
                t = t_hi;
            }
            Some((s, p)) => {
                run.catches += 1;
                let y = x + v1 * (s - t);
                let exit = p.t + p.mark / v2;
                let tau = spec.f.sample(rng);
                let release = if s + tau < exit {
                    run.overtakes += 1;
                    s + tau
                } else {
                    exit
                };
                let x_rel = y + v2 * (release - s);
                if x_rel >= x_max {
                    t = s + (x_max - y) / v2;
                    x = x_max;
                } else {
                    x = x_rel;
                    t = release;
                }
                released = Some(p.id);
            }
        }
        field.prune_before(x - route_guard - step);
    }
    run.t = t;
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::adaptive_simpson;
    use crate::rng::seeded;
    use crate::stats::{ks_one_sample, total_variation, Estimate};

    fn tandem() -> TandemSpec {
        TandemSpec {
            lambda1: 0.1,
            lambda2: 0.2,
            mu: 1.0,
            v1: 1.0,
            v2: 0.0,
        }
    }

    #[test]
    fn tandem_reference_value() {
        let v = tandem_mean_speed(&tandem()).unwrap();
        assert!((v - 5.0 / (1.0 / 0.9 + 5.0)).abs() < 1e-14);
        assert_eq!(format!("{v:.4}"), "0.8182");
    }

    #[test]
    fn tandem_fast_service_limit() {
        let v = tandem_mean_speed(&TandemSpec { mu: 1e9, ..tandem() }).unwrap();
        assert!((v - 1.0).abs() < 1e-6);
    }

    #[test]
    fn tandem_frame_shift() {
        let moving = TandemSpec { v1: 1.5, v2: 0.5, ..tandem() };
        let rel = tandem_relative_speed(&moving).unwrap();
        assert!((tandem_mean_speed(&moving).unwrap() - rel - 0.5).abs() < 1e-15);
        assert!((rel - tandem_mean_speed(&tandem()).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn tandem_unstable() {
        let s = TandemSpec { lambda1: 1.0, ..tandem() };
        assert!(matches!(tandem_mean_speed(&s), Err(Error::Unstable { .. })));
        assert!(mm1_queue_distribution(&s).is_err());
    }

    #[test]
    fn mm1_law() {
        let half = mm1_queue_distribution(&TandemSpec { lambda1: 0.5, ..tandem() }).unwrap();
        assert!((half.probs[0] - 0.5).abs() < 1e-15);
        assert!((half.probs[1] - 0.25).abs() < 1e-15);
        assert!((half.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((half.mean_overtake_time - 2.0).abs() < 1e-15);
        let empty = mm1_queue_distribution(&TandemSpec { lambda1: 0.0, ..tandem() }).unwrap();
        assert_eq!(empty.probs, vec![1.0]);
    }

    #[test]
    fn mm1_simulation_matches_geometric() {
        let law = mm1_queue_distribution(&TandemSpec { lambda1: 0.5, ..tandem() }).unwrap();
        let emp = simulate_mm1(0.5, 1.0, 1_000_000, &mut seeded(1)).unwrap();
        assert!(total_variation(&emp, &law.probs) < 0.01);
    }

    #[test]
    fn tandem_simulation_agrees() {
        let spec = tandem();
        let run = simulate_tandem(&spec, 1e5, 100, 100, &mut seeded(2)).unwrap();
        let exact = tandem_mean_speed(&spec).unwrap();
        assert!((run.mean_speed() - exact).abs() / exact < 0.02);
    }

    #[test]
    fn residual_density_examples() {
        let h = residual_life_density(&Distribution::exponential(1.0).unwrap()).unwrap();
        assert!((h.density(0.7) - (-0.7f64).exp()).abs() < 1e-15);
        assert!((h.mean() - 1.0).abs() < 1e-15);
        let det = residual_life_density(&Distribution::deterministic(2.0).unwrap()).unwrap();
        assert!((det.density(1.0) - 0.5).abs() < 1e-15);
        assert_eq!(det.density(2.5), 0.0);
        assert!((det.mean() - 1.0).abs() < 1e-15);
        let uni = residual_life_density(&Distribution::uniform(0.0, 1.0).unwrap()).unwrap();
        let mass = adaptive_simpson(&|t: f64| uni.density(t), 0.0, 1.0, 1e-13);
        let mean = adaptive_simpson(&|t: f64| t * uni.density(t), 0.0, 1.0, 1e-13);
        assert!((mass - 1.0).abs() < 1e-10);
        assert!((mean - 1.0 / 3.0).abs() < 1e-10);
        assert!((uni.mean() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn delay_mean_examples() {
        let e1 = Distribution::exponential(1.0).unwrap();
        assert!((obstacle_delay_mean(&e1, &Distribution::Never).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(obstacle_delay_mean(&e1, &Distribution::deterministic(0.0).unwrap()).unwrap(), 0.0);
        assert!((obstacle_delay_mean(&e1, &e1).unwrap() - 0.5).abs() < 1e-10);
        // deterministic(2) lifetime, bypass in 1: E min(1, U(0,2)) = 3/4
        let a = obstacle_delay_mean(
            &Distribution::deterministic(2.0).unwrap(),
            &Distribution::deterministic(1.0).unwrap(),
        )
        .unwrap();
        assert!((a - 0.75).abs() < 1e-10);
        assert!(obstacle_delay_mean(&Distribution::Never, &e1).is_err());
    }

    fn obstacles(lambda: f64, f: Distribution) -> ObstacleRoadSpec {
        ObstacleRoadSpec {
            lambda,
            q: Distribution::exponential(1.0).unwrap(),
            f,
            v: 1.0,
        }
    }

    #[test]
    fn theorem_one_reference_value() {
        assert_eq!(mean_speed_obstacles(&obstacles(0.0, Distribution::Never)).unwrap(), 1.0);
        let v = mean_speed_obstacles(&obstacles(0.5, Distribution::Never)).unwrap();
        assert!((v - 2.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn obstacle_speed_monotone() {
        let mut prev = f64::INFINITY;
        for lambda in [0.1, 0.2, 0.4, 0.8] {
            let v = mean_speed_obstacles(&obstacles(lambda, Distribution::Never)).unwrap();
            assert!(v < prev);
            prev = v;
        }
        // larger m_Q, then larger second moment at fixed mean
        let base = ObstacleRoadSpec {
            q: Distribution::deterministic(1.0).unwrap(),
            ..obstacles(0.3, Distribution::Never)
        };
        let longer = ObstacleRoadSpec {
            q: Distribution::deterministic(2.0).unwrap(),
            ..base.clone()
        };
        let spread = ObstacleRoadSpec {
            q: Distribution::uniform(0.0, 2.0).unwrap(),
            ..base.clone()
        };
        let v = mean_speed_obstacles(&base).unwrap();
        assert!(mean_speed_obstacles(&longer).unwrap() < v);
        assert!(mean_speed_obstacles(&spread).unwrap() < v);
    }

    #[test]
    fn empty_obstacle_road() {
        let run = simulate_obstacle_road(&obstacles(0.0, Distribution::Never), 100.0, &mut seeded(3)).unwrap();
        assert_eq!(run.t, 100.0);
        assert!(run.encounters.is_empty());
    }

    #[test]
    fn obstacle_road_bookkeeping_and_lemmas() {
        let spec = obstacles(0.5, Distribution::Never);
        let run = simulate_obstacle_road(&spec, 2e4, &mut seeded(41)).unwrap();
        let logged: f64 = run.encounters.iter().map(|e| e.delay).sum();
        assert!((run.t - run.x / spec.v - logged).abs() < 1e-9 * run.t);
        assert!((run.idle - logged).abs() < 1e-9 * run.t);
        let mut prev = 0.0;
        let gaps: Vec<f64> = run
            .encounters
            .iter()
            .map(|e| {
                let g = e.x - prev;
                prev = e.x;
                g
            })
            .collect();
        let b = spec.b();
        assert!(ks_one_sample(&gaps, |g| 1.0 - (-b * g).exp()).passes(0.01));
        let delays: Vec<f64> = run.encounters.iter().map(|e| e.delay).collect();
        let h = spec.q.residual_life().unwrap();
        assert!(ks_one_sample(&delays, |s| h.cdf(s)).passes(0.01));
    }

    #[test]
    fn obstacle_road_speed_with_bypass() {
        let spec = obstacles(0.5, Distribution::exponential(1.0).unwrap());
        let exact = mean_speed_obstacles(&spec).unwrap();
        let mut rng = seeded(5);
        let speeds: Vec<f64> = (0..8)
            .map(|_| simulate_obstacle_road(&spec, 2e4, &mut rng).unwrap().mean_speed())
            .collect();
        let est = Estimate::from_samples(&speeds);
        assert!(est.relative_error(exact) < 0.01, "{est:?} vs {exact}");
    }

    fn slow(lambda: f64, f: Distribution) -> SlowCarRoadSpec {
        SlowCarRoadSpec {
            lambda,
            g: Distribution::exponential(1.0).unwrap(),
            f,
            v1: 2.0,
            v2: 1.0,
        }
    }

    #[test]
    fn theorem_two_reference_value() {
        let spec = slow(0.2, Distribution::exponential(1.0).unwrap());
        assert!((spec.d() - 0.1).abs() < 1e-15);
        assert!((spec.c().unwrap() - 0.5).abs() < 1e-10);
        let v = mean_speed_slow_cars(&spec).unwrap();
        assert!((v - 2.0 * 1.05 / 1.1).abs() < 1e-10);
    }

    #[test]
    fn theorem_two_trivial_limits() {
        let equal = SlowCarRoadSpec {
            v2: 2.0,
            ..slow(0.2, Distribution::Never)
        };
        assert_eq!(mean_speed_slow_cars(&equal).unwrap(), 2.0);
        let instant = slow(0.2, Distribution::deterministic(0.0).unwrap());
        assert_eq!(mean_speed_slow_cars(&instant).unwrap(), 2.0);
    }

    #[test]
    fn frame_change_identity() {
        for f in [
            Distribution::exponential(1.0).unwrap(),
            Distribution::Never,
            Distribution::deterministic(0.7).unwrap(),
            Distribution::uniform(0.0, 3.0).unwrap(),
        ] {
            for (v1, v2) in [(2.0, 1.0), (3.0, 0.5), (1.2, 1.1)] {
                let spec = SlowCarRoadSpec { v1, v2, ..slow(0.2, f.clone()) };
                let direct = mean_speed_slow_cars(&spec).unwrap();
                let moving = mean_speed_obstacles(&spec.moving_frame().unwrap()).unwrap();
                assert!((direct - (v2 + moving)).abs() < 1e-10, "{f} {v1} {v2}");
            }
        }
    }

    #[test]
    fn slow_car_simulation_agrees() {
        let spec = slow(0.2, Distribution::exponential(1.0).unwrap());
        let exact = mean_speed_slow_cars(&spec).unwrap();
        let mut rng = seeded(6);
        let speeds: Vec<f64> = (0..6)
            .map(|_| simulate_slow_car_road(&spec, 2e4, &mut rng).unwrap().mean_speed())
            .collect();
        let est = Estimate::from_samples(&speeds);
        assert!(est.relative_error(exact) < 0.02, "{est:?} vs {exact}");
    }

    #[test]
    fn slow_car_bounds_without_overtaking() {
        let spec = SlowCarRoadSpec {
            g: Distribution::uniform(0.0, 0.5).unwrap(),
            ..slow(0.5, Distribution::Never)
        };
        let run = simulate_slow_car_road(&spec, 5e3, &mut seeded(7)).unwrap();
        assert!(run.catches > 0);
        assert_eq!(run.overtakes, 0);
        let v = run.mean_speed();
        assert!(v > 1.0 && v < 2.0);
        let empty = simulate_slow_car_road(&slow(0.0, Distribution::Never), 10.0, &mut seeded(7)).unwrap();
        assert_eq!(empty.t, 5.0);
    }
}
