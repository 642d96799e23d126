//! Random-grammar car dynamics: a continuous-time Markov chain on words
//! over `{0, 1, 2}` (empty cell, fast driver, quiet driver).
//!
//! Words are written back-to-front, `s_N ... s_2 s_1`, with `s_1` the front
//! cell at coordinate `r`; cell `s_k` sits at `r - k + 1`. Substitutions,
//! in the same orientation:
//!
//! | rule | pattern              | intensity  |
//! |------|----------------------|------------|
//! | 1    | `10 -> 01`           | `lambda0+` |
//! | 2    | `120 -> 021`         | `lambda1+` |
//! | 3    | `22 -> 202`, `21 -> 201` | `lambda2-` |
//! | 4    | `200 -> 020`         | `lambda2+` |
//!
//! plus a global drift `r -> r + 1` at rate `v`.
//!
//! Two topologies are supported. A *free* word is a single cluster: rules
//! only match inside the word, and zeros left at the back are trimmed. A
//! *ring* word is periodic; patterns wrap around, and rule 3 grows the ring
//! by one cell.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::Estimate;

const EMPTY: u8 = 0;
const FAST: u8 = 1;
const QUIET: u8 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrammarSpec {
    pub lambda0_plus: f64,
    pub lambda1_plus: f64,
    pub lambda2_plus: f64,
    pub lambda2_minus: f64,
    /// Drift of the whole group, cells per unit time.
    pub v: f64,
}

impl GrammarSpec {
    pub fn new(
        lambda0_plus: f64,
        lambda1_plus: f64,
        lambda2_plus: f64,
        lambda2_minus: f64,
        v: f64,
    ) -> Result<Self> {
        let s = Self {
            lambda0_plus,
            lambda1_plus,
            lambda2_plus,
            lambda2_minus,
            v,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, x) in [
            ("lambda0_plus", self.lambda0_plus),
            ("lambda1_plus", self.lambda1_plus),
            ("lambda2_plus", self.lambda2_plus),
            ("lambda2_minus", self.lambda2_minus),
            ("v", self.v),
        ] {
            if !(x.is_finite() && x >= 0.0) {
                return Err(Error::param(name, "intensities must be finite and >= 0"));
            }
        }
        Ok(())
    }

    pub fn is_frozen(&self) -> bool {
        self.lambda0_plus == 0.0
            && self.lambda1_plus == 0.0
            && self.lambda2_plus == 0.0
            && self.lambda2_minus == 0.0
            && self.v == 0.0
    }
}

/// True when the dynamics reduces to TASEP: `lambda0+ = lambda1+` and `lambda2- = 0`.
pub fn tasep_mode_check(spec: &GrammarSpec) -> bool {
    spec.lambda0_plus == spec.lambda1_plus && spec.lambda2_minus == 0.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    Drift,
    Advance,
    Overtake,
    Brake,
    Accelerate,
}

impl Rule {
    pub fn id(&self) -> &'static str {
        match self {
            Rule::Drift => "drift",
            Rule::Advance => "1",
            Rule::Overtake => "2",
            Rule::Brake => "3",
            Rule::Accelerate => "4",
        }
    }
}

/// An enabled transition. `position` is the paper index `k` of the acting
/// cell `s_k` (the car that moves or brakes); 0 for the drift.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Event {
    pub rule: Rule,
    pub position: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    Free,
    Ring,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrammarState {
    /// Front-first: `cells[0]` is `s_1`.
    cells: Vec<u8>,
    pub r: i64,
    pub t: f64,
    topology: Topology,
}

impl GrammarState {
    /// Builds a state from a back-to-front word such as `"1202"`.
    pub fn free(word: &str, r: i64) -> Result<Self> {
        let s = Self {
            cells: parse_word(word)?,
            r,
            t: 0.0,
            topology: Topology::Free,
        };
        if s.cells.is_empty() {
            return Err(Error::param("word", "word must be nonempty"));
        }
        if s.cells[0] == EMPTY {
            return Err(Error::param("word", "front symbol s_1 must not be 0"));
        }
        Ok(s)
    }

    pub fn ring(word: &str) -> Result<Self> {
        let cells = parse_word(word)?;
        if cells.len() < 3 {
            return Err(Error::param("word", "ring needs at least 3 cells"));
        }
        Ok(Self {
            cells,
            r: 0,
            t: 0.0,
            topology: Topology::Ring,
        })
    }

    pub fn topology(&self) -> Topology {
        self.topology
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Symbol `s_k`, `k >= 1`.
    pub fn symbol(&self, k: usize) -> u8 {
        self.cells[k - 1]
    }

    /// Coordinate of `s_k`: `r - k + 1`.
    pub fn coordinate(&self, k: usize) -> i64 {
        self.r - k as i64 + 1
    }

    /// Number of cells holding each symbol `[0s, 1s, 2s]`.
    pub fn counts(&self) -> [usize; 3] {
        let mut c = [0; 3];
        for s in &self.cells {
            c[*s as usize] += 1;
        }
        c
    }

    pub fn word(&self) -> String {
        self.to_string()
    }

    fn at(&self, i: usize, ahead: usize) -> Option<u8> {
        match self.topology {
            Topology::Free => i.checked_sub(ahead).map(|j| self.cells[j]),
            Topology::Ring => {
                let n = self.cells.len();
                Some(self.cells[(i + n - ahead % n) % n])
            }
        }
    }

    fn index_ahead(&self, i: usize, ahead: usize) -> usize {
        let n = self.cells.len();
        (i + n - ahead % n) % n
    }
}

impl fmt::Display for GrammarState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in self.cells.iter().rev() {
            write!(f, "{s}")?;
        }
        Ok(())
    }
}

fn parse_word(word: &str) -> Result<Vec<u8>> {
    word.trim()
        .chars()
        .rev()
        .map(|c| match c {
            '0' => Ok(EMPTY),
            '1' => Ok(FAST),
            '2' => Ok(QUIET),
            _ => Err(Error::param("word", format!("symbol `{c}` not in {{0,1,2}}"))),
        })
        .collect()
}

impl FromStr for GrammarState {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::free(s, 0)
    }
}

/// Every enabled transition with its intensity. Zero-rate matches are omitted.
pub fn enabled_events(state: &GrammarState, spec: &GrammarSpec) -> Vec<Event> {
    let mut out = Vec::new();
    if spec.v > 0.0 {
        out.push(Event {
            rule: Rule::Drift,
            position: 0,
            rate: spec.v,
        });
    }
    for i in 0..state.cells.len() {
        let k = i + 1;
        match state.cells[i] {
            FAST => {
                let a1 = state.at(i, 1);
                if spec.lambda0_plus > 0.0 && a1 == Some(EMPTY) {
                    out.push(Event {
                        rule: Rule::Advance,
                        position: k,
                        rate: spec.lambda0_plus,
                    });
                }
                if spec.lambda1_plus > 0.0 && a1 == Some(QUIET) && state.at(i, 2) == Some(EMPTY) {
                    out.push(Event {
                        rule: Rule::Overtake,
                        position: k,
                        rate: spec.lambda1_plus,
                    });
                }
            }
            QUIET => {
                let a1 = state.at(i, 1);
                if spec.lambda2_minus > 0.0 && matches!(a1, Some(FAST) | Some(QUIET)) {
                    out.push(Event {
                        rule: Rule::Brake,
                        position: k,
                        rate: spec.lambda2_minus,
                    });
                }
                if spec.lambda2_plus > 0.0 && a1 == Some(EMPTY) && state.at(i, 2) == Some(EMPTY) {
                    out.push(Event {
                        rule: Rule::Accelerate,
                        position: k,
                        rate: spec.lambda2_plus,
                    });
                }
            }
            _ => {}
        }
    }
    out
}

/// Applies an enabled event in place and returns the forward displacement
/// (in cells, relative to the word frame) of the acting car.
fn apply(state: &mut GrammarState, event: &Event) -> i64 {
    let i = event.position.wrapping_sub(1);
    let moved = match event.rule {
        Rule::Drift => {
            state.r += 1;
            0
        }
        Rule::Advance => {
            let j = state.index_ahead(i, 1);
            state.cells.swap(i, j);
            1
        }
        Rule::Overtake => {
            let j = state.index_ahead(i, 2);
            state.cells.swap(i, j);
            2
        }
        Rule::Accelerate => {
            let j = state.index_ahead(i, 1);
            state.cells.swap(i, j);
            1
        }
        Rule::Brake => {
            // a new empty cell opens in front of the braking car; it and
            // everything behind it move one cell back
            state.cells.insert(i, EMPTY);
            -1
        }
    };
    if state.topology == Topology::Free {
        while state.cells.len() > 1 && state.cells.last() == Some(&EMPTY) {
            state.cells.pop();
        }
    }
    moved
}

/// One CTMC transition: exponential holding time at the total rate, then
/// an event chosen proportionally to its intensity.
pub fn step<R: Rng + ?Sized>(
    state: &mut GrammarState,
    spec: &GrammarSpec,
    rng: &mut R,
) -> Result<Event> {
    step_with_displacement(state, spec, rng).map(|(e, _)| e)
}

fn step_with_displacement<R: Rng + ?Sized>(
    state: &mut GrammarState,
    spec: &GrammarSpec,
    rng: &mut R,
) -> Result<(Event, i64)> {
    let events = enabled_events(state, spec);
    let total: f64 = events.iter().map(|e| e.rate).sum();
    if events.is_empty() || total <= 0.0 {
        return Err(Error::Absorbed { time: state.t });
    }
    let u: f64 = 1.0 - rng.random::<f64>();
    state.t += -u.ln() / total;
    let mut pick = rng.random::<f64>() * total;
    let mut chosen = events[events.len() - 1];
    for e in &events {
        if pick < e.rate {
            chosen = *e;
            break;
        }
        pick -= e.rate;
    }
    #[cfg(debug_assertions)]
    let before = state.counts();
    let moved = apply(state, &chosen);
    #[cfg(debug_assertions)]
    {
        let after = state.counts();
        debug_assert_eq!(before[1], after[1], "fast cars not conserved");
        debug_assert_eq!(before[2], after[2], "quiet cars not conserved");
        if state.topology == Topology::Free {
            debug_assert_ne!(state.cells[0], EMPTY, "front symbol became 0");
        }
    }
    Ok((chosen, moved))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoggedEvent {
    pub time: f64,
    pub rule: Rule,
    pub position: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Snapshot {
    pub time: f64,
    pub word: String,
    pub r: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrammarTrace {
    pub events: Vec<LoggedEvent>,
    pub snapshots: Vec<Snapshot>,
    /// Time of absorption when the chain froze before `t_max`.
    pub absorbed_at: Option<f64>,
    pub final_state: GrammarState,
}

impl GrammarTrace {
    /// Event log as CSV `time,rule,position`.
    pub fn write_events_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "time,rule,position")?;
        for e in &self.events {
            writeln!(out, "{},{},{}", e.time, e.rule.id(), e.position)?;
        }
        Ok(())
    }

    /// One back-to-front word per line.
    pub fn write_snapshot_words<W: Write>(&self, mut out: W) -> Result<()> {
        for s in &self.snapshots {
            writeln!(out, "{}", s.word)?;
        }
        Ok(())
    }
}

/// Runs the chain until `t_max`, recording every event and a snapshot at
/// each requested time (sorted ascending, those beyond `t_max` ignored).
pub fn simulate<R: Rng + ?Sized>(
    initial: &GrammarState,
    spec: &GrammarSpec,
    t_max: f64,
    snapshot_times: &[f64],
    rng: &mut R,
) -> Result<GrammarTrace> {
    spec.validate()?;
    if !(t_max.is_finite() && t_max > 0.0) {
        return Err(Error::param("t_max", "must be finite and > 0"));
    }
    let mut times: Vec<f64> = snapshot_times.iter().copied().filter(|t| *t <= t_max).collect();
    times.sort_by(f64::total_cmp);
    let mut next_snap = 0;
    let mut state = initial.clone();
    let mut events = Vec::new();
    let mut snapshots = Vec::new();
    let mut absorbed_at = None;
    let snap = |s: &GrammarState, time: f64| Snapshot {
        time,
        word: s.word(),
        r: s.r,
    };
    loop {
        let pre = state.clone();
        match step(&mut state, spec, rng) {
            Ok(e) => {
                assert!(state.t > pre.t, "event times must increase strictly");
                while next_snap < times.len() && times[next_snap] < state.t.min(t_max + f64::MIN_POSITIVE) {
                    snapshots.push(snap(&pre, times[next_snap]));
                    next_snap += 1;
                }
                if state.t > t_max {
                    state = pre;
                    state.t = t_max;
                    break;
                }
                events.push(LoggedEvent {
                    time: state.t,
                    rule: e.rule,
                    position: e.position,
                });
            }
            Err(Error::Absorbed { time }) => {
                absorbed_at = Some(time);
                break;
            }
            Err(e) => return Err(e),
        }
    }
    while next_snap < times.len() {
        snapshots.push(snap(&state, times[next_snap]));
        next_snap += 1;
    }
    Ok(GrammarTrace {
        events,
        snapshots,
        absorbed_at,
        final_state: state,
    })
}

/// Ring background for the single-fast-car experiment: `round(rho2 * n)`
/// quiet cars spread as evenly as possible, one fast car, holes elsewhere.
/// Written back-to-front.
pub fn single_car_ring(rho0: f64, rho2: f64, n: usize) -> Result<String> {
    if !(rho0 >= 0.0 && rho2 >= 0.0 && rho0 + rho2 <= 1.0 + 1e-12) {
        return Err(Error::param("rho0/rho2", "need rho0, rho2 >= 0 and rho0 + rho2 <= 1"));
    }
    if n < 3 {
        return Err(Error::param("ring_len", "ring needs at least 3 cells"));
    }
    let background = n - 1;
    let n2 = ((rho2 * n as f64).round() as usize).min(background);
    // front-first cells; index 0 is the fast car, quiet cars spaced evenly ahead
    let mut cells = vec![EMPTY; n];
    cells[0] = FAST;
    for j in 0..n2 {
        let slot = 1 + ((2 * j + 1) * background) / (2 * n2);
        cells[n - slot] = QUIET;
    }
    Ok(cells.iter().rev().map(|c| char::from(b'0' + c)).collect())
}

/// Mean speed (cells per unit time) of a single fast car relative to a
/// frozen background of holes and quiet cars on a ring.
///
/// Quiet-car intensities and the drift are switched off. Each replica runs
/// to `t_max`; a replica that freezes keeps its displacement for the
/// remaining time.
pub fn relative_velocity_estimate<R: Rng + ?Sized>(
    spec: &GrammarSpec,
    rho0: f64,
    rho2: f64,
    ring_len: usize,
    t_max: f64,
    replicas: usize,
    rng: &mut R,
) -> Result<Estimate> {
    if replicas < 2 {
        return Err(Error::param("replicas", "need at least 2 replicas"));
    }
    let speeds = (0..replicas)
        .map(|_| relative_velocity_sample(spec, rho0, rho2, ring_len, t_max, rng))
        .collect::<Result<Vec<f64>>>()?;
    Ok(Estimate::from_samples(&speeds))
}

/// One replica of `relative_velocity_estimate`.
pub fn relative_velocity_sample<R: Rng + ?Sized>(
    spec: &GrammarSpec,
    rho0: f64,
    rho2: f64,
    ring_len: usize,
    t_max: f64,
    rng: &mut R,
) -> Result<f64> {
    spec.validate()?;
    if !(t_max.is_finite() && t_max > 0.0) {
        return Err(Error::param("t_max", "must be finite and > 0"));
    }
    let frozen_background = GrammarSpec {
        lambda2_plus: 0.0,
        lambda2_minus: 0.0,
        v: 0.0,
        ..*spec
    };
    let word = single_car_ring(rho0, rho2, ring_len)?;
    let mut state = GrammarState::ring(&word)?;
    Ok(moves_until(&mut state, &frozen_background, t_max, rng) as f64 / t_max)
}

/// Sum of displacements of all steps completed by `t_max`.
fn moves_until<R: Rng + ?Sized>(state: &mut GrammarState, spec: &GrammarSpec, t_max: f64, rng: &mut R) -> i64 {
    let mut moves = 0i64;
    loop {
        let mut trial = state.clone();
        match step_with_displacement(&mut trial, spec, rng) {
            Ok((_, m)) if trial.t <= t_max => {
                moves += m;
                *state = trial;
            }
            _ => break,
        }
    }
    moves
}

/// The value `lambda0+ rho0 + 2 lambda1+ rho2`.
pub fn relative_velocity_formula(spec: &GrammarSpec, rho0: f64, rho2: f64) -> f64 {
    spec.lambda0_plus * rho0 + 2.0 * spec.lambda1_plus * rho2
}

/// Bond current on a ring: total forward car moves per bond per unit time,
/// averaged over replicas of length `t_max` from `initial`.
pub fn ring_current<R: Rng + ?Sized>(
    initial: &GrammarState,
    spec: &GrammarSpec,
    t_max: f64,
    replicas: usize,
    rng: &mut R,
) -> Result<Estimate> {
    let currents = (0..replicas)
        .map(|_| ring_current_sample(initial, spec, t_max, rng))
        .collect::<Result<Vec<f64>>>()?;
    Ok(Estimate::from_samples(&currents))
}

/// One replica of `ring_current`.
pub fn ring_current_sample<R: Rng + ?Sized>(
    initial: &GrammarState,
    spec: &GrammarSpec,
    t_max: f64,
    rng: &mut R,
) -> Result<f64> {
    if initial.topology != Topology::Ring {
        return Err(Error::Usage("bond current needs a ring state".into()));
    }
    if spec.lambda2_minus > 0.0 {
        return Err(Error::Usage("ring length must stay fixed (lambda2- = 0)".into()));
    }
    if !(t_max.is_finite() && t_max > 0.0) {
        return Err(Error::param("t_max", "must be finite and > 0"));
    }
    let n = initial.len() as f64;
    let mut state = initial.clone();
    Ok(moves_until(&mut state, spec, t_max, rng) as f64 / (n * t_max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn spec(l0: f64, l1: f64, l2p: f64, l2m: f64, v: f64) -> GrammarSpec {
        GrammarSpec::new(l0, l1, l2p, l2m, v).unwrap()
    }

    fn rules(state: &str, s: &GrammarSpec) -> Vec<(Rule, usize)> {
        enabled_events(&GrammarState::free(state, 0).unwrap(), s)
            .into_iter()
            .map(|e| (e.rule, e.position))
            .collect()
    }

    #[test]
    fn lone_car_only_drifts() {
        let all = spec(1.0, 1.0, 1.0, 1.0, 1.0);
        assert_eq!(rules("1", &all), vec![(Rule::Drift, 0)]);
    }

    #[test]
    fn advance_pattern() {
        let all = spec(1.0, 1.0, 1.0, 1.0, 1.0);
        // s_3 = 1, s_2 = 0, s_1 = 1
        assert_eq!(rules("101", &all), vec![(Rule::Drift, 0), (Rule::Advance, 3)]);
    }

    #[test]
    fn overtake_pattern() {
        let all = spec(1.0, 1.0, 1.0, 1.0, 1.0);
        assert_eq!(rules("1202", &all), vec![(Rule::Drift, 0), (Rule::Overtake, 4)]);
    }

    #[test]
    fn brake_matches_both_contexts() {
        let s = spec(0.0, 0.0, 0.0, 1.0, 0.0);
        assert_eq!(rules("22", &s), vec![(Rule::Brake, 2)]);
        assert_eq!(rules("21", &s), vec![(Rule::Brake, 2)]);
        assert_eq!(rules("12", &s), vec![]);
    }

    #[test]
    fn brake_inserts_empty_cell() {
        let s = spec(0.0, 0.0, 0.0, 1.0, 0.0);
        let mut st = GrammarState::free("22", 5).unwrap();
        step(&mut st, &s, &mut seeded(1)).unwrap();
        assert_eq!(st.word(), "202");
        assert_eq!(st.r, 5);
        assert_eq!(st.coordinate(3), 3);
    }

    #[test]
    fn accelerate_pattern() {
        let s = spec(0.0, 0.0, 1.0, 0.0, 0.0);
        let mut st = GrammarState::free("2001", 0).unwrap();
        step(&mut st, &s, &mut seeded(2)).unwrap();
        // 200 -> 020, then the empty back cell is trimmed
        assert_eq!(st.word(), "201");
    }

    #[test]
    fn advance_and_trim() {
        let s = spec(1.0, 0.0, 0.0, 0.0, 0.0);
        let mut st = GrammarState::free("101", 0).unwrap();
        step(&mut st, &s, &mut seeded(3)).unwrap();
        assert_eq!(st.word(), "11");
    }

    #[test]
    fn overtake_moves_two_cells() {
        let s = spec(0.0, 1.0, 0.0, 0.0, 0.0);
        let mut st = GrammarState::free("12022", 0).unwrap();
        step(&mut st, &s, &mut seeded(4)).unwrap();
        assert_eq!(st.word(), "2122");
    }

    #[test]
    fn drift_moves_frame() {
        let s = spec(0.0, 0.0, 0.0, 0.0, 2.0);
        let mut st = GrammarState::free("21", 0).unwrap();
        step(&mut st, &s, &mut seeded(5)).unwrap();
        assert_eq!(st.r, 1);
        assert_eq!(st.word(), "21");
    }

    #[test]
    fn frozen_chain_absorbs() {
        let s = spec(0.0, 0.0, 0.0, 0.0, 0.0);
        let mut st = GrammarState::free("1", 0).unwrap();
        assert!(matches!(step(&mut st, &s, &mut seeded(6)), Err(Error::Absorbed { .. })));
        let tr = simulate(&GrammarState::free("1201", 0).unwrap(), &s, 10.0, &[5.0], &mut seeded(6)).unwrap();
        assert!(tr.events.is_empty());
        assert_eq!(tr.absorbed_at, Some(0.0));
        assert_eq!(tr.snapshots.len(), 1);
    }

    #[test]
    fn invalid_words_rejected() {
        assert!(GrammarState::free("10", 0).is_err());
        assert!(GrammarState::free("13", 0).is_err());
        assert!(GrammarState::free("", 0).is_err());
    }

    #[test]
    fn quiet_cars_conserved_without_braking() {
        let s = spec(1.0, 1.0, 1.0, 0.0, 0.5);
        let init = GrammarState::free("2222", 0).unwrap();
        let tr = simulate(&init, &s, 100.0, &[10.0, 50.0, 100.0], &mut seeded(7)).unwrap();
        for snap in &tr.snapshots {
            assert_eq!(snap.word.chars().filter(|c| *c == '2').count(), 4);
        }
    }

    #[test]
    fn conservation_on_random_words() {
        let s = spec(1.0, 0.7, 0.4, 0.3, 0.2);
        let mut rng = seeded(8);
        for _ in 0..20 {
            let mut w: String = (0..30)
                .map(|_| char::from(b'0' + rng.random_range(0..3u8)))
                .collect();
            w.push('1');
            let init = GrammarState::free(&w, 0).unwrap();
            let c0 = init.counts();
            let tr = simulate(&init, &s, 20.0, &[1.0, 5.0, 19.0], &mut rng).unwrap();
            for snap in &tr.snapshots {
                let st = GrammarState::free(&snap.word, 0).unwrap();
                assert_eq!(st.counts()[1], c0[1]);
                assert_eq!(st.counts()[2], c0[2]);
            }
            assert!(tr.events.windows(2).all(|w| w[0].time < w[1].time));
        }
    }

    #[test]
    fn tasep_mode_flags() {
        assert!(tasep_mode_check(&spec(1.0, 1.0, 3.0, 0.0, 0.0)));
        assert!(!tasep_mode_check(&spec(1.0, 2.0, 0.0, 0.0, 0.0)));
        assert!(!tasep_mode_check(&spec(1.0, 1.0, 0.0, 0.1, 0.0)));
    }

    #[test]
    fn single_car_ring_layout() {
        let w = single_car_ring(0.5, 0.4, 10).unwrap();
        assert_eq!(w.len(), 10);
        assert!(w.ends_with('1'));
        assert_eq!(w.chars().filter(|c| *c == '2').count(), 4);
        assert!(!w.contains("22"));
        assert!(single_car_ring(0.7, 0.5, 10).is_err());
    }

    // Exact speed on an evenly spaced background: passing a block of one
    // quiet car followed by g holes takes one overtake (2 cells) and g - 1
    // single advances.
    fn exact_block_speed(l0: f64, l1: f64, gaps: &[usize]) -> f64 {
        let cells: f64 = gaps.iter().map(|g| (*g + 1) as f64).sum();
        let time: f64 = gaps.iter().map(|g| 1.0 / l1 + (*g as f64 - 1.0) / l0).sum();
        cells / time
    }

    #[test]
    fn single_car_speed_all_holes() {
        let s = spec(1.0, 0.3, 0.0, 0.0, 0.0);
        let est = relative_velocity_estimate(&s, 1.0, 0.0, 200, 2000.0, 20, &mut seeded(9)).unwrap();
        assert!(est.within_sigmas(1.0, 3.0), "{est:?}");
    }

    #[test]
    fn single_car_speed_matches_block_oracle() {
        let s = spec(1.0, 1.0, 0.0, 0.0, 0.0);
        // n = 400, 100 quiet cars, 299 holes: gaps of 2 or 3
        let word = single_car_ring(0.5, 0.25, 400).unwrap();
        let front_first: Vec<char> = word.chars().rev().collect();
        let quiet: Vec<usize> = front_first.iter().enumerate().filter(|(_, c)| **c == '2').map(|(i, _)| i).collect();
        let mut gaps = Vec::new();
        for (j, q) in quiet.iter().enumerate() {
            let next = if j + 1 < quiet.len() { quiet[j + 1] } else { quiet[0] + 400 };
            let holes = (q + 1..next).filter(|i| front_first[i % 400] == '0').count();
            gaps.push(holes);
        }
        let exact = exact_block_speed(1.0, 1.0, &gaps);
        let est = relative_velocity_estimate(&s, 0.5, 0.25, 400, 4000.0, 20, &mut seeded(10)).unwrap();
        assert!((est.mean - exact).abs() / exact < 0.01, "{est:?} vs {exact}");
    }

    #[test]
    fn snapshots_and_csv() {
        let s = spec(1.0, 1.0, 0.5, 0.2, 0.1);
        let init = GrammarState::free("1020211", 0).unwrap();
        let tr = simulate(&init, &s, 5.0, &[0.0, 2.5, 5.0], &mut seeded(11)).unwrap();
        assert_eq!(tr.snapshots.len(), 3);
        assert_eq!(tr.snapshots[0].word, "1020211");
        let mut buf = Vec::new();
        tr.write_events_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("time,rule,position\n"));
    }
}
