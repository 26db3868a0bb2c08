//! Continuous-time voter model on a kernel.
//!
//! Events are ordered pairs: at rate `q(x, y)` site `x` adopts the opinion
//! of `y`. The density `p1 = sum pi(x) xi(x)` changes by `pi(x)` per flip,
//! and the pair sums `sum nu(x, y) xi(x) (1 - xi(y))` (and the mirror)
//! change only on edges incident to the flipped site. Time integrals of the
//! observables are accumulated exactly between events.

use rand::Rng;
use rand_distr::{weighted::WeightedAliasIndex, Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::Kernel;
use crate::rng::{stream, Stream};

/// Events between two recomputations of the incrementally tracked sums.
pub const AUDIT_PERIOD: u64 = 1 << 16;

/// How events are proposed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventMode {
    /// Every ordered pair at its own rate; concordant pairs are no-ops.
    #[default]
    Plain,
    /// Only discordant pairs, thinned against the largest pair rate.
    Discordant,
}

/// Static per-kernel tables shared by all replicas.
#[derive(Debug)]
pub struct VoterModel<'k> {
    kernel: &'k Kernel,
    src: Vec<usize>,
    dst: Vec<usize>,
    rate: Vec<f64>,
    weight: Vec<f64>,
    out_edges: Vec<Vec<usize>>,
    in_edges: Vec<Vec<usize>>,
    alias: WeightedAliasIndex<f64>,
    total_rate: f64,
    max_edge_rate: f64,
    mode: EventMode,
}

impl<'k> VoterModel<'k> {
    pub fn new(kernel: &'k Kernel, mode: EventMode) -> VoterModel<'k> {
        let n = kernel.n();
        let entries = kernel.entries();
        let mut out_edges = vec![Vec::new(); n];
        let mut in_edges = vec![Vec::new(); n];
        let (mut src, mut dst, mut rate, mut weight) = (vec![], vec![], vec![], vec![]);
        for (e, &(x, y, r)) in entries.iter().enumerate() {
            src.push(x);
            dst.push(y);
            rate.push(r);
            weight.push(kernel.pi()[x] * kernel.pi()[x] * r);
            out_edges[x].push(e);
            in_edges[y].push(e);
        }
        let alias = WeightedAliasIndex::new(rate.clone()).expect("kernel has positive rates");
        VoterModel {
            kernel,
            total_rate: rate.iter().sum(),
            max_edge_rate: rate.iter().cloned().fold(0.0, f64::max),
            src,
            dst,
            rate,
            weight,
            out_edges,
            in_edges,
            alias,
            mode,
        }
    }

    pub fn kernel(&self) -> &Kernel {
        self.kernel
    }

    pub fn mode(&self) -> EventMode {
        self.mode
    }

    /// State with i.i.d. Bernoulli(u) opinions.
    pub fn init_bernoulli<R: Rng + ?Sized>(&self, u: f64, rng: &mut R) -> Result<VoterState> {
        if !(0.0..=1.0).contains(&u) {
            return Err(Error::BadParam(format!("density u = {u} outside [0, 1]")));
        }
        let opinions = (0..self.kernel.n()).map(|_| rng.random_bool(u)).collect();
        self.init_from(opinions)
    }

    /// State from an explicit configuration.
    pub fn init_from(&self, opinions: Vec<bool>) -> Result<VoterState> {
        if opinions.len() != self.kernel.n() {
            return Err(Error::BadParam("configuration length differs from n".into()));
        }
        let mut state = VoterState {
            opinions,
            p1: 0.0,
            pair_sum10: 0.0,
            pair_sum01: 0.0,
            clock: 0.0,
            int_p1p0: 0.0,
            int_pair_sum: 0.0,
            discordant: Vec::new(),
            position: vec![usize::MAX; self.src.len()],
            events: 0,
        };
        self.resync(&mut state);
        Ok(state)
    }

    fn resync(&self, state: &mut VoterState) {
        state.p1 = self.direct_p1(&state.opinions);
        state.pair_sum10 = 0.0;
        state.pair_sum01 = 0.0;
        state.discordant.clear();
        state.position.iter_mut().for_each(|p| *p = usize::MAX);
        for e in 0..self.src.len() {
            self.add_edge(state, e);
        }
    }

    fn direct_p1(&self, opinions: &[bool]) -> f64 {
        opinions
            .iter()
            .zip(self.kernel.pi())
            .filter(|(o, _)| **o)
            .map(|(_, p)| p)
            .sum()
    }

    fn add_edge(&self, state: &mut VoterState, e: usize) {
        let a = state.opinions[self.src[e]];
        let b = state.opinions[self.dst[e]];
        if a == b {
            return;
        }
        if a {
            state.pair_sum10 += self.weight[e];
        } else {
            state.pair_sum01 += self.weight[e];
        }
        state.position[e] = state.discordant.len();
        state.discordant.push(e);
    }

    fn remove_edge(&self, state: &mut VoterState, e: usize) {
        let pos = state.position[e];
        if pos == usize::MAX {
            return;
        }
        if state.opinions[self.src[e]] {
            state.pair_sum10 -= self.weight[e];
        } else {
            state.pair_sum01 -= self.weight[e];
        }
        let last = *state.discordant.last().unwrap();
        state.discordant.swap_remove(pos);
        if last != e {
            state.position[last] = pos;
        }
        state.position[e] = usize::MAX;
    }

    fn flip(&self, state: &mut VoterState, x: usize) {
        for &e in self.out_edges[x].iter().chain(&self.in_edges[x]) {
            self.remove_edge(state, e);
        }
        state.opinions[x] = !state.opinions[x];
        let pi = self.kernel.pi()[x];
        state.p1 += if state.opinions[x] { pi } else { -pi };
        for &e in self.out_edges[x].iter().chain(&self.in_edges[x]) {
            self.add_edge(state, e);
        }
        if state.discordant.is_empty() {
            // Consensus: pin the observables to their exact values.
            state.p1 = if state.opinions[x] { 1.0 } else { 0.0 };
            state.pair_sum10 = 0.0;
            state.pair_sum01 = 0.0;
        }
    }

    /// Rate at which the next proposal fires.
    fn proposal_rate(&self, state: &VoterState) -> f64 {
        match self.mode {
            EventMode::Plain => self.total_rate,
            EventMode::Discordant => state.discordant.len() as f64 * self.max_edge_rate,
        }
    }

    /// Advances the clock by `dt` with the observables held fixed.
    fn advance(&self, state: &mut VoterState, dt: f64) {
        state.int_p1p0 += dt * state.p1 * (1.0 - state.p1);
        state.int_pair_sum += dt * (state.pair_sum10 + state.pair_sum01);
        state.clock += dt;
    }

    /// Draws the waiting time to the next proposal.
    fn next_wait<R: Rng + ?Sized>(&self, state: &VoterState, rng: &mut R) -> Result<f64> {
        if state.is_consensus() {
            return Err(Error::AbsorbedState);
        }
        let e: f64 = Exp1.sample(rng);
        Ok(e / self.proposal_rate(state))
    }

    /// Resolves a proposal at the current clock; returns the flipped site.
    fn resolve<R: Rng + ?Sized>(&self, state: &mut VoterState, rng: &mut R) -> Option<usize> {
        let e = match self.mode {
            EventMode::Plain => {
                let e = self.alias.sample(rng);
                if state.opinions[self.src[e]] == state.opinions[self.dst[e]] {
                    return None;
                }
                e
            }
            EventMode::Discordant => {
                let e = state.discordant[rng.random_range(0..state.discordant.len())];
                if self.rate[e] < self.max_edge_rate && rng.random::<f64>() * self.max_edge_rate >= self.rate[e] {
                    return None;
                }
                e
            }
        };
        let x = self.src[e];
        self.flip(state, x);
        state.events += 1;
        if state.events.is_multiple_of(AUDIT_PERIOD) {
            self.audit(state);
        }
        Some(x)
    }

    fn audit(&self, state: &mut VoterState) {
        let exact = self.direct_p1(&state.opinions);
        debug_assert!((exact - state.p1).abs() <= 1e-10, "p1 drift {}", exact - state.p1);
        let count = state.discordant.len();
        self.resync(state);
        debug_assert_eq!(count, state.discordant.len());
    }

    /// One proposal: waits, then either flips a site or does nothing.
    pub fn step<R: Rng + ?Sized>(&self, state: &mut VoterState, rng: &mut R) -> Result<StepEvent> {
        let dt = self.next_wait(state, rng)?;
        self.advance(state, dt);
        let flipped = self.resolve(state, rng);
        Ok(StepEvent {
            time: state.clock,
            flipped,
        })
    }

    /// Direct recomputation of `p1`, for audits and tests.
    pub fn recompute_p1(&self, state: &VoterState) -> f64 {
        self.direct_p1(&state.opinions)
    }

    /// Simulates `xi_{gamma s}` for `s` in `[0, horizon]`, sampling on the
    /// grid (in `s` units) with right-continuous values.
    pub fn run_from(&self, mut state: VoterState, gamma: f64, horizon: f64, grid: &[f64], rng: &mut Stream) -> Result<Trajectory> {
        if !(gamma > 0.0) || !(horizon > 0.0) {
            return Err(Error::BadParam(format!("need gamma > 0 and T > 0, got {gamma}, {horizon}")));
        }
        if grid.windows(2).any(|w| w[0] > w[1]) || grid.iter().any(|&s| s < 0.0 || s > horizon) {
            return Err(Error::BadParam("grid must be sorted within [0, T]".into()));
        }
        let end = gamma * horizon;
        let nu = self.kernel.nu_total();
        let mut samples = Vec::with_capacity(grid.len());
        let mut next_grid = 0;
        let mut absorbed_at = None;
        let record = |state: &VoterState, samples: &mut Vec<GridSample>| {
            samples.push(GridSample {
                p1: state.p1,
                p1p0: state.p1 * (1.0 - state.p1),
                p10: state.pair_sum10 / nu,
                p01: state.pair_sum01 / nu,
                quad_var: state.int_pair_sum,
                int_p1p0: state.int_p1p0 / gamma,
            });
        };
        loop {
            let wait = if state.is_consensus() {
                f64::INFINITY
            } else {
                self.next_wait(&state, rng)?
            };
            let next_time = state.clock + wait;
            while next_grid < grid.len() && gamma * grid[next_grid] < next_time.min(end + f64::EPSILON * end) {
                let pending = gamma * grid[next_grid] - state.clock;
                let mut snapshot = state.clone_observables();
                if pending > 0.0 {
                    self.advance(&mut snapshot, pending);
                }
                record(&snapshot, &mut samples);
                next_grid += 1;
            }
            if next_time > end {
                let rest = end - state.clock;
                self.advance(&mut state, rest);
                break;
            }
            self.advance(&mut state, wait);
            self.resolve(&mut state, rng);
            if state.is_consensus() && absorbed_at.is_none() {
                absorbed_at = Some(state.clock);
            }
        }
        while next_grid < grid.len() {
            record(&state, &mut samples);
            next_grid += 1;
        }
        let absorbed_value = if state.is_consensus() {
            Some(state.p1 > 0.5)
        } else {
            None
        };
        let consensus_time = absorbed_at.or(if state.is_consensus() { Some(0.0) } else { None });
        Ok(Trajectory {
            grid: grid.to_vec(),
            samples,
            gamma,
            horizon,
            absorbed_value,
            tau_one: match (absorbed_value, consensus_time) {
                (Some(true), Some(t)) => Some(t / gamma),
                _ => None,
            },
            quad_var: state.int_pair_sum,
            int_p1p0: state.int_p1p0 / gamma,
            events: state.events,
        })
    }

    /// Bernoulli(u) start followed by [`VoterModel::run_from`].
    pub fn run(&self, u: f64, gamma: f64, horizon: f64, grid: &[f64], rng: &mut Stream) -> Result<Trajectory> {
        let state = self.init_bernoulli(u, rng)?;
        self.run_from(state, gamma, horizon, grid, rng)
    }
}

/// Opinion configuration with incrementally maintained observables.
#[derive(Debug, Clone)]
pub struct VoterState {
    opinions: Vec<bool>,
    p1: f64,
    pair_sum10: f64,
    pair_sum01: f64,
    clock: f64,
    int_p1p0: f64,
    int_pair_sum: f64,
    discordant: Vec<usize>,
    position: Vec<usize>,
    events: u64,
}

impl VoterState {
    pub fn opinions(&self) -> &[bool] {
        &self.opinions
    }

    pub fn p1(&self) -> f64 {
        self.p1
    }

    /// `sum nu(x, y) xi(x) (1 - xi(y))`.
    pub fn pair_sum10(&self) -> f64 {
        self.pair_sum10
    }

    /// `sum nu(x, y) (1 - xi(x)) xi(y)`.
    pub fn pair_sum01(&self) -> f64 {
        self.pair_sum01
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    /// `int_0^clock p1 (1 - p1) dr` in real time.
    pub fn int_p1p0(&self) -> f64 {
        self.int_p1p0
    }

    /// `int_0^clock (pair_sum10 + pair_sum01) dr` in real time.
    pub fn int_pair_sum(&self) -> f64 {
        self.int_pair_sum
    }

    pub fn discordant_pairs(&self) -> usize {
        self.discordant.len()
    }

    pub fn is_consensus(&self) -> bool {
        self.discordant.is_empty()
    }

    fn clone_observables(&self) -> VoterState {
        VoterState {
            opinions: Vec::new(),
            p1: self.p1,
            pair_sum10: self.pair_sum10,
            pair_sum01: self.pair_sum01,
            clock: self.clock,
            int_p1p0: self.int_p1p0,
            int_pair_sum: self.int_pair_sum,
            discordant: Vec::new(),
            position: Vec::new(),
            events: self.events,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepEvent {
    pub time: f64,
    pub flipped: Option<usize>,
}

/// Observables at one grid time `s` (time `gamma s` of the voter model).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSample {
    pub p1: f64,
    pub p1p0: f64,
    pub p10: f64,
    pub p01: f64,
    /// `gamma nu(1) int_0^s (p10 + p01) dr`.
    pub quad_var: f64,
    /// `int_0^s p1 (1 - p1) dr`.
    pub int_p1p0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub grid: Vec<f64>,
    pub samples: Vec<GridSample>,
    pub gamma: f64,
    pub horizon: f64,
    /// Consensus value if absorbed by the horizon.
    pub absorbed_value: Option<bool>,
    /// Hitting time of density 1, in units of `gamma`.
    pub tau_one: Option<f64>,
    /// `gamma nu(1) int_0^T (p10 + p01) ds`.
    pub quad_var: f64,
    /// `int_0^T p1 (1 - p1) ds`.
    pub int_p1p0: f64,
    pub events: u64,
}

/// `R(T) = gamma nu(1) int_0^T (p10 + p01) ds - int_0^T p1 (1 - p1) ds`.
pub fn mean_field_residual(trajectory: &Trajectory) -> f64 {
    trajectory.quad_var - trajectory.int_p1p0
}

/// Mean and variance of one statistic across replicas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub variance: f64,
    pub count: usize,
}

impl Moments {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Moments {
        let values: Vec<f64> = values.into_iter().collect();
        let count = values.len();
        if count == 0 {
            return Moments {
                mean: f64::NAN,
                variance: f64::NAN,
                count,
            };
        }
        let mean = values.iter().sum::<f64>() / count as f64;
        let variance = if count > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1) as f64
        } else {
            0.0
        };
        Moments { mean, variance, count }
    }

    /// Standard error of the mean.
    pub fn se(&self) -> f64 {
        (self.variance / self.count as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub u: f64,
    pub gamma: f64,
    pub horizon: f64,
    pub grid: Vec<f64>,
    pub replicas: usize,
    pub master_seed: u64,
    #[serde(default)]
    pub mode: EventMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub grid: Vec<f64>,
    pub p1: Vec<Moments>,
    pub p1p0: Vec<Moments>,
    pub quad_var: Vec<Moments>,
    pub residual: Moments,
    pub abs_residual: Moments,
    /// Sorted `tau_1 / gamma` over replicas absorbed at 1.
    pub tau_one: Vec<f64>,
    pub replicas: usize,
    pub master_seed: u64,
}

/// Runs `replicas` independent trajectories; replica `i` uses stream
/// `(master_seed, "voter", i)`. Results are reduced in replica order, so the
/// summary does not depend on `parallelism`.
pub fn ensemble(kernel: &Kernel, config: &EnsembleConfig, parallelism: usize) -> Result<(EnsembleSummary, Vec<Trajectory>)> {
    if config.replicas == 0 {
        return Err(Error::BadParam("need at least one replica".into()));
    }
    let model = VoterModel::new(kernel, config.mode);
    let run_one = |i: usize| {
        let mut rng = stream(config.master_seed, "voter", i as u64);
        model.run(config.u, config.gamma, config.horizon, &config.grid, &mut rng)
    };
    let trajectories: Vec<Trajectory> = if parallelism <= 1 {
        (0..config.replicas).map(run_one).collect::<Result<_>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(parallelism)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?;
        pool.install(|| (0..config.replicas).into_par_iter().map(run_one).collect::<Result<_>>())?
    };
    Ok((summarize(config, &trajectories), trajectories))
}

fn summarize(config: &EnsembleConfig, trajectories: &[Trajectory]) -> EnsembleSummary {
    let per_point = |f: &dyn Fn(&GridSample) -> f64| {
        (0..config.grid.len())
            .map(|g| Moments::of(trajectories.iter().map(|t| f(&t.samples[g]))))
            .collect::<Vec<_>>()
    };
    let mut tau_one: Vec<f64> = trajectories.iter().filter_map(|t| t.tau_one).collect();
    tau_one.sort_by(|a, b| a.total_cmp(b));
    EnsembleSummary {
        grid: config.grid.clone(),
        p1: per_point(&|s| s.p1),
        p1p0: per_point(&|s| s.p1p0),
        quad_var: per_point(&|s| s.quad_var),
        residual: Moments::of(trajectories.iter().map(mean_field_residual)),
        abs_residual: Moments::of(trajectories.iter().map(|t| mean_field_residual(t).abs())),
        tau_one,
        replicas: config.replicas,
        master_seed: config.master_seed,
    }
}
