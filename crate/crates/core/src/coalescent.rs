//! Coalescing q-chains.
//!
//! Blocks (groups of merged lineages) move as independent chains with rate
//! `q(x)` at site `x`; a block landing on an occupied site merges with the
//! occupant. A single exponential clock drives all blocks: proposals arrive
//! at rate `blocks * max_x q(x)` and the proposing block is accepted with
//! probability `q(x) / max q`.

use rand::Rng;
use rand_distr::{weighted::WeightedAliasIndex, Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{Kernel, PairSampler};
use crate::rng::{stream, Stream};

/// Truncation of the infinite Kingman sum; the neglected mean is `2 / K`.
pub const KINGMAN_TRUNCATION: usize = 2000;

const EMPTY: usize = usize::MAX;

/// Per-site jump tables.
#[derive(Debug)]
pub struct JumpTables<'k> {
    kernel: &'k Kernel,
    targets: Vec<Vec<usize>>,
    alias: Vec<WeightedAliasIndex<f64>>,
    max_rate: f64,
}

impl<'k> JumpTables<'k> {
    pub fn new(kernel: &'k Kernel) -> JumpTables<'k> {
        let mut targets = Vec::with_capacity(kernel.n());
        let mut alias = Vec::with_capacity(kernel.n());
        for x in 0..kernel.n() {
            let row: Vec<(usize, f64)> = kernel.row(x).collect();
            targets.push(row.iter().map(|&(y, _)| y).collect());
            alias.push(WeightedAliasIndex::new(row.iter().map(|&(_, r)| r).collect()).expect("irreducible kernel"));
        }
        let max_rate = kernel.total_rates().iter().cloned().fold(0.0, f64::max);
        JumpTables {
            kernel,
            targets,
            alias,
            max_rate,
        }
    }

    pub fn kernel(&self) -> &Kernel {
        self.kernel
    }

    fn jump<R: Rng + ?Sized>(&self, x: usize, rng: &mut R) -> usize {
        self.targets[x][self.alias[x].sample(rng)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MergeEvent {
    pub time: f64,
    /// Root labels of the merged blocks: `absorbed` joins `into`.
    pub absorbed: usize,
    pub into: usize,
}

/// Positions and partition of a system of coalescing lineages.
#[derive(Debug, Clone)]
pub struct CoalescentSystem {
    parent: Vec<usize>,
    /// Active blocks as (site, root label).
    blocks: Vec<(usize, usize)>,
    /// Site -> index into `blocks`, or `EMPTY`.
    occupant: Vec<usize>,
    clock: f64,
    log: Vec<MergeEvent>,
}

impl CoalescentSystem {
    /// Lineage `i` starts at `positions[i]`; co-located lineages merge at
    /// time 0.
    pub fn new(n: usize, positions: &[usize]) -> Result<CoalescentSystem> {
        if positions.is_empty() {
            return Err(Error::BadParam("need at least one lineage".into()));
        }
        if let Some(&p) = positions.iter().find(|&&p| p >= n) {
            return Err(Error::BadIndex(format!("site {p} >= n = {n}")));
        }
        let mut system = CoalescentSystem {
            parent: (0..positions.len()).collect(),
            blocks: Vec::with_capacity(positions.len()),
            occupant: vec![EMPTY; n],
            clock: 0.0,
            log: Vec::new(),
        };
        for (label, &x) in positions.iter().enumerate() {
            match system.occupant[x] {
                EMPTY => {
                    system.occupant[x] = system.blocks.len();
                    system.blocks.push((x, label));
                }
                b => {
                    let into = system.blocks[b].1;
                    system.parent[label] = into;
                    system.log.push(MergeEvent {
                        time: 0.0,
                        absorbed: label,
                        into,
                    });
                }
            }
        }
        Ok(system)
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn log(&self) -> &[MergeEvent] {
        &self.log
    }

    /// Root label of the block containing lineage `label`.
    pub fn find(&mut self, label: usize) -> usize {
        let mut root = label;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        let mut cur = label;
        while self.parent[cur] != root {
            let next = self.parent[cur];
            self.parent[cur] = root;
            cur = next;
        }
        root
    }

    /// Current site of lineage `label`.
    pub fn position(&mut self, label: usize) -> usize {
        let root = self.find(label);
        self.blocks.iter().find(|b| b.1 == root).map(|b| b.0).expect("root is active")
    }

    /// Advances to the next merge; returns `None` once a single block is
    /// left.
    pub fn next_merge<R: Rng + ?Sized>(&mut self, tables: &JumpTables, rng: &mut R) -> Option<MergeEvent> {
        let q = tables.kernel.total_rates();
        while self.blocks.len() > 1 {
            let e: f64 = Exp1.sample(rng);
            self.clock += e / (self.blocks.len() as f64 * tables.max_rate);
            let b = rng.random_range(0..self.blocks.len());
            let (x, label) = self.blocks[b];
            if q[x] < tables.max_rate && rng.random::<f64>() * tables.max_rate >= q[x] {
                continue;
            }
            let y = tables.jump(x, rng);
            self.occupant[x] = EMPTY;
            match self.occupant[y] {
                EMPTY => {
                    self.occupant[y] = b;
                    self.blocks[b].0 = y;
                }
                c => {
                    let into = self.blocks[c].1;
                    self.parent[label] = into;
                    self.blocks.swap_remove(b);
                    if b < self.blocks.len() {
                        let moved = self.blocks[b].0;
                        self.occupant[moved] = b;
                    }
                    let event = MergeEvent {
                        time: self.clock,
                        absorbed: label,
                        into,
                    };
                    self.log.push(event);
                    return Some(event);
                }
            }
        }
        None
    }
}

/// `times[i] = C_{k, k - i}`: the first time at most `k - i` blocks remain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoalescenceTimes {
    pub k: usize,
    pub times: Vec<f64>,
}

impl CoalescenceTimes {
    /// `C_{k, j}`, if recorded.
    pub fn get(&self, j: usize) -> Option<f64> {
        if j > self.k {
            return None;
        }
        self.times.get(self.k - j).copied()
    }
}

fn run_system<R: Rng + ?Sized>(tables: &JumpTables, positions: &[usize], stop_at: usize, rng: &mut R) -> Result<CoalescenceTimes> {
    let k = positions.len();
    let mut system = CoalescentSystem::new(tables.kernel.n(), positions)?;
    let mut times = Vec::with_capacity(k - stop_at + 1);
    while times.len() <= k - system.block_count() && times.len() <= k - stop_at {
        times.push(0.0);
    }
    while times.len() <= k - stop_at {
        system.next_merge(tables, rng).expect("stops before a single block");
        times.push(system.clock());
    }
    Ok(CoalescenceTimes { k, times })
}

fn check_stop(k: usize, stop_at: usize, n: usize) -> Result<()> {
    if stop_at < 1 || stop_at > k || k > n {
        return Err(Error::BadParam(format!("need 1 <= j <= k <= n, got j = {stop_at}, k = {k}, n = {n}")));
    }
    Ok(())
}

/// `C_{k,k}, ..., C_{k,j}` for `k` lineages started i.i.d. from `pi`.
pub fn run_partial(tables: &JumpTables, sampler: &PairSampler, k: usize, stop_at: usize, rng: &mut Stream) -> Result<CoalescenceTimes> {
    check_stop(k, stop_at, tables.kernel.n())?;
    let positions: Vec<usize> = (0..k).map(|_| sampler.site(rng)).collect();
    run_system(tables, &positions, stop_at, rng)
}

/// Coalescence times from explicit starting sites.
pub fn run_from_positions(tables: &JumpTables, positions: &[usize], stop_at: usize, rng: &mut Stream) -> Result<CoalescenceTimes> {
    check_stop(positions.len(), stop_at, usize::MAX)?;
    run_system(tables, positions, stop_at, rng)
}

/// `C_hat_n, ..., C_hat_j` with one lineage per site.
pub fn run_full(tables: &JumpTables, stop_at: usize, rng: &mut Stream) -> Result<CoalescenceTimes> {
    let n = tables.kernel.n();
    if stop_at < 1 || stop_at >= n {
        return Err(Error::BadParam(format!("need 1 <= j < n, got j = {stop_at}")));
    }
    let positions: Vec<usize> = (0..n).collect();
    run_system(tables, &positions, stop_at, rng)
}

/// Start of a coalescent: `k` lineages from `pi`, or one per site.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Start {
    Partial { k: usize },
    Full,
}

/// Replica `i` uses stream `(master_seed, "coalescent", i)`; results are in
/// replica order regardless of `parallelism`.
pub fn coalescent_ensemble(
    kernel: &Kernel,
    start: Start,
    stop_at: usize,
    replicas: usize,
    master_seed: u64,
    parallelism: usize,
) -> Result<Vec<CoalescenceTimes>> {
    let tables = JumpTables::new(kernel);
    let sampler = PairSampler::new(kernel);
    let run_one = |i: usize| {
        let mut rng = stream(master_seed, "coalescent", i as u64);
        match start {
            Start::Partial { k } => run_partial(&tables, &sampler, k, stop_at, &mut rng),
            Start::Full => run_full(&tables, stop_at, &mut rng),
        }
    };
    if parallelism <= 1 {
        (0..replicas).map(run_one).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(parallelism)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?;
        pool.install(|| (0..replicas).into_par_iter().map(run_one).collect())
    }
}

/// Number of lineages for the Kingman sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KingmanSize {
    Finite(usize),
    Infinite,
}

/// One draw of `sum_{i=j+1}^{k} Z_i` with `Z_i ~ Exp(C(i, 2))`.
pub fn kingman_sampler<R: Rng + ?Sized>(k: KingmanSize, j: usize, rng: &mut R) -> Result<f64> {
    let k = match k {
        KingmanSize::Finite(k) => k,
        KingmanSize::Infinite => KINGMAN_TRUNCATION,
    };
    if j < 1 || j >= k {
        return Err(Error::BadParam(format!("need 1 <= j < k, got j = {j}, k = {k}")));
    }
    Ok((j + 1..=k)
        .rev()
        .map(|i| {
            let e: f64 = Exp1.sample(rng);
            e * 2.0 / (i * (i - 1)) as f64
        })
        .sum())
}

/// `E[sum_{i=j+1}^{k} Z_i] = 2/j - 2/k`.
pub fn kingman_mean(k: KingmanSize, j: usize) -> f64 {
    let k = match k {
        KingmanSize::Finite(k) => k,
        KingmanSize::Infinite => KINGMAN_TRUNCATION,
    };
    2.0 / j as f64 - 2.0 / k as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meeting::meeting_tail;
    use crate::stats::{ks_one_sample, ks_two_sample};
    use crate::zoo::{moran, torus_nn};
    use crate::PairLaw;

    fn two_state() -> Kernel {
        Kernel::from_rates(2, &[(0, 1, 1.0), (1, 0, 1.0)]).unwrap()
    }

    fn mean_se(v: &[f64]) -> (f64, f64) {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, (var / n).sqrt())
    }

    #[test]
    fn single_lineage() {
        let k = two_state();
        let tables = JumpTables::new(&k);
        let sampler = PairSampler::new(&k);
        let c = run_partial(&tables, &sampler, 1, 1, &mut stream(1, "t", 0)).unwrap();
        assert_eq!(c.times, vec![0.0]);
        assert!(run_partial(&tables, &sampler, 3, 1, &mut stream(1, "t", 0)).is_err());
        assert!(run_partial(&tables, &sampler, 2, 0, &mut stream(1, "t", 0)).is_err());
    }

    #[test]
    fn two_state_meeting_mean() {
        let k = two_state();
        let runs = coalescent_ensemble(&k, Start::Partial { k: 2 }, 1, 20_000, 3, 1).unwrap();
        let c: Vec<f64> = runs.iter().map(|r| r.get(1).unwrap()).collect();
        let (m, se) = mean_se(&c);
        assert!((m - 0.25).abs() < 3.0 * se, "{m} +- {se}");

        let full = coalescent_ensemble(&k, Start::Full, 1, 10_000, 4, 1).unwrap();
        let c: Vec<f64> = full.iter().map(|r| r.get(1).unwrap()).collect();
        let (m, se) = mean_se(&c);
        assert!((m - 0.5).abs() < 3.0 * se);
    }

    #[test]
    fn pair_coalescence_matches_exact_tail() {
        let k = torus_nn(4, 2).unwrap();
        let n = 4000;
        let runs = coalescent_ensemble(&k, Start::Partial { k: 2 }, 1, n, 5, 1).unwrap();
        let sample: Vec<f64> = runs.iter().map(|r| r.get(1).unwrap()).collect();
        let grid: Vec<f64> = (0..=4000).map(|i| i as f64 * 0.01).collect();
        let tail = meeting_tail(&k, PairLaw::Product, &grid).unwrap();
        let cdf = |t: f64| {
            if t < 0.0 {
                return 0.0;
            }
            let pos = t / 0.01;
            let i = pos.floor() as usize;
            if i + 1 >= grid.len() {
                return 1.0 - tail[grid.len() - 1];
            }
            let w = pos - i as f64;
            1.0 - ((1.0 - w) * tail[i] + w * tail[i + 1])
        };
        let ks = ks_one_sample(&sample, cdf).unwrap();
        assert!(ks.passes_01(), "{ks:?}");
    }

    #[test]
    fn full_times_are_ordered() {
        let k = moran(20).unwrap();
        let runs = coalescent_ensemble(&k, Start::Full, 1, 50, 6, 1).unwrap();
        for r in runs {
            assert_eq!(r.k, 20);
            assert_eq!(r.times.len(), 20);
            assert_eq!(r.times[0], 0.0);
            assert!(r.times.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn merges_are_consistent() {
        let k = torus_nn(5, 2).unwrap();
        let tables = JumpTables::new(&k);
        let mut rng = stream(7, "t", 0);
        let positions = [0, 0, 3, 7, 12, 24];
        let mut system = CoalescentSystem::new(k.n(), &positions).unwrap();
        assert_eq!(system.block_count(), 5);
        assert_eq!(system.find(1), 0);
        let mut last = 5;
        while let Some(ev) = system.next_merge(&tables, &mut rng) {
            assert_eq!(system.block_count(), last - 1);
            last -= 1;
            let (a, b) = (ev.absorbed, ev.into);
            assert_eq!(system.find(a), system.find(b));
            assert_eq!(system.position(a), system.position(b));
        }
        assert_eq!(system.block_count(), 1);
        let root = system.find(0);
        assert!((0..positions.len()).all(|l| system.find(l) == root));
    }

    #[test]
    fn relabeling_preserves_law() {
        let k = torus_nn(4, 2).unwrap();
        let tables = JumpTables::new(&k);
        let positions = [0usize, 5, 10, 15];
        let reversed: Vec<usize> = positions.iter().rev().cloned().collect();
        let n = 3000;
        let sample = |pos: &[usize], tag: &str| -> Vec<f64> {
            (0..n)
                .map(|i| run_from_positions(&tables, pos, 1, &mut stream(8, tag, i)).unwrap().get(1).unwrap())
                .collect()
        };
        let a = sample(&positions, "a");
        let b = sample(&reversed, "a");
        assert!(ks_two_sample(&a, &b).unwrap().passes_01());
    }

    #[test]
    fn kingman_means() {
        let mut rng = stream(9, "kingman", 0);
        assert!(kingman_sampler(KingmanSize::Finite(2), 2, &mut rng).is_err());
        assert!(kingman_sampler(KingmanSize::Finite(3), 0, &mut rng).is_err());
        for (k, j, mean) in [
            (KingmanSize::Finite(2), 1, 1.0),
            (KingmanSize::Finite(3), 1, 4.0 / 3.0),
            (KingmanSize::Infinite, 1, 2.0 - 2.0 / 2000.0),
        ] {
            assert!((kingman_mean(k, j) - mean).abs() < 1e-12);
            let draws: Vec<f64> = (0..20_000).map(|_| kingman_sampler(k, j, &mut rng).unwrap()).collect();
            let (m, se) = mean_se(&draws);
            assert!((m - mean).abs() < 3.0 * se, "{k:?}: {m} vs {mean}");
        }
    }
}
