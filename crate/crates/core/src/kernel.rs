//! Irreducible Q-matrices on a finite site set `0..n`.
//!
//! A [`Kernel`] stores the off-diagonal rates `q(x, y)` in compressed rows,
//! together with the stationary distribution `pi` and the scalars derived
//! from it: `pi_diag = sum pi(x)^2`, `pi_max`, `q_max` and the total mass
//! `nu(1) = sum_{x != y} pi(x)^2 q(x, y)` of the pair measure.

use std::collections::{BTreeMap, VecDeque};
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{weighted::WeightedAliasIndex, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::Lattice;

/// Largest state space handled by dense linear algebra.
pub const DENSE_CAP: usize = 4096;

/// Residual allowed in the balance equations `pi q = 0`.
pub const BALANCE_TOL: f64 = 1e-10;

/// Absolute tolerance for detailed balance.
pub const DETAILED_BALANCE_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct Kernel {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    total_rate: Vec<f64>,
    pi: Vec<f64>,
    pi_diag: f64,
    pi_max: f64,
    q_max: f64,
    nu_total: f64,
    reversible: bool,
    lattice: Option<Lattice>,
}

/// Scalars derived from a kernel, as written to JSON sidecars and reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSummary {
    pub n: usize,
    pub edges: usize,
    pub pi_diag: f64,
    pub pi_min: f64,
    pub pi_max: f64,
    pub q_max: f64,
    pub nu_total: f64,
    pub reversible: bool,
    pub lattice: Option<Vec<usize>>,
}

struct Csr {
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

fn build_csr(n: usize, entries: impl IntoIterator<Item = (usize, usize, f64)>) -> Result<Csr> {
    let mut rows: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); n];
    for (x, y, rate) in entries {
        if x >= n || y >= n {
            return Err(Error::BadIndex(format!("({x}, {y}) with n = {n}")));
        }
        if x == y {
            return Err(Error::BadIndex(format!("diagonal entry ({x}, {x})")));
        }
        if !(rate >= 0.0) || !rate.is_finite() {
            return Err(Error::NegativeRate { x, y, rate });
        }
        if rate > 0.0 {
            *rows[x].entry(y).or_insert(0.0) += rate;
        }
    }
    let mut csr = Csr {
        row_ptr: Vec::with_capacity(n + 1),
        cols: Vec::new(),
        vals: Vec::new(),
    };
    csr.row_ptr.push(0);
    for row in rows {
        for (y, r) in row {
            csr.cols.push(y);
            csr.vals.push(r);
        }
        csr.row_ptr.push(csr.cols.len());
    }
    Ok(csr)
}

fn reachable_all(n: usize, adj: &[Vec<usize>]) -> bool {
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    let mut count = 1;
    while let Some(x) = queue.pop_front() {
        for &y in &adj[x] {
            if !seen[y] {
                seen[y] = true;
                count += 1;
                queue.push_back(y);
            }
        }
    }
    count == n
}

fn strongly_connected(n: usize, csr: &Csr) -> bool {
    let mut fwd = vec![Vec::new(); n];
    let mut rev = vec![Vec::new(); n];
    for x in 0..n {
        for &y in &csr.cols[csr.row_ptr[x]..csr.row_ptr[x + 1]] {
            fwd[x].push(y);
            rev[y].push(x);
        }
    }
    reachable_all(n, &fwd) && reachable_all(n, &rev)
}

/// Stationary distribution of the chain with the given off-diagonal rates.
///
/// Dense solve with one balance equation replaced by normalization for
/// `n <= DENSE_CAP`; power iteration on the lazy uniformized matrix above.
pub fn stationary_distribution(n: usize, entries: &[(usize, usize, f64)]) -> Result<Vec<f64>> {
    let csr = build_csr(n, entries.iter().copied())?;
    stationary_from_csr(n, &csr)
}

fn stationary_from_csr(n: usize, csr: &Csr) -> Result<Vec<f64>> {
    if n == 1 {
        return Ok(vec![1.0]);
    }
    let mut pi = if n <= DENSE_CAP {
        // Row y of the system is column y of q.
        let mut m = DMatrix::<f64>::zeros(n, n);
        for x in 0..n {
            for k in csr.row_ptr[x]..csr.row_ptr[x + 1] {
                let y = csr.cols[k];
                m[(y, x)] += csr.vals[k];
                m[(x, x)] -= csr.vals[k];
            }
        }
        for x in 0..n {
            m[(n - 1, x)] = 1.0;
        }
        let mut rhs = DVector::<f64>::zeros(n);
        rhs[n - 1] = 1.0;
        let sol = m
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::SingularSystem("stationary balance equations".into()))?;
        sol.iter().copied().collect::<Vec<_>>()
    } else {
        power_iteration(n, csr)?
    };
    if pi.iter().any(|p| !p.is_finite() || *p <= 0.0) {
        return Err(Error::SingularSystem(
            "stationary vector is not strictly positive".into(),
        ));
    }
    let total: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|p| *p /= total);
    Ok(pi)
}

fn power_iteration(n: usize, csr: &Csr) -> Result<Vec<f64>> {
    let out_rate: Vec<f64> = (0..n)
        .map(|x| csr.vals[csr.row_ptr[x]..csr.row_ptr[x + 1]].iter().sum())
        .collect();
    let lambda = 2.0 * out_rate.iter().cloned().fold(0.0, f64::max);
    let mut pi = vec![1.0 / n as f64; n];
    let mut next = vec![0.0; n];
    for _ in 0..2_000_000 {
        for (x, nx) in next.iter_mut().enumerate() {
            *nx = pi[x] * (1.0 - out_rate[x] / lambda);
        }
        for x in 0..n {
            for k in csr.row_ptr[x]..csr.row_ptr[x + 1] {
                next[csr.cols[k]] += pi[x] * csr.vals[k] / lambda;
            }
        }
        let diff: f64 = pi.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut pi, &mut next);
        if diff * lambda < 1e-12 {
            return Ok(pi);
        }
    }
    Err(Error::ConvergenceFailure("stationary power iteration".into()))
}

impl Kernel {
    /// Builds a kernel from off-diagonal rate entries; duplicates are summed.
    pub fn from_rates(n: usize, entries: &[(usize, usize, f64)]) -> Result<Kernel> {
        if n == 0 {
            return Err(Error::BadParam("empty site set".into()));
        }
        let csr = build_csr(n, entries.iter().copied())?;
        if !strongly_connected(n, &csr) {
            return Err(Error::NotIrreducible);
        }
        let pi = stationary_from_csr(n, &csr)?;
        Kernel::assemble(n, csr, pi)
    }

    /// Random walk on a multigraph given by a dense symmetric adjacency
    /// matrix. `A(x, x)` is 1 for a half-loop and 2 for a whole loop.
    pub fn from_adjacency(adj: &[Vec<u32>]) -> Result<Kernel> {
        let n = adj.len();
        if n == 0 {
            return Err(Error::BadParam("empty adjacency matrix".into()));
        }
        let mut edges = Vec::new();
        let mut loops = vec![0u32; n];
        for (x, row) in adj.iter().enumerate() {
            if row.len() != n {
                return Err(Error::BadParam(format!("row {x} has length {}", row.len())));
            }
            for (y, &a) in row.iter().enumerate() {
                if adj[y][x] != a {
                    return Err(Error::AsymmetricAdjacency(x, y));
                }
                if x == y {
                    if a > 2 {
                        return Err(Error::BadParam(format!("A({x},{x}) = {a} not in {{0,1,2}}")));
                    }
                    loops[x] = a;
                } else if a > 0 {
                    edges.push((x, y, a));
                }
            }
        }
        Kernel::from_multigraph(n, &edges, &loops)
    }

    /// Sparse form of [`Kernel::from_adjacency`]: `edges` lists every ordered
    /// pair `(x, y)`, `x != y`, with its multiplicity; `loops[x] = A(x, x)`.
    /// Symmetry is checked; loop weights are not capped here.
    pub fn from_multigraph(n: usize, edges: &[(usize, usize, u32)], loops: &[u32]) -> Result<Kernel> {
        if loops.len() != n {
            return Err(Error::BadParam("loop vector length differs from n".into()));
        }
        let mut degree: Vec<u64> = loops.iter().map(|&l| l as u64).collect();
        let mut counts: BTreeMap<(usize, usize), u64> = BTreeMap::new();
        for &(x, y, a) in edges {
            if x >= n || y >= n || x == y {
                return Err(Error::BadIndex(format!("edge ({x}, {y}) with n = {n}")));
            }
            *counts.entry((x, y)).or_insert(0) += a as u64;
            degree[x] += a as u64;
        }
        for (&(x, y), &a) in &counts {
            if counts.get(&(y, x)) != Some(&a) {
                return Err(Error::AsymmetricAdjacency(x, y));
            }
        }
        if let Some(x) = degree.iter().position(|&d| d == 0) {
            return Err(Error::ZeroDegree(x));
        }
        let entries: Vec<(usize, usize, f64)> = counts
            .iter()
            .map(|(&(x, y), &a)| (x, y, a as f64 / degree[x] as f64))
            .collect();
        let csr = build_csr(n, entries)?;
        if !strongly_connected(n, &csr) {
            return Err(Error::Disconnected);
        }
        let total: u64 = degree.iter().sum();
        let pi = degree.iter().map(|&d| d as f64 / total as f64).collect();
        Kernel::assemble(n, csr, pi)
    }

    fn assemble(n: usize, csr: Csr, pi: Vec<f64>) -> Result<Kernel> {
        let total_rate: Vec<f64> = (0..n)
            .map(|x| csr.vals[csr.row_ptr[x]..csr.row_ptr[x + 1]].iter().sum())
            .collect();
        let pi_diag = pi.iter().map(|p| p * p).sum();
        let pi_max = pi.iter().cloned().fold(0.0, f64::max);
        let q_max = total_rate.iter().cloned().fold(0.0, f64::max);
        let nu_total = pi.iter().zip(&total_rate).map(|(p, q)| p * p * q).sum();
        let mut kernel = Kernel {
            n,
            row_ptr: csr.row_ptr,
            cols: csr.cols,
            vals: csr.vals,
            total_rate,
            pi,
            pi_diag,
            pi_max,
            q_max,
            nu_total,
            reversible: false,
            lattice: None,
        };
        if n > 1 && kernel.balance_residual() > BALANCE_TOL {
            return Err(Error::SingularSystem(format!(
                "balance residual {:e} exceeds {BALANCE_TOL:e}",
                kernel.balance_residual()
            )));
        }
        kernel.reversible = kernel.detailed_balance_residual() <= DETAILED_BALANCE_TOL;
        Ok(kernel)
    }

    /// Attaches a group structure after checking `q(x, y) = q(0, y - x)`.
    pub fn with_lattice(mut self, lattice: Lattice) -> Result<Kernel> {
        if lattice.size() != self.n {
            return Err(Error::BadParam(format!(
                "lattice of size {} on {} sites",
                lattice.size(),
                self.n
            )));
        }
        let base: BTreeMap<usize, f64> = self.row(0).collect();
        for x in 0..self.n {
            if self.degree(x) != base.len() {
                return Err(Error::StrategyMismatch("kernel is not translation invariant".into()));
            }
            for (y, r) in self.row(x) {
                match base.get(&lattice.sub(y, x)) {
                    Some(&r0) if (r0 - r).abs() <= 1e-14 * r0.max(1.0) => {}
                    _ => {
                        return Err(Error::StrategyMismatch(
                            "kernel is not translation invariant".into(),
                        ))
                    }
                }
            }
        }
        self.lattice = Some(lattice);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Off-diagonal entries `(y, q(x, y))` of row `x`, sorted by `y`.
    pub fn row(&self, x: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[x]..self.row_ptr[x + 1];
        self.cols[span.clone()].iter().copied().zip(self.vals[span].iter().copied())
    }

    pub fn degree(&self, x: usize) -> usize {
        self.row_ptr[x + 1] - self.row_ptr[x]
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    /// `q(x, y)` for `x != y`; `-q(x)` on the diagonal.
    pub fn rate(&self, x: usize, y: usize) -> f64 {
        if x == y {
            return -self.total_rate[x];
        }
        let span = self.row_ptr[x]..self.row_ptr[x + 1];
        match self.cols[span.clone()].binary_search(&y) {
            Ok(k) => self.vals[span.start + k],
            Err(_) => 0.0,
        }
    }

    /// All entries as `(x, y, q(x, y))` triples.
    pub fn entries(&self) -> Vec<(usize, usize, f64)> {
        (0..self.n)
            .flat_map(|x| self.row(x).map(move |(y, r)| (x, y, r)))
            .collect()
    }

    pub fn total_rate(&self, x: usize) -> f64 {
        self.total_rate[x]
    }

    pub fn total_rates(&self) -> &[f64] {
        &self.total_rate
    }

    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    pub fn pi_diag(&self) -> f64 {
        self.pi_diag
    }

    pub fn pi_max(&self) -> f64 {
        self.pi_max
    }

    pub fn pi_min(&self) -> f64 {
        self.pi.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn q_max(&self) -> f64 {
        self.q_max
    }

    pub fn nu_total(&self) -> f64 {
        self.nu_total
    }

    pub fn is_reversible(&self) -> bool {
        self.reversible
    }

    pub fn lattice(&self) -> Option<&Lattice> {
        self.lattice.as_ref()
    }

    /// `max_y |sum_x pi(x) q(x, y)|` with `q(y, y) = -q(y)`.
    pub fn balance_residual(&self) -> f64 {
        let mut flow: Vec<f64> = (0..self.n).map(|y| -self.pi[y] * self.total_rate[y]).collect();
        for x in 0..self.n {
            for (y, r) in self.row(x) {
                flow[y] += self.pi[x] * r;
            }
        }
        flow.iter().fold(0.0, |m, f| m.max(f.abs()))
    }

    /// `max |pi(x) q(x, y) - pi(y) q(y, x)|` over all pairs.
    pub fn detailed_balance_residual(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for x in 0..self.n {
            for (y, r) in self.row(x) {
                worst = worst.max((self.pi[x] * r - self.pi[y] * self.rate(y, x)).abs());
            }
        }
        worst
    }

    pub fn summary(&self) -> KernelSummary {
        KernelSummary {
            n: self.n,
            edges: self.nnz(),
            pi_diag: self.pi_diag,
            pi_min: self.pi_min(),
            pi_max: self.pi_max,
            q_max: self.q_max,
            nu_total: self.nu_total,
            reversible: self.reversible,
            lattice: self.lattice.as_ref().map(|l| l.radices().to_vec()),
        }
    }

    /// Text form: `n` on the first line, then `x y rate` per entry with 17
    /// significant digits. Lines starting with `#` are comments.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# voter kernel: n, then `x y rate` per off-diagonal entry");
        let _ = writeln!(out, "{}", self.n);
        for (x, y, r) in self.entries() {
            let _ = writeln!(out, "{x} {y} {r:.16e}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Kernel> {
        let mut lines = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim())
            .filter(|l| !l.is_empty());
        let n: usize = lines
            .next()
            .ok_or_else(|| Error::Parse("missing site count".into()))?
            .parse()
            .map_err(|e| Error::Parse(format!("site count: {e}")))?;
        let mut entries = Vec::new();
        for line in lines {
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(Error::Parse(format!("expected `x y rate`, got `{line}`")));
            }
            let x = fields[0].parse().map_err(|e| Error::Parse(format!("{line}: {e}")))?;
            let y = fields[1].parse().map_err(|e| Error::Parse(format!("{line}: {e}")))?;
            let r = fields[2].parse().map_err(|e| Error::Parse(format!("{line}: {e}")))?;
            entries.push((x, y, r));
        }
        Kernel::from_rates(n, &entries)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Kernel> {
        Kernel::from_text(&std::fs::read_to_string(path)?)
    }
}

/// The normalized pair measure `nu_bar(a, b) = pi(a)^2 q(a, b) / nu(1)`.
#[derive(Debug, Clone)]
pub struct PairMeasure {
    pairs: Vec<(usize, usize)>,
    weights: Vec<f64>,
    normalizer: f64,
}

impl PairMeasure {
    pub fn new(kernel: &Kernel) -> PairMeasure {
        let mut pairs = Vec::with_capacity(kernel.nnz());
        let mut raw = Vec::with_capacity(kernel.nnz());
        for (x, y, r) in kernel.entries() {
            pairs.push((x, y));
            raw.push(kernel.pi[x] * kernel.pi[x] * r);
        }
        let normalizer: f64 = raw.iter().sum();
        let weights = raw.into_iter().map(|w| w / normalizer).collect();
        PairMeasure {
            pairs,
            weights,
            normalizer,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = ((usize, usize), f64)> + '_ {
        self.pairs.iter().copied().zip(self.weights.iter().copied())
    }

    /// `nu(1)` recomputed as the sum of unnormalized weights.
    pub fn normalizer(&self) -> f64 {
        self.normalizer
    }
}

/// Which pair of starting points a meeting-time question refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PairLaw {
    /// `(U, U')` with law `pi x pi`.
    Product,
    /// `(V, V')` with law `nu_bar`.
    Edge,
}

/// Alias-table sampler for `pi`, `pi x pi` and `nu_bar`.
#[derive(Debug, Clone)]
pub struct PairSampler {
    pi: WeightedAliasIndex<f64>,
    edge: WeightedAliasIndex<f64>,
    pairs: Vec<(usize, usize)>,
}

impl PairSampler {
    pub fn new(kernel: &Kernel) -> PairSampler {
        let measure = PairMeasure::new(kernel);
        PairSampler {
            pi: WeightedAliasIndex::new(kernel.pi.clone()).expect("pi is a probability vector"),
            edge: WeightedAliasIndex::new(measure.weights.clone()).expect("nu_bar has positive mass"),
            pairs: measure.pairs,
        }
    }

    pub fn site<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.pi.sample(rng)
    }

    pub fn sample<R: Rng + ?Sized>(&self, which: PairLaw, rng: &mut R) -> (usize, usize) {
        match which {
            PairLaw::Product => (self.site(rng), self.site(rng)),
            PairLaw::Edge => self.pairs[self.edge.sample(rng)],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn complete(n: usize, rate: f64) -> Kernel {
        let mut e = Vec::new();
        for x in 0..n {
            for y in 0..n {
                if x != y {
                    e.push((x, y, rate));
                }
            }
        }
        Kernel::from_rates(n, &e).unwrap()
    }

    #[test]
    fn symmetric_two_state() {
        let k = Kernel::from_rates(2, &[(0, 1, 1.0), (1, 0, 1.0)]).unwrap();
        assert!(close(k.pi()[0], 0.5, 1e-15));
        assert_eq!(k.q_max(), 1.0);
        assert!(close(k.nu_total(), 0.5, 1e-15));
        assert!(close(k.pi_diag(), 0.5, 1e-15));
        assert!(k.is_reversible());
    }

    #[test]
    fn complete_three_sites() {
        let k = complete(3, 0.5);
        for p in k.pi() {
            assert!(close(*p, 1.0 / 3.0, 1e-14));
        }
        assert!(close(k.nu_total(), 1.0 / 3.0, 1e-14));
        assert!(close(k.pi_diag(), 1.0 / 3.0, 1e-14));
    }

    #[test]
    fn missing_return_path_is_reducible() {
        let err = Kernel::from_rates(3, &[(0, 1, 1.0), (1, 2, 1.0)]).unwrap_err();
        assert_eq!(err, Error::NotIrreducible);
    }

    #[test]
    fn construction_errors() {
        assert!(matches!(
            Kernel::from_rates(2, &[(0, 1, -1.0), (1, 0, 1.0)]),
            Err(Error::NegativeRate { .. })
        ));
        assert!(matches!(Kernel::from_rates(2, &[(0, 2, 1.0)]), Err(Error::BadIndex(_))));
    }

    #[test]
    fn two_state_asymmetric_stationary() {
        let pi = stationary_distribution(2, &[(0, 1, 2.0), (1, 0, 1.0)]).unwrap();
        assert!(close(pi[0], 1.0 / 3.0, 1e-15));
        assert!(close(pi[1], 2.0 / 3.0, 1e-15));
    }

    #[test]
    fn doubly_stochastic_has_uniform_pi() {
        // A directed 4-cycle plus a chord pattern with zero column sums.
        let e = [
            (0, 1, 1.0),
            (1, 2, 1.0),
            (2, 3, 1.0),
            (3, 0, 1.0),
            (0, 2, 0.5),
            (2, 0, 0.5),
        ];
        let k = Kernel::from_rates(4, &e).unwrap();
        for p in k.pi() {
            assert!(close(*p, 0.25, 1e-14));
        }
        assert!(!k.is_reversible());
    }

    #[test]
    fn path_graph_adjacency() {
        let a = vec![vec![0, 1, 0], vec![1, 0, 1], vec![0, 1, 0]];
        let k = Kernel::from_adjacency(&a).unwrap();
        assert_eq!(k.pi(), &[0.25, 0.5, 0.25]);
        let generic = stationary_distribution(3, &k.entries()).unwrap();
        for (a, b) in generic.iter().zip(k.pi()) {
            assert!(close(*a, *b, 1e-14));
        }
    }

    #[test]
    fn k3_adjacency_and_loops() {
        let a = vec![vec![0, 1, 1], vec![1, 0, 1], vec![1, 1, 0]];
        let k = Kernel::from_adjacency(&a).unwrap();
        assert_eq!(k.rate(0, 1), 0.5);
        assert_eq!(k.total_rate(2), 1.0);

        // Whole loop at 0, with total degree A(0) = 4.
        let a = vec![vec![2, 1, 1], vec![1, 0, 1], vec![1, 1, 0]];
        let k = Kernel::from_adjacency(&a).unwrap();
        assert_eq!(k.total_rate(0), 0.5);
        assert!(k.is_reversible());
    }

    #[test]
    fn adjacency_errors() {
        let asym = vec![vec![0, 1], vec![0, 0]];
        assert!(matches!(Kernel::from_adjacency(&asym), Err(Error::AsymmetricAdjacency(..))));
        let iso = vec![vec![0, 1, 0], vec![1, 0, 0], vec![0, 0, 0]];
        assert_eq!(Kernel::from_adjacency(&iso).unwrap_err(), Error::ZeroDegree(2));
        let split = vec![
            vec![0, 1, 0, 0],
            vec![1, 0, 0, 0],
            vec![0, 0, 0, 1],
            vec![0, 0, 1, 0],
        ];
        assert_eq!(Kernel::from_adjacency(&split).unwrap_err(), Error::Disconnected);
    }

    #[test]
    fn pair_measure_on_symmetric_chains() {
        let k = Kernel::from_rates(2, &[(0, 1, 1.0), (1, 0, 1.0)]).unwrap();
        let m = PairMeasure::new(&k);
        for (_, w) in m.iter() {
            assert!(close(w, 0.5, 1e-15));
        }
        let k = complete(3, 0.5);
        let m = PairMeasure::new(&k);
        assert_eq!(m.iter().count(), 6);
        for ((a, b), w) in m.iter() {
            assert_ne!(a, b);
            assert!(close(w, 1.0 / 6.0, 1e-15));
        }
        assert!(close(m.normalizer(), k.nu_total(), 1e-12));
    }

    #[test]
    fn edge_pairs_never_coincide_and_diagonal_frequency() {
        let k = Kernel::from_rates(3, &[(0, 1, 2.0), (1, 2, 1.0), (2, 0, 0.5), (1, 0, 0.3)]).unwrap();
        let s = PairSampler::new(&k);
        let mut rng = stream(1, "pairs", 0);
        for _ in 0..1000 {
            let (a, b) = s.sample(PairLaw::Edge, &mut rng);
            assert_ne!(a, b);
        }
        let draws = 100_000;
        let hits = (0..draws)
            .filter(|_| {
                let (a, b) = s.sample(PairLaw::Product, &mut rng);
                a == b
            })
            .count();
        let p = k.pi_diag();
        let sigma = (p * (1.0 - p) / draws as f64).sqrt();
        assert!((hits as f64 / draws as f64 - p).abs() < 3.0 * sigma);
    }

    #[test]
    fn uniform_product_pairs() {
        let k = complete(4, 1.0 / 3.0);
        let s = PairSampler::new(&k);
        let mut rng = stream(2, "pairs", 0);
        let mut counts = [[0usize; 4]; 4];
        let draws = 160_000;
        for _ in 0..draws {
            let (a, b) = s.sample(PairLaw::Product, &mut rng);
            counts[a][b] += 1;
        }
        let p = 1.0 / 16.0;
        let sigma = (p * (1.0 - p) / draws as f64).sqrt();
        for row in counts {
            for c in row {
                assert!((c as f64 / draws as f64 - p).abs() < 4.0 * sigma);
            }
        }
    }

    #[test]
    fn text_round_trip_is_bit_exact() {
        let k = Kernel::from_rates(3, &[(0, 1, 0.1), (1, 2, 1.0 / 3.0), (2, 0, std::f64::consts::PI), (1, 0, 1e-7)])
            .unwrap();
        let back = Kernel::from_text(&k.to_text()).unwrap();
        assert_eq!(k.entries(), back.entries());
        assert_eq!(k.pi(), back.pi());
    }
}
