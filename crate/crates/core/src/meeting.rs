//! Exact meeting times of two independent copies of a kernel.
//!
//! Two routes compute `h1(x, y) = E[M_{x,y}]` and `h2(x, y) = E[M_{x,y}^2]`:
//!
//! * dense: the product chain on unordered pairs `{x, y}` with the diagonal
//!   absorbing, solved by LU (`n <= 64`);
//! * reduced: for translation-invariant kernels the difference of the two
//!   walkers is itself a Markov chain on the group, jumping by `e` at rate
//!   `q(0, e) + q(0, -e)`, and `M_{x,y}` is its hitting time of 0 from
//!   `y - x`.
//!
//! Tails and dual expectations are evaluated by uniformization of the
//! killed product (or difference) chain.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::{spectral_gap, tv_distance};
use crate::error::{Error, Result};
use crate::kernel::{Kernel, PairLaw, PairMeasure, DENSE_CAP};
use crate::lattice::Lattice;
use crate::rng::stream;
use crate::semigroup::{SparseGenerator, TRUNCATION_TOL};

/// Largest kernel handled by the dense product-chain route.
pub const DENSE_PAIR_CAP: usize = 64;

/// Allowed negative slack on the decorrelation bound margins.
pub const MARGIN_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    Dense,
    Reduced,
}

#[derive(Debug, Clone)]
enum PairFunction {
    /// Values on ordered pairs, row-major.
    Dense { n: usize, values: Vec<f64> },
    /// Values indexed by the group difference `y - x`.
    Reduced { lattice: Lattice, values: Vec<f64> },
}

impl PairFunction {
    fn at(&self, x: usize, y: usize) -> f64 {
        match self {
            PairFunction::Dense { n, values } => values[x * n + y],
            PairFunction::Reduced { lattice, values } => values[lattice.sub(y, x)],
        }
    }
}

/// Exact first and second moments of the meeting times.
#[derive(Debug, Clone)]
pub struct MeetingSolution {
    h1: PairFunction,
    h2: PairFunction,
    /// `E[M_{U,U'}]` with `(U, U') ~ pi x pi`.
    pub t_meet: f64,
    /// `E[M_{V,V'}]` with `(V, V') ~ nu_bar`.
    pub mvv_mean: f64,
    /// `E[M_{V,V'}^2]`.
    pub mvv_second: f64,
    pub route: Route,
}

impl MeetingSolution {
    pub fn h1(&self, x: usize, y: usize) -> f64 {
        self.h1.at(x, y)
    }

    pub fn h2(&self, x: usize, y: usize) -> f64 {
        self.h2.at(x, y)
    }
}

/// Picks the reduced route when a lattice is attached and the dense route
/// for small kernels.
pub fn meeting_moments(kernel: &Kernel) -> Result<MeetingSolution> {
    if kernel.lattice().is_some() && kernel.n() <= DENSE_CAP {
        meeting_moments_reduced(kernel)
    } else if kernel.n() <= DENSE_PAIR_CAP {
        meeting_moments_dense(kernel)
    } else {
        Err(Error::TooLarge(format!(
            "{} sites without translation invariance (dense cap {DENSE_PAIR_CAP})",
            kernel.n()
        )))
    }
}

fn unordered_index(n: usize) -> impl Fn(usize, usize) -> usize {
    move |x, y| {
        let (a, b) = if x < y { (x, y) } else { (y, x) };
        a * (2 * n - a - 1) / 2 + (b - a - 1)
    }
}

pub fn meeting_moments_dense(kernel: &Kernel) -> Result<MeetingSolution> {
    let n = kernel.n();
    if n > DENSE_PAIR_CAP {
        return Err(Error::TooLarge(format!("dense product chain needs n <= {DENSE_PAIR_CAP}")));
    }
    if n < 2 {
        return Err(Error::BadParam("meeting times need at least two sites".into()));
    }
    let m = n * (n - 1) / 2;
    let idx = unordered_index(n);
    let mut a = DMatrix::<f64>::zeros(m, m);
    for x in 0..n {
        for y in x + 1..n {
            let i = idx(x, y);
            a[(i, i)] = kernel.total_rate(x) + kernel.total_rate(y);
            for (z, r) in kernel.row(x) {
                if z != y {
                    a[(i, idx(z, y))] -= r;
                }
            }
            for (z, r) in kernel.row(y) {
                if z != x {
                    a[(i, idx(x, z))] -= r;
                }
            }
        }
    }
    let lu = a.lu();
    let h1u = lu
        .solve(&DVector::from_element(m, 1.0))
        .ok_or_else(|| Error::SingularSystem("first meeting moment".into()))?;
    let h2u = lu
        .solve(&(&h1u * 2.0))
        .ok_or_else(|| Error::SingularSystem("second meeting moment".into()))?;
    let expand = |u: &DVector<f64>| {
        let mut values = vec![0.0; n * n];
        for x in 0..n {
            for y in 0..n {
                if x != y {
                    values[x * n + y] = u[idx(x, y)];
                }
            }
        }
        PairFunction::Dense { n, values }
    };
    let h1 = expand(&h1u);
    let h2 = expand(&h2u);
    Ok(summarize(kernel, h1, h2, Route::Dense))
}

/// Difference chain: live states are the nonzero group elements, stored at
/// index `delta - 1`.
fn difference_rates(kernel: &Kernel, lattice: &Lattice) -> Vec<Vec<(usize, f64)>> {
    let n = kernel.n();
    let base: Vec<(usize, f64)> = kernel.row(0).collect();
    (0..n)
        .map(|delta| {
            let mut row: Vec<(usize, f64)> = Vec::with_capacity(2 * base.len());
            for &(e, r) in &base {
                row.push((lattice.add(delta, e), r));
                row.push((lattice.sub(delta, e), r));
            }
            row.sort_by_key(|p| p.0);
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(row.len());
            for (t, r) in row {
                match merged.last_mut() {
                    Some(last) if last.0 == t => last.1 += r,
                    _ => merged.push((t, r)),
                }
            }
            merged
        })
        .collect()
}

pub fn meeting_moments_reduced(kernel: &Kernel) -> Result<MeetingSolution> {
    let lattice = kernel
        .lattice()
        .ok_or_else(|| Error::StrategyMismatch("reduction needs a translation-invariant kernel".into()))?
        .clone();
    let n = kernel.n();
    if n > DENSE_CAP {
        return Err(Error::TooLarge(format!("difference chain on {n} states")));
    }
    if n < 2 {
        return Err(Error::BadParam("meeting times need at least two sites".into()));
    }
    let rates = difference_rates(kernel, &lattice);
    let m = n - 1;
    let exit = 2.0 * kernel.total_rate(0);
    let mut a = DMatrix::<f64>::zeros(m, m);
    for delta in 1..n {
        a[(delta - 1, delta - 1)] = exit;
        for &(t, r) in &rates[delta] {
            if t != 0 {
                a[(delta - 1, t - 1)] -= r;
            }
        }
    }
    let lu = a.lu();
    let h1r = lu
        .solve(&DVector::from_element(m, 1.0))
        .ok_or_else(|| Error::SingularSystem("difference hitting time".into()))?;
    let h2r = lu
        .solve(&(&h1r * 2.0))
        .ok_or_else(|| Error::SingularSystem("difference hitting time second moment".into()))?;
    let lift = |v: &DVector<f64>| {
        let mut values = vec![0.0; n];
        values[1..].copy_from_slice(v.as_slice());
        PairFunction::Reduced {
            lattice: lattice.clone(),
            values,
        }
    };
    let h1 = lift(&h1r);
    let h2 = lift(&h2r);
    Ok(summarize(kernel, h1, h2, Route::Reduced))
}

fn summarize(kernel: &Kernel, h1: PairFunction, h2: PairFunction, route: Route) -> MeetingSolution {
    let pi = kernel.pi();
    let n = kernel.n();
    let t_meet = match &h1 {
        PairFunction::Reduced { values, .. } => values.iter().sum::<f64>() / n as f64,
        PairFunction::Dense { .. } => {
            let mut acc = 0.0;
            for x in 0..n {
                for y in 0..n {
                    acc += pi[x] * pi[y] * h1.at(x, y);
                }
            }
            acc
        }
    };
    let measure = PairMeasure::new(kernel);
    let mvv_mean = measure.iter().map(|((a, b), w)| w * h1.at(a, b)).sum();
    let mvv_second = measure.iter().map(|((a, b), w)| w * h2.at(a, b)).sum();
    MeetingSolution {
        h1,
        h2,
        t_meet,
        mvv_mean,
        mvv_second,
        route,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityCheck {
    /// `|E[M_VV'] - (1 - pi_diag) / (2 nu)| / ((1 - pi_diag) / (2 nu))`.
    pub mvv_residual: f64,
    /// `|t_meet - nu E[M_VV'^2]| / t_meet`.
    pub muu_residual: f64,
    /// `(1 / nu) ((1 - pi_diag) / 2)^2`.
    pub lower_bound: f64,
    pub lower_bound_ok: bool,
}

pub fn identity_check(kernel: &Kernel, solution: &MeetingSolution) -> IdentityCheck {
    let nu = kernel.nu_total();
    let spread = 1.0 - kernel.pi_diag();
    let mvv_target = spread / (2.0 * nu);
    let lower_bound = (spread / 2.0).powi(2) / nu;
    IdentityCheck {
        mvv_residual: (solution.mvv_mean - mvv_target).abs() / mvv_target,
        muu_residual: (solution.t_meet - nu * solution.mvv_second).abs() / solution.t_meet,
        lower_bound,
        lower_bound_ok: solution.t_meet >= lower_bound - 1e-9,
    }
}

/// The killed two-walker chain together with how pairs map onto its states.
pub struct PairChain<'a> {
    kernel: &'a Kernel,
    generator: SparseGenerator,
    kind: PairChainKind,
}

enum PairChainKind {
    /// Ordered pairs `(x, y)`, `x != y`, at index `x * n + y` minus skipped
    /// diagonal entries; `index[x * n + y]` is `usize::MAX` on the diagonal.
    Product { index: Vec<usize> },
    Difference { lattice: Lattice },
}

impl<'a> PairChain<'a> {
    /// Full ordered product chain; required for configuration-dependent
    /// expectations.
    pub fn product(kernel: &'a Kernel) -> Result<PairChain<'a>> {
        let n = kernel.n();
        if n > DENSE_PAIR_CAP {
            return Err(Error::TooLarge(format!("product chain needs n <= {DENSE_PAIR_CAP}")));
        }
        let mut index = vec![usize::MAX; n * n];
        let mut next = 0;
        for x in 0..n {
            for y in 0..n {
                if x != y {
                    index[x * n + y] = next;
                    next += 1;
                }
            }
        }
        let mut rows = vec![Vec::new(); next];
        let mut exit = vec![0.0; next];
        for x in 0..n {
            for y in 0..n {
                if x == y {
                    continue;
                }
                let s = index[x * n + y];
                exit[s] = kernel.total_rate(x) + kernel.total_rate(y);
                for (z, r) in kernel.row(x) {
                    if z != y {
                        rows[s].push((index[z * n + y], r));
                    }
                }
                for (z, r) in kernel.row(y) {
                    if z != x {
                        rows[s].push((index[x * n + z], r));
                    }
                }
            }
        }
        Ok(PairChain {
            kernel,
            generator: SparseGenerator::new(rows, exit),
            kind: PairChainKind::Product { index },
        })
    }

    /// Difference chain of a translation-invariant kernel.
    pub fn difference(kernel: &'a Kernel) -> Result<PairChain<'a>> {
        let lattice = kernel
            .lattice()
            .ok_or_else(|| Error::StrategyMismatch("reduction needs a translation-invariant kernel".into()))?
            .clone();
        let rates = difference_rates(kernel, &lattice);
        let exit = 2.0 * kernel.total_rate(0);
        let rows = rates[1..]
            .iter()
            .map(|row| row.iter().filter(|(t, _)| *t != 0).map(|&(t, r)| (t - 1, r)).collect())
            .collect();
        let n = kernel.n();
        Ok(PairChain {
            kernel,
            generator: SparseGenerator::new(rows, vec![exit; n - 1]),
            kind: PairChainKind::Difference { lattice },
        })
    }

    /// Difference chain when available, product chain otherwise.
    pub fn auto(kernel: &'a Kernel) -> Result<PairChain<'a>> {
        if kernel.lattice().is_some() {
            PairChain::difference(kernel)
        } else if kernel.n() <= DENSE_PAIR_CAP {
            PairChain::product(kernel)
        } else {
            Err(Error::TooLarge(format!(
                "pair chain on {} sites without translation invariance",
                kernel.n()
            )))
        }
    }

    /// Initial law restricted to live (non-met) states.
    fn initial(&self, which: PairLaw) -> Vec<f64> {
        let kernel = self.kernel;
        let pi = kernel.pi();
        let mut init = vec![0.0; self.generator.states()];
        match (&self.kind, which) {
            (PairChainKind::Product { index }, PairLaw::Product) => {
                let n = kernel.n();
                for x in 0..n {
                    for y in 0..n {
                        if x != y {
                            init[index[x * n + y]] = pi[x] * pi[y];
                        }
                    }
                }
            }
            (PairChainKind::Product { index }, PairLaw::Edge) => {
                let n = kernel.n();
                for ((a, b), w) in PairMeasure::new(kernel).iter() {
                    init[index[a * n + b]] = w;
                }
            }
            (PairChainKind::Difference { .. }, PairLaw::Product) => {
                let n = kernel.n() as f64;
                init.iter_mut().for_each(|v| *v = 1.0 / n);
            }
            (PairChainKind::Difference { .. }, PairLaw::Edge) => {
                let q0 = kernel.total_rate(0);
                for (e, r) in kernel.row(0) {
                    init[e - 1] += r / q0;
                }
            }
        }
        init
    }

    /// `P(M > t)` for each `t` in `times`.
    pub fn tail(&self, which: PairLaw, times: &[f64]) -> Vec<f64> {
        let init = self.initial(which);
        self.generator
            .evolve_linear(&init, times, TRUNCATION_TOL, |v| v.iter().sum())
    }

    /// Sub-probability law of the ordered pair of positions at time `t` on
    /// the event that the walkers have not met, as a dense `n x n` array.
    pub fn surviving_law(&self, which: PairLaw, t: f64) -> Result<Vec<f64>> {
        let index = match &self.kind {
            PairChainKind::Product { index } => index,
            PairChainKind::Difference { .. } => {
                return Err(Error::StrategyMismatch("joint positions need the product chain".into()))
            }
        };
        let evolved = self.generator.evolve(&self.initial(which), t, TRUNCATION_TOL);
        Ok(index
            .iter()
            .map(|&s| if s == usize::MAX { 0.0 } else { evolved[s] })
            .collect())
    }

    pub fn lattice(&self) -> Option<&Lattice> {
        match &self.kind {
            PairChainKind::Difference { lattice } => Some(lattice),
            PairChainKind::Product { .. } => None,
        }
    }
}

/// `P(M > t)` for `(U, U')` or `(V, V')` on a grid of times.
pub fn meeting_tail(kernel: &Kernel, which: PairLaw, times: &[f64]) -> Result<Vec<f64>> {
    if times.iter().any(|t| !(*t >= 0.0)) {
        return Err(Error::BadParam("tail times must be nonnegative".into()));
    }
    Ok(PairChain::auto(kernel)?.tail(which, times))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MuvConsistency {
    pub times: Vec<f64>,
    pub tail_uu: Vec<f64>,
    pub tail_vv: Vec<f64>,
    pub residuals: Vec<f64>,
    pub max_residual: f64,
}

/// Cumulative integral of samples on a uniform grid: composite Simpson on
/// pairs of intervals, with a three-point rule for a trailing odd interval.
pub fn cumulative_simpson(values: &[f64], step: f64) -> Vec<f64> {
    let mut out = vec![0.0; values.len()];
    for i in 1..values.len() {
        out[i] = if i % 2 == 0 {
            out[i - 2] + step / 3.0 * (values[i - 2] + 4.0 * values[i - 1] + values[i])
        } else if i == 1 {
            if values.len() > 2 {
                step / 12.0 * (5.0 * values[0] + 8.0 * values[1] - values[2])
            } else {
                0.5 * step * (values[0] + values[1])
            }
        } else {
            out[i - 1] + step / 12.0 * (-values[i - 2] + 8.0 * values[i - 1] + 5.0 * values[i])
        };
    }
    out
}

/// Residuals of `P(M_UU' > t) = 1 - pi_diag - 2 nu int_0^t P(M_VV' > s) ds`
/// on the grid `0, step, ..., horizon`.
pub fn muv_consistency(kernel: &Kernel, step: f64, horizon: f64) -> Result<MuvConsistency> {
    if !(step > 0.0) || !(horizon >= step) {
        return Err(Error::BadParam(format!("grid step {step}, horizon {horizon}")));
    }
    let points = (horizon / step).round() as usize + 1;
    let times: Vec<f64> = (0..points).map(|i| i as f64 * step).collect();
    let chain = PairChain::auto(kernel)?;
    let tail_uu = chain.tail(PairLaw::Product, &times);
    let tail_vv = chain.tail(PairLaw::Edge, &times);
    let integral = cumulative_simpson(&tail_vv, step);
    let spread = 1.0 - kernel.pi_diag();
    let nu = kernel.nu_total();
    let residuals: Vec<f64> = tail_uu
        .iter()
        .zip(&integral)
        .map(|(u, i)| (u - spread + 2.0 * nu * i).abs())
        .collect();
    let max_residual = residuals.iter().cloned().fold(0.0, f64::max);
    Ok(MuvConsistency {
        times,
        tail_uu,
        tail_vv,
        residuals,
        max_residual,
    })
}

/// Pair observables of a voter configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairObservable {
    /// `p1 p0`, dual to `(U, U')`.
    P1P0,
    /// `p10`, dual to `(V, V')`.
    P10,
    /// `p01`, dual to `(V, V')` with the roles swapped.
    P01,
}

fn pair_value(law: &[f64], n: usize, config: &[bool], observable: PairObservable) -> f64 {
    let mut acc = 0.0;
    for x in 0..n {
        for y in 0..n {
            let hit = match observable {
                PairObservable::P1P0 | PairObservable::P10 => config[x] && !config[y],
                PairObservable::P01 => !config[x] && config[y],
            };
            if hit {
                acc += law[x * n + y];
            }
        }
    }
    acc
}

/// `E_xi[observable(xi_t)]` computed from the dual pair of killed walkers.
pub fn dual_pair_expectation(
    kernel: &Kernel,
    config: &[bool],
    observable: PairObservable,
    t: f64,
) -> Result<f64> {
    if config.len() != kernel.n() {
        return Err(Error::BadParam("configuration length differs from n".into()));
    }
    let chain = PairChain::product(kernel)?;
    let which = match observable {
        PairObservable::P1P0 => PairLaw::Product,
        _ => PairLaw::Edge,
    };
    let law = chain.surviving_law(which, t)?;
    Ok(pair_value(&law, kernel.n(), config, observable))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundMargin {
    pub lhs_p10: f64,
    pub lhs_p01: f64,
    pub rhs_tv: f64,
    pub rhs_gap: Option<f64>,
    /// `rhs - max(lhs)` for the total-variation bound.
    pub margin_tv: f64,
    pub margin_gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecorrelationCheck {
    pub s: f64,
    pub t: f64,
    pub tail_vv_s: f64,
    pub tail_vv_t: f64,
    pub tv_gap: f64,
    pub spectral_gap: Option<f64>,
    pub configurations: usize,
    pub min_margin_tv: f64,
    pub min_margin_gap: Option<f64>,
    pub margins: Vec<BoundMargin>,
}

impl DecorrelationCheck {
    pub fn holds(&self) -> bool {
        self.min_margin_tv >= -MARGIN_TOL && self.min_margin_gap.is_none_or(|m| m >= -MARGIN_TOL)
    }
}

/// All configurations for `n <= 12`, otherwise both consensus states plus
/// 256 Bernoulli(1/2) draws from the given seed.
pub fn bound_configurations(n: usize, seed: u64) -> Vec<Vec<bool>> {
    if n <= 12 {
        return (0u32..1 << n)
            .map(|code| (0..n).map(|x| code >> x & 1 == 1).collect())
            .collect();
    }
    let mut rng = stream(seed, "decorrelation_configurations", 0);
    let mut out = vec![vec![false; n], vec![true; n]];
    for _ in 0..256 {
        out.push((0..n).map(|_| rng.random_bool(0.5)).collect());
    }
    out
}

/// Compares `|E_xi[p10(xi_t)] - P(M_VV' > s) p1(xi) p0(xi)|` (and the same
/// for `p01`) against the total-variation bound
/// `P(M_VV' in (s, t]) + 4 P(M_VV' > s) d_E(t - s)` and, for reversible
/// kernels, the spectral bound
/// `P(M_VV' in (s, t]) + (2 pi_max q_max / nu) e^{-g (t - s)}`.
pub fn decorrelation_check(kernel: &Kernel, s: f64, t: f64, configs: &[Vec<bool>]) -> Result<DecorrelationCheck> {
    if !(0.0 < s && s < t) {
        return Err(Error::BadParam(format!("need 0 < s < t, got s = {s}, t = {t}")));
    }
    let n = kernel.n();
    let chain = PairChain::product(kernel)?;
    let tails = chain.tail(PairLaw::Edge, &[s, t]);
    let (tail_s, tail_t) = (tails[0], tails[1]);
    let tv_gap = tv_distance(kernel, t - s)?;
    let gap = if kernel.is_reversible() {
        Some(spectral_gap(kernel)?)
    } else {
        None
    };
    let law = chain.surviving_law(PairLaw::Edge, t)?;
    let window = tail_s - tail_t;
    let rhs_tv = window + 4.0 * tail_s * tv_gap;
    let rhs_gap = gap.map(|g| {
        window + 2.0 * kernel.pi_max() * kernel.q_max() / kernel.nu_total() * (-g * (t - s)).exp()
    });
    let pi = kernel.pi();
    let mut margins = Vec::with_capacity(configs.len());
    for config in configs {
        if config.len() != n {
            return Err(Error::BadParam("configuration length differs from n".into()));
        }
        let p1: f64 = (0..n).filter(|&x| config[x]).map(|x| pi[x]).sum();
        let baseline = tail_s * p1 * (1.0 - p1);
        let lhs_p10 = (pair_value(&law, n, config, PairObservable::P10) - baseline).abs();
        let lhs_p01 = (pair_value(&law, n, config, PairObservable::P01) - baseline).abs();
        let worst = lhs_p10.max(lhs_p01);
        margins.push(BoundMargin {
            lhs_p10,
            lhs_p01,
            rhs_tv,
            rhs_gap,
            margin_tv: rhs_tv - worst,
            margin_gap: rhs_gap.map(|r| r - worst),
        });
    }
    let min_margin_tv = margins.iter().map(|m| m.margin_tv).fold(f64::INFINITY, f64::min);
    let min_margin_gap = rhs_gap.map(|_| {
        margins
            .iter()
            .filter_map(|m| m.margin_gap)
            .fold(f64::INFINITY, f64::min)
    });
    Ok(DecorrelationCheck {
        s,
        t,
        tail_vv_s: tail_s,
        tail_vv_t: tail_t,
        tv_gap,
        spectral_gap: gap,
        configurations: configs.len(),
        min_margin_tv,
        min_margin_gap,
        margins,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo::{hypercube, moran, torus_nn, torus_range};

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn moran_meeting_time_closed_form() {
        // Apart walkers meet at rate 2/(n-1): t_meet = (1 - 1/n)(n-1)/2.
        for n in [3usize, 5, 12] {
            let expected = ((n - 1) * (n - 1)) as f64 / (2 * n) as f64;
            let k = moran(n).unwrap();
            let dense = meeting_moments_dense(&k).unwrap();
            let reduced = meeting_moments_reduced(&k).unwrap();
            assert!(rel(dense.t_meet, expected) < 1e-12);
            assert!(rel(reduced.t_meet, expected) < 1e-12);
        }
        let s = meeting_moments(&moran(3).unwrap()).unwrap();
        assert!((s.t_meet - 2.0 / 3.0).abs() < 1e-13);
        assert!((s.mvv_mean - 1.0).abs() < 1e-13);
        assert!((s.mvv_second - 2.0).abs() < 1e-13);
    }

    #[test]
    fn two_state_meeting() {
        let k = Kernel::from_rates(2, &[(0, 1, 1.0), (1, 0, 1.0)]).unwrap();
        let s = meeting_moments(&k).unwrap();
        assert!((s.t_meet - 0.25).abs() < 1e-14);
        assert!((s.h1(0, 1) - 0.5).abs() < 1e-14);
        assert_eq!(s.h1(1, 1), 0.0);
    }

    #[test]
    fn symmetric_walks_have_half_population_edge_mean() {
        for k in [torus_nn(4, 2).unwrap(), hypercube(4).unwrap(), torus_range(11, 2, 1).unwrap()] {
            let s = meeting_moments(&k).unwrap();
            let n = k.n() as f64;
            assert!(rel(s.mvv_mean, (n - 1.0) / 2.0) < 1e-10);
            assert!(rel(s.mvv_second, n * s.t_meet) < 1e-10);
            let c = identity_check(&k, &s);
            assert!((c.lower_bound - (n - 1.0).powi(2) / (4.0 * n)).abs() < 1e-9);
        }
    }

    #[test]
    fn reduction_agrees_with_dense_solve() {
        for n in 3..=8 {
            let k = torus_nn(n, 1).unwrap();
            let d = meeting_moments_dense(&k).unwrap();
            let r = meeting_moments_reduced(&k).unwrap();
            assert!(rel(d.t_meet, r.t_meet) < 1e-9);
            assert!(rel(d.mvv_second, r.mvv_second) < 1e-9);
            for x in 0..n {
                for y in 0..n {
                    assert!((d.h1(x, y) - r.h1(x, y)).abs() < 1e-9);
                    assert!((d.h2(x, y) - r.h2(x, y)).abs() < 1e-8);
                }
            }
            // Half-time identity: t_meet = E_pi[H_0] / 2 for the rate-one walk.
            let hit = rate_one_hitting_mean(&k);
            assert!(rel(d.t_meet, hit / 2.0) < 1e-9);
        }
    }

    /// `E_pi[H_0]` for a single walker, by a direct dense solve.
    fn rate_one_hitting_mean(k: &Kernel) -> f64 {
        let n = k.n();
        let m = DMatrix::from_fn(n - 1, n - 1, |i, j| -k.rate(i + 1, j + 1));
        let h = m.lu().solve(&DVector::from_element(n - 1, 1.0)).unwrap();
        h.iter().zip(&k.pi()[1..]).map(|(h, p)| h * p).sum()
    }

    #[test]
    fn moments_are_jensen_consistent() {
        let (k, _) = crate::zoo::random_regular_perm(14, 4, 5).unwrap();
        let s = meeting_moments(&k).unwrap();
        assert_eq!(s.route, Route::Dense);
        for x in 0..14 {
            for y in 0..14 {
                assert!(s.h1(x, y) >= 0.0);
                assert!(s.h2(x, y) >= s.h1(x, y).powi(2) - 1e-9);
            }
        }
        let c = identity_check(&k, &s);
        assert!(c.mvv_residual < 1e-8 && c.muu_residual < 1e-8 && c.lower_bound_ok);
    }

    #[test]
    fn identities_on_a_nonreversible_kernel() {
        let k = Kernel::from_rates(
            4,
            &[(0, 1, 1.0), (1, 2, 2.0), (2, 3, 0.5), (3, 0, 1.5), (0, 2, 0.25), (3, 1, 0.7)],
        )
        .unwrap();
        assert!(!k.is_reversible());
        let c = identity_check(&k, &meeting_moments(&k).unwrap());
        assert!(c.mvv_residual < 1e-10 && c.muu_residual < 1e-10 && c.lower_bound_ok);
    }

    #[test]
    fn tail_boundary_values() {
        let k = torus_nn(5, 1).unwrap();
        let uu = meeting_tail(&k, PairLaw::Product, &[0.0, 50.0 * 25.0]).unwrap();
        let vv = meeting_tail(&k, PairLaw::Edge, &[0.0]).unwrap();
        assert!((uu[0] - (1.0 - k.pi_diag())).abs() < 1e-14);
        assert!((vv[0] - 1.0).abs() < 1e-14);
        assert!(uu[1] < 1e-8);
        let k = moran(3).unwrap();
        let times = [0.0, 0.3, 1.0, 2.5];
        let vv = meeting_tail(&k, PairLaw::Edge, &times).unwrap();
        for (v, t) in vv.iter().zip(times) {
            assert!((v - (-t).exp()).abs() < 1e-12);
        }
        let uu = meeting_tail(&k, PairLaw::Product, &[50.0]).unwrap();
        assert!(uu[0] < 1e-8);
    }

    #[test]
    fn product_and_difference_tails_agree() {
        let k = torus_nn(6, 1).unwrap();
        let times = [0.0, 0.5, 2.0, 7.0];
        let p = PairChain::product(&k).unwrap();
        let d = PairChain::difference(&k).unwrap();
        for which in [PairLaw::Product, PairLaw::Edge] {
            for (a, b) in p.tail(which, &times).iter().zip(d.tail(which, &times)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn muv_relation_on_grid() {
        let c = muv_consistency(&moran(3).unwrap(), 0.01, 5.0).unwrap();
        assert!(c.max_residual <= 1e-6, "{}", c.max_residual);
        let c = muv_consistency(&moran(3).unwrap(), 0.01, 50.0).unwrap();
        assert!(*c.residuals.last().unwrap() <= 1e-8);
        let c = muv_consistency(&torus_nn(5, 1).unwrap(), 0.01, 10.0).unwrap();
        assert!(c.max_residual <= 1e-6, "{}", c.max_residual);
    }

    #[test]
    fn markov_bound_on_edge_tail() {
        let k = torus_nn(4, 2).unwrap();
        let times: Vec<f64> = (1..200).map(|i| 0.1 * i as f64).collect();
        let tails = meeting_tail(&k, PairLaw::Edge, &times).unwrap();
        for (t, p) in times.iter().zip(tails) {
            assert!(2.0 * k.nu_total() * t * p <= 1.0 - k.pi_diag() + 1e-12);
        }
    }

    #[test]
    fn cumulative_simpson_is_exact_for_cubics() {
        let h = 0.1;
        let f: Vec<f64> = (0..12).map(|i| (i as f64 * h).powi(2)).collect();
        let int = cumulative_simpson(&f, h);
        for (i, v) in int.iter().enumerate() {
            assert!((v - (i as f64 * h).powi(3) / 3.0).abs() < 1e-13);
        }
    }

    #[test]
    fn dual_expectations_examples() {
        let k = torus_nn(3, 2).unwrap();
        let ones = vec![true; 9];
        for obs in [PairObservable::P1P0, PairObservable::P10, PairObservable::P01] {
            for t in [0.0, 0.7] {
                assert_eq!(dual_pair_expectation(&k, &ones, obs, t).unwrap(), 0.0);
            }
        }
        let config: Vec<bool> = (0..9).map(|x| x % 3 == 0 || x == 4).collect();
        let p1: f64 = config.iter().filter(|&&b| b).count() as f64 / 9.0;
        let v = dual_pair_expectation(&k, &config, PairObservable::P1P0, 0.0).unwrap();
        assert!((v - p1 * (1.0 - p1)).abs() < 1e-14);
    }

    #[test]
    fn bernoulli_average_of_duals() {
        // Averaging over xi ~ Bernoulli(u) gives u(1-u) P(M_UU' > t).
        let k = moran(6).unwrap();
        let u: f64 = 0.3;
        let t = 0.8;
        let mut avg = 0.0;
        for code in 0u32..64 {
            let config: Vec<bool> = (0..6).map(|x| code >> x & 1 == 1).collect();
            let ones = config.iter().filter(|&&b| b).count() as i32;
            let weight = u.powi(ones) * (1.0 - u).powi(6 - ones);
            avg += weight * dual_pair_expectation(&k, &config, PairObservable::P1P0, t).unwrap();
        }
        let tail = meeting_tail(&k, PairLaw::Product, &[t]).unwrap()[0];
        assert!((avg - u * (1.0 - u) * tail).abs() < 1e-13);
    }

    #[test]
    fn decorrelation_margins_on_small_torus() {
        let k = torus_nn(3, 2).unwrap();
        let configs = bound_configurations(9, 0);
        assert_eq!(configs.len(), 512);
        let c = decorrelation_check(&k, 0.5, 1.5, &configs).unwrap();
        assert!(c.holds());
        assert!(c.min_margin_gap.is_some());
        // Consensus: lhs vanishes so the margin equals the right-hand side.
        let m = &c.margins[0];
        assert_eq!(m.lhs_p10, 0.0);
        assert!((m.margin_tv - m.rhs_tv).abs() < 1e-15);

        let nonrev = Kernel::from_rates(3, &[(0, 1, 1.0), (1, 2, 1.0), (2, 0, 1.0)]).unwrap();
        let c = decorrelation_check(&nonrev, 0.5, 1.5, &bound_configurations(3, 0)).unwrap();
        assert!(c.min_margin_gap.is_none());
        assert!(c.holds());
        assert!(decorrelation_check(&k, 1.0, 1.0, &configs).is_err());
    }
}
