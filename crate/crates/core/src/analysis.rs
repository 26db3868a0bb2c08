//! Spectral gap, total-variation mixing, bottleneck ratios and the
//! per-instance scalars behind the two sufficient mixing conditions.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{Kernel, DENSE_CAP};
use crate::semigroup::{SparseGenerator, TRUNCATION_TOL};

/// Mixing threshold `1 / (2e)`.
pub const MIX_THRESHOLD: f64 = 0.5 / std::f64::consts::E;

/// Largest site count for the exhaustive bottleneck search.
pub const EXHAUSTIVE_CAP: usize = 22;

/// Tolerance added to `Phi_*^2 / 2` when checking the Cheeger bound.
pub const CHEEGER_TOL: f64 = 1e-9;

/// Symmetrized generator `S = D^{1/2} (-q) D^{-1/2}` as a dense matrix.
fn symmetrized_dense(kernel: &Kernel) -> DMatrix<f64> {
    let n = kernel.n();
    let sqrt_pi: Vec<f64> = kernel.pi().iter().map(|p| p.sqrt()).collect();
    let mut s = DMatrix::<f64>::zeros(n, n);
    for x in 0..n {
        s[(x, x)] = kernel.total_rate(x);
        for (y, r) in kernel.row(x) {
            s[(x, y)] -= sqrt_pi[x] * r / sqrt_pi[y];
        }
    }
    // Symmetrize away rounding; detailed balance already holds to 1e-10.
    let t = s.transpose();
    (s + t) * 0.5
}

/// Second smallest eigenvalue of `-q` for a reversible kernel.
pub fn spectral_gap(kernel: &Kernel) -> Result<f64> {
    if !kernel.is_reversible() {
        return Err(Error::NotReversible);
    }
    if kernel.n() < 2 {
        return Err(Error::BadParam("spectral gap needs at least two sites".into()));
    }
    if kernel.n() <= DENSE_CAP {
        let mut eig: Vec<f64> = symmetrized_dense(kernel).symmetric_eigenvalues().iter().copied().collect();
        eig.sort_by(|a, b| a.total_cmp(b));
        Ok(eig[1])
    } else {
        lanczos_gap(kernel, 1e-9)
    }
}

/// Lanczos on `S` with full reorthogonalization, started orthogonal to the
/// known null vector `sqrt(pi)` and kept there.
fn lanczos_gap(kernel: &Kernel, tol: f64) -> Result<f64> {
    let n = kernel.n();
    let sqrt_pi: Vec<f64> = kernel.pi().iter().map(|p| p.sqrt()).collect();
    let apply = |v: &[f64], out: &mut [f64]| {
        for x in 0..n {
            let mut acc = kernel.total_rate(x) * v[x];
            for (y, r) in kernel.row(x) {
                acc -= sqrt_pi[x] * r / sqrt_pi[y] * v[y];
            }
            out[x] = acc;
        }
    };
    let null = DVector::from_vec(sqrt_pi.clone());
    let project = |v: &mut DVector<f64>| {
        let c = v.dot(&null);
        v.axpy(-c, &null, 1.0);
    };

    let max_steps = 300.min(n - 1);
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(max_steps);
    // Deterministic start vector with no special structure.
    let mut v = DVector::from_iterator(n, (0..n).map(|i| ((i as f64 + 1.0) * 0.618_033_988_75).fract() - 0.5));
    project(&mut v);
    v /= v.norm();
    let mut alphas = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    let mut w = vec![0.0; n];
    let mut last = f64::NAN;
    for step in 0..max_steps {
        apply(v.as_slice(), &mut w);
        let mut wv = DVector::from_column_slice(&w);
        let alpha = wv.dot(&v);
        alphas.push(alpha);
        basis.push(v.clone());
        for _ in 0..2 {
            for b in &basis {
                let c = wv.dot(b);
                wv.axpy(-c, b, 1.0);
            }
            project(&mut wv);
        }
        let beta = wv.norm();
        let m = alphas.len();
        let mut t = DMatrix::<f64>::zeros(m, m);
        for i in 0..m {
            t[(i, i)] = alphas[i];
            if i + 1 < m {
                t[(i, i + 1)] = betas[i];
                t[(i + 1, i)] = betas[i];
            }
        }
        let eig = t.symmetric_eigen();
        let (idx, &theta) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        let residual = (beta * eig.eigenvectors[(m - 1, idx)]).abs();
        if residual < tol || beta < 1e-14 || ((theta - last).abs() < 1e-3 * tol && step > 10) {
            return Ok(theta);
        }
        last = theta;
        betas.push(beta);
        v = wv / beta;
    }
    Err(Error::ConvergenceFailure(format!("Lanczos after {max_steps} steps")))
}

fn generator_of(kernel: &Kernel) -> SparseGenerator {
    let rows = (0..kernel.n()).map(|x| kernel.row(x).collect()).collect();
    SparseGenerator::new(rows, kernel.total_rates().to_vec())
}

fn tv_from(gen: &SparseGenerator, pi: &[f64], x: usize, t: f64) -> f64 {
    let mut init = vec![0.0; pi.len()];
    init[x] = 1.0;
    let row = gen.evolve(&init, t, TRUNCATION_TOL);
    0.5 * row.iter().zip(pi).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Sites whose rows must be examined for `d_E`. For translation-invariant
/// kernels every row is a translate of row 0.
fn source_sites(kernel: &Kernel) -> Result<Vec<usize>> {
    if kernel.lattice().is_some() {
        Ok(vec![0])
    } else if kernel.n() <= DENSE_CAP {
        Ok((0..kernel.n()).collect())
    } else {
        Err(Error::TooLarge(format!(
            "total variation over {} rows exceeds the dense cap {DENSE_CAP}",
            kernel.n()
        )))
    }
}

/// Worst-case total variation distance `d_E(t) = max_x ||q_t(x, .) - pi||`.
pub fn tv_distance(kernel: &Kernel, t: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::BadParam(format!("time must be nonnegative, got {t}")));
    }
    let sources = source_sites(kernel)?;
    let gen = generator_of(kernel);
    Ok(sources
        .par_iter()
        .map(|&x| tv_from(&gen, kernel.pi(), x, t))
        .collect::<Vec<_>>()
        .into_iter()
        .fold(0.0, f64::max))
}

/// `t_mix = inf { t : d_E(t) <= 1/(2e) }`, by doubling then bisection to
/// relative tolerance 1e-7.
pub fn mixing_time(kernel: &Kernel) -> Result<f64> {
    let d = |t: f64| tv_distance(kernel, t);
    if d(0.0)? <= MIX_THRESHOLD {
        return Ok(0.0);
    }
    let mut lo = 0.0;
    let mut hi = 1.0 / kernel.q_max();
    while d(hi)? > MIX_THRESHOLD {
        lo = hi;
        hi *= 2.0;
        if hi > 1e12 {
            return Err(Error::ConvergenceFailure("mixing time bracket".into()));
        }
    }
    while hi - lo > 1e-7 * hi {
        let mid = 0.5 * (lo + hi);
        if d(mid)? > MIX_THRESHOLD {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

fn membership(n: usize, set: &[usize]) -> Result<Vec<bool>> {
    let mut inside = vec![false; n];
    for &x in set {
        if x >= n {
            return Err(Error::BadIndex(format!("site {x} with n = {n}")));
        }
        inside[x] = true;
    }
    let count = inside.iter().filter(|&&b| b).count();
    if count == 0 {
        return Err(Error::EmptySet);
    }
    if count == n {
        return Err(Error::FullSet);
    }
    Ok(inside)
}

fn ratio_of(kernel: &Kernel, inside: &[bool]) -> f64 {
    let pi = kernel.pi();
    let mut flux = 0.0;
    let mut mass = 0.0;
    for x in (0..kernel.n()).filter(|&x| inside[x]) {
        mass += pi[x];
        flux += kernel.row(x).filter(|&(y, _)| !inside[y]).map(|(_, r)| pi[x] * r).sum::<f64>();
    }
    flux / mass
}

/// `Phi(S) = sum_{x in S, y not in S} pi(x) q(x, y) / pi(S)`.
pub fn bottleneck_ratio(kernel: &Kernel, set: &[usize]) -> Result<f64> {
    let inside = membership(kernel.n(), set)?;
    Ok(ratio_of(kernel, &inside))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BottleneckStrategy {
    Exhaustive,
    Intervals1d,
}

impl std::str::FromStr for BottleneckStrategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exhaustive" => Ok(BottleneckStrategy::Exhaustive),
            "intervals_1d" | "intervals" => Ok(BottleneckStrategy::Intervals1d),
            other => Err(Error::Parse(format!("unknown bottleneck strategy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bottleneck {
    pub phi_star: f64,
    pub witness: Vec<usize>,
}

/// `Phi_* = min { Phi(S) : pi(S) <= 1/2 }` with a minimizing set.
pub fn bottleneck_optimum(kernel: &Kernel, strategy: BottleneckStrategy) -> Result<Bottleneck> {
    match strategy {
        BottleneckStrategy::Exhaustive => exhaustive_bottleneck(kernel),
        BottleneckStrategy::Intervals1d => interval_bottleneck(kernel),
    }
}

/// Picks intervals for one-dimensional translation-invariant kernels and the
/// exhaustive scan otherwise.
pub fn default_strategy(kernel: &Kernel) -> BottleneckStrategy {
    match kernel.lattice() {
        Some(l) if l.dim() == 1 => BottleneckStrategy::Intervals1d,
        _ => BottleneckStrategy::Exhaustive,
    }
}

fn interval_bottleneck(kernel: &Kernel) -> Result<Bottleneck> {
    match kernel.lattice() {
        Some(l) if l.dim() == 1 => {}
        _ => {
            return Err(Error::StrategyMismatch(
                "intervals_1d needs a one-dimensional translation-invariant kernel".into(),
            ))
        }
    }
    let n = kernel.n();
    let mut best: Option<Bottleneck> = None;
    for k in 1..=n / 2 {
        let mut inside = vec![false; n];
        inside[..k].iter_mut().for_each(|b| *b = true);
        let phi = ratio_of(kernel, &inside);
        if best.as_ref().is_none_or(|b| phi < b.phi_star) {
            best = Some(Bottleneck {
                phi_star: phi,
                witness: (0..k).collect(),
            });
        }
    }
    best.ok_or(Error::BadParam("need at least two sites".into()))
}

fn exhaustive_bottleneck(kernel: &Kernel) -> Result<Bottleneck> {
    let n = kernel.n();
    if n > EXHAUSTIVE_CAP {
        return Err(Error::TooLargeForExhaustive { n, cap: EXHAUSTIVE_CAP });
    }
    if n < 2 {
        return Err(Error::BadParam("need at least two sites".into()));
    }
    let pi = kernel.pi();
    let mut out_flow: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let mut in_flow: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (x, y, r) in kernel.entries() {
        out_flow[x].push((y, pi[x] * r));
        in_flow[y].push((x, pi[x] * r));
    }
    // Gray-code walk over all subsets; flux and mass updated per toggle.
    let mut inside = vec![false; n];
    let mut flux = 0.0;
    let mut mass = 0.0;
    let mut best_phi = f64::INFINITY;
    let mut best_code = 0u64;
    let mut gray = 0u64;
    for i in 1u64..(1u64 << n) {
        let v = i.trailing_zeros() as usize;
        gray ^= 1 << v;
        let adding = !inside[v];
        let to_outside: f64 = out_flow[v].iter().filter(|(y, _)| !inside[*y]).map(|(_, f)| f).sum();
        let from_inside: f64 = in_flow[v].iter().filter(|(x, _)| inside[*x]).map(|(_, f)| f).sum();
        if adding {
            flux += to_outside - from_inside;
            mass += pi[v];
        } else {
            flux += from_inside - to_outside;
            mass -= pi[v];
        }
        inside[v] = adding;
        if mass <= 0.5 + 1e-12 && gray != 0 {
            let phi = flux / mass;
            if phi < best_phi - 1e-14 {
                best_phi = phi;
                best_code = gray;
            }
        }
    }
    let witness: Vec<usize> = (0..n).filter(|&x| best_code >> x & 1 == 1).collect();
    let phi_star = bottleneck_ratio(kernel, &witness)?;
    Ok(Bottleneck { phi_star, witness })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheegerCheck {
    pub gap: f64,
    pub phi_star: f64,
    pub lower_bound: f64,
    pub bound_ok: bool,
}

/// Checks `g >= Phi_*^2 / 2`.
pub fn cheeger_check(kernel: &Kernel) -> Result<CheegerCheck> {
    let gap = spectral_gap(kernel)?;
    let phi_star = bottleneck_optimum(kernel, default_strategy(kernel))?.phi_star;
    let lower_bound = phi_star * phi_star / 2.0;
    Ok(CheegerCheck {
        gap,
        phi_star,
        lower_bound,
        bound_ok: gap >= lower_bound - CHEEGER_TOL,
    })
}

/// Per-instance scalars for the two mixing conditions. The limits
/// themselves are judged across a size ladder, not here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub n: usize,
    pub pi_diag: f64,
    pub pi_max: f64,
    pub q_max: f64,
    pub reversible: bool,
    pub t_mix: f64,
    pub t_meet: f64,
    /// `t_mix / t_meet`; the mixing condition asks for this to vanish.
    pub ratio_mix: f64,
    /// Spectral gap (reversible kernels only).
    pub gap: Option<f64>,
    /// `g * t_meet`.
    pub gap_times_tmeet: Option<f64>,
    /// `log(e v t_meet pi_max q_max) / (g t_meet)`; the gap condition asks for
    /// this to vanish.
    pub logterm: Option<f64>,
}

pub fn condition_report(kernel: &Kernel, t_meet: f64) -> Result<ConditionReport> {
    if !(t_meet > 0.0) {
        return Err(Error::BadParam(format!("t_meet must be positive, got {t_meet}")));
    }
    let t_mix = mixing_time(kernel)?;
    let gap = if kernel.is_reversible() {
        Some(spectral_gap(kernel)?)
    } else {
        None
    };
    let scale = (t_meet * kernel.pi_max() * kernel.q_max()).max(std::f64::consts::E);
    Ok(ConditionReport {
        n: kernel.n(),
        pi_diag: kernel.pi_diag(),
        pi_max: kernel.pi_max(),
        q_max: kernel.q_max(),
        reversible: kernel.is_reversible(),
        t_mix,
        t_meet,
        ratio_mix: t_mix / t_meet,
        gap,
        gap_times_tmeet: gap.map(|g| g * t_meet),
        logterm: gap.map(|g| scale.ln() / (g * t_meet)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo::{hypercube, moran, torus_nn, torus_range};

    fn two_state() -> Kernel {
        Kernel::from_rates(2, &[(0, 1, 1.0), (1, 0, 1.0)]).unwrap()
    }

    /// Eigenvalues of `-q` from a general (non-symmetric) Schur solve.
    fn brute_force_gap(kernel: &Kernel) -> f64 {
        let n = kernel.n();
        let m = DMatrix::from_fn(n, n, |x, y| -kernel.rate(x, y));
        let mut re: Vec<f64> = m.complex_eigenvalues().iter().map(|z| z.re).collect();
        re.sort_by(|a, b| a.total_cmp(b));
        re[1]
    }

    #[test]
    fn gap_examples() {
        assert!((spectral_gap(&two_state()).unwrap() - 2.0).abs() < 1e-12);
        for dim in 1..=6 {
            let g = spectral_gap(&hypercube(dim).unwrap()).unwrap();
            assert!((g - 2.0 / dim as f64).abs() < 1e-9);
        }
        for n in [3, 7, 20] {
            let k = moran(n).unwrap();
            let expected = n as f64 / (n as f64 - 1.0);
            assert!((spectral_gap(&k).unwrap() - expected).abs() < 1e-9);
            assert!((brute_force_gap(&k) - expected).abs() < 1e-9);
        }
    }

    #[test]
    fn gap_agrees_with_schur_route() {
        for k in [torus_nn(5, 2).unwrap(), torus_range(12, 3, 1).unwrap(), hypercube(5).unwrap()] {
            assert!((spectral_gap(&k).unwrap() - brute_force_gap(&k)).abs() < 1e-8);
        }
        let (k, _) = crate::zoo::random_regular_perm(40, 4, 3).unwrap();
        assert!((spectral_gap(&k).unwrap() - brute_force_gap(&k)).abs() < 1e-8);
    }

    #[test]
    fn lanczos_matches_dense() {
        let k = torus_nn(9, 2).unwrap();
        let dense = spectral_gap(&k).unwrap();
        let lanczos = lanczos_gap(&k, 1e-10).unwrap();
        assert!((dense - lanczos).abs() < 1e-9, "{dense} vs {lanczos}");
        let k = hypercube(7).unwrap();
        assert!((lanczos_gap(&k, 1e-10).unwrap() - 2.0 / 7.0).abs() < 1e-9);
    }

    #[test]
    fn non_reversible_gap_is_refused() {
        let k = Kernel::from_rates(3, &[(0, 1, 1.0), (1, 2, 1.0), (2, 0, 1.0)]).unwrap();
        assert_eq!(spectral_gap(&k).unwrap_err(), Error::NotReversible);
    }

    #[test]
    fn tv_two_state_closed_form() {
        let k = two_state();
        for t in [0.0, 0.2, 1.0, 3.0] {
            assert!((tv_distance(&k, t).unwrap() - 0.5 * (-2.0 * t).exp()).abs() < 1e-12);
        }
        let path = Kernel::from_adjacency(&[vec![0, 1, 0], vec![1, 0, 1], vec![0, 1, 0]]).unwrap();
        assert!((tv_distance(&path, 0.0).unwrap() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn lattice_shortcut_matches_all_rows() {
        let k = torus_nn(5, 2).unwrap();
        let gen = generator_of(&k);
        for t in [0.5, 3.0] {
            let all = (0..k.n()).map(|x| tv_from(&gen, k.pi(), x, t)).fold(0.0, f64::max);
            assert!((all - tv_distance(&k, t).unwrap()).abs() < 1e-13);
        }
    }

    #[test]
    fn mixing_time_two_state_and_bisection_contract() {
        let k = two_state();
        let t = mixing_time(&k).unwrap();
        assert!((t - 0.5).abs() < 1e-6);
        for k in [moran(30).unwrap(), torus_nn(6, 2).unwrap(), hypercube(6).unwrap()] {
            let t = mixing_time(&k).unwrap();
            assert!(tv_distance(&k, t * (1.0 + 1e-5)).unwrap() <= MIX_THRESHOLD);
            assert!(tv_distance(&k, t * (1.0 - 1e-5)).unwrap() >= MIX_THRESHOLD);
            for j in 1..=3 {
                assert!(tv_distance(&k, j as f64 * t).unwrap() <= (-(j as f64)).exp() + 1e-12);
            }
            let g = spectral_gap(&k).unwrap();
            assert!(1.0 / g <= t * (1.0 + 1e-6));
        }
    }

    #[test]
    fn tv_is_nonincreasing() {
        let k = Kernel::from_rates(3, &[(0, 1, 2.0), (1, 2, 1.0), (2, 0, 0.5), (1, 0, 0.3)]).unwrap();
        let mut prev = f64::INFINITY;
        for i in 0..60 {
            let d = tv_distance(&k, 0.1 * i as f64).unwrap();
            assert!(d <= prev + 2.0 * TRUNCATION_TOL);
            prev = d;
        }
    }

    #[test]
    fn bottleneck_examples() {
        let cycle = torus_nn(10, 1).unwrap();
        assert!((bottleneck_ratio(&cycle, &[0, 1, 2, 3, 4]).unwrap() - 0.2).abs() < 1e-14);
        let k = torus_nn(4, 2).unwrap();
        assert!((bottleneck_ratio(&k, &[5]).unwrap() - 1.0).abs() < 1e-14);
        assert_eq!(bottleneck_ratio(&k, &[]).unwrap_err(), Error::EmptySet);
        assert_eq!(
            bottleneck_ratio(&cycle, &(0..10).collect::<Vec<_>>()).unwrap_err(),
            Error::FullSet
        );
        for (n, m) in [(10, 2), (16, 3), (20, 4), (13, 2)] {
            let k = torus_range(n, m, 1).unwrap();
            for size in m + 1..=n / 2 {
                let set: Vec<usize> = (0..size).collect();
                let phi = bottleneck_ratio(&k, &set).unwrap();
                assert!((phi - (m + 1) as f64 / (2 * size) as f64).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn interval_scan_matches_exhaustive() {
        for (n, m) in [(12, 2), (10, 1), (9, 2), (14, 3)] {
            let k = torus_range(n, m, 1).unwrap();
            let a = bottleneck_optimum(&k, BottleneckStrategy::Intervals1d).unwrap();
            let b = bottleneck_optimum(&k, BottleneckStrategy::Exhaustive).unwrap();
            assert!((a.phi_star - b.phi_star).abs() < 1e-12);
            assert!((a.phi_star - (m + 1) as f64 / (2 * (n / 2)) as f64).abs() < 1e-14);
        }
        let k = hypercube(3).unwrap();
        assert!(matches!(
            bottleneck_optimum(&k, BottleneckStrategy::Intervals1d),
            Err(Error::StrategyMismatch(_))
        ));
        let k = torus_nn(5, 2).unwrap();
        assert!(matches!(
            bottleneck_optimum(&k, BottleneckStrategy::Exhaustive),
            Err(Error::TooLargeForExhaustive { .. })
        ));
    }

    #[test]
    fn cheeger_examples() {
        let c = cheeger_check(&hypercube(4).unwrap()).unwrap();
        assert!((c.gap - 0.5).abs() < 1e-9);
        assert!(c.bound_ok);
        let c = cheeger_check(&torus_range(10, 2, 1).unwrap()).unwrap();
        assert!((c.lower_bound - 0.045).abs() < 1e-12);
        assert!(c.bound_ok);
    }
}
