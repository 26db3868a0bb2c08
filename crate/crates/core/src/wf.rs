//! Wright-Fisher diffusion reference quantities.
//!
//! Moments come from the pure-death dual `D` (jumps `j -> j - 1` at rate
//! `C(j, 2)`): `E_u[Y_t^k] = E_k[u^{D_t}]`.

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::semigroup::{SparseGenerator, TRUNCATION_TOL};

/// Largest moment order handled by [`wf_moment`].
pub const MAX_ORDER: usize = 100;

/// Accepted rounding budget of the spectral sum before falling back to the
/// positive uniformization series.
const SPECTRAL_ROUNDING_TOL: f64 = 1e-13;

/// Absorption tolerance of the Euler scheme.
pub const BOUNDARY_TOL: f64 = 1e-12;

fn choose2(j: usize) -> f64 {
    (j * j.saturating_sub(1)) as f64 / 2.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeathRoute {
    Spectral,
    Uniformized,
}

/// Law of `D_t` started from `k`: `probs[j - 1] = P_k(D_t = j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DeathLaw {
    pub probs: Vec<f64>,
    pub route: DeathRoute,
}

/// Neumaier compensated sum.
fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Spectral evaluation. Right eigenvectors of the bidiagonal generator are
/// `r_i(j) = 0` for `j < i`, `r_i(i) = 1`, and
/// `r_i(j) = C(j,2) r_i(j-1) / (C(j,2) - C(i,2))` above. Returns the law
/// together with the absolute size of the largest cancelling term.
fn death_law_spectral(k: usize, t: f64) -> (Vec<f64>, f64) {
    let lambda: Vec<f64> = (1..=k).map(choose2).collect();
    // r[i][j] for 0-based i <= j.
    let mut r = vec![vec![0.0; k]; k];
    for i in 0..k {
        r[i][i] = 1.0;
        for j in i + 1..k {
            r[i][j] = lambda[j] * r[i][j - 1] / (lambda[j] - lambda[i]);
        }
    }
    let decay: Vec<f64> = lambda.iter().map(|l| (-l * t).exp()).collect();
    let mut probs = vec![0.0; k];
    let mut magnitude: f64 = 0.0;
    for target in 0..k {
        // Expand the indicator of `target` in the eigenbasis.
        let mut c = vec![0.0; k];
        for j in 0..k {
            let f = if j == target { 1.0 } else { 0.0 };
            c[j] = f - compensated_sum((0..j).map(|i| c[i] * r[i][j]));
        }
        let terms: Vec<f64> = (0..k).map(|i| c[i] * decay[i] * r[i][k - 1]).collect();
        magnitude = magnitude.max(terms.iter().map(|v| v.abs()).fold(0.0, f64::max));
        probs[target] = compensated_sum(terms);
    }
    (probs, magnitude)
}

fn death_law_uniformized(k: usize, t: f64) -> Vec<f64> {
    let rows = (1..=k)
        .map(|j| if j >= 2 { vec![(j - 2, choose2(j))] } else { vec![] })
        .collect();
    let exit = (1..=k).map(choose2).collect();
    let generator = SparseGenerator::new(rows, exit);
    let mut init = vec![0.0; k];
    init[k - 1] = 1.0;
    generator.evolve(&init, t, TRUNCATION_TOL * 1e-3)
}

/// Exact law of the death chain at time `t` from `k`.
pub fn death_chain_law(k: usize, t: f64) -> Result<DeathLaw> {
    if k == 0 || k > MAX_ORDER {
        return if k == 0 {
            Err(Error::BadParam("order k must be >= 1".into()))
        } else {
            Err(Error::Overflow(k))
        };
    }
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::BadParam(format!("time t = {t}")));
    }
    let (probs, magnitude) = death_law_spectral(k, t);
    if magnitude * f64::EPSILON * k as f64 <= SPECTRAL_ROUNDING_TOL {
        let probs = probs.into_iter().map(|p| p.clamp(0.0, 1.0)).collect();
        return Ok(DeathLaw {
            probs,
            route: DeathRoute::Spectral,
        });
    }
    Ok(DeathLaw {
        probs: death_law_uniformized(k, t),
        route: DeathRoute::Uniformized,
    })
}

/// `E_u[Y_t^k] = E_k[u^{D_t}]`.
pub fn wf_moment(u: f64, k: usize, t: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&u) {
        return Err(Error::BadParam(format!("u = {u} outside [0, 1]")));
    }
    let law = death_chain_law(k, t)?;
    let value = compensated_sum(law.probs.iter().enumerate().map(|(j, p)| p * u.powi(j as i32 + 1)));
    Ok(value.clamp(0.0, 1.0))
}

/// Samples `D_t` from `k` by summing exponential holding times.
pub fn death_chain_sample<R: Rng + ?Sized>(k: usize, t: f64, rng: &mut R) -> usize {
    let mut j = k.max(1);
    let mut clock = 0.0;
    while j > 1 {
        let e: f64 = Exp1.sample(rng);
        clock += e / choose2(j);
        if clock > t {
            break;
        }
        j -= 1;
    }
    j
}

/// `Delta delta_0 + (1 - Delta) Exp(1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureExpLaw {
    delta: f64,
}

impl MixtureExpLaw {
    pub fn new(delta: f64) -> Result<MixtureExpLaw> {
        if !(0.0..1.0).contains(&delta) {
            return Err(Error::BadParam(format!("atom Delta = {delta} outside [0, 1)")));
        }
        Ok(MixtureExpLaw { delta })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn cdf(&self, t: f64) -> f64 {
        if t < 0.0 {
            0.0
        } else {
            self.delta + (1.0 - self.delta) * -(-t).exp_m1()
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if rng.random::<f64>() < self.delta {
            0.0
        } else {
            Exp1.sample(rng)
        }
    }
}

pub fn mixture_cdf(delta: f64, t: f64) -> Result<f64> {
    Ok(MixtureExpLaw::new(delta)?.cdf(t))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WfPath {
    pub dt: f64,
    /// `values[i]` is the state at time `i dt`.
    pub values: Vec<f64>,
    pub absorbed_at: Option<f64>,
}

impl WfPath {
    pub fn terminal(&self) -> f64 {
        *self.values.last().unwrap()
    }
}

/// Euler-Maruyama for `dY = sqrt(Y (1 - Y)) dW`, clamped to `[0, 1]`.
pub fn wf_simulate<R: Rng + ?Sized>(u: f64, horizon: f64, dt: f64, rng: &mut R) -> Result<WfPath> {
    if !(0.0..=1.0).contains(&u) {
        return Err(Error::BadParam(format!("u = {u} outside [0, 1]")));
    }
    if !(horizon > 0.0) || !(dt > 0.0) || dt > 1e-3 * horizon {
        return Err(Error::BadParam(format!("need 0 < dt <= 1e-3 T, got dt = {dt}, T = {horizon}")));
    }
    let steps = (horizon / dt).round() as usize;
    let mut values = Vec::with_capacity(steps + 1);
    let mut y = u;
    let mut absorbed_at = None;
    if y <= BOUNDARY_TOL || y >= 1.0 - BOUNDARY_TOL {
        y = y.round();
        absorbed_at = Some(0.0);
    }
    values.push(y);
    let sd = dt.sqrt();
    for i in 1..=steps {
        if absorbed_at.is_none() {
            let z: f64 = StandardNormal.sample(rng);
            y = (y + (y * (1.0 - y)).sqrt() * sd * z).clamp(0.0, 1.0);
            if y <= BOUNDARY_TOL || y >= 1.0 - BOUNDARY_TOL {
                y = y.round();
                absorbed_at = Some(i as f64 * dt);
            }
        }
        values.push(y);
    }
    Ok(WfPath { dt, values, absorbed_at })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    /// Independent oracle: dense matrix exponential of the death generator.
    fn law_by_expm(k: usize, t: f64) -> Vec<f64> {
        let mut g = DMatrix::<f64>::zeros(k, k);
        for j in 2..=k {
            let rate = choose2(j);
            g[(j - 1, j - 1)] = -rate;
            g[(j - 1, j - 2)] = rate;
        }
        let e = (g * t).exp();
        (0..k).map(|j| e[(k - 1, j)]).collect()
    }

    #[test]
    fn first_and_second_moments() {
        for t in [0.0, 0.3, 2.0] {
            assert!((wf_moment(0.37, 1, t).unwrap() - 0.37).abs() < 1e-15);
        }
        let m2 = wf_moment(0.5, 2, 1.0).unwrap();
        assert!((0.5 - m2 - 0.25 * (-1.0f64).exp()).abs() < 1e-14);
        assert!((0.5 - m2 - 0.0919699).abs() < 1e-7);
        assert_eq!(wf_moment(0.5, 101, 1.0).unwrap_err(), Error::Overflow(101));
    }

    #[test]
    fn law_matches_matrix_exponential() {
        for k in [2, 3, 5, 10, 20] {
            for t in [0.01, 0.1, 0.7, 3.0] {
                let law = death_chain_law(k, t).unwrap();
                let oracle = law_by_expm(k, t);
                for (a, b) in law.probs.iter().zip(&oracle) {
                    assert!((a - b).abs() < 1e-12, "k {k} t {t}: {a} vs {b}");
                }
                let u: f64 = 0.3;
                let direct: f64 = oracle.iter().enumerate().map(|(j, p)| p * u.powi(j as i32 + 1)).sum();
                assert!((wf_moment(u, k, t).unwrap() - direct).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn large_orders_stay_accurate() {
        let law = death_chain_law(100, 0.01).unwrap();
        assert_eq!(law.route, DeathRoute::Uniformized);
        let total: f64 = law.probs.iter().sum();
        assert!((total - 1.0).abs() < 1e-10);
        assert!(law.probs.iter().all(|&p| p >= 0.0));
        let oracle = law_by_expm(100, 0.01);
        for (a, b) in law.probs.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-10);
        }
        assert_eq!(death_chain_law(100, 5.0).unwrap().route, DeathRoute::Spectral);
    }

    #[test]
    fn third_moment_matches_death_chain_monte_carlo() {
        let (u, t): (f64, f64) = (0.5, 0.7);
        let exact = wf_moment(u, 3, t).unwrap();
        let mut rng = stream(31, "death_mc", 0);
        let n = 1_000_000;
        let vals: Vec<f64> = (0..n).map(|_| u.powi(death_chain_sample(3, t, &mut rng) as i32)).collect();
        let mean = vals.iter().sum::<f64>() / n as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((mean - exact).abs() < 3.0 * (var / n as f64).sqrt());
    }

    #[test]
    fn death_chain_sampler_law() {
        let mut rng = stream(32, "death", 0);
        assert!((0..100).all(|_| death_chain_sample(1, 3.0, &mut rng) == 1));
        let n = 100_000;
        let t = 1.0;
        let exact = law_by_expm(3, t);
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[death_chain_sample(3, t, &mut rng) - 1] += 1;
        }
        for j in 0..3 {
            let p = exact[j];
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!((counts[j] as f64 / n as f64 - p).abs() < 3.0 * se);
        }
        let stay = (0..n).filter(|_| death_chain_sample(2, t, &mut rng) == 2).count();
        let p = (-t).exp();
        assert!((stay as f64 / n as f64 - p).abs() < 3.0 * (p * (1.0 - p) / n as f64).sqrt());
    }

    #[test]
    fn mixture_law() {
        assert!((mixture_cdf(0.0, 1.3).unwrap() - (1.0 - (-1.3f64).exp())).abs() < 1e-15);
        assert_eq!(mixture_cdf(0.3, 0.0).unwrap(), 0.3);
        assert_eq!(mixture_cdf(0.3, -1.0).unwrap(), 0.0);
        assert!((mixture_cdf(0.2, 1.0).unwrap() - 0.70569).abs() < 1e-5);
        assert!(mixture_cdf(1.0, 1.0).is_err());
        assert!(mixture_cdf(-0.1, 1.0).is_err());
    }

    #[test]
    fn euler_paths() {
        let mut rng = stream(33, "wf", 0);
        let flat = wf_simulate(0.0, 1.0, 1e-3, &mut rng).unwrap();
        assert!(flat.values.iter().all(|&v| v == 0.0));
        assert!(wf_simulate(0.5, 1.0, 0.01, &mut rng).is_err());

        let n = 4000;
        let terminal: Vec<f64> = (0..n)
            .map(|i| wf_simulate(0.5, 1.0, 1e-3, &mut stream(33, "wf", i)).unwrap().terminal())
            .collect();
        let mean = terminal.iter().sum::<f64>() / n as f64;
        let var = terminal.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((mean - 0.5).abs() < 3.0 * (var / n as f64).sqrt());

        let het: Vec<f64> = terminal.iter().map(|y| y * (1.0 - y)).collect();
        let hm = het.iter().sum::<f64>() / n as f64;
        let hv = het.iter().map(|v| (v - hm).powi(2)).sum::<f64>() / (n - 1) as f64;
        let target = 0.25 * (-1.0f64).exp();
        assert!((hm - target).abs() < 3.0 * (hv / n as f64).sqrt() + 0.005);
    }

    proptest! {
        #[test]
        fn moments_are_monotone_in_order(u in 0.0f64..=1.0, k in 1usize..30, t in 0.0f64..4.0) {
            let a = wf_moment(u, k, t).unwrap();
            let b = wf_moment(u, k + 1, t).unwrap();
            prop_assert!(b <= a + 1e-12);
        }

        #[test]
        fn boundary_moments(k in 1usize..60, t in 0.0f64..5.0) {
            prop_assert!((wf_moment(1.0, k, t).unwrap() - 1.0).abs() < 1e-12);
            prop_assert_eq!(wf_moment(0.0, k, t).unwrap(), 0.0);
        }
    }
}
