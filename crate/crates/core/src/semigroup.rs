//! Uniformization for sparse (sub-)generators.
//!
//! With `L >= max exit rate`, `e^{tQ} = sum_k Pois(Lt; k) P^k` where
//! `P = I + Q / L`. Distributions are pushed forward through `P` one power
//! at a time; the series is truncated once the Poisson tail mass outside the
//! retained window is below the requested tolerance.

use statrs::function::gamma::ln_gamma;

/// Default truncation tolerance for the Poisson series.
pub const TRUNCATION_TOL: f64 = 1e-12;

/// Poisson probabilities `Pois(lambda; k)` for `k in first..first + len`.
#[derive(Debug, Clone)]
pub struct PoissonWeights {
    pub first: usize,
    pub weights: Vec<f64>,
}

impl PoissonWeights {
    pub fn new(lambda: f64, tol: f64) -> PoissonWeights {
        assert!(lambda >= 0.0 && lambda.is_finite());
        if lambda == 0.0 {
            return PoissonWeights {
                first: 0,
                weights: vec![1.0],
            };
        }
        let mode = lambda.floor() as usize;
        let w_mode = (-lambda + mode as f64 * lambda.ln() - ln_gamma(mode as f64 + 1.0)).exp();
        let half = tol / 2.0;

        let mut right = Vec::new();
        let mut w = w_mode;
        let mut k = mode;
        loop {
            let ratio = lambda / (k + 1) as f64;
            let next = w * ratio;
            // Geometric bound on the mass beyond k.
            if ratio < 1.0 && next / (1.0 - ratio) < half {
                break;
            }
            right.push(next);
            w = next;
            k += 1;
        }

        let mut left = Vec::new();
        let mut w = w_mode;
        let mut k = mode;
        while k > 0 {
            let ratio = k as f64 / lambda;
            let prev = w * ratio;
            if ratio < 1.0 && prev / (1.0 - ratio) < half {
                break;
            }
            left.push(prev);
            w = prev;
            k -= 1;
        }
        let first = mode - left.len();
        let mut weights: Vec<f64> = left.into_iter().rev().collect();
        weights.push(w_mode);
        weights.extend(right);
        PoissonWeights { first, weights }
    }

    pub fn last(&self) -> usize {
        self.first + self.weights.len() - 1
    }

    pub fn get(&self, k: usize) -> f64 {
        if k < self.first {
            0.0
        } else {
            self.weights.get(k - self.first).copied().unwrap_or(0.0)
        }
    }
}

/// Transitions among the live states of a chain; any rate not listed among
/// the live states leaves to an absorbing cemetery.
#[derive(Debug, Clone)]
pub struct SparseGenerator {
    row_ptr: Vec<usize>,
    targets: Vec<usize>,
    rates: Vec<f64>,
    exit: Vec<f64>,
    lambda: f64,
}

impl SparseGenerator {
    /// `rows[s]` lists `(target, rate)` transitions to live states and
    /// `exit[s]` is the total rate out of `s` (live and absorbing).
    pub fn new(rows: Vec<Vec<(usize, f64)>>, exit: Vec<f64>) -> SparseGenerator {
        assert_eq!(rows.len(), exit.len());
        let mut row_ptr = vec![0];
        let mut targets = Vec::new();
        let mut rates = Vec::new();
        for row in rows {
            for (t, r) in row {
                targets.push(t);
                rates.push(r);
            }
            row_ptr.push(targets.len());
        }
        let lambda = exit.iter().cloned().fold(0.0, f64::max);
        SparseGenerator {
            row_ptr,
            targets,
            rates,
            exit,
            lambda: if lambda > 0.0 { lambda } else { 1.0 },
        }
    }

    pub fn states(&self) -> usize {
        self.exit.len()
    }

    pub fn uniformization_rate(&self) -> f64 {
        self.lambda
    }

    /// `out = v P` with `P = I + Q / lambda`.
    pub fn push(&self, v: &[f64], out: &mut [f64]) {
        for (o, (&x, &e)) in out.iter_mut().zip(v.iter().zip(&self.exit)) {
            *o = x * (1.0 - e / self.lambda);
        }
        for (s, &x) in v.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let scaled = x / self.lambda;
            for k in self.row_ptr[s]..self.row_ptr[s + 1] {
                out[self.targets[k]] += scaled * self.rates[k];
            }
        }
    }

    /// `init e^{tQ}` restricted to live states.
    pub fn evolve(&self, init: &[f64], t: f64, tol: f64) -> Vec<f64> {
        let weights = PoissonWeights::new(self.lambda * t, tol);
        let mut acc = vec![0.0; init.len()];
        let mut v = init.to_vec();
        let mut next = vec![0.0; init.len()];
        for k in 0..=weights.last() {
            let w = weights.get(k);
            if w > 0.0 {
                acc.iter_mut().zip(&v).for_each(|(a, x)| *a += w * x);
            }
            if k < weights.last() {
                self.push(&v, &mut next);
                std::mem::swap(&mut v, &mut next);
            }
        }
        acc
    }

    /// `observe(init e^{tQ})` for every `t` in `times`, for observables that
    /// are linear in the distribution. `P^k` is applied once for all times.
    pub fn evolve_linear(
        &self,
        init: &[f64],
        times: &[f64],
        tol: f64,
        observe: impl Fn(&[f64]) -> f64,
    ) -> Vec<f64> {
        let weights: Vec<PoissonWeights> = times
            .iter()
            .map(|&t| PoissonWeights::new(self.lambda * t, tol))
            .collect();
        let horizon = weights.iter().map(|w| w.last()).max().unwrap_or(0);
        let mut out = vec![0.0; times.len()];
        let mut v = init.to_vec();
        let mut next = vec![0.0; init.len()];
        for k in 0..=horizon {
            let value = observe(&v);
            for (o, w) in out.iter_mut().zip(&weights) {
                *o += w.get(k) * value;
            }
            if k < horizon {
                self.push(&v, &mut next);
                std::mem::swap(&mut v, &mut next);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn poisson_weights_sum_to_one() {
        for lambda in [0.0, 0.3, 1.0, 7.5, 120.0, 5000.0] {
            let w = PoissonWeights::new(lambda, 1e-12);
            let total: f64 = w.weights.iter().sum();
            assert!((total - 1.0).abs() < 1e-11, "lambda {lambda}: {total}");
        }
        let w = PoissonWeights::new(2.0, 1e-12);
        assert!((w.get(3) - (-2.0f64).exp() * 8.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn two_state_semigroup() {
        // Symmetric unit-rate chain: q_t(0,0) = (1 + e^{-2t}) / 2.
        let g = SparseGenerator::new(vec![vec![(1, 1.0)], vec![(0, 1.0)]], vec![1.0, 1.0]);
        for t in [0.0, 0.1, 1.0, 4.0] {
            let row = g.evolve(&[1.0, 0.0], t, 1e-13);
            assert!((row[0] - 0.5 * (1.0 + (-2.0 * t).exp())).abs() < 1e-12);
        }
    }

    #[test]
    fn killed_chain_survival() {
        // Single live state killed at rate 3.
        let g = SparseGenerator::new(vec![vec![]], vec![3.0]);
        let surv = g.evolve_linear(&[1.0], &[0.0, 0.5, 2.0], 1e-13, |v| v[0]);
        for (s, t) in surv.iter().zip([0.0, 0.5, 2.0]) {
            assert!((s - (-3.0f64 * t).exp()).abs() < 1e-12);
        }
    }
}
