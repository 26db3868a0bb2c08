//! Empirical distribution functions, Kolmogorov-Smirnov statistics and
//! bootstrap intervals.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Stream;

/// Asymptotic KS constant at the 1% level.
pub const KS_C01: f64 = 1.628;
/// Asymptotic KS constant at the 5% level.
pub const KS_C05: f64 = 1.358;

pub const KS_MIN_SAMPLES: usize = 10;
pub const BOOTSTRAP_MIN_SAMPLES: usize = 30;

#[derive(Debug, Clone, PartialEq)]
pub struct Ecdf {
    sorted: Vec<f64>,
}

impl Ecdf {
    pub fn new(sample: &[f64]) -> Result<Ecdf> {
        if sample.iter().any(|v| v.is_nan()) {
            return Err(Error::BadParam("NaN in sample".into()));
        }
        let mut sorted = sample.to_vec();
        sorted.sort_by(|a, b| a.total_cmp(b));
        Ok(Ecdf { sorted })
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn sorted(&self) -> &[f64] {
        &self.sorted
    }

    /// Fraction of the sample `<= x`.
    pub fn eval(&self, x: f64) -> f64 {
        if self.sorted.is_empty() {
            return 0.0;
        }
        self.sorted.partition_point(|&v| v <= x) as f64 / self.sorted.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    /// Sample size, or the effective size `n m / (n + m)` for two samples.
    pub effective_size: f64,
    pub threshold_01: f64,
    pub threshold_05: f64,
}

impl KsResult {
    fn new(statistic: f64, effective_size: f64) -> KsResult {
        KsResult {
            statistic,
            effective_size,
            threshold_01: KS_C01 / effective_size.sqrt(),
            threshold_05: KS_C05 / effective_size.sqrt(),
        }
    }

    pub fn passes_01(&self) -> bool {
        self.statistic <= self.threshold_01
    }

    pub fn passes_05(&self) -> bool {
        self.statistic <= self.threshold_05
    }
}

/// `sup_t |F_hat(t) - F(t)|`, checked on both sides of every sample point.
/// `cdf` must be right-continuous; its left limits are taken as `cdf` just
/// below each point.
pub fn ks_one_sample(sample: &[f64], cdf: impl Fn(f64) -> f64) -> Result<KsResult> {
    if sample.len() < KS_MIN_SAMPLES {
        return Err(Error::TooFewSamples {
            needed: KS_MIN_SAMPLES,
            got: sample.len(),
        });
    }
    let ecdf = Ecdf::new(sample)?;
    let s = ecdf.sorted();
    let n = s.len() as f64;
    let mut d: f64 = 0.0;
    let mut i = 0;
    while i < s.len() {
        let x = s[i];
        let mut j = i;
        while j < s.len() && s[j] == x {
            j += 1;
        }
        let below = i as f64 / n;
        let at = j as f64 / n;
        let left = cdf(prev_float(x));
        d = d.max((below - left).abs()).max((at - cdf(x)).abs());
        i = j;
    }
    Ok(KsResult::new(d, n))
}

fn prev_float(x: f64) -> f64 {
    if x == 0.0 {
        -f64::MIN_POSITIVE
    } else if x > 0.0 {
        f64::from_bits(x.to_bits() - 1)
    } else {
        f64::from_bits(x.to_bits() + 1)
    }
}

pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    for s in [a, b] {
        if s.len() < KS_MIN_SAMPLES {
            return Err(Error::TooFewSamples {
                needed: KS_MIN_SAMPLES,
                got: s.len(),
            });
        }
    }
    let ea = Ecdf::new(a)?;
    let eb = Ecdf::new(b)?;
    let (sa, sb) = (ea.sorted(), eb.sorted());
    let (na, nb) = (sa.len() as f64, sb.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < sa.len() || j < sb.len() {
        let x = match (sa.get(i), sb.get(j)) {
            (Some(&p), Some(&q)) => p.min(q),
            (Some(&p), None) => p,
            (None, Some(&q)) => q,
            (None, None) => unreachable!(),
        };
        while i < sa.len() && sa[i] == x {
            i += 1;
        }
        while j < sb.len() && sb[j] == x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(KsResult::new(d, na * nb / (na + nb)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Percentile bootstrap interval for the mean.
pub fn bootstrap_mean_ci(sample: &[f64], level: f64, resamples: usize, rng: &mut Stream) -> Result<Interval> {
    if sample.len() < BOOTSTRAP_MIN_SAMPLES {
        return Err(Error::TooFewSamples {
            needed: BOOTSTRAP_MIN_SAMPLES,
            got: sample.len(),
        });
    }
    if !(level > 0.0 && level < 1.0) || resamples == 0 {
        return Err(Error::BadParam(format!("level {level}, resamples {resamples}")));
    }
    let n = sample.len();
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| sample[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(|a, b| a.total_cmp(b));
    let alpha = (1.0 - level) / 2.0;
    let pick = |q: f64| {
        let idx = (q * (resamples - 1) as f64).round() as usize;
        means[idx.min(resamples - 1)]
    };
    Ok(Interval {
        lo: pick(alpha),
        hi: pick(1.0 - alpha),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Decreasing,
    Increasing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendVerdict {
    pub direction: Direction,
    pub values: Vec<f64>,
    pub se: Vec<f64>,
    /// Per step: whether it moves in the direction within `2 SE` slack.
    pub steps: Vec<bool>,
    pub pass: bool,
}

/// Each successive value must not exceed the previous one by more than
/// `2 SE` (combined) for a decreasing trend, and symmetrically for an
/// increasing one.
pub fn trend_check(values: &[f64], se: &[f64], direction: Direction) -> Result<TrendVerdict> {
    if values.len() < 3 {
        return Err(Error::TooFewPoints {
            needed: 3,
            got: values.len(),
        });
    }
    if se.len() != values.len() {
        return Err(Error::BadParam("one SE per ladder point".into()));
    }
    let steps: Vec<bool> = (1..values.len())
        .map(|i| {
            let slack = 2.0 * (se[i - 1].powi(2) + se[i].powi(2)).sqrt();
            match direction {
                Direction::Decreasing => values[i] < values[i - 1] + slack,
                Direction::Increasing => values[i] > values[i - 1] - slack,
            }
        })
        .collect();
    Ok(TrendVerdict {
        direction,
        values: values.to_vec(),
        se: se.to_vec(),
        pass: steps.iter().all(|&s| s),
        steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use proptest::prelude::*;
    use rand_distr::{Distribution, Exp1, StandardNormal};

    fn exp_cdf(t: f64) -> f64 {
        if t < 0.0 {
            0.0
        } else {
            1.0 - (-t).exp()
        }
    }

    #[test]
    fn ecdf_limits() {
        let e = Ecdf::new(&[3.0, 1.0, 2.0, 2.0]).unwrap();
        assert_eq!(e.eval(f64::NEG_INFINITY), 0.0);
        assert_eq!(e.eval(f64::INFINITY), 1.0);
        assert_eq!(e.eval(2.0), 0.75);
        assert_eq!(e.eval(1.999), 0.25);
    }

    #[test]
    fn ks_degenerate_cases() {
        assert_eq!(
            ks_one_sample(&[1.0; 5], exp_cdf).unwrap_err(),
            Error::TooFewSamples { needed: 10, got: 5 }
        );
        let c = 0.7;
        let r = ks_one_sample(&[c; 50], exp_cdf).unwrap();
        assert!(r.statistic >= 1.0 - exp_cdf(c) - 1e-12);
        assert!(!r.passes_01());

        let sample: Vec<f64> = (0..40).map(|i| (i as f64).sqrt()).collect();
        let own = Ecdf::new(&sample).unwrap();
        assert_eq!(ks_one_sample(&sample, |x| own.eval(x)).unwrap().statistic, 0.0);

        assert_eq!(ks_two_sample(&sample, &sample).unwrap().statistic, 0.0);
        let shifted: Vec<f64> = sample.iter().map(|x| x + 100.0).collect();
        assert_eq!(ks_two_sample(&sample, &shifted).unwrap().statistic, 1.0);
    }

    #[test]
    fn ks_calibration() {
        let mut rejections = 0;
        let metas = 100;
        for m in 0..metas {
            let mut rng = stream(17, "ks_calibration", m);
            let sample: Vec<f64> = (0..10_000).map(|_| Exp1.sample(&mut rng)).collect();
            if !ks_one_sample(&sample, exp_cdf).unwrap().passes_01() {
                rejections += 1;
            }
        }
        assert!(rejections <= 2, "{rejections} rejections");

        let mut rng = stream(17, "ks_two", 0);
        let a: Vec<f64> = (0..10_000).map(|_| Exp1.sample(&mut rng)).collect();
        let mut rng = stream(17, "ks_two", 1);
        let b: Vec<f64> = (0..10_000).map(|_| Exp1.sample(&mut rng)).collect();
        assert!(ks_two_sample(&a, &b).unwrap().passes_01());
    }

    #[test]
    fn bootstrap_intervals() {
        let mut rng = stream(5, "boot", 0);
        let flat = bootstrap_mean_ci(&[2.5; 40], 0.99, 200, &mut rng).unwrap();
        assert_eq!((flat.lo, flat.hi), (2.5, 2.5));
        assert!(bootstrap_mean_ci(&[1.0; 29], 0.99, 200, &mut rng).is_err());

        let normal: Vec<f64> = (0..10_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let ci = bootstrap_mean_ci(&normal, 0.99, 1000, &mut rng).unwrap();
        let expected = 2.0 * 2.576 / 100.0;
        assert!((ci.width() / expected - 1.0).abs() < 0.2, "width {}", ci.width());

        let mut a = stream(9, "boot", 1);
        let mut b = stream(9, "boot", 1);
        assert_eq!(
            bootstrap_mean_ci(&normal[..100], 0.9, 100, &mut a).unwrap(),
            bootstrap_mean_ci(&normal[..100], 0.9, 100, &mut b).unwrap()
        );
    }

    #[test]
    fn bootstrap_coverage() {
        let mut covered = 0;
        let metas = 500;
        for m in 0..metas {
            let mut rng = stream(23, "coverage", m);
            let sample: Vec<f64> = (0..200).map(|_| Exp1.sample(&mut rng)).collect();
            if bootstrap_mean_ci(&sample, 0.99, 400, &mut rng).unwrap().contains(1.0) {
                covered += 1;
            }
        }
        assert!(covered as f64 / metas as f64 >= 0.97, "coverage {covered}/{metas}");
    }

    #[test]
    fn trends() {
        assert_eq!(
            trend_check(&[1.0, 0.5], &[0.0, 0.0], Direction::Decreasing).unwrap_err(),
            Error::TooFewPoints { needed: 3, got: 2 }
        );
        assert!(trend_check(&[3.0, 2.0, 1.0], &[0.0; 3], Direction::Decreasing).unwrap().pass);
        assert!(!trend_check(&[1.0, 1.0, 1.0], &[0.0; 3], Direction::Decreasing).unwrap().pass);
        assert!(trend_check(&[1.0, 1.05, 0.9], &[0.1; 3], Direction::Decreasing).unwrap().pass);
        assert!(trend_check(&[1.0, 2.0, 4.0], &[0.0; 3], Direction::Increasing).unwrap().pass);
    }

    proptest! {
        #[test]
        fn ks_invariant_under_monotone_maps(seed in 0u64..1000) {
            let mut rng = stream(seed, "prop", 0);
            let sample: Vec<f64> = (0..50).map(|_| Exp1.sample(&mut rng)).collect();
            let d = ks_one_sample(&sample, exp_cdf).unwrap().statistic;
            let mapped: Vec<f64> = sample.iter().map(|x| x.powi(3) + 2.0 * x).collect();
            // Inverse of y = x^3 + 2x by Newton, to map the law along.
            let inv = |y: f64| {
                let mut x = y.max(0.0).cbrt();
                for _ in 0..60 {
                    x -= (x.powi(3) + 2.0 * x - y) / (3.0 * x * x + 2.0);
                }
                x
            };
            let dm = ks_one_sample(&mapped, |y| exp_cdf(inv(y))).unwrap().statistic;
            prop_assert!((d - dm).abs() < 1e-9);
        }

        #[test]
        fn ecdf_is_monotone(mut xs in proptest::collection::vec(-10.0f64..10.0, 1..40), probes in proptest::collection::vec(-12.0f64..12.0, 2..20)) {
            let e = Ecdf::new(&xs).unwrap();
            xs.clear();
            let mut probes = probes;
            probes.sort_by(|a, b| a.total_cmp(b));
            for w in probes.windows(2) {
                prop_assert!(e.eval(w[0]) <= e.eval(w[1]));
            }
        }
    }
}
