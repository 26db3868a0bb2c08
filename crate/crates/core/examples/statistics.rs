//! KS tests, bootstrap intervals and trend checks on synthetic data.

use rand::Rng;
use voter_core::rng::stream;
use voter_core::stats::{bootstrap_mean_ci, ks_one_sample, ks_two_sample, trend_check, Direction};

fn main() -> voter_core::Result<()> {
    let mut rng = stream(1, "stats-example", 0);
    let exp: Vec<f64> = (0..1000).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let uni: Vec<f64> = (0..1000).map(|_| rng.random::<f64>()).collect();

    let good = ks_one_sample(&exp, |t| 1.0 - (-t).exp())?;
    let bad = ks_one_sample(&uni, |t| 1.0 - (-t).exp())?;
    println!("Exp(1) vs Exp(1): D = {:.4}, pass@1% {}", good.statistic, good.passes_01());
    println!("U(0,1) vs Exp(1): D = {:.4}, pass@1% {}", bad.statistic, bad.passes_01());
    let two = ks_two_sample(&exp[..500], &exp[500..])?;
    println!("two halves: D = {:.4}, effective size {:.0}", two.statistic, two.effective_size);

    let ci = bootstrap_mean_ci(&exp, 0.95, 2000, &mut rng)?;
    println!("bootstrap 95% CI for the mean: [{:.4}, {:.4}]", ci.lo, ci.hi);

    let values = [0.040, 0.021, 0.012, 0.013];
    let se = [0.002, 0.002, 0.001, 0.001];
    let trend = trend_check(&values, &se, Direction::Decreasing)?;
    println!("trend {:?}: steps {:?}, pass {}", values, trend.steps, trend.pass);
    Ok(())
}
