//! Coalescing random walks started from a few sites, compared with
//! Kingman's coalescent by a two-sample KS test.

use voter_core::coalescent::{coalescent_ensemble, kingman_mean, kingman_sampler, KingmanSize, Start};
use voter_core::rng::stream;
use voter_core::stats::ks_two_sample;
use voter_core::{meeting, zoo};

fn main() -> voter_core::Result<()> {
    let kernel = zoo::torus_nn(16, 2)?;
    let t_meet = meeting::meeting_moments(&kernel)?.t_meet;
    let k = 4;
    let runs = coalescent_ensemble(&kernel, Start::Partial { k }, 1, 600, 5, 1)?;

    let mut rng = stream(5, "kingman", 0);
    for j in [3, 2, 1] {
        let walks: Vec<f64> = runs.iter().map(|r| r.get(j).unwrap() / t_meet).collect();
        let kingman: Vec<f64> = (0..2000)
            .map(|_| kingman_sampler(KingmanSize::Finite(k), j, &mut rng))
            .collect::<voter_core::Result<_>>()?;
        let ks = ks_two_sample(&walks, &kingman)?;
        let mean = walks.iter().sum::<f64>() / walks.len() as f64;
        println!(
            "C_{{4,{j}}}/t_meet mean {mean:.3} (Kingman {:.3})  KS {:.3}  pass@5% {}",
            kingman_mean(KingmanSize::Finite(k), j),
            ks.statistic,
            ks.passes_05()
        );
    }

    // From one walker per site down to a single block.
    let full = coalescent_ensemble(&zoo::moran(100)?, Start::Full, 1, 200, 6, 1)?;
    let t = meeting::meeting_moments(&zoo::moran(100)?)?.t_meet;
    let mean = full.iter().map(|r| r.get(1).unwrap() / t).sum::<f64>() / full.len() as f64;
    println!("\nmoran(100) full coalescence mean {mean:.3}, infinite Kingman {:.3}", kingman_mean(KingmanSize::Infinite, 1));
    Ok(())
}
