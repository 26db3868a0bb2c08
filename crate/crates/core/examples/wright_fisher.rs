//! Wright-Fisher moments through the dual death chain, the exponential
//! mixture law, and an Euler path ensemble.

use voter_core::rng::stream;
use voter_core::wf::{death_chain_law, mixture_cdf, wf_moment, wf_simulate, MixtureExpLaw};

fn main() -> voter_core::Result<()> {
    let u = 0.4;
    for k in [1, 2, 3, 10, 50] {
        let row: Vec<String> = [0.1, 0.5, 1.0, 3.0]
            .iter()
            .map(|&t| wf_moment(u, k, t).map(|m| format!("{m:.5}")))
            .collect::<voter_core::Result<_>>()?;
        println!("E[Y_t^{k:<2}] at t=0.1,0.5,1,3: {}", row.join("  "));
    }

    let law = death_chain_law(100, 0.01)?;
    println!("\ndeath chain from 100 at t=0.01 computed via {:?}", law.route);

    let mix = MixtureExpLaw::new(0.3)?;
    let mut rng = stream(9, "mixture", 0);
    let draws: Vec<f64> = (0..5000).map(|_| mix.sample(&mut rng)).collect();
    let below = draws.iter().filter(|&&x| x <= 1.0).count() as f64 / draws.len() as f64;
    println!("mixture delta=0.3: P(X <= 1) = {:.4}, empirical {below:.4}", mixture_cdf(0.3, 1.0)?);

    let mut rng = stream(9, "wf", 0);
    let paths: Vec<f64> = (0..2000)
        .map(|_| wf_simulate(u, 1.0, 1e-3, &mut rng).map(|p| p.terminal()))
        .collect::<voter_core::Result<_>>()?;
    let m2 = paths.iter().map(|y| y * y).sum::<f64>() / paths.len() as f64;
    println!("Euler E[Y_1^2] = {m2:.4}, exact {:.4}", wf_moment(u, 2, 1.0)?);
    Ok(())
}
