//! Simulates the voter model on a complete graph with time measured in
//! units of t_meet and compares the density moments with Wright-Fisher.

use voter_core::voter::{ensemble, EnsembleConfig, EventMode};
use voter_core::{meeting, wf, zoo};

fn main() -> voter_core::Result<()> {
    let kernel = zoo::moran(200)?;
    let gamma = meeting::meeting_moments(&kernel)?.t_meet;
    let config = EnsembleConfig {
        u: 0.3,
        gamma,
        horizon: 2.0,
        grid: vec![0.25, 0.5, 1.0, 2.0],
        replicas: 400,
        master_seed: 42,
        mode: EventMode::Discordant,
    };
    let (summary, _) = ensemble(&kernel, &config, 1)?;

    println!("s      E[p1]   E[p1 p0]  WF u(1-u)e^-s");
    for (i, s) in summary.grid.iter().enumerate() {
        let wf_p1p0 = wf::wf_moment(config.u, 1, *s)? - wf::wf_moment(config.u, 2, *s)?;
        println!(
            "{s:<5} {:.4}  {:.4}    {:.4}   (se {:.4})",
            summary.p1[i].mean,
            summary.p1p0[i].mean,
            wf_p1p0,
            summary.p1p0[i].se()
        );
    }
    println!(
        "\nE[R(T)] = {:.2e} +- {:.1e}, E|R(T)| = {:.2e}",
        summary.residual.mean,
        summary.residual.se(),
        summary.abs_residual.mean
    );
    println!("{} of {} replicas fixed at 1 by T", summary.tau_one.len(), summary.replicas);
    Ok(())
}
