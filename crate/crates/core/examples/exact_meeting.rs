//! Exact meeting-time moments and tails, the identities that tie them
//! together, and the pair-density bound.

use voter_core::meeting::{self, PairChain};
use voter_core::{zoo, PairLaw};

fn main() -> voter_core::Result<()> {
    for (name, k) in [
        ("moran(100)", zoo::moran(100)?),
        ("torus 20x20", zoo::torus_nn(20, 2)?),
        ("hypercube(7)", zoo::hypercube(7)?),
    ] {
        let sol = meeting::meeting_moments(&k)?;
        let id = meeting::identity_check(&k, &sol);
        println!(
            "{name:<13} route {:?}  t_meet {:.3}  E[M_VV] {:.4}  E[M_VV^2] {:.3}  residuals {:.1e} {:.1e}",
            sol.route, sol.t_meet, sol.mvv_mean, sol.mvv_second, id.mvv_residual, id.muu_residual
        );
    }

    // Tails of the meeting time from both initial pair laws, rescaled by
    // t_meet. For large complete graphs they approach exp(-t).
    let k = zoo::moran(200)?;
    let t_meet = meeting::meeting_moments(&k)?.t_meet;
    let chain = PairChain::auto(&k)?;
    let times: Vec<f64> = [0.5, 1.0, 2.0].iter().map(|s| s * t_meet).collect();
    let uu = chain.tail(PairLaw::Product, &times);
    let vv = chain.tail(PairLaw::Edge, &times);
    for (i, s) in [0.5f64, 1.0, 2.0].iter().enumerate() {
        println!("moran(200) s={s}: P(M_UU > s t_meet) {:.5}  exp(-s) {:.5}  P(M_VV > s t_meet) {:.2e}", uu[i], (-s).exp(), vv[i]);
    }

    let muv = meeting::muv_consistency(&zoo::torus_nn(8, 2)?, 0.01, 5.0)?;
    println!("\ntorus 8x8 tail relation: max residual {:.2e}", muv.max_residual);

    let k = zoo::torus_nn(4, 2)?;
    let configs = meeting::bound_configurations(k.n(), 3);
    let check = meeting::decorrelation_check(&k, 0.5, 1.5, &configs)?;
    println!(
        "torus 4x4 decorrelation bound over {} configurations: min margin {:.3e}, holds {}",
        check.configurations,
        check.min_margin_tv,
        check.holds()
    );
    Ok(())
}
