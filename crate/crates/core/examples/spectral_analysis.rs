//! Spectral gap, mixing time, bottleneck ratio and the Cheeger check on a
//! handful of small chains.

use voter_core::analysis::{self, BottleneckStrategy};
use voter_core::zoo;

fn main() -> voter_core::Result<()> {
    let kernels = [
        ("cycle(16)", zoo::torus_nn(16, 1)?),
        ("torus 4x4", zoo::torus_nn(4, 2)?),
        ("hypercube(4)", zoo::hypercube(4)?),
        ("moran(20)", zoo::moran(20)?),
    ];
    for (name, k) in &kernels {
        let gap = analysis::spectral_gap(k)?;
        let t_mix = analysis::mixing_time(k)?;
        let cheeger = analysis::cheeger_check(k)?;
        println!(
            "{name:<14} gap {gap:.5}  t_mix {t_mix:.4}  1/gap {:.4}  phi* {:.4}  phi*^2/2 {:.5}  ok {}",
            1.0 / gap,
            cheeger.phi_star,
            cheeger.lower_bound,
            cheeger.bound_ok
        );
    }

    // On a cycle the optimal cut is an arc; the interval scan finds the same
    // value as brute force at a fraction of the cost.
    let ring = zoo::torus_nn(14, 1)?;
    let fast = analysis::bottleneck_optimum(&ring, BottleneckStrategy::Intervals1d)?;
    let slow = analysis::bottleneck_optimum(&ring, BottleneckStrategy::Exhaustive)?;
    println!("\ncycle(14) intervals {:.6} witness {:?}", fast.phi_star, fast.witness);
    println!("cycle(14) exhaustive {:.6}", slow.phi_star);

    let ring = zoo::torus_nn(32, 1)?;
    for t in [1.0, 10.0, 50.0, 100.0, 200.0] {
        println!("cycle(32) d(t={t:>5}) = {:.4}", analysis::tv_distance(&ring, t)?);
    }
    Ok(())
}
