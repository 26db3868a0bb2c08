//! Builds every graph family, prints its stationary quantities and writes
//! one kernel to a text file that round-trips bit for bit.

use voter_core::zoo::{self, ZooSpec};
use voter_core::Kernel;

fn main() -> voter_core::Result<()> {
    let specs = [
        ZooSpec::Moran { n: 50 },
        ZooSpec::TorusNn { n: 12, d: 2 },
        ZooSpec::TorusRange { n: 30, m: 3, d: 1 },
        ZooSpec::Hypercube { dim: 6 },
        ZooSpec::RandomRegularPerm { n: 40, k: 4, seed: 7 },
    ];
    println!("{:<28} {:>5} {:>6} {:>10} {:>10} {:>6}", "family", "n", "edges", "pi_diag", "nu(1)", "rev");
    for spec in &specs {
        let s = spec.build()?.summary();
        println!(
            "{:<28} {:>5} {:>6} {:>10.3e} {:>10.3e} {:>6}",
            spec.label(),
            s.n,
            s.edges,
            s.pi_diag,
            s.nu_total,
            s.reversible
        );
    }

    // The permutation model can produce loops and parallel edges.
    let (edges, loops) = zoo::permutation_multigraph(20, 4, 11);
    let parallel = edges.iter().filter(|e| e.2 > 1).count();
    let (_, attempts) = zoo::random_regular_perm(20, 4, 11)?;
    println!(
        "\npermutation multigraph (20,4,11): {} loop ends, {parallel} parallel edge(s), {attempts} attempt(s) to connect",
        loops.iter().sum::<u32>()
    );

    // Arbitrary chains come from a rate list.
    let custom = Kernel::from_rates(3, &[(0, 1, 2.0), (1, 2, 1.0), (2, 0, 0.5), (1, 0, 1.0)])?;
    println!("custom chain pi = {:?}, reversible = {}", custom.pi(), custom.is_reversible());

    let path = std::env::temp_dir().join("voter_core_example.kernel");
    custom.save(&path)?;
    let back = Kernel::load(&path)?;
    assert_eq!(back.pi(), custom.pi());
    println!("saved and reloaded {}", path.display());
    Ok(())
}
