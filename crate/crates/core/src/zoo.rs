//! Kernel families: the mean-field (Moran) model, nearest-neighbor and
//! intermediate-range walks on discrete tori, the hypercube walk, and random
//! regular multigraphs built from uniform permutations.
//!
//! Torus sites are encoded row-major in mixed radix and hypercube sites as
//! bit strings (see [`Lattice`]). Every family except the random graphs is
//! translation invariant and carries its lattice.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::Kernel;
use crate::lattice::Lattice;
use crate::rng::stream;

/// Largest number of sites a generator will produce.
pub const SIZE_CAP: usize = 1 << 20;

/// Resampling budget for disconnected random graphs.
pub const MAX_GRAPH_ATTEMPTS: u32 = 32;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ZooSpec {
    Moran { n: usize },
    TorusNn { n: usize, d: usize },
    TorusRange { n: usize, m: usize, d: usize },
    Hypercube { dim: usize },
    RandomRegularPerm { n: usize, k: usize, seed: u64 },
}

impl ZooSpec {
    pub fn build(&self) -> Result<Kernel> {
        match *self {
            ZooSpec::Moran { n } => moran(n),
            ZooSpec::TorusNn { n, d } => torus_nn(n, d),
            ZooSpec::TorusRange { n, m, d } => torus_range(n, m, d),
            ZooSpec::Hypercube { dim } => hypercube(dim),
            ZooSpec::RandomRegularPerm { n, k, seed } => random_regular_perm(n, k, seed).map(|(k, _)| k),
        }
    }

    pub fn label(&self) -> String {
        match *self {
            ZooSpec::Moran { n } => format!("moran({n})"),
            ZooSpec::TorusNn { n, d } => format!("torus_nn({n},{d})"),
            ZooSpec::TorusRange { n, m, d } => format!("torus_range({n},{m},{d})"),
            ZooSpec::Hypercube { dim } => format!("hypercube({dim})"),
            ZooSpec::RandomRegularPerm { n, k, seed } => format!("random_regular_perm({n},{k},{seed})"),
        }
    }

    /// Number of sites the spec generates (without building it).
    pub fn sites(&self) -> Option<usize> {
        match *self {
            ZooSpec::Moran { n } | ZooSpec::RandomRegularPerm { n, .. } => Some(n),
            ZooSpec::TorusNn { n, d } | ZooSpec::TorusRange { n, d, .. } => checked_pow(n, d),
            ZooSpec::Hypercube { dim } => 1usize.checked_shl(dim as u32),
        }
    }
}

fn checked_pow(n: usize, d: usize) -> Option<usize> {
    (0..d).try_fold(1usize, |acc, _| acc.checked_mul(n))
}

fn check_size(sites: Option<usize>) -> Result<usize> {
    match sites {
        Some(s) if s <= SIZE_CAP => Ok(s),
        _ => Err(Error::TooLarge(format!("more than {SIZE_CAP} sites"))),
    }
}

/// Complete graph: `q(x, y) = 1 / (n - 1)`.
pub fn moran(n: usize) -> Result<Kernel> {
    if n < 2 {
        return Err(Error::BadParam(format!("moran needs n >= 2, got {n}")));
    }
    check_size(Some(n))?;
    let edges: Vec<(usize, usize, u32)> = (0..n)
        .flat_map(|x| (0..n).filter(move |&y| y != x).map(move |y| (x, y, 1)))
        .collect();
    Kernel::from_multigraph(n, &edges, &vec![0; n])?.with_lattice(Lattice::new(vec![n]))
}

/// Walk on `(Z_n)^d` jumping to each of the `2d` lattice neighbors at rate `1/(2d)`.
pub fn torus_nn(n: usize, d: usize) -> Result<Kernel> {
    if n < 3 || d < 1 {
        return Err(Error::BadParam(format!("torus_nn needs n >= 3, d >= 1, got ({n}, {d})")));
    }
    check_size(checked_pow(n, d))?;
    let offsets: Vec<Vec<i64>> = (0..d)
        .flat_map(|i| {
            [1i64, -1].into_iter().map(move |s| {
                let mut v = vec![0i64; d];
                v[i] = s;
                v
            })
        })
        .collect();
    translation_walk(Lattice::cubic(n, d), &offsets)
}

/// Uniform jumps over the box `[-m, m]^d \ {0}` on `(Z_n)^d`.
pub fn torus_range(n: usize, m: usize, d: usize) -> Result<Kernel> {
    if m < 1 || d < 1 || 2 * m >= n {
        return Err(Error::BadParam(format!(
            "torus_range needs 1 <= m < n/2 and d >= 1, got (n, m, d) = ({n}, {m}, {d})"
        )));
    }
    check_size(checked_pow(n, d))?;
    let side = 2 * m + 1;
    let offsets: Vec<Vec<i64>> = (0..checked_pow(side, d).unwrap())
        .map(|code| {
            let mut v = vec![0i64; d];
            let mut c = code;
            for slot in v.iter_mut().rev() {
                *slot = (c % side) as i64 - m as i64;
                c /= side;
            }
            v
        })
        .filter(|v| v.iter().any(|&c| c != 0))
        .collect();
    translation_walk(Lattice::cubic(n, d), &offsets)
}

/// Walk on `{0,1}^dim` flipping each bit at rate `1/dim`.
pub fn hypercube(dim: usize) -> Result<Kernel> {
    if dim < 1 {
        return Err(Error::BadParam("hypercube needs dim >= 1".into()));
    }
    let n = check_size(1usize.checked_shl(dim as u32))?;
    let edges: Vec<(usize, usize, u32)> = (0..n)
        .flat_map(|x| (0..dim).map(move |b| (x, x ^ (1 << b), 1)))
        .collect();
    Kernel::from_multigraph(n, &edges, &vec![0; n])?.with_lattice(Lattice::cubic(2, dim))
}

fn translation_walk(lattice: Lattice, offsets: &[Vec<i64>]) -> Result<Kernel> {
    let n = lattice.size();
    let radices = lattice.radices().to_vec();
    let offset_codes: Vec<usize> = offsets
        .iter()
        .map(|v| {
            let coords: Vec<usize> = v
                .iter()
                .zip(&radices)
                .map(|(&c, &r)| c.rem_euclid(r as i64) as usize)
                .collect();
            lattice.encode(&coords)
        })
        .collect();
    let mut edges = Vec::with_capacity(n * offset_codes.len());
    for x in 0..n {
        for &o in &offset_codes {
            edges.push((x, lattice.add(x, o), 1));
        }
    }
    Kernel::from_multigraph(n, &edges, &vec![0; n])?.with_lattice(lattice)
}

/// Adjacency counts of the permutation model: `k/2` uniform permutations,
/// each contributing the edges `(x, rho(x))` and `(x, rho^{-1}(x))`. A fixed
/// point of `rho` adds 2 to `A(x, x)`, so every row sums to `k`.
pub fn permutation_multigraph(n: usize, k: usize, seed: u64) -> (Vec<(usize, usize, u32)>, Vec<u32>) {
    let mut rng = stream(seed, "random_regular_perm", 0);
    let mut edges = Vec::with_capacity(n * k);
    let mut loops = vec![0u32; n];
    for _ in 0..k / 2 {
        let mut rho: Vec<usize> = (0..n).collect();
        rho.shuffle(&mut rng);
        for (x, &y) in rho.iter().enumerate() {
            if x == y {
                loops[x] += 2;
            } else {
                edges.push((x, y, 1));
                edges.push((y, x, 1));
            }
        }
    }
    (edges, loops)
}

/// Random `k`-regular multigraph walk; resamples with seed `seed + attempt`
/// while the graph is disconnected. Returns the kernel and the number of
/// attempts used.
pub fn random_regular_perm(n: usize, k: usize, seed: u64) -> Result<(Kernel, u32)> {
    if k < 4 || !k.is_multiple_of(2) || n <= k {
        return Err(Error::BadParam(format!(
            "random_regular_perm needs even k >= 4 and n > k, got (n, k) = ({n}, {k})"
        )));
    }
    check_size(Some(n))?;
    for attempt in 0..MAX_GRAPH_ATTEMPTS {
        let (edges, loops) = permutation_multigraph(n, k, seed.wrapping_add(attempt as u64));
        match Kernel::from_multigraph(n, &edges, &loops) {
            Ok(kernel) => return Ok((kernel, attempt + 1)),
            Err(Error::Disconnected) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::PersistentlyDisconnected(MAX_GRAPH_ATTEMPTS))
}
