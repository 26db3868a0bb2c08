//! Abelian group structure Z_{r_0} x ... x Z_{r_{d-1}} on site indices.
//!
//! Sites are encoded row-major in mixed radix: the last coordinate varies
//! fastest. A hypercube is the lattice with every radix equal to 2, so the
//! group sum is bitwise xor of the site index.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lattice {
    radices: Vec<usize>,
}

impl Lattice {
    pub fn new(radices: Vec<usize>) -> Self {
        assert!(!radices.is_empty() && radices.iter().all(|&r| r >= 1));
        Lattice { radices }
    }

    /// Cubic lattice (Z_side)^dim.
    pub fn cubic(side: usize, dim: usize) -> Self {
        Lattice::new(vec![side; dim])
    }

    pub fn radices(&self) -> &[usize] {
        &self.radices
    }

    pub fn dim(&self) -> usize {
        self.radices.len()
    }

    pub fn size(&self) -> usize {
        self.radices.iter().product()
    }

    pub fn encode(&self, coords: &[usize]) -> usize {
        debug_assert_eq!(coords.len(), self.radices.len());
        coords
            .iter()
            .zip(&self.radices)
            .fold(0, |acc, (&c, &r)| acc * r + c % r)
    }

    pub fn decode(&self, mut index: usize) -> Vec<usize> {
        let mut coords = vec![0; self.radices.len()];
        for (c, &r) in coords.iter_mut().zip(&self.radices).rev() {
            *c = index % r;
            index /= r;
        }
        coords
    }

    pub fn add(&self, a: usize, b: usize) -> usize {
        self.combine(a, b, |x, y, r| (x + y) % r)
    }

    /// `a - b` in the group.
    pub fn sub(&self, a: usize, b: usize) -> usize {
        self.combine(a, b, |x, y, r| (x + r - y) % r)
    }

    pub fn neg(&self, a: usize) -> usize {
        self.sub(0, a)
    }

    fn combine(&self, mut a: usize, mut b: usize, op: impl Fn(usize, usize, usize) -> usize) -> usize {
        let mut out = 0;
        let mut scale = 1;
        for &r in self.radices.iter().rev() {
            out += op(a % r, b % r, r) * scale;
            a /= r;
            b /= r;
            scale *= r;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hypercube_sum_is_xor() {
        let l = Lattice::cubic(2, 5);
        for a in 0..32 {
            for b in 0..32 {
                assert_eq!(l.add(a, b), a ^ b);
                assert_eq!(l.sub(a, b), a ^ b);
            }
        }
    }

    #[test]
    fn row_major_encoding() {
        let l = Lattice::new(vec![3, 4]);
        assert_eq!(l.encode(&[1, 2]), 6);
        assert_eq!(l.decode(6), vec![1, 2]);
    }

    proptest! {
        #[test]
        fn group_laws(r0 in 1usize..6, r1 in 1usize..6, a in 0usize..36, b in 0usize..36) {
            let l = Lattice::new(vec![r0, r1]);
            let (a, b) = (a % l.size(), b % l.size());
            prop_assert_eq!(l.add(l.sub(a, b), b), a);
            prop_assert_eq!(l.add(a, l.neg(a)), 0);
            prop_assert_eq!(l.encode(&l.decode(a)), a);
        }
    }
}
