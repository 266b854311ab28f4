//! Negacyclic number-theoretic transform over an NTT-friendly prime
//! (q ≡ 1 mod 2N). Pointwise products in the transform domain realize
//! multiplication mod X^N + 1 exactly.

use super::arith::{add_mod, inv_mod, is_prime, mul_mod, pow_mod, sub_mod};

/// Precomputed tables for one (N, q) pair: powers of a primitive 2N-th root
/// of unity in bit-reversed order, forward and inverse.
#[derive(Debug, Clone)]
pub struct NttTable {
    pub n: usize,
    pub q: u64,
    psi_rev: Vec<u64>,
    psi_inv_rev: Vec<u64>,
    n_inv: u64,
}

fn bit_reverse(x: usize, bits: u32) -> usize {
    x.reverse_bits() >> (usize::BITS - bits)
}

/// A primitive 2N-th root of unity mod q, found by exponentiating random
/// elements (deterministic scan keeps this dependency-free).
fn primitive_2n_root(n: usize, q: u64) -> u64 {
    let order = 2 * n as u64;
    debug_assert_eq!((q - 1) % order, 0);
    let cofactor = (q - 1) / order;
    let mut g = 2u64;
    loop {
        let cand = pow_mod(g, cofactor, q);
        // Primitive iff cand^N = -1.
        if pow_mod(cand, n as u64, q) == q - 1 {
            return cand;
        }
        g += 1;
    }
}

impl NttTable {
    pub fn new(n: usize, q: u64) -> Self {
        assert!(n.is_power_of_two());
        assert!(is_prime(q) && (q - 1) % (2 * n as u64) == 0, "q must be prime, 1 mod 2N");
        let psi = primitive_2n_root(n, q);
        let psi_inv = inv_mod(psi, q);
        let bits = n.trailing_zeros();
        let mut psi_rev = vec![0u64; n];
        let mut psi_inv_rev = vec![0u64; n];
        let mut p = 1u64;
        let mut pi = 1u64;
        let mut pows = vec![0u64; n];
        let mut pows_inv = vec![0u64; n];
        for i in 0..n {
            pows[i] = p;
            pows_inv[i] = pi;
            p = mul_mod(p, psi, q);
            pi = mul_mod(pi, psi_inv, q);
        }
        for i in 0..n {
            psi_rev[i] = pows[bit_reverse(i, bits)];
            psi_inv_rev[i] = pows_inv[bit_reverse(i, bits)];
        }
        NttTable { n, q, psi_rev, psi_inv_rev, n_inv: inv_mod(n as u64, q) }
    }

    /// In-place forward transform (coefficient order in, transform order out).
    pub fn forward(&self, a: &mut [u64]) {
        debug_assert_eq!(a.len(), self.n);
        let q = self.q;
        let mut t = self.n;
        let mut m = 1;
        while m < self.n {
            t >>= 1;
            for i in 0..m {
                let s = self.psi_rev[m + i];
                let j1 = 2 * i * t;
                for j in j1..j1 + t {
                    let u = a[j];
                    let v = mul_mod(a[j + t], s, q);
                    a[j] = add_mod(u, v, q);
                    a[j + t] = sub_mod(u, v, q);
                }
            }
            m <<= 1;
        }
    }

    /// In-place inverse transform; `inverse(forward(x)) = x` exactly.
    pub fn inverse(&self, a: &mut [u64]) {
        debug_assert_eq!(a.len(), self.n);
        let q = self.q;
        let mut t = 1;
        let mut m = self.n;
        while m > 1 {
            let h = m >> 1;
            let mut j1 = 0;
            for i in 0..h {
                let s = self.psi_inv_rev[h + i];
                for j in j1..j1 + t {
                    let u = a[j];
                    let v = a[j + t];
                    a[j] = add_mod(u, v, q);
                    a[j + t] = mul_mod(sub_mod(u, v, q), s, q);
                }
                j1 += 2 * t;
            }
            t <<= 1;
            m = h;
        }
        for x in a.iter_mut() {
            *x = mul_mod(*x, self.n_inv, q);
        }
    }
}

/// Schoolbook negacyclic product mod X^N + 1: the correctness oracle for
/// the transform-domain product.
pub fn negacyclic_schoolbook(a: &[u64], b: &[u64], q: u64) -> Vec<u64> {
    let n = a.len();
    let mut out = vec![0u64; n];
    for i in 0..n {
        for j in 0..n {
            let prod = mul_mod(a[i], b[j], q);
            let k = i + j;
            if k < n {
                out[k] = add_mod(out[k], prod, q);
            } else {
                out[k - n] = sub_mod(out[k - n], prod, q);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rlwe::arith::find_ntt_primes;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn table(n: usize) -> NttTable {
        let q = find_ntt_primes(40, 2 * n as u64, 1, &[]).unwrap()[0];
        NttTable::new(n, q)
    }

    #[test]
    fn forward_inverse_identity() {
        let t = table(64);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let x: Vec<u64> = (0..64).map(|_| rng.random_range(0..t.q)).collect();
            let mut y = x.clone();
            t.forward(&mut y);
            t.inverse(&mut y);
            assert_eq!(y, x);
        }
    }

    #[test]
    fn zero_maps_to_zero() {
        let t = table(16);
        let mut z = vec![0u64; 16];
        t.forward(&mut z);
        assert!(z.iter().all(|&c| c == 0));
    }

    #[test]
    fn constant_polynomial_is_constant_in_transform_domain() {
        // Used by scalar plaintext addition: adding c to every transform
        // slot adds the constant polynomial c.
        let t = table(32);
        let mut a = vec![0u64; 32];
        a[0] = 12345;
        t.forward(&mut a);
        assert!(a.iter().all(|&c| c == 12345));
    }

    #[test]
    fn pointwise_product_matches_schoolbook() {
        // (1 + X)(1 - X) = 1 - X^2, plus random instances at several sizes.
        let t = table(16);
        let mut a = vec![0u64; 16];
        let mut b = vec![0u64; 16];
        a[0] = 1;
        a[1] = 1;
        b[0] = 1;
        b[1] = t.q - 1;
        let expect = negacyclic_schoolbook(&a, &b, t.q);
        let mut fa = a.clone();
        let mut fb = b.clone();
        t.forward(&mut fa);
        t.forward(&mut fb);
        let mut prod: Vec<u64> =
            fa.iter().zip(&fb).map(|(&x, &y)| mul_mod(x, y, t.q)).collect();
        t.inverse(&mut prod);
        assert_eq!(prod, expect);
        let mut want = vec![0u64; 16];
        want[0] = 1;
        want[2] = t.q - 1;
        assert_eq!(prod, want);

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in [8usize, 16, 32, 64] {
            let t = table(n);
            for _ in 0..25 {
                let a: Vec<u64> = (0..n).map(|_| rng.random_range(0..t.q)).collect();
                let b: Vec<u64> = (0..n).map(|_| rng.random_range(0..t.q)).collect();
                let expect = negacyclic_schoolbook(&a, &b, t.q);
                let mut fa = a.clone();
                let mut fb = b.clone();
                t.forward(&mut fa);
                t.forward(&mut fb);
                let mut got: Vec<u64> =
                    fa.iter().zip(&fb).map(|(&x, &y)| mul_mod(x, y, t.q)).collect();
                t.inverse(&mut got);
                assert_eq!(got, expect);
            }
        }
    }
}
