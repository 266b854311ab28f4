//! 64-bit modular primitives and prime generation for NTT-friendly chains.
//! Products go through u128; no multi-precision arithmetic is needed for
//! primes up to 60 bits.

#[inline]
pub fn add_mod(a: u64, b: u64, q: u64) -> u64 {
    let s = a + b; // fits: a, b < q <= 2^60
    if s >= q {
        s - q
    } else {
        s
    }
}

#[inline]
pub fn sub_mod(a: u64, b: u64, q: u64) -> u64 {
    if a >= b {
        a - b
    } else {
        a + q - b
    }
}

#[inline]
pub fn mul_mod(a: u64, b: u64, q: u64) -> u64 {
    ((a as u128 * b as u128) % q as u128) as u64
}

#[inline]
pub fn neg_mod(a: u64, q: u64) -> u64 {
    if a == 0 {
        0
    } else {
        q - a
    }
}

pub fn pow_mod(mut base: u64, mut exp: u64, q: u64) -> u64 {
    let mut acc = 1u64;
    base %= q;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = mul_mod(acc, base, q);
        }
        base = mul_mod(base, base, q);
        exp >>= 1;
    }
    acc
}

/// Inverse modulo a prime.
pub fn inv_mod(a: u64, q: u64) -> u64 {
    pow_mod(a, q - 2, q)
}

/// Deterministic Miller-Rabin for u64 (the listed witnesses cover the full
/// 64-bit range).
pub fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    for p in [2u64, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37] {
        if n == p {
            return true;
        }
        if n % p == 0 {
            return false;
        }
    }
    let mut d = n - 1;
    let mut r = 0u32;
    while d & 1 == 0 {
        d >>= 1;
        r += 1;
    }
    'witness: for a in [2u64, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37] {
        let mut x = pow_mod(a, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..r {
            x = mul_mod(x, x, n);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// Primes congruent to 1 mod `modulus`, chosen as close to `2^bits` as
/// possible (closeness keeps rescale divisors near the scale), skipping any
/// in `taken`.
pub fn find_ntt_primes(bits: u32, modulus: u64, count: usize, taken: &[u64]) -> Option<Vec<u64>> {
    let center = 1u64 << bits;
    let base = center - center % modulus + 1; // smallest candidate >= center - modulus
    let mut found = Vec::with_capacity(count);
    let mut step = 0u64;
    // Walk outward from the center, alternating sides.
    while found.len() < count {
        for cand in [base + step * modulus, base.checked_sub(step * modulus)?] {
            if found.len() < count
                && cand > 2
                && cand.leading_zeros() >= 3 // keep a+b < 2^64 headroom in add_mod
                && is_prime(cand)
                && !taken.contains(&cand)
                && !found.contains(&cand)
            {
                found.push(cand);
            }
        }
        step += 1;
        if step * modulus > center / 2 {
            return None;
        }
    }
    Some(found)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn primality_known_values() {
        assert!(is_prime(2));
        assert!(is_prime(65537));
        assert!(is_prime((1 << 31) - 1));
        assert!(!is_prime(1));
        assert!(!is_prime((1u64 << 40) + 1)); // 2^40+1 = 257 * 4278255361
        assert!(is_prime(1099511627791)); // first prime above 2^40
    }

    #[test]
    fn ntt_prime_search() {
        let n = 1usize << 12;
        let primes = find_ntt_primes(40, 2 * n as u64, 4, &[]).unwrap();
        assert_eq!(primes.len(), 4);
        for &p in &primes {
            assert!(is_prime(p));
            assert_eq!(p % (2 * n as u64), 1);
            // Close to 2^40: needed for scale discipline after rescale.
            let rel = ((p as f64) - (1u64 << 40) as f64).abs() / (1u64 << 40) as f64;
            assert!(rel < (-19.0f64).exp2(), "prime {p} too far from 2^40");
        }
    }

    #[test]
    fn mod_arith_round_trip() {
        let q = 1099511627791u64;
        let a = 987654321987u64 % q;
        assert_eq!(mul_mod(a, inv_mod(a, q), q), 1);
        assert_eq!(add_mod(q - 1, 1, q), 0);
        assert_eq!(sub_mod(0, 1, q), q - 1);
        assert_eq!(pow_mod(2, 40, q), 1u64 << 40);
    }
}
