//! Toy RLWE instantiation of the approximate leveled scheme behind the
//! [`crate::he::HeBackend`] contract: canonical-embedding encoding,
//! RNS residue arithmetic (one 64-bit prime per chain level), negacyclic
//! NTT multiplication, relinearization by per-prime digit decomposition,
//! and rescaling by dropping the last chain prime.
//!
//! Security: NONE. Parameters are chosen for arithmetic correctness and
//! test speed, not hardness; every serialized artifact is stamped
//! accordingly.
//!
//! Encryption and evaluation ([`RlweBackend`]) are split from decryption
//! ([`RlweDecryptor`]); only the latter holds the secret key, so handing a
//! backend to a server grants no plaintext access:
//!
//! ```rust
//! use encsynth::he::{HeBackend, HeDecrypt, HeProfile};
//! use encsynth::rlwe::rlwe_pair;
//!
//! let (backend, decryptor) = rlwe_pair(&HeProfile::test_small(), 7)?;
//! let a = backend.encrypt_scalar(1.5)?;
//! let b = backend.encrypt_scalar(-2.0)?;
//! let prod = backend.rescale(&backend.mul(&a, &b)?)?;
//! assert!((decryptor.decrypt_scalar(&prod)? - -3.0).abs() < 1e-4);
//! # Ok::<(), Box<dyn std::error::Error>>(())
//! ```

mod arith;
mod encode;
mod ntt;

use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::he::{
    exp_via_poly, BackendKind, CipherValue, ExpApproxConfig, HeBackend, HeDecrypt, HeError,
    HeProfile, Payload, PLAINTEXT_BOUND,
};
use arith::{add_mod, inv_mod, mul_mod, neg_mod, sub_mod};
use encode::Embedding;

pub use arith::find_ntt_primes;
pub use ntt::{negacyclic_schoolbook, NttTable};

/// Stamp embedded in every serialized ciphertext.
pub const SECURITY_STAMP: &[u8] = b"security: NONE (research toy)";

const MAGIC: &[u8; 4] = b"RTOY";

/// Default error distribution width.
pub const DEFAULT_SIGMA_ERR: f64 = 3.2;

/// Base-2 digit width for relinearization-key decomposition.
const RELIN_DIGIT_BITS: u32 = 20;

/// Concrete ring parameters realized from a profile.
#[derive(Debug, Clone, PartialEq)]
pub struct RlweParams {
    pub n: usize,
    /// Chain primes, each ≡ 1 (mod 2N). The last one is reserved (never
    /// carried by ciphertexts), mirroring the level budget of the profile.
    pub primes: Vec<u64>,
    pub log2_scale: u32,
    pub sigma_err: f64,
}

impl RlweParams {
    /// Realizes a profile. Interior primes are sized to the scale rather
    /// than the profile's interior bit figures when those differ: a rescale
    /// divides the scale by the dropped prime, so primes far from the scale
    /// would wreck scale discipline. The outer (reserved) bit sizes are
    /// honored as given.
    pub fn from_profile(profile: &HeProfile) -> Result<Self, HeError> {
        profile.validate()?;
        let n = profile.ring_dimension;
        if !(1024..=16384).contains(&n) {
            return Err(HeError::InvalidProfile(format!(
                "rlwe ring dimension {n} outside 2^10..=2^14"
            )));
        }
        let len = profile.chain_bits.len();
        let modulus = 2 * n as u64;
        let mut primes = vec![0u64; len];
        let mut taken: Vec<u64> = Vec::new();
        let first = find_ntt_primes(profile.chain_bits[0], modulus, 1, &taken)
            .ok_or_else(|| HeError::InvalidProfile("no NTT prime for first modulus".into()))?[0];
        primes[0] = first;
        taken.push(first);
        let interior = find_ntt_primes(profile.log2_scale, modulus, len - 2, &taken)
            .ok_or_else(|| HeError::InvalidProfile("no NTT primes for interior chain".into()))?;
        for (i, &p) in interior.iter().enumerate() {
            primes[1 + i] = p;
            taken.push(p);
        }
        let last = find_ntt_primes(profile.chain_bits[len - 1], modulus, 1, &taken)
            .ok_or_else(|| HeError::InvalidProfile("no NTT prime for last modulus".into()))?[0];
        primes[len - 1] = last;
        Ok(RlweParams {
            n,
            primes,
            log2_scale: profile.log2_scale,
            sigma_err: DEFAULT_SIGMA_ERR,
        })
    }

    /// Number of primes a fresh ciphertext carries (all but the reserved
    /// last one).
    pub fn max_chain(&self) -> usize {
        self.primes.len() - 1
    }

    pub fn usable_levels(&self) -> u32 {
        self.primes.len() as u32 - 2
    }

    pub fn scale(&self) -> f64 {
        (self.log2_scale as f64).exp2()
    }

    /// FNV-1a over the defining constants; stored in ciphertext headers so
    /// endpoints can detect parameter mismatches.
    pub fn hash(&self) -> u64 {
        let mut h = 0xcbf29ce484222325u64;
        let mut eat = |v: u64| {
            for b in v.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        eat(self.n as u64);
        eat(self.log2_scale as u64);
        for &p in &self.primes {
            eat(p);
        }
        h
    }
}

/// Polynomial in the ring, one NTT-domain residue vector per active prime.
#[derive(Debug, Clone, PartialEq)]
pub struct RingElement {
    pub residues: Vec<Vec<u64>>,
}

impl RingElement {
    fn chain(&self) -> usize {
        self.residues.len()
    }

    fn truncated(&self, chain: usize) -> RingElement {
        RingElement { residues: self.residues[..chain].to_vec() }
    }
}

/// Shared immutable tables: NTT per prime and the slot embedding.
pub struct RlweContext {
    pub params: RlweParams,
    tables: Vec<NttTable>,
    embedding: Embedding,
    prime_invs: Vec<Vec<u64>>, // prime_invs[l][i] = q_l^{-1} mod q_i, i < l
}

impl RlweContext {
    pub fn new(params: RlweParams) -> Self {
        let tables: Vec<NttTable> =
            params.primes.iter().map(|&q| NttTable::new(params.n, q)).collect();
        let embedding = Embedding::new(params.n);
        let prime_invs = (0..params.primes.len())
            .map(|l| {
                (0..l)
                    .map(|i| inv_mod(params.primes[l] % params.primes[i], params.primes[i]))
                    .collect()
            })
            .collect();
        RlweContext { params, tables, embedding, prime_invs }
    }

    fn n(&self) -> usize {
        self.params.n
    }

    /// Signed integer coefficients to an NTT-domain element over `chain`
    /// primes.
    fn lift_signed(&self, coeffs: &[i64], chain: usize) -> RingElement {
        let residues = (0..chain)
            .map(|j| {
                let q = self.params.primes[j];
                let mut r: Vec<u64> = coeffs
                    .iter()
                    .map(|&c| {
                        if c >= 0 {
                            c as u64 % q
                        } else {
                            neg_mod((c.unsigned_abs()) % q, q)
                        }
                    })
                    .collect();
                self.tables[j].forward(&mut r);
                r
            })
            .collect();
        RingElement { residues }
    }

    fn encode(&self, values: &[f64], scale: f64, chain: usize) -> RingElement {
        self.lift_signed(&self.embedding.encode(values, scale), chain)
    }

    /// Centered coefficients of the first-prime residue. Decryption reads
    /// the message here, so it is faithful only while the plaintext
    /// magnitude (value x scale, times the embedding spread) stays below
    /// q0/2 — which holds throughout the shipped pipelines, where decrypted
    /// ciphertexts sit at the profile scale.
    fn centered_first(&self, elem: &RingElement) -> Vec<i64> {
        let q = self.params.primes[0];
        let mut coeffs = elem.residues[0].clone();
        self.tables[0].inverse(&mut coeffs);
        coeffs
            .iter()
            .map(|&c| if c > q / 2 { c as i64 - q as i64 } else { c as i64 })
            .collect()
    }

    fn zero(&self, chain: usize) -> RingElement {
        RingElement { residues: vec![vec![0u64; self.n()]; chain] }
    }

    fn add_elem(&self, a: &RingElement, b: &RingElement) -> RingElement {
        debug_assert_eq!(a.chain(), b.chain());
        let residues = a
            .residues
            .iter()
            .zip(&b.residues)
            .enumerate()
            .map(|(j, (ra, rb))| {
                let q = self.params.primes[j];
                ra.iter().zip(rb).map(|(&x, &y)| add_mod(x, y, q)).collect()
            })
            .collect();
        RingElement { residues }
    }

    fn mul_elem(&self, a: &RingElement, b: &RingElement) -> RingElement {
        debug_assert_eq!(a.chain(), b.chain());
        let residues = a
            .residues
            .iter()
            .zip(&b.residues)
            .enumerate()
            .map(|(j, (ra, rb))| {
                let q = self.params.primes[j];
                ra.iter().zip(rb).map(|(&x, &y)| mul_mod(x, y, q)).collect()
            })
            .collect();
        RingElement { residues }
    }

    fn scalar_mul_elem(&self, a: &RingElement, v: i64) -> RingElement {
        let residues = a
            .residues
            .iter()
            .enumerate()
            .map(|(j, ra)| {
                let q = self.params.primes[j];
                let s = if v >= 0 { v as u64 % q } else { neg_mod(v.unsigned_abs() % q, q) };
                ra.iter().map(|&x| mul_mod(x, s, q)).collect()
            })
            .collect();
        RingElement { residues }
    }

    /// Adds the constant polynomial `v` (a scalar plaintext) to `a`.
    fn add_scalar_elem(&self, a: &RingElement, v: i64) -> RingElement {
        let residues = a
            .residues
            .iter()
            .enumerate()
            .map(|(j, ra)| {
                let q = self.params.primes[j];
                let s = if v >= 0 { v as u64 % q } else { neg_mod(v.unsigned_abs() % q, q) };
                // Constant polynomials are constant in the NTT domain.
                ra.iter().map(|&x| add_mod(x, s, q)).collect()
            })
            .collect();
        RingElement { residues }
    }

    /// Exact RNS rescale: round-divides by the last active prime, dropping
    /// it from the chain.
    fn rescale_elem(&self, a: &RingElement) -> RingElement {
        let chain = a.chain();
        debug_assert!(chain >= 2);
        let last = chain - 1;
        let q_last = self.params.primes[last];
        let mut last_coeffs = a.residues[last].clone();
        self.tables[last].inverse(&mut last_coeffs);
        // Centered lift keeps the rounding error at most half the divisor.
        let centered: Vec<i64> = last_coeffs
            .iter()
            .map(|&c| if c > q_last / 2 { c as i64 - q_last as i64 } else { c as i64 })
            .collect();
        let residues = (0..last)
            .map(|j| {
                let q = self.params.primes[j];
                let inv = self.prime_invs[last][j];
                let mut coeffs = a.residues[j].clone();
                self.tables[j].inverse(&mut coeffs);
                for (c, &t) in coeffs.iter_mut().zip(&centered) {
                    let t_mod = if t >= 0 {
                        t as u64 % q
                    } else {
                        neg_mod(t.unsigned_abs() % q, q)
                    };
                    *c = mul_mod(sub_mod(*c, t_mod, q), inv, q);
                }
                self.tables[j].forward(&mut coeffs);
                coeffs
            })
            .collect();
        RingElement { residues }
    }
}

/// Ciphertext: component ring elements (two, or three transiently inside
/// multiplication) over an active prefix of the prime chain. Scale and
/// level ride in the enclosing [`CipherValue`]; `chain_len = level + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct RlweCiphertext {
    pub components: Vec<RingElement>,
    pub chain_len: u32,
    pub n: u32,
    pub params_hash: u64,
}

impl RlweCiphertext {
    /// Binary form: magic, security stamp, params hash, n, chain length,
    /// component count, then residue vectors as little-endian u64 words.
    /// (The scale exponent and level travel in the CipherValue envelope.)
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.push(SECURITY_STAMP.len() as u8);
        out.extend_from_slice(SECURITY_STAMP);
        out.extend_from_slice(&self.params_hash.to_le_bytes());
        out.extend_from_slice(&self.n.to_le_bytes());
        out.extend_from_slice(&self.chain_len.to_le_bytes());
        out.extend_from_slice(&(self.components.len() as u32).to_le_bytes());
        for comp in &self.components {
            for residue in &comp.residues {
                for &w in residue {
                    out.extend_from_slice(&w.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, HeError> {
        let fail = |m: &str| HeError::Serialization(format!("rlwe ciphertext: {m}"));
        if bytes.len() < 5 || &bytes[0..4] != MAGIC {
            return Err(fail("bad magic"));
        }
        let stamp_len = bytes[4] as usize;
        let mut off = 5 + stamp_len;
        if bytes.len() < off || &bytes[5..off] != SECURITY_STAMP {
            return Err(fail("bad security stamp"));
        }
        if bytes.len() < off + 20 {
            return Err(fail("truncated header"));
        }
        let params_hash = u64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
        let n = u32::from_le_bytes(bytes[off + 8..off + 12].try_into().unwrap());
        let chain_len = u32::from_le_bytes(bytes[off + 12..off + 16].try_into().unwrap());
        let ncomp = u32::from_le_bytes(bytes[off + 16..off + 20].try_into().unwrap());
        off += 20;
        if n == 0 || !u64::from(n).is_power_of_two() || chain_len == 0 || !(2..=3).contains(&ncomp)
        {
            return Err(fail("implausible header fields"));
        }
        let words = ncomp as usize * chain_len as usize * n as usize;
        if bytes.len() != off + words * 8 {
            return Err(fail("payload length mismatch"));
        }
        let mut components = Vec::with_capacity(ncomp as usize);
        for _ in 0..ncomp {
            let mut residues = Vec::with_capacity(chain_len as usize);
            for _ in 0..chain_len {
                let mut v = Vec::with_capacity(n as usize);
                for _ in 0..n {
                    v.push(u64::from_le_bytes(bytes[off..off + 8].try_into().unwrap()));
                    off += 8;
                }
                residues.push(v);
            }
            components.push(RingElement { residues });
        }
        Ok(RlweCiphertext { components, chain_len, n, params_hash })
    }
}

pub struct RlweSecretKey {
    /// s and s^2 in NTT form over all non-reserved primes.
    s: RingElement,
    s2: RingElement,
}

pub struct RlwePublicKey {
    b: RingElement,
    a: RingElement,
}

/// Relinearization key: `keys[j][k]` encrypts `2^(w k) e_j s^2`, where
/// `e_j` is the RNS element that is 1 mod the j-th prime and 0 elsewhere.
/// Digit decomposition of the j-th residue against these entries yields
/// `c2 s^2` with only digit-sized noise amplification, at any level.
pub struct RelinKey {
    digit_bits: u32,
    keys: Vec<Vec<(RingElement, RingElement)>>,
}

fn sample_ternary(n: usize, rng: &mut ChaCha8Rng) -> Vec<i64> {
    (0..n).map(|_| rng.random_range(-1i64..=1)).collect()
}

fn sample_gaussian(n: usize, sigma: f64, rng: &mut ChaCha8Rng) -> Vec<i64> {
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    (0..n).map(|_| normal.sample(rng).round() as i64).collect()
}

fn sample_uniform(ctx: &RlweContext, chain: usize, rng: &mut ChaCha8Rng) -> RingElement {
    let residues = (0..chain)
        .map(|j| {
            let q = ctx.params.primes[j];
            (0..ctx.n()).map(|_| rng.random_range(0..q)).collect()
        })
        .collect();
    RingElement { residues }
}

/// Key generation: ternary secret, RLWE public key, digit-decomposed
/// relinearization key. Deterministic under the seed.
pub fn rlwe_keygen(
    ctx: &Arc<RlweContext>,
    seed: u64,
) -> (RlweSecretKey, RlwePublicKey, RelinKey) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chain = ctx.params.max_chain();
    let s_small = sample_ternary(ctx.n(), &mut rng);
    let s = ctx.lift_signed(&s_small, chain);
    let s2 = ctx.mul_elem(&s, &s);

    let a = sample_uniform(ctx, chain, &mut rng);
    let e = ctx.lift_signed(&sample_gaussian(ctx.n(), ctx.params.sigma_err, &mut rng), chain);
    // b = -a s + e
    let b = ctx.add_elem(&ctx.scalar_mul_elem(&ctx.mul_elem(&a, &s), -1), &e);
    let pk = RlwePublicKey { b, a };

    let w = RELIN_DIGIT_BITS;
    let mut keys = Vec::with_capacity(chain);
    for j in 0..chain {
        let qj = ctx.params.primes[j];
        let digits = (64 - qj.leading_zeros()).div_ceil(w);
        let mut row = Vec::with_capacity(digits as usize);
        for k in 0..digits {
            let ak = sample_uniform(ctx, chain, &mut rng);
            let ek =
                ctx.lift_signed(&sample_gaussian(ctx.n(), ctx.params.sigma_err, &mut rng), chain);
            // payload = 2^(w k) e_j s^2 : nonzero only in the j-th residue.
            let mut payload = ctx.zero(chain);
            let factor = pow2_mod(w as u64 * k as u64, qj);
            payload.residues[j] =
                s2.residues[j].iter().map(|&x| mul_mod(x, factor, qj)).collect();
            let bk = ctx.add_elem(
                &ctx.add_elem(&ctx.scalar_mul_elem(&ctx.mul_elem(&ak, &s), -1), &ek),
                &payload,
            );
            row.push((bk, ak));
        }
        keys.push(row);
    }
    (RlweSecretKey { s, s2 }, pk, RelinKey { digit_bits: w, keys })
}

fn pow2_mod(exp: u64, q: u64) -> u64 {
    arith::pow_mod(2, exp, q)
}

fn encrypt_with(
    ctx: &RlweContext,
    pk: &RlwePublicKey,
    msg: &RingElement,
    rng: &mut ChaCha8Rng,
) -> RlweCiphertext {
    let chain = msg.chain();
    let u = ctx.lift_signed(&sample_ternary(ctx.n(), rng), chain);
    let e0 = ctx.lift_signed(&sample_gaussian(ctx.n(), ctx.params.sigma_err, rng), chain);
    let e1 = ctx.lift_signed(&sample_gaussian(ctx.n(), ctx.params.sigma_err, rng), chain);
    let c0 = ctx.add_elem(&ctx.add_elem(&ctx.mul_elem(&pk.b.truncated(chain), &u), &e0), msg);
    let c1 = ctx.add_elem(&ctx.mul_elem(&pk.a.truncated(chain), &u), &e1);
    RlweCiphertext {
        components: vec![c0, c1],
        chain_len: chain as u32,
        n: ctx.n() as u32,
        params_hash: ctx.params.hash(),
    }
}

/// Decryption to centered first-prime coefficients:
/// `m = sum_i c_i s^i mod q0`.
fn decrypt_to_coeffs(ctx: &RlweContext, sk: &RlweSecretKey, ct: &RlweCiphertext) -> Vec<i64> {
    let chain = ct.chain_len as usize;
    let mut acc = ct.components[0].clone();
    let s = sk.s.truncated(chain);
    acc = ctx.add_elem(&acc, &ctx.mul_elem(&ct.components[1], &s));
    if ct.components.len() == 3 {
        acc = ctx.add_elem(&acc, &ctx.mul_elem(&ct.components[2], &sk.s2.truncated(chain)));
    }
    ctx.centered_first(&acc)
}

/// Tensor multiplication followed by relinearization back to two
/// components.
fn mul_relin(
    ctx: &RlweContext,
    evk: &RelinKey,
    a: &RlweCiphertext,
    b: &RlweCiphertext,
) -> RlweCiphertext {
    debug_assert_eq!(a.chain_len, b.chain_len);
    let chain = a.chain_len as usize;
    let d0 = ctx.mul_elem(&a.components[0], &b.components[0]);
    let d1 = ctx.add_elem(
        &ctx.mul_elem(&a.components[0], &b.components[1]),
        &ctx.mul_elem(&a.components[1], &b.components[0]),
    );
    let d2 = ctx.mul_elem(&a.components[1], &b.components[1]);

    // Digit decomposition of each residue of d2 against the relin key.
    let w = evk.digit_bits;
    let mask = (1u64 << w) - 1;
    let mut acc0 = ctx.zero(chain);
    let mut acc1 = ctx.zero(chain);
    for j in 0..chain {
        let mut coeffs = d2.residues[j].clone();
        ctx.tables[j].inverse(&mut coeffs);
        for (k, (bk, ak)) in evk.keys[j].iter().enumerate() {
            let digit_coeffs: Vec<i64> =
                coeffs.iter().map(|&c| ((c >> (w * k as u32)) & mask) as i64).collect();
            if digit_coeffs.iter().all(|&d| d == 0) {
                continue;
            }
            let digit = ctx.lift_signed(&digit_coeffs, chain);
            acc0 = ctx.add_elem(&acc0, &ctx.mul_elem(&digit, &bk.truncated(chain)));
            acc1 = ctx.add_elem(&acc1, &ctx.mul_elem(&digit, &ak.truncated(chain)));
        }
    }
    RlweCiphertext {
        components: vec![ctx.add_elem(&d0, &acc0), ctx.add_elem(&d1, &acc1)],
        chain_len: a.chain_len,
        n: a.n,
        params_hash: a.params_hash,
    }
}

/// Evaluator: public material only (no secret key anywhere in the type).
pub struct RlweBackend {
    profile: HeProfile,
    ctx: Arc<RlweContext>,
    pk: RlwePublicKey,
    evk: RelinKey,
    rng: Mutex<ChaCha8Rng>,
}

/// Decryptor: the client-side secret half.
pub struct RlweDecryptor {
    ctx: Arc<RlweContext>,
    sk: RlweSecretKey,
}

/// Builds a matched evaluator/decryptor pair. Key material and all
/// subsequent encryption randomness derive from the seed.
pub fn rlwe_pair(profile: &HeProfile, seed: u64) -> Result<(RlweBackend, RlweDecryptor), HeError> {
    let params = RlweParams::from_profile(profile)?;
    let ctx = Arc::new(RlweContext::new(params));
    let (sk, pk, evk) = rlwe_keygen(&ctx, seed);
    Ok((
        RlweBackend {
            profile: profile.clone(),
            ctx: ctx.clone(),
            pk,
            evk,
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed.wrapping_add(1))),
        },
        RlweDecryptor { ctx, sk },
    ))
}

impl RlweBackend {
    pub fn params(&self) -> &RlweParams {
        &self.ctx.params
    }

    fn unwrap<'a>(&self, c: &'a CipherValue) -> Result<&'a RlweCiphertext, HeError> {
        if c.kind != BackendKind::Rlwe {
            return Err(HeError::BackendMismatch);
        }
        match &c.payload {
            Payload::Rlwe(ct) => {
                if ct.params_hash != self.ctx.params.hash() {
                    return Err(HeError::Rlwe("parameter hash mismatch".into()));
                }
                if ct.chain_len != c.level + 1 {
                    return Err(HeError::Rlwe(format!(
                        "chain length {} inconsistent with level {}",
                        ct.chain_len, c.level
                    )));
                }
                Ok(ct)
            }
            Payload::Plain(_) => Err(HeError::BackendMismatch),
        }
    }

    fn wrap(&self, ct: RlweCiphertext, scale: f64, level: u32) -> CipherValue {
        debug_assert_eq!(ct.chain_len, level + 1);
        CipherValue { payload: Payload::Rlwe(ct), scale, level, kind: BackendKind::Rlwe }
    }

    fn round_plain(p: f64, scale: f64) -> Result<i64, HeError> {
        let v = p * scale;
        if !v.is_finite() || v.abs() >= 9.0e18 {
            return Err(HeError::PlaintextOutOfRange(p));
        }
        Ok(v.round() as i64)
    }
}

impl HeBackend for RlweBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Rlwe
    }

    fn profile(&self) -> &HeProfile {
        &self.profile
    }

    fn encrypt(&self, values: &[f64]) -> Result<CipherValue, HeError> {
        for &v in values {
            if v.abs() > PLAINTEXT_BOUND {
                return Err(HeError::PlaintextOutOfRange(v));
            }
        }
        let scale = self.ctx.params.scale();
        let msg = self.ctx.encode(values, scale, self.ctx.params.max_chain());
        let mut rng = self.rng.lock().unwrap();
        let ct = encrypt_with(&self.ctx, &self.pk, &msg, &mut rng);
        Ok(self.wrap(ct, scale, self.ctx.params.usable_levels()))
    }

    fn add(&self, a: &CipherValue, b: &CipherValue) -> Result<CipherValue, HeError> {
        crate::he::check_add_compat(a, b)?;
        let (ca, cb) = (self.unwrap(a)?, self.unwrap(b)?);
        let components = ca
            .components
            .iter()
            .zip(&cb.components)
            .map(|(x, y)| self.ctx.add_elem(x, y))
            .collect();
        Ok(self.wrap(
            RlweCiphertext { components, ..ca.clone() },
            a.scale,
            a.level,
        ))
    }

    fn add_plain(&self, a: &CipherValue, p: f64) -> Result<CipherValue, HeError> {
        let ca = self.unwrap(a)?;
        let v = Self::round_plain(p, a.scale)?;
        let mut components = ca.components.clone();
        components[0] = self.ctx.add_scalar_elem(&components[0], v);
        Ok(self.wrap(RlweCiphertext { components, ..ca.clone() }, a.scale, a.level))
    }

    fn mul(&self, a: &CipherValue, b: &CipherValue) -> Result<CipherValue, HeError> {
        crate::he::check_same_backend(a, b)?;
        if a.level != b.level {
            return Err(HeError::LevelMismatch { a: a.level, b: b.level });
        }
        if a.level < 1 {
            return Err(HeError::LevelExhausted { op: "mul", level: a.level });
        }
        let (ca, cb) = (self.unwrap(a)?, self.unwrap(b)?);
        let ct = mul_relin(&self.ctx, &self.evk, ca, cb);
        Ok(self.wrap(ct, a.scale * b.scale, a.level))
    }

    fn mul_plain_at(
        &self,
        a: &CipherValue,
        p: f64,
        plain_scale: f64,
    ) -> Result<CipherValue, HeError> {
        if a.level < 1 {
            return Err(HeError::LevelExhausted { op: "mul_plain", level: a.level });
        }
        let ca = self.unwrap(a)?;
        let v = Self::round_plain(p, plain_scale)?;
        let components =
            ca.components.iter().map(|c| self.ctx.scalar_mul_elem(c, v)).collect();
        Ok(self.wrap(
            RlweCiphertext { components, ..ca.clone() },
            a.scale * plain_scale,
            a.level,
        ))
    }

    fn rescale(&self, a: &CipherValue) -> Result<CipherValue, HeError> {
        if a.level < 1 {
            return Err(HeError::LevelExhausted { op: "rescale", level: a.level });
        }
        let ca = self.unwrap(a)?;
        let divisor = self.rescale_divisor(a.level);
        let components = ca.components.iter().map(|c| self.ctx.rescale_elem(c)).collect();
        Ok(self.wrap(
            RlweCiphertext { components, chain_len: ca.chain_len - 1, ..ca.clone() },
            a.scale / divisor,
            a.level - 1,
        ))
    }

    fn align_levels(&self, a: &CipherValue, target: u32) -> Result<CipherValue, HeError> {
        if target > a.level {
            return Err(HeError::LevelRaise { from: a.level, to: target });
        }
        let ca = self.unwrap(a)?;
        let chain = target as usize + 1;
        let components = ca.components.iter().map(|c| c.truncated(chain)).collect();
        Ok(self.wrap(
            RlweCiphertext { components, chain_len: chain as u32, ..ca.clone() },
            a.scale,
            target,
        ))
    }

    fn rescale_divisor(&self, level: u32) -> f64 {
        self.ctx.params.primes[level as usize] as f64
    }

    fn exp_neg_scaled(
        &self,
        c: &CipherValue,
        cfg: &ExpApproxConfig,
    ) -> Result<CipherValue, HeError> {
        exp_via_poly(self, c, cfg)
    }
}

impl HeDecrypt for RlweDecryptor {
    fn decrypt(&self, c: &CipherValue) -> Result<Vec<f64>, HeError> {
        if c.kind != BackendKind::Rlwe {
            return Err(HeError::BackendMismatch);
        }
        let ct = match &c.payload {
            Payload::Rlwe(ct) => ct,
            Payload::Plain(_) => return Err(HeError::BackendMismatch),
        };
        if ct.params_hash != self.ctx.params.hash() {
            return Err(HeError::Rlwe("parameter hash mismatch".into()));
        }
        let coeffs = decrypt_to_coeffs(&self.ctx, &self.sk, ct);
        Ok(self.ctx.embedding.decode(&coeffs, c.scale))
    }
}
