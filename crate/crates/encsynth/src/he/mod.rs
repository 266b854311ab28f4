//! Leveled approximate homomorphic arithmetic: ciphertext values with scale
//! and level bookkeeping, a backend contract with three conforming
//! implementations, polynomial approximation of the exponential, and the
//! encrypted Z-learning update kernel.
//!
//! Backends:
//! - [`ExactBackend`] — plaintext arithmetic, infinite levels, zero noise.
//! - [`EmulatorBackend`] — plaintext arithmetic plus the approximate
//!   scheme's scale/level semantics, level-exhaustion faults, and injected
//!   noise.
//! - `RlweBackend` (module `crate::rlwe`) — the cryptographic instantiation.
//!
//! Nothing on this evaluation path compares ciphertext values; the only
//! primitives are addition and multiplication (plus the rescale/align
//! plumbing they require).
//!
//! The update kernel needs `exp(-c/lambda)` of an encrypted cost, which a
//! leveled scheme cannot compute directly. [`ExpApproxConfig`] builds a
//! low-degree polynomial proxy with a certified error bound over the cost
//! range:
//!
//! ```rust
//! use encsynth::he::{exp_via_poly, ExactBackend, ExpApproxConfig, HeBackend, HeDecrypt, HeProfile};
//!
//! // Costs in [0, 0.1], temperature lambda = 0.15.
//! let cfg = ExpApproxConfig::default_for(0.1, 0.15)?;
//! assert!(cfg.certify() <= cfg.eps_approx); // swept error bound holds
//!
//! let be = ExactBackend::new(HeProfile::standard())?;
//! let enc_cost = be.encrypt_scalar(0.1)?;
//! let factor = exp_via_poly(&be, &enc_cost, &cfg)?;
//! let expected = (-0.1f64 / 0.15).exp();
//! assert!((be.decrypt_scalar(&factor)? - expected).abs() < 1e-6);
//! # Ok::<(), Box<dyn std::error::Error>>(())
//! ```

mod emulator;
mod exact;

pub use emulator::{EmulatorBackend, NoiseModel};
pub use exact::ExactBackend;

use thiserror::Error;

/// Plaintext magnitude bound accepted by `encrypt`.
pub const PLAINTEXT_BOUND: f64 = 1048576.0; // 2^20

#[derive(Debug, Error)]
pub enum HeError {
    #[error("level exhausted during {op} (level {level})")]
    LevelExhausted { op: &'static str, level: u32 },
    #[error("level mismatch: {a} vs {b} (align_levels first)")]
    LevelMismatch { a: u32, b: u32 },
    #[error("scale mismatch: {a} vs {b} (never coerced silently)")]
    ScaleMismatch { a: f64, b: f64 },
    #[error("operands come from different backends")]
    BackendMismatch,
    #[error("cannot raise level from {from} to {to}")]
    LevelRaise { from: u32, to: u32 },
    #[error("plaintext {0} exceeds the bound {PLAINTEXT_BOUND}")]
    PlaintextOutOfRange(f64),
    #[error("rescale at scale {scale} (expected roughly scale^2 of the profile)")]
    RescaleScaleTooLow { scale: f64 },
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
    #[error("invalid exp config: {0}")]
    InvalidExpConfig(String),
    #[error("serialization error: {0}")]
    Serialization(String),
    #[error("rlwe backend error: {0}")]
    Rlwe(String),
}

/// HE parameter profile: ring dimension, modulus-chain bit sizes, scale.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct HeProfile {
    pub ring_dimension: usize,
    pub chain_bits: Vec<u32>,
    pub log2_scale: u32,
}

impl HeProfile {
    /// The reference profile for the grid-world experiment: N = 2^14,
    /// chain {60, 30, 30, 30, 30, 60}, scale 2^40.
    pub fn standard() -> Self {
        HeProfile {
            ring_dimension: 1 << 14,
            chain_bits: vec![60, 30, 30, 30, 30, 60],
            log2_scale: 40,
        }
    }

    /// Small profile for fast tests: N = 2^12 with interior primes sized to
    /// the scale.
    pub fn test_small() -> Self {
        HeProfile {
            ring_dimension: 1 << 12,
            chain_bits: vec![60, 40, 40, 40, 40, 60],
            log2_scale: 40,
        }
    }

    pub fn validate(&self) -> Result<(), HeError> {
        if !self.ring_dimension.is_power_of_two() {
            return Err(HeError::InvalidProfile("ring dimension must be a power of two".into()));
        }
        if self.chain_bits.len() < 3 {
            return Err(HeError::InvalidProfile("modulus chain needs at least 3 primes".into()));
        }
        if self.log2_scale < 20 {
            return Err(HeError::InvalidProfile("scale must be at least 2^20".into()));
        }
        Ok(())
    }

    /// Multiplicative budget: the two outer primes are reserved (decryption
    /// precision and key material), leaving one level per interior prime.
    pub fn usable_levels(&self) -> u32 {
        self.chain_bits.len() as u32 - 2
    }

    pub fn scale(&self) -> f64 {
        (self.log2_scale as f64).exp2()
    }
}

/// Backend discriminant carried by every ciphertext.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendKind {
    Exact = 0,
    Emulator = 1,
    Rlwe = 2,
}

impl BackendKind {
    pub fn tag(self) -> u8 {
        self as u8
    }

    pub fn from_tag(tag: u8) -> Result<Self, HeError> {
        match tag {
            0 => Ok(BackendKind::Exact),
            1 => Ok(BackendKind::Emulator),
            2 => Ok(BackendKind::Rlwe),
            other => Err(HeError::Serialization(format!("unknown backend tag {other}"))),
        }
    }
}

/// Backend-specific ciphertext payload.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    /// Exact and emulator backends carry the (possibly noisy) values.
    Plain(Vec<f64>),
    Rlwe(crate::rlwe::RlweCiphertext),
}

/// An encrypted scalar or slot vector with scale and level metadata.
///
/// Values are immutable; every operation returns a new one.
#[derive(Debug, Clone, PartialEq)]
pub struct CipherValue {
    pub payload: Payload,
    pub scale: f64,
    pub level: u32,
    pub kind: BackendKind,
}

impl CipherValue {
    /// Framed binary form: 1-byte backend tag, 8-byte LE scale exponent
    /// (log2 of the scale as f64 bits), 4-byte LE level, 4-byte LE payload
    /// length, payload bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let payload = match &self.payload {
            Payload::Plain(values) => {
                let mut b = Vec::with_capacity(4 + values.len() * 8);
                b.extend_from_slice(&(values.len() as u32).to_le_bytes());
                for v in values {
                    b.extend_from_slice(&v.to_le_bytes());
                }
                b
            }
            Payload::Rlwe(ct) => ct.to_bytes(),
        };
        let mut out = Vec::with_capacity(17 + payload.len());
        out.push(self.kind.tag());
        out.extend_from_slice(&self.scale.log2().to_le_bytes());
        out.extend_from_slice(&self.level.to_le_bytes());
        out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, usize), HeError> {
        if bytes.len() < 17 {
            return Err(HeError::Serialization("ciphertext header truncated".into()));
        }
        let kind = BackendKind::from_tag(bytes[0])?;
        let scale_log2 = f64::from_le_bytes(bytes[1..9].try_into().unwrap());
        let level = u32::from_le_bytes(bytes[9..13].try_into().unwrap());
        let len = u32::from_le_bytes(bytes[13..17].try_into().unwrap()) as usize;
        if bytes.len() < 17 + len {
            return Err(HeError::Serialization("ciphertext payload truncated".into()));
        }
        let body = &bytes[17..17 + len];
        let payload = match kind {
            BackendKind::Exact | BackendKind::Emulator => {
                if body.len() < 4 {
                    return Err(HeError::Serialization("plain payload truncated".into()));
                }
                let n = u32::from_le_bytes(body[0..4].try_into().unwrap()) as usize;
                if body.len() != 4 + n * 8 {
                    return Err(HeError::Serialization("plain payload length mismatch".into()));
                }
                let values = (0..n)
                    .map(|i| f64::from_le_bytes(body[4 + i * 8..12 + i * 8].try_into().unwrap()))
                    .collect();
                Payload::Plain(values)
            }
            BackendKind::Rlwe => Payload::Rlwe(crate::rlwe::RlweCiphertext::from_bytes(body)?),
        };
        Ok((
            CipherValue { payload, scale: scale_log2.exp2(), level, kind },
            17 + len,
        ))
    }
}

/// The evaluation contract. Deliberately excludes decryption: evaluators
/// (in particular the synthesis server) hold no secret material. Decryption
/// lives behind [`HeDecrypt`].
pub trait HeBackend {
    fn kind(&self) -> BackendKind;
    fn profile(&self) -> &HeProfile;

    /// Encrypts a slot vector at full level and scale.
    fn encrypt(&self, values: &[f64]) -> Result<CipherValue, HeError>;

    fn add(&self, a: &CipherValue, b: &CipherValue) -> Result<CipherValue, HeError>;
    fn add_plain(&self, a: &CipherValue, p: f64) -> Result<CipherValue, HeError>;
    fn mul(&self, a: &CipherValue, b: &CipherValue) -> Result<CipherValue, HeError>;

    /// Plaintext multiplication with an explicit plaintext scale. The result
    /// scale is `a.scale * plain_scale`. Pipelines use the scale to land on
    /// an exact target after the following rescale.
    fn mul_plain_at(
        &self,
        a: &CipherValue,
        p: f64,
        plain_scale: f64,
    ) -> Result<CipherValue, HeError>;

    fn rescale(&self, a: &CipherValue) -> Result<CipherValue, HeError>;

    /// Drops a ciphertext to `target` level without multiplication.
    fn align_levels(&self, a: &CipherValue, target: u32) -> Result<CipherValue, HeError>;

    /// The modulus a rescale performed at `level` divides by. The emulator
    /// always divides by the profile scale; the RLWE backend divides by the
    /// chain prime active at that level.
    fn rescale_divisor(&self, level: u32) -> f64;

    /// Approximates `exp(-c/lambda)` for an encrypted cost. The exact
    /// backend evaluates the true map; the others run the configured
    /// polynomial pipeline.
    fn exp_neg_scaled(
        &self,
        c: &CipherValue,
        cfg: &ExpApproxConfig,
    ) -> Result<CipherValue, HeError>;

    /// Plaintext multiplication at the default plaintext scale.
    fn mul_plain(&self, a: &CipherValue, p: f64) -> Result<CipherValue, HeError> {
        self.mul_plain_at(a, p, self.profile().scale())
    }

    /// Scalar convenience wrapper.
    fn encrypt_scalar(&self, value: f64) -> Result<CipherValue, HeError> {
        self.encrypt(&[value])
    }
}

/// Shared backends keep the contract (server and client ends of a session
/// hold the same key material through an `Arc`).
impl<B: HeBackend + ?Sized> HeBackend for std::sync::Arc<B> {
    fn kind(&self) -> BackendKind {
        (**self).kind()
    }
    fn profile(&self) -> &HeProfile {
        (**self).profile()
    }
    fn encrypt(&self, values: &[f64]) -> Result<CipherValue, HeError> {
        (**self).encrypt(values)
    }
    fn add(&self, a: &CipherValue, b: &CipherValue) -> Result<CipherValue, HeError> {
        (**self).add(a, b)
    }
    fn add_plain(&self, a: &CipherValue, p: f64) -> Result<CipherValue, HeError> {
        (**self).add_plain(a, p)
    }
    fn mul(&self, a: &CipherValue, b: &CipherValue) -> Result<CipherValue, HeError> {
        (**self).mul(a, b)
    }
    fn mul_plain_at(
        &self,
        a: &CipherValue,
        p: f64,
        plain_scale: f64,
    ) -> Result<CipherValue, HeError> {
        (**self).mul_plain_at(a, p, plain_scale)
    }
    fn rescale(&self, a: &CipherValue) -> Result<CipherValue, HeError> {
        (**self).rescale(a)
    }
    fn align_levels(&self, a: &CipherValue, target: u32) -> Result<CipherValue, HeError> {
        (**self).align_levels(a, target)
    }
    fn rescale_divisor(&self, level: u32) -> f64 {
        (**self).rescale_divisor(level)
    }
    fn exp_neg_scaled(
        &self,
        c: &CipherValue,
        cfg: &ExpApproxConfig,
    ) -> Result<CipherValue, HeError> {
        (**self).exp_neg_scaled(c, cfg)
    }
}

/// Decryption capability, held by clients only.
pub trait HeDecrypt {
    fn decrypt(&self, c: &CipherValue) -> Result<Vec<f64>, HeError>;

    fn decrypt_scalar(&self, c: &CipherValue) -> Result<f64, HeError> {
        Ok(self.decrypt(c)?[0])
    }
}

pub(crate) fn check_same_backend(a: &CipherValue, b: &CipherValue) -> Result<(), HeError> {
    if a.kind != b.kind {
        return Err(HeError::BackendMismatch);
    }
    Ok(())
}

pub(crate) fn check_add_compat(a: &CipherValue, b: &CipherValue) -> Result<(), HeError> {
    check_same_backend(a, b)?;
    if a.level != b.level {
        return Err(HeError::LevelMismatch { a: a.level, b: b.level });
    }
    let rel = (a.scale - b.scale).abs() / a.scale.max(b.scale);
    if rel > 1e-9 {
        return Err(HeError::ScaleMismatch { a: a.scale, b: b.scale });
    }
    Ok(())
}

/// Multiplicative depth of a power-tree evaluation of a degree-`d`
/// polynomial: `ceil(log2 d) + 1` (the +1 is the coefficient multiply);
/// constants consume nothing.
pub fn poly_depth(degree: usize) -> u32 {
    if degree == 0 {
        0
    } else {
        (usize::BITS - (degree - 1).leading_zeros()) + 1
    }
}

/// Method variant for the exponential approximation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ExpMethod {
    TaylorAtZero,
    ChebyshevOnDomain,
}

/// Configuration of the `exp(-c/lambda)` approximation on `[0, c_max]`:
/// a degree-`degree` polynomial in `c` approximating
/// `exp(-c/(lambda * 2^squarings))`, squared `squarings` times (range
/// reduction). Carries its certified worst-case domain error, measured by
/// dense sampling at build time.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpApproxConfig {
    pub method: ExpMethod,
    pub degree: usize,
    pub c_max: f64,
    pub lambda: f64,
    pub squarings: u32,
    pub coeffs: Vec<f64>,
    pub eps_approx: f64,
}

pub const EXP_CERTIFY_SAMPLES: usize = 100_000;

impl ExpApproxConfig {
    pub fn build(
        method: ExpMethod,
        degree: usize,
        c_max: f64,
        lambda: f64,
        squarings: u32,
    ) -> Result<Self, HeError> {
        if degree < 1 {
            return Err(HeError::InvalidExpConfig("degree must be >= 1".into()));
        }
        if !(lambda > 0.0) || !(c_max > 0.0) {
            return Err(HeError::InvalidExpConfig("c_max and lambda must be positive".into()));
        }
        let rate = 1.0 / (lambda * (squarings as f64).exp2());
        let coeffs = match method {
            ExpMethod::TaylorAtZero => {
                let mut coeffs = Vec::with_capacity(degree + 1);
                let mut term = 1.0;
                coeffs.push(1.0);
                for k in 1..=degree {
                    term *= -rate / k as f64;
                    coeffs.push(term);
                }
                coeffs
            }
            ExpMethod::ChebyshevOnDomain => {
                chebyshev_monomial_fit(degree, c_max, |c| (-rate * c).exp())
            }
        };
        let mut cfg = ExpApproxConfig {
            method,
            degree,
            c_max,
            lambda,
            squarings,
            coeffs,
            eps_approx: 0.0,
        };
        cfg.eps_approx = cfg.certify();
        Ok(cfg)
    }

    /// Default configuration: Taylor of degree 8 with the minimal number of
    /// squarings keeping `c_max/(lambda * 2^m) <= 1`.
    pub fn default_for(c_max: f64, lambda: f64) -> Result<Self, HeError> {
        let mut squarings = 0u32;
        while c_max / (lambda * (squarings as f64).exp2()) > 1.0 {
            squarings += 1;
        }
        Self::build(ExpMethod::TaylorAtZero, 8, c_max, lambda, squarings)
    }

    /// Plaintext evaluation of the full pipeline (polynomial + squarings).
    pub fn eval_plain(&self, c: f64) -> f64 {
        let mut y = self
            .coeffs
            .iter()
            .rev()
            .fold(0.0, |acc, &coef| acc * c + coef);
        for _ in 0..self.squarings {
            y *= y;
        }
        y
    }

    /// Worst observed `|pipeline(c) - exp(-c/lambda)|` over a dense sweep of
    /// the domain.
    pub fn certify(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..=EXP_CERTIFY_SAMPLES {
            let c = self.c_max * i as f64 / EXP_CERTIFY_SAMPLES as f64;
            let err = (self.eval_plain(c) - (-c / self.lambda).exp()).abs();
            worst = worst.max(err);
        }
        worst
    }

    /// Multiplicative depth of the full exponential pipeline.
    pub fn depth_required(&self) -> u32 {
        poly_depth(self.degree) + self.squarings
    }
}

/// Chebyshev interpolation on `[0, c_max]` expanded to monomial
/// coefficients (degrees stay small enough for a stable expansion).
fn chebyshev_monomial_fit(degree: usize, c_max: f64, f: impl Fn(f64) -> f64) -> Vec<f64> {
    let n = degree + 1;
    // Nodes in [0, c_max].
    let nodes: Vec<f64> = (0..n)
        .map(|k| {
            let t = ((2 * k + 1) as f64 * std::f64::consts::PI / (2 * n) as f64).cos();
            0.5 * c_max * (t + 1.0)
        })
        .collect();
    // Newton divided differences.
    let mut dd: Vec<f64> = nodes.iter().map(|&x| f(x)).collect();
    for j in 1..n {
        for i in (j..n).rev() {
            dd[i] = (dd[i] - dd[i - 1]) / (nodes[i] - nodes[i - j]);
        }
    }
    // Expand the Newton form to monomials.
    let mut coeffs = vec![0.0; n];
    let mut basis = vec![0.0; n];
    basis[0] = 1.0;
    let mut basis_len = 1;
    for (i, &c) in dd.iter().enumerate() {
        for j in 0..basis_len {
            coeffs[j] += c * basis[j];
        }
        if i + 1 < n {
            // basis *= (x - nodes[i])
            for j in (1..=basis_len).rev() {
                basis[j] = basis[j - 1] - nodes[i] * *basis.get(j).unwrap_or(&0.0);
            }
            basis[0] *= -nodes[i];
            basis_len += 1;
        }
    }
    coeffs
}

/// Evaluates `sum_k coeffs[k] x^k` over ciphertext via a power tree
/// (depth `ceil(log2 d) + 1`). The decrypted result matches plaintext
/// evaluation within backend tolerance.
pub fn poly_eval<B: HeBackend + ?Sized>(
    backend: &B,
    x: &CipherValue,
    coeffs: &[f64],
) -> Result<CipherValue, HeError> {
    let mut degree = coeffs.len().saturating_sub(1);
    while degree > 0 && coeffs[degree] == 0.0 {
        degree -= 1;
    }
    if degree == 0 {
        // Constant: zero levels consumed. Zero out the input and shift.
        let zero = backend.mul_plain(x, 0.0)?;
        return backend.add_plain(&zero, *coeffs.first().unwrap_or(&0.0));
    }
    let depth = poly_depth(degree);
    if x.level < depth {
        return Err(HeError::LevelExhausted { op: "poly_eval", level: x.level });
    }
    let target = backend.profile().scale();
    // Power ladder: x^k = x^(k/2) * x^(k - k/2), depth ceil(log2 k).
    let mut powers: Vec<Option<CipherValue>> = vec![None; degree + 1];
    powers[1] = Some(x.clone());
    for k in 2..=degree {
        let a = k / 2;
        let b = k - a;
        let pa = powers[a].as_ref().unwrap();
        let pb = powers[b].as_ref().unwrap();
        let level = pa.level.min(pb.level);
        let pa = backend.align_levels(pa, level)?;
        let pb = backend.align_levels(pb, level)?;
        let prod = backend.mul(&pa, &pb)?;
        powers[k] = Some(backend.rescale(&prod)?);
    }
    // Coefficient terms, all landed on (final level, target scale).
    let final_level = x.level - depth;
    let divisor = backend.rescale_divisor(final_level + 1);
    let mut acc: Option<CipherValue> = None;
    for k in (1..=degree).rev() {
        if coeffs[k] == 0.0 {
            continue;
        }
        let p = backend.align_levels(powers[k].as_ref().unwrap(), final_level + 1)?;
        let plain_scale = target * divisor / p.scale;
        let term = backend.rescale(&backend.mul_plain_at(&p, coeffs[k], plain_scale)?)?;
        acc = Some(match acc {
            None => term,
            Some(sum) => backend.add(&sum, &term)?,
        });
    }
    let mut result = acc.expect("degree >= 1 has at least one term");
    if coeffs[0] != 0.0 {
        result = backend.add_plain(&result, coeffs[0])?;
    }
    Ok(result)
}

/// The polynomial exponential pipeline: `poly(c)` then `squarings`
/// ciphertext squarings. Shared by the emulator and RLWE backends.
pub fn exp_via_poly<B: HeBackend + ?Sized>(
    backend: &B,
    c: &CipherValue,
    cfg: &ExpApproxConfig,
) -> Result<CipherValue, HeError> {
    if c.level < cfg.depth_required() {
        return Err(HeError::LevelExhausted { op: "exp_neg_scaled", level: c.level });
    }
    let mut y = poly_eval(backend, c, &cfg.coeffs)?;
    for _ in 0..cfg.squarings {
        y = backend.rescale(&backend.mul(&y, &y)?)?;
    }
    Ok(y)
}

/// Level consumption of one encrypted Z-update: 2 with a ciphertext
/// successor (one ciphertext-ciphertext multiply, one plaintext multiply),
/// 1 when the successor is the plaintext absorbing value.
pub fn z_update_depth(cipher_successor: bool) -> u32 {
    if cipher_successor {
        2
    } else {
        1
    }
}

/// Depth of the full per-transition pipeline (exponential + Z-update).
pub fn transition_depth(cfg: &ExpApproxConfig, cipher_successor: bool) -> u32 {
    cfg.depth_required() + z_update_depth(cipher_successor)
}

/// Minimum operand levels required by [`encrypted_z_update`]:
/// `(factor, z_x, z_next)`.
pub fn z_update_required_levels(cipher_successor: bool) -> (u32, u32, u32) {
    if cipher_successor {
        (2, 1, 2)
    } else {
        (1, 1, 0)
    }
}

/// The encrypted Z-learning update
/// `(1 - alpha) * z_x + alpha * factor * z_next` with plaintext `alpha`.
///
/// `z_next = None` means the successor is absorbing, read as plaintext 1.
/// Both branches are landed on the profile scale at the common output level
/// (inputs minus 2 with a ciphertext successor, minus 1 otherwise).
pub fn encrypted_z_update<B: HeBackend + ?Sized>(
    backend: &B,
    z_x: &CipherValue,
    z_next: Option<&CipherValue>,
    factor: &CipherValue,
    alpha: f64,
) -> Result<CipherValue, HeError> {
    let target = backend.profile().scale();
    match z_next {
        Some(zn) => {
            let level = factor.level.min(zn.level).min(z_x.level + 1);
            if level < 2 {
                return Err(HeError::LevelExhausted { op: "encrypted_z_update", level });
            }
            let f = backend.align_levels(factor, level)?;
            let zn = backend.align_levels(zn, level)?;
            let prod = backend.rescale(&backend.mul(&f, &zn)?)?;
            let divisor = backend.rescale_divisor(level - 1);
            let s1 = target * divisor / prod.scale;
            let branch_next =
                backend.rescale(&backend.mul_plain_at(&prod, alpha, s1)?)?;
            let zx = backend.align_levels(z_x, level - 1)?;
            let s2 = target * divisor / zx.scale;
            let branch_keep =
                backend.rescale(&backend.mul_plain_at(&zx, 1.0 - alpha, s2)?)?;
            backend.add(&branch_next, &branch_keep)
        }
        None => {
            let level = factor.level.min(z_x.level);
            if level < 1 {
                return Err(HeError::LevelExhausted { op: "encrypted_z_update", level });
            }
            let f = backend.align_levels(factor, level)?;
            let divisor = backend.rescale_divisor(level);
            let s1 = target * divisor / f.scale;
            let branch_next = backend.rescale(&backend.mul_plain_at(&f, alpha, s1)?)?;
            let zx = backend.align_levels(z_x, level)?;
            let s2 = target * divisor / zx.scale;
            let branch_keep =
                backend.rescale(&backend.mul_plain_at(&zx, 1.0 - alpha, s2)?)?;
            backend.add(&branch_next, &branch_keep)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_levels() {
        let p = HeProfile::standard();
        p.validate().unwrap();
        assert_eq!(p.usable_levels(), 4);
        assert_eq!(p.scale(), (1u64 << 40) as f64);
        assert!(HeProfile {
            ring_dimension: 3000,
            chain_bits: vec![60, 30, 60],
            log2_scale: 40
        }
        .validate()
        .is_err());
    }

    #[test]
    fn poly_depth_table() {
        assert_eq!(poly_depth(0), 0);
        assert_eq!(poly_depth(1), 1);
        assert_eq!(poly_depth(2), 2);
        assert_eq!(poly_depth(3), 3);
        assert_eq!(poly_depth(4), 3);
        assert_eq!(poly_depth(8), 4);
    }

    #[test]
    fn taylor_config_values() {
        let cfg = ExpApproxConfig::build(ExpMethod::TaylorAtZero, 3, 1.0, 1.0, 0).unwrap();
        assert_eq!(cfg.coeffs.len(), 4);
        assert!((cfg.coeffs[1] + 1.0).abs() < 1e-15);
        assert!((cfg.coeffs[2] - 0.5).abs() < 1e-15);
        assert!((cfg.coeffs[3] + 1.0 / 6.0).abs() < 1e-15);
        // Degree-3 Taylor of exp(-x) at x = 0.5.
        assert!((cfg.eval_plain(0.5) - 0.6041666666666666).abs() < 1e-15);
        assert!(((-0.5f64).exp() - cfg.eval_plain(0.5)).abs() < 2.5e-3);
    }

    #[test]
    fn default_config_depth_and_error() {
        // Grid-world parameters: c_max = 0.1, lambda = 0.15 -> no squaring.
        let cfg = ExpApproxConfig::default_for(0.1, 0.15).unwrap();
        assert_eq!(cfg.squarings, 0);
        assert_eq!(cfg.degree, 8);
        assert_eq!(cfg.depth_required(), 4);
        assert!(cfg.eps_approx < 1e-6, "eps = {}", cfg.eps_approx);
        // d = 8 with range reduction m = 3 over [0, 1] at lambda = 0.15.
        let wide = ExpApproxConfig::build(ExpMethod::TaylorAtZero, 8, 1.0, 0.15, 3).unwrap();
        assert!(wide.eps_approx < 1e-4, "eps = {}", wide.eps_approx);
        assert_eq!(wide.depth_required(), 7);
    }

    #[test]
    fn chebyshev_beats_taylor_on_wide_domain() {
        let taylor = ExpApproxConfig::build(ExpMethod::TaylorAtZero, 6, 1.0, 0.15, 0).unwrap();
        let cheb =
            ExpApproxConfig::build(ExpMethod::ChebyshevOnDomain, 6, 1.0, 0.15, 0).unwrap();
        assert!(cheb.eps_approx < taylor.eps_approx);
        assert!(cheb.eps_approx < 2e-3, "eps = {}", cheb.eps_approx);
    }

    #[test]
    fn certified_bound_holds_on_fresh_sweep() {
        let cfg = ExpApproxConfig::default_for(0.5, 0.15).unwrap();
        // Off-grid sweep.
        let mut worst = 0.0f64;
        for i in 0..=54321 {
            let c = cfg.c_max * i as f64 / 54321.0;
            worst = worst.max((cfg.eval_plain(c) - (-c / cfg.lambda).exp()).abs());
        }
        assert!(worst <= cfg.eps_approx * (1.0 + 1e-9) + 1e-15);
    }

    #[test]
    fn cipher_value_round_trip() {
        let c = CipherValue {
            payload: Payload::Plain(vec![1.5, -2.25]),
            scale: (1u64 << 40) as f64,
            level: 3,
            kind: BackendKind::Emulator,
        };
        let bytes = c.to_bytes();
        let (back, used) = CipherValue::from_bytes(&bytes).unwrap();
        assert_eq!(used, bytes.len());
        assert_eq!(back, c);
        assert_eq!(back.to_bytes(), bytes);
        // Truncation fails cleanly.
        assert!(CipherValue::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }
}
