//! Emulator backend: plaintext values with the full scale/level semantics
//! of the leveled scheme (level-exhaustion faults included) plus injected
//! per-operation noise. With the noise model zeroed it is bit-identical to
//! the exact backend over straight-line programs.

use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::{
    check_add_compat, check_same_backend, exp_via_poly, BackendKind, CipherValue,
    ExpApproxConfig, HeBackend, HeDecrypt, HeError, HeProfile, Payload, PLAINTEXT_BOUND,
};

/// Additive noise injected by the emulator: Gaussian with `sigma_op`
/// standard deviation per slot on every homomorphic operation, plus a
/// uniform rounding error up to `rescale_round_bound` on each rescale.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NoiseModel {
    pub sigma_op: f64,
    pub rescale_round_bound: f64,
}

impl Default for NoiseModel {
    /// Default noise matches the quantization granularity of the standard
    /// profile's scale (`2^-40 = 1/delta`). Learned desirabilities reach
    /// `~1e-6` on the shipped maze, so a per-operation floor much above the
    /// quantization step would dominate the signal in long sessions;
    /// coarser noise levels stay available explicitly.
    fn default() -> Self {
        NoiseModel {
            sigma_op: (-40.0f64).exp2(),
            rescale_round_bound: (-45.0f64).exp2(),
        }
    }
}

impl NoiseModel {
    pub fn zero() -> Self {
        NoiseModel { sigma_op: 0.0, rescale_round_bound: 0.0 }
    }
}

pub struct EmulatorBackend {
    profile: HeProfile,
    noise: NoiseModel,
    rng: Mutex<ChaCha8Rng>,
}

impl EmulatorBackend {
    pub fn new(profile: HeProfile, noise: NoiseModel, seed: u64) -> Result<Self, HeError> {
        profile.validate()?;
        Ok(EmulatorBackend {
            profile,
            noise,
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)),
        })
    }

    pub fn noise_model(&self) -> &NoiseModel {
        &self.noise
    }

    fn values<'a>(&self, c: &'a CipherValue) -> Result<&'a Vec<f64>, HeError> {
        if c.kind != BackendKind::Emulator {
            return Err(HeError::BackendMismatch);
        }
        match &c.payload {
            Payload::Plain(v) => Ok(v),
            Payload::Rlwe(_) => Err(HeError::BackendMismatch),
        }
    }

    /// Zero sigma draws nothing, keeping bit-identity with the exact
    /// backend (and identical rng consumption is irrelevant there).
    fn perturb(&self, values: &mut [f64], sigma: f64) {
        if sigma <= 0.0 {
            return;
        }
        let normal = Normal::new(0.0, sigma).expect("finite sigma");
        let mut rng = self.rng.lock().unwrap();
        for v in values.iter_mut() {
            *v += normal.sample(&mut *rng);
        }
    }

    fn perturb_uniform(&self, values: &mut [f64], bound: f64) {
        if bound <= 0.0 {
            return;
        }
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        let mut rng = self.rng.lock().unwrap();
        for v in values.iter_mut() {
            *v += dist.sample(&mut *rng);
        }
    }

    fn wrap(&self, values: Vec<f64>, scale: f64, level: u32) -> CipherValue {
        CipherValue { payload: Payload::Plain(values), scale, level, kind: BackendKind::Emulator }
    }
}

impl HeBackend for EmulatorBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Emulator
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
        let mut out = values.to_vec();
        self.perturb(&mut out, self.noise.sigma_op);
        Ok(self.wrap(out, self.profile.scale(), self.profile.usable_levels()))
    }

    fn add(&self, a: &CipherValue, b: &CipherValue) -> Result<CipherValue, HeError> {
        check_add_compat(a, b)?;
        let (va, vb) = (self.values(a)?, self.values(b)?);
        let mut out: Vec<f64> = va.iter().zip(vb).map(|(x, y)| x + y).collect();
        self.perturb(&mut out, self.noise.sigma_op);
        Ok(self.wrap(out, a.scale, a.level))
    }

    fn add_plain(&self, a: &CipherValue, p: f64) -> Result<CipherValue, HeError> {
        let mut out: Vec<f64> = self.values(a)?.iter().map(|x| x + p).collect();
        self.perturb(&mut out, self.noise.sigma_op);
        Ok(self.wrap(out, a.scale, a.level))
    }

    fn mul(&self, a: &CipherValue, b: &CipherValue) -> Result<CipherValue, HeError> {
        check_same_backend(a, b)?;
        if a.level != b.level {
            return Err(HeError::LevelMismatch { a: a.level, b: b.level });
        }
        if a.level < 1 {
            return Err(HeError::LevelExhausted { op: "mul", level: a.level });
        }
        let (va, vb) = (self.values(a)?, self.values(b)?);
        let mut out: Vec<f64> = va.iter().zip(vb).map(|(x, y)| x * y).collect();
        self.perturb(&mut out, self.noise.sigma_op);
        Ok(self.wrap(out, a.scale * b.scale, a.level))
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
        let mut out: Vec<f64> = self.values(a)?.iter().map(|x| x * p).collect();
        self.perturb(&mut out, self.noise.sigma_op);
        Ok(self.wrap(out, a.scale * plain_scale, a.level))
    }

    fn rescale(&self, a: &CipherValue) -> Result<CipherValue, HeError> {
        if a.level < 1 {
            return Err(HeError::LevelExhausted { op: "rescale", level: a.level });
        }
        let delta = self.profile.scale();
        if a.scale < delta * delta * 0.5 {
            return Err(HeError::RescaleScaleTooLow { scale: a.scale });
        }
        let mut out = self.values(a)?.clone();
        self.perturb_uniform(&mut out, self.noise.rescale_round_bound);
        Ok(self.wrap(out, a.scale / delta, a.level - 1))
    }

    fn align_levels(&self, a: &CipherValue, target: u32) -> Result<CipherValue, HeError> {
        if target > a.level {
            return Err(HeError::LevelRaise { from: a.level, to: target });
        }
        Ok(self.wrap(self.values(a)?.clone(), a.scale, target))
    }

    fn rescale_divisor(&self, _level: u32) -> f64 {
        self.profile.scale()
    }

    fn exp_neg_scaled(
        &self,
        c: &CipherValue,
        cfg: &ExpApproxConfig,
    ) -> Result<CipherValue, HeError> {
        exp_via_poly(self, c, cfg)
    }
}

impl HeDecrypt for EmulatorBackend {
    fn decrypt(&self, c: &CipherValue) -> Result<Vec<f64>, HeError> {
        self.values(c).cloned()
    }
}
