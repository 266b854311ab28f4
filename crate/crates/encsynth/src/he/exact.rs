//! Plaintext reference backend: same operation surface, infinite levels,
//! zero noise. The fixed point of the encrypted learner under this backend
//! is bit-identical to the plaintext learner's.

use super::{
    check_add_compat, check_same_backend, BackendKind, CipherValue, ExpApproxConfig, HeBackend,
    HeDecrypt, HeError, Payload, PLAINTEXT_BOUND,
};
use crate::he::HeProfile;

pub struct ExactBackend {
    profile: HeProfile,
}

impl ExactBackend {
    pub fn new(profile: HeProfile) -> Result<Self, HeError> {
        profile.validate()?;
        Ok(ExactBackend { profile })
    }

    fn values<'a>(&self, c: &'a CipherValue) -> Result<&'a Vec<f64>, HeError> {
        if c.kind != BackendKind::Exact {
            return Err(HeError::BackendMismatch);
        }
        match &c.payload {
            Payload::Plain(v) => Ok(v),
            Payload::Rlwe(_) => Err(HeError::BackendMismatch),
        }
    }

    fn wrap(&self, values: Vec<f64>) -> CipherValue {
        CipherValue {
            payload: Payload::Plain(values),
            scale: self.profile.scale(),
            level: self.profile.usable_levels(),
            kind: BackendKind::Exact,
        }
    }
}

impl HeBackend for ExactBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Exact
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
        Ok(self.wrap(values.to_vec()))
    }

    fn add(&self, a: &CipherValue, b: &CipherValue) -> Result<CipherValue, HeError> {
        check_add_compat(a, b)?;
        let (va, vb) = (self.values(a)?, self.values(b)?);
        Ok(self.wrap(va.iter().zip(vb).map(|(x, y)| x + y).collect()))
    }

    fn add_plain(&self, a: &CipherValue, p: f64) -> Result<CipherValue, HeError> {
        Ok(self.wrap(self.values(a)?.iter().map(|x| x + p).collect()))
    }

    fn mul(&self, a: &CipherValue, b: &CipherValue) -> Result<CipherValue, HeError> {
        check_same_backend(a, b)?;
        let (va, vb) = (self.values(a)?, self.values(b)?);
        Ok(self.wrap(va.iter().zip(vb).map(|(x, y)| x * y).collect()))
    }

    fn mul_plain_at(
        &self,
        a: &CipherValue,
        p: f64,
        _plain_scale: f64,
    ) -> Result<CipherValue, HeError> {
        Ok(self.wrap(self.values(a)?.iter().map(|x| x * p).collect()))
    }

    fn rescale(&self, a: &CipherValue) -> Result<CipherValue, HeError> {
        Ok(self.wrap(self.values(a)?.clone()))
    }

    fn align_levels(&self, a: &CipherValue, _target: u32) -> Result<CipherValue, HeError> {
        Ok(self.wrap(self.values(a)?.clone()))
    }

    fn rescale_divisor(&self, _level: u32) -> f64 {
        self.profile.scale()
    }

    fn exp_neg_scaled(
        &self,
        c: &CipherValue,
        cfg: &ExpApproxConfig,
    ) -> Result<CipherValue, HeError> {
        // The true map, not the polynomial: the exact backend's factor is
        // exactly the plaintext learner's `exp(-c/lambda)`.
        let values = self
            .values(c)?
            .iter()
            .map(|&v| (-v / cfg.lambda).exp())
            .collect();
        Ok(self.wrap(values))
    }
}

impl HeDecrypt for ExactBackend {
    fn decrypt(&self, c: &CipherValue) -> Result<Vec<f64>, HeError> {
        Ok(self.values(c)?.clone())
    }
}
