//! Synthesis server: holds only ciphertexts and public evaluation
//! material, executes the encrypted Z-learning update per transition, and
//! converts every level exhaustion into a refresh round trip.
//!
//! The generic bound is the evaluation contract alone — no decryption
//! capability exists on this side, which is the privacy boundary.

use std::collections::BTreeMap;

use crate::he::{encrypted_z_update, CipherValue, ExpApproxConfig, HeBackend};

use super::messages::{
    Envelope, Message, RefreshSlot, SessionMetrics, ABS_MARKER,
};
use super::ProtoError;

/// Error codes carried by `Message::Error`.
pub mod error_codes {
    pub const BAD_CONFIG: u32 = 1;
    pub const UNKNOWN_STATE: u32 = 2;
    pub const PROTOCOL_MISUSE: u32 = 3;
    pub const EVALUATION: u32 = 4;
}

struct PendingUpdate {
    x: u32,
    x_next: u32,
    alpha: f64,
    factor: CipherValue,
}

struct Session {
    id: u64,
    kappa: f64,
    exp_cfg: ExpApproxConfig,
    table: BTreeMap<u32, CipherValue>,
    visits: BTreeMap<u32, u64>,
    pending: Option<PendingUpdate>,
    metrics: SessionMetrics,
    seq_out: u64,
}

pub struct SynthServer<B: HeBackend> {
    backend: B,
    session: Option<Session>,
}

/// Minimum level of each operand of one encrypted update, given whether
/// the successor is a ciphertext entry: `(factor, z_x, z_next)`. The
/// update consumes 2 levels off the minimum in the ciphertext-successor
/// case and 1 otherwise; these floors keep the output level at >= 0.
pub fn update_level_floors(cipher_successor: bool) -> (u32, u32, u32) {
    crate::he::z_update_required_levels(cipher_successor)
}

impl<B: HeBackend> SynthServer<B> {
    pub fn new(backend: B) -> Self {
        SynthServer { backend, session: None }
    }

    pub fn backend(&self) -> &B {
        &self.backend
    }

    pub fn metrics(&self) -> Option<&SessionMetrics> {
        self.session.as_ref().map(|s| &s.metrics)
    }

    fn error(&mut self, session_id: u64, code: u32, detail: String) -> Envelope {
        let seq = self.session.as_mut().map(|s| {
            s.seq_out += 1;
            s.seq_out
        });
        Envelope { session_id, seq: seq.unwrap_or(0), body: Message::Error { code, detail } }
    }

    fn reply(&mut self, body: Message) -> Envelope {
        let s = self.session.as_mut().expect("session exists");
        s.seq_out += 1;
        Envelope { session_id: s.id, seq: s.seq_out, body }
    }

    /// Applies the buffered or immediate update for `(x, x_next, alpha,
    /// factor)`. Caller has verified the level floors.
    fn apply_update(&mut self, p: PendingUpdate) -> Result<(), ProtoError> {
        let session = self.session.as_mut().expect("session exists");
        let z_x = session.table.get(&p.x).expect("checked by caller");
        let z_next = if p.x_next == ABS_MARKER {
            None
        } else {
            Some(session.table.get(&p.x_next).expect("checked by caller"))
        };
        let updated = encrypted_z_update(&self.backend, z_x, z_next, &p.factor, p.alpha)?;
        session.metrics.updates += 1;
        session.metrics.record_level(updated.level);
        session.table.insert(p.x, updated);
        Ok(())
    }

    /// Operands of the pending update currently below their level floor.
    fn deficiencies(&self, p: &PendingUpdate) -> Vec<RefreshSlot> {
        let session = self.session.as_ref().expect("session exists");
        let cipher_successor = p.x_next != ABS_MARKER;
        let (need_f, need_zx, need_zn) = update_level_floors(cipher_successor);
        let mut out = Vec::new();
        if p.factor.level < need_f {
            out.push(RefreshSlot::Factor);
        }
        let zx = session.table.get(&p.x).expect("checked by caller");
        if zx.level < need_zx {
            out.push(RefreshSlot::Entry(p.x));
        }
        if cipher_successor && p.x_next != p.x {
            let zn = session.table.get(&p.x_next).expect("checked by caller");
            if zn.level < need_zn {
                out.push(RefreshSlot::Entry(p.x_next));
            }
        } else if cipher_successor {
            // Self-loop: one entry serves both roles; the stricter floor
            // applies.
            let zx = session.table.get(&p.x).expect("checked by caller");
            if zx.level < need_zn && !out.contains(&RefreshSlot::Entry(p.x)) {
                out.push(RefreshSlot::Entry(p.x));
            }
        }
        out
    }

    pub fn handle(&mut self, env: Envelope) -> Result<Envelope, ProtoError> {
        match env.body {
            Message::SessionInit { profile, exp_cfg, kappa, table } => {
                if &profile != self.backend.profile() {
                    return Ok(self.error(
                        env.session_id,
                        error_codes::BAD_CONFIG,
                        "profile does not match server backend".into(),
                    ));
                }
                let usable = profile.usable_levels();
                if exp_cfg.depth_required() > usable || usable < 2 || !(kappa > 0.0) {
                    return Ok(self.error(
                        env.session_id,
                        error_codes::BAD_CONFIG,
                        format!(
                            "exp depth {} exceeds budget {usable} or bad kappa",
                            exp_cfg.depth_required()
                        ),
                    ));
                }
                self.session = Some(Session {
                    id: env.session_id,
                    kappa,
                    exp_cfg,
                    table: table.into_iter().collect(),
                    visits: BTreeMap::new(),
                    pending: None,
                    metrics: SessionMetrics::default(),
                    seq_out: 0,
                });
                Ok(self.reply(Message::Ack { updates_applied: 0 }))
            }
            Message::Transition { x, x_next, enc_cost, .. } => {
                let Some(session) = self.session.as_mut() else {
                    return Ok(self.error(
                        env.session_id,
                        error_codes::PROTOCOL_MISUSE,
                        "transition before session init".into(),
                    ));
                };
                if session.pending.is_some() {
                    return Ok(self.error(
                        env.session_id,
                        error_codes::PROTOCOL_MISUSE,
                        "transition while a refresh is outstanding".into(),
                    ));
                }
                if !session.table.contains_key(&x)
                    || (x_next != ABS_MARKER && !session.table.contains_key(&x_next))
                {
                    return Ok(self.error(
                        env.session_id,
                        error_codes::UNKNOWN_STATE,
                        format!("unknown state id {x} or {x_next}"),
                    ));
                }
                // Count-based step size, computed in plaintext.
                let n = *session.visits.get(&x).unwrap_or(&0);
                let alpha = session.kappa / (session.kappa + n as f64);
                session.visits.insert(x, n + 1);
                let exp_cfg = session.exp_cfg.clone();
                let factor = match self.backend.exp_neg_scaled(&enc_cost, &exp_cfg) {
                    Ok(f) => f,
                    Err(e) => {
                        return Ok(self.error(
                            env.session_id,
                            error_codes::EVALUATION,
                            e.to_string(),
                        ))
                    }
                };
                let pending = PendingUpdate { x, x_next, alpha, factor };
                let needs = self.deficiencies(&pending);
                if needs.is_empty() {
                    self.apply_update(pending)?;
                    let applied = self.session.as_ref().unwrap().metrics.updates;
                    Ok(self.reply(Message::Ack { updates_applied: applied }))
                } else {
                    let session = self.session.as_mut().unwrap();
                    let items: Vec<(RefreshSlot, CipherValue)> = needs
                        .iter()
                        .map(|slot| {
                            let cv = match slot {
                                RefreshSlot::Entry(s) => session.table[s].clone(),
                                RefreshSlot::Factor => pending.factor.clone(),
                            };
                            (*slot, cv)
                        })
                        .collect();
                    session.pending = Some(pending);
                    session.metrics.refreshes += 1;
                    Ok(self.reply(Message::RefreshRequest { items }))
                }
            }
            Message::RefreshResponse { items } => {
                let Some(session) = self.session.as_mut() else {
                    return Ok(self.error(
                        env.session_id,
                        error_codes::PROTOCOL_MISUSE,
                        "refresh response before session init".into(),
                    ));
                };
                let Some(mut pending) = session.pending.take() else {
                    return Ok(self.error(
                        env.session_id,
                        error_codes::PROTOCOL_MISUSE,
                        "unsolicited refresh response".into(),
                    ));
                };
                for (slot, cv) in items {
                    match slot {
                        RefreshSlot::Entry(s) => {
                            if !session.table.contains_key(&s) {
                                return Ok(self.error(
                                    env.session_id,
                                    error_codes::UNKNOWN_STATE,
                                    format!("refresh of unknown state {s}"),
                                ));
                            }
                            session.table.insert(s, cv);
                        }
                        RefreshSlot::Factor => pending.factor = cv,
                    }
                }
                // Post-refresh operands are at full level; the deferred
                // update must now apply.
                let still = self.deficiencies(&pending);
                if !still.is_empty() {
                    return Ok(self.error(
                        env.session_id,
                        error_codes::EVALUATION,
                        "refresh response left operands below level floor".into(),
                    ));
                }
                self.apply_update(pending)?;
                let applied = self.session.as_ref().unwrap().metrics.updates;
                Ok(self.reply(Message::Ack { updates_applied: applied }))
            }
            Message::TableRequest => {
                let Some(session) = self.session.as_ref() else {
                    return Ok(self.error(
                        env.session_id,
                        error_codes::PROTOCOL_MISUSE,
                        "table request before session init".into(),
                    ));
                };
                let table: Vec<(u32, CipherValue)> =
                    session.table.iter().map(|(&s, cv)| (s, cv.clone())).collect();
                let metrics = session.metrics.clone();
                Ok(self.reply(Message::FinalTable { table, metrics }))
            }
            Message::RefreshRequest { .. }
            | Message::FinalTable { .. }
            | Message::Ack { .. }
            | Message::Error { .. } => Ok(self.error(
                env.session_id,
                error_codes::PROTOCOL_MISUSE,
                "client sent a server-only message".into(),
            )),
        }
    }
}

/// Drives a server over a transport until the peer closes or a fatal error
/// occurs. Byte counts accrue to the session metrics.
pub fn serve<B: HeBackend, T: super::Transport>(
    server: &mut SynthServer<B>,
    transport: &mut T,
) -> Result<(), ProtoError> {
    loop {
        let bytes = match transport.recv() {
            Ok(b) => b,
            Err(ProtoError::Closed) => return Ok(()),
            Err(e) => return Err(e),
        };
        let in_len = bytes.len() as u64;
        let env = match Envelope::from_bytes(&bytes) {
            Ok(env) => env,
            Err(e) => {
                // Malformed frame: structured error back, session keeps going.
                let reply = Envelope {
                    session_id: 0,
                    seq: 0,
                    body: Message::Error {
                        code: error_codes::PROTOCOL_MISUSE,
                        detail: e.to_string(),
                    },
                };
                transport.send(&reply.to_bytes())?;
                continue;
            }
        };
        let reply = server.handle(env)?;
        let out = reply.to_bytes();
        if let Some(s) = server.session.as_mut() {
            s.metrics.bytes_in += in_len;
            s.metrics.bytes_out += out.len() as u64;
        }
        transport.send(&out)?;
    }
}
