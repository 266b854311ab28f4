//! Wire messages for the synthesis session and their hand-rolled binary
//! codec. Bodies are: 1-byte variant tag, 8-byte session id, 8-byte
//! sequence number, then variant payload (little-endian integers,
//! ciphertexts in their own framed format). Round trips are bit-exact.

use crate::he::{CipherValue, ExpApproxConfig, ExpMethod, HeProfile};

use super::ProtoError;

/// Plaintext successor marker for transitions into an absorbing state.
pub const ABS_MARKER: u32 = u32::MAX;

/// What a refresh item re-encrypts: a Z-table entry for a state, or the
/// pending transition's exponential factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefreshSlot {
    Entry(u32),
    Factor,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SessionMetrics {
    pub updates: u64,
    pub refreshes: u64,
    pub bytes_in: u64,
    pub bytes_out: u64,
    /// Histogram of applied-update output levels: `level_counts[l]` is the
    /// number of table updates whose result landed at level `l`. The entries
    /// sum to `updates`.
    pub level_counts: Vec<u64>,
}

impl SessionMetrics {
    /// Records one applied update's output level.
    pub fn record_level(&mut self, level: u32) {
        let idx = level as usize;
        if self.level_counts.len() <= idx {
            self.level_counts.resize(idx + 1, 0);
        }
        self.level_counts[idx] += 1;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    SessionInit {
        profile: HeProfile,
        exp_cfg: ExpApproxConfig,
        kappa: f64,
        /// Client-encrypted initial Z-table, one entry per non-absorbing
        /// state.
        table: Vec<(u32, CipherValue)>,
    },
    Transition {
        episode: u32,
        step: u32,
        x: u32,
        /// Successor state id, or [`ABS_MARKER`] when absorbing.
        x_next: u32,
        enc_cost: CipherValue,
    },
    RefreshRequest {
        items: Vec<(RefreshSlot, CipherValue)>,
    },
    RefreshResponse {
        items: Vec<(RefreshSlot, CipherValue)>,
    },
    TableRequest,
    FinalTable {
        table: Vec<(u32, CipherValue)>,
        metrics: SessionMetrics,
    },
    Error {
        code: u32,
        detail: String,
    },
    /// Server acknowledgment of an applied (or buffered-then-applied)
    /// message; keeps the conversation strictly request-response.
    Ack {
        updates_applied: u64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub session_id: u64,
    pub seq: u64,
    pub body: Message,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn bytes(&mut self, b: &[u8]) {
        self.0.extend_from_slice(b);
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.bytes(s.as_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    off: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ProtoError> {
        if self.buf.len() < self.off + n {
            return Err(ProtoError::Malformed {
                offset: self.off,
                detail: format!("need {n} more bytes"),
            });
        }
        let out = &self.buf[self.off..self.off + n];
        self.off += n;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8, ProtoError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, ProtoError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, ProtoError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, ProtoError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn str(&mut self) -> Result<String, ProtoError> {
        let len = self.u32()? as usize;
        let off = self.off;
        String::from_utf8(self.take(len)?.to_vec()).map_err(|_| ProtoError::Malformed {
            offset: off,
            detail: "invalid utf-8".into(),
        })
    }
    fn cipher(&mut self) -> Result<CipherValue, ProtoError> {
        let off = self.off;
        let (cv, used) = CipherValue::from_bytes(&self.buf[self.off..]).map_err(|e| {
            ProtoError::Malformed { offset: off, detail: e.to_string() }
        })?;
        self.off += used;
        Ok(cv)
    }
}

fn write_profile(w: &mut Writer, p: &HeProfile) {
    w.u64(p.ring_dimension as u64);
    w.u32(p.chain_bits.len() as u32);
    for &b in &p.chain_bits {
        w.u32(b);
    }
    w.u32(p.log2_scale);
}

fn read_profile(r: &mut Reader) -> Result<HeProfile, ProtoError> {
    let ring_dimension = r.u64()? as usize;
    let n = r.u32()? as usize;
    if n > 64 {
        return Err(ProtoError::Malformed {
            offset: r.off,
            detail: format!("implausible chain length {n}"),
        });
    }
    let chain_bits = (0..n).map(|_| r.u32()).collect::<Result<_, _>>()?;
    Ok(HeProfile { ring_dimension, chain_bits, log2_scale: r.u32()? })
}

fn write_exp_cfg(w: &mut Writer, c: &ExpApproxConfig) {
    w.u8(match c.method {
        ExpMethod::TaylorAtZero => 0,
        ExpMethod::ChebyshevOnDomain => 1,
    });
    w.u32(c.degree as u32);
    w.f64(c.c_max);
    w.f64(c.lambda);
    w.u32(c.squarings);
    w.u32(c.coeffs.len() as u32);
    for &coef in &c.coeffs {
        w.f64(coef);
    }
    w.f64(c.eps_approx);
}

fn read_exp_cfg(r: &mut Reader) -> Result<ExpApproxConfig, ProtoError> {
    let method = match r.u8()? {
        0 => ExpMethod::TaylorAtZero,
        1 => ExpMethod::ChebyshevOnDomain,
        t => {
            return Err(ProtoError::Malformed {
                offset: r.off - 1,
                detail: format!("unknown exp method {t}"),
            })
        }
    };
    let degree = r.u32()? as usize;
    let c_max = r.f64()?;
    let lambda = r.f64()?;
    let squarings = r.u32()?;
    let ncoef = r.u32()? as usize;
    if ncoef > 1024 {
        return Err(ProtoError::Malformed {
            offset: r.off,
            detail: format!("implausible coefficient count {ncoef}"),
        });
    }
    let coeffs = (0..ncoef).map(|_| r.f64()).collect::<Result<_, _>>()?;
    Ok(ExpApproxConfig { method, degree, c_max, lambda, squarings, coeffs, eps_approx: r.f64()? })
}

fn write_table(w: &mut Writer, table: &[(u32, CipherValue)]) {
    w.u32(table.len() as u32);
    for (state, cv) in table {
        w.u32(*state);
        w.bytes(&cv.to_bytes());
    }
}

fn read_table(r: &mut Reader) -> Result<Vec<(u32, CipherValue)>, ProtoError> {
    let n = r.u32()? as usize;
    if n > 1 << 20 {
        return Err(ProtoError::Malformed {
            offset: r.off,
            detail: format!("implausible table size {n}"),
        });
    }
    (0..n).map(|_| Ok((r.u32()?, r.cipher()?))).collect()
}

fn write_refresh_items(w: &mut Writer, items: &[(RefreshSlot, CipherValue)]) {
    w.u32(items.len() as u32);
    for (slot, cv) in items {
        match slot {
            RefreshSlot::Entry(state) => {
                w.u8(0);
                w.u32(*state);
            }
            RefreshSlot::Factor => w.u8(1),
        }
        w.bytes(&cv.to_bytes());
    }
}

fn read_refresh_items(r: &mut Reader) -> Result<Vec<(RefreshSlot, CipherValue)>, ProtoError> {
    let n = r.u32()? as usize;
    if n > 1 << 20 {
        return Err(ProtoError::Malformed {
            offset: r.off,
            detail: format!("implausible refresh batch {n}"),
        });
    }
    let mut items = Vec::with_capacity(n);
    for _ in 0..n {
        let slot = match r.u8()? {
            0 => RefreshSlot::Entry(r.u32()?),
            1 => RefreshSlot::Factor,
            t => {
                return Err(ProtoError::Malformed {
                    offset: r.off - 1,
                    detail: format!("unknown refresh slot kind {t}"),
                })
            }
        };
        items.push((slot, r.cipher()?));
    }
    Ok(items)
}

fn write_metrics(w: &mut Writer, m: &SessionMetrics) {
    w.u64(m.updates);
    w.u64(m.refreshes);
    w.u64(m.bytes_in);
    w.u64(m.bytes_out);
    w.u32(m.level_counts.len() as u32);
    for &d in &m.level_counts {
        w.u64(d);
    }
}

fn read_metrics(r: &mut Reader) -> Result<SessionMetrics, ProtoError> {
    let updates = r.u64()?;
    let refreshes = r.u64()?;
    let bytes_in = r.u64()?;
    let bytes_out = r.u64()?;
    let n = r.u32()? as usize;
    if n > 1 << 16 {
        return Err(ProtoError::Malformed {
            offset: r.off,
            detail: format!("implausible level histogram length {n}"),
        });
    }
    let level_counts = (0..n).map(|_| r.u64()).collect::<Result<_, _>>()?;
    Ok(SessionMetrics { updates, refreshes, bytes_in, bytes_out, level_counts })
}

impl Message {
    fn tag(&self) -> u8 {
        match self {
            Message::SessionInit { .. } => 0,
            Message::Transition { .. } => 1,
            Message::RefreshRequest { .. } => 2,
            Message::RefreshResponse { .. } => 3,
            Message::TableRequest => 4,
            Message::FinalTable { .. } => 5,
            Message::Error { .. } => 6,
            Message::Ack { .. } => 7,
        }
    }
}

impl Envelope {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.u8(self.body.tag());
        w.u64(self.session_id);
        w.u64(self.seq);
        match &self.body {
            Message::SessionInit { profile, exp_cfg, kappa, table } => {
                write_profile(&mut w, profile);
                write_exp_cfg(&mut w, exp_cfg);
                w.f64(*kappa);
                write_table(&mut w, table);
            }
            Message::Transition { episode, step, x, x_next, enc_cost } => {
                w.u32(*episode);
                w.u32(*step);
                w.u32(*x);
                w.u32(*x_next);
                w.bytes(&enc_cost.to_bytes());
            }
            Message::RefreshRequest { items } => write_refresh_items(&mut w, items),
            Message::RefreshResponse { items } => write_refresh_items(&mut w, items),
            Message::TableRequest => {}
            Message::FinalTable { table, metrics } => {
                write_table(&mut w, table);
                write_metrics(&mut w, metrics);
            }
            Message::Error { code, detail } => {
                w.u32(*code);
                w.str(detail);
            }
            Message::Ack { updates_applied } => w.u64(*updates_applied),
        }
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Envelope, ProtoError> {
        let mut r = Reader { buf: bytes, off: 0 };
        let tag = r.u8()?;
        let session_id = r.u64()?;
        let seq = r.u64()?;
        let body = match tag {
            0 => Message::SessionInit {
                profile: read_profile(&mut r)?,
                exp_cfg: read_exp_cfg(&mut r)?,
                kappa: r.f64()?,
                table: read_table(&mut r)?,
            },
            1 => Message::Transition {
                episode: r.u32()?,
                step: r.u32()?,
                x: r.u32()?,
                x_next: r.u32()?,
                enc_cost: r.cipher()?,
            },
            2 => Message::RefreshRequest { items: read_refresh_items(&mut r)? },
            3 => Message::RefreshResponse { items: read_refresh_items(&mut r)? },
            4 => Message::TableRequest,
            5 => Message::FinalTable {
                table: read_table(&mut r)?,
                metrics: read_metrics(&mut r)?,
            },
            6 => Message::Error { code: r.u32()?, detail: r.str()? },
            7 => Message::Ack { updates_applied: r.u64()? },
            t => {
                return Err(ProtoError::Malformed {
                    offset: 0,
                    detail: format!("unknown message tag {t}"),
                })
            }
        };
        if r.off != bytes.len() {
            return Err(ProtoError::Malformed {
                offset: r.off,
                detail: format!("{} trailing bytes", bytes.len() - r.off),
            });
        }
        Ok(Envelope { session_id, seq, body })
    }
}
