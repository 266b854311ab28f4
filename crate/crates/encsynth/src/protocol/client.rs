//! Session client: simulates episodes under the behavior policy, streams
//! encrypted transitions, answers refresh requests with its secret key,
//! and decrypts the final table. Episode generation consumes randomness in
//! exactly the order of the plaintext learner, so an exact backend yields
//! a bit-identical table.

use rand_chacha::ChaCha8Rng;

use crate::he::{CipherValue, ExpApproxConfig, HeBackend, HeDecrypt};
use crate::mdp::random_spawn;
use crate::re_rl::{boltzmann_policy, DesirabilityTable, ReProblem};

use super::messages::{Envelope, Message, RefreshSlot, SessionMetrics, ABS_MARKER};
use super::{ProtoError, Transport};

/// Decrypted Z entries below this are clamped before table construction
/// and policy extraction: approximate decryption can leave tiny negatives.
pub const POSITIVITY_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct SessionConfig {
    pub episodes: usize,
    pub max_steps: usize,
    pub seed: u64,
    pub kappa: f64,
    pub session_id: u64,
}

pub struct SessionOutcome {
    pub table: DesirabilityTable,
    pub metrics: SessionMetrics,
    /// Message bodies in conversation order (sent and received), for
    /// transcript-determinism checks.
    pub transcript: Vec<Vec<u8>>,
}

struct ClientEndpoint<'a, B, D, T>
where
    B: HeBackend,
    D: HeDecrypt,
    T: Transport,
{
    backend: &'a B,
    decryptor: &'a D,
    transport: &'a mut T,
    session_id: u64,
    seq: u64,
    transcript: Vec<Vec<u8>>,
}

impl<'a, B: HeBackend, D: HeDecrypt, T: Transport> ClientEndpoint<'a, B, D, T> {
    fn send(&mut self, body: Message) -> Result<(), ProtoError> {
        self.seq += 1;
        let bytes = Envelope { session_id: self.session_id, seq: self.seq, body }.to_bytes();
        self.transcript.push(bytes.clone());
        self.transport.send(&bytes)
    }

    fn recv(&mut self) -> Result<Message, ProtoError> {
        let bytes = self.transport.recv()?;
        let env = Envelope::from_bytes(&bytes)?;
        self.transcript.push(bytes);
        if env.session_id != self.session_id {
            return Err(ProtoError::Session {
                code: 0,
                detail: format!("session id mismatch: {}", env.session_id),
            });
        }
        if let Message::Error { code, detail } = env.body {
            return Err(ProtoError::Session { code, detail });
        }
        Ok(env.body)
    }

    /// Sends one message and services any refresh round trips until the
    /// server acknowledges.
    fn exchange_until_ack(&mut self, body: Message) -> Result<(), ProtoError> {
        self.send(body)?;
        loop {
            match self.recv()? {
                Message::Ack { .. } => return Ok(()),
                Message::RefreshRequest { items } => {
                    let refreshed: Result<Vec<(RefreshSlot, CipherValue)>, ProtoError> = items
                        .iter()
                        .map(|(slot, cv)| {
                            let values = self.decryptor.decrypt(cv)?;
                            let fresh = self.backend.encrypt(&[values[0].max(POSITIVITY_FLOOR)])?;
                            Ok((*slot, fresh))
                        })
                        .collect();
                    self.send(Message::RefreshResponse { items: refreshed? })?;
                }
                other => {
                    return Err(ProtoError::Session {
                        code: 0,
                        detail: format!("unexpected server message {other:?}"),
                    })
                }
            }
        }
    }

    fn fetch_table(&mut self, num_states: usize) -> Result<(DesirabilityTable, SessionMetrics), ProtoError> {
        self.send(Message::TableRequest)?;
        match self.recv()? {
            Message::FinalTable { table, metrics } => {
                let mut z = DesirabilityTable::ones(num_states);
                for (state, cv) in &table {
                    let v = self.decryptor.decrypt_scalar(cv)?;
                    z.z[*state as usize] = v.max(POSITIVITY_FLOOR);
                }
                Ok((z, metrics))
            }
            other => Err(ProtoError::Session {
                code: 0,
                detail: format!("expected final table, got {other:?}"),
            }),
        }
    }
}

/// Runs a full synthesis session over the transport. The server end must
/// be getting driven concurrently (see [`super::serve`]).
///
/// `on_episode` is invoked with the decrypted table at the end of every
/// episode (each call costs a table round trip); pass `None` to fetch the
/// table only once at the end.
pub fn run_session<B, D, T>(
    problem: &ReProblem,
    exp_cfg: &ExpApproxConfig,
    cfg: &SessionConfig,
    backend: &B,
    decryptor: &D,
    transport: &mut T,
    mut on_episode: Option<&mut dyn FnMut(usize, &DesirabilityTable)>,
) -> Result<SessionOutcome, ProtoError>
where
    B: HeBackend,
    D: HeDecrypt,
    T: Transport,
{
    use rand::SeedableRng;
    let mdp = &problem.mdp;
    let num_states = mdp.num_states;
    let mut endpoint = ClientEndpoint {
        backend,
        decryptor,
        transport,
        session_id: cfg.session_id,
        seq: 0,
        transcript: Vec::new(),
    };

    // Initial table: Z = 1 on every non-absorbing state, client-encrypted.
    let table: Result<Vec<(u32, CipherValue)>, ProtoError> = (0..num_states)
        .filter(|&x| !mdp.is_absorbing(x))
        .map(|x| Ok((x as u32, backend.encrypt_scalar(1.0)?)))
        .collect();
    endpoint.exchange_until_ack(Message::SessionInit {
        profile: backend.profile().clone(),
        exp_cfg: exp_cfg.clone(),
        kappa: cfg.kappa,
        table: table?,
    })?;

    // Episode stream: identical rng consumption to the plaintext learner.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for episode in 1..=cfg.episodes {
        let mut x = random_spawn(mdp, &mut rng);
        let mut step = 0u32;
        while step < cfg.max_steps as u32 {
            let u = problem.behavior.sample(x, &mut rng);
            let cost = mdp.cost[x][u];
            let x_next = mdp.next_state(x, u);
            let marker = if mdp.is_absorbing(x_next) { ABS_MARKER } else { x_next as u32 };
            let enc_cost = endpoint.backend.encrypt_scalar(cost)?;
            endpoint.exchange_until_ack(Message::Transition {
                episode: episode as u32,
                step,
                x: x as u32,
                x_next: marker,
                enc_cost,
            })?;
            step += 1;
            if marker == ABS_MARKER {
                break;
            }
            x = x_next;
        }
        if let Some(observer) = on_episode.as_deref_mut() {
            let (z, _) = endpoint.fetch_table(num_states)?;
            observer(episode, &z);
        }
    }

    let (table, metrics) = endpoint.fetch_table(num_states)?;
    Ok(SessionOutcome { table, metrics, transcript: endpoint.transcript })
}

/// Boltzmann policy extraction from a decrypted table, with the positivity
/// clamp applied first.
pub fn extract_policy_at_client(
    z: &DesirabilityTable,
    problem: &ReProblem,
) -> Result<crate::mdp::StochasticPolicy, crate::re_rl::ReError> {
    let mut clamped = z.clone();
    for v in clamped.z.iter_mut() {
        if *v < POSITIVITY_FLOOR {
            *v = POSITIVITY_FLOOR;
        }
    }
    boltzmann_policy(problem, &clamped)
}
