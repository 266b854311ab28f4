//! Session protocol tests: codec exactness, transport equivalence,
//! refresh behavior, and encrypted-vs-plaintext learner agreement.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use encsynth::generic_rl::StepSizeSchedule;
use encsynth::he::{
    BackendKind, CipherValue, EmulatorBackend, ExactBackend, ExpApproxConfig, HeProfile,
    NoiseModel, Payload,
};
use encsynth::mdp::{build_grid_world, uniform_behavior, GridWorldSpec};
use encsynth::protocol::{
    extract_policy_at_client, run_session, serve, Envelope, InProcessTransport, Message,
    ProtoError, RefreshSlot, SessionConfig, SessionMetrics, SynthServer, TcpTransport, ABS_MARKER,
};
use encsynth::re_rl::{z_learning_run, DesirabilityTable, ReProblem};

fn plain_cipher(values: &[f64]) -> CipherValue {
    CipherValue {
        payload: Payload::Plain(values.to_vec()),
        scale: (40.0f64).exp2(),
        level: 4,
        kind: BackendKind::Emulator,
    }
}

fn sample_messages() -> Vec<Message> {
    let profile = HeProfile::standard();
    let exp_cfg = ExpApproxConfig::default_for(0.1, 0.15).unwrap();
    vec![
        Message::SessionInit {
            profile,
            exp_cfg,
            kappa: 1000.0,
            table: vec![(0, plain_cipher(&[1.0])), (3, plain_cipher(&[1.0]))],
        },
        Message::SessionInit {
            profile: HeProfile::test_small(),
            exp_cfg: ExpApproxConfig::default_for(1.0, 0.5).unwrap(),
            kappa: 1.0,
            table: vec![],
        },
        Message::Transition {
            episode: 7,
            step: 3,
            x: 2,
            x_next: ABS_MARKER,
            enc_cost: plain_cipher(&[0.1]),
        },
        Message::RefreshRequest {
            items: vec![
                (RefreshSlot::Entry(5), plain_cipher(&[0.25])),
                (RefreshSlot::Factor, plain_cipher(&[0.9])),
            ],
        },
        Message::RefreshRequest { items: vec![] },
        Message::RefreshResponse { items: vec![(RefreshSlot::Factor, plain_cipher(&[0.9]))] },
        Message::TableRequest,
        Message::FinalTable {
            table: vec![(1, plain_cipher(&[0.5]))],
            metrics: SessionMetrics {
                updates: 10,
                refreshes: 2,
                bytes_in: 123,
                bytes_out: 456,
                level_counts: vec![2, 1, 0],
            },
        },
        Message::FinalTable { table: vec![], metrics: SessionMetrics::default() },
        Message::Error { code: 3, detail: "boom".into() },
        Message::Ack { updates_applied: 99 },
    ]
}

#[test]
fn message_round_trip_bit_exact() {
    for (i, body) in sample_messages().into_iter().enumerate() {
        let env = Envelope { session_id: 0xDEADBEEF + i as u64, seq: i as u64, body };
        let bytes = env.to_bytes();
        let back = Envelope::from_bytes(&bytes).unwrap_or_else(|e| panic!("variant {i}: {e}"));
        assert_eq!(back, env, "variant {i}");
        assert_eq!(back.to_bytes(), bytes, "variant {i} re-serialization");
    }
}

#[test]
fn truncated_and_corrupt_frames_fail_cleanly() {
    for body in sample_messages() {
        let env = Envelope { session_id: 1, seq: 1, body };
        let bytes = env.to_bytes();
        for cut in [0, 1, 5, bytes.len() / 2, bytes.len().saturating_sub(1)] {
            if cut < bytes.len() {
                match Envelope::from_bytes(&bytes[..cut]) {
                    Err(ProtoError::Malformed { .. }) => {}
                    Ok(_) if cut == 0 => panic!("empty frame parsed"),
                    other => panic!("cut {cut}: expected malformed, got {other:?}"),
                }
            }
        }
        // Unknown tag byte.
        let mut bad = bytes.clone();
        bad[0] = 200;
        assert!(Envelope::from_bytes(&bad).is_err());
        // Trailing garbage is rejected, not ignored.
        let mut long = bytes.clone();
        long.push(0);
        assert!(Envelope::from_bytes(&long).is_err());
    }
}

#[test]
fn random_transitions_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..1000 {
        let n = rng.random_range(1..4);
        let values: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
        let env = Envelope {
            session_id: rng.random(),
            seq: rng.random(),
            body: Message::Transition {
                episode: rng.random(),
                step: rng.random(),
                x: rng.random(),
                x_next: if rng.random_bool(0.3) { ABS_MARKER } else { rng.random() },
                enc_cost: CipherValue {
                    payload: Payload::Plain(values),
                    scale: (40.0f64).exp2(),
                    level: rng.random_range(0..5),
                    kind: BackendKind::Emulator,
                },
            },
        };
        let bytes = env.to_bytes();
        let back = Envelope::from_bytes(&bytes).unwrap();
        assert_eq!(back, env);
        assert_eq!(back.to_bytes(), bytes);
    }
}

fn three_by_three() -> ReProblem {
    let spec = GridWorldSpec {
        width: 3,
        height: 3,
        traps: Default::default(),
        goal: (2, 2),
        step_cost: 0.1,
    };
    let world = build_grid_world(&spec).unwrap();
    let behavior = uniform_behavior(&world.mdp);
    ReProblem::new(world.mdp, behavior, 0.15).unwrap()
}

fn session_config(seed: u64, episodes: usize) -> SessionConfig {
    SessionConfig { episodes, max_steps: 200, seed, kappa: 1000.0, session_id: 0xA5A5 }
}

/// Runs client and server over an in-process transport pair.
fn run_in_process<B>(
    problem: &ReProblem,
    exp_cfg: &ExpApproxConfig,
    cfg: &SessionConfig,
    backend: Arc<B>,
    decryptor: &(impl encsynth::he::HeDecrypt + Sync),
) -> (encsynth::protocol::SessionOutcome, SessionMetrics)
where
    B: encsynth::he::HeBackend + Send + Sync + 'static,
{
    let (mut client_end, mut server_end) = InProcessTransport::pair();
    let server_backend = backend.clone();
    let handle = std::thread::spawn(move || {
        let mut server = SynthServer::new(server_backend);
        serve(&mut server, &mut server_end).unwrap();
        server.metrics().cloned().unwrap_or_default()
    });
    let outcome =
        run_session(problem, exp_cfg, cfg, &backend, decryptor, &mut client_end, None).unwrap();
    drop(client_end);
    let server_metrics = handle.join().unwrap();
    (outcome, server_metrics)
}

#[test]
fn exact_backend_session_is_bit_identical_to_plaintext() {
    let problem = three_by_three();
    let exp_cfg = ExpApproxConfig::default_for(0.1, problem.lambda).unwrap();
    let backend = Arc::new(ExactBackend::new(HeProfile::standard()).unwrap());
    let cfg = session_config(7, 60);
    let (outcome, _) = run_in_process(&problem, &exp_cfg, &cfg, backend.clone(), &*backend);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let plain = z_learning_run(
        &problem,
        &StepSizeSchedule { kappa: cfg.kappa },
        cfg.episodes,
        cfg.max_steps,
        &mut rng,
        &[],
    );
    assert_eq!(outcome.table.z, plain.table.z, "exact backend must match bit for bit");
}

#[test]
fn emulator_session_tracks_plaintext_one_state() {
    // Single interior state feeding an absorbing goal.
    let spec = GridWorldSpec {
        width: 2,
        height: 1,
        traps: Default::default(),
        goal: (0, 1),
        step_cost: 0.1,
    };
    let world = build_grid_world(&spec).unwrap();
    let behavior = uniform_behavior(&world.mdp);
    let problem = ReProblem::new(world.mdp, behavior, 0.15).unwrap();
    let exp_cfg = ExpApproxConfig::default_for(0.1, problem.lambda).unwrap();
    let backend = Arc::new(
        EmulatorBackend::new(HeProfile::standard(), NoiseModel::default(), 5).unwrap(),
    );
    let cfg = session_config(11, 100);
    let (outcome, _) = run_in_process(&problem, &exp_cfg, &cfg, backend.clone(), &*backend);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let plain = z_learning_run(
        &problem,
        &StepSizeSchedule { kappa: cfg.kappa },
        cfg.episodes,
        cfg.max_steps,
        &mut rng,
        &[],
    );
    for x in 0..problem.mdp.num_states {
        assert!(
            (outcome.table.z[x] - plain.table.z[x]).abs() < 1e-4,
            "state {x}: {} vs {}",
            outcome.table.z[x],
            plain.table.z[x]
        );
    }
}

#[test]
fn refreshes_cover_every_exhaustion_and_sessions_complete() {
    // Under the reference chain the exponential burns the whole budget, so
    // every ciphertext-successor transition needs refreshing; the session
    // must still run to completion with exactly one request per shortfall.
    let problem = three_by_three();
    let exp_cfg = ExpApproxConfig::default_for(0.1, problem.lambda).unwrap();
    let backend = Arc::new(
        EmulatorBackend::new(HeProfile::standard(), NoiseModel::default(), 6).unwrap(),
    );
    let cfg = session_config(13, 40);
    let (outcome, server_metrics) =
        run_in_process(&problem, &exp_cfg, &cfg, backend.clone(), &*backend);
    assert!(server_metrics.refreshes > 0, "reference chain must force refreshes");
    assert_eq!(outcome.metrics.updates as usize, count_transitions(&problem, &cfg));
    // One RefreshRequest per refresh, one RefreshResponse per request.
    let mut requests = 0u64;
    let mut responses = 0u64;
    for bytes in &outcome.transcript {
        match Envelope::from_bytes(bytes).unwrap().body {
            Message::RefreshRequest { .. } => requests += 1,
            Message::RefreshResponse { .. } => responses += 1,
            _ => {}
        }
    }
    assert_eq!(requests, server_metrics.refreshes);
    assert_eq!(requests, responses);
    // Every applied update left a non-negative output level.
    assert_eq!(server_metrics.level_counts.iter().sum::<u64>(), server_metrics.updates);
}

fn count_transitions(problem: &ReProblem, cfg: &SessionConfig) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    z_learning_run(
        problem,
        &StepSizeSchedule { kappa: cfg.kappa },
        cfg.episodes,
        cfg.max_steps,
        &mut rng,
        &[],
    )
    .transitions
}

#[test]
fn transports_yield_identical_transcripts() {
    let problem = three_by_three();
    let exp_cfg = ExpApproxConfig::default_for(0.1, problem.lambda).unwrap();
    let cfg = session_config(17, 10);

    let backend = Arc::new(
        EmulatorBackend::new(HeProfile::standard(), NoiseModel::default(), 21).unwrap(),
    );
    let (in_proc, _) = run_in_process(&problem, &exp_cfg, &cfg, backend.clone(), &*backend);

    // Same seeds over a TCP socket.
    let backend = Arc::new(
        EmulatorBackend::new(HeProfile::standard(), NoiseModel::default(), 21).unwrap(),
    );
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let server_backend = backend.clone();
    let handle = std::thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        let mut transport = TcpTransport::new(stream);
        let mut server = SynthServer::new(server_backend);
        serve(&mut server, &mut transport).unwrap();
    });
    let mut transport = TcpTransport::new(std::net::TcpStream::connect(addr).unwrap());
    let socket_outcome =
        run_session(&problem, &exp_cfg, &cfg, &backend, &*backend, &mut transport, None).unwrap();
    drop(transport);
    handle.join().unwrap();

    assert_eq!(in_proc.transcript, socket_outcome.transcript);
    assert_eq!(in_proc.table.z, socket_outcome.table.z);
}

#[test]
fn server_rejects_malformed_and_out_of_order_messages() {
    let backend = EmulatorBackend::new(HeProfile::standard(), NoiseModel::default(), 9).unwrap();
    let mut server = SynthServer::new(backend);
    // Transition before init.
    let env = Envelope {
        session_id: 1,
        seq: 1,
        body: Message::Transition {
            episode: 0,
            step: 0,
            x: 0,
            x_next: ABS_MARKER,
            enc_cost: plain_cipher(&[0.1]),
        },
    };
    match server.handle(env).unwrap().body {
        Message::Error { .. } => {}
        other => panic!("expected error, got {other:?}"),
    }
    // Unsolicited refresh response.
    let env = Envelope { session_id: 1, seq: 2, body: Message::RefreshResponse { items: vec![] } };
    match server.handle(env).unwrap().body {
        Message::Error { .. } => {}
        other => panic!("expected error, got {other:?}"),
    }
}

#[test]
fn policy_extraction_clamps_and_reduces_to_behavior() {
    let problem = three_by_three();
    // Uniform desirability reproduces the behavior policy.
    let z = DesirabilityTable::ones(problem.mdp.num_states);
    let pi = extract_policy_at_client(&z, &problem).unwrap();
    for x in 0..problem.mdp.num_states {
        if !problem.mdp.is_absorbing(x) {
            assert_eq!(pi.probs[x], problem.behavior.probs[x], "state {x}");
        }
    }
    // A noise-corrupted negative entry is clamped, not fatal.
    let mut z = DesirabilityTable::ones(problem.mdp.num_states);
    z.z[0] = -1e-9;
    extract_policy_at_client(&z, &problem).unwrap();
}
