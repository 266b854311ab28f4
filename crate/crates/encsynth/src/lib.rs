//! # encsynth
//!
//! Encrypted policy synthesis for linearly solvable Markov decision
//! processes: a client streams encrypted transition costs to a server,
//! the server runs a desirability-function (Z-learning) update entirely
//! under approximate leveled homomorphic encryption, and only the client
//! can decrypt the learned table.
//!
//! The crate is organized to keep three concerns apart:
//!
//! - **Control.** [`mdp`] holds tabular MDPs and grid worlds; [`re_rl`]
//!   holds the relative-entropy-regularized formulation, the linear
//!   desirability system, its two independent solvers, the plaintext
//!   Z-learning reference, and a path-integral estimator. [`generic_rl`]
//!   provides classical baselines (value iteration, Q-learning,
//!   Monte-Carlo ES) for comparison.
//! - **Arithmetic.** [`he`] defines the backend contract
//!   ([`he::HeBackend`]) for leveled ciphertext arithmetic — add,
//!   multiply, rescale, level bookkeeping — plus polynomial evaluation
//!   and a certified polynomial approximation of `exp(-c/lambda)`.
//!   Decryption lives in a separate trait ([`he::HeDecrypt`]) so that
//!   server-side code cannot even name it. Backends: an exact oracle, a
//!   calibrated noise emulator, and a toy RLWE instantiation in [`rlwe`]
//!   (no security claim; arithmetic-faithful).
//! - **Protocol.** [`protocol`] frames the client/server session: a
//!   length-prefixed binary codec, in-process and TCP transports, the
//!   client driver, and a server that applies encrypted updates and asks
//!   the client to re-encrypt ciphertexts whose multiplicative depth is
//!   spent.
//!
//! [`experiment`] ties everything together for the `encsynth` binary:
//! deterministic, seeded runs that emit CSV/JSON artifacts.
//!
//! The companion mdBook under `book/` walks through the same material
//! chapter by chapter; every snippet there is mirrored by a doc-test
//! below or in the module docs.
//!
//! ## Quickstart: solve a maze exactly, then learn it
//!
//! ```rust
//! use encsynth::mdp::{build_grid_world, uniform_behavior, GridWorldSpec};
//! use encsynth::generic_rl::StepSizeSchedule;
//! use encsynth::re_rl::{build_linear_system, solve_direct, z_learning_run, ReProblem};
//! use rand::SeedableRng;
//!
//! // `.` free cell, `T` trap (high cost), `G` absorbing goal.
//! let maze = "3 3\n...\n.T.\n..G\n";
//! let spec = GridWorldSpec::from_maze_str(maze, 0.1)?;
//! let world = build_grid_world(&spec)?;
//! let behavior = uniform_behavior(&world.mdp);
//! let problem = ReProblem::new(world.mdp.clone(), behavior, 0.15)?;
//!
//! // Ground truth: the desirability Z = exp(-V/lambda) solves a linear system.
//! let system = build_linear_system(&problem);
//! let z_star = solve_direct(problem.mdp.num_states, &system)?;
//!
//! // Model-free: learn the same table from sampled transitions.
//! let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
//! let run = z_learning_run(&problem, &StepSizeSchedule { kappa: 1000.0 },
//!                          10_000, 200, &mut rng, &[]);
//! assert!(z_star.max_abs_diff(&run.table) < 0.05);
//! # Ok::<(), Box<dyn std::error::Error>>(())
//! ```
//!
//! ## Leveled arithmetic and the depth budget
//!
//! Every ciphertext carries a level; each multiplication plus rescale
//! burns one. When the chain is spent the backend refuses to continue
//! instead of silently corrupting the result (the exact backend is the
//! one exception — it is a pure arithmetic oracle with no chain):
//!
//! ```rust
//! use encsynth::he::{EmulatorBackend, HeBackend, HeDecrypt, HeError, HeProfile, NoiseModel};
//!
//! let be = EmulatorBackend::new(HeProfile::standard(), NoiseModel::zero(), 42)?;
//! let mut x = be.encrypt_scalar(0.9)?;
//! for _ in 0..4 {
//!     x = be.rescale(&be.mul(&x, &x)?)?; // levels 4 -> 3 -> 2 -> 1 -> 0
//! }
//! assert!((be.decrypt_scalar(&x)? - 0.9f64.powi(16)).abs() < 1e-9);
//! assert!(matches!(be.mul(&x, &x), Err(HeError::LevelExhausted { .. })));
//! # Ok::<(), Box<dyn std::error::Error>>(())
//! ```
//!
//! ## An encrypted synthesis session
//!
//! The server never holds decryption capability; when an operand's level
//! is too low for the next update it sends the ciphertext back for
//! re-encryption and the client answers with a fresh one.
//!
//! ```rust
//! use std::sync::Arc;
//! use encsynth::he::{ExactBackend, ExpApproxConfig, HeProfile};
//! use encsynth::mdp::{build_grid_world, uniform_behavior, GridWorldSpec};
//! use encsynth::protocol::{run_session, serve, InProcessTransport, SessionConfig, SynthServer};
//! use encsynth::re_rl::ReProblem;
//!
//! let spec = GridWorldSpec::from_maze_str("3 3\n...\n...\n..G\n", 0.1)?;
//! let world = build_grid_world(&spec)?;
//! let behavior = uniform_behavior(&world.mdp);
//! let problem = ReProblem::new(world.mdp.clone(), behavior, 0.15)?;
//! let exp_cfg = ExpApproxConfig::default_for(0.1, problem.lambda)?;
//!
//! let backend = Arc::new(ExactBackend::new(HeProfile::standard())?);
//! let (mut client_end, mut server_end) = InProcessTransport::pair();
//! let server_backend = backend.clone();
//! let server = std::thread::spawn(move || {
//!     let mut server = SynthServer::new(server_backend);
//!     serve(&mut server, &mut server_end)
//! });
//!
//! let cfg = SessionConfig { episodes: 20, max_steps: 50, seed: 3, kappa: 1000.0, session_id: 1 };
//! let outcome = run_session(&problem, &exp_cfg, &cfg, &backend, &*backend,
//!                           &mut client_end, None)?;
//! drop(client_end);
//! server.join().unwrap()?;
//! assert!(outcome.table.z.iter().all(|z| z.is_finite()));
//! # Ok::<(), Box<dyn std::error::Error>>(())
//! ```

pub mod experiment;
pub mod generic_rl;
pub mod he;
pub mod mdp;
pub mod protocol;
pub mod re_rl;
pub mod rlwe;
