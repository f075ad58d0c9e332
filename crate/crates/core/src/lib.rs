//! Verbose-output slowdown attacks on vision-language models.
//!
//! A black-box attacker perturbs an image within an L2 budget so that the
//! victim model generates longer outputs. The victim is reached only through
//! queries that return per-position EOS probabilities and top-k token
//! distributions; gradients are estimated with antithetic NES.
//!
//! The main pieces:
//!
//! * [`tensor`] and [`imageio`]: images in 0–255 pixel units and PNG I/O.
//! * [`objectives`]: the length, EOS and variance objectives.
//! * [`nes`]: the gradient estimator and the projected ascent loop.
//! * [`victim`]: the query abstraction and the HTTP/JSON wire protocol.
//! * [`synthetic`]: in-process victims with known structure and a mock server.
//! * [`baselines`]: the Gaussian-noise baseline and the quantization defense.
//! * [`harness`]: batch experiments and efficiency reports.

pub mod baselines;
pub mod cli;
pub mod harness;
pub mod imageio;
pub mod nes;
pub mod objectives;
pub mod synthetic;
pub mod tensor;
pub mod victim;

pub use nes::{attack, AttackConfig, AttackError, AttackResult};
pub use objectives::{GenerationResponse, ObjectiveParams, PositionInfo};
pub use tensor::{ImageTensor, Perturbation, Shape};
pub use victim::{DecodeOptions, Victim};
