//! Turns a natural-language request into a validated 2D physics animation.
//!
//! Four model-backed stages run in sequence: an interpreter, a requirements
//! generator, a code generator with an execute-and-repair loop, and a
//! perceptual validator that judges rendered frames and routes feedback
//! back to the stage at fault. The [`orchestrator`] drives the iteration
//! loop; every model call goes through the [`gateway`].

pub mod codegen;
pub mod config;
pub mod gateway;
pub mod imaging;
pub mod interpreter;
pub mod model;
pub mod orchestrator;
pub mod prompts;
pub mod requirements;
pub mod sandbox;
pub mod structured;
pub mod validator;
