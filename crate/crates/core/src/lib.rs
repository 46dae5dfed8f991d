//! Curious representation learning in a self-contained procedural world.
//!
//! A PPO exploration policy and a contrastive representation model play a
//! minimax game: the policy is rewarded with the model's per-observation
//! loss, and the model trains on whatever the policy finds. Everything
//! needed to run the game lives here — a raycast-rendered multi-room
//! gridworld, a small autodiff engine, the contrastive and PPO machinery,
//! and an evaluation harness (exploration coverage, gathered-data
//! diversity, linear probes, downstream navigation).

pub mod numerics;
pub mod reference;

pub use numerics::{ParamSet, Tensor};
