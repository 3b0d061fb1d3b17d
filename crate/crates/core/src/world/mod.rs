//! Synthetic driving scenes, the expert that drives them, and their
//! tokenization.

pub mod expert;
pub mod generator;
pub mod rng;
mod scene;
pub mod tokens;

pub use expert::expert_rollout;
pub use generator::{generate_scene, WorldConfig};
pub use scene::{AgentTrack, Command, ScenarioKind, Scene, SCENE_VERSION};
pub use tokens::{tokenize_scene, TokenBundle};
