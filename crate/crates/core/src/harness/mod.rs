//! Files, synthetic data, episodes and reports around the core model.

pub mod config;
pub mod episode;
pub mod format;
pub mod report;
pub mod suite;
pub mod synth;

pub use config::{EpisodeConfig, Method};
pub use episode::{compare_methods, run_episode, run_episode_detailed, Comparison, EpisodeOutcome};
pub use format::{
    read_prompts, read_stream, write_prompts, write_stream, ClassManifest, FeatureStream, PromptFile, StreamRecord,
};
pub use report::{EpisodeReport, StepRecord};
pub use synth::{synth_generate, Corruption, ReferenceGenerators, SynthOutput, SynthSpec};
