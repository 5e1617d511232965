//! Training-free test-time adaptation over streaming embeddings.
//!
//! Each class gets a textual Gaussian built from prompt-embedding statistics and a
//! geometric Gaussian refined online from the test stream. Predictions average the
//! two class posteriors, weighted by how well each modality explains the sample.
//!
//! ```
//! use bayesmm::harness::{run_episode, synth_generate, EpisodeConfig, SynthSpec};
//!
//! let data = synth_generate(&SynthSpec { samples: 200, ..SynthSpec::default_suite(1) }).unwrap();
//! let report = run_episode(&data.prompts, &data.stream, &EpisodeConfig::default(), None).unwrap();
//! assert!(report.accuracy().unwrap() > 0.5);
//! ```

pub mod baselines;
pub mod diagnostics;
pub mod error;
pub mod fusion;
pub mod gaussian;
pub mod geometric;
pub mod harness;
pub mod textual;

pub use error::{Error, FormatError, Result};
pub use fusion::{fuse, FusedPrediction, FusionMode};
pub use gaussian::{CovarianceMode, FeatureVector, GaussianModel, SpdMatrix};
pub use geometric::{GeometricClassState, GeometricConfig};
pub use textual::{build_textual_models, PromptEmbeddingSet, TextualClassModel, TextualConfig};
