//! Declarative run configuration shared by the library, the checkpoint
//! format, and the CLI. Unknown keys are rejected on deserialization and
//! every field has a recorded default, so a fully resolved config can be
//! echoed next to every output.

use serde::{Deserialize, Serialize};

use crate::eval::EvalConfig;
use crate::flow::{BaseMode, FlowConfig};
use crate::model::ModelConfig;
use crate::objectives::LossWeights;
use crate::synth::{ClassSpec, CorpusSpec};
use crate::trainer::TrainConfig;

/// Segment geometry: C channels x T samples at `sample_rate` Hz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Geometry {
    pub channels: usize,
    pub samples: usize,
    pub sample_rate: f64,
}

impl Default for Geometry {
    /// Desk-scale default: 4 x 400 at 100 Hz. Keeps the full band structure
    /// up to the 45 Hz gamma edge while training in minutes on CPU.
    fn default() -> Self {
        Geometry {
            channels: 4,
            samples: 400,
            sample_rate: 100.0,
        }
    }
}

impl Geometry {
    /// Full-scale geometry from the clinical corpora: 16 x 2000 at 200 Hz.
    pub fn full_scale() -> Self {
        Geometry {
            channels: 16,
            samples: 2000,
            sample_rate: 200.0,
        }
    }
}

/// Corpus block of a run config; combined with the run geometry and seed it
/// yields a [`CorpusSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusBlock {
    pub classes: Vec<ClassSpec>,
    pub counts: Vec<u64>,
    pub scale: f64,
}

impl Default for CorpusBlock {
    fn default() -> Self {
        let spec = CorpusSpec::default_desk(Geometry::default(), 0);
        CorpusBlock {
            classes: spec.classes,
            counts: spec.counts,
            scale: spec.scale,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub geometry: Geometry,
    pub corpus: CorpusBlock,
    pub model: ModelConfig,
    pub flow: FlowConfig,
    pub loss: LossWeights,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn corpus_spec(&self) -> CorpusSpec {
        CorpusSpec {
            classes: self.corpus.classes.clone(),
            counts: self.corpus.counts.clone(),
            geometry: self.geometry,
            seed: self.seed,
            scale: self.corpus.scale,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.corpus.classes.len()
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_base_mode(mut self, mode: BaseMode) -> Self {
        self.flow.base_mode = mode;
        self
    }

    pub fn with_loss(mut self, loss: LossWeights) -> Self {
        self.loss = loss;
        self
    }
}
