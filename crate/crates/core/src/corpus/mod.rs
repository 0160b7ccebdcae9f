//! Corpus data model and synthetic corpus generation.
//!
//! A corpus is a set of weakly-labeled videos: per-frame feature matrices with
//! a video-level task label and an ordered action transcript, but no frame
//! annotations (synthetic corpora additionally carry oracle frame labels for
//! evaluation only). Background is action index 0, named `SIL`, and never
//! appears in transcripts or attribute sets.

mod io;
mod synth;

pub use io::{load_corpus, read_matrix, save_corpus, write_manifest, write_matrix};
pub use synth::generate_synthetic;

use std::collections::BTreeSet;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Background action index ("SIL").
pub const BACKGROUND: usize = 0;
/// Background action name.
pub const BACKGROUND_NAME: &str = "SIL";

/// Task, action, and attribute name tables plus the action -> attribute map.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabularies {
    pub tasks: Vec<String>,
    /// Action names; index 0 is always `SIL`.
    pub actions: Vec<String>,
    pub attributes: Vec<String>,
    /// Attribute indices per action; empty for `SIL`.
    pub action_to_attrs: Vec<Vec<usize>>,
}

impl Vocabularies {
    /// Identity decomposition: every non-background action is its own attribute.
    pub fn identity(tasks: Vec<String>, actions: Vec<String>) -> Result<Self> {
        let attributes: Vec<String> = actions.iter().skip(1).cloned().collect();
        let action_to_attrs = std::iter::once(Vec::new())
            .chain((0..attributes.len()).map(|j| vec![j]))
            .collect();
        let v = Vocabularies {
            tasks,
            actions,
            attributes,
            action_to_attrs,
        };
        v.validate()?;
        Ok(v)
    }

    /// Explicit verb/object (or arbitrary) decomposition.
    pub fn with_attribute_map(
        tasks: Vec<String>,
        actions: Vec<String>,
        attributes: Vec<String>,
        action_to_attrs: Vec<Vec<usize>>,
    ) -> Result<Self> {
        let v = Vocabularies {
            tasks,
            actions,
            attributes,
            action_to_attrs,
        };
        v.validate()?;
        Ok(v)
    }

    fn validate(&self) -> Result<()> {
        if self.actions.is_empty() || self.actions[0] != BACKGROUND_NAME {
            return Err(Error::Data(format!(
                "action vocabulary must start with \"{BACKGROUND_NAME}\""
            )));
        }
        for (what, names) in [
            ("task", &self.tasks),
            ("action", &self.actions),
            ("attribute", &self.attributes),
        ] {
            let mut seen = BTreeSet::new();
            for n in names {
                if n.is_empty() {
                    return Err(Error::Data(format!("empty {what} name")));
                }
                if !seen.insert(n) {
                    return Err(Error::Data(format!("duplicate {what} name \"{n}\"")));
                }
            }
        }
        if self.action_to_attrs.len() != self.actions.len() {
            return Err(Error::Data("attribute map length mismatch".into()));
        }
        for (a, attrs) in self.action_to_attrs.iter().enumerate() {
            if a != BACKGROUND && attrs.is_empty() {
                return Err(Error::Data(format!(
                    "action \"{}\" maps to no attributes",
                    self.actions[a]
                )));
            }
            if attrs.iter().any(|&j| j >= self.attributes.len()) {
                return Err(Error::Data(format!(
                    "attribute index out of range for action \"{}\"",
                    self.actions[a]
                )));
            }
        }
        Ok(())
    }

    pub fn n_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn n_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn n_attributes(&self) -> usize {
        self.attributes.len()
    }

    /// True when attributes are exactly the non-background actions, in order.
    pub fn is_identity_decomposition(&self) -> bool {
        self.attributes.len() + 1 == self.actions.len()
            && self
                .attributes
                .iter()
                .zip(self.actions.iter().skip(1))
                .all(|(attr, act)| attr == act)
            && self
                .action_to_attrs
                .iter()
                .enumerate()
                .all(|(a, attrs)| match a {
                    BACKGROUND => attrs.is_empty(),
                    _ => attrs.len() == 1 && attrs[0] == a - 1,
                })
    }
}

/// Attribute set of one action under the vocabulary's decomposition.
pub fn decompose_attributes(action: usize, vocab: &Vocabularies) -> BTreeSet<usize> {
    vocab.action_to_attrs[action].iter().copied().collect()
}

/// One weakly-labeled video.
#[derive(Debug, Clone)]
pub struct VideoRecord {
    pub id: String,
    /// Feature matrix, feature dim x frames.
    pub features: Array2<f32>,
    pub task: usize,
    /// Ordered non-background action sequence.
    pub transcript: Vec<usize>,
    /// Union of the decomposed transcript actions.
    pub attributes: BTreeSet<usize>,
    /// Oracle per-frame labels (synthetic corpora only; never used in training).
    pub frame_labels: Option<Vec<usize>>,
}

impl VideoRecord {
    pub fn n_frames(&self) -> usize {
        self.features.ncols()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.nrows()
    }

    fn validate(&self, vocab: &Vocabularies) -> Result<()> {
        if self.n_frames() == 0 {
            return Err(Error::Data(format!("video {}: no frames", self.id)));
        }
        if self.task >= vocab.n_tasks() {
            return Err(Error::Data(format!("video {}: task out of range", self.id)));
        }
        if self.transcript.is_empty() {
            return Err(Error::Data(format!("video {}: empty transcript", self.id)));
        }
        for &a in &self.transcript {
            if a >= vocab.n_actions() {
                return Err(Error::Data(format!(
                    "video {}: transcript action out of range",
                    self.id
                )));
            }
            if a == BACKGROUND {
                return Err(Error::Data(format!(
                    "video {}: transcript contains background",
                    self.id
                )));
            }
        }
        let expected: BTreeSet<usize> = self
            .transcript
            .iter()
            .flat_map(|&a| vocab.action_to_attrs[a].iter().copied())
            .collect();
        if expected != self.attributes {
            return Err(Error::Data(format!(
                "video {}: attribute set inconsistent with transcript",
                self.id
            )));
        }
        if let Some(labels) = &self.frame_labels {
            if labels.len() != self.n_frames() {
                return Err(Error::Data(format!(
                    "video {}: {} frame labels for {} frames",
                    self.id,
                    labels.len(),
                    self.n_frames()
                )));
            }
            if labels.iter().any(|&a| a >= vocab.n_actions()) {
                return Err(Error::Data(format!(
                    "video {}: frame label out of range",
                    self.id
                )));
            }
            if run_length_encode(labels) != self.transcript {
                return Err(Error::Data(format!(
                    "video {}: frame labels inconsistent with transcript",
                    self.id
                )));
            }
        }
        Ok(())
    }
}

/// Non-background run-length encoding of a frame label sequence.
pub fn run_length_encode(labels: &[usize]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &l in labels {
        if Some(l) != prev {
            if l != BACKGROUND {
                out.push(l);
            }
            prev = Some(l);
        }
    }
    out
}

/// Immutable video collection with its vocabularies.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub vocab: Vocabularies,
    pub videos: Vec<VideoRecord>,
    /// True when any video is annotated with background frames.
    pub has_background: bool,
}

impl Corpus {
    pub fn new(vocab: Vocabularies, videos: Vec<VideoRecord>) -> Result<Self> {
        let mut ids = BTreeSet::new();
        for v in &videos {
            v.validate(&vocab)?;
            if !ids.insert(v.id.as_str()) {
                return Err(Error::Data(format!("duplicate video id \"{}\"", v.id)));
            }
        }
        let has_background = videos.iter().any(|v| {
            v.frame_labels
                .as_ref()
                .is_some_and(|l| l.contains(&BACKGROUND))
        });
        Ok(Corpus {
            vocab,
            videos,
            has_background,
        })
    }

    pub fn len(&self) -> usize {
        self.videos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.videos.is_empty()
    }

    /// Restrict to a subset of videos (indices), keeping the vocabulary.
    pub fn subset(&self, indices: &[usize]) -> Corpus {
        let videos = indices.iter().map(|&i| self.videos[i].clone()).collect();
        Corpus {
            vocab: self.vocab.clone(),
            videos,
            has_background: self.has_background,
        }
    }
}

/// Parameters for [`generate_synthetic`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_tasks: usize,
    pub n_actions: usize,
    pub feature_dim: usize,
    pub videos_per_task: usize,
    pub grammars_per_task: usize,
    /// Mean segment duration in frames (shifted-geometric, support >= 1).
    pub duration_mean: f64,
    pub noise_sigma: f64,
    /// Probability of a leading (and, independently, trailing) background segment.
    pub background_prob: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_tasks: 5,
            n_actions: 12,
            feature_dim: 16,
            videos_per_task: 12,
            grammars_per_task: 2,
            duration_mean: 20.0,
            noise_sigma: 0.5,
            background_prob: 1.0,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_tasks == 0
            || self.n_actions == 0
            || self.feature_dim == 0
            || self.videos_per_task == 0
            || self.grammars_per_task == 0
        {
            return Err(Error::Config("synthetic config: all counts must be >= 1".into()));
        }
        if self.duration_mean < 1.0 {
            return Err(Error::Config("synthetic config: duration_mean must be >= 1".into()));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::Config("synthetic config: noise_sigma must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.background_prob) {
            return Err(Error::Config(
                "synthetic config: background_prob must be in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}
