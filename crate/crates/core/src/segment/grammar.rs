//! Grammar store: deduplicated decodable action sequences per task.

use std::collections::HashMap;

use crate::corpus::{Corpus, BACKGROUND};

/// Deduplicated grammars with task ownership.
///
/// Grammars are stored in decodable form: for corpora annotated with
/// background, each transcript is wrapped with leading and trailing `SIL`
/// symbols so the decoder can spend frames there.
#[derive(Debug, Clone)]
pub struct GrammarStore {
    pub all_grammars: Vec<Vec<usize>>,
    /// Grammar indices per task, ascending.
    pub by_task: Vec<Vec<usize>>,
    /// Majority owning task per grammar (ties to the lowest task index).
    pub grammar_task: Vec<usize>,
}

impl GrammarStore {
    pub fn len(&self) -> usize {
        self.all_grammars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.all_grammars.is_empty()
    }

    /// Sum of grammar lengths over a subset; the dynamic-programming work a
    /// decode over that subset performs is proportional to this.
    pub fn work(&self, subset: &[usize]) -> usize {
        subset.iter().map(|&g| self.all_grammars[g].len()).sum()
    }

    /// All grammar indices (the bottom-up search space).
    pub fn all_indices(&self) -> Vec<usize> {
        (0..self.len()).collect()
    }
}

/// The decodable symbol sequence of a transcript.
pub fn decodable_sequence(transcript: &[usize], wrap_background: bool) -> Vec<usize> {
    if wrap_background {
        let mut seq = Vec::with_capacity(transcript.len() + 2);
        seq.push(BACKGROUND);
        seq.extend_from_slice(transcript);
        seq.push(BACKGROUND);
        seq
    } else {
        transcript.to_vec()
    }
}

/// Dedupe the corpus transcripts into a grammar store.
pub fn build_grammar_store(corpus: &Corpus) -> GrammarStore {
    let n_tasks = corpus.vocab.n_tasks();
    let mut all_grammars: Vec<Vec<usize>> = Vec::new();
    let mut index: HashMap<Vec<usize>, usize> = HashMap::new();
    let mut counts: Vec<Vec<usize>> = Vec::new(); // per grammar, per task

    for video in &corpus.videos {
        let seq = decodable_sequence(&video.transcript, corpus.has_background);
        let gi = match index.get(&seq) {
            Some(&gi) => gi,
            None => {
                let gi = all_grammars.len();
                index.insert(seq.clone(), gi);
                all_grammars.push(seq);
                counts.push(vec![0; n_tasks]);
                gi
            }
        };
        counts[gi][video.task] += 1;
    }

    let mut by_task: Vec<Vec<usize>> = vec![Vec::new(); n_tasks];
    let mut grammar_task = Vec::with_capacity(all_grammars.len());
    for (gi, per_task) in counts.iter().enumerate() {
        let mut majority = 0;
        for (tau, &c) in per_task.iter().enumerate() {
            if c > 0 {
                by_task[tau].push(gi);
            }
            if c > per_task[majority] {
                majority = tau;
            }
        }
        grammar_task.push(majority);
    }
    GrammarStore { all_grammars, by_task, grammar_task }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Corpus, VideoRecord, Vocabularies};
    use ndarray::Array2;

    fn corpus_with(transcripts: &[(usize, Vec<usize>)]) -> Corpus {
        let vocab = Vocabularies::identity(
            vec!["t0".into(), "t1".into()],
            vec!["SIL".into(), "a".into(), "b".into(), "c".into()],
        )
        .unwrap();
        let videos = transcripts
            .iter()
            .enumerate()
            .map(|(i, (task, transcript))| {
                let attributes = transcript
                    .iter()
                    .flat_map(|&a| vocab.action_to_attrs[a].iter().copied())
                    .collect();
                VideoRecord {
                    id: format!("v{i}"),
                    features: Array2::zeros((2, 4)),
                    task: *task,
                    transcript: transcript.clone(),
                    attributes,
                    frame_labels: None,
                }
            })
            .collect();
        Corpus::new(vocab, videos).unwrap()
    }

    #[test]
    fn dedupes_transcripts_per_task() {
        let corpus = corpus_with(&[(0, vec![1, 2]), (0, vec![1, 2]), (1, vec![1, 3])]);
        let store = build_grammar_store(&corpus);
        assert_eq!(store.all_grammars, vec![vec![1, 2], vec![1, 3]]);
        assert_eq!(store.by_task, vec![vec![0], vec![1]]);
        assert_eq!(store.grammar_task, vec![0, 1]);
    }

    #[test]
    fn single_video_gives_singleton_store() {
        let corpus = corpus_with(&[(1, vec![2, 1, 3])]);
        let store = build_grammar_store(&corpus);
        assert_eq!(store.len(), 1);
        assert_eq!(store.grammar_task, vec![1]);
    }

    #[test]
    fn shared_grammar_goes_to_majority_task() {
        let corpus =
            corpus_with(&[(0, vec![1, 2]), (0, vec![1, 2]), (1, vec![1, 2]), (1, vec![3])]);
        let store = build_grammar_store(&corpus);
        assert_eq!(store.all_grammars.len(), 2);
        assert_eq!(store.grammar_task[0], 0, "two task-0 videos vs one task-1 video");
        // The shared grammar still appears under both owning tasks.
        assert_eq!(store.by_task[0], vec![0]);
        assert_eq!(store.by_task[1], vec![0, 1]);
    }

    #[test]
    fn tie_resolves_to_lowest_task() {
        let corpus = corpus_with(&[(0, vec![1, 2]), (1, vec![1, 2])]);
        let store = build_grammar_store(&corpus);
        assert_eq!(store.grammar_task[0], 0);
    }

    #[test]
    fn background_corpora_wrap_grammars_with_sil() {
        use crate::corpus::{generate_synthetic, SynthConfig};
        let corpus = generate_synthetic(&SynthConfig {
            n_tasks: 2,
            videos_per_task: 3,
            background_prob: 1.0,
            ..SynthConfig::default()
        })
        .unwrap();
        assert!(corpus.has_background);
        let store = build_grammar_store(&corpus);
        for g in &store.all_grammars {
            assert_eq!(*g.first().unwrap(), crate::corpus::BACKGROUND);
            assert_eq!(*g.last().unwrap(), crate::corpus::BACKGROUND);
        }
    }
}
