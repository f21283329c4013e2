//! Story-inpainting tasks: a frozen prefix and suffix around an editable
//! span, scored by the logit difference between two continuation tokens at
//! the final position. Task score is relative to the original span.

use std::io::BufRead;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bench::world::World;
use crate::error::{Error, Result};
use crate::lm::{self, LMParams};
use crate::objective::ObjectiveSpec;
use crate::rng;
use crate::vocab::{TokenSeq, Vocab};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoryTask {
    pub prefix: Vec<u32>,
    /// Original editable span; its length fixes the editable length.
    pub original: Vec<u32>,
    pub suffix: Vec<u32>,
    pub target: u32,
    pub source: u32,
}

impl StoryTask {
    pub fn editable_len(&self) -> usize {
        self.original.len()
    }

    pub fn validate(&self, lm_params: &LMParams) -> Result<()> {
        if self.original.is_empty() || self.suffix.is_empty() {
            return Err(Error::DegenerateInput(
                "story task needs a nonempty editable span and suffix".into(),
            ));
        }
        let seq = self.assemble(&self.original)?;
        TokenSeq::new(seq.clone()).validate(lm_params.vocab_size())?;
        if seq.len() > lm_params.ctx_len() {
            return Err(Error::ContextOverflow { len: seq.len(), ctx: lm_params.ctx_len() });
        }
        if self.target == self.source {
            return Err(Error::DegenerateInput("target and source coincide".into()));
        }
        Ok(())
    }

    pub fn assemble(&self, editable: &[u32]) -> Result<Vec<u32>> {
        if editable.len() != self.original.len() {
            return Err(Error::LengthMismatch {
                expected: self.original.len(),
                got: editable.len(),
            });
        }
        let mut seq = self.prefix.clone();
        seq.extend_from_slice(editable);
        seq.extend_from_slice(&self.suffix);
        Ok(seq)
    }

    /// Optimization variable: prefix and suffix frozen, editable span free,
    /// initialized to the original span.
    pub fn initial_seq(&self) -> Result<TokenSeq> {
        let ids = self.assemble(&self.original)?;
        let mut frozen = vec![true; ids.len()];
        for slot in frozen.iter_mut().skip(self.prefix.len()).take(self.original.len()) {
            *slot = false;
        }
        TokenSeq::with_frozen(ids, frozen)
    }

    pub fn objective(&self) -> ObjectiveSpec {
        ObjectiveSpec::LogitDiff { target: self.target, source: self.source, position: None }
    }

    fn logit_diff(&self, lm_params: &LMParams, editable: &[u32]) -> Result<f64> {
        let seq = TokenSeq::new(self.assemble(editable)?);
        let fw = lm::forward(lm_params, &seq)?;
        let last = fw.logits.row(fw.logits.rows - 1);
        Ok(last[self.target as usize] - last[self.source as usize])
    }
}

/// Improvement of a candidate span over the original: logit difference of
/// the candidate minus logit difference of the original span.
pub fn score_story(lm_params: &LMParams, task: &StoryTask, editable: &[u32]) -> Result<f64> {
    Ok(task.logit_diff(lm_params, editable)? - task.logit_diff(lm_params, &task.original)?)
}

/// Templated tasks over the world's story grammar. The editable span covers
/// the cue slot; the original span is cue-free, so planting a cue token is
/// always available as an improvement.
pub fn gen_story_tasks(world: &World, count: usize, seed: u64) -> Result<Vec<StoryTask>> {
    if count == 0 {
        return Err(Error::InvalidConfig("task count must be >= 1".into()));
    }
    let w = |s: &str| world.vocab.id(s).expect("world word");
    let adjectives = ["old", "young", "bright", "dark", "quiet", "wild"];
    let nouns = ["bird", "fox", "tree", "river", "stone", "leaf"];
    let verbs = ["walked", "found", "lost", "sang"];
    let preps = ["under", "over", "near", "beyond"];
    let mut rng = rng::stream(seed, "story-tasks", 0);
    let mut tasks = Vec::with_capacity(count);
    for _ in 0..count {
        let pick = |opts: &[&str], rng: &mut dyn rand::RngCore| {
            w(opts[(rng.next_u32() as usize) % opts.len()])
        };
        let prefix = vec![
            w("the"),
            pick(&adjectives, &mut rng),
            pick(&nouns, &mut rng),
            pick(&verbs, &mut rng),
        ];
        // Neutral filler where the training grammar put "the <cue>".
        let original = vec![pick(&preps, &mut rng), w("the"), pick(&adjectives, &mut rng)];
        let suffix = vec![pick(&nouns, &mut rng)];
        let (target, source) = if rng.gen_bool(0.5) {
            (world.outcome_positive, world.outcome_negative)
        } else {
            (world.outcome_negative, world.outcome_positive)
        };
        tasks.push(StoryTask { prefix, original, suffix, target, source });
    }
    Ok(tasks)
}

/// The cue token whose presence drives this task's target outcome.
pub fn task_cue(world: &World, task: &StoryTask) -> u32 {
    if task.target == world.outcome_positive {
        world.cue_positive
    } else {
        world.cue_negative
    }
}

#[derive(Deserialize)]
struct StoryLine {
    prefix: String,
    editable: String,
    suffix: String,
    target: String,
    source: String,
}

/// Loads story tasks from a line-delimited JSON file of word strings.
/// Unknown words or empty spans reject the file with the offending line.
pub fn load_story_tasks(path: &Path, vocab: &Vocab) -> Result<Vec<StoryTask>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = std::io::BufReader::new(file);
    let mut tasks = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: StoryLine = serde_json::from_str(&line)
            .map_err(|e| Error::MalformedRecord { line: lineno, reason: e.to_string() })?;
        let encode = |text: &str| -> Result<Vec<u32>> {
            vocab
                .encode(text)
                .map_err(|e| Error::MalformedRecord { line: lineno, reason: e.to_string() })
        };
        let single = |text: &str| -> Result<u32> {
            let ids = encode(text)?;
            if ids.len() != 1 {
                return Err(Error::MalformedRecord {
                    line: lineno,
                    reason: format!("{text:?} must be exactly one token"),
                });
            }
            Ok(ids[0])
        };
        let task = StoryTask {
            prefix: encode(&record.prefix)?,
            original: encode(&record.editable)?,
            suffix: encode(&record.suffix)?,
            target: single(&record.target)?,
            source: single(&record.source)?,
        };
        if task.original.is_empty() || task.suffix.is_empty() {
            return Err(Error::MalformedRecord {
                line: lineno,
                reason: "editable span and suffix must be nonempty".into(),
            });
        }
        tasks.push(task);
    }
    if tasks.is_empty() {
        return Err(Error::DegenerateInput(format!("no story tasks in {}", path.display())));
    }
    Ok(tasks)
}
