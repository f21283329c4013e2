//! Synthetic closed-world corpus: a fixed word list, a (subject, relation) ->
//! answer fact table, templated micro-stories whose continuation is flipped
//! by a single cue token, and filler sentences. Everything derives from one
//! seed, so reruns produce the same world byte for byte.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::rng;
use crate::vocab::Vocab;

const MARKERS: [&str; 2] = ["Q", "A"];
const SUBJECTS: [&str; 8] = ["mira", "tavo", "ilex", "oona", "pell", "quin", "rasa", "sol"];
const RELATIONS: [&str; 4] = ["likes", "fears", "guards", "seeks"];
const OBJECTS: [&str; 8] = ["amber", "basil", "cedar", "dunes", "ember", "fungi", "grove", "honey"];
const CUES: [&str; 2] = ["warm", "cold"];
const OUTCOMES: [&str; 2] = ["joy", "woe"];
const STORY_WORDS: [&str; 24] = [
    "the", "a", "old", "young", "bird", "fox", "tree", "river", "walked", "found", "lost",
    "sang", "under", "over", "near", "beyond", "bright", "dark", "quiet", "wild", "stone",
    "leaf", "wind", "rain",
];
const FILLER_WORDS: [&str; 10] =
    ["one", "two", "red", "blue", "tall", "small", "deep", "high", "soft", "hard"];

/// One closed-world fact: (subject, relation) determines the answer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fact {
    pub subject: u32,
    pub relation: u32,
    pub answer: u32,
}

pub struct World {
    pub vocab: Vocab,
    pub facts: Vec<Fact>,
    /// Training documents for the base LM, the SAE, and the denoiser.
    pub corpus: Vec<Vec<u32>>,
    /// Cue token implying the positive outcome.
    pub cue_positive: u32,
    /// Cue token implying the negative outcome.
    pub cue_negative: u32,
    pub outcome_positive: u32,
    pub outcome_negative: u32,
    pub marker_q: u32,
    pub marker_a: u32,
    pub subjects: Vec<u32>,
    pub relations: Vec<u32>,
    pub objects: Vec<u32>,
    pub story_words: Vec<u32>,
}

fn all_words() -> Vec<&'static str> {
    let mut words = Vec::new();
    words.extend(MARKERS);
    words.extend(SUBJECTS);
    words.extend(RELATIONS);
    words.extend(OBJECTS);
    words.extend(CUES);
    words.extend(OUTCOMES);
    words.extend(STORY_WORDS);
    words.extend(FILLER_WORDS);
    words
}

impl World {
    pub fn story_doc(&self, cue: u32, rng: &mut impl Rng) -> Vec<u32> {
        let w = |s: &str| self.vocab.id(s).expect("world word");
        let adjectives = ["old", "young", "bright", "dark", "quiet", "wild"];
        let nouns = ["bird", "fox", "tree", "river", "stone", "leaf"];
        let verbs = ["walked", "found", "lost", "sang"];
        let preps = ["under", "over", "near", "beyond"];
        let pick = |opts: &[&str], rng: &mut dyn rand::RngCore| {
            w(opts[(rng.next_u32() as usize) % opts.len()])
        };
        let outcome = if cue == self.cue_positive {
            self.outcome_positive
        } else {
            self.outcome_negative
        };
        // "the <adj> <noun> <verb> <prep> the <cue> <noun> and-less: outcome"
        vec![
            w("the"),
            pick(&adjectives, rng),
            pick(&nouns, rng),
            pick(&verbs, rng),
            pick(&preps, rng),
            w("the"),
            cue,
            pick(&nouns, rng),
            outcome,
        ]
    }

    pub fn qa_doc(&self, fact: Fact, prefix: &[u32]) -> Vec<u32> {
        let mut doc = prefix.to_vec();
        doc.extend([self.marker_q, fact.subject, fact.relation, self.marker_a, fact.answer]);
        doc
    }

    pub fn filler_doc(&self, len: usize, rng: &mut impl Rng) -> Vec<u32> {
        (0..len).map(|_| self.story_words[rng.gen_range(0..self.story_words.len())]).collect()
    }

    pub fn fact_for(&self, subject: u32, relation: u32) -> Option<Fact> {
        self.facts.iter().copied().find(|f| f.subject == subject && f.relation == relation)
    }
}

/// Builds the world: assigns answers to every (subject, relation) pair and
/// emits a mixed training corpus (facts repeated, stories, filler).
pub fn build_world(seed: u64) -> Result<World> {
    let vocab = Vocab::with_words(all_words())?;
    let id = |s: &str| vocab.id(s).expect("world word");
    let subjects: Vec<u32> = SUBJECTS.iter().map(|s| id(s)).collect();
    let relations: Vec<u32> = RELATIONS.iter().map(|s| id(s)).collect();
    let objects: Vec<u32> = OBJECTS.iter().map(|s| id(s)).collect();
    let story_words: Vec<u32> = STORY_WORDS.iter().map(|s| id(s)).collect();

    let mut facts = Vec::new();
    let mut rng = rng::stream(seed, "world-facts", 0);
    for &s in &subjects {
        for &r in &relations {
            let answer = objects[rng.gen_range(0..objects.len())];
            facts.push(Fact { subject: s, relation: r, answer });
        }
    }

    let mut world = World {
        cue_positive: id(CUES[0]),
        cue_negative: id(CUES[1]),
        outcome_positive: id(OUTCOMES[0]),
        outcome_negative: id(OUTCOMES[1]),
        marker_q: id(MARKERS[0]),
        marker_a: id(MARKERS[1]),
        subjects,
        relations,
        objects,
        story_words,
        facts,
        corpus: Vec::new(),
        vocab,
    };

    let mut corpus = Vec::new();
    let mut rng = rng::stream(seed, "world-corpus", 0);
    // Each fact many times, under varying short prefixes, so the QA mapping
    // is memorized regardless of context.
    for round in 0..10 {
        for &fact in &world.facts {
            let prefix_len = if round == 0 { 0 } else { rng.gen_range(0..=8) };
            let prefix: Vec<u32> = (0..prefix_len)
                .map(|_| world.story_words[rng.gen_range(0..world.story_words.len())])
                .collect();
            corpus.push(world.qa_doc(fact, &prefix));
        }
    }
    for _ in 0..120 {
        let cue = *[world.cue_positive, world.cue_negative].choose(&mut rng).unwrap();
        corpus.push(world.story_doc(cue, &mut rng));
    }
    for _ in 0..80 {
        let len = rng.gen_range(5..10);
        corpus.push(world.filler_doc(len, &mut rng));
    }
    corpus.shuffle(&mut rng);
    world.corpus = corpus;
    Ok(world)
}
