use std::collections::BTreeSet;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::docmodel::Document;
use crate::error::{Error, Result};
use crate::retrieval::Qrels;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub topics: usize,
    pub docs: usize,
    pub vocab_per_topic: usize,
    pub background_vocab: usize,
    /// Share of words drawn from the topic vocabulary; the rest is background.
    pub topic_share: f64,
    /// Zipf exponent of each document's ranking of its topic's words
    /// (0 gives every document the plain topic distribution).
    pub doc_zipf: f64,
    pub passages: (usize, usize),
    pub sections: (usize, usize),
    pub words_per_passage: (usize, usize),
    /// Train, dev and test query counts.
    pub queries: (usize, usize, usize),
    pub query_words: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            topics: 5,
            docs: 700,
            vocab_per_topic: 200,
            background_vocab: 200,
            topic_share: 0.8,
            doc_zipf: 1.0,
            passages: (4, 8),
            sections: (1, 3),
            words_per_passage: (20, 40),
            queries: (400, 100, 200),
            query_words: 12,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.topics < 2 {
            return fail("at least two topics are required");
        }
        if self.docs < 2 * self.topics {
            return fail("need at least two documents per topic");
        }
        if self.vocab_per_topic == 0 {
            return fail("vocab_per_topic must be positive");
        }
        if !(0.0..=1.0).contains(&self.topic_share) || (self.topic_share < 1.0 && self.background_vocab == 0) {
            return fail("topic_share must lie in [0, 1], with background words when below 1");
        }
        if self.doc_zipf < 0.0 {
            return fail("doc_zipf must be nonnegative");
        }
        for (name, (lo, hi)) in [
            ("passages", self.passages),
            ("sections", self.sections),
            ("words_per_passage", self.words_per_passage),
        ] {
            if lo == 0 || lo > hi {
                return Err(Error::Config(format!("{name} range must satisfy 1 ≤ min ≤ max")));
            }
        }
        let (train, dev, test) = self.queries;
        if train + dev + test > 0 && self.query_words == 0 {
            return fail("query_words must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub documents: Vec<Document>,
    /// `(qid, text)`, ids prefixed `train-`, `dev-` or `test-`.
    pub queries: Vec<(String, String)>,
    pub qrels: Qrels,
}

impl SyntheticCorpus {
    /// Queries whose id starts with `split` followed by `-`.
    pub fn split(&self, split: &str) -> Vec<(String, String)> {
        let prefix = format!("{split}-");
        self.queries.iter().filter(|(q, _)| q.starts_with(&prefix)).cloned().collect()
    }
}

const ONSETS: [&str; 16] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "sh", "tr"];
const VOWELS: [&str; 6] = ["a", "e", "i", "o", "u", "ai"];

/// Distinct pronounceable pseudo-words.
fn make_vocabulary(rng: &mut ChaCha8Rng, count: usize) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let syllables = rng.gen_range(2..=4);
        let word: String = (0..syllables)
            .map(|_| format!("{}{}", ONSETS.choose(rng).unwrap(), VOWELS.choose(rng).unwrap()))
            .collect();
        if seen.insert(word.clone()) {
            out.push(word);
        }
    }
    out
}

struct WordSource<'a> {
    topic_words: Vec<&'a str>,
    topic_dist: WeightedIndex<f64>,
    background: &'a [String],
    topic_share: f64,
}

impl WordSource<'_> {
    fn sample(&self, rng: &mut ChaCha8Rng, n: usize) -> String {
        (0..n)
            .map(|_| {
                if self.background.is_empty() || rng.gen::<f64>() < self.topic_share {
                    self.topic_words[self.topic_dist.sample(rng)]
                } else {
                    self.background.choose(rng).unwrap().as_str()
                }
            })
            .collect::<Vec<_>>()
            .join(" ")
    }
}

fn split_sizes(rng: &mut ChaCha8Rng, total: usize, parts: usize) -> Vec<usize> {
    let parts = parts.min(total);
    let mut cuts: Vec<usize> = rand::seq::index::sample(rng, total - 1, parts - 1)
        .into_iter()
        .map(|c| c + 1)
        .collect();
    cuts.sort_unstable();
    let mut sizes = Vec::with_capacity(parts);
    let mut prev = 0;
    for c in cuts.into_iter().chain(std::iter::once(total)) {
        sizes.push(c - prev);
        prev = c;
    }
    sizes
}

/// Labeled topic corpus with retrieval queries and graded judgments.
///
/// Each document draws a topic uniformly and its own Zipf ranking of that
/// topic's words; every word is a topic word with probability `topic_share`
/// and a uniform background word otherwise. A query is a fresh passage from
/// one document's distribution: grade 2 for that document, grade 1 for every
/// other document of the topic.
pub fn generate_synthetic(config: &SynthConfig) -> Result<SyntheticCorpus> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let vocab = make_vocabulary(&mut rng, config.topics * config.vocab_per_topic + config.background_vocab);
    let (topical, background) = vocab.split_at(config.topics * config.vocab_per_topic);
    let ranks: Vec<f64> = (0..config.vocab_per_topic)
        .map(|r| 1.0 / ((r + 1) as f64).powf(config.doc_zipf))
        .collect();

    let mut documents = Vec::with_capacity(config.docs);
    let mut sources = Vec::with_capacity(config.docs);
    for i in 0..config.docs {
        let topic = rng.gen_range(0..config.topics);
        let mut words: Vec<&str> = topical[topic * config.vocab_per_topic..(topic + 1) * config.vocab_per_topic]
            .iter()
            .map(String::as_str)
            .collect();
        words.shuffle(&mut rng);
        let source = WordSource {
            topic_words: words,
            topic_dist: WeightedIndex::new(&ranks).expect("positive weights"),
            background,
            topic_share: config.topic_share,
        };
        let n_passages = rng.gen_range(config.passages.0..=config.passages.1);
        let n_sections = rng.gen_range(config.sections.0..=config.sections.1);
        let sections = split_sizes(&mut rng, n_passages, n_sections)
            .into_iter()
            .map(|size| {
                (0..size)
                    .map(|_| {
                        let n = rng.gen_range(config.words_per_passage.0..=config.words_per_passage.1);
                        source.sample(&mut rng, n)
                    })
                    .collect()
            })
            .collect();
        documents.push(Document::new(format!("doc{i:05}"), sections).with_label(format!("topic{topic}")));
        sources.push((topic, source));
    }

    let (train, dev, test) = config.queries;
    let mut queries = Vec::with_capacity(train + dev + test);
    let mut qrels = Qrels::new();
    for (split, count) in [("train", train), ("dev", dev), ("test", test)] {
        for j in 0..count {
            let qid = format!("{split}-{j:04}");
            let d = rng.gen_range(0..config.docs);
            let (topic, source) = &sources[d];
            queries.push((qid.clone(), source.sample(&mut rng, config.query_words)));
            for (other, (t, _)) in sources.iter().enumerate() {
                if t == topic {
                    qrels.insert(qid.as_str(), documents[other].id.as_str(), if other == d { 2 } else { 1 });
                }
            }
        }
    }
    Ok(SyntheticCorpus {
        documents,
        queries,
        qrels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpusio::corpus_to_jsonl;
    use crate::docmodel::words;

    fn small() -> SynthConfig {
        SynthConfig {
            docs: 60,
            queries: (5, 3, 4),
            ..SynthConfig::default()
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = generate_synthetic(&small()).unwrap();
        let b = generate_synthetic(&small()).unwrap();
        assert_eq!(corpus_to_jsonl(&a.documents), corpus_to_jsonl(&b.documents));
        assert_eq!(a.queries, b.queries);
        assert_eq!(a.qrels, b.qrels);
        let c = generate_synthetic(&SynthConfig { seed: 1, ..small() }).unwrap();
        assert_ne!(corpus_to_jsonl(&a.documents), corpus_to_jsonl(&c.documents));
    }

    #[test]
    fn shape_of_output() {
        let cfg = SynthConfig {
            docs: 500,
            queries: (0, 0, 0),
            ..SynthConfig::default()
        };
        let c = generate_synthetic(&cfg).unwrap();
        assert_eq!(c.documents.len(), 500);
        let labels: BTreeSet<_> = c.documents.iter().map(|d| d.label.clone().unwrap()).collect();
        assert_eq!(labels.len(), 5);
        for d in &c.documents {
            d.validate().unwrap();
            assert!((4..=8).contains(&d.passage_count()));
        }
    }

    #[test]
    fn queries_and_judgments() {
        let c = generate_synthetic(&small()).unwrap();
        assert_eq!(c.split("train").len(), 5);
        assert_eq!(c.split("dev").len(), 3);
        assert_eq!(c.split("test").len(), 4);
        for (qid, text) in &c.queries {
            assert_eq!(words(text).count(), 12);
            assert_eq!(c.qrels.best(qid).len(), 1);
            let src = c.qrels.best(qid)[0];
            let label = &c.documents.iter().find(|d| d.id == src).unwrap().label;
            for (doc, grade) in c.qrels.for_query(qid).unwrap() {
                let other = &c.documents.iter().find(|d| &d.id == doc).unwrap().label;
                assert_eq!(other, label);
                assert!(*grade >= 1);
            }
        }
    }

    #[test]
    fn topics_share_more_vocabulary_within_than_across() {
        let c = generate_synthetic(&SynthConfig {
            queries: (0, 0, 0),
            docs: 100,
            ..SynthConfig::default()
        })
        .unwrap();
        let sets: Vec<BTreeSet<String>> = c.documents.iter().map(|d| words(&d.full_text()).collect()).collect();
        let jaccard = |a: &BTreeSet<String>, b: &BTreeSet<String>| {
            a.intersection(b).count() as f64 / a.union(b).count() as f64
        };
        let (mut within, mut across) = ((0.0, 0), (0.0, 0));
        for i in 0..sets.len() {
            for j in i + 1..sets.len() {
                let v = jaccard(&sets[i], &sets[j]);
                if c.documents[i].label == c.documents[j].label {
                    within = (within.0 + v, within.1 + 1);
                } else {
                    across = (across.0 + v, across.1 + 1);
                }
            }
        }
        assert!(within.0 / within.1 as f64 > across.0 / across.1 as f64);
    }

    #[test]
    fn bad_parameters() {
        assert!(generate_synthetic(&SynthConfig { topics: 1, ..small() }).is_err());
        assert!(generate_synthetic(&SynthConfig { docs: 9, ..small() }).is_err());
        assert!(generate_synthetic(&SynthConfig {
            passages: (3, 2),
            ..small()
        })
        .is_err());
    }
}
