//! `key = value` configuration with `[section]` headers.
//!
//! Every known key has a default; files and `--section.key value` flags may
//! only set known keys. The resolved form lists every key and parses back to
//! the same configuration.

use std::fmt::Display;
use std::str::FromStr;

use graphdoc::contrastive::{PretrainConfig, Similarity, SplitMode};
use graphdoc::corpusio::SynthConfig;
use graphdoc::docmodel::{GraphTopology, ModelConfig};
use graphdoc::gradcore::{AdamConfig, OptimConfig, Schedule};
use graphdoc::retrieval::{Bm25Params, EvalOptions, FusionNorm, Gain, Metric, RetrievalConfig, TuneOptions};
use graphdoc::taskheads::{ClassifyConfig, ClusterConfig, NmiNorm};

pub const SECTIONS: [&str; 6] = ["model", "synth", "pretrain", "finetune", "retrieval", "eval"];

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    entries: Vec<(&'static str, &'static str, String)>,
}

fn optim_entries(section: &'static str, o: &OptimConfig) -> Vec<(&'static str, &'static str, String)> {
    vec![
        (section, "lr", o.lr.to_string()),
        (section, "warmup", o.warmup.to_string()),
        (section, "schedule", o.schedule.to_string()),
        (section, "weight_decay", o.adam.weight_decay.to_string()),
    ]
}

fn gain_name(g: Gain) -> &'static str {
    match g {
        Gain::Linear => "linear",
        Gain::Exponential => "exponential",
    }
}

fn nmi_name(n: NmiNorm) -> &'static str {
    match n {
        NmiNorm::Sqrt => "sqrt",
        NmiNorm::Arithmetic => "arithmetic",
    }
}

impl Default for Config {
    fn default() -> Self {
        let m = ModelConfig::default();
        let s = SynthConfig::default();
        let p = PretrainConfig::default();
        let c = ClassifyConfig::default();
        let r = RetrievalConfig::default();
        let bm = Bm25Params::default();
        let tune = TuneOptions::new("mrr@10".parse().expect("metric"));
        let cl = ClusterConfig::default();
        let e = EvalOptions::default();
        let (sim, temperature) = match p.similarity {
            Similarity::Dot => ("dot", 0.05),
            Similarity::Cosine { temperature } => ("cosine", temperature),
        };
        let mut entries = vec![
            ("model", "seed", "0".to_string()),
            ("model", "d_model", m.d_model.to_string()),
            ("model", "d_tok", m.d_tok.to_string()),
            ("model", "heads", m.heads.to_string()),
            ("model", "layers", m.layers.to_string()),
            ("model", "vocab_buckets", m.vocab_buckets.to_string()),
            ("model", "max_tokens", m.max_tokens.to_string()),
            ("model", "topology", m.topology.to_string()),
            ("model", "attention_slope", m.attention_slope.to_string()),
            ("model", "max_passages_train", m.max_passages_train.to_string()),
            ("model", "max_passages_infer", m.max_passages_infer.to_string()),
            ("model", "passage_words", "100".to_string()),
            ("synth", "topics", s.topics.to_string()),
            ("synth", "docs", s.docs.to_string()),
            ("synth", "vocab_per_topic", s.vocab_per_topic.to_string()),
            ("synth", "background_vocab", s.background_vocab.to_string()),
            ("synth", "topic_share", s.topic_share.to_string()),
            ("synth", "doc_zipf", s.doc_zipf.to_string()),
            ("synth", "min_passages", s.passages.0.to_string()),
            ("synth", "max_passages", s.passages.1.to_string()),
            ("synth", "min_sections", s.sections.0.to_string()),
            ("synth", "max_sections", s.sections.1.to_string()),
            ("synth", "min_words", s.words_per_passage.0.to_string()),
            ("synth", "max_words", s.words_per_passage.1.to_string()),
            ("synth", "train_queries", s.queries.0.to_string()),
            ("synth", "dev_queries", s.queries.1.to_string()),
            ("synth", "test_queries", s.queries.2.to_string()),
            ("synth", "query_words", s.query_words.to_string()),
            ("pretrain", "mode", p.mode.to_string()),
            ("pretrain", "batch_size", p.batch_size.to_string()),
            ("pretrain", "epochs", p.epochs.to_string()),
        ];
        entries.extend(optim_entries("pretrain", &p.optim));
        entries.extend([
            ("pretrain", "max_passages", p.max_passages.to_string()),
            ("pretrain", "first_passage_prob", p.first_passage_prob.to_string()),
            ("pretrain", "similarity", sim.to_string()),
            ("pretrain", "temperature", temperature.to_string()),
            ("pretrain", "checkpoint_every", p.checkpoint_every.to_string()),
            ("finetune", "batch_size", c.batch_size.to_string()),
            ("finetune", "epochs", c.epochs.to_string()),
        ]);
        entries.extend(optim_entries("finetune", &c.optim));
        entries.extend([
            ("finetune", "freeze_encoder", c.freeze_encoder.to_string()),
            ("retrieval", "batch_size", r.batch_size.to_string()),
            ("retrieval", "epochs", r.epochs.to_string()),
        ]);
        entries.extend(optim_entries("retrieval", &r.optim));
        entries.extend([
            ("retrieval", "pool_size", r.pool_size.to_string()),
            ("retrieval", "staged", r.staged.to_string()),
            ("retrieval", "k1", bm.k1.to_string()),
            ("retrieval", "b", bm.b.to_string()),
            ("retrieval", "depth", tune.k.to_string()),
            ("retrieval", "fusion_norm", tune.norm.to_string()),
            ("retrieval", "fusion_step", tune.step.to_string()),
            ("eval", "metric", tune.metric.to_string()),
            ("eval", "relevance_level", e.relevance_level.to_string()),
            ("eval", "gain", gain_name(e.gain).to_string()),
            ("eval", "cluster_k", cl.k.to_string()),
            ("eval", "cluster_iters", cl.max_iters.to_string()),
            ("eval", "cluster_normalize", cl.normalize.to_string()),
            ("eval", "nmi", nmi_name(cl.nmi).to_string()),
        ]);
        Config { entries }
    }
}

impl Config {
    /// Sets a known key; the value is checked when the typed view is built.
    pub fn set(&mut self, section: &str, key: &str, value: &str) -> Result<(), String> {
        if !SECTIONS.contains(&section) {
            return Err(format!("unknown config section `{section}`"));
        }
        match self.entries.iter_mut().find(|(s, k, _)| *s == section && *k == key) {
            Some(entry) => {
                entry.2 = value.trim().to_string();
                Ok(())
            }
            None => Err(format!("unknown config key `{section}.{key}`")),
        }
    }

    /// Applies a config file on top of the current values.
    pub fn apply_text(&mut self, text: &str, source: &str) -> Result<(), String> {
        let mut section: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            let at = |msg: String| format!("{source}:{}: {msg}", i + 1);
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let name = name.trim();
                if !SECTIONS.contains(&name) {
                    return Err(at(format!("unknown config section `{name}`")));
                }
                section = Some(name.to_string());
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(at(format!("expected `key = value`, found `{line}`")));
            };
            let Some(section) = &section else {
                return Err(at("key outside of any [section]".into()));
            };
            self.set(section, key.trim(), value).map_err(at)?;
        }
        Ok(())
    }

    pub fn get(&self, section: &str, key: &str) -> &str {
        self.entries
            .iter()
            .find(|(s, k, _)| *s == section && *k == key)
            .map(|e| e.2.as_str())
            .unwrap_or_else(|| panic!("no config key {section}.{key}"))
    }

    fn parse<T: FromStr>(&self, section: &str, key: &str) -> Result<T, String>
    where
        T::Err: Display,
    {
        let raw = self.get(section, key);
        raw.parse()
            .map_err(|e| format!("config `{section}.{key}` = `{raw}`: {e}"))
    }

    /// Every key in `[section]` blocks; parses back to `self`.
    pub fn resolved(&self) -> String {
        let mut out = String::new();
        for section in SECTIONS {
            if !out.is_empty() {
                out.push('\n');
            }
            out.push_str(&format!("[{section}]\n"));
            for (_, k, v) in self.entries.iter().filter(|(s, _, _)| *s == section) {
                out.push_str(&format!("{k} = {v}\n"));
            }
        }
        out
    }

    pub fn seed(&self) -> Result<u64, String> {
        self.parse("model", "seed")
    }

    pub fn passage_words(&self) -> Result<usize, String> {
        self.parse("model", "passage_words")
    }

    pub fn model(&self) -> Result<ModelConfig, String> {
        let topology: GraphTopology = self.parse("model", "topology")?;
        let config = ModelConfig {
            d_model: self.parse("model", "d_model")?,
            d_tok: self.parse("model", "d_tok")?,
            heads: self.parse("model", "heads")?,
            layers: self.parse("model", "layers")?,
            vocab_buckets: self.parse("model", "vocab_buckets")?,
            max_tokens: self.parse("model", "max_tokens")?,
            topology,
            attention_slope: self.parse("model", "attention_slope")?,
            max_passages_train: self.parse("model", "max_passages_train")?,
            max_passages_infer: self.parse("model", "max_passages_infer")?,
        };
        config.validate().map_err(|e| e.to_string())?;
        Ok(config)
    }

    pub fn synth(&self) -> Result<SynthConfig, String> {
        let s = "synth";
        Ok(SynthConfig {
            topics: self.parse(s, "topics")?,
            docs: self.parse(s, "docs")?,
            vocab_per_topic: self.parse(s, "vocab_per_topic")?,
            background_vocab: self.parse(s, "background_vocab")?,
            topic_share: self.parse(s, "topic_share")?,
            doc_zipf: self.parse(s, "doc_zipf")?,
            passages: (self.parse(s, "min_passages")?, self.parse(s, "max_passages")?),
            sections: (self.parse(s, "min_sections")?, self.parse(s, "max_sections")?),
            words_per_passage: (self.parse(s, "min_words")?, self.parse(s, "max_words")?),
            queries: (
                self.parse(s, "train_queries")?,
                self.parse(s, "dev_queries")?,
                self.parse(s, "test_queries")?,
            ),
            query_words: self.parse(s, "query_words")?,
            seed: self.seed()?,
        })
    }

    fn optim(&self, section: &str) -> Result<OptimConfig, String> {
        let schedule: Schedule = self.parse(section, "schedule")?;
        Ok(OptimConfig {
            lr: self.parse(section, "lr")?,
            warmup: self.parse(section, "warmup")?,
            schedule,
            adam: AdamConfig {
                weight_decay: self.parse(section, "weight_decay")?,
                ..AdamConfig::default()
            },
        })
    }

    pub fn pretrain(&self) -> Result<PretrainConfig, String> {
        let s = "pretrain";
        let mode: SplitMode = self.parse(s, "mode")?;
        let similarity = match self.get(s, "similarity") {
            "dot" => Similarity::Dot,
            "cosine" => Similarity::Cosine {
                temperature: self.parse(s, "temperature")?,
            },
            other => return Err(format!("config `pretrain.similarity` = `{other}`: expected dot or cosine")),
        };
        let config = PretrainConfig {
            mode,
            batch_size: self.parse(s, "batch_size")?,
            epochs: self.parse(s, "epochs")?,
            optim: self.optim(s)?,
            max_passages: self.parse(s, "max_passages")?,
            first_passage_prob: self.parse(s, "first_passage_prob")?,
            similarity,
            seed: self.seed()?,
            checkpoint_every: self.parse(s, "checkpoint_every")?,
        };
        config.validate().map_err(|e| e.to_string())?;
        Ok(config)
    }

    pub fn classify(&self) -> Result<ClassifyConfig, String> {
        let s = "finetune";
        Ok(ClassifyConfig {
            batch_size: self.parse(s, "batch_size")?,
            epochs: self.parse(s, "epochs")?,
            optim: self.optim(s)?,
            freeze_encoder: self.parse(s, "freeze_encoder")?,
            seed: self.seed()?,
        })
    }

    pub fn retrieval(&self) -> Result<RetrievalConfig, String> {
        let s = "retrieval";
        Ok(RetrievalConfig {
            batch_size: self.parse(s, "batch_size")?,
            epochs: self.parse(s, "epochs")?,
            optim: self.optim(s)?,
            pool_size: self.parse(s, "pool_size")?,
            staged: self.parse(s, "staged")?,
            seed: self.seed()?,
        })
    }

    pub fn bm25(&self) -> Result<Bm25Params, String> {
        Ok(Bm25Params {
            k1: self.parse("retrieval", "k1")?,
            b: self.parse("retrieval", "b")?,
        })
    }

    /// Ranking depth of every run.
    pub fn depth(&self) -> Result<usize, String> {
        let k: usize = self.parse("retrieval", "depth")?;
        if k == 0 {
            return Err("config `retrieval.depth` must be positive".into());
        }
        Ok(k)
    }

    pub fn fusion_norm(&self) -> Result<FusionNorm, String> {
        self.parse("retrieval", "fusion_norm")
    }

    pub fn metric(&self) -> Result<Metric, String> {
        self.parse("eval", "metric")
    }

    pub fn eval_options(&self) -> Result<EvalOptions, String> {
        let gain = match self.get("eval", "gain") {
            "linear" => Gain::Linear,
            "exponential" => Gain::Exponential,
            other => return Err(format!("config `eval.gain` = `{other}`: expected linear or exponential")),
        };
        Ok(EvalOptions {
            relevance_level: self.parse("eval", "relevance_level")?,
            gain,
        })
    }

    pub fn tune_options(&self) -> Result<TuneOptions, String> {
        Ok(TuneOptions {
            metric: self.metric()?,
            eval: self.eval_options()?,
            k: self.depth()?,
            step: self.parse("retrieval", "fusion_step")?,
            norm: self.fusion_norm()?,
        })
    }

    pub fn cluster(&self) -> Result<ClusterConfig, String> {
        Ok(ClusterConfig {
            k: self.parse("eval", "cluster_k")?,
            max_iters: self.parse("eval", "cluster_iters")?,
            normalize: self.parse("eval", "cluster_normalize")?,
            nmi: self.parse("eval", "nmi")?,
            seed: self.seed()?,
        })
    }

    /// Builds every typed view, so a bad value fails before any work starts.
    pub fn check(&self) -> Result<(), String> {
        self.seed()?;
        self.passage_words()?;
        self.model()?;
        self.synth()?.validate().map_err(|e| e.to_string())?;
        self.pretrain()?;
        self.classify()?;
        self.retrieval()?;
        self.bm25()?;
        self.tune_options()?;
        self.cluster()?;
        Ok(())
    }
}

/// `(section, key, value)` from the command line.
pub type Override = (String, String, String);

/// Pulls `--section.key value` and `--section.key=value` pairs out of
/// `args`, returning them with the remaining arguments.
pub fn extract_overrides(args: Vec<String>) -> Result<(Vec<Override>, Vec<String>), String> {
    let mut overrides = Vec::new();
    let mut rest = Vec::new();
    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        let Some(flag) = arg.strip_prefix("--") else {
            rest.push(arg);
            continue;
        };
        let (name, inline) = match flag.split_once('=') {
            Some((n, v)) => (n.to_string(), Some(v.to_string())),
            None => (flag.to_string(), None),
        };
        let Some((section, key)) = name.split_once('.') else {
            rest.push(arg);
            continue;
        };
        let value = match inline {
            Some(v) => v,
            None => it.next().ok_or_else(|| format!("flag `--{name}` needs a value"))?,
        };
        overrides.push((section.to_string(), key.to_string(), value));
    }
    Ok((overrides, rest))
}
