use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use graphdoc::contrastive::{pretrain, pretraining_gradcheck, PretrainConfig};
use graphdoc::corpusio::{generate_synthetic, load_checkpoint, load_corpus, save_checkpoint, save_corpus};
use graphdoc::docmodel::{attention_csv, Document, GraphDocModel, ModelConfig};
use graphdoc::retrieval::{
    bm25_run, dense_run, evaluate, finetune_retrieval, fuse_with, queries_from_tsv, queries_to_tsv, training_pairs,
    tune_fusion_weight, Bm25Index, DenseIndex, Metric, Qrels, Run,
};
use graphdoc::taskheads::{
    cluster_eval, evaluate_accuracy, finetune_classification, predict, predictions_tsv,
};
use serde_json::json;

use crate::config::Config;
use crate::{Command, Failure, System};

type Outcome = Result<(), Failure>;

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Outcome {
    fs::write(path, contents).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

/// Creates `dir` and records the effective configuration in it.
fn out_dir(dir: &Path, config: &Config) -> Result<PathBuf, Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::Data(format!("{}: {e}", dir.display())))?;
    write(&dir.join("config.resolved"), config.resolved())?;
    Ok(dir.to_path_buf())
}

fn json_text(value: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("json");
    s.push('\n');
    s
}

fn corpus(path: &Path, config: &Config) -> Result<Vec<Document>, Failure> {
    Ok(load_corpus(path, config.passage_words().map_err(Failure::Usage)?)?)
}

fn model_or_init(init: Option<&Path>, model: ModelConfig, seed: u64) -> Result<GraphDocModel, Failure> {
    match init {
        Some(path) => Ok(load_checkpoint(path)?),
        None => Ok(GraphDocModel::init(model, seed)?),
    }
}

fn queries(path: &Path) -> Result<Vec<(String, String)>, Failure> {
    Ok(queries_from_tsv(&read(path)?, &path.display().to_string())?)
}

fn qrels(path: &Path) -> Result<Qrels, Failure> {
    Ok(Qrels::from_text(&read(path)?, &path.display().to_string())?)
}

fn run_file(path: &Path) -> Result<Run, Failure> {
    Ok(Run::from_trec(&read(path)?, &path.display().to_string())?)
}

fn set_threads(threads: Option<usize>) -> Outcome {
    if let Some(n) = threads {
        if n == 0 {
            return Err(Failure::Usage("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Usage(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn usage<T>(r: Result<T, String>) -> Result<T, Failure> {
    r.map_err(Failure::Usage)
}

pub fn dispatch(command: Command, config: &Config) -> Outcome {
    let seed = usage(config.seed())?;
    match command {
        Command::Synth { out } => {
            let synth = generate_synthetic(&usage(config.synth())?)?;
            let dir = out_dir(&out, config)?;
            save_corpus(dir.join("corpus.jsonl"), &synth.documents)?;
            write(&dir.join("queries.tsv"), queries_to_tsv(&synth.queries))?;
            for split in ["train", "dev", "test"] {
                write(&dir.join(format!("queries-{split}.tsv")), queries_to_tsv(&synth.split(split)))?;
            }
            write(&dir.join("qrels.txt"), synth.qrels.to_text())?;
            eprintln!("synth: {} documents, {} queries", synth.documents.len(), synth.queries.len());
        }
        Command::Pretrain { corpus: path, out, init, .. } => {
            let docs = corpus(&path, config)?;
            let mut model = model_or_init(init.as_deref(), usage(config.model())?, seed)?;
            let pc: PretrainConfig = usage(config.pretrain())?;
            let dir = out_dir(&out, config)?;
            let log = pretrain(&docs, &mut model, &pc, |step, m| {
                save_checkpoint(m, dir.join(format!("step-{step}.ckpt")))
            })?;
            save_checkpoint(&model, dir.join("model.ckpt"))?;
            write(&dir.join("loss.tsv"), log.to_tsv())?;
            eprintln!(
                "pretrain: {} steps, loss {:.4} -> {:.4}",
                log.records.len(),
                log.first_loss().unwrap_or(f64::NAN),
                log.last_loss().unwrap_or(f64::NAN)
            );
        }
        Command::FinetuneCls {
            corpus: path,
            validation,
            init,
            out,
        } => {
            let train = corpus(&path, config)?;
            let val = match &validation {
                Some(p) => corpus(p, config)?,
                None => Vec::new(),
            };
            let mut model = model_or_init(init.as_deref(), usage(config.model())?, seed)?;
            let labels = train.iter().chain(&val).filter_map(|d| d.label.clone());
            model.attach_head(labels, seed.wrapping_add(1))?;
            let log = finetune_classification(&mut model, &train, &val, &usage(config.classify())?)?;
            let dir = out_dir(&out, config)?;
            save_checkpoint(&model, dir.join("model.ckpt"))?;
            write(&dir.join("loss.tsv"), log.steps.to_tsv())?;
            write(&dir.join("metrics.json"), json_text(&json!({ "epochs": log.epochs })))?;
            if let Some(acc) = log.epochs.last().and_then(|e| e.validation_accuracy) {
                eprintln!("finetune-cls: validation accuracy {acc:.4}");
            }
        }
        Command::EvalCls { model, corpus: path, out } => {
            let model = load_checkpoint(&model)?;
            let docs = corpus(&path, config)?;
            let accuracy = evaluate_accuracy(&model, &docs)?;
            let dir = out_dir(&out, config)?;
            write(&dir.join("predictions.tsv"), predictions_tsv(&docs, &predict(&model, &docs)?))?;
            let metrics = json!({ "accuracy": accuracy, "documents": docs.len() });
            write(&dir.join("metrics.json"), json_text(&metrics))?;
            println!("{}", serde_json::to_string(&metrics).expect("json"));
        }
        Command::FinetuneRet {
            corpus: path,
            queries: qpath,
            qrels: rpath,
            init,
            out,
        } => {
            let docs = corpus(&path, config)?;
            let judged = qrels(&rpath)?;
            let pairs = training_pairs(&queries(&qpath)?, &judged);
            let index = Bm25Index::build(&docs, usage(config.bm25())?)?;
            let mut model = model_or_init(init.as_deref(), usage(config.model())?, seed)?;
            let log = finetune_retrieval(&mut model, &docs, &index, &pairs, &judged, &usage(config.retrieval())?)?;
            let dir = out_dir(&out, config)?;
            save_checkpoint(&model, dir.join("model.ckpt"))?;
            write(&dir.join("loss.tsv"), log.to_tsv())?;
            eprintln!("finetune-ret: {} steps on {} pairs", log.records.len(), pairs.len());
        }
        Command::IndexBm25 { corpus: path, out } => {
            let index = Bm25Index::build(&corpus(&path, config)?, usage(config.bm25())?)?;
            let dir = out_dir(&out, config)?;
            write(&dir.join("bm25.json"), index.to_json())?;
        }
        Command::Encode {
            model,
            corpus: path,
            out,
            threads,
        } => {
            set_threads(threads)?;
            let model = load_checkpoint(&model)?;
            let index = DenseIndex::encode(&model, &corpus(&path, config)?)?;
            let dir = out_dir(&out, config)?;
            write(&dir.join("dense.tsv"), index.to_tsv())?;
        }
        Command::Search {
            system,
            queries: qpath,
            bm25,
            dense,
            model,
            w,
            tag,
            out,
            threads,
        } => {
            set_threads(threads)?;
            let qs = queries(&qpath)?;
            let depth = usage(config.depth())?;
            let need = |p: &Option<PathBuf>, flag: &str| {
                p.clone()
                    .ok_or_else(|| Failure::Usage(format!("--system {system:?} needs --{flag}").to_lowercase()))
            };
            let bm25_results = |p: &Path| -> Result<Run, Failure> {
                let index = Bm25Index::from_json(&read(p)?)?;
                Ok(bm25_run(&index, &qs, depth))
            };
            let dense_results = |index: &Path, model: &Path| -> Result<Run, Failure> {
                let index = DenseIndex::from_tsv(&read(index)?, &index.display().to_string())?;
                Ok(dense_run(&load_checkpoint(model)?, &index, &qs, depth)?)
            };
            let run = match system {
                System::Bm25 => bm25_results(&need(&bm25, "bm25")?)?,
                System::Dense => dense_results(&need(&dense, "dense")?, &need(&model, "model")?)?,
                System::Hybrid => {
                    let w = w.ok_or_else(|| Failure::Usage("--system hybrid needs --w".into()))?;
                    if !(0.0..=1.0).contains(&w) {
                        return Err(Failure::Usage(format!("--w {w} outside [0, 1]")));
                    }
                    let b = bm25_results(&need(&bm25, "bm25")?)?;
                    let d = dense_results(&need(&dense, "dense")?, &need(&model, "model")?)?;
                    fuse_with(&d, &b, w, depth, usage(config.fusion_norm())?)?
                }
            };
            let dir = out_dir(&out, config)?;
            write(&dir.join("run.trec"), run.to_trec(&tag))?;
        }
        Command::TuneFusion {
            dense_run: dpath,
            bm25_run: bpath,
            qrels: rpath,
            out,
        } => {
            let opts = usage(config.tune_options())?;
            let tuning = tune_fusion_weight(&run_file(&dpath)?, &run_file(&bpath)?, &qrels(&rpath)?, &opts)?;
            if let Some(out) = out {
                let dir = out_dir(&out, config)?;
                let grid: Vec<_> = tuning.grid.iter().map(|(w, v)| json!({ "w": w, "value": v })).collect();
                let report = json!({
                    "metric": opts.metric.to_string(),
                    "w": tuning.weight,
                    "value": tuning.value,
                    "grid": grid,
                });
                write(&dir.join("fusion.json"), json_text(&report))?;
            }
            println!("w*={} {}={:.6}", tuning.weight, opts.metric, tuning.value);
        }
        Command::EvalRet {
            run,
            qrels: rpath,
            metric,
            out,
        } => {
            let metrics: Vec<Metric> = if metric.is_empty() {
                vec![usage(config.metric())?]
            } else {
                metric
            };
            let run = run_file(&run)?;
            let judged = qrels(&rpath)?;
            let opts = usage(config.eval_options())?;
            let mut values = BTreeMap::new();
            for m in metrics {
                values.insert(m.to_string(), evaluate(&run, &judged, m, opts)?);
            }
            let report = json!({ "metrics": values, "queries": run.len() });
            if let Some(out) = out {
                let dir = out_dir(&out, config)?;
                write(&dir.join("metrics.json"), json_text(&report))?;
            }
            println!("{}", serde_json::to_string(&report).expect("json"));
        }
        Command::Cluster {
            model,
            corpus: path,
            test,
            out,
        } => {
            let model = load_checkpoint(&model)?;
            let fit = corpus(&path, config)?;
            let scored = match &test {
                Some(p) => corpus(p, config)?,
                None => fit.clone(),
            };
            let report = cluster_eval(&model, &fit, &scored, &usage(config.cluster())?)?;
            let dir = out_dir(&out, config)?;
            let metrics = json!({ "nmi": report.nmi, "purity": report.purity, "k": report.k });
            write(&dir.join("metrics.json"), json_text(&metrics))?;
            let assignment: String = scored
                .iter()
                .zip(&report.test_assignment)
                .map(|(d, c)| format!("{}\t{c}\n", d.id))
                .collect();
            write(&dir.join("assignment.tsv"), assignment)?;
            println!("{}", serde_json::to_string(&metrics).expect("json"));
        }
        Command::ExportEmb { model, corpus: path, out } => {
            let model = load_checkpoint(&model)?;
            let index = DenseIndex::encode(&model, &corpus(&path, config)?)?;
            let dir = out_dir(&out, config)?;
            write(&dir.join("embeddings.tsv"), index.to_tsv())?;
        }
        Command::ExportAtt {
            model,
            corpus: path,
            doc,
            out,
        } => {
            let model = load_checkpoint(&model)?;
            let docs = corpus(&path, config)?;
            let d = docs
                .iter()
                .find(|d| d.id == doc)
                .ok_or_else(|| Failure::Data(format!("no document `{doc}` in {}", path.display())))?;
            let dir = out_dir(&out, config)?;
            write(&dir.join("attention.csv"), attention_csv(&model.export_attention(d)?))?;
        }
        Command::Gradcheck { eps } => {
            if !(1e-7..=1e-4).contains(&eps) {
                return Err(Failure::Usage(format!("--eps {eps} outside [1e-7, 1e-4]")));
            }
            let report = pretraining_gradcheck(
                &GraphDocModel::init(gradcheck_model(), seed)?,
                &gradcheck_docs(),
                &usage(config.pretrain())?,
                eps,
            )?;
            println!(
                "max_rel_error={:.3e} coordinates={}",
                report.max_rel_error, report.coordinates
            );
            if report.max_rel_error.is_nan() || report.max_rel_error >= 1e-4 {
                let worst = report.worst.map(|(p, i)| format!(" at {p}[{i}]")).unwrap_or_default();
                return Err(Failure::Check(format!(
                    "gradient error {:.3e}{worst} is not below 1e-4",
                    report.max_rel_error
                )));
            }
        }
    }
    Ok(())
}

/// Two heads, two layers, width 8.
fn gradcheck_model() -> ModelConfig {
    ModelConfig {
        d_model: 8,
        d_tok: 8,
        heads: 2,
        layers: 2,
        vocab_buckets: 64,
        ..ModelConfig::default()
    }
}

/// Three documents of four passages each.
fn gradcheck_docs() -> Vec<Document> {
    vec![
        Document::from_passages("g1", ["river bank water", "flow of the river", "boats on water", "a muddy bank"]),
        Document::from_passages("g2", ["stock market", "prices fell today", "the market closed", "traders sold"]),
        Document::from_passages("g3", ["mountain trail", "steep rocky climb", "snow at the peak", "camp below"]),
    ]
}
