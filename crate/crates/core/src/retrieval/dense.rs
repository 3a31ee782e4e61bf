use super::run::{rank_hits, Hit};
use crate::docmodel::{Document, GraphDocModel};
use crate::error::{Error, Result};

/// Document embeddings for exhaustive dot-product search.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseIndex {
    ids: Vec<String>,
    dim: usize,
    data: Vec<f64>,
}

impl DenseIndex {
    pub fn new(ids: Vec<String>, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != ids.len() * dim {
            return Err(Error::Invalid(format!(
                "{} values for {} rows of dimension {dim}",
                data.len(),
                ids.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        Ok(Self { ids, dim, data })
    }

    /// Encodes every document at inference limits, in parallel, keeping
    /// corpus order.
    pub fn encode(model: &GraphDocModel, corpus: &[Document]) -> Result<Self> {
        let rows = model.encode_corpus(corpus)?;
        let dim = model.config().d_model;
        Self::new(
            corpus.iter().map(|d| d.id.clone()).collect(),
            dim,
            rows.into_iter().flatten().collect(),
        )
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// `doc_id<TAB>v_1<TAB>…<TAB>v_d`, values printed to round-trip exactly.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (i, id) in self.ids.iter().enumerate() {
            out.push_str(id);
            for v in self.row(i) {
                out.push('\t');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        out
    }

    pub fn from_tsv(text: &str, source: &str) -> Result<Self> {
        let mut ids = Vec::new();
        let mut data = Vec::new();
        let mut dim = None;
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let err = |reason: String| Error::Parse {
                path: source.to_string(),
                line: i + 1,
                reason,
            };
            let mut fields = line.split('\t');
            let id = fields.next().unwrap_or_default();
            let values = fields
                .map(|f| f.parse::<f64>().map_err(|_| err(format!("bad value `{f}`"))))
                .collect::<Result<Vec<_>>>()?;
            match dim {
                None => dim = Some(values.len()),
                Some(d) if d != values.len() => return Err(err(format!("expected {d} values, found {}", values.len()))),
                _ => {}
            }
            ids.push(id.to_string());
            data.extend(values);
        }
        Self::new(ids, dim.unwrap_or(0), data)
    }
}

/// Top `k` documents by dot product with `query`, ties by ascending id.
pub fn dense_search(index: &DenseIndex, query: &[f64], k: usize) -> Result<Vec<Hit>> {
    if query.len() != index.dim {
        return Err(Error::Invalid(format!(
            "query has dimension {}, index has {}",
            query.len(),
            index.dim
        )));
    }
    let hits = (0..index.len())
        .map(|i| {
            let score = index.row(i).iter().zip(query).map(|(a, b)| a * b).sum();
            Hit::new(index.ids[i].clone(), score)
        })
        .collect();
    Ok(rank_hits(hits, k))
}
