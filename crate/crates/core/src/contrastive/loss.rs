use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradcore::{Tape, Tensor, Var};

/// Score function between sub-document embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Similarity {
    /// Raw dot products, no temperature.
    #[default]
    Dot,
    /// Cosine similarity divided by `temperature`.
    Cosine { temperature: f64 },
}

fn score_matrix(tape: &mut Tape, a: Var, b: Var, similarity: Similarity) -> Result<Var> {
    let (ra, rb) = (tape.value(a).rows(), tape.value(b).rows());
    if ra != rb {
        return Err(Error::Invalid(format!("{ra} anchor rows vs {rb} candidate rows")));
    }
    if ra == 0 {
        return Err(Error::Invalid("empty batch".into()));
    }
    Ok(match similarity {
        Similarity::Dot => tape.linear(a, b)?,
        Similarity::Cosine { temperature } => {
            if temperature.is_nan() || temperature <= 0.0 {
                return Err(Error::Invalid(format!("temperature {temperature} must be positive")));
            }
            let a = tape.l2_normalize_rows(a)?;
            let b = tape.l2_normalize_rows(b)?;
            let s = tape.linear(a, b)?;
            tape.scale(s, 1.0 / temperature)?
        }
    })
}

/// Symmetric in-batch NCE: row `i` of `first` pairs with row `i` of
/// `second`, every other row is a negative. Each direction is averaged over
/// the batch and the two directions are averaged.
pub fn nce_loss(tape: &mut Tape, first: Var, second: Var, similarity: Similarity) -> Result<Var> {
    let scores = score_matrix(tape, first, second, similarity)?;
    let n = tape.value(scores).rows();
    let targets: Vec<usize> = (0..n).collect();
    let forward = tape.cross_entropy(scores, targets.clone())?;
    let transposed = tape.transpose(scores)?;
    let backward = tape.cross_entropy(transposed, targets)?;
    let total = tape.add(forward, backward)?;
    Ok(tape.scale(total, 0.5)?)
}

/// Only the anchor-to-candidates direction: each anchor must pick its own
/// candidate out of all candidates in the batch.
pub fn nce_loss_one_sided(tape: &mut Tape, anchors: Var, candidates: Var, similarity: Similarity) -> Result<Var> {
    let scores = score_matrix(tape, anchors, candidates, similarity)?;
    let n = tape.value(scores).rows();
    Ok(tape.cross_entropy(scores, (0..n).collect())?)
}

/// [`nce_loss`] on concrete embedding matrices.
pub fn nce_loss_value(first: &Tensor, second: &Tensor, similarity: Similarity) -> Result<f64> {
    let mut tape = Tape::new();
    let a = tape.input(first.clone())?;
    let b = tape.input(second.clone())?;
    let l = nce_loss(&mut tape, a, b, similarity)?;
    Ok(tape.value(l).data()[0])
}

/// [`nce_loss_one_sided`] on concrete embedding matrices.
pub fn nce_loss_one_sided_value(anchors: &Tensor, candidates: &Tensor, similarity: Similarity) -> Result<f64> {
    let mut tape = Tape::new();
    let a = tape.input(anchors.clone())?;
    let b = tape.input(candidates.clone())?;
    let l = nce_loss_one_sided(&mut tape, a, b, similarity)?;
    Ok(tape.value(l).data()[0])
}
