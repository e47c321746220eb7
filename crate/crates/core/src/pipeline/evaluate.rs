use std::fmt;
use std::path::Path;

use super::{load_reactions, read_predictions, PipelineError, PredictionFile};
use crate::bridge::Direction;
use crate::chemgraph::graph_smiles;

pub const TOP_K: [usize; 3] = [1, 3, 5];

/// Component-sorted form of a dot-joined SMILES, so component order never matters.
pub fn normalize_smiles(s: &str) -> String {
    let mut parts: Vec<&str> = s.split('.').filter(|p| !p.is_empty()).collect();
    parts.sort_unstable();
    parts.join(".")
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub direction: Direction,
    pub inputs: usize,
    pub n_samples: usize,
    pub invalid: usize,
    /// Inputs with the truth among the top k, for each k in [`TOP_K`].
    pub hits: [usize; 3],
    /// 1-based rank of the truth per input, if present.
    pub ranks: Vec<Option<usize>>,
}

impl EvalReport {
    pub fn accuracy(&self, k: usize) -> f64 {
        if self.inputs == 0 {
            return 0.0;
        }
        let hits = self.ranks.iter().filter(|r| r.is_some_and(|r| r <= k)).count();
        hits as f64 / self.inputs as f64
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let dir = match self.direction {
            Direction::Forward => "forward",
            Direction::Reverse => "retro",
        };
        writeln!(f, "direction={dir}")?;
        writeln!(f, "inputs={}", self.inputs)?;
        for k in TOP_K {
            writeln!(f, "top{k}={:.6}", self.accuracy(k))?;
        }
        writeln!(f, "samples={}", self.inputs * self.n_samples)?;
        writeln!(f, "invalid={}", self.invalid)
    }
}

/// Scores ranked candidates against one truth string per input.
pub fn evaluate(preds: &PredictionFile, truth: &[String]) -> Result<EvalReport, PipelineError> {
    if preds.candidates.len() != truth.len() {
        return Err(PipelineError::Data(format!(
            "{} prediction lists for {} ground-truth reactions",
            preds.candidates.len(),
            truth.len()
        )));
    }
    let ranks: Vec<Option<usize>> = preds
        .candidates
        .iter()
        .zip(truth)
        .map(|(cands, t)| {
            let t = normalize_smiles(t);
            cands.iter().position(|c| normalize_smiles(c) == t).map(|i| i + 1)
        })
        .collect();
    let hits = TOP_K.map(|k| ranks.iter().filter(|r| r.is_some_and(|r| r <= k)).count());
    Ok(EvalReport {
        direction: preds.direction,
        inputs: truth.len(),
        n_samples: preds.n_samples,
        invalid: preds.invalid,
        hits,
        ranks,
    })
}

/// Reads predictions and the reaction file they were made from; the truth is the
/// product (forward) or the reactant set (retro) in canonical map-free form.
pub fn evaluate_files(predictions: &Path, reactions: &Path) -> Result<EvalReport, PipelineError> {
    let preds = read_predictions(predictions)?;
    let truth: Vec<String> = load_reactions(reactions)?
        .iter()
        .map(|p| {
            let g = match preds.direction {
                Direction::Forward => &p.product,
                Direction::Reverse => &p.reactants,
            };
            graph_smiles(g).unwrap_or_default()
        })
        .collect();
    evaluate(&preds, &truth)
}
