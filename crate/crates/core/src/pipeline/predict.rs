use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use super::{io_err, load_reactions, read_text, PipelineError};
use crate::bridge::Direction;
use crate::chemgraph::ReactionPair;
use crate::model::Model;
use crate::train::{derived_rng, load_checkpoint, prediction_smiles, sample, SampleRequest};

pub fn parse_direction(s: &str) -> Result<Direction, PipelineError> {
    match s {
        "forward" => Ok(Direction::Forward),
        "retro" => Ok(Direction::Reverse),
        other => Err(PipelineError::Config(format!("direction must be forward or retro, got {other:?}"))),
    }
}

fn direction_name(d: Direction) -> &'static str {
    match d {
        Direction::Forward => "forward",
        Direction::Reverse => "retro",
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PredictRequest {
    pub direction: Direction,
    pub n_samples: usize,
    pub n_steps: usize,
    pub sigma: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Candidate {
    pub smiles: String,
    pub freq: usize,
}

/// Ranked candidates for one input plus the number of samples that failed to decode.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Prediction {
    pub candidates: Vec<Candidate>,
    pub invalid: usize,
}

/// Deduplicates decoded samples and ranks them by descending frequency, ties broken
/// by first occurrence; `None` entries count as invalid.
pub fn rank_candidates<I: IntoIterator<Item = Option<String>>>(samples: I) -> Prediction {
    let mut out = Prediction::default();
    for s in samples {
        match s {
            None => out.invalid += 1,
            Some(smiles) => match out.candidates.iter_mut().find(|c| c.smiles == smiles) {
                Some(c) => c.freq += 1,
                None => out.candidates.push(Candidate { smiles, freq: 1 }),
            },
        }
    }
    // Stable sort keeps first-occurrence order among equal counts.
    out.candidates.sort_by_key(|c| std::cmp::Reverse(c.freq));
    out
}

/// Samples every input in parallel; input `i` draws from its own stream so results do
/// not depend on scheduling.
pub fn predict(model: &Model, inputs: &[ReactionPair], req: &PredictRequest) -> Result<Vec<Prediction>, PipelineError> {
    let sreq = SampleRequest { n_samples: req.n_samples, n_steps: req.n_steps, sigma: req.sigma };
    inputs
        .par_iter()
        .enumerate()
        .map(|(i, pair)| {
            let src = match req.direction {
                Direction::Forward => &pair.reactants,
                Direction::Reverse => &pair.product,
            };
            let mut rng = derived_rng(req.seed, i as u64);
            let graphs = sample(model, src, req.direction, &sreq, &mut rng)?;
            Ok(rank_candidates(graphs.iter().map(prediction_smiles)))
        })
        .collect()
}

/// Header comment, column names, then `id<TAB>rank<TAB>freq<TAB>smiles` rows.
pub fn write_predictions(preds: &[Prediction], req: &PredictRequest) -> String {
    let invalid: usize = preds.iter().map(|p| p.invalid).sum();
    let mut out = format!(
        "# direction={} inputs={} n_samples={} n_steps={} sigma={} seed={} invalid={invalid}\nid\trank\tfreq\tsmiles\n",
        direction_name(req.direction),
        preds.len(),
        req.n_samples,
        req.n_steps,
        req.sigma,
        req.seed,
    );
    for (id, p) in preds.iter().enumerate() {
        for (rank, c) in p.candidates.iter().enumerate() {
            writeln!(out, "{id}\t{}\t{}\t{}", rank + 1, c.freq, c.smiles).unwrap();
        }
    }
    out
}

/// A parsed predictions file.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionFile {
    pub direction: Direction,
    pub n_samples: usize,
    pub invalid: usize,
    /// Candidate SMILES per input, in rank order.
    pub candidates: Vec<Vec<String>>,
}

pub fn read_predictions(path: &Path) -> Result<PredictionFile, PipelineError> {
    let text = read_text(path)?;
    let bad = |line: usize, msg: String| PipelineError::Parse { path: path.to_path_buf(), line, msg };
    let mut lines = text.lines().enumerate();
    let header = lines.next().and_then(|(_, l)| l.strip_prefix("# ")).ok_or_else(|| bad(1, "missing header".into()))?;
    let mut fields = std::collections::HashMap::new();
    for kv in header.split_whitespace() {
        if let Some((k, v)) = kv.split_once('=') {
            fields.insert(k, v);
        }
    }
    let get = |k: &str| fields.get(k).copied().ok_or_else(|| bad(1, format!("header lacks {k}")));
    let int = |k: &str| get(k)?.parse::<usize>().map_err(|_| bad(1, format!("bad {k}")));
    let direction = parse_direction(get("direction")?)?;
    let mut candidates = vec![Vec::new(); int("inputs")?];
    for (i, line) in lines {
        if line.is_empty() || line.starts_with("id\t") {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 {
            return Err(bad(i + 1, "expected 4 tab-separated fields".into()));
        }
        let id: usize = f[0].parse().map_err(|_| bad(i + 1, "bad id".into()))?;
        let rank: usize = f[1].parse().map_err(|_| bad(i + 1, "bad rank".into()))?;
        let list = candidates.get_mut(id).ok_or_else(|| bad(i + 1, format!("id {id} beyond inputs")))?;
        if rank != list.len() + 1 {
            return Err(bad(i + 1, format!("rank {rank} out of order")));
        }
        list.push(f[3].to_string());
    }
    Ok(PredictionFile { direction, n_samples: int("n_samples")?, invalid: int("invalid")?, candidates })
}

/// Loads a checkpoint, predicts every reaction of `input` and writes `output`.
pub fn predict_file(
    checkpoint: &Path,
    input: &Path,
    output: &Path,
    req: &PredictRequest,
) -> Result<Vec<Prediction>, PipelineError> {
    let model = load_checkpoint(checkpoint)?.model;
    let inputs = load_reactions(input)?;
    let preds = predict(&model, &inputs, req)?;
    fs::write(output, write_predictions(&preds, req)).map_err(io_err(output))?;
    Ok(preds)
}
