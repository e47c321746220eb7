use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{io_err, reaction_lines, read_text, PipelineError};
use crate::chemgraph::{align_reaction, parse_smiles, split_reaction, write_canonical_smiles, ReactionError};

pub const REJECTION_LOG: &str = "rejected.tsv";
const SPLIT_NAMES: [&str; 3] = ["train.rxn", "valid.rxn", "test.rxn"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IngestSummary {
    /// Reaction lines read (blank and `#` lines are not counted).
    pub lines: usize,
    pub accepted: usize,
    pub rejected: usize,
    /// Sizes of the train, valid and test splits.
    pub splits: [usize; 3],
}

/// Canonical mapped form of an accepted line, reagents dropped.
fn canonical_reaction(rxn: &str) -> Result<String, ReactionError> {
    align_reaction(rxn)?;
    let (lhs, rhs) = split_reaction(rxn)?;
    let r = write_canonical_smiles(&parse_smiles(lhs)?, true);
    let p = write_canonical_smiles(&parse_smiles(rhs)?, true);
    Ok(format!("{r}>>{p}"))
}

/// Validates every reaction of `input`, writes the accepted ones as a seeded
/// train/valid/test split into `out_dir` and the rest to a rejection log
/// (`line<TAB>reason<TAB>detail`).
pub fn ingest(input: &Path, out_dir: &Path, fractions: [f64; 3], seed: u64) -> Result<IngestSummary, PipelineError> {
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(PipelineError::Config(format!("split fractions {fractions:?} must be non-negative and sum to 1")));
    }
    let text = read_text(input)?;
    let mut accepted = Vec::new();
    let mut log = String::from("line\treason\tdetail\n");
    let mut lines = 0;
    for (line, rxn) in reaction_lines(&text) {
        lines += 1;
        match canonical_reaction(rxn) {
            Ok(c) => accepted.push(c),
            Err(e) => writeln!(log, "{line}\t{}\t{e}", e.reason()).unwrap(),
        }
    }
    if accepted.is_empty() {
        return Err(PipelineError::Data(format!("{}: no reaction survived filtering", input.display())));
    }

    let n = accepted.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (fractions[0] * n as f64).round() as usize;
    let n_valid = ((fractions[1] * n as f64).round() as usize).min(n - n_train);
    let bounds = [0, n_train, n_train + n_valid, n];

    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut splits = [0; 3];
    for (s, name) in SPLIT_NAMES.iter().enumerate() {
        let mut idx = order[bounds[s]..bounds[s + 1]].to_vec();
        idx.sort_unstable();
        let body: String = idx.iter().map(|&i| format!("{}\n", accepted[i])).collect();
        let path = out_dir.join(name);
        fs::write(&path, body).map_err(io_err(&path))?;
        splits[s] = idx.len();
    }
    let path = out_dir.join(REJECTION_LOG);
    fs::write(&path, log).map_err(io_err(&path))?;
    Ok(IngestSummary { lines, accepted: n, rejected: lines - n, splits })
}
