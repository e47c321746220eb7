use std::fmt::Write as _;

use super::PipelineError;
use crate::bridge::{conditional_path, conditional_velocity, Scheduler};

pub const MAX_INSPECT_K: usize = 16;

/// CSV of the conditional path on a uniform grid of `n_grid + 1` times: columns
/// `t, p0..p{K-1}, v0..v{K-1}`, where `v` is the probability flux
/// Σ_xs p_t(xs) v_t(·|xs) induced by the conditional velocity.
pub fn inspect_path(x0: usize, x1: usize, k: usize, sigma: f64, n_grid: usize) -> Result<String, PipelineError> {
    if !(2..=MAX_INSPECT_K).contains(&k) {
        return Err(PipelineError::Config(format!("K = {k} outside 2..={MAX_INSPECT_K}")));
    }
    if n_grid == 0 {
        return Err(PipelineError::Config("n_grid must be at least 1".into()));
    }
    let scheduler = Scheduler::new(sigma)?;
    let mut out = String::from("t");
    (0..k).for_each(|i| write!(out, ",p{i}").unwrap());
    (0..k).for_each(|i| write!(out, ",v{i}").unwrap());
    out.push('\n');
    for g in 0..=n_grid {
        let t = g as f64 / n_grid as f64;
        let st = scheduler.state(t)?;
        let p = conditional_path(x0, x1, &st, k)?;
        let mut flux = vec![0.0; k];
        for (xs, &w) in p.probs().iter().enumerate() {
            if w > 0.0 {
                let v = conditional_velocity(xs, x0, x1, &st, k)?;
                flux.iter_mut().zip(&v.values).for_each(|(f, x)| *f += w * x);
            }
        }
        write!(out, "{t}").unwrap();
        p.probs().iter().chain(&flux).for_each(|x| write!(out, ",{x}").unwrap());
        out.push('\n');
    }
    Ok(out)
}
