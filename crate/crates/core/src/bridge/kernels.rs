use rand::Rng;

use super::scheduler::{Direction, Scheduler, SchedulerState};
use super::BridgeError;

const SUM_TOL: f64 = 1e-9;

/// Probability vector over K classes.
#[derive(Clone, Debug, PartialEq)]
pub struct Categorical {
    probs: Vec<f64>,
}

impl Categorical {
    pub fn new(probs: Vec<f64>) -> Result<Categorical, BridgeError> {
        if probs.is_empty() {
            return Err(BridgeError::Categorical("empty".into()));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(BridgeError::Categorical("negative or non-finite entry".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > SUM_TOL {
            return Err(BridgeError::Categorical(format!("entries sum to {total}")));
        }
        Ok(Categorical { probs })
    }

    pub fn one_hot(class: usize, k: usize) -> Result<Categorical, BridgeError> {
        check_class(class, k)?;
        let mut probs = vec![0.0; k];
        probs[class] = 1.0;
        Ok(Categorical { probs })
    }

    pub fn uniform(k: usize) -> Categorical {
        assert!(k > 0, "uniform over zero classes");
        Categorical { probs: vec![1.0 / k as f64; k] }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn k(&self) -> usize {
        self.probs.len()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.probs
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample_index(&self.probs, rng)
    }

    pub fn total_variation(&self, other: &[f64]) -> f64 {
        0.5 * self.probs.iter().zip(other).map(|(a, b)| (a - b).abs()).sum::<f64>()
    }
}

/// Rate vector over K classes; entries sum to zero.
#[derive(Clone, Debug, PartialEq)]
pub struct SignedVelocity {
    pub values: Vec<f64>,
}

impl SignedVelocity {
    pub fn zeros(k: usize) -> SignedVelocity {
        SignedVelocity { values: vec![0.0; k] }
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }
}

fn check_class(class: usize, k: usize) -> Result<(), BridgeError> {
    if class >= k {
        Err(BridgeError::ClassOutOfRange { class, k })
    } else {
        Ok(())
    }
}

/// Inverse-CDF draw; falls back to the last positive entry against round-off.
pub(crate) fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let total: f64 = probs.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            if u < p {
                return i;
            }
            u -= p;
            last = i;
        }
    }
    last
}

/// p_t = α_t δ_{x0} + β_t δ_{x1} + σ_t U.
pub fn conditional_path(x0: usize, x1: usize, st: &SchedulerState, k: usize) -> Result<Categorical, BridgeError> {
    check_class(x0, k)?;
    check_class(x1, k)?;
    let mut probs = vec![st.sigma_t / k as f64; k];
    probs[x0] += st.alpha;
    probs[x1] += st.beta;
    Ok(Categorical { probs })
}

/// Either endpoint term: a known class or a predicted distribution.
#[derive(Clone, Copy)]
enum Endpoint<'a> {
    Class(usize),
    Probs(&'a [f64]),
}

impl Endpoint<'_> {
    fn add_into(self, out: &mut [f64], weight: f64) {
        match self {
            Endpoint::Class(c) => out[c] += weight,
            Endpoint::Probs(p) => {
                for (o, q) in out.iter_mut().zip(p) {
                    *o += weight * q;
                }
            }
        }
    }
}

fn combine(xs: usize, p0: Endpoint, p1: Endpoint, st: &SchedulerState, gamma: f64, out: &mut [f64]) {
    // Coefficients at the true t with rates at the clamped t: at an exact endpoint
    // the far-side terms vanish and a step collapses onto the reached endpoint.
    let k = out.len();
    let noise = (st.d_sigma - st.sigma_t * gamma) / k as f64;
    out.iter_mut().for_each(|o| *o = noise);
    p0.add_into(out, st.d_alpha - st.alpha * gamma);
    p1.add_into(out, st.d_beta - st.beta * gamma);
    out[xs] += gamma;
}

/// Velocity of the conditional path toward `x1`, evaluated in the forward direction.
pub fn conditional_velocity(
    xs: usize,
    x0: usize,
    x1: usize,
    st: &SchedulerState,
    k: usize,
) -> Result<SignedVelocity, BridgeError> {
    conditional_velocity_in(xs, x0, x1, st, Direction::Forward, k)
}

/// As [`conditional_velocity`], with the retention rate of the given direction.
pub fn conditional_velocity_in(
    xs: usize,
    x0: usize,
    x1: usize,
    st: &SchedulerState,
    direction: Direction,
    k: usize,
) -> Result<SignedVelocity, BridgeError> {
    check_class(xs, k)?;
    check_class(x0, k)?;
    check_class(x1, k)?;
    let mut v = SignedVelocity::zeros(k);
    combine(xs, Endpoint::Class(x0), Endpoint::Class(x1), st, st.gamma_for(direction), &mut v.values);
    Ok(v)
}

/// Velocity with the unknown endpoint replaced by model probabilities.
///
/// Forward: `x_cond` is the start class and `model` stands in for δ_{x1}.
/// Reverse: `x_cond` is the end class and `model` stands in for δ_{x0}.
pub fn parameterized_velocity(
    xs: usize,
    x_cond: usize,
    model: &Categorical,
    st: &SchedulerState,
    direction: Direction,
    k: usize,
) -> Result<SignedVelocity, BridgeError> {
    let mut v = SignedVelocity::zeros(k);
    parameterized_velocity_into(xs, x_cond, model.probs(), st, direction, &mut v.values)?;
    Ok(v)
}

/// Allocation-free form of [`parameterized_velocity`]; K is `out.len()`.
pub fn parameterized_velocity_into(
    xs: usize,
    x_cond: usize,
    model: &[f64],
    st: &SchedulerState,
    direction: Direction,
    out: &mut [f64],
) -> Result<(), BridgeError> {
    let k = out.len();
    if model.len() != k {
        return Err(BridgeError::Categorical(format!("model has {} classes, expected {k}", model.len())));
    }
    check_class(xs, k)?;
    check_class(x_cond, k)?;
    let (p0, p1) = match direction {
        Direction::Forward => (Endpoint::Class(x_cond), Endpoint::Probs(model)),
        Direction::Reverse => (Endpoint::Probs(model), Endpoint::Class(x_cond)),
    };
    combine(xs, p0, p1, st, st.gamma_for(direction), out);
    Ok(())
}

/// One-step distribution δ_current + h·v with negatives clipped and renormalized.
/// Falls back to δ_current if nothing positive remains.
pub fn step_distribution(current: usize, v: &[f64], h: f64) -> Vec<f64> {
    let mut p: Vec<f64> = v.iter().map(|x| (h * x).max(0.0)).collect();
    p[current] = (1.0 + h * v[current]).max(0.0);
    let total: f64 = p.iter().sum();
    if total > 0.0 && total.is_finite() {
        p.iter_mut().for_each(|x| *x /= total);
    } else {
        p.iter_mut().for_each(|x| *x = 0.0);
        p[current] = 1.0;
    }
    p
}

/// Samples the next class from [`step_distribution`].
pub fn euler_step<R: Rng + ?Sized>(
    current: usize,
    v: &SignedVelocity,
    h: f64,
    rng: &mut R,
) -> Result<usize, BridgeError> {
    if !(h > 0.0 && h <= 1.0) {
        return Err(BridgeError::Argument(format!("step size {h} outside (0, 1]")));
    }
    check_class(current, v.values.len())?;
    Ok(sample_index(&step_distribution(current, &v.values, h), rng))
}

/// Analytic marginals p_t for each time in `t_grid`; small alphabets only.
pub fn enumerate_marginal(
    x0: usize,
    x1: usize,
    s: &Scheduler,
    k: usize,
    t_grid: &[f64],
) -> Result<Vec<Categorical>, BridgeError> {
    if k > 16 {
        return Err(BridgeError::Argument(format!("alphabet of {k} too large to enumerate")));
    }
    t_grid.iter().map(|&t| conditional_path(x0, x1, &s.state(t)?, k)).collect()
}

/// Simulates `particles` independent Euler trajectories from `x0` over `n_steps`
/// uniform steps, with the oracle model δ_{x1}, and returns the empirical marginal
/// at each grid time k/n_steps (n_steps + 1 histograms).
pub fn simulate_euler_marginals<R: Rng + ?Sized>(
    x0: usize,
    x1: usize,
    s: &Scheduler,
    k: usize,
    n_steps: usize,
    particles: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>, BridgeError> {
    check_class(x0, k)?;
    check_class(x1, k)?;
    if n_steps == 0 || particles == 0 {
        return Err(BridgeError::Argument("need at least one step and one particle".into()));
    }
    let h = 1.0 / n_steps as f64;
    let oracle = Categorical::one_hot(x1, k)?;
    let mut counts = vec![0usize; k];
    counts[x0] = particles;
    let mut out = vec![normalize_counts(&counts, particles)];
    // Every particle in the same class shares a step distribution.
    for step in 0..n_steps {
        let st = s.state(((step + 1) as f64 * h).min(1.0))?;
        let mut next = vec![0usize; k];
        let mut v = vec![0.0; k];
        for (xs, &count) in counts.iter().enumerate() {
            if count == 0 {
                continue;
            }
            parameterized_velocity_into(xs, x0, oracle.probs(), &st, Direction::Forward, &mut v)?;
            let p = step_distribution(xs, &v, h);
            for _ in 0..count {
                next[sample_index(&p, rng)] += 1;
            }
        }
        counts = next;
        out.push(normalize_counts(&counts, particles));
    }
    Ok(out)
}

fn normalize_counts(counts: &[usize], total: usize) -> Vec<f64> {
    counts.iter().map(|&c| c as f64 / total as f64).collect()
}
