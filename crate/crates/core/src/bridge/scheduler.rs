use super::BridgeError;

/// Default clamp margin for rate and γ evaluation near the endpoints.
pub const DEFAULT_EPS: f64 = 1e-3;

/// Noise schedule α_t = (1−σ√(t(1−t)))(1−t), β_t = (1−σ√(t(1−t)))t, σ_t = σ√(t(1−t)).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scheduler {
    pub sigma: f64,
    pub eps: f64,
}

/// Coefficients of the probability path at one time, with their derivatives and the
/// retention rate γ.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SchedulerState {
    pub t: f64,
    pub alpha: f64,
    pub beta: f64,
    pub sigma_t: f64,
    pub d_alpha: f64,
    pub d_beta: f64,
    pub d_sigma: f64,
    /// min(α̇/α, β̇/β, σ̇/σ_t) at the clamped time; used when marching 0 → 1.
    pub gamma: f64,
    /// max(α̇/α, β̇/β, σ̇/σ_t) at the clamped time; the γ of the time-reversed
    /// bridge, used when marching 1 → 0.
    pub gamma_reverse: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Direction {
    /// Reactants to products, t increasing.
    Forward,
    /// Products to reactants, t decreasing.
    Reverse,
}

impl Direction {
    pub fn task_token(self) -> usize {
        match self {
            Direction::Forward => 0,
            Direction::Reverse => 1,
        }
    }
}

impl Default for Scheduler {
    fn default() -> Self {
        Scheduler { sigma: 1.0, eps: DEFAULT_EPS }
    }
}

impl Scheduler {
    pub fn new(sigma: f64) -> Result<Scheduler, BridgeError> {
        Scheduler { sigma, eps: DEFAULT_EPS }.validated()
    }

    pub fn with_eps(sigma: f64, eps: f64) -> Result<Scheduler, BridgeError> {
        Scheduler { sigma, eps }.validated()
    }

    fn validated(self) -> Result<Scheduler, BridgeError> {
        if !(0.0..=2.0).contains(&self.sigma) {
            return Err(BridgeError::Argument(format!("sigma {} outside [0, 2]", self.sigma)));
        }
        if !(self.eps > 0.0 && self.eps < 0.5) {
            return Err(BridgeError::Argument(format!("eps {} outside (0, 0.5)", self.eps)));
        }
        Ok(self)
    }

    /// (α_t, β_t, σ_t) at `t`.
    pub fn coefficients(&self, t: f64) -> (f64, f64, f64) {
        let s = self.sigma * (t * (1.0 - t)).max(0.0).sqrt();
        ((1.0 - s) * (1.0 - t), (1.0 - s) * t, s)
    }

    /// Analytic (α̇, β̇, σ̇) at `t`; singular at the endpoints when σ > 0.
    pub fn derivatives(&self, t: f64) -> (f64, f64, f64) {
        let root = (t * (1.0 - t)).sqrt();
        let s = self.sigma * root;
        let ds = if self.sigma == 0.0 { 0.0 } else { self.sigma * (1.0 - 2.0 * t) / (2.0 * root) };
        (-ds * (1.0 - t) - (1.0 - s), -ds * t + (1.0 - s), ds)
    }

    pub fn state(&self, t: f64) -> Result<SchedulerState, BridgeError> {
        if !(0.0..=1.0).contains(&t) || t.is_nan() {
            return Err(BridgeError::Argument(format!("time {t} outside [0, 1]")));
        }
        let (alpha, beta, sigma_t) = self.coefficients(t);
        let tc = t.clamp(self.eps, 1.0 - self.eps);
        let (d_alpha, d_beta, d_sigma) = self.derivatives(tc);
        let (ac, bc, sc) = self.coefficients(tc);
        let rates: Vec<f64> = [(d_alpha, ac), (d_beta, bc), (d_sigma, sc)]
            .iter()
            .filter(|(_, value)| *value > 0.0)
            .map(|(d, value)| d / value)
            .collect();
        let gamma = rates.iter().copied().fold(f64::INFINITY, f64::min);
        let gamma_reverse = rates.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(SchedulerState { t, alpha, beta, sigma_t, d_alpha, d_beta, d_sigma, gamma, gamma_reverse })
    }

    /// Same schedule with σ_t forced to zero, as used at prediction time.
    pub fn noiseless(&self) -> Scheduler {
        Scheduler { sigma: 0.0, eps: self.eps }
    }
}

impl SchedulerState {
    pub fn gamma_for(&self, direction: Direction) -> f64 {
        match direction {
            Direction::Forward => self.gamma,
            Direction::Reverse => self.gamma_reverse,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints() {
        let s = Scheduler::new(1.0).unwrap();
        let st = s.state(0.0).unwrap();
        assert_eq!((st.alpha, st.beta, st.sigma_t), (1.0, 0.0, 0.0));
        let st = s.state(1.0).unwrap();
        assert_eq!((st.alpha, st.beta, st.sigma_t), (0.0, 1.0, 0.0));
    }

    // Hand evaluation at t = 1/2, σ = 1: √(t(1−t)) = 1/2 and its derivative vanishes,
    // so α̇ = −(1 − 1/2) and β̇ = +(1 − 1/2); γ = min(−2, 2, 0).
    #[test]
    fn midpoint_values() {
        let st = Scheduler::new(1.0).unwrap().state(0.5).unwrap();
        assert!((st.sigma_t - 0.5).abs() < 1e-15);
        assert!((st.alpha - 0.25).abs() < 1e-15);
        assert!((st.beta - 0.25).abs() < 1e-15);
        assert!((st.d_alpha + 0.5).abs() < 1e-15);
        assert!((st.d_beta - 0.5).abs() < 1e-15);
        assert!(st.d_sigma.abs() < 1e-15);
        assert!((st.gamma + 2.0).abs() < 1e-12);
        assert!((st.gamma_reverse - 2.0).abs() < 1e-12);
    }

    #[test]
    fn sigma_zero_drops_noise_rate() {
        let st = Scheduler::new(0.0).unwrap().state(0.25).unwrap();
        assert_eq!(st.sigma_t, 0.0);
        assert!((st.gamma + 1.0 / 0.75).abs() < 1e-12);
        assert!((st.gamma_reverse - 4.0).abs() < 1e-12);
    }

    #[test]
    fn sigma_two_midpoint_has_no_alpha_beta() {
        let st = Scheduler::new(2.0).unwrap().state(0.5).unwrap();
        assert!(st.alpha.abs() < 1e-15 && st.beta.abs() < 1e-15);
        assert!((st.sigma_t - 1.0).abs() < 1e-15);
        assert!(st.gamma.is_finite());
    }

    #[test]
    fn rejects_bad_arguments() {
        let s = Scheduler::new(1.0).unwrap();
        assert!(s.state(-0.1).is_err());
        assert!(s.state(1.5).is_err());
        assert!(s.state(f64::NAN).is_err());
        assert!(Scheduler::new(2.5).is_err());
        assert!(Scheduler::new(-1.0).is_err());
    }

    #[test]
    fn clamped_rates_are_finite_at_endpoints() {
        for sigma in [0.0, 0.5, 1.0, 2.0] {
            let s = Scheduler::new(sigma).unwrap();
            for t in [0.0, 1.0] {
                let st = s.state(t).unwrap();
                assert!(st.gamma.is_finite() && st.d_sigma.is_finite());
                assert!((st.d_alpha + st.d_beta + st.d_sigma).abs() < 1e-12);
            }
        }
    }
}
