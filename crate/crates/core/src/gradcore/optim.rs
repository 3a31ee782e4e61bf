use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::tensor::{shape_err, ParamStore, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled decay, applied as `θ ← θ − lr·wd·θ` before the moment update.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// First and second moments per parameter path, plus the step counter.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    moments: BTreeMap<String, (Tensor, Tensor)>,
    step: u64,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn with_step(step: u64) -> Self {
        Self {
            moments: BTreeMap::new(),
            step,
        }
    }

    pub fn moments(&self, path: &str) -> Option<(&Tensor, &Tensor)> {
        self.moments.get(path).map(|(m, v)| (m, v))
    }
}

/// One AdamW update over every parameter that has a gradient in `grads`.
///
/// Parameters absent from `grads` are left untouched (frozen) and their
/// moments are not advanced.
pub fn adam_step(
    params: &mut ParamStore,
    grads: &ParamStore,
    state: &mut AdamState,
    lr: f64,
    config: &AdamConfig,
) -> Result<(), TensorError> {
    if lr.is_nan() || lr < 0.0 {
        return Err(TensorError::Invalid(format!("learning rate {lr} is negative")));
    }
    for (path, g) in grads.iter() {
        let p = params.require(path)?;
        if p.shape() != g.shape() {
            return Err(shape_err("adam_step", format!("gradient for {path} is {:?}, parameter is {:?}", g.shape(), p.shape())));
        }
        if let Some((m, _)) = state.moments.get(path) {
            if m.shape() != p.shape() {
                return Err(shape_err("adam_step", format!("moment for {path} is {:?}", m.shape())));
            }
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let bias1 = 1.0 - config.beta1.powi(t);
    let bias2 = 1.0 - config.beta2.powi(t);

    for (path, g) in grads.iter() {
        let p = params.get_mut(path).expect("checked above");
        let (m, v) = state
            .moments
            .entry(path.to_string())
            .or_insert_with(|| (Tensor::zeros(g.shape()), Tensor::zeros(g.shape())));
        let decay = lr * config.weight_decay;
        for (((theta, &gi), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *theta -= decay * *theta;
            *mi = config.beta1 * *mi + (1.0 - config.beta1) * gi;
            *vi = config.beta2 * *vi + (1.0 - config.beta2) * gi * gi;
            let m_hat = *mi / bias1;
            let v_hat = *vi / bias2;
            *theta -= lr * m_hat / (v_hat.sqrt() + config.eps);
        }
    }
    Ok(())
}

/// Shape of the learning rate after warmup.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schedule {
    Constant,
    #[default]
    LinearDecay,
}

impl std::str::FromStr for Schedule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "constant" => Ok(Schedule::Constant),
            "linear-decay" | "linear" => Ok(Schedule::LinearDecay),
            other => Err(format!("unknown schedule `{other}`")),
        }
    }
}

impl std::fmt::Display for Schedule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Schedule::Constant => "constant",
            Schedule::LinearDecay => "linear-decay",
        })
    }
}

/// Linear warmup over the first `warmup_rate·total_steps` steps, then either
/// constant or linear decay to zero at `total_steps`.
pub fn learning_rate(
    step: usize,
    total_steps: usize,
    base_lr: f64,
    warmup_rate: f64,
    schedule: Schedule,
) -> Result<f64, TensorError> {
    if total_steps == 0 {
        return Err(TensorError::Invalid("total_steps must be positive".into()));
    }
    if step > total_steps {
        return Err(TensorError::Invalid(format!("step {step} beyond total {total_steps}")));
    }
    if !(0.0..1.0).contains(&warmup_rate) {
        return Err(TensorError::Invalid(format!("warmup rate {warmup_rate} outside [0, 1)")));
    }
    let step = step as f64;
    let total = total_steps as f64;
    let warmup = warmup_rate * total;
    if step < warmup {
        return Ok(base_lr * step / warmup);
    }
    Ok(match schedule {
        Schedule::Constant => base_lr,
        Schedule::LinearDecay => base_lr * (total - step) / (total - warmup),
    })
}

/// Learning-rate settings shared by every training loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub lr: f64,
    pub warmup: f64,
    pub schedule: Schedule,
    pub adam: AdamConfig,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr: 5e-5,
            warmup: 0.1,
            schedule: Schedule::LinearDecay,
            adam: AdamConfig::default(),
        }
    }
}

/// AdamW driven by the warmup schedule over a known number of steps.
#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimConfig,
    state: AdamState,
    total_steps: usize,
    step: usize,
}

impl Optimizer {
    pub fn new(config: OptimConfig, total_steps: usize) -> Result<Self, TensorError> {
        learning_rate(0, total_steps, config.lr, config.warmup, config.schedule)?;
        Ok(Self {
            config,
            state: AdamState::new(),
            total_steps,
            step: 0,
        })
    }

    /// Steps taken so far.
    pub fn step(&self) -> usize {
        self.step
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    /// Rate the next update will use.
    pub fn current_lr(&self) -> Result<f64, TensorError> {
        learning_rate(self.step, self.total_steps, self.config.lr, self.config.warmup, self.config.schedule)
    }

    /// Applies one update and returns the rate it used.
    pub fn apply(&mut self, params: &mut ParamStore, grads: &ParamStore) -> Result<f64, TensorError> {
        if self.step >= self.total_steps {
            return Err(TensorError::Invalid(format!("all {} steps already taken", self.total_steps)));
        }
        let lr = self.current_lr()?;
        adam_step(params, grads, &mut self.state, lr, &self.config.adam)?;
        self.step += 1;
        Ok(lr)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::vector(vec![value]));
        s
    }

    #[test]
    fn zero_gradient_is_identity() {
        let mut p = single(0.75);
        let g = single(0.0);
        let mut st = AdamState::new();
        adam_step(&mut p, &g, &mut st, 0.1, &AdamConfig::default()).unwrap();
        assert_eq!(p.get("w").unwrap().data(), &[0.75]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = single(1.0);
        let g = single(1.0);
        let mut st = AdamState::new();
        adam_step(&mut p, &g, &mut st, 0.1, &AdamConfig::default()).unwrap();
        let moved = 1.0 - p.get("w").unwrap().data()[0];
        assert!((moved - 0.1 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn step_counter_increments_by_one() {
        let mut p = single(1.0);
        let g = single(0.5);
        let mut st = AdamState::with_step(5);
        adam_step(&mut p, &g, &mut st, 0.01, &AdamConfig::default()).unwrap();
        assert_eq!(st.step(), 6);
    }

    #[test]
    fn decoupled_weight_decay() {
        let mut p = single(2.0);
        let g = single(0.0);
        let mut st = AdamState::new();
        let cfg = AdamConfig {
            weight_decay: 0.01,
            ..AdamConfig::default()
        };
        adam_step(&mut p, &g, &mut st, 0.5, &cfg).unwrap();
        assert!((p.get("w").unwrap().data()[0] - 2.0 * (1.0 - 0.005)).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut p = single(1.0);
        let mut g = ParamStore::new();
        g.insert("w", Tensor::vector(vec![1.0, 2.0]));
        let mut st = AdamState::new();
        assert!(adam_step(&mut p, &g, &mut st, 0.1, &AdamConfig::default()).is_err());
        assert_eq!(st.step(), 0);
    }

    #[test]
    fn schedule_examples() {
        let lr = |s| learning_rate(s, 1000, 5e-5, 0.1, Schedule::LinearDecay).unwrap();
        assert_eq!(lr(0), 0.0);
        assert!((lr(100) - 5e-5).abs() < 1e-20);
        assert!((lr(550) - 2.5e-5).abs() < 1e-18);
        assert_eq!(lr(1000), 0.0);
        let c = learning_rate(900, 1000, 5e-5, 0.1, Schedule::Constant).unwrap();
        assert_eq!(c, 5e-5);
        assert!(learning_rate(0, 0, 1.0, 0.1, Schedule::LinearDecay).is_err());
    }

    #[test]
    fn schedule_is_continuous_and_nonnegative() {
        for total in [10usize, 37, 333] {
            for warm in [0.0, 0.1, 0.5, 0.9] {
                let warm_steps = warm * total as f64;
                let max_slope = if warm_steps >= 1.0 {
                    1.0 / warm_steps.min(total as f64 - warm_steps)
                } else {
                    1.0 / (total as f64 - warm_steps)
                };
                let lrs: Vec<f64> = (0..=total)
                    .map(|s| learning_rate(s, total, 1.0, warm, Schedule::LinearDecay).unwrap())
                    .collect();
                assert!(lrs.iter().all(|v| (0.0..=1.0).contains(v)));
                for w in lrs.windows(2) {
                    assert!((w[1] - w[0]).abs() <= max_slope + 1e-12);
                }
            }
        }
    }
}
