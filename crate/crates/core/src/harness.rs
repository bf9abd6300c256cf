//! Trial runner and experiment sweeps.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::agent::Agent;
use crate::config::ExperimentConfig;
use crate::env::{sample_trial, Condition, Observation, TrialSpec, WorldState, MAX_SPEED};
use crate::error::Result;

/// Ball to tool-tip distance under which the ball counts as reached, pixels.
pub const REACH_DISTANCE: f64 = 100.0;
/// Steps at the end of a trial over which the final error is averaged.
pub const FINAL_WINDOW: usize = 300;
/// Number of integer speed bins over `[0, 8]`.
pub const N_SPEED_BINS: usize = 9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialResult {
    pub seed: u64,
    pub condition: Condition,
    pub speed: f64,
    pub success: bool,
    /// First step at which the tool is held and the ball is within reach.
    pub completion_time: Option<usize>,
    /// Mean ball to tool-tip distance over the last steps, pixels.
    pub final_error: f64,
    pub grasp_time: Option<usize>,
    /// Set when the trial stopped on a numerical failure.
    pub abort: Option<String>,
}

/// What an observer sees after each step of a trial.
pub struct StepView<'a> {
    /// Number of completed steps.
    pub step: usize,
    pub agent: &'a Agent,
    pub world: &'a WorldState,
    pub obs: &'a Observation,
}

/// Runs one trial, calling `observer` after every step.
pub fn run_trial_observed(
    spec: &TrialSpec,
    cfg: &ExperimentConfig,
    observer: &mut dyn FnMut(&StepView<'_>) -> Result<()>,
) -> Result<TrialResult> {
    let env = &cfg.env;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut world = sample_trial(env, spec, &mut rng);
    let mut obs = world.observe(env, &mut rng);
    let mut agent = Agent::with_planner(cfg.agent.clone(), env, cfg.planner.build()?)?;
    agent.initialize_beliefs(&obs);

    let steps = env.max_steps;
    let window_start = steps.saturating_sub(FINAL_WINDOW);
    let mut window_sum = 0.0;
    let mut window_n = 0usize;
    let mut grasp_time = None;
    let mut completion_time = None;
    let mut abort = None;
    for t in 0..steps {
        let action = match agent.step(&obs) {
            Ok(a) => a,
            Err(e) => {
                abort = Some(e.to_string());
                break;
            }
        };
        world.step(env, &action)?;
        obs = world.observe(env, &mut rng);
        let done = t + 1;
        let dist = world.ball_tool_distance(env);
        if world.grasped && grasp_time.is_none() {
            grasp_time = Some(done);
        }
        if world.grasped && dist < REACH_DISTANCE && completion_time.is_none() {
            completion_time = Some(done);
        }
        if t >= window_start {
            window_sum += dist;
            window_n += 1;
        }
        observer(&StepView {
            step: done,
            agent: &agent,
            world: &world,
            obs: &obs,
        })?;
    }
    let final_error = if abort.is_some() || window_n == 0 {
        world.ball_tool_distance(env)
    } else {
        window_sum / window_n as f64
    };
    Ok(TrialResult {
        seed: spec.seed,
        condition: spec.condition,
        speed: spec.speed,
        success: abort.is_none() && world.grasped && final_error < REACH_DISTANCE,
        completion_time,
        final_error,
        grasp_time,
        abort,
    })
}

pub fn run_trial(spec: &TrialSpec, cfg: &ExperimentConfig) -> Result<TrialResult> {
    run_trial_observed(spec, cfg, &mut |_| Ok(()))
}

/// Seed of trial `index` of an experiment seeded with `seed`.
pub fn trial_seed(seed: u64, index: usize) -> u64 {
    use rand::RngCore;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng.next_u64()
}

/// Stratified speed grid: trial `k` lands in bin `k mod 9`, spread evenly
/// over `[speed_min, speed_max]`.
pub fn trial_speed(index: usize, speed_min: f64, speed_max: f64) -> f64 {
    let bin = index % N_SPEED_BINS;
    speed_min + (speed_max - speed_min) * bin as f64 / (N_SPEED_BINS - 1) as f64
}

#[derive(Debug, Clone)]
pub struct ExperimentPlan {
    pub condition: Condition,
    pub trials: usize,
    pub speed_min: f64,
    pub speed_max: f64,
    pub seed: u64,
}

impl ExperimentPlan {
    pub fn specs(&self) -> Result<Vec<TrialSpec>> {
        (0..self.trials)
            .map(|k| {
                TrialSpec::new(
                    self.condition,
                    trial_speed(k, self.speed_min, self.speed_max),
                    trial_seed(self.seed, k),
                )
            })
            .collect()
    }
}

/// Runs every trial on the rayon pool; results are in trial order.
pub fn run_experiment(plan: &ExperimentPlan, cfg: &ExperimentConfig) -> Result<Vec<TrialResult>> {
    cfg.validate()?;
    plan.specs()?
        .par_iter()
        .map(|spec| run_trial(spec, cfg))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinSummary {
    pub condition: String,
    pub speed_bin: usize,
    pub trials: usize,
    pub accuracy: f64,
    pub time_mean: f64,
    pub time_ci: f64,
    pub error_mean: f64,
    pub error_ci: f64,
}

/// Mean and normal-approximation 95% half-width.
pub fn mean_ci(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, 1.96 * (var / n as f64).sqrt())
}

/// Speed bin of a speed: nearest integer in `0..=8`.
pub fn speed_bin(speed: f64) -> usize {
    (speed.round().clamp(0.0, MAX_SPEED)) as usize
}

/// Per-bin accuracy, completion time (successful trials) and final error.
pub fn summarize(results: &[TrialResult]) -> Vec<BinSummary> {
    let mut bins: Vec<Vec<&TrialResult>> = vec![Vec::new(); N_SPEED_BINS];
    for r in results {
        bins[speed_bin(r.speed)].push(r);
    }
    let condition = results.first().map(|r| r.condition.label()).unwrap_or("");
    bins.iter()
        .enumerate()
        .filter(|(_, rs)| !rs.is_empty())
        .map(|(bin, rs)| {
            let n = rs.len();
            let successes = rs.iter().filter(|r| r.success).count();
            let times: Vec<f64> = rs
                .iter()
                .filter(|r| r.success)
                .filter_map(|r| r.completion_time.map(|t| t as f64))
                .collect();
            let errors: Vec<f64> = rs.iter().map(|r| r.final_error).collect();
            let (time_mean, time_ci) = mean_ci(&times);
            let (error_mean, error_ci) = mean_ci(&errors);
            BinSummary {
                condition: condition.to_string(),
                speed_bin: bin,
                trials: n,
                accuracy: successes as f64 / n as f64,
                time_mean,
                time_ci,
                error_mean,
                error_ci,
            }
        })
        .collect()
}

pub fn write_summary(path: &Path, rows: &[BinSummary]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "condition",
        "speed_bin",
        "accuracy",
        "time_mean",
        "time_ci",
        "error_mean",
        "error_ci",
    ])?;
    for r in rows {
        w.write_record([
            r.condition.clone(),
            r.speed_bin.to_string(),
            r.accuracy.to_string(),
            r.time_mean.to_string(),
            r.time_ci.to_string(),
            r.error_mean.to_string(),
            r.error_ci.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trials(path: &Path, results: &[TrialResult]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "seed",
        "condition",
        "speed",
        "success",
        "completion_time",
        "final_error",
        "grasp_time",
        "abort",
    ])?;
    let opt = |x: Option<usize>| x.map(|v| v.to_string()).unwrap_or_default();
    for r in results {
        w.write_record([
            r.seed.to_string(),
            r.condition.label().to_string(),
            r.speed.to_string(),
            r.success.to_string(),
            opt(r.completion_time),
            r.final_error.to_string(),
            opt(r.grasp_time),
            r.abort.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn result(speed: f64, success: bool, time: Option<usize>, err: f64) -> TrialResult {
        TrialResult {
            seed: 0,
            condition: Condition::Both,
            speed,
            success,
            completion_time: time,
            final_error: err,
            grasp_time: None,
            abort: None,
        }
    }

    #[test]
    fn mean_ci_examples() {
        let (m, ci) = mean_ci(&[1.0, 2.0, 3.0]);
        assert_abs_diff_eq!(m, 2.0);
        assert_abs_diff_eq!(ci, 1.96 * (1.0f64 / 3.0).sqrt(), epsilon = 1e-15);
        assert_eq!(mean_ci(&[5.0]), (5.0, 0.0));
        assert!(mean_ci(&[]).0.is_nan());
    }

    #[test]
    fn speed_grid_is_stratified() {
        let speeds: Vec<f64> = (0..18).map(|k| trial_speed(k, 0.0, 8.0)).collect();
        assert_eq!(speeds[0], 0.0);
        assert_eq!(speeds[8], 8.0);
        assert_eq!(speeds[9], 0.0);
        for (k, s) in speeds.iter().enumerate() {
            assert_eq!(speed_bin(*s), k % 9);
        }
        assert_ne!(trial_seed(1, 0), trial_seed(1, 1));
        assert_eq!(trial_seed(1, 5), trial_seed(1, 5));
    }

    #[test]
    fn summary_is_permutation_invariant() {
        let rs = vec![
            result(0.0, true, Some(500), 20.0),
            result(0.0, false, None, 400.0),
            result(8.0, true, Some(900), 50.0),
            result(0.2, true, Some(700), 30.0),
        ];
        let a = summarize(&rs);
        let mut rev = rs.clone();
        rev.reverse();
        let b = summarize(&rev);
        assert_eq!(a.len(), 2);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.speed_bin, y.speed_bin);
            assert_abs_diff_eq!(x.accuracy, y.accuracy, epsilon = 1e-15);
            assert_abs_diff_eq!(x.time_mean, y.time_mean, epsilon = 1e-12);
            assert_abs_diff_eq!(x.error_mean, y.error_mean, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(a[0].accuracy, 2.0 / 3.0);
        assert_abs_diff_eq!(a[0].time_mean, 600.0);
        assert!(summarize(&[]).is_empty());
    }
}
