//! Experiment configuration, read from TOML with `[agent]`, `[env]` and
//! `[planner]` sections. Every key is optional and falls back to its default.
//!
//! Planner matrices may be given as arrays of rows, e.g.
//!
//! ```toml
//! [planner]
//! horizon = 2
//! c = [0.02, 0.02, 0.02, 0.02, 0.02, 0.9]
//! ```

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::agent::AgentConfig;
use crate::discrete::{all_policies, DiscreteModel, TaskParams};
use crate::env::EnvConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    pub cause_mixing: f64,
    pub tactile_accuracy: f64,
    pub goal_preference: f64,
    pub horizon: usize,
    pub a_e4: Option<Vec<Vec<f64>>>,
    pub a_e5: Option<Vec<Vec<f64>>>,
    pub a_t: Option<Vec<Vec<f64>>>,
    /// One `B[to][from]` matrix per action.
    pub b: Option<Vec<Vec<Vec<f64>>>>,
    pub c: Option<Vec<f64>>,
    pub d: Option<Vec<f64>>,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        let p = TaskParams::default();
        Self {
            cause_mixing: p.cause_mixing,
            tactile_accuracy: p.tactile_accuracy,
            goal_preference: p.goal_preference,
            horizon: p.horizon,
            a_e4: None,
            a_e5: None,
            a_t: None,
            b: None,
            c: None,
            d: None,
        }
    }
}

fn matrix(name: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::InvalidConfig(format!("planner.{name} must be a non-empty rectangular matrix")));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |r, c| rows[r][c]))
}

impl PlannerConfig {
    pub fn task_params(&self) -> TaskParams {
        TaskParams {
            cause_mixing: self.cause_mixing,
            tactile_accuracy: self.tactile_accuracy,
            goal_preference: self.goal_preference,
            horizon: self.horizon,
        }
    }

    /// The default task model with any explicitly given matrices swapped in.
    pub fn build(&self) -> Result<DiscreteModel> {
        if self.horizon == 0 {
            return Err(Error::InvalidConfig("planner.horizon must be at least 1".into()));
        }
        let base = DiscreteModel::task(&self.task_params())?;
        let pick = |name: &str, m: &Option<Vec<Vec<f64>>>, default: &DMatrix<f64>| match m {
            Some(rows) => matrix(name, rows),
            None => Ok(default.clone()),
        };
        let b = match &self.b {
            Some(bs) => bs
                .iter()
                .enumerate()
                .map(|(k, m)| matrix(&format!("b[{k}]"), m))
                .collect::<Result<Vec<_>>>()?,
            None => base.b.clone(),
        };
        let n_actions = b.len();
        DiscreteModel::new(
            pick("a_e4", &self.a_e4, &base.a_e4)?,
            pick("a_e5", &self.a_e5, &base.a_e5)?,
            pick("a_t", &self.a_t, &base.a_t)?,
            b,
            self.c.as_ref().map_or(base.c.clone(), |c| DVector::from_column_slice(c)),
            self.d.as_ref().map_or(base.d.clone(), |d| DVector::from_column_slice(d)),
            all_policies(n_actions, self.horizon),
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub agent: AgentConfig,
    pub env: EnvConfig,
    pub planner: PlannerConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.agent.validate()?;
        self.env.validate()?;
        let planner = self.planner.build()?;
        if planner.a_e4.nrows() != 3 || planner.a_e5.nrows() != 2 || planner.a_t.nrows() != 2 {
            return Err(Error::InvalidConfig(
                "planner likelihoods must have 3 (a_e4), 2 (a_e5) and 2 (a_t) rows".into(),
            ));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is serializable")
    }
}
