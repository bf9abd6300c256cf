//! The discrete planner: a six-state POMDP over task phases.
//!
//! States are `{start, at-tool, at-ball} × {ungrasped, grasped}`. Hidden-cause
//! posteriors of the continuous levels and the tactile signal act as
//! observations; expected free energy scores fixed-length action sequences and
//! the policy-averaged one-step prediction becomes the next cause prior.

use nalgebra::{DMatrix, DVector};

use crate::belief::{ln_floor, ln_floor_vec, softmax};
use crate::error::{check_dim, Error, Result};

pub const N_STATES: usize = 6;
pub const N_ACTIONS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Position {
    Start = 0,
    AtTool = 1,
    AtBall = 2,
}

/// Index of `(position, grasped)` in the state vector.
pub const fn state_index(pos: Position, grasped: bool) -> usize {
    2 * pos as usize + grasped as usize
}

pub const STATE_LABELS: [&str; N_STATES] = [
    "start_free",
    "start_grasped",
    "tool_free",
    "tool_grasped",
    "ball_free",
    "ball_grasped",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Stay = 0,
    ReachTool = 1,
    ReachBall = 2,
    Grasp = 3,
}

pub const ACTION_LABELS: [&str; N_ACTIONS] = ["stay", "reach_tool", "reach_ball", "grasp"];

/// Causes of level 4 in order `[stay, reach_tool, reach_ball]`.
pub const CAUSES_4: [&str; 3] = ["stay", "reach_tool", "reach_ball"];
/// Causes of level 5 in order `[stay, reach_ball]`.
pub const CAUSES_5: [&str; 2] = ["stay", "reach_ball"];

/// Tactile outcome `[not touching, grasped]`.
pub fn tactile_obs(grasped: bool) -> DVector<f64> {
    if grasped {
        DVector::from_column_slice(&[0.0, 1.0])
    } else {
        DVector::from_column_slice(&[1.0, 0.0])
    }
}

/// Parameters of the default task matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskParams {
    /// Weight of the uniform component mixed into the cause likelihoods.
    pub cause_mixing: f64,
    /// `p(o_t = grasped | grasped)`.
    pub tactile_accuracy: f64,
    /// Preference mass on `(at-ball, grasped)`; the rest is spread uniformly.
    pub goal_preference: f64,
    pub horizon: usize,
}

impl Default for TaskParams {
    fn default() -> Self {
        Self {
            cause_mixing: 0.0,
            tactile_accuracy: 0.999,
            goal_preference: 0.9,
            horizon: 2,
        }
    }
}

fn mix_uniform(m: DMatrix<f64>, w: f64) -> DMatrix<f64> {
    let u = 1.0 / m.nrows() as f64;
    m.map(|x| (1.0 - w) * x + w * u)
}

/// Deterministic transition matrix `B[to, from]` of one task action.
pub fn task_transition(action: Action) -> DMatrix<f64> {
    use Position::*;
    let mut b = DMatrix::zeros(N_STATES, N_STATES);
    for pos in [Start, AtTool, AtBall] {
        for grasped in [false, true] {
            let from = state_index(pos, grasped);
            let to = match action {
                Action::Stay => from,
                // touching the tool grasps it
                Action::ReachTool => state_index(AtTool, true),
                Action::ReachBall if grasped => state_index(AtBall, true),
                Action::ReachBall => from,
                Action::Grasp if pos == AtTool => state_index(AtTool, true),
                Action::Grasp => from,
            };
            b[(to, from)] = 1.0;
        }
    }
    b
}

/// Every sequence of `horizon` actions, in lexicographic order.
pub fn all_policies(n_actions: usize, horizon: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for _ in 0..horizon {
        out = out
            .into_iter()
            .flat_map(|p| {
                (0..n_actions).map(move |a| {
                    let mut q = p.clone();
                    q.push(a);
                    q
                })
            })
            .collect();
    }
    out
}

fn check_stochastic(name: &str, m: &DMatrix<f64>) -> Result<()> {
    for (j, col) in m.column_iter().enumerate() {
        let sum: f64 = col.sum();
        if (sum - 1.0).abs() > 1e-10 || col.iter().any(|x| *x < 0.0 || !x.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "{name} column {j} is not a probability vector (sum {sum})"
            )));
        }
    }
    Ok(())
}

fn check_probability(name: &str, v: &DVector<f64>) -> Result<()> {
    let sum = v.sum();
    if (sum - 1.0).abs() > 1e-10 || v.iter().any(|x| *x < 0.0 || !x.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "{name} is not a probability vector (sum {sum})"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct DiscreteModel {
    pub a_e4: DMatrix<f64>,
    pub a_e5: DMatrix<f64>,
    pub a_t: DMatrix<f64>,
    /// One column-stochastic `B[to, from]` per action.
    pub b: Vec<DMatrix<f64>>,
    pub c: DVector<f64>,
    pub d: DVector<f64>,
    pub policies: Vec<Vec<usize>>,
    pub s: DVector<f64>,
    /// Policy posterior of the last plan.
    pub pi: DVector<f64>,
    /// Expected free energy of the last plan.
    pub g: DVector<f64>,
}

impl DiscreteModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        a_e4: DMatrix<f64>,
        a_e5: DMatrix<f64>,
        a_t: DMatrix<f64>,
        b: Vec<DMatrix<f64>>,
        c: DVector<f64>,
        d: DVector<f64>,
        policies: Vec<Vec<usize>>,
    ) -> Result<Self> {
        let n = d.len();
        for (name, m) in [("A_e4", &a_e4), ("A_e5", &a_e5), ("A_t", &a_t)] {
            check_dim(name, n, m.ncols())?;
            check_stochastic(name, m)?;
        }
        for (k, m) in b.iter().enumerate() {
            check_dim("B rows", n, m.nrows())?;
            check_dim("B cols", n, m.ncols())?;
            check_stochastic(&format!("B[{k}]"), m)?;
        }
        check_dim("C", n, c.len())?;
        if c.iter().any(|x| *x < 0.0 || !x.is_finite()) {
            return Err(Error::InvalidConfig("C must be nonnegative".into()));
        }
        check_probability("D", &d)?;
        if policies.is_empty() {
            return Err(Error::InvalidConfig("no policies".into()));
        }
        for p in &policies {
            if let Some(a) = p.iter().find(|a| **a >= b.len()) {
                return Err(Error::InvalidConfig(format!("policy uses unknown action {a}")));
            }
        }
        let np = policies.len();
        Ok(Self {
            a_e4,
            a_e5,
            a_t,
            b,
            c,
            s: d.clone(),
            d,
            pi: DVector::from_element(np, 1.0 / np as f64),
            g: DVector::zeros(np),
            policies,
        })
    }

    /// The tool-use task model starting in `(start, ungrasped)`.
    pub fn task(params: &TaskParams) -> Result<Self> {
        use Position::*;
        if !(0.0..=1.0).contains(&params.cause_mixing)
            || !(0.0..=1.0).contains(&params.tactile_accuracy)
            || !(0.0..=1.0).contains(&params.goal_preference)
        {
            return Err(Error::InvalidConfig(
                "task probabilities must lie in [0, 1]".into(),
            ));
        }
        let mut a4 = DMatrix::zeros(3, N_STATES);
        let mut a5 = DMatrix::zeros(2, N_STATES);
        let mut at = DMatrix::zeros(2, N_STATES);
        for pos in [Start, AtTool, AtBall] {
            for grasped in [false, true] {
                let j = state_index(pos, grasped);
                a4[(pos as usize, j)] = 1.0;
                a5[(usize::from(pos == AtBall), j)] = 1.0;
                let acc = params.tactile_accuracy;
                at[(usize::from(grasped), j)] = acc;
                at[(usize::from(!grasped), j)] = 1.0 - acc;
            }
        }
        let b = [Action::Stay, Action::ReachTool, Action::ReachBall, Action::Grasp]
            .into_iter()
            .map(task_transition)
            .collect();
        let goal = state_index(AtBall, true);
        let rest = (1.0 - params.goal_preference) / (N_STATES - 1) as f64;
        let c = DVector::from_fn(N_STATES, |i, _| {
            if i == goal {
                params.goal_preference
            } else {
                rest
            }
        });
        let mut d = DVector::zeros(N_STATES);
        d[state_index(Start, false)] = 1.0;
        Self::new(
            mix_uniform(a4, params.cause_mixing),
            mix_uniform(a5, params.cause_mixing),
            at,
            b,
            c,
            d,
            all_policies(N_ACTIONS, params.horizon),
        )
    }

    /// `G_π = Σ_τ s_{π,τ} · (ln s_{π,τ} − ln C)`, rolling the current state
    /// posterior through each policy's transitions.
    pub fn expected_free_energy(&self) -> DVector<f64> {
        let ln_c = ln_floor_vec(&self.c);
        DVector::from_iterator(
            self.policies.len(),
            self.policies.iter().map(|policy| {
                let mut s = self.s.clone();
                let mut g = 0.0;
                for a in policy {
                    s = &self.b[*a] * s;
                    g += s.iter().zip(ln_c.iter()).map(|(p, lc)| p * (ln_floor(*p) - lc)).sum::<f64>();
                }
                g
            }),
        )
    }

    /// `s = σ(ln D + ln A_e4ᵀ v4 + ln A_e5ᵀ v5 + ln A_tᵀ o_t)`; stored in `s`.
    pub fn infer_states(
        &mut self,
        v4: &DVector<f64>,
        v5: &DVector<f64>,
        o_t: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        check_dim("infer_states v4", self.a_e4.nrows(), v4.len())?;
        check_dim("infer_states v5", self.a_e5.nrows(), v5.len())?;
        check_dim("infer_states o_t", self.a_t.nrows(), o_t.len())?;
        let logits = ln_floor_vec(&self.d)
            + ln_floor_vec(&(self.a_e4.transpose() * v4))
            + ln_floor_vec(&(self.a_e5.transpose() * v5))
            + ln_floor_vec(&(self.a_t.transpose() * o_t));
        self.s = softmax(&logits)?;
        Ok(self.s.clone())
    }

    /// Scores the policies, sets `D = Σ_π π_π B_{π,0} s` and returns the cause
    /// priors `(A_e4 D, A_e5 D)` for the coming window.
    pub fn plan_and_predict(&mut self) -> Result<(DVector<f64>, DVector<f64>)> {
        self.g = self.expected_free_energy();
        self.pi = softmax(&-&self.g)?;
        let mut d = DVector::zeros(self.s.len());
        for (w, policy) in self.pi.iter().zip(&self.policies) {
            d += (&self.b[policy[0]] * &self.s) * *w;
        }
        self.d = d;
        Ok((&self.a_e4 * &self.d, &self.a_e5 * &self.d))
    }
}
