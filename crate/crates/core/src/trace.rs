//! Single-trial trace: per-step CSVs of the discrete and continuous sides,
//! SVG frames and summary charts.

use std::fs::{self, File};
use std::path::Path;

use csv::Writer;

use crate::config::ExperimentConfig;
use crate::discrete::{CAUSES_4, CAUSES_5, STATE_LABELS};
use crate::env::TrialSpec;
use crate::harness::{run_trial_observed, StepView, TrialResult};
use crate::svg;
use crate::Result;

const COMPONENTS: [&str; 3] = ["x", "y", "phi"];

struct Writers {
    world: Writer<File>,
    evidence: Writer<File>,
    causes: Writer<File>,
    states: Writer<File>,
    dynamics: Writer<File>,
    forces: Writer<File>,
}

impl Writers {
    fn create(dir: &Path) -> Result<Self> {
        let open = |name: &str, header: Vec<String>| -> Result<Writer<File>> {
            let mut w = Writer::from_path(dir.join(name))?;
            w.write_record(&header)?;
            Ok(w)
        };
        let cols = |fixed: &[&str], prefix: &str, labels: &[&str]| -> Vec<String> {
            fixed
                .iter()
                .map(|s| s.to_string())
                .chain(labels.iter().map(|l| format!("{prefix}{l}")))
                .collect()
        };
        let mut ev = cols(&["step"], "l4_", &CAUSES_4);
        ev.extend(CAUSES_5.iter().map(|l| format!("l5_{l}")));
        let mut causes = cols(&["step"], "v4_", &CAUSES_4);
        causes.extend(CAUSES_5.iter().map(|l| format!("v5_{l}")));
        let strs = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        Ok(Self {
            world: open(
                "world.csv",
                strs(&[
                    "step", "grasped", "ee_x", "ee_y", "tool_x", "tool_y", "tip_x", "tip_y",
                    "ball_x", "ball_y", "distance",
                ]),
            )?,
            evidence: open("evidence.csv", ev)?,
            causes: open("causes.csv", causes)?,
            states: open("states.csv", cols(&["step"], "", &STATE_LABELS))?,
            dynamics: open(
                "dynamics.csv",
                strs(&["step", "level", "unit", "f_norm", "mu_prime_norm"]),
            )?,
            forces: open(
                "forces.csv",
                strs(&[
                    "step", "level", "entity", "component", "first_order", "own_error",
                    "child_errors", "visual", "dynamics", "mu_dot",
                ]),
            )?,
        })
    }

    fn flush(&mut self) -> Result<()> {
        for w in [
            &mut self.world,
            &mut self.evidence,
            &mut self.causes,
            &mut self.states,
            &mut self.dynamics,
            &mut self.forces,
        ] {
            w.flush()?;
        }
        Ok(())
    }
}

fn row(step: usize, values: impl IntoIterator<Item = f64>) -> Vec<String> {
    std::iter::once(step.to_string())
        .chain(values.into_iter().map(|v| v.to_string()))
        .collect()
}

#[derive(Default)]
struct Series {
    step: Vec<f64>,
    distance: Vec<f64>,
    v4: Vec<Vec<f64>>,
    v5: Vec<Vec<f64>>,
}

fn record(w: &mut Writers, series: &mut Series, view: &StepView<'_>, env: &crate::env::EnvConfig) -> Result<()> {
    let (step, agent, world) = (view.step, view.agent, view.world);
    let ee = world.end_effector(env);
    let tip = world.tool_tip(env);
    let distance = world.ball_tool_distance(env);
    let mut rec = row(
        step,
        [ee[0], ee[1], world.tool_origin.x, world.tool_origin.y, tip.x, tip.y, world.ball_pos.x, world.ball_pos.y, distance],
    );
    rec.insert(1, world.grasped.to_string());
    w.world.write_record(&rec)?;

    let (v4, v5) = (agent.causes4(), agent.causes5());
    let ee_unit = &agent.hierarchy.levels[crate::agent::EE_LEVEL].extrinsic;
    let virtual_unit = &agent.hierarchy.levels[crate::agent::VIRTUAL_LEVEL].extrinsic;
    w.evidence.write_record(row(
        step,
        ee_unit.causes.log_evidence.iter().chain(virtual_unit.causes.log_evidence.iter()).copied(),
    ))?;
    w.causes.write_record(row(step, v4.iter().chain(v5.iter()).copied()))?;
    w.states.write_record(row(step, agent.planner.s.iter().copied()))?;

    for (level, report) in agent.last_reports.iter().enumerate() {
        let name = &agent.hierarchy.levels[level].spec.name;
        for (unit, terms, mu_prime) in [
            ("intrinsic", &report.intrinsic_dynamics, &agent.hierarchy.levels[level].intrinsic.belief.mu_prime),
            ("extrinsic", &report.extrinsic_dynamics, &agent.hierarchy.levels[level].extrinsic.belief.mu_prime),
        ] {
            w.dynamics.write_record([
                step.to_string(),
                name.clone(),
                unit.to_string(),
                terms.eta_prime.norm().to_string(),
                mu_prime.norm().to_string(),
            ])?;
        }
        let entities = &agent.hierarchy.levels[level].spec.entities;
        for (s, f) in report.forces.iter().enumerate() {
            for (k, comp) in COMPONENTS.iter().enumerate() {
                w.forces.write_record([
                    step.to_string(),
                    name.clone(),
                    entities[s].label().to_string(),
                    comp.to_string(),
                    f.first_order[k].to_string(),
                    f.own_error[k].to_string(),
                    f.child_errors[k].to_string(),
                    f.visual[k].to_string(),
                    f.dynamics[k].to_string(),
                    report.extrinsic_dot[3 * s + k].to_string(),
                ])?;
            }
        }
    }

    series.step.push(step as f64);
    series.distance.push(distance);
    series.v4.push(v4.iter().copied().collect());
    series.v5.push(v5.iter().copied().collect());
    Ok(())
}

/// Runs one trial and writes its trace into `out_dir`; a scene frame is
/// drawn every `frame_every` steps (never when zero).
pub fn trace_trial(
    spec: &TrialSpec,
    cfg: &ExperimentConfig,
    out_dir: &Path,
    frame_every: usize,
) -> Result<TrialResult> {
    cfg.validate()?;
    fs::create_dir_all(out_dir)?;
    let frames = out_dir.join("frames");
    if frame_every > 0 {
        fs::create_dir_all(&frames)?;
    }
    let mut w = Writers::create(out_dir)?;
    let mut series = Series::default();
    let env = cfg.env.clone();
    let result = run_trial_observed(spec, cfg, &mut |view| {
        record(&mut w, &mut series, view, &env)?;
        if frame_every > 0 && (view.step == 1 || view.step % frame_every == 0) {
            let svg = svg::scene(&env, view.world, view.agent, view.step);
            fs::write(frames.join(format!("frame_{:05}.svg", view.step)), svg)?;
        }
        Ok(())
    })?;
    w.flush()?;

    fs::write(
        out_dir.join("distance.svg"),
        svg::line_chart("ball to tool-tip distance (px)", &series.step, &[("distance", &series.distance)]),
    )?;
    let column = |rows: &[Vec<f64>], k: usize| rows.iter().map(|r| r[k]).collect::<Vec<f64>>();
    let v4: Vec<Vec<f64>> = (0..CAUSES_4.len()).map(|k| column(&series.v4, k)).collect();
    let v5: Vec<Vec<f64>> = (0..CAUSES_5.len()).map(|k| column(&series.v5, k)).collect();
    let named4: Vec<(&str, &[f64])> = CAUSES_4.iter().copied().zip(v4.iter().map(|v| v.as_slice())).collect();
    let named5: Vec<(&str, &[f64])> = CAUSES_5.iter().copied().zip(v5.iter().map(|v| v.as_slice())).collect();
    fs::write(out_dir.join("causes_ee.svg"), svg::line_chart("end-effector causes", &series.step, &named4))?;
    fs::write(out_dir.join("causes_virtual.svg"), svg::line_chart("virtual causes", &series.step, &named5))?;
    Ok(result)
}
