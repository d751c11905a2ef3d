//! CSV bundles for plotting; no rendering.

use std::fs::File;
use std::path::{Path, PathBuf};

use crate::error::{contract, Result};
use crate::plant::{Dynamics, ErrorDynamics};
use crate::policy::GainBoundedPolicy;
use crate::signals::csv_err;
use crate::trace::ClosedLoopTrace;

use super::scenario::Scenario;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlotFiles {
    pub executed: PathBuf,
    pub reference: Option<PathBuf>,
    pub obstacles: Option<PathBuf>,
    pub predictions: Vec<PathBuf>,
}

fn writer(path: &Path) -> Result<csv::Writer<File>> {
    Ok(csv::Writer::from_writer(File::create(path)?))
}

fn f(x: f64) -> String {
    format!("{x:e}")
}

/// Absolute positions `(agent, x, y)` of a point-mass error state at step `t`.
fn positions(sc: &Scenario, e: &[f64], t: usize) -> Vec<[f64; 2]> {
    match &sc.plant.dynamics {
        Dynamics::PointMass(pm) => (0..pm.agents())
            .map(|j| {
                let q = pm.reference.position(j, t);
                [q[0] + e[4 * j], q[1] + e[4 * j + 1]]
            })
            .collect(),
        Dynamics::Linear(_) => vec![],
    }
}

/// Noise-free rollout of the policy active at `tau`, restarted on `x_tau`.
fn predict(sc: &Scenario, deployed: &[(usize, GainBoundedPolicy)], trace: &ClosedLoopTrace, tau: usize, len: usize) -> Result<Vec<Vec<f64>>> {
    let (_, pol) = deployed.iter().rev().find(|(t0, _)| *t0 <= tau).ok_or_else(|| contract("no policy active at the requested step"))?;
    let mut pol = pol.clone();
    pol.reset();
    let (n, m) = (sc.state_dim(), sc.input_dim());
    let mut x = trace.x.at(tau).to_vec();
    let mut out = vec![x.clone()];
    let (mut u, zero, mut next) = (vec![0.0; m], vec![0.0; n], vec![0.0; n]);
    for k in 0..len {
        pol.step(if k == 0 { &x } else { &zero }, &mut u)?;
        sc.plant.step(tau + k, &x, &u, &mut next);
        x.copy_from_slice(&next);
        out.push(x.clone());
    }
    Ok(out)
}

/// Writes `executed.csv`, plus `reference.csv` and `obstacles.csv` for point-mass
/// scenarios, plus `predicted_t<τ>.csv` for each `τ` when `pred_len > 0`.
pub fn emit_plot_data(
    trace: &ClosedLoopTrace,
    sc: &Scenario,
    deployed: &[(usize, GainBoundedPolicy)],
    taus: &[usize],
    pred_len: usize,
    dir: &Path,
) -> Result<PlotFiles> {
    std::fs::create_dir_all(dir)?;
    let mut files = PlotFiles { executed: dir.join("executed.csv"), ..Default::default() };
    let point_mass = sc.plant.point_mass();
    let mut w = writer(&files.executed)?;
    if point_mass.is_some() {
        w.write_record(["t", "agent", "x", "y", "radius"]).map_err(csv_err)?;
        for (t, e) in trace.x.rows().enumerate() {
            for (j, q) in positions(sc, e, t).iter().enumerate() {
                w.write_record([t.to_string(), j.to_string(), f(q[0]), f(q[1]), f(sc.loss.agent_radius)]).map_err(csv_err)?;
            }
        }
    } else {
        let mut h = vec!["t".to_string()];
        h.extend((0..sc.state_dim()).map(|k| format!("x_{k}")));
        w.write_record(&h).map_err(csv_err)?;
        for (t, e) in trace.x.rows().enumerate() {
            let mut rec = vec![t.to_string()];
            rec.extend(e.iter().map(|v| f(*v)));
            w.write_record(&rec).map_err(csv_err)?;
        }
    }
    w.flush()?;
    if let Some(pm) = point_mass {
        let path = dir.join("reference.csv");
        let mut w = writer(&path)?;
        w.write_record(["t", "agent", "x", "y"]).map_err(csv_err)?;
        for t in 0..trace.len() {
            for j in 0..pm.agents() {
                let q = pm.reference.position(j, t);
                w.write_record([t.to_string(), j.to_string(), f(q[0]), f(q[1])]).map_err(csv_err)?;
            }
        }
        w.flush()?;
        files.reference = Some(path);
        let path = dir.join("obstacles.csv");
        let mut w = writer(&path)?;
        w.write_record(["t", "obstacle", "x", "y", "radius"]).map_err(csv_err)?;
        for t in 0..trace.len() {
            for (k, c) in sc.loss.obstacles_at(t).iter().enumerate() {
                w.write_record([t.to_string(), k.to_string(), f(c.center[0]), f(c.center[1]), f(c.radius)]).map_err(csv_err)?;
            }
        }
        w.flush()?;
        files.obstacles = Some(path);
    }
    if pred_len > 0 {
        for &tau in taus {
            if tau >= trace.len() {
                return Err(contract(format!("prediction step {tau} beyond the trace")));
            }
            let path = dir.join(format!("predicted_t{tau}.csv"));
            let mut w = writer(&path)?;
            w.write_record(["t", "agent", "x", "y"]).map_err(csv_err)?;
            for (k, e) in predict(sc, deployed, trace, tau, pred_len)?.iter().enumerate() {
                let qs = positions(sc, e, tau + k);
                if qs.is_empty() {
                    w.write_record([(tau + k).to_string(), "0".into(), f(e[0]), f(0.0)]).map_err(csv_err)?;
                }
                for (j, q) in qs.iter().enumerate() {
                    w.write_record([(tau + k).to_string(), j.to_string(), f(q[0]), f(q[1])]).map_err(csv_err)?;
                }
            }
            w.flush()?;
            files.predictions.push(path);
        }
    }
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::{ExperimentConfig, Mode, ScenarioKind};
    use crate::harness::run::run_seed;

    fn quick(kind: ScenarioKind) -> ExperimentConfig {
        let mut c = ExperimentConfig::preset(kind, Mode::OnlineAlg1);
        c.steps = 30;
        c.epochs = 2;
        c.offline.epochs = 2;
        c.horizon = 5;
        c
    }

    #[test]
    fn zero_prediction_window_writes_executed_only() {
        let cfg = quick(ScenarioKind::ScalarSanity);
        let run = run_seed(&cfg, 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let files = emit_plot_data(&run.trace, &run.scenario, &run.deployed, &[3], 0, dir.path()).unwrap();
        assert!(files.executed.exists());
        assert!(files.predictions.is_empty() && files.reference.is_none() && files.obstacles.is_none());
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn mountains_bundle_schema() {
        let cfg = quick(ScenarioKind::Mountains);
        let run = run_seed(&cfg, 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let files = emit_plot_data(&run.trace, &run.scenario, &run.deployed, &[4], 10, dir.path()).unwrap();
        let mut rd = csv::Reader::from_path(&files.executed).unwrap();
        assert_eq!(rd.headers().unwrap().iter().collect::<Vec<_>>(), ["t", "agent", "x", "y", "radius"]);
        let rows: Vec<csv::StringRecord> = rd.records().map(|r| r.unwrap()).collect();
        assert_eq!(rows.len(), 2 * 30);
        // t = 0 positions are the start points
        assert_eq!(rows[0][2].parse::<f64>().unwrap(), -2.0);
        assert_eq!(rows[1][2].parse::<f64>().unwrap(), 2.0);
        let pred = csv::Reader::from_path(&files.predictions[0]).unwrap().records().count();
        assert_eq!(pred, 2 * 11);
    }

    #[test]
    fn obstacle_rows_match_motion_law() {
        let cfg = quick(ScenarioKind::DynamicObstacles);
        let run = run_seed(&cfg, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let files = emit_plot_data(&run.trace, &run.scenario, &run.deployed, &[], 0, dir.path()).unwrap();
        let track = run.scenario.obstacles().unwrap().clone();
        let mut rd = csv::Reader::from_path(files.obstacles.unwrap()).unwrap();
        for rec in rd.records() {
            let rec = rec.unwrap();
            let t: usize = rec[0].parse().unwrap();
            let j: usize = rec[1].parse().unwrap();
            let tau = t as f64 * track.sample_time;
            let y = track.amplitude * ((2.0 * std::f64::consts::PI * track.psi[j] + track.eta[j]) * tau + track.phi[j]).sin() + track.y0[j];
            assert!((rec[3].parse::<f64>().unwrap() - y).abs() < 1e-12);
        }
    }
}
