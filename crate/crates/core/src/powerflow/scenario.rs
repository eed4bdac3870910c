//! Scenario runner: assign substation day profiles to PQ buses, solve
//! one load flow per half-hour slot, and compare candidate results
//! against a ground-truth series.

use super::{
    build_ybus, nr_solve_with_ybus, BusInjection, LoadFlowResult, NetworkModel, NrOptions,
    PowerFlowError,
};
use crate::ingest::{DayProfile, SLOTS_PER_DAY};
use crate::metrics::quantile_sorted;
use std::path::Path;

/// How profiles map onto PQ buses.
#[derive(Debug, Clone)]
pub enum Assignment {
    /// PQ bus `i` takes profile `i mod profiles.len()`.
    Modular,
    /// Explicit profile index per PQ bus.
    Explicit(Vec<usize>),
}

impl Assignment {
    pub fn resolve(&self, n_pq: usize, n_profiles: usize) -> Result<Vec<usize>, PowerFlowError> {
        match self {
            Assignment::Modular => {
                if n_profiles == 0 {
                    return Err(PowerFlowError::Dimension("no profiles to assign".into()));
                }
                Ok((0..n_pq).map(|i| i % n_profiles).collect())
            }
            Assignment::Explicit(map) => {
                if map.len() != n_pq {
                    return Err(PowerFlowError::Dimension(format!(
                        "assignment covers {} buses, network has {n_pq}",
                        map.len()
                    )));
                }
                if let Some(bad) = map.iter().find(|&&p| p >= n_profiles) {
                    return Err(PowerFlowError::Dimension(format!(
                        "assignment references profile {bad} of {n_profiles}"
                    )));
                }
                Ok(map.clone())
            }
        }
    }
}

/// One day of per-slot load-flow solutions.
#[derive(Debug, Clone)]
pub struct ScenarioSeries {
    /// One result per half-hour slot.
    pub results: Vec<LoadFlowResult>,
    /// Profile index assigned to each PQ bus.
    pub assignment: Vec<usize>,
    pub non_converged_slots: usize,
}

/// Solve the network for every slot of the day. Profiles are in physical
/// kW / kVAr and are converted onto the system base; consumption is
/// positive. Non-convergent slots are recorded, not raised.
pub fn scenario_run(
    network: &NetworkModel,
    profiles: &[DayProfile],
    assignment: &Assignment,
    options: &NrOptions,
) -> Result<ScenarioSeries, PowerFlowError> {
    network.validate()?;
    let pq = network.pq_indices();
    let map = assignment.resolve(pq.len(), profiles.len())?;
    let ybus = build_ybus(network)?;

    let mut results = Vec::with_capacity(SLOTS_PER_DAY);
    let mut non_converged = 0;
    for slot in 0..SLOTS_PER_DAY {
        let p_kw: Vec<f64> = map.iter().map(|&pi| profiles[pi].p[slot]).collect();
        let q_kvar: Vec<f64> = map.iter().map(|&pi| profiles[pi].q[slot]).collect();
        let injections = BusInjection::from_kw(&p_kw, &q_kvar, network.base_mva);
        let result = nr_solve_with_ybus(network, &ybus, &injections, options)?;
        if !result.converged {
            non_converged += 1;
        }
        results.push(result);
    }
    Ok(ScenarioSeries { results, assignment: map, non_converged_slots: non_converged })
}

/// Error statistics over all compared bus-timesteps.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ComparisonStats {
    pub mae: f64,
    pub r2: f64,
    pub p5_abs_error: f64,
    pub p95_abs_error: f64,
}

fn stats_from(truth: &[f64], candidate: &[f64]) -> ComparisonStats {
    let n = truth.len() as f64;
    let mut abs_errors: Vec<f64> = truth
        .iter()
        .zip(candidate)
        .map(|(t, c)| (t - c).abs())
        .collect();
    let mae = abs_errors.iter().sum::<f64>() / n;
    let mean_t = truth.iter().sum::<f64>() / n;
    let ss_res: f64 = truth.iter().zip(candidate).map(|(t, c)| (t - c) * (t - c)).sum();
    let ss_tot: f64 = truth.iter().map(|t| (t - mean_t) * (t - mean_t)).sum();
    let r2 = if ss_res == 0.0 {
        1.0
    } else if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else {
        f64::NEG_INFINITY
    };
    abs_errors.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    ComparisonStats {
        mae,
        r2,
        p5_abs_error: quantile_sorted(&abs_errors, 0.05),
        p95_abs_error: quantile_sorted(&abs_errors, 0.95),
    }
}

/// Voltage (volts at nominal) and angle (degrees) comparison of a
/// candidate series against the truth, over PQ buses and slots where
/// both sides converged.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LoadFlowComparison {
    pub voltage: ComparisonStats,
    pub angle: ComparisonStats,
    pub excluded_slots: usize,
    pub compared_points: usize,
}

pub fn compare_results(
    network: &NetworkModel,
    truth: &ScenarioSeries,
    candidate: &ScenarioSeries,
) -> Result<LoadFlowComparison, PowerFlowError> {
    if truth.results.len() != candidate.results.len() {
        return Err(PowerFlowError::Dimension(format!(
            "{} truth slots vs {} candidate slots",
            truth.results.len(),
            candidate.results.len()
        )));
    }
    let pq = network.pq_indices();
    for series in [truth, candidate] {
        for r in &series.results {
            if r.v_pu.len() != network.buses.len() {
                return Err(PowerFlowError::Dimension(format!(
                    "result covers {} buses, network has {}",
                    r.v_pu.len(),
                    network.buses.len()
                )));
            }
        }
    }

    let mut v_truth = Vec::new();
    let mut v_cand = Vec::new();
    let mut a_truth = Vec::new();
    let mut a_cand = Vec::new();
    let mut excluded = 0;
    for (rt, rc) in truth.results.iter().zip(&candidate.results) {
        if !(rt.converged && rc.converged) {
            excluded += 1;
            continue;
        }
        for &bus in &pq {
            let volts = network.buses[bus].nominal_kv * 1000.0;
            v_truth.push(rt.v_pu[bus] * volts);
            v_cand.push(rc.v_pu[bus] * volts);
            a_truth.push(rt.theta_deg[bus]);
            a_cand.push(rc.theta_deg[bus]);
        }
    }
    if v_truth.is_empty() {
        return Err(PowerFlowError::Dimension(
            "no mutually converged slots to compare".into(),
        ));
    }
    Ok(LoadFlowComparison {
        voltage: stats_from(&v_truth, &v_cand),
        angle: stats_from(&a_truth, &a_cand),
        excluded_slots: excluded,
        compared_points: v_truth.len(),
    })
}

/// Pointwise mean with min/max envelope across repeated runs of the same
/// scenario (single-bus time-series plots).
#[derive(Debug, Clone, PartialEq)]
pub struct Band {
    pub mean: Vec<f64>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

pub fn repeat_and_band(runs: &[Vec<f64>]) -> Result<Band, PowerFlowError> {
    if runs.len() < 2 {
        return Err(PowerFlowError::Dimension(format!(
            "need at least 2 runs, got {}",
            runs.len()
        )));
    }
    let len = runs[0].len();
    if runs.iter().any(|r| r.len() != len) {
        return Err(PowerFlowError::Dimension("ragged run lengths".into()));
    }
    let mut band = Band {
        mean: vec![0.0; len],
        min: vec![f64::INFINITY; len],
        max: vec![f64::NEG_INFINITY; len],
    };
    for run in runs {
        for (t, v) in run.iter().enumerate() {
            band.mean[t] += v;
            band.min[t] = band.min[t].min(*v);
            band.max[t] = band.max[t].max(*v);
        }
    }
    for m in &mut band.mean {
        *m /= runs.len() as f64;
    }
    Ok(band)
}

/// Extract one bus's per-slot voltage magnitude from a series.
pub fn bus_voltage_series(series: &ScenarioSeries, bus: usize) -> Vec<f64> {
    series.results.iter().map(|r| r.v_pu[bus]).collect()
}

/// Extract one bus's per-slot angle (degrees) from a series.
pub fn bus_angle_series(series: &ScenarioSeries, bus: usize) -> Vec<f64> {
    series.results.iter().map(|r| r.theta_deg[bus]).collect()
}

/// CSV export: `bus_id, timestep, v_pu, theta_deg, converged`.
pub fn write_results_csv(
    path: &Path,
    network: &NetworkModel,
    series: &ScenarioSeries,
) -> std::io::Result<()> {
    use std::io::Write;
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "bus_id,timestep,v_pu,theta_deg,converged")?;
    for (slot, r) in series.results.iter().enumerate() {
        for (i, bus) in network.buses.iter().enumerate() {
            writeln!(
                f,
                "{},{slot},{:.9},{:.9},{}",
                bus.id, r.v_pu[i], r.theta_deg[i], r.converged
            )?;
        }
    }
    Ok(())
}
