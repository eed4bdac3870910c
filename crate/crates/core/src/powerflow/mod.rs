//! MV network model and Newton-Raphson load flow.
//!
//! Buses are either the single slack (fixed 1.0 p.u., 0 deg) or PQ
//! loads. The nodal admittance matrix follows the standard assembly:
//! series admittance negated on off-diagonals, diagonals summing
//! incident admittances plus half line charging, transformer taps on the
//! from side. Mismatches come from the complex nodal power equation and
//! the Jacobian blocks are assembled analytically.

pub mod netfile;
pub mod scenario;

pub use netfile::load_network_file;
pub use scenario::{
    compare_results, repeat_and_band, scenario_run, Assignment, Band, ComparisonStats,
    LoadFlowComparison, ScenarioSeries,
};

use nalgebra::{Complex, DMatrix, DVector};
use thiserror::Error;

pub type C64 = Complex<f64>;

#[derive(Debug, Error)]
pub enum PowerFlowError {
    #[error("network validation failed: {0}")]
    InvalidNetwork(String),
    #[error("branch {from}-{to} has zero series impedance")]
    ZeroImpedance { from: String, to: String },
    #[error("unknown bus `{0}` referenced by a branch")]
    UnknownBus(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("network file error at line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum BusKind {
    Slack,
    Pq,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Bus {
    pub id: String,
    pub nominal_kv: f64,
    pub kind: BusKind,
}

/// A line in per-unit on the system base; `b_pu` is the total shunt
/// charging susceptance (half at each end).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Line {
    pub from: String,
    pub to: String,
    pub r_pu: f64,
    pub x_pu: f64,
    pub b_pu: f64,
}

/// Two-winding transformer with an off-nominal tap on the from side.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Transformer {
    pub from: String,
    pub to: String,
    pub r_pu: f64,
    pub x_pu: f64,
    pub tap: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NetworkModel {
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    pub transformers: Vec<Transformer>,
    pub base_mva: f64,
    /// Designed voltage band, p.u.
    pub v_limits: (f64, f64),
}

impl NetworkModel {
    pub fn bus_index(&self, id: &str) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    pub fn slack_index(&self) -> usize {
        self.buses
            .iter()
            .position(|b| b.kind == BusKind::Slack)
            .expect("validated network has a slack")
    }

    pub fn pq_indices(&self) -> Vec<usize> {
        (0..self.buses.len())
            .filter(|&i| self.buses[i].kind == BusKind::Pq)
            .collect()
    }

    pub fn validate(&self) -> Result<(), PowerFlowError> {
        let n = self.buses.len();
        if n == 0 {
            return Err(PowerFlowError::InvalidNetwork("no buses".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for b in &self.buses {
            if !seen.insert(&b.id) {
                return Err(PowerFlowError::InvalidNetwork(format!("duplicate bus id `{}`", b.id)));
            }
        }
        let slacks = self.buses.iter().filter(|b| b.kind == BusKind::Slack).count();
        if slacks != 1 {
            return Err(PowerFlowError::InvalidNetwork(format!(
                "expected exactly one slack bus, found {slacks}"
            )));
        }
        if self.base_mva <= 0.0 {
            return Err(PowerFlowError::InvalidNetwork("base MVA must be positive".into()));
        }
        // branches reference known buses, with nonzero series impedance
        let mut adjacency = vec![Vec::new(); n];
        let mut connect = |from: &str, to: &str, r: f64, x: f64| -> Result<(), PowerFlowError> {
            let fi = self
                .bus_index(from)
                .ok_or_else(|| PowerFlowError::UnknownBus(from.to_string()))?;
            let ti = self
                .bus_index(to)
                .ok_or_else(|| PowerFlowError::UnknownBus(to.to_string()))?;
            if r == 0.0 && x == 0.0 {
                return Err(PowerFlowError::ZeroImpedance {
                    from: from.to_string(),
                    to: to.to_string(),
                });
            }
            if !(r.is_finite() && x.is_finite()) {
                return Err(PowerFlowError::InvalidNetwork(format!(
                    "non-finite impedance on {from}-{to}"
                )));
            }
            adjacency[fi].push(ti);
            adjacency[ti].push(fi);
            Ok(())
        };
        for l in &self.lines {
            connect(&l.from, &l.to, l.r_pu, l.x_pu)?;
        }
        for t in &self.transformers {
            connect(&t.from, &t.to, t.r_pu, t.x_pu)?;
            if t.tap <= 0.0 {
                return Err(PowerFlowError::InvalidNetwork(format!(
                    "transformer {}-{} has non-positive tap",
                    t.from, t.to
                )));
            }
        }
        // connectivity from the slack
        let mut visited = vec![false; n];
        let mut stack = vec![self.slack_index()];
        while let Some(i) = stack.pop() {
            if visited[i] {
                continue;
            }
            visited[i] = true;
            stack.extend(adjacency[i].iter().filter(|&&j| !visited[j]));
        }
        if let Some(i) = visited.iter().position(|v| !v) {
            return Err(PowerFlowError::InvalidNetwork(format!(
                "bus `{}` is disconnected from the slack",
                self.buses[i].id
            )));
        }
        Ok(())
    }
}

/// Demand at the PQ buses, consumption positive, in per-unit on the
/// system base, ordered like [`NetworkModel::pq_indices`].
#[derive(Debug, Clone, PartialEq)]
pub struct BusInjection {
    pub p_load_pu: Vec<f64>,
    pub q_load_pu: Vec<f64>,
}

impl BusInjection {
    pub fn zeros(n_pq: usize) -> Self {
        Self { p_load_pu: vec![0.0; n_pq], q_load_pu: vec![0.0; n_pq] }
    }

    /// From physical kW / kVAr demands.
    pub fn from_kw(p_kw: &[f64], q_kvar: &[f64], base_mva: f64) -> Self {
        Self {
            p_load_pu: p_kw.iter().map(|p| p / 1000.0 / base_mva).collect(),
            q_load_pu: q_kvar.iter().map(|q| q / 1000.0 / base_mva).collect(),
        }
    }
}

/// Standard nodal admittance assembly.
pub fn build_ybus(network: &NetworkModel) -> Result<DMatrix<C64>, PowerFlowError> {
    network.validate()?;
    let n = network.buses.len();
    let mut y = DMatrix::from_element(n, n, C64::new(0.0, 0.0));
    for l in &network.lines {
        let fi = network.bus_index(&l.from).expect("validated");
        let ti = network.bus_index(&l.to).expect("validated");
        let ys = C64::new(1.0, 0.0) / C64::new(l.r_pu, l.x_pu);
        let shunt = C64::new(0.0, l.b_pu / 2.0);
        y[(fi, fi)] += ys + shunt;
        y[(ti, ti)] += ys + shunt;
        y[(fi, ti)] -= ys;
        y[(ti, fi)] -= ys;
    }
    for t in &network.transformers {
        let fi = network.bus_index(&t.from).expect("validated");
        let ti = network.bus_index(&t.to).expect("validated");
        let ys = C64::new(1.0, 0.0) / C64::new(t.r_pu, t.x_pu);
        let a = C64::new(t.tap, 0.0);
        y[(fi, fi)] += ys / (a * a);
        y[(ti, ti)] += ys;
        y[(fi, ti)] -= ys / a;
        y[(ti, fi)] -= ys / a;
    }
    Ok(y)
}

/// Calculated nodal injections `P_n + jQ_n = E_n * conj(sum Y_nm E_m)`
/// at every bus, for voltage magnitudes `v` and angles `theta` (radians).
pub fn calculated_injections(
    v: &[f64],
    theta: &[f64],
    ybus: &DMatrix<C64>,
) -> (Vec<f64>, Vec<f64>) {
    let n = v.len();
    let e: Vec<C64> = (0..n).map(|i| C64::from_polar(v[i], theta[i])).collect();
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    for i in 0..n {
        let mut current = C64::new(0.0, 0.0);
        for j in 0..n {
            current += ybus[(i, j)] * e[j];
        }
        let s = e[i] * current.conj();
        p[i] = s.re;
        q[i] = s.im;
    }
    (p, q)
}

/// Power mismatches (calculated minus specified) at the PQ buses.
/// Specified net injection is the negated load (consumption positive).
pub fn mismatch(
    v: &[f64],
    theta: &[f64],
    injections: &BusInjection,
    ybus: &DMatrix<C64>,
    pq: &[usize],
) -> Result<(Vec<f64>, Vec<f64>), PowerFlowError> {
    if v.len() != theta.len() || v.len() != ybus.nrows() {
        return Err(PowerFlowError::Dimension(format!(
            "state {} / {} vs ybus {}",
            v.len(),
            theta.len(),
            ybus.nrows()
        )));
    }
    if injections.p_load_pu.len() != pq.len() || injections.q_load_pu.len() != pq.len() {
        return Err(PowerFlowError::Dimension(format!(
            "{} PQ buses vs {} injections",
            pq.len(),
            injections.p_load_pu.len()
        )));
    }
    let (p_calc, q_calc) = calculated_injections(v, theta, ybus);
    let dp: Vec<f64> = pq
        .iter()
        .enumerate()
        .map(|(k, &i)| p_calc[i] - (-injections.p_load_pu[k]))
        .collect();
    let dq: Vec<f64> = pq
        .iter()
        .enumerate()
        .map(|(k, &i)| q_calc[i] - (-injections.q_load_pu[k]))
        .collect();
    Ok((dp, dq))
}

/// Analytic Jacobian of the calculated PQ-bus injections with respect to
/// the PQ unknowns, blocks `[[dP/dtheta, dP/dV], [dQ/dtheta, dQ/dV]]`.
pub fn jacobian(
    v: &[f64],
    theta: &[f64],
    ybus: &DMatrix<C64>,
    pq: &[usize],
) -> DMatrix<f64> {
    let m = pq.len();
    let mut jac = DMatrix::zeros(2 * m, 2 * m);
    for (r, &i) in pq.iter().enumerate() {
        let vi = v[i];
        for (c, &j) in pq.iter().enumerate() {
            let y = ybus[(i, j)];
            let (g, b) = (y.re, y.im);
            if i == j {
                let mut sum_dp_dt = 0.0;
                let mut sum_dq_dt = 0.0;
                let mut sum_dp_dv = 0.0;
                let mut sum_dq_dv = 0.0;
                for k in 0..v.len() {
                    if k == i {
                        continue;
                    }
                    let yk = ybus[(i, k)];
                    let (gk, bk) = (yk.re, yk.im);
                    let t_ik = theta[i] - theta[k];
                    let (sin, cos) = t_ik.sin_cos();
                    sum_dp_dt += v[k] * (-gk * sin + bk * cos);
                    sum_dq_dt += v[k] * (gk * cos + bk * sin);
                    sum_dp_dv += v[k] * (gk * cos + bk * sin);
                    sum_dq_dv += v[k] * (gk * sin - bk * cos);
                }
                jac[(r, c)] = vi * sum_dp_dt;
                jac[(m + r, c)] = vi * sum_dq_dt;
                jac[(r, m + c)] = 2.0 * vi * g + sum_dp_dv;
                jac[(m + r, m + c)] = -2.0 * vi * b + sum_dq_dv;
            } else {
                let vj = v[j];
                let t_ij = theta[i] - theta[j];
                let (sin, cos) = t_ij.sin_cos();
                jac[(r, c)] = vi * vj * (g * sin - b * cos);
                jac[(m + r, c)] = -vi * vj * (g * cos + b * sin);
                jac[(r, m + c)] = vi * (g * cos + b * sin);
                jac[(m + r, m + c)] = vi * (g * sin - b * cos);
            }
        }
    }
    jac
}

/// Solver settings: flat start, mismatch tolerance in p.u.
#[derive(Debug, Clone, Copy)]
pub struct NrOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for NrOptions {
    fn default() -> Self {
        Self { tolerance: 1e-8, max_iterations: 50 }
    }
}

/// Per-bus solution; angles in degrees, slack exactly (1.0, 0.0).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LoadFlowResult {
    pub v_pu: Vec<f64>,
    pub theta_deg: Vec<f64>,
    pub iterations: usize,
    pub max_mismatch: f64,
    pub converged: bool,
}

/// Newton-Raphson from a flat start. Non-convergence (iteration budget,
/// singular Jacobian, non-finite state) is reported in the result, not
/// raised.
pub fn nr_solve(
    network: &NetworkModel,
    injections: &BusInjection,
    options: &NrOptions,
) -> Result<LoadFlowResult, PowerFlowError> {
    let ybus = build_ybus(network)?;
    nr_solve_with_ybus(network, &ybus, injections, options)
}

/// Solver core reusing a prebuilt admittance matrix (scenario runs solve
/// one network many times).
pub fn nr_solve_with_ybus(
    network: &NetworkModel,
    ybus: &DMatrix<C64>,
    injections: &BusInjection,
    options: &NrOptions,
) -> Result<LoadFlowResult, PowerFlowError> {
    let n = network.buses.len();
    let pq = network.pq_indices();
    let m = pq.len();
    if injections.p_load_pu.len() != m {
        return Err(PowerFlowError::Dimension(format!(
            "{m} PQ buses vs {} injections",
            injections.p_load_pu.len()
        )));
    }
    let mut v = vec![1.0; n];
    let mut theta = vec![0.0; n];

    let mut iterations = 0;
    let mut converged = false;
    let mut max_mm = f64::INFINITY;
    for iter in 0..=options.max_iterations {
        let (dp, dq) = mismatch(&v, &theta, injections, ybus, &pq)?;
        max_mm = dp
            .iter()
            .chain(dq.iter())
            .fold(0.0f64, |acc, x| acc.max(x.abs()));
        if !max_mm.is_finite() {
            iterations = iter;
            break;
        }
        if max_mm <= options.tolerance {
            iterations = iter;
            converged = true;
            break;
        }
        if iter == options.max_iterations {
            iterations = iter;
            break;
        }
        let jac = jacobian(&v, &theta, ybus, &pq);
        let mut rhs = DVector::zeros(2 * m);
        for k in 0..m {
            rhs[k] = -dp[k];
            rhs[m + k] = -dq[k];
        }
        let Some(dx) = jac.lu().solve(&rhs) else {
            iterations = iter;
            break; // singular Jacobian: report divergence
        };
        for (k, &i) in pq.iter().enumerate() {
            theta[i] += dx[k];
            v[i] += dx[m + k];
        }
        iterations = iter + 1;
    }

    Ok(LoadFlowResult {
        v_pu: v,
        theta_deg: theta.iter().map(|t| t.to_degrees()).collect(),
        iterations,
        max_mismatch: max_mm,
        converged,
    })
}

/// Complex slack injection and total branch losses at a solved state.
/// The slack side comes from the nodal equations; the losses are summed
/// branch by branch from the terminal flows, so the two sides of the
/// conservation check take independent routes.
pub fn power_balance(
    network: &NetworkModel,
    result: &LoadFlowResult,
) -> Result<(C64, C64), PowerFlowError> {
    let ybus = build_ybus(network)?;
    let theta_rad: Vec<f64> = result.theta_deg.iter().map(|d| d.to_radians()).collect();
    let (p, q) = calculated_injections(&result.v_pu, &theta_rad, &ybus);
    let slack = network.slack_index();
    let s_slack = C64::new(p[slack], q[slack]);

    let e: Vec<C64> = (0..network.buses.len())
        .map(|i| C64::from_polar(result.v_pu[i], theta_rad[i]))
        .collect();
    let mut losses = C64::new(0.0, 0.0);
    for l in &network.lines {
        let fi = network.bus_index(&l.from).expect("validated");
        let ti = network.bus_index(&l.to).expect("validated");
        let ys = C64::new(1.0, 0.0) / C64::new(l.r_pu, l.x_pu);
        let shunt = C64::new(0.0, l.b_pu / 2.0);
        let i_from = (e[fi] - e[ti]) * ys + e[fi] * shunt;
        let i_to = (e[ti] - e[fi]) * ys + e[ti] * shunt;
        losses += e[fi] * i_from.conj() + e[ti] * i_to.conj();
    }
    for t in &network.transformers {
        let fi = network.bus_index(&t.from).expect("validated");
        let ti = network.bus_index(&t.to).expect("validated");
        let ys = C64::new(1.0, 0.0) / C64::new(t.r_pu, t.x_pu);
        let a = C64::new(t.tap, 0.0);
        let i_from = e[fi] * ys / (a * a) - e[ti] * ys / a;
        let i_to = e[ti] * ys - e[fi] * ys / a;
        losses += e[fi] * i_from.conj() + e[ti] * i_to.conj();
    }
    Ok((s_slack, losses))
}
