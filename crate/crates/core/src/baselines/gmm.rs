//! Gaussian mixture fitting by expectation-maximization with restarts,
//! and model-order selection by the Bayesian information criterion
//! `BIC = p ln n - 2 ln L`.

use super::BaselineError;
use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum CovarianceKind {
    Full,
    Diagonal,
}

/// A fitted mixture: weights on the simplex, one mean and covariance per
/// component over the day space.
#[derive(Debug, Clone)]
pub struct GmmModel {
    pub weights: Vec<f64>,
    pub means: Vec<DVector<f64>>,
    pub covariances: Vec<DMatrix<f64>>,
    pub kind: CovarianceKind,
}

impl GmmModel {
    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, |m| m.len())
    }

    /// Free parameter count for BIC.
    pub fn free_parameters(&self) -> usize {
        let k = self.components();
        let d = self.dim();
        let cov = match self.kind {
            CovarianceKind::Full => d * (d + 1) / 2,
            CovarianceKind::Diagonal => d,
        };
        (k - 1) + k * d + k * cov
    }

    /// Mixture mean (weighted component means).
    pub fn mixture_mean(&self) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim());
        for (w, m) in self.weights.iter().zip(&self.means) {
            out += m * *w;
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct GmmFitOptions {
    pub restarts: usize,
    pub max_iterations: usize,
    /// Relative log-likelihood change that counts as converged.
    pub tolerance: f64,
    pub covariance: CovarianceKind,
    pub seed: u64,
}

impl Default for GmmFitOptions {
    fn default() -> Self {
        Self {
            restarts: 10,
            max_iterations: 200,
            tolerance: 1e-6,
            covariance: CovarianceKind::Full,
            seed: 0,
        }
    }
}

/// Fit result: the BIC-selected model plus the (K, BIC) curve and the
/// winning run's log-likelihood trace.
#[derive(Debug, Clone)]
pub struct GmmFit {
    pub model: GmmModel,
    pub bic_curve: Vec<(usize, f64)>,
    pub log_likelihood: f64,
    pub ll_trace: Vec<f64>,
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

struct ComponentDensity {
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    log_norm: f64,
}

impl ComponentDensity {
    fn new(cov: &DMatrix<f64>) -> Option<Self> {
        let d = cov.nrows();
        let chol = cov.clone().cholesky()?;
        let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let log_norm = -0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + log_det);
        Some(Self { chol, log_norm })
    }

    fn log_pdf(&self, diff: &DVector<f64>) -> f64 {
        let solved = self.chol.l().solve_lower_triangular(diff).expect("triangular solve");
        self.log_norm - 0.5 * solved.norm_squared()
    }
}

fn ridge_for(data_scale: f64) -> f64 {
    1e-6 * data_scale.max(1e-12)
}

fn apply_ridge(cov: &mut DMatrix<f64>, ridge: f64) {
    for i in 0..cov.nrows() {
        cov[(i, i)] += ridge;
    }
}

struct EmRun {
    model: GmmModel,
    log_likelihood: f64,
    trace: Vec<f64>,
}

fn em_once(
    rows: &[DVector<f64>],
    k: usize,
    opts: &GmmFitOptions,
    rng: &mut ChaCha8Rng,
) -> Result<EmRun, BaselineError> {
    let n = rows.len();
    let d = rows[0].len();
    let data_scale = {
        let mean = rows.iter().fold(DVector::zeros(d), |acc, r| acc + r) / n as f64;
        rows.iter().map(|r| (r - &mean).norm_squared()).sum::<f64>() / (n as f64 * d as f64)
    };
    let ridge = ridge_for(data_scale);

    // k-means initialization: ++ seeding followed by Lloyd refinement
    let mut means: Vec<DVector<f64>> = Vec::with_capacity(k);
    means.push(rows[rng.gen_range(0..n)].clone());
    while means.len() < k {
        let dists: Vec<f64> = rows
            .iter()
            .map(|r| {
                means
                    .iter()
                    .map(|m| (r - m).norm_squared())
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = dists.iter().sum();
        if total <= 0.0 {
            means.push(rows[rng.gen_range(0..n)].clone());
            continue;
        }
        let mut pick = rng.gen_range(0.0..total);
        let mut idx = 0;
        for (i, w) in dists.iter().enumerate() {
            pick -= w;
            if pick <= 0.0 {
                idx = i;
                break;
            }
        }
        means.push(rows[idx].clone());
    }
    let mut assign = vec![0usize; n];
    for _ in 0..10 {
        let mut moved = false;
        for (i, row) in rows.iter().enumerate() {
            let best = (0..k)
                .min_by(|&a, &b| {
                    (row - &means[a])
                        .norm_squared()
                        .partial_cmp(&(row - &means[b]).norm_squared())
                        .expect("finite")
                })
                .expect("k >= 1");
            if assign[i] != best {
                assign[i] = best;
                moved = true;
            }
        }
        for (j, mean) in means.iter_mut().enumerate() {
            let members: Vec<&DVector<f64>> =
                rows.iter().zip(&assign).filter(|(_, a)| **a == j).map(|(r, _)| r).collect();
            if !members.is_empty() {
                *mean = members.iter().fold(DVector::zeros(d), |acc, r| acc + *r)
                    / members.len() as f64;
            }
        }
        if !moved {
            break;
        }
    }

    let global_cov = {
        let mean = rows.iter().fold(DVector::zeros(d), |acc, r| acc + r) / n as f64;
        let mut cov = DMatrix::zeros(d, d);
        for r in rows {
            let diff = r - &mean;
            cov += &diff * diff.transpose();
        }
        cov /= n as f64;
        if opts.covariance == CovarianceKind::Diagonal {
            let diag = cov.diagonal();
            cov = DMatrix::from_diagonal(&diag);
        }
        apply_ridge(&mut cov, ridge);
        cov
    };

    // per-cluster covariances from the k-means assignment
    let mut weights = vec![0.0f64; k];
    let mut covariances = vec![global_cov.clone(); k];
    for j in 0..k {
        let members: Vec<&DVector<f64>> =
            rows.iter().zip(&assign).filter(|(_, a)| **a == j).map(|(r, _)| r).collect();
        weights[j] = members.len().max(1) as f64 / n as f64;
        if members.len() > d {
            let mut cov = DMatrix::zeros(d, d);
            for r in &members {
                let diff = *r - &means[j];
                match opts.covariance {
                    CovarianceKind::Full => cov += &diff * diff.transpose(),
                    CovarianceKind::Diagonal => {
                        for di in 0..d {
                            cov[(di, di)] += diff[di] * diff[di];
                        }
                    }
                }
            }
            cov /= members.len() as f64;
            apply_ridge(&mut cov, ridge);
            covariances[j] = cov;
        }
    }
    let wsum: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= wsum);
    let mut trace: Vec<f64> = Vec::new();
    let mut resp = vec![vec![0.0f64; k]; n];

    for _iter in 0..opts.max_iterations {
        // E step
        let densities: Vec<ComponentDensity> = covariances
            .iter()
            .map(|c| {
                ComponentDensity::new(c).ok_or_else(|| {
                    BaselineError::DegenerateFit("covariance not positive definite".into())
                })
            })
            .collect::<Result<_, _>>()?;
        let mut ll = 0.0;
        for (i, row) in rows.iter().enumerate() {
            let logs: Vec<f64> = (0..k)
                .map(|j| weights[j].max(1e-300).ln() + densities[j].log_pdf(&(row - &means[j])))
                .collect();
            let norm = log_sum_exp(&logs);
            ll += norm;
            for j in 0..k {
                resp[i][j] = (logs[j] - norm).exp();
            }
        }
        let converged = trace
            .last()
            .is_some_and(|prev| (ll - prev).abs() <= opts.tolerance * (1.0 + ll.abs()));
        trace.push(ll);
        if converged {
            break;
        }

        // M step
        for j in 0..k {
            let nj: f64 = resp.iter().map(|r| r[j]).sum();
            if nj < 1e-10 {
                return Err(BaselineError::DegenerateFit(format!(
                    "component {j} collapsed to zero responsibility"
                )));
            }
            weights[j] = nj / n as f64;
            let mut mean = DVector::zeros(d);
            for (i, row) in rows.iter().enumerate() {
                mean += row * resp[i][j];
            }
            mean /= nj;
            let mut cov = DMatrix::zeros(d, d);
            for (i, row) in rows.iter().enumerate() {
                let diff = row - &mean;
                match opts.covariance {
                    CovarianceKind::Full => cov += &diff * diff.transpose() * resp[i][j],
                    CovarianceKind::Diagonal => {
                        for di in 0..d {
                            cov[(di, di)] += diff[di] * diff[di] * resp[i][j];
                        }
                    }
                }
            }
            cov /= nj;
            apply_ridge(&mut cov, ridge);
            means[j] = mean;
            covariances[j] = cov;
        }
    }

    let log_likelihood = *trace.last().expect("at least one iteration");
    Ok(EmRun {
        model: GmmModel { weights, means, covariances, kind: opts.covariance },
        log_likelihood,
        trace,
    })
}

fn fit_k(
    rows: &[DVector<f64>],
    k: usize,
    opts: &GmmFitOptions,
    seed_offset: u64,
) -> Result<EmRun, BaselineError> {
    let mut best: Option<EmRun> = None;
    let mut last_err = None;
    for restart in 0..opts.restarts.max(1) {
        let mut rng =
            ChaCha8Rng::seed_from_u64(opts.seed ^ (seed_offset << 32) ^ restart as u64);
        match em_once(rows, k, opts, &mut rng) {
            Ok(run) => {
                if best.as_ref().is_none_or(|b| run.log_likelihood > b.log_likelihood) {
                    best = Some(run);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| last_err.unwrap_or(BaselineError::EmptyData))
}

/// Fit mixtures for K = 1..k_max and return the BIC minimizer.
/// `profiles` is days x dim (one row per day).
pub fn fit_gmm(
    profiles: &Array2<f64>,
    k_max: usize,
    opts: &GmmFitOptions,
) -> Result<GmmFit, BaselineError> {
    let (n, d) = profiles.dim();
    if n == 0 || d == 0 {
        return Err(BaselineError::EmptyData);
    }
    if k_max < 1 {
        return Err(BaselineError::BadInput("k_max must be >= 1".into()));
    }
    if n < k_max {
        return Err(BaselineError::DegenerateFit(format!(
            "{n} rows cannot support {k_max} components"
        )));
    }
    let rows: Vec<DVector<f64>> = (0..n)
        .map(|i| DVector::from_iterator(d, profiles.row(i).iter().copied()))
        .collect();

    let mut bic_curve = Vec::new();
    let mut best: Option<(f64, EmRun)> = None;
    for k in 1..=k_max {
        let run = fit_k(&rows, k, opts, k as u64)?;
        let p = run.model.free_parameters() as f64;
        let bic = p * (n as f64).ln() - 2.0 * run.log_likelihood;
        bic_curve.push((k, bic));
        if best.as_ref().is_none_or(|(b, _)| bic < *b) {
            best = Some((bic, run));
        }
    }
    let (_, run) = best.expect("at least one K fitted");
    Ok(GmmFit {
        model: run.model,
        bic_curve,
        log_likelihood: run.log_likelihood,
        ll_trace: run.trace,
    })
}

/// Draw `n` profiles: component by weight, then a Gaussian draw. The
/// sampling factor comes from a symmetric eigendecomposition so exactly
/// degenerate covariances collapse to the mean. Deterministic under seed.
pub fn gmm_sample(model: &GmmModel, n: usize, seed: u64) -> Array2<f64> {
    let d = model.dim();
    let factors: Vec<DMatrix<f64>> = model
        .covariances
        .iter()
        .map(|cov| {
            let eig = cov.clone().symmetric_eigen();
            let sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.max(0.0).sqrt()));
            &eig.eigenvectors * sqrt
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Array2::zeros((n, d));
    for i in 0..n {
        let mut pick: f64 = rng.gen_range(0.0..1.0);
        let mut comp = model.components() - 1;
        for (j, w) in model.weights.iter().enumerate() {
            pick -= w;
            if pick <= 0.0 {
                comp = j;
                break;
            }
        }
        let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let x = &model.means[comp] + &factors[comp] * z;
        for (j, v) in x.iter().enumerate() {
            out[[i, j]] = *v;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian_blob(
        n: usize,
        center: &[f64],
        spread: f64,
        rng: &mut ChaCha8Rng,
    ) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| {
                center
                    .iter()
                    .map(|c| c + spread * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect()
    }

    fn to_array(rows: Vec<Vec<f64>>) -> Array2<f64> {
        let n = rows.len();
        let d = rows[0].len();
        Array2::from_shape_fn((n, d), |(i, j)| rows[i][j])
    }

    fn quick_opts(seed: u64) -> GmmFitOptions {
        GmmFitOptions { restarts: 4, max_iterations: 100, seed, ..Default::default() }
    }

    #[test]
    fn single_gaussian_selects_one_component() {
        let mut hits = 0;
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let data = to_array(gaussian_blob(300, &[0.0; 4], 1.0, &mut rng));
            let fit = fit_gmm(&data, 3, &quick_opts(seed)).unwrap();
            if fit.model.components() == 1 {
                hits += 1;
            }
        }
        assert!(hits >= 18, "single Gaussian recovered in {hits}/20 seeds");
    }

    #[test]
    fn two_separated_clusters_select_two_components() {
        let mut hits = 0;
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(2000 + seed);
            let mut rows = gaussian_blob(300, &[-4.0; 4], 1.0, &mut rng);
            rows.extend(gaussian_blob(300, &[4.0; 4], 1.0, &mut rng));
            let data = to_array(rows);
            let fit = fit_gmm(&data, 3, &quick_opts(seed)).unwrap();
            if fit.model.components() == 2 {
                hits += 1;
            }
        }
        assert!(hits >= 18, "two components recovered in {hits}/20 seeds");
    }

    #[test]
    fn log_likelihood_is_monotone_across_iterations() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut rows = gaussian_blob(150, &[-2.0, 0.0, 1.0], 1.0, &mut rng);
        rows.extend(gaussian_blob(150, &[3.0, 1.0, -1.0], 0.7, &mut rng));
        let data = to_array(rows);
        let fit = fit_gmm(&data, 2, &quick_opts(3)).unwrap();
        for pair in fit.ll_trace.windows(2) {
            assert!(
                pair[1] >= pair[0] - 1e-10,
                "EM log-likelihood decreased: {} -> {}",
                pair[0],
                pair[1]
            );
        }
    }

    #[test]
    fn weights_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut rows = gaussian_blob(100, &[0.0, 0.0], 1.0, &mut rng);
        rows.extend(gaussian_blob(60, &[5.0, 5.0], 0.5, &mut rng));
        let fit = fit_gmm(&to_array(rows), 2, &quick_opts(4)).unwrap();
        let total: f64 = fit.model.weights.iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn fewer_rows_than_components_is_degenerate() {
        let data = Array2::zeros((2, 4));
        assert!(matches!(
            fit_gmm(&data, 3, &quick_opts(0)),
            Err(BaselineError::DegenerateFit(_))
        ));
    }

    #[test]
    fn zero_covariance_samples_equal_the_mean() {
        let model = GmmModel {
            weights: vec![1.0],
            means: vec![DVector::from_vec(vec![2.0, -1.0, 0.5])],
            covariances: vec![DMatrix::zeros(3, 3)],
            kind: CovarianceKind::Full,
        };
        let samples = gmm_sample(&model, 10, 42);
        for i in 0..10 {
            assert_eq!(samples[[i, 0]], 2.0);
            assert_eq!(samples[[i, 1]], -1.0);
            assert_eq!(samples[[i, 2]], 0.5);
        }
    }

    #[test]
    fn sample_mean_approaches_mixture_mean() {
        let model = GmmModel {
            weights: vec![0.3, 0.7],
            means: vec![
                DVector::from_vec(vec![0.0, 0.0]),
                DVector::from_vec(vec![10.0, -10.0]),
            ],
            covariances: vec![DMatrix::identity(2, 2), DMatrix::identity(2, 2) * 4.0],
            kind: CovarianceKind::Full,
        };
        let n = 100_000;
        let samples = gmm_sample(&model, n, 7);
        let mix_mean = model.mixture_mean();
        // per-dim std of the mixture is bounded by sqrt(E var + var of means)
        let se = (2.0 + 0.21 * 100.0f64).sqrt() / (n as f64).sqrt();
        for j in 0..2 {
            let mean = samples.column(j).sum() / n as f64;
            assert!(
                (mean - mix_mean[j]).abs() < 3.0 * se * 3.0,
                "dim {j}: {mean} vs {}",
                mix_mean[j]
            );
        }
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let model = GmmModel {
            weights: vec![0.5, 0.5],
            means: vec![DVector::from_vec(vec![0.0]), DVector::from_vec(vec![5.0])],
            covariances: vec![DMatrix::identity(1, 1), DMatrix::identity(1, 1)],
            kind: CovarianceKind::Full,
        };
        assert_eq!(gmm_sample(&model, 50, 9), gmm_sample(&model, 50, 9));
        assert_ne!(gmm_sample(&model, 50, 9), gmm_sample(&model, 50, 10));
    }
}
