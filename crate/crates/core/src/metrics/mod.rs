//! Synthesis-quality metrics: MSE, kernel MMD, 1-Wasserstein distance,
//! marginal score, MiVo, autocorrelation and decile curves.
//!
//! Corpora are `(days, 2, slots)` arrays of scaled values. Everything
//! here is deterministic: identical inputs give bit-identical reports.

pub mod report;

use chrono::NaiveDate;
use ndarray::{Array2, Array3};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("corpora are not paired: {0}")]
    Unpaired(String),
    #[error("need at least {need} rows, got {got}")]
    TooFewRows { need: usize, got: usize },
    #[error("empty input")]
    Empty,
    #[error("bins must be >= 2, got {0}")]
    BadBins(usize),
    #[error("autocorrelation undefined for a constant series")]
    ConstantSeries,
    #[error("series of length {len} cannot support lag {lag}")]
    LagTooLarge { len: usize, lag: usize },
    #[error("non-finite values in corpus `{0}`")]
    NonFinite(String),
}

/// A labelled set of day profiles, optionally keyed for row alignment.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub label: String,
    /// `(days, 2, slots)`, channel 0 = active, 1 = reactive.
    pub profiles: Array3<f64>,
    /// Pairing key per row (substation, date); required for MSE pairing
    /// when row order differs.
    pub keys: Option<Vec<(String, NaiveDate)>>,
}

impl Corpus {
    pub fn new(label: impl Into<String>, profiles: Array3<f64>) -> Self {
        Self { label: label.into(), profiles, keys: None }
    }

    pub fn with_keys(
        label: impl Into<String>,
        profiles: Array3<f64>,
        keys: Vec<(String, NaiveDate)>,
    ) -> Self {
        Self { label: label.into(), profiles, keys: Some(keys) }
    }

    pub fn len(&self) -> usize {
        self.profiles.dim().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channels(&self) -> usize {
        self.profiles.dim().1
    }

    pub fn slots(&self) -> usize {
        self.profiles.dim().2
    }

    fn check_finite(&self) -> Result<(), MetricsError> {
        if self.profiles.iter().any(|v| !v.is_finite()) {
            return Err(MetricsError::NonFinite(self.label.clone()));
        }
        Ok(())
    }

    /// Rows flattened to `2 * slots` vectors.
    fn flattened_rows(&self) -> Vec<Vec<f64>> {
        let (n, c, l) = self.profiles.dim();
        (0..n)
            .map(|i| {
                let mut row = Vec::with_capacity(c * l);
                for ch in 0..c {
                    for t in 0..l {
                        row.push(self.profiles[[i, ch, t]]);
                    }
                }
                row
            })
            .collect()
    }
}

/// Empirical quantile with linear interpolation between order statistics.
/// `sorted` must be ascending and non-empty.
pub fn quantile_sorted(sorted: &[f64], level: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * level.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Align two corpora row-by-row. Keyed corpora align by key; unkeyed
/// pairs align by index and must have equal lengths.
fn pair_rows<'a>(
    real: &'a Corpus,
    generated: &'a Corpus,
) -> Result<Vec<(usize, usize)>, MetricsError> {
    match (&real.keys, &generated.keys) {
        (Some(rk), Some(gk)) => {
            let mut index: std::collections::BTreeMap<&(String, NaiveDate), usize> =
                std::collections::BTreeMap::new();
            for (i, k) in gk.iter().enumerate() {
                index.insert(k, i);
            }
            rk.iter()
                .enumerate()
                .map(|(i, k)| {
                    index
                        .get(k)
                        .map(|&j| (i, j))
                        .ok_or_else(|| MetricsError::Unpaired(format!("no generated row for {k:?}")))
                })
                .collect()
        }
        (None, None) => {
            if real.len() != generated.len() {
                return Err(MetricsError::Unpaired(format!(
                    "{} vs {} rows with no pairing keys",
                    real.len(),
                    generated.len()
                )));
            }
            Ok((0..real.len()).map(|i| (i, i)).collect())
        }
        _ => Err(MetricsError::Unpaired(
            "one corpus is keyed, the other is not".into(),
        )),
    }
}

/// Mean squared error over all aligned elements.
pub fn mse(real: &Corpus, generated: &Corpus) -> Result<f64, MetricsError> {
    real.check_finite()?;
    generated.check_finite()?;
    let pairs = pair_rows(real, generated)?;
    if pairs.is_empty() {
        return Err(MetricsError::Empty);
    }
    let (_, c, l) = real.profiles.dim();
    let mut acc = 0.0;
    for (i, j) in &pairs {
        for ch in 0..c {
            for t in 0..l {
                let d = real.profiles[[*i, ch, t]] - generated.profiles[[*j, ch, t]];
                acc += d * d;
            }
        }
    }
    Ok(acc / (pairs.len() * c * l) as f64)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Median pairwise distance of the pooled sample (the bandwidth default).
pub fn median_heuristic(real: &Corpus, generated: &Corpus) -> f64 {
    let mut rows = real.flattened_rows();
    rows.extend(generated.flattened_rows());
    let mut dists = Vec::new();
    for i in 0..rows.len() {
        for j in (i + 1)..rows.len() {
            dists.push(sq_dist(&rows[i], &rows[j]).sqrt());
        }
    }
    dists.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    if dists.is_empty() {
        return 1.0;
    }
    let m = quantile_sorted(&dists, 0.5);
    if m > 0.0 {
        m
    } else {
        1.0
    }
}

fn gaussian_kernel(a: &[f64], b: &[f64], sigma: f64) -> f64 {
    (-sq_dist(a, b) / (2.0 * sigma * sigma)).exp()
}

/// Unbiased squared-MMD estimate with a Gaussian kernel over flattened
/// days, clamped at zero. Bandwidth defaults to the median heuristic.
pub fn mmd(real: &Corpus, generated: &Corpus, bandwidth: Option<f64>) -> Result<f64, MetricsError> {
    real.check_finite()?;
    generated.check_finite()?;
    let m = real.len();
    let n = generated.len();
    if m < 2 || n < 2 {
        return Err(MetricsError::TooFewRows { need: 2, got: m.min(n) });
    }
    let sigma = bandwidth.unwrap_or_else(|| median_heuristic(real, generated));
    let xs = real.flattened_rows();
    let ys = generated.flattened_rows();

    let mut kxx = 0.0;
    for i in 0..m {
        for j in 0..m {
            if i != j {
                kxx += gaussian_kernel(&xs[i], &xs[j], sigma);
            }
        }
    }
    let mut kyy = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                kyy += gaussian_kernel(&ys[i], &ys[j], sigma);
            }
        }
    }
    let mut kxy = 0.0;
    for x in &xs {
        for y in &ys {
            kxy += gaussian_kernel(x, y, sigma);
        }
    }
    let est = kxx / (m * (m - 1)) as f64 + kyy / (n * (n - 1)) as f64
        - 2.0 * kxy / (m * n) as f64;
    Ok(est.max(0.0))
}

/// Biased (V-statistic) squared-MMD estimate; exactly zero on identical
/// corpora and invariant under row duplication.
pub fn mmd_biased(
    real: &Corpus,
    generated: &Corpus,
    bandwidth: Option<f64>,
) -> Result<f64, MetricsError> {
    real.check_finite()?;
    generated.check_finite()?;
    let m = real.len();
    let n = generated.len();
    if m < 1 || n < 1 {
        return Err(MetricsError::Empty);
    }
    let sigma = bandwidth.unwrap_or_else(|| median_heuristic(real, generated));
    let xs = real.flattened_rows();
    let ys = generated.flattened_rows();
    let sum = |a: &[Vec<f64>], b: &[Vec<f64>]| -> f64 {
        let mut acc = 0.0;
        for x in a {
            for y in b {
                acc += gaussian_kernel(x, y, sigma);
            }
        }
        acc
    };
    let est = sum(&xs, &xs) / (m * m) as f64 + sum(&ys, &ys) / (n * n) as f64
        - 2.0 * sum(&xs, &ys) / (m * n) as f64;
    Ok(est.max(0.0))
}

/// 1-Wasserstein distance between two empirical scalar distributions,
/// computed from the quantile-function difference.
pub fn wasserstein1d(xs: &[f64], ys: &[f64]) -> Result<f64, MetricsError> {
    if xs.is_empty() || ys.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut xs_sorted = xs.to_vec();
    let mut ys_sorted = ys.to_vec();
    xs_sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    ys_sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite"));

    // merge all breakpoints of both empirical CDFs
    let mut all: Vec<f64> = xs_sorted.iter().chain(ys_sorted.iter()).copied().collect();
    all.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let cdf = |sorted: &[f64], v: f64| -> f64 {
        sorted.partition_point(|x| *x <= v) as f64 / sorted.len() as f64
    };
    let mut dist = 0.0;
    for w in all.windows(2) {
        let width = w[1] - w[0];
        if width <= 0.0 {
            continue;
        }
        let fx = cdf(&xs_sorted, w[0]);
        let fy = cdf(&ys_sorted, w[0]);
        dist += (fx - fy).abs() * width;
    }
    Ok(dist)
}

/// Per-channel Wasserstein distance over all pooled values, averaged
/// across channels.
pub fn wasserstein_corpus(real: &Corpus, generated: &Corpus) -> Result<f64, MetricsError> {
    real.check_finite()?;
    generated.check_finite()?;
    let (_, c, _) = real.profiles.dim();
    let mut total = 0.0;
    for ch in 0..c {
        let xs: Vec<f64> = real.profiles.index_axis(ndarray::Axis(1), ch).iter().copied().collect();
        let ys: Vec<f64> =
            generated.profiles.index_axis(ndarray::Axis(1), ch).iter().copied().collect();
        total += wasserstein1d(&xs, &ys)?;
    }
    Ok(total / c as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginalScore {
    /// Mean total-variation distance between per-timestep histograms,
    /// in [0, 1].
    pub score: f64,
    /// Timestep/channel cells that degenerated to a single bin.
    pub degenerate_cells: usize,
}

/// Histogram comparison per timestep: shared bin edges over the pooled
/// range, normalized masses, total-variation distance
/// `0.5 * sum |p - q|`, averaged over timesteps and channels.
pub fn marginal_score(
    real: &Corpus,
    generated: &Corpus,
    bins: usize,
) -> Result<MarginalScore, MetricsError> {
    if bins < 2 {
        return Err(MetricsError::BadBins(bins));
    }
    real.check_finite()?;
    generated.check_finite()?;
    if real.is_empty() || generated.is_empty() {
        return Err(MetricsError::Empty);
    }
    let (_, c, l) = real.profiles.dim();
    let mut total = 0.0;
    let mut degenerate = 0usize;
    for ch in 0..c {
        for t in 0..l {
            let xs: Vec<f64> = (0..real.len()).map(|i| real.profiles[[i, ch, t]]).collect();
            let ys: Vec<f64> =
                (0..generated.len()).map(|i| generated.profiles[[i, ch, t]]).collect();
            let lo = xs.iter().chain(ys.iter()).cloned().fold(f64::INFINITY, f64::min);
            let hi = xs.iter().chain(ys.iter()).cloned().fold(f64::NEG_INFINITY, f64::max);
            if hi - lo < 1e-12 {
                degenerate += 1; // single shared bin: identical masses
                continue;
            }
            let hist = |vals: &[f64]| -> Vec<f64> {
                let mut h = vec![0.0; bins];
                for v in vals {
                    let mut b = ((v - lo) / (hi - lo) * bins as f64) as usize;
                    if b >= bins {
                        b = bins - 1;
                    }
                    h[b] += 1.0;
                }
                let n = vals.len() as f64;
                h.iter_mut().for_each(|x| *x /= n);
                h
            };
            let hx = hist(&xs);
            let hy = hist(&ys);
            let tv: f64 = 0.5 * hx.iter().zip(&hy).map(|(a, b)| (a - b).abs()).sum::<f64>();
            total += tv;
        }
    }
    Ok(MarginalScore { score: total / (c * l) as f64, degenerate_cells: degenerate })
}

/// Mean absolute first difference along time, averaged over days.
fn volatility(corpus: &Corpus, channel: usize) -> f64 {
    let (n, _, l) = corpus.profiles.dim();
    let mut acc = 0.0;
    for i in 0..n {
        let mut day = 0.0;
        for t in 1..l {
            day += (corpus.profiles[[i, channel, t]] - corpus.profiles[[i, channel, t - 1]]).abs();
        }
        acc += day / (l - 1) as f64;
    }
    acc / n as f64
}

fn channel_min(corpus: &Corpus, channel: usize) -> f64 {
    corpus
        .profiles
        .index_axis(ndarray::Axis(1), channel)
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Composite minimum-plus-volatility distance:
/// `|min(real) - min(gen)| + |vol(real) - vol(gen)|` per channel,
/// averaged across channels. The cited source does not pin the formula;
/// this interpretation is flagged in every report footer.
pub fn mivo(real: &Corpus, generated: &Corpus) -> Result<f64, MetricsError> {
    real.check_finite()?;
    generated.check_finite()?;
    if real.is_empty() || generated.is_empty() {
        return Err(MetricsError::Empty);
    }
    let c = real.channels();
    let mut total = 0.0;
    for ch in 0..c {
        let min_term = (channel_min(real, ch) - channel_min(generated, ch)).abs();
        let vol_term = (volatility(real, ch) - volatility(generated, ch)).abs();
        total += min_term + vol_term;
    }
    Ok(total / c as f64)
}

/// Sample autocorrelation, normalized by the lag-0 autocovariance.
pub fn acf(series: &[f64], max_lag: usize) -> Result<Vec<f64>, MetricsError> {
    let n = series.len();
    if n <= max_lag {
        return Err(MetricsError::LagTooLarge { len: n, lag: max_lag });
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let denom: f64 = series.iter().map(|v| (v - mean) * (v - mean)).sum();
    if denom < 1e-24 {
        return Err(MetricsError::ConstantSeries);
    }
    let mut out = Vec::with_capacity(max_lag + 1);
    for lag in 0..=max_lag {
        let mut num = 0.0;
        for t in 0..(n - lag) {
            num += (series[t] - mean) * (series[t + lag] - mean);
        }
        out.push(num / denom);
    }
    Ok(out)
}

/// Per-day ACF averaged across days, one curve per channel. Constant
/// days are skipped and counted.
pub fn acf_corpus(
    corpus: &Corpus,
    max_lag: usize,
) -> Result<(Array2<f64>, usize), MetricsError> {
    corpus.check_finite()?;
    let (n, c, l) = corpus.profiles.dim();
    if l <= max_lag {
        return Err(MetricsError::LagTooLarge { len: l, lag: max_lag });
    }
    let mut curves = Array2::zeros((c, max_lag + 1));
    let mut skipped = 0usize;
    let mut counted = vec![0.0; c];
    for ch in 0..c {
        for i in 0..n {
            let series: Vec<f64> = (0..l).map(|t| corpus.profiles[[i, ch, t]]).collect();
            match acf(&series, max_lag) {
                Ok(r) => {
                    for (lag, v) in r.iter().enumerate() {
                        curves[[ch, lag]] += v;
                    }
                    counted[ch] += 1.0;
                }
                Err(MetricsError::ConstantSeries) => skipped += 1,
                Err(e) => return Err(e),
            }
        }
        if counted[ch] > 0.0 {
            for lag in 0..=max_lag {
                curves[[ch, lag]] /= counted[ch];
            }
        }
    }
    Ok((curves, skipped))
}

/// Result of a decile computation; `small_sample` flags N < 10 where
/// exact order statistics are reported instead of interpolation.
#[derive(Debug, Clone)]
pub struct DecileCurves {
    pub levels: Vec<f64>,
    /// `(channels, levels, slots)`
    pub curves: Array3<f64>,
    pub small_sample: bool,
}

/// Empirical quantiles per timestep per channel.
pub fn deciles(corpus: &Corpus, levels: &[f64]) -> Result<DecileCurves, MetricsError> {
    corpus.check_finite()?;
    let (n, c, l) = corpus.profiles.dim();
    if n == 0 {
        return Err(MetricsError::Empty);
    }
    let small_sample = n < 10;
    let mut curves = Array3::zeros((c, levels.len(), l));
    for ch in 0..c {
        for t in 0..l {
            let mut vals: Vec<f64> = (0..n).map(|i| corpus.profiles[[i, ch, t]]).collect();
            vals.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
            for (li, level) in levels.iter().enumerate() {
                let v = if small_sample {
                    // exact order statistic: nearest rank
                    let rank = ((level * n as f64).ceil() as usize).clamp(1, n);
                    vals[rank - 1]
                } else {
                    quantile_sorted(&vals, *level)
                };
                curves[[ch, li, t]] = v;
            }
        }
    }
    Ok(DecileCurves { levels: levels.to_vec(), curves, small_sample })
}

/// Scalar metric block of a report.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MetricValues {
    pub mse: f64,
    pub mmd: f64,
    pub wasserstein: f64,
    pub marginal_score: f64,
    pub mivo: f64,
}

/// Full evaluation of one generated corpus against the real one.
#[derive(Debug, Clone)]
pub struct MetricsReport {
    pub real_label: String,
    pub generated_label: String,
    pub values: MetricValues,
    /// `(channels, lags+1)` mean per-day autocorrelation, real then generated.
    pub acf_real: Array2<f64>,
    pub acf_generated: Array2<f64>,
    pub deciles_real: DecileCurves,
    pub deciles_generated: DecileCurves,
    pub marginal_degenerate_cells: usize,
}

pub const DEFAULT_MARGINAL_BINS: usize = 50;
pub const DEFAULT_ACF_LAG: usize = 24;
pub const DECILE_LEVELS: [f64; 3] = [0.1, 0.5, 0.9];

/// Run the whole metric suite. MSE requires pairable corpora.
pub fn evaluate(real: &Corpus, generated: &Corpus) -> Result<MetricsReport, MetricsError> {
    let values = MetricValues {
        mse: mse(real, generated)?,
        mmd: mmd(real, generated, None)?,
        wasserstein: wasserstein_corpus(real, generated)?,
        marginal_score: marginal_score(real, generated, DEFAULT_MARGINAL_BINS)?.score,
        mivo: mivo(real, generated)?,
    };
    let marginal = marginal_score(real, generated, DEFAULT_MARGINAL_BINS)?;
    let max_lag = DEFAULT_ACF_LAG.min(real.slots().saturating_sub(1));
    let (acf_real, _) = acf_corpus(real, max_lag)?;
    let (acf_generated, _) = acf_corpus(generated, max_lag)?;
    Ok(MetricsReport {
        real_label: real.label.clone(),
        generated_label: generated.label.clone(),
        values,
        acf_real,
        acf_generated,
        deciles_real: deciles(real, &DECILE_LEVELS)?,
        deciles_generated: deciles(generated, &DECILE_LEVELS)?,
        marginal_degenerate_cells: marginal.degenerate_cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn corpus_from(label: &str, data: Array3<f64>) -> Corpus {
        Corpus::new(label, data)
    }

    fn random_corpus(label: &str, n: usize, seed: u64) -> Corpus {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        corpus_from(
            label,
            Array3::from_shape_fn((n, 2, 12), |_| rng.sample::<f64, _>(StandardNormal)),
        )
    }

    #[test]
    fn mse_identity_offset_and_bruteforce() {
        let real = random_corpus("real", 8, 1);
        assert_eq!(mse(&real, &real).unwrap(), 0.0);

        let mut shifted = real.clone();
        shifted.profiles.mapv_inplace(|v| v + 1.0);
        assert_relative_eq!(mse(&real, &shifted).unwrap(), 1.0, max_relative = 1e-12);

        let gen = random_corpus("gen", 8, 2);
        // naive double-loop oracle
        let mut acc = 0.0;
        let mut count = 0.0;
        for i in 0..8 {
            for ch in 0..2 {
                for t in 0..12 {
                    let d = real.profiles[[i, ch, t]] - gen.profiles[[i, ch, t]];
                    acc += d * d;
                    count += 1.0;
                }
            }
        }
        assert_relative_eq!(mse(&real, &gen).unwrap(), acc / count, max_relative = 1e-12);
    }

    #[test]
    fn mse_aligns_by_key_when_present() {
        let real = Corpus::with_keys(
            "real",
            Array3::from_shape_fn((2, 2, 3), |(i, _, _)| i as f64),
            vec![
                ("A".into(), "2024-01-01".parse().unwrap()),
                ("B".into(), "2024-01-01".parse().unwrap()),
            ],
        );
        // generated rows in reverse order
        let gen = Corpus::with_keys(
            "gen",
            Array3::from_shape_fn((2, 2, 3), |(i, _, _)| 1.0 - i as f64),
            vec![
                ("B".into(), "2024-01-01".parse().unwrap()),
                ("A".into(), "2024-01-01".parse().unwrap()),
            ],
        );
        assert_eq!(mse(&real, &gen).unwrap(), 0.0);
    }

    #[test]
    fn mse_rejects_unpaired() {
        let a = random_corpus("a", 4, 3);
        let b = random_corpus("b", 5, 4);
        assert!(matches!(mse(&a, &b), Err(MetricsError::Unpaired(_))));
    }

    #[test]
    fn mmd_biased_is_zero_on_identical_corpora() {
        let x = random_corpus("x", 10, 5);
        let v = mmd_biased(&x, &x.clone(), None).unwrap();
        assert!(v < 1e-9, "biased estimate on X = X must vanish, got {v}");
        // unbiased clamps at zero
        assert_eq!(mmd(&x, &x.clone(), None).unwrap(), 0.0);
    }

    #[test]
    fn mmd_far_clusters_approach_two() {
        // direct kernel-sum oracle: within-cluster similarity ~ 1,
        // cross-cluster ~ 0 gives 1 + 1 - 0 = 2
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = corpus_from(
            "x",
            Array3::from_shape_fn((12, 2, 12), |_| 0.01 * rng.sample::<f64, _>(StandardNormal)),
        );
        let y = corpus_from(
            "y",
            Array3::from_shape_fn((12, 2, 12), |_| {
                1000.0 + 0.01 * rng.sample::<f64, _>(StandardNormal)
            }),
        );
        let v = mmd(&x, &y, Some(1.0)).unwrap();
        assert!((v - 2.0).abs() < 0.05, "far clusters should give ~2, got {v}");
    }

    #[test]
    fn mmd_biased_is_duplication_invariant() {
        let x = random_corpus("x", 6, 7);
        let y = random_corpus("y", 5, 8);
        let base = mmd_biased(&x, &y, Some(2.0)).unwrap();
        let dup = |c: &Corpus| {
            let (n, ch, l) = c.profiles.dim();
            let mut doubled = Array3::zeros((2 * n, ch, l));
            for i in 0..n {
                doubled
                    .slice_mut(ndarray::s![i, .., ..])
                    .assign(&c.profiles.slice(ndarray::s![i, .., ..]));
                doubled
                    .slice_mut(ndarray::s![n + i, .., ..])
                    .assign(&c.profiles.slice(ndarray::s![i, .., ..]));
            }
            corpus_from("dup", doubled)
        };
        let doubled = mmd_biased(&dup(&x), &dup(&y), Some(2.0)).unwrap();
        assert!(
            (base - doubled).abs() < 1e-9,
            "duplication must not move the biased estimate: {base} vs {doubled}"
        );
    }

    #[test]
    fn mmd_needs_two_rows() {
        let x = random_corpus("x", 1, 9);
        let y = random_corpus("y", 5, 10);
        assert!(matches!(mmd(&x, &y, None), Err(MetricsError::TooFewRows { .. })));
    }

    #[test]
    fn wasserstein_point_masses_and_quantile_case() {
        assert_relative_eq!(wasserstein1d(&[0.0], &[3.0]).unwrap(), 3.0);
        assert_relative_eq!(wasserstein1d(&[0.0, 1.0], &[1.0, 2.0]).unwrap(), 1.0);
        let xs = [0.3, -1.0, 2.0, 0.7];
        assert_relative_eq!(wasserstein1d(&xs, &xs).unwrap(), 0.0);
        assert!(wasserstein1d(&[], &[1.0]).is_err());
    }

    #[test]
    fn wasserstein_matches_sorted_difference_oracle_for_equal_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let xs: Vec<f64> = (0..40).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let ys: Vec<f64> = (0..40).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let mut xs_s = xs.clone();
        let mut ys_s = ys.clone();
        xs_s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        ys_s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let oracle: f64 = xs_s
            .iter()
            .zip(&ys_s)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / 40.0;
        assert_relative_eq!(
            wasserstein1d(&xs, &ys).unwrap(),
            oracle,
            max_relative = 1e-10
        );
    }

    #[test]
    fn marginal_score_identity_disjoint_and_order_invariance() {
        let x = random_corpus("x", 20, 12);
        assert_eq!(marginal_score(&x, &x.clone(), 10).unwrap().score, 0.0);

        let mut far = x.clone();
        far.profiles.mapv_inplace(|v| v + 1000.0);
        let disjoint = marginal_score(&x, &far, 10).unwrap().score;
        assert_relative_eq!(disjoint, 1.0, max_relative = 1e-12);

        // permuting rows changes nothing
        let (n, c, l) = x.profiles.dim();
        let mut permuted = Array3::zeros((n, c, l));
        for i in 0..n {
            permuted
                .slice_mut(ndarray::s![i, .., ..])
                .assign(&x.profiles.slice(ndarray::s![n - 1 - i, .., ..]));
        }
        let y = corpus_from("perm", permuted);
        let a = marginal_score(&x, &y, 10).unwrap().score;
        let b = marginal_score(&x, &x.clone(), 10).unwrap().score;
        assert_eq!(a, b);
    }

    #[test]
    fn mivo_identity_shift_and_smoothing() {
        let x = random_corpus("x", 10, 13);
        assert_eq!(mivo(&x, &x.clone()).unwrap(), 0.0);

        let mut shifted = x.clone();
        shifted.profiles.mapv_inplace(|v| v + 0.37);
        assert_relative_eq!(mivo(&x, &shifted).unwrap(), 0.37, max_relative = 1e-9);

        // smoothing to a constant leaves exactly real's volatility plus
        // the min difference
        let (n, c, l) = x.profiles.dim();
        let mut flat = Array3::zeros((n, c, l));
        for i in 0..n {
            for ch in 0..c {
                for t in 0..l {
                    flat[[i, ch, t]] = 0.0;
                }
            }
        }
        let flat_c = corpus_from("flat", flat);
        let expected: f64 = (0..c)
            .map(|ch| (channel_min(&x, ch) - 0.0).abs() + volatility(&x, ch))
            .sum::<f64>()
            / c as f64;
        assert_relative_eq!(mivo(&x, &flat_c).unwrap(), expected, max_relative = 1e-12);
    }

    #[test]
    fn acf_lag0_alternating_and_whitenoise_bound() {
        let series: Vec<f64> = (0..100).map(|i| (i as f64 * 0.2).sin()).collect();
        let r = acf(&series, 5).unwrap();
        assert_eq!(r[0], 1.0);

        let alternating: Vec<f64> = (0..10_000).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let r = acf(&alternating, 1).unwrap();
        assert!((r[1] + 1.0).abs() < 1e-3, "alternating lag-1 should be ~-1, got {}", r[1]);

        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let noise: Vec<f64> = (0..10_000).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let r = acf(&noise, 5).unwrap();
        let bound = 3.0 / (noise.len() as f64).sqrt();
        for lag in 1..=5 {
            assert!(r[lag].abs() < bound, "lag {lag}: {} exceeds {bound}", r[lag]);
        }
    }

    #[test]
    fn acf_errors() {
        assert!(matches!(acf(&[1.0; 50], 3), Err(MetricsError::ConstantSeries)));
        assert!(matches!(acf(&[1.0, 2.0], 2), Err(MetricsError::LagTooLarge { .. })));
    }

    #[test]
    fn decile_curves_constant_monotone_and_uniform() {
        let constant = corpus_from("const", Array3::from_elem((20, 2, 6), 5.0));
        let d = deciles(&constant, &DECILE_LEVELS).unwrap();
        assert!(d.curves.iter().all(|v| *v == 5.0));

        let x = random_corpus("x", 50, 15);
        let d = deciles(&x, &DECILE_LEVELS).unwrap();
        for ch in 0..2 {
            for t in 0..12 {
                assert!(d.curves[[ch, 0, t]] <= d.curves[[ch, 1, t]]);
                assert!(d.curves[[ch, 1, t]] <= d.curves[[ch, 2, t]]);
            }
        }

        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let uniform = corpus_from(
            "u",
            Array3::from_shape_fn((100_000, 1, 1), |_| rng.gen_range(0.0..1.0)),
        );
        let d = deciles(&uniform, &[0.1]).unwrap();
        assert!((d.curves[[0, 0, 0]] - 0.1).abs() < 0.01);
    }

    #[test]
    fn small_sample_deciles_use_order_statistics() {
        let x = corpus_from(
            "x",
            Array3::from_shape_fn((5, 1, 1), |(i, _, _)| i as f64),
        );
        let d = deciles(&x, &[0.5]).unwrap();
        assert!(d.small_sample);
        // nearest-rank median of {0,1,2,3,4} with ceil(0.5*5)=3 -> value 2
        assert_eq!(d.curves[[0, 0, 0]], 2.0);
    }

    #[test]
    fn evaluate_is_deterministic() {
        let real = random_corpus("real", 12, 17);
        let gen = random_corpus("gen", 12, 18);
        let a = evaluate(&real, &gen).unwrap();
        let b = evaluate(&real, &gen).unwrap();
        assert_eq!(a.values, b.values);
        assert_eq!(a.acf_real, b.acf_real);
    }

    #[test]
    fn all_distances_vanish_on_identical_corpora() {
        let x = random_corpus("x", 15, 19);
        let report = evaluate(&x, &x.clone()).unwrap();
        assert_eq!(report.values.mse, 0.0);
        assert_eq!(report.values.mmd, 0.0);
        assert_eq!(report.values.wasserstein, 0.0);
        assert_eq!(report.values.marginal_score, 0.0);
        assert_eq!(report.values.mivo, 0.0);
    }
}
