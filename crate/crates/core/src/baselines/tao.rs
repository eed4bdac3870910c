//! Tao Vanilla benchmark: ordinary least squares over trend, calendar
//! interactions and temperature polynomials.
//!
//! Columns: intercept; Trend; Day-of-week x Hour one-hots; Month
//! one-hots; Month x TMP, TMP^2, TMP^3; Hour x TMP, TMP^2, TMP^3.
//! The regression predicts active power only; reactive power is derived
//! downstream through a fixed power-factor assumption.

use super::BaselineError;
use nalgebra::{DMatrix, DVector};

const DAYS: usize = 7;
const HOURS: usize = 24;
const MONTHS: usize = 12;

/// Design-matrix width: 1 + 1 + 7*24 + 12 + 3*12 + 3*24.
pub const TAO_COLUMNS: usize = 2 + DAYS * HOURS + MONTHS + 3 * MONTHS + 3 * HOURS;

/// One observation's covariates.
#[derive(Debug, Clone, Copy)]
pub struct TaoInput {
    /// 1..=12
    pub month: u32,
    /// 1..=7, Monday = 1
    pub day_of_week: u32,
    /// 0..=23
    pub hour: u32,
    /// Dry-bulb temperature, degrees C.
    pub tmp: f64,
    /// Integer day index from the start of the corpus.
    pub trend: i64,
}

/// Human-readable names of all design columns, in order.
pub fn column_catalog() -> Vec<String> {
    let mut names = vec!["intercept".to_string(), "trend".to_string()];
    for d in 1..=DAYS {
        for h in 0..HOURS {
            names.push(format!("day{d}_hour{h}"));
        }
    }
    for m in 1..=MONTHS {
        names.push(format!("month{m}"));
    }
    for power in 1..=3 {
        for m in 1..=MONTHS {
            names.push(format!("month{m}_tmp{power}"));
        }
    }
    for power in 1..=3 {
        for h in 0..HOURS {
            names.push(format!("hour{h}_tmp{power}"));
        }
    }
    names
}

/// Build one design row per the column catalog.
pub fn tao_design_row(input: &TaoInput) -> Result<Vec<f64>, BaselineError> {
    if !(1..=12).contains(&input.month) {
        return Err(BaselineError::BadInput(format!("month {} out of 1..=12", input.month)));
    }
    if !(1..=7).contains(&input.day_of_week) {
        return Err(BaselineError::BadInput(format!(
            "day_of_week {} out of 1..=7",
            input.day_of_week
        )));
    }
    if input.hour > 23 {
        return Err(BaselineError::BadInput(format!("hour {} out of 0..=23", input.hour)));
    }
    let mut row = vec![0.0; TAO_COLUMNS];
    let mut idx = 0;
    row[idx] = 1.0;
    idx += 1;
    row[idx] = input.trend as f64;
    idx += 1;
    let dh = (input.day_of_week as usize - 1) * HOURS + input.hour as usize;
    row[idx + dh] = 1.0;
    idx += DAYS * HOURS;
    row[idx + input.month as usize - 1] = 1.0;
    idx += MONTHS;
    for power in 1..=3u32 {
        row[idx + input.month as usize - 1] = input.tmp.powi(power as i32);
        idx += MONTHS;
    }
    for power in 1..=3u32 {
        row[idx + input.hour as usize] = input.tmp.powi(power as i32);
        idx += HOURS;
    }
    debug_assert_eq!(idx, TAO_COLUMNS);
    Ok(row)
}

/// Fitted regression. The one-hot blocks make the full catalog linearly
/// dependent (each block sums to a shared factor), so the solution is the
/// minimum-norm least-squares fit and `rank_deficient` reports it.
#[derive(Debug, Clone)]
pub struct TaoModel {
    pub coefficients: Vec<f64>,
    pub rank: usize,
    pub rank_deficient: bool,
}

/// Minimum-norm ordinary least squares via SVD, with a rank report.
pub fn tao_fit(rows: &[Vec<f64>], loads: &[f64]) -> Result<TaoModel, BaselineError> {
    if rows.is_empty() {
        return Err(BaselineError::EmptyData);
    }
    if rows.len() != loads.len() {
        return Err(BaselineError::BadInput(format!(
            "{} rows vs {} loads",
            rows.len(),
            loads.len()
        )));
    }
    let cols = rows[0].len();
    if rows.iter().any(|r| r.len() != cols) {
        return Err(BaselineError::BadInput("ragged design matrix".into()));
    }
    let a = DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]);
    let y = DVector::from_column_slice(loads);
    let svd = a.svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    let tol = smax * (rows.len().max(cols) as f64) * f64::EPSILON;
    let rank = svd.singular_values.iter().filter(|s| **s > tol).count();
    let beta = svd
        .solve(&y, tol)
        .map_err(|e| BaselineError::DegenerateFit(e.to_string()))?;
    Ok(TaoModel {
        coefficients: beta.iter().copied().collect(),
        rank,
        rank_deficient: rank < cols,
    })
}

/// The linear map: predicted load per design row.
pub fn tao_predict(model: &TaoModel, rows: &[Vec<f64>]) -> Result<Vec<f64>, BaselineError> {
    let cols = model.coefficients.len();
    rows.iter()
        .map(|r| {
            if r.len() != cols {
                return Err(BaselineError::BadInput(format!(
                    "row width {} vs {} coefficients",
                    r.len(),
                    cols
                )));
            }
            Ok(r.iter().zip(&model.coefficients).map(|(x, b)| x * b).sum())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_input(rng: &mut ChaCha8Rng) -> TaoInput {
        TaoInput {
            month: rng.gen_range(1..=12),
            day_of_week: rng.gen_range(1..=7),
            hour: rng.gen_range(0..=23),
            tmp: rng.gen_range(-5.0..30.0),
            trend: rng.gen_range(0..1000),
        }
    }

    #[test]
    fn column_count_matches_catalog_arithmetic() {
        assert_eq!(TAO_COLUMNS, 290);
        assert_eq!(column_catalog().len(), TAO_COLUMNS);
        let input = TaoInput { month: 3, day_of_week: 2, hour: 10, tmp: 12.0, trend: 5 };
        assert_eq!(tao_design_row(&input).unwrap().len(), TAO_COLUMNS);
    }

    #[test]
    fn zero_temperature_zeroes_all_tmp_interactions() {
        let input = TaoInput { month: 6, day_of_week: 4, hour: 12, tmp: 0.0, trend: 10 };
        let row = tao_design_row(&input).unwrap();
        let names = column_catalog();
        for (name, v) in names.iter().zip(&row) {
            if name.contains("tmp") {
                assert_eq!(*v, 0.0, "{name} should be zero when TMP = 0");
            }
        }
    }

    #[test]
    fn trend_is_isolated_in_its_column() {
        let a = TaoInput { month: 6, day_of_week: 4, hour: 12, tmp: 8.0, trend: 10 };
        let b = TaoInput { trend: 25, ..a };
        let ra = tao_design_row(&a).unwrap();
        let rb = tao_design_row(&b).unwrap();
        let diff: Vec<usize> = (0..TAO_COLUMNS).filter(|&i| ra[i] != rb[i]).collect();
        assert_eq!(diff, vec![1], "only the trend column may differ");
    }

    #[test]
    fn out_of_range_categoricals_are_rejected() {
        let base = TaoInput { month: 6, day_of_week: 4, hour: 12, tmp: 8.0, trend: 0 };
        assert!(tao_design_row(&TaoInput { month: 0, ..base }).is_err());
        assert!(tao_design_row(&TaoInput { month: 13, ..base }).is_err());
        assert!(tao_design_row(&TaoInput { day_of_week: 8, ..base }).is_err());
        assert!(tao_design_row(&TaoInput { hour: 24, ..base }).is_err());
    }

    /// Identifiable ground truth: project an arbitrary coefficient vector
    /// into the design row space by fitting once, then verify the refit
    /// recovers it exactly.
    #[test]
    fn noiseless_recovery_of_identifiable_coefficients() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let rows: Vec<Vec<f64>> = (0..1200)
            .map(|_| tao_design_row(&random_input(&mut rng)).unwrap())
            .collect();
        let arbitrary: Vec<f64> = (0..TAO_COLUMNS).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let loads: Vec<f64> = rows
            .iter()
            .map(|r| r.iter().zip(&arbitrary).map(|(x, b)| x * b).sum())
            .collect();
        let projected = tao_fit(&rows, &loads).unwrap();
        assert!(projected.rank_deficient, "full catalog is collinear by construction");

        let loads2 = tao_predict(&projected, &rows).unwrap();
        // predictions reproduce the noiseless targets
        for (a, b) in loads.iter().zip(&loads2) {
            assert!((a - b).abs() <= 1e-6 * a.abs().max(1.0));
        }
        // refitting from the projected model's own outputs recovers it
        let refit = tao_fit(&rows, &loads2).unwrap();
        for (a, b) in projected.coefficients.iter().zip(&refit.coefficients) {
            assert!((a - b).abs() <= 1e-6 * a.abs().max(1e-3), "{a} vs {b}");
        }
    }

    #[test]
    fn constant_load_puts_everything_in_the_intercept_block() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let rows: Vec<Vec<f64>> = (0..900)
            .map(|_| tao_design_row(&random_input(&mut rng)).unwrap())
            .collect();
        let loads = vec![42.0; rows.len()];
        let model = tao_fit(&rows, &loads).unwrap();
        let preds = tao_predict(&model, &rows).unwrap();
        for p in preds {
            assert!((p - 42.0).abs() < 1e-6);
        }
        // temperature interactions carry no signal for a constant target
        let names = column_catalog();
        for (name, b) in names.iter().zip(&model.coefficients) {
            if name.contains("tmp") {
                assert!(b.abs() < 1e-6, "{name} = {b}");
            }
        }
    }

    #[test]
    fn prediction_is_exactly_linear_in_the_design() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let rows: Vec<Vec<f64>> = (0..400)
            .map(|_| tao_design_row(&random_input(&mut rng)).unwrap())
            .collect();
        let loads: Vec<f64> = (0..400).map(|_| rng.gen_range(0.0..100.0)).collect();
        let model = tao_fit(&rows, &loads).unwrap();
        let p1 = tao_predict(&model, &rows).unwrap();
        let doubled: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|v| 2.0 * v).collect()).collect();
        let p2 = tao_predict(&model, &doubled).unwrap();
        for (a, b) in p1.iter().zip(&p2) {
            assert!((2.0 * a - b).abs() < 1e-9 * b.abs().max(1.0));
        }
    }
}
