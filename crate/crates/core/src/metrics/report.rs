//! Report emission: flat key-value metric files plus SVG figures
//! (distribution overlays with a tail inset, decile grids, ACF overlays).
//! File names derive deterministically from the corpus labels.

use super::{Corpus, MetricsReport};
use crate::plot::{density_curve, render_grid, render_line_chart, Inset, LineChart, Series};
use std::io::Write;
use std::path::{Path, PathBuf};

const CHANNEL_NAMES: [&str; 2] = ["active", "reactive"];

pub fn sanitize_label(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect()
}

/// Flat key-value rendering of the scalar metrics, with the MiVo
/// interpretation note in the footer.
pub fn to_kv_string(report: &MetricsReport) -> String {
    let mut out = String::new();
    out.push_str(&format!("real = {}\n", report.real_label));
    out.push_str(&format!("generated = {}\n", report.generated_label));
    out.push_str(&format!("mse = {:.6}\n", report.values.mse));
    out.push_str(&format!("mmd = {:.6}\n", report.values.mmd));
    out.push_str(&format!("wasserstein = {:.6}\n", report.values.wasserstein));
    out.push_str(&format!("marginal_score = {:.6}\n", report.values.marginal_score));
    out.push_str(&format!("mivo = {:.6}\n", report.values.mivo));
    out.push_str(&format!(
        "marginal_degenerate_cells = {}\n",
        report.marginal_degenerate_cells
    ));
    out.push_str(
        "# mivo is computed as |min(real) - min(generated)| + \
         |volatility(real) - volatility(generated)| averaged over channels;\n\
         # this is an interpretation of the cited metric, not a published formula.\n",
    );
    out
}

fn write_file(path: &Path, content: &str) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(content.as_bytes())
}

fn pooled_channel(corpus: &Corpus, channel: usize) -> Vec<f64> {
    corpus
        .profiles
        .index_axis(ndarray::Axis(1), channel)
        .iter()
        .copied()
        .collect()
}

fn distribution_chart(real: &Corpus, generated: &Corpus, channel: usize) -> LineChart {
    let xs = pooled_channel(real, channel);
    let ys = pooled_channel(generated, channel);
    let lo = xs.iter().chain(&ys).cloned().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().chain(&ys).cloned().fold(f64::NEG_INFINITY, f64::max);
    let bins = 80;
    let real_curve = density_curve(&xs, lo, hi, bins);
    let gen_curve = density_curve(&ys, lo, hi, bins);
    // upper-tail inset: top 15% of the value range
    let tail_lo = hi - 0.15 * (hi - lo);
    let tail_peak = real_curve
        .iter()
        .chain(&gen_curve)
        .filter(|(x, _)| *x >= tail_lo)
        .map(|(_, d)| *d)
        .fold(0.0f64, f64::max);
    LineChart::new(
        format!("{} power distribution", CHANNEL_NAMES[channel.min(1)]),
        "scaled value",
        "density",
    )
    .with_series(vec![
        Series::new(real.label.clone(), real_curve),
        Series::new(generated.label.clone(), gen_curve),
    ])
    .with_inset(Inset { x_min: tail_lo, x_max: hi, y_min: 0.0, y_max: tail_peak.max(1e-9) })
}

fn decile_grid(report: &MetricsReport) -> String {
    let mut charts = Vec::new();
    for ch in 0..report.deciles_real.curves.dim().0 {
        for (li, level) in report.deciles_real.levels.iter().enumerate() {
            let slots = report.deciles_real.curves.dim().2;
            let real_pts: Vec<(f64, f64)> = (0..slots)
                .map(|t| (t as f64, report.deciles_real.curves[[ch, li, t]]))
                .collect();
            let gen_pts: Vec<(f64, f64)> = (0..slots)
                .map(|t| (t as f64, report.deciles_generated.curves[[ch, li, t]]))
                .collect();
            charts.push(
                LineChart::new(
                    format!("{} p{:02.0}", CHANNEL_NAMES[ch.min(1)], level * 100.0),
                    "half-hour slot",
                    "scaled value",
                )
                .with_series(vec![
                    Series::new(report.real_label.clone(), real_pts),
                    Series::new(report.generated_label.clone(), gen_pts),
                ]),
            );
        }
    }
    render_grid(&charts, report.deciles_real.levels.len())
}

fn acf_chart(report: &MetricsReport, channel: usize) -> LineChart {
    let lags = report.acf_real.dim().1;
    let real_pts: Vec<(f64, f64)> =
        (0..lags).map(|l| (l as f64, report.acf_real[[channel, l]])).collect();
    let gen_pts: Vec<(f64, f64)> =
        (0..lags).map(|l| (l as f64, report.acf_generated[[channel, l]])).collect();
    LineChart::new(
        format!("{} power autocorrelation", CHANNEL_NAMES[channel.min(1)]),
        "lag (half hours)",
        "correlation",
    )
    .with_series(vec![
        Series::new(report.real_label.clone(), real_pts),
        Series::new(report.generated_label.clone(), gen_pts),
    ])
}

/// Write the metric file and all figures for one real/generated pair.
/// Returns the written paths.
pub fn write_report(
    dir: &Path,
    real: &Corpus,
    generated: &Corpus,
    report: &MetricsReport,
) -> std::io::Result<Vec<PathBuf>> {
    let stem = format!(
        "{}_vs_{}",
        sanitize_label(&report.real_label),
        sanitize_label(&report.generated_label)
    );
    let mut written = Vec::new();

    let kv = dir.join(format!("metrics_{stem}.txt"));
    write_file(&kv, &to_kv_string(report))?;
    written.push(kv);

    for ch in 0..real.channels().min(2) {
        let path = dir.join(format!("distribution_{stem}_{}.svg", CHANNEL_NAMES[ch]));
        write_file(&path, &render_line_chart(&distribution_chart(real, generated, ch)))?;
        written.push(path);
    }

    let deciles = dir.join(format!("deciles_{stem}.svg"));
    write_file(&deciles, &decile_grid(report))?;
    written.push(deciles);

    let mut acf_charts = Vec::new();
    for ch in 0..report.acf_real.dim().0 {
        acf_charts.push(acf_chart(report, ch));
    }
    let acf_path = dir.join(format!("acf_{stem}.svg"));
    write_file(&acf_path, &render_grid(&acf_charts, 2))?;
    written.push(acf_path);

    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::evaluate;
    use ndarray::Array3;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn corpus(label: &str, seed: u64) -> Corpus {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Corpus::new(
            label,
            Array3::from_shape_fn((15, 2, 48), |_| rng.sample::<f64, _>(StandardNormal)),
        )
    }

    #[test]
    fn report_files_are_written_with_deterministic_names() {
        let real = corpus("Real", 1);
        let gen = corpus("LVGenWCS", 2);
        let report = evaluate(&real, &gen).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let files = write_report(dir.path(), &real, &gen, &report).unwrap();
        assert!(files.iter().any(|f| f.ends_with("metrics_real_vs_lvgenwcs.txt")));
        assert!(files.iter().any(|f| f.ends_with("deciles_real_vs_lvgenwcs.svg")));
        assert!(files.iter().any(|f| f.ends_with("acf_real_vs_lvgenwcs.svg")));
        assert_eq!(
            files
                .iter()
                .filter(|f| f.to_string_lossy().contains("distribution"))
                .count(),
            2
        );
        for f in &files {
            assert!(f.exists());
        }
        let kv = std::fs::read_to_string(&files[0]).unwrap();
        assert!(kv.contains("mse = "));
        assert!(kv.contains("# mivo"), "footer must flag the MiVo interpretation");
    }
}
