//! Reports over finished cells: flat CSV, per-(regime, ratio) summary,
//! and an optional SVG of the ratio curves.
//!
//! Reports are derived purely from the cell files under
//! `<out_dir>/cells/`, never from in-memory results, so a resumed run
//! regenerates byte-identical output. Wall-clock fields are deliberately
//! left out for the same reason.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use plotters::prelude::*;
use serde::Serialize;

use super::{io_at, load_cell, CellResult, ExperimentError};

#[derive(Debug, Clone)]
pub struct ReportPaths {
    pub results_csv: PathBuf,
    pub summary_csv: PathBuf,
    pub plot_svg: Option<PathBuf>,
}

#[derive(Serialize)]
struct ResultRow<'a> {
    key: &'a str,
    regime: &'a str,
    fold: usize,
    ratio: f64,
    seed: u64,
    n_train: usize,
    n_val: usize,
    n_test: usize,
    best_epoch: usize,
    best_val_metric: f64,
    test_uar: f64,
    test_macro_f1: f64,
    test_primary: f64,
}

#[derive(Serialize)]
struct SummaryRow {
    regime: String,
    ratio: f64,
    cells: usize,
    mean_primary: f64,
    std_primary: f64,
}

/// Every finished cell under `out_dir/cells`, sorted by key.
pub(crate) fn load_finished_cells(out_dir: &Path) -> Result<Vec<CellResult>, ExperimentError> {
    let cells_dir = out_dir.join("cells");
    let mut cells = Vec::new();
    let entries = fs::read_dir(&cells_dir).map_err(io_at(&cells_dir))?;
    for entry in entries {
        let path = entry.map_err(io_at(&cells_dir))?.path();
        if path.extension().and_then(|e| e.to_str()) == Some("json") {
            cells.push(load_cell(&path)?);
        }
    }
    cells.sort_by(|a, b| a.key.cmp(&b.key));
    Ok(cells)
}

fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), ExperimentError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(io_at(&tmp))?;
    fs::rename(&tmp, path).map_err(io_at(path))?;
    Ok(())
}

fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>, ExperimentError> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    for row in rows {
        wtr.serialize(row)?;
    }
    wtr.into_inner()
        .map_err(|e| ExperimentError::Report(format!("csv flush failed: {e}")))
}

/// Rebuild `results.csv`, `summary.csv`, and (optionally) `report.svg`
/// in `out_dir` from the finished cells.
pub fn emit_report(out_dir: &Path, render: bool) -> Result<ReportPaths, ExperimentError> {
    emit_report_to(out_dir, out_dir, render)
}

/// Like [`emit_report`] but reading cells from `results_dir` while
/// writing the report files into a (possibly different) `out_dir`.
pub fn emit_report_to(
    results_dir: &Path,
    out_dir: &Path,
    render: bool,
) -> Result<ReportPaths, ExperimentError> {
    let cells = load_finished_cells(results_dir)?;
    if cells.is_empty() {
        return Err(ExperimentError::Report(format!(
            "no finished cells under {}",
            results_dir.join("cells").display()
        )));
    }
    fs::create_dir_all(out_dir).map_err(io_at(out_dir))?;

    let rows: Vec<ResultRow<'_>> = cells
        .iter()
        .map(|c| ResultRow {
            key: &c.key,
            regime: c.regime.as_str(),
            fold: c.fold,
            ratio: c.ratio,
            seed: c.seed,
            n_train: c.n_train,
            n_val: c.n_val,
            n_test: c.n_test,
            best_epoch: c.best_epoch,
            best_val_metric: c.best_val_metric,
            test_uar: c.test.uar,
            test_macro_f1: c.test.macro_f1,
            test_primary: c.test_primary,
        })
        .collect();
    let results_csv = out_dir.join("results.csv");
    atomic_write(&results_csv, &csv_bytes(&rows)?)?;

    // (regime, ratio) -> primaries across folds and seeds. Positive f64
    // bit patterns sort numerically.
    let mut groups: BTreeMap<(String, u64), Vec<f64>> = BTreeMap::new();
    for c in &cells {
        groups
            .entry((c.regime.as_str().to_string(), c.ratio.to_bits()))
            .or_default()
            .push(c.test_primary);
    }
    let mut summary = Vec::new();
    for ((regime, ratio_bits), primaries) in &groups {
        let (mean, std) = crate::metrics::aggregate_folds(primaries)?;
        summary.push(SummaryRow {
            regime: regime.clone(),
            ratio: f64::from_bits(*ratio_bits),
            cells: primaries.len(),
            mean_primary: mean,
            std_primary: std,
        });
    }
    let summary_csv = out_dir.join("summary.csv");
    atomic_write(&summary_csv, &csv_bytes(&summary)?)?;

    let plot_svg = if render {
        let path = out_dir.join("report.svg");
        draw_ratio_curves(&path, &summary)?;
        Some(path)
    } else {
        None
    };

    Ok(ReportPaths {
        results_csv,
        summary_csv,
        plot_svg,
    })
}

const SERIES_COLORS: [RGBColor; 6] = [BLUE, RED, GREEN, MAGENTA, CYAN, BLACK];

fn draw_ratio_curves(path: &Path, summary: &[SummaryRow]) -> Result<(), ExperimentError> {
    let rep = |e: &dyn std::fmt::Display| ExperimentError::Report(format!("plot failed: {e}"));

    // regime -> curve of (ratio, mean), sorted by ratio
    let mut curves: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
    for row in summary {
        curves
            .entry(row.regime.as_str())
            .or_default()
            .push((row.ratio, row.mean_primary));
    }
    for points in curves.values_mut() {
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
    }

    let root = SVGBackend::new(path, (800, 500)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| rep(&e))?;
    let mut chart = ChartBuilder::on(&root)
        .caption("Test metric vs labeled fraction", ("sans-serif", 22))
        .margin(18)
        .x_label_area_size(42)
        .y_label_area_size(52)
        .build_cartesian_2d(0.0..1.05f64, 0.0..1.05f64)
        .map_err(|e| rep(&e))?;
    chart
        .configure_mesh()
        .x_desc("labeled fraction of real training data")
        .y_desc("mean primary test metric")
        .draw()
        .map_err(|e| rep(&e))?;

    for (i, (regime, points)) in curves.iter().enumerate() {
        let color = SERIES_COLORS[i % SERIES_COLORS.len()];
        chart
            .draw_series(LineSeries::new(points.clone(), color.stroke_width(2)))
            .map_err(|e| rep(&e))?
            .label(*regime)
            .legend(move |(x, y)| {
                PathElement::new(vec![(x, y), (x + 16, y)], color.stroke_width(2))
            });
        chart
            .draw_series(
                points
                    .iter()
                    .map(|&(x, y)| Circle::new((x, y), 3, color.filled())),
            )
            .map_err(|e| rep(&e))?;
    }
    chart
        .configure_series_labels()
        .position(SeriesLabelPosition::LowerRight)
        .background_style(WHITE.mix(0.85))
        .border_style(BLACK)
        .draw()
        .map_err(|e| rep(&e))?;
    root.present().map_err(|e| rep(&e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::super::{save_cell, Regime};
    use super::*;
    use crate::metrics::Metrics;

    fn fake_cell(regime: Regime, fold: usize, ratio: f64, seed: u64, primary: f64) -> CellResult {
        CellResult {
            key: super::super::CellSpec {
                regime,
                fold,
                ratio,
                seed,
            }
            .key(),
            regime,
            fold,
            ratio,
            seed,
            n_train: 10,
            n_val: 4,
            n_test: 6,
            best_epoch: 2,
            best_val_metric: primary - 0.05,
            test: Metrics {
                uar: primary,
                macro_f1: primary - 0.01,
                confusion: vec![vec![3, 0], vec![1, 2]],
                n: 6,
            },
            test_primary: primary,
            wall_time_secs: 1.25,
        }
    }

    fn seed_cells(out_dir: &Path) {
        let cells_dir = out_dir.join("cells");
        fs::create_dir_all(&cells_dir).unwrap();
        for cell in [
            fake_cell(Regime::LowResource, 0, 0.1, 0, 0.6),
            fake_cell(Regime::LowResource, 1, 0.1, 0, 0.8),
            fake_cell(Regime::LowResource, 0, 0.5, 0, 0.9),
            fake_cell(Regime::RealBaseline, 0, 1.0, 0, 0.95),
        ] {
            save_cell(&cells_dir.join(format!("{}.json", cell.key)), &cell).unwrap();
        }
    }

    #[test]
    fn results_csv_is_sorted_and_excludes_wall_time() {
        let dir = tempfile::tempdir().unwrap();
        seed_cells(dir.path());
        let paths = emit_report(dir.path(), false).unwrap();
        let text = fs::read_to_string(&paths.results_csv).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 5, "header + 4 rows");
        assert!(lines[0].starts_with("key,regime,fold,ratio,seed,"));
        assert!(!lines[0].contains("wall"), "wall time must not be reported");
        // sorted by key: low_resource rows precede real_baseline
        assert!(lines[1].starts_with("low_resource_fold0_r0.1000_s0"));
        assert!(lines[4].starts_with("real_baseline_fold0_r1.0000_s0"));
        assert!(paths.plot_svg.is_none());
    }

    #[test]
    fn summary_aggregates_mean_and_population_std() {
        let dir = tempfile::tempdir().unwrap();
        seed_cells(dir.path());
        let paths = emit_report(dir.path(), false).unwrap();
        let text = fs::read_to_string(&paths.summary_csv).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "regime,ratio,cells,mean_primary,std_primary");
        // (low_resource, 0.1): primaries 0.6/0.8 -> mean 0.7, std 0.1
        let low = lines
            .iter()
            .find(|l| l.starts_with("low_resource,0.1,"))
            .unwrap();
        let (mean, std) = crate::metrics::aggregate_folds(&[0.6, 0.8]).unwrap();
        assert_eq!(*low, format!("low_resource,0.1,2,{mean},{std}"));
        assert!((mean - 0.7).abs() < 1e-12 && (std - 0.1).abs() < 1e-12);
    }

    #[test]
    fn render_writes_an_svg() {
        let dir = tempfile::tempdir().unwrap();
        seed_cells(dir.path());
        let paths = emit_report(dir.path(), true).unwrap();
        let svg_path = paths.plot_svg.unwrap();
        let svg = fs::read_to_string(&svg_path).unwrap();
        assert!(svg.contains("<svg"), "not an svg: {}", &svg[..80.min(svg.len())]);
        assert!(svg.contains("low_resource"), "legend must name the regimes");
    }

    #[test]
    fn empty_cells_dir_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("cells")).unwrap();
        assert!(matches!(
            emit_report(dir.path(), false),
            Err(ExperimentError::Report(_))
        ));
    }
}
