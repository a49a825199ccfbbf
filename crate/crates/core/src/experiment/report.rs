use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{ResultRow, ResultStore, SeedCurve, TableOutput};
use crate::error::{Error, Result};

const W: f64 = 640.0;
const H: f64 = 360.0;
const PAD: f64 = 48.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn frame(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" font-family=\"sans-serif\" font-size=\"11\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n\
         <line x1=\"{PAD}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n\
         <line x1=\"{PAD}\" y1=\"{PAD}\" x2=\"{PAD}\" y2=\"{}\" stroke=\"black\"/>\n",
        W / 2.0,
        escape(title),
        H - PAD,
        W - PAD,
        H - PAD,
        H - PAD
    )
}

/// Training loss per epoch, one polyline per seed.
pub fn curves_svg(title: &str, curves: &[SeedCurve]) -> String {
    let mut svg = frame(title);
    let epochs = curves.iter().map(|c| c.train_loss.len()).max().unwrap_or(0);
    let max = curves.iter().flat_map(|c| c.train_loss.iter().copied()).filter(|v| v.is_finite()).fold(0.0f64, f64::max);
    if epochs == 0 || max <= 0.0 {
        svg.push_str("<text x=\"320\" y=\"180\" text-anchor=\"middle\">no training curve</text>\n</svg>\n");
        return svg;
    }
    let x = |e: usize| PAD + (W - 2.0 * PAD) * e as f64 / (epochs.max(2) - 1) as f64;
    let y = |v: f64| H - PAD - (H - 2.0 * PAD) * v / max;
    let _ = writeln!(svg, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">epoch</text>", W / 2.0, H - 12.0);
    let _ = writeln!(svg, "<text x=\"12\" y=\"{PAD}\">{max:.2}</text>");
    for (k, c) in curves.iter().enumerate() {
        let pts: Vec<String> =
            c.train_loss.iter().enumerate().map(|(e, &v)| format!("{:.1},{:.1}", x(e), y(v))).collect();
        let colour = PALETTE[k % PALETTE.len()];
        let _ = writeln!(svg, "<polyline fill=\"none\" stroke=\"{colour}\" points=\"{}\"/>", pts.join(" "));
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" fill=\"{colour}\">seed {}</text>",
            W - PAD - 60.0,
            PAD + 14.0 * k as f64,
            c.seed
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Mean of the first numeric column per row, with ±std whiskers, on a 0-100 axis.
pub fn bar_chart_svg(table: &TableOutput) -> String {
    let column = table.rows.first().and_then(|r| r.cells.first()).map(|c| c.column.clone()).unwrap_or_default();
    let mut svg = frame(&format!("table {} ({column})", table.table));
    let n = table.rows.len().max(1) as f64;
    let slot = (W - 2.0 * PAD) / n;
    let y = |v: f64| H - PAD - (H - 2.0 * PAD) * v.clamp(0.0, 100.0) / 100.0;
    for (i, row) in table.rows.iter().enumerate() {
        let Some(stat) = row.cells.first().and_then(|c| c.stat) else { continue };
        let x0 = PAD + slot * i as f64 + slot * 0.15;
        let _ = writeln!(
            svg,
            "<rect x=\"{x0:.1}\" y=\"{:.1}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"{}\"/>",
            y(stat.mean),
            slot * 0.7,
            H - PAD - y(stat.mean),
            PALETTE[0]
        );
        if let Some(sd) = stat.std {
            let xc = x0 + slot * 0.35;
            let _ = writeln!(
                svg,
                "<line x1=\"{xc:.1}\" y1=\"{:.1}\" x2=\"{xc:.1}\" y2=\"{:.1}\" stroke=\"black\"/>",
                y(stat.mean - sd),
                y(stat.mean + sd)
            );
        }
        let _ = writeln!(
            svg,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>",
            x0 + slot * 0.35,
            H - PAD + 14.0,
            escape(&row.id)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn fmt1(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.1}")).unwrap_or_default()
}

/// One CSV line per stored row.
fn results_csv(rows: &[ResultRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Config(format!("csv: {e}"));
    w.write_record([
        "fingerprint",
        "model",
        "modalities",
        "heads",
        "train_platform",
        "test_platform",
        "task",
        "runs",
        "complete",
        "accuracy_mean",
        "accuracy_std",
        "f1_10_mean",
        "f1_25_mean",
        "f1_50_mean",
        "frame_accuracy_mean",
        "frame_accuracy_std",
        "wall_clock_s",
    ])
    .map_err(csv_err)?;
    for r in rows {
        let c = &r.config;
        let opt = |o: Option<String>| o.unwrap_or_default();
        let rep = &r.report;
        w.write_record([
            r.fingerprint.clone(),
            c.model.to_string(),
            c.modalities.to_string(),
            c.heads.to_string(),
            opt(c.train_platform.map(|p| p.to_string())),
            opt(c.test_platform.map(|p| p.to_string())),
            opt(c.task.map(|t| t.to_string())),
            rep.n_runs.to_string(),
            r.complete.to_string(),
            fmt1(rep.outcome_accuracy.map(|s| s.mean)),
            fmt1(rep.outcome_accuracy.and_then(|s| s.std)),
            fmt1(rep.f1(10)),
            fmt1(rep.f1(25)),
            fmt1(rep.f1(50)),
            fmt1(rep.frame_accuracy.map(|s| s.mean)),
            fmt1(rep.frame_accuracy.and_then(|s| s.std)),
            format!("{:.1}", r.wall_clock_secs),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Config(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("utf-8"))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Render `results.csv`, one loss-curve SVG per stored row and a bar chart
/// per `table_<n>.json` found in `results_dir`. Returns the files written.
pub fn render_report(results_dir: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let store = ResultStore { dir: results_dir.to_path_buf() };
    let rows = store.load_all()?;
    let mut written = Vec::new();

    let path = out_dir.join("results.csv");
    write(&path, &results_csv(&rows)?)?;
    written.push(path);

    for r in rows.iter().filter(|r| r.curves.iter().any(|c| !c.train_loss.is_empty())) {
        let title = format!("{} {} {}", r.config.model, r.config.modalities, r.config.heads);
        let path = out_dir.join(format!("curves_{}.svg", r.fingerprint));
        write(&path, &curves_svg(&title, &r.curves))?;
        written.push(path);
    }

    let mut tables: Vec<PathBuf> = fs::read_dir(results_dir)
        .map_err(|e| Error::io(results_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("table_") && n.ends_with(".json"))
        })
        .collect();
    tables.sort();
    for p in tables {
        let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let table: TableOutput = serde_json::from_str(&text).map_err(|e| Error::schema(&p, e.to_string()))?;
        let csv_path = out_dir.join(format!("table_{}.csv", table.table));
        write(&csv_path, &table.to_csv()?)?;
        let svg_path = out_dir.join(format!("table_{}.svg", table.table));
        write(&svg_path, &bar_chart_svg(&table))?;
        written.extend([csv_path, svg_path]);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::{TableCell, TableRow};
    use crate::metrics::Stat;

    #[test]
    fn svgs_are_well_formed() {
        let curves = vec![SeedCurve { seed: 0, train_loss: vec![3.0, 2.0, 1.5], val_accuracy: vec![None; 3] }];
        let svg = curves_svg("a <b>", &curves);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("a &lt;b&gt;"));
        assert_eq!(svg.matches("<polyline").count(), 1);
        let table = TableOutput {
            table: 3,
            attribute_columns: vec![],
            rows: vec![TableRow {
                id: "1".into(),
                attributes: vec![],
                cells: vec![TableCell {
                    column: "accuracy".into(),
                    stat: Some(Stat { mean: 50.0, std: Some(5.0) }),
                    fingerprint: "f".into(),
                }],
            }],
        };
        let svg = bar_chart_svg(&table);
        assert_eq!(svg.matches("<rect").count(), 2);
        assert!(curves_svg("empty", &[]).contains("no training curve"));
    }
}
