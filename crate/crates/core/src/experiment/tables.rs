use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{run_experiment, ExperimentConfig, ExperimentData, LossHeads, ModelId, ResultRow, ResultStore};
use crate::classifiers::FusionVariant;
use crate::error::{Error, Result};
use crate::labels::{RobotPlatform, Task};
use crate::metrics::{MetricsReport, Stat};
use crate::modality::Modalities;
use crate::segmentation::MstcnVariant;

/// Which number of a report a cell shows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Metric {
    OutcomeAccuracy,
    F1(u32),
    FrameAccuracy,
}

impl Metric {
    fn pick(self, r: &MetricsReport) -> Option<Stat> {
        match self {
            Metric::OutcomeAccuracy => r.outcome_accuracy,
            Metric::F1(k) => r.f1_at.get(&k).copied(),
            Metric::FrameAccuracy => r.frame_accuracy,
        }
    }
}

/// One row of a table before running: descriptive attributes plus one
/// (column, config, metric) triple per numeric cell.
#[derive(Debug, Clone)]
pub struct TableRowSpec {
    pub id: String,
    pub attributes: Vec<String>,
    pub cells: Vec<(String, ExperimentConfig, Metric)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableCell {
    pub column: String,
    pub stat: Option<Stat>,
    pub fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub id: String,
    pub attributes: Vec<String>,
    pub cells: Vec<TableCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableOutput {
    pub table: u32,
    pub attribute_columns: Vec<String>,
    pub rows: Vec<TableRow>,
}

const V: Modalities = Modalities { video: true, ft: false, gripper: false };
const FT: Modalities = Modalities { video: false, ft: true, gripper: false };
const G: Modalities = Modalities { video: false, ft: false, gripper: true };
const V_FT: Modalities = Modalities { video: true, ft: true, gripper: false };
const V_G: Modalities = Modalities { video: true, ft: false, gripper: true };
const VFG: Modalities = Modalities::ALL;

fn i3d(v: FusionVariant, m: Modalities) -> (ModelId, Modalities, LossHeads) {
    (ModelId::I3d(v), m, LossHeads::CLS)
}

fn mstcn(v: MstcnVariant, m: Modalities, h: LossHeads) -> (ModelId, Modalities, LossHeads) {
    (ModelId::Mstcn(v), m, h)
}

/// Rows of the modality/loss/network grid, in row-id order. The grid has
/// no row 11, and row 12 repeats the configuration of row 7.
pub fn modality_grid() -> Vec<(u32, (ModelId, Modalities, LossHeads))> {
    use FusionVariant::*;
    use MstcnVariant::{A as MA, B as MB};
    let h = LossHeads::CLS_SEG_H;
    vec![
        (1, i3d(A, V)),
        (2, i3d(A, FT)),
        (3, i3d(A, G)),
        (4, i3d(A, VFG)),
        (5, i3d(B, VFG)),
        (6, i3d(C, VFG)),
        (7, i3d(D, VFG)),
        (8, i3d(D, V)),
        (9, i3d(D, V_FT)),
        (10, i3d(D, V_G)),
        (12, i3d(D, VFG)),
        (13, mstcn(MA, V, LossHeads::CLS)),
        (14, mstcn(MA, V, h)),
        (15, mstcn(MB, V, LossHeads::CLS)),
        (16, mstcn(MB, V, h)),
        (17, mstcn(MB, V, LossHeads::ALL)),
        (18, mstcn(MA, V_FT, h)),
        (19, mstcn(MA, V_G, h)),
        (20, mstcn(MA, VFG, h)),
        (21, mstcn(MB, V_FT, h)),
        (22, mstcn(MB, V_G, h)),
        (23, mstcn(MB, VFG, h)),
        (24, mstcn(MB, VFG, LossHeads::ALL)),
    ]
}

fn with(base: &ExperimentConfig, (model, modalities, heads): (ModelId, Modalities, LossHeads)) -> ExperimentConfig {
    ExperimentConfig { name: None, model, modalities, heads, ..base.clone() }
}

fn mark(b: bool) -> String {
    if b {
        "x".into()
    } else {
        String::new()
    }
}

/// The three models compared across robots and tasks.
fn generalization_models() -> Vec<(&'static str, (ModelId, Modalities, LossHeads))> {
    vec![
        ("i3d-d", i3d(FusionVariant::D, VFG)),
        ("mstcn-a", mstcn(MstcnVariant::A, VFG, LossHeads::CLS_SEG_H)),
        ("mstcn-b", mstcn(MstcnVariant::B, VFG, LossHeads::CLS_SEG_H)),
    ]
}

/// Row specs of table 3, 4, 5 or 6. Seeds, hyperparameters and
/// normalization come from `base`.
pub fn table_rows(table: u32, base: &ExperimentConfig) -> Result<(Vec<String>, Vec<TableRowSpec>)> {
    let acc = Metric::OutcomeAccuracy;
    match table {
        3 => {
            let cols = ["model", "v", "ft", "g", "cls", "seg_h", "seg_r"].map(String::from).to_vec();
            let rows = modality_grid()
                .into_iter()
                .map(|(id, spec)| {
                    let c = with(base, spec);
                    TableRowSpec {
                        id: id.to_string(),
                        attributes: vec![
                            c.model.to_string(),
                            mark(c.modalities.video),
                            mark(c.modalities.ft),
                            mark(c.modalities.gripper),
                            mark(true),
                            mark(c.heads.seg_h),
                            mark(c.heads.seg_r),
                        ],
                        cells: vec![("accuracy".into(), c, acc)],
                    }
                })
                .collect();
            Ok((cols, rows))
        }
        4 => {
            let cols = vec!["model".to_string(), "inputs".to_string()];
            let seg = |c: ExperimentConfig| -> Vec<(String, ExperimentConfig, Metric)> {
                vec![
                    ("f1_10".into(), c.clone(), Metric::F1(10)),
                    ("f1_25".into(), c.clone(), Metric::F1(25)),
                    ("f1_50".into(), c.clone(), Metric::F1(50)),
                    ("frame_accuracy".into(), c, Metric::FrameAccuracy),
                ]
            };
            let grid: HashMap<u32, _> = modality_grid().into_iter().collect();
            let row = |id: &str, model: &str, inputs: &str, c: ExperimentConfig| TableRowSpec {
                id: id.into(),
                attributes: vec![model.into(), inputs.into()],
                cells: seg(c),
            };
            let corr = with(base, (ModelId::Correlation, V, LossHeads::CLS_SEG_H));
            let rows = vec![
                row("correlation", "correlation", "robot actions", corr),
                row("video/mstcn-a", "mstcn-a", "v", with(base, grid[&14])),
                row("video/mstcn-b", "mstcn-b", "v", with(base, grid[&17])),
                row("all/mstcn-a", "mstcn-a", "v,ft,g", with(base, grid[&20])),
                row("all/mstcn-b", "mstcn-b", "v,ft,g", with(base, grid[&24])),
                row("all-seg_h/mstcn-a", "mstcn-a", "v,ft,g (seg_h only)", with(base, grid[&20])),
                row("all-seg_h/mstcn-b", "mstcn-b", "v,ft,g (seg_h only)", with(base, grid[&23])),
            ];
            Ok((cols, rows))
        }
        5 => {
            use RobotPlatform::{Hsr as T, KinovaGen3 as K};
            let cells = [("T->T", T, T), ("T->K", T, K), ("K->T", K, T), ("K->K", K, K)];
            let rows = generalization_models()
                .into_iter()
                .map(|(name, spec)| TableRowSpec {
                    id: name.into(),
                    attributes: vec![name.into()],
                    cells: cells
                        .iter()
                        .map(|&(col, tr, te)| {
                            let c = ExperimentConfig {
                                train_platform: Some(tr),
                                test_platform: Some(te),
                                ..with(base, spec)
                            };
                            (col.to_string(), c, acc)
                        })
                        .collect(),
                })
                .collect();
            Ok((vec!["model".into()], rows))
        }
        6 => {
            let rows = generalization_models()
                .into_iter()
                .map(|(name, spec)| TableRowSpec {
                    id: name.into(),
                    attributes: vec![name.into()],
                    cells: [Task::R2H, Task::H2R]
                        .iter()
                        .map(|&t| {
                            (
                                t.to_string().to_ascii_uppercase(),
                                ExperimentConfig { task: Some(t), ..with(base, spec) },
                                acc,
                            )
                        })
                        .collect(),
                })
                .collect();
            Ok((vec!["model".into()], rows))
        }
        other => Err(Error::UnsupportedTable(other)),
    }
}

/// Run every distinct configuration of a table once (rows sharing a
/// configuration share the result), appending each new row to `store`.
pub fn reproduce_table(
    table: u32,
    data: &ExperimentData,
    base: &ExperimentConfig,
    store: Option<&ResultStore>,
) -> Result<TableOutput> {
    let (attribute_columns, specs) = table_rows(table, base)?;
    let mut done: HashMap<String, ResultRow> = HashMap::new();
    let mut rows = Vec::with_capacity(specs.len());
    for spec in specs {
        let mut cells = Vec::with_capacity(spec.cells.len());
        for (column, config, metric) in spec.cells {
            let fp = config.fingerprint();
            if !done.contains_key(&fp) {
                log::info!(
                    "table {table} row {} {column}: {} {} {}",
                    spec.id,
                    config.model,
                    config.modalities,
                    config.heads
                );
                let row = run_experiment(&config, data)?;
                if let Some(s) = store {
                    s.append(&row)?;
                }
                done.insert(fp.clone(), row);
            }
            cells.push(TableCell { column, stat: metric.pick(&done[&fp].report), fingerprint: fp });
        }
        rows.push(TableRow { id: spec.id, attributes: spec.attributes, cells });
    }
    Ok(TableOutput { table, attribute_columns, rows })
}

fn fmt1(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.1}")).unwrap_or_default()
}

impl TableOutput {
    /// `id`, the attribute columns, then `<col>_mean,<col>_std` per cell,
    /// percents with one decimal.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["id".to_string()];
        header.extend(self.attribute_columns.iter().cloned());
        if let Some(first) = self.rows.first() {
            for c in &first.cells {
                header.push(format!("{}_mean", c.column));
                header.push(format!("{}_std", c.column));
            }
        }
        let csv_err = |e: csv::Error| Error::Config(format!("csv: {e}"));
        w.write_record(&header).map_err(csv_err)?;
        for r in &self.rows {
            let mut rec = vec![r.id.clone()];
            rec.extend(r.attributes.iter().cloned());
            for c in &r.cells {
                rec.push(fmt1(c.stat.map(|s| s.mean)));
                rec.push(fmt1(c.stat.and_then(|s| s.std)));
            }
            w.write_record(&rec).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Config(format!("csv: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn base() -> ExperimentConfig {
        ExperimentConfig::new(ModelId::Correlation, V, LossHeads::CLS)
    }

    #[test]
    fn grid_configs_are_valid_and_distinct() {
        let (_, rows) = table_rows(3, &base()).unwrap();
        assert_eq!(rows.len(), 23);
        let ids: Vec<&str> = rows.iter().map(|r| r.id.as_str()).collect();
        assert!(!ids.contains(&"11"));
        let mut seen: HashMap<String, &str> = HashMap::new();
        let mut dups = Vec::new();
        for r in &rows {
            let c = &r.cells[0].1;
            c.validate().unwrap();
            if let Some(prev) = seen.insert(c.fingerprint(), &r.id) {
                dups.push((prev.to_string(), r.id.clone()));
            }
        }
        assert_eq!(dups, vec![("7".to_string(), "12".to_string())]);
        assert_eq!(seen.len(), 22);
    }

    #[test]
    fn generalization_tables_shape() {
        let (_, rows) = table_rows(5, &base()).unwrap();
        assert_eq!(rows.len(), 3);
        assert!(rows.iter().all(|r| r.cells.len() == 4));
        let fps: HashSet<String> = rows.iter().flat_map(|r| r.cells.iter().map(|c| c.1.fingerprint())).collect();
        assert_eq!(fps.len(), 12);
        let (_, rows) = table_rows(6, &base()).unwrap();
        assert!(rows.iter().all(|r| r.cells.len() == 2));
        let (_, rows) = table_rows(4, &base()).unwrap();
        assert_eq!(rows.len(), 7);
        assert!(matches!(table_rows(7, &base()), Err(Error::UnsupportedTable(7))));
    }

    #[test]
    fn csv_uses_one_decimal() {
        let out = TableOutput {
            table: 6,
            attribute_columns: vec!["model".into()],
            rows: vec![TableRow {
                id: "m".into(),
                attributes: vec!["m".into()],
                cells: vec![
                    TableCell {
                        column: "R2H".into(),
                        stat: Some(Stat { mean: 67.25, std: Some(3.333) }),
                        fingerprint: "f".into(),
                    },
                    TableCell { column: "H2R".into(), stat: Some(Stat::single(61.0)), fingerprint: "g".into() },
                ],
            }],
        };
        assert_eq!(out.to_csv().unwrap(), "id,model,R2H_mean,R2H_std,H2R_mean,H2R_std\nm,m,67.2,3.3,61.0,\n");
    }
}
