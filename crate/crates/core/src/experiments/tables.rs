//! Comparative report tables over experiment records.
//!
//! Three layouts mirror the comparison tables the records are meant to
//! reproduce: single-stage accuracy, two-stage cascaded lineage, and
//! edge-efficiency (FPS / power / AP). Percent cells are rounded half to
//! even at one decimal; the mAP cell is always recomputed from the row's
//! per-class APs, never copied from the stored report.

use std::fmt;

use super::ExperimentRecord;
use crate::error::{Error, Result};
use crate::metrics::{mean_ap, pct1, EvalReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableLayout {
    /// Lineage + validation + testing AP columns.
    Accuracy,
    /// Two-stage lineage with per-stage datasets, frozen layers, and times.
    Cascaded,
    /// FPS, average power, and the AP columns of one report.
    Efficiency,
}

impl TableLayout {
    fn name(&self) -> &'static str {
        match self {
            TableLayout::Accuracy => "accuracy",
            TableLayout::Cascaded => "cascaded",
            TableLayout::Efficiency => "efficiency",
        }
    }
}

impl fmt::Display for TableLayout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Markdown,
    Csv,
}

fn hours(h: f64) -> String {
    format!("{h:.3}")
}

fn opt_hours(h: Option<f64>) -> String {
    h.map(hours).unwrap_or_else(|| "-".to_string())
}

fn is_scratch(source: &str) -> bool {
    source.eq_ignore_ascii_case("scratch")
}

fn class_names(report: &EvalReport) -> Vec<String> {
    report
        .per_class
        .iter()
        .map(|a| a.class.name.clone())
        .collect()
}

fn metric_headers(prefix: &str, names: &[String], iou_threshold: f64) -> Vec<String> {
    let mut headers: Vec<String> = names
        .iter()
        .map(|n| format!("{prefix}AP_{n} (%)"))
        .collect();
    headers.push(format!("{prefix}mAP@{iou_threshold} (%)"));
    headers
}

/// Per-class AP percentages plus the recomputed mAP.
fn metric_cells(report: &EvalReport, names: &[String], run_id: &str) -> Result<Vec<String>> {
    let found = class_names(report);
    if found != *names {
        return Err(Error::InvalidRecord {
            run_id: run_id.to_string(),
            message: format!("class columns {found:?} do not match table columns {names:?}"),
        });
    }
    let mut cells: Vec<String> = report.per_class.iter().map(|a| pct1(a.ap)).collect();
    cells.push(pct1(mean_ap(&report.per_class)?));
    Ok(cells)
}

fn require<'a, T>(
    value: &'a Option<T>,
    run_id: &str,
    field: &'static str,
    layout: TableLayout,
) -> Result<&'a T> {
    value.as_ref().ok_or(Error::MissingField {
        run_id: run_id.to_string(),
        field,
        layout: layout.name(),
    })
}

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

fn accuracy_table(records: &[ExperimentRecord]) -> Result<Table> {
    let fixed = [
        "Model",
        "Pre-trained Weights",
        "Weights Train Time (Hours)",
        "Training Description",
        "Frozen Layers",
        "Epochs",
        "Training Time (Hours)",
    ];
    let mut header: Vec<String> = fixed.iter().map(|s| s.to_string()).collect();
    let mut rows = Vec::new();
    let mut names: Option<Vec<String>> = None;

    for record in records {
        record.validate()?;
        let layout = TableLayout::Accuracy;
        let validation = require(&record.validation, &record.run_id, "validation", layout)?;
        let testing = require(&record.testing, &record.run_id, "testing", layout)?;
        if names.is_none() {
            let n = class_names(testing);
            header.extend(metric_headers("Validation ", &n, validation.iou_threshold));
            header.extend(metric_headers("Testing ", &n, testing.iou_threshold));
            names = Some(n);
        }
        let names = names.as_ref().unwrap();

        let first = &record.stages[0];
        let last = record.stages.last().unwrap();
        let scratch = is_scratch(&first.source_weights);
        let mut row = vec![
            record.model.clone(),
            if scratch {
                "-".to_string()
            } else {
                first.source_weights.clone()
            },
            opt_hours(record.weights_train_time_hours),
            if scratch { "Train from scratch" } else { "Fine Tune" }.to_string(),
            last.frozen_layers.to_string(),
            last.epochs.to_string(),
            hours(last.training_time_hours),
        ];
        row.extend(metric_cells(validation, names, &record.run_id)?);
        row.extend(metric_cells(testing, names, &record.run_id)?);
        rows.push(row);
    }
    Ok(Table { header, rows })
}

fn cascaded_table(records: &[ExperimentRecord]) -> Result<Table> {
    let fixed = [
        "Model",
        "Pre-trained Weights",
        "Weights Train Time (Hours)",
        "Stage 1 Train Dataset",
        "Layers Frozen Stage 1",
        "Stage 1 Train Time (Hours)",
        "Stage 2 Train Dataset",
        "Layers Frozen Stage 2",
        "Stage 2 Train Time (Hours)",
        "Total Train Time (Hours)",
    ];
    let mut header: Vec<String> = fixed.iter().map(|s| s.to_string()).collect();
    let mut rows = Vec::new();
    let mut names: Option<Vec<String>> = None;

    for record in records {
        record.validate()?;
        let layout = TableLayout::Cascaded;
        let validation = require(&record.validation, &record.run_id, "validation", layout)?;
        let testing = require(&record.testing, &record.run_id, "testing", layout)?;
        if names.is_none() {
            let n = class_names(testing);
            header.extend(metric_headers("Validation ", &n, validation.iou_threshold));
            header.extend(metric_headers("Testing ", &n, testing.iou_threshold));
            names = Some(n);
        }
        let names = names.as_ref().unwrap();

        let first = &record.stages[0];
        let second = record.stages.get(1);
        let mut row = vec![
            record.model.clone(),
            first.source_weights.clone(),
            opt_hours(record.weights_train_time_hours),
            first.dataset.clone(),
            first.frozen_layers.to_string(),
            hours(first.training_time_hours),
            second.map_or("-".to_string(), |s| s.dataset.clone()),
            second.map_or("-".to_string(), |s| s.frozen_layers.to_string()),
            second.map_or("-".to_string(), |s| hours(s.training_time_hours)),
            hours(record.total_training_time_hours()),
        ];
        row.extend(metric_cells(validation, names, &record.run_id)?);
        row.extend(metric_cells(testing, names, &record.run_id)?);
        rows.push(row);
    }
    Ok(Table { header, rows })
}

fn efficiency_table(records: &[ExperimentRecord]) -> Result<Table> {
    let fixed = [
        "Pre-trained Weights",
        "Model",
        "Avg. FPS",
        "Avg. Power During Inference (mW)",
    ];
    let mut header: Vec<String> = fixed.iter().map(|s| s.to_string()).collect();
    let mut rows = Vec::new();
    let mut names: Option<Vec<String>> = None;

    for record in records {
        record.validate()?;
        let layout = TableLayout::Efficiency;
        let metrics = require(&record.run_metrics, &record.run_id, "run_metrics", layout)?;
        // Testing accuracy when measured, validation otherwise.
        let report = record
            .testing
            .as_ref()
            .or(record.validation.as_ref())
            .ok_or(Error::MissingField {
                run_id: record.run_id.clone(),
                field: "testing or validation",
                layout: layout.name(),
            })?;
        if names.is_none() {
            let n = class_names(report);
            header.extend(metric_headers("", &n, report.iou_threshold));
            names = Some(n);
        }
        let names = names.as_ref().unwrap();

        let first = &record.stages[0];
        let mut row = vec![
            if is_scratch(&first.source_weights) {
                "Train From Scratch".to_string()
            } else {
                first.source_weights.clone()
            },
            record.model.clone(),
            format!("{:.1}", metrics.fps),
            format!("{:.2}", metrics.avg_power_mw),
        ];
        row.extend(metric_cells(report, names, &record.run_id)?);
        rows.push(row);
    }
    Ok(Table { header, rows })
}

fn emit_markdown(table: &Table) -> String {
    let mut out = String::new();
    out.push('|');
    for h in &table.header {
        out.push_str(&format!(" {h} |"));
    }
    out.push('\n');
    out.push('|');
    for _ in &table.header {
        out.push_str("----|");
    }
    out.push('\n');
    for row in &table.rows {
        out.push('|');
        for cell in row {
            out.push_str(&format!(" {cell} |"));
        }
        out.push('\n');
    }
    out
}

fn emit_csv(table: &Table) -> String {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer
        .write_record(&table.header)
        .expect("in-memory csv write");
    for row in &table.rows {
        writer.write_record(row).expect("in-memory csv write");
    }
    String::from_utf8(writer.into_inner().expect("in-memory csv flush"))
        .expect("csv output is utf-8")
}

/// Renders experiment records as a comparison table.
///
/// Per-class AP columns are derived from the first record; every record
/// must carry the same class set. With no records at all only the fixed
/// columns appear (the metric columns cannot be known).
pub fn render_table(
    records: &[ExperimentRecord],
    layout: TableLayout,
    format: TableFormat,
) -> Result<String> {
    let table = match layout {
        TableLayout::Accuracy => accuracy_table(records)?,
        TableLayout::Cascaded => cascaded_table(records)?,
        TableLayout::Efficiency => efficiency_table(records)?,
    };
    Ok(match format {
        TableFormat::Markdown => emit_markdown(&table),
        TableFormat::Csv => emit_csv(&table),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotations::ClassDef;
    use crate::efficiency::RunMetrics;
    use crate::experiments::TLStage;
    use crate::metrics::{ApMethod, ApResult};

    fn report(ap_fire: f64, ap_smoke: f64) -> EvalReport {
        let per_class = vec![
            ApResult::summary(ClassDef::new(0, "fire"), ap_fire, ApMethod::Envelope),
            ApResult::summary(ClassDef::new(1, "smoke"), ap_smoke, ApMethod::Envelope),
        ];
        let map = mean_ap(&per_class).unwrap();
        EvalReport {
            iou_threshold: 0.5,
            per_class,
            map,
        }
    }

    fn stage(index: u32, source: &str, dataset: &str, frozen: u32, hours: f64) -> TLStage {
        TLStage {
            index,
            source_weights: source.to_string(),
            dataset: dataset.to_string(),
            frozen_layers: frozen,
            epochs: 150,
            initial_lr: 0.001,
            training_time_hours: hours,
        }
    }

    fn fine_tune_record() -> ExperimentRecord {
        ExperimentRecord {
            run_id: "v5n-fasdd-0".to_string(),
            model: "YOLOv5n".to_string(),
            weights_train_time_hours: Some(9.604),
            stages: vec![stage(1, "FASDD", "AFSE", 0, 0.037)],
            validation: Some(report(0.562, 0.920)),
            testing: Some(report(0.700, 0.885)),
            run_metrics: None,
            edp_group: None,
        }
    }

    #[test]
    fn accuracy_row_recomputes_map_with_half_even_rounding() {
        let text = render_table(
            &[fine_tune_record()],
            TableLayout::Accuracy,
            TableFormat::Markdown,
        )
        .unwrap();
        // (70.0 + 88.5) / 2 = 79.25 -> 79.2
        assert!(text.contains("| 70.0 | 88.5 | 79.2 |"), "table:\n{text}");
        assert!(text.contains("| FASDD | 9.604 | Fine Tune | 0 | 150 | 0.037 |"));
        assert!(text.contains("Testing mAP@0.5 (%)"));
    }

    #[test]
    fn efficiency_row_orders_fps_then_power() {
        let mut record = fine_tune_record();
        record.stages = vec![stage(1, "scratch", "AFSE", 0, 0.072)];
        record.validation = Some(report(0.358, 0.828));
        record.testing = None;
        record.run_metrics =
            Some(RunMetrics::new("v5n", 42, 7.1186, 6783.22, 48.29).unwrap());
        let text = render_table(&[record], TableLayout::Efficiency, TableFormat::Markdown).unwrap();
        assert!(
            text.contains("| Train From Scratch | YOLOv5n | 5.9 | 6783.22 | 35.8 | 82.8 | 59.3 |"),
            "table:\n{text}"
        );
    }

    #[test]
    fn cascaded_row_sums_total_time_and_dashes_missing_stage() {
        let two_stage = ExperimentRecord {
            run_id: "cascade".to_string(),
            model: "YOLOv5n".to_string(),
            weights_train_time_hours: Some(9.604),
            stages: vec![
                stage(1, "FASDD", "DFIRE", 0, 1.741),
                stage(2, "stage1", "AFSE", 0, 0.035),
            ],
            validation: Some(report(0.520, 0.918)),
            testing: Some(report(0.695, 0.914)),
            run_metrics: None,
            edp_group: None,
        };
        let text = render_table(
            std::slice::from_ref(&two_stage),
            TableLayout::Cascaded,
            TableFormat::Markdown,
        )
        .unwrap();
        // 9.604 + 1.741 + 0.035
        assert!(text.contains("| 11.380 |"), "table:\n{text}");
        assert!(text.contains("| DFIRE | 0 | 1.741 | AFSE | 0 | 0.035 |"));

        let mut single = two_stage;
        single.stages.truncate(1);
        let text =
            render_table(&[single], TableLayout::Cascaded, TableFormat::Markdown).unwrap();
        assert!(text.contains("| DFIRE | 0 | 1.741 | - | - | - |"), "table:\n{text}");
    }

    #[test]
    fn empty_records_give_header_only_table() {
        let md = render_table(&[], TableLayout::Accuracy, TableFormat::Markdown).unwrap();
        assert_eq!(md.lines().count(), 2);
        let csv = render_table(&[], TableLayout::Efficiency, TableFormat::Csv).unwrap();
        assert_eq!(csv.lines().count(), 1);
        assert!(csv.starts_with("Pre-trained Weights,Model,Avg. FPS"));
    }

    #[test]
    fn missing_fields_name_the_record_and_field() {
        let mut record = fine_tune_record();
        record.testing = None;
        let err = render_table(&[record], TableLayout::Accuracy, TableFormat::Markdown)
            .unwrap_err();
        match err {
            Error::MissingField { run_id, field, layout } => {
                assert_eq!(run_id, "v5n-fasdd-0");
                assert_eq!(field, "testing");
                assert_eq!(layout, "accuracy");
            }
            other => panic!("expected missing-field error, got {other:?}"),
        }

        let mut record = fine_tune_record();
        record.run_metrics = None;
        let err = render_table(&[record], TableLayout::Efficiency, TableFormat::Markdown)
            .unwrap_err();
        assert!(matches!(err, Error::MissingField { field: "run_metrics", .. }));
    }

    #[test]
    fn mismatched_class_columns_are_rejected() {
        let other = ExperimentRecord {
            testing: Some(EvalReport {
                iou_threshold: 0.5,
                per_class: vec![ApResult::summary(
                    ClassDef::new(0, "person"),
                    0.5,
                    ApMethod::Envelope,
                )],
                map: 0.5,
            }),
            ..fine_tune_record()
        };
        let err = render_table(
            &[fine_tune_record(), other],
            TableLayout::Accuracy,
            TableFormat::Markdown,
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidRecord { .. }));
    }

    #[test]
    fn csv_output_quotes_only_when_needed() {
        let text = render_table(
            &[fine_tune_record()],
            TableLayout::Accuracy,
            TableFormat::Csv,
        )
        .unwrap();
        let mut lines = text.lines();
        let header = lines.next().unwrap();
        assert!(header.starts_with("Model,Pre-trained Weights"));
        let row = lines.next().unwrap();
        assert!(row.starts_with("YOLOv5n,FASDD,9.604,Fine Tune,0,150,0.037,"));
        assert!(row.ends_with("70.0,88.5,79.2"));
    }

    #[test]
    fn rendered_map_cell_matches_mean_of_ap_cells() {
        // The stored report's map field is deliberately wrong; the renderer
        // must recompute from the AP cells.
        let mut record = fine_tune_record();
        record.testing.as_mut().unwrap().map = 0.999;
        let text = render_table(&[record], TableLayout::Accuracy, TableFormat::Csv).unwrap();
        assert!(text.contains("70.0,88.5,79.2"), "table:\n{text}");
        assert!(!text.contains("99.9"));
    }
}
