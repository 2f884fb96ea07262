//! Metric report files: CSV with one row per subject plus trailing
//! "mean"/"sd" rows, a JSON mirror carrying the same field names, and the
//! per-model cross-validation summary.

use std::path::Path;

use agct_core::metrics::{Aggregate, FieldStat, MetricsReport};
use agct_core::model::ModelKind;
use anyhow::{Context, Result};
use serde_json::{json, Value};

/// Header of the per-subject report CSV; the JSON mirror uses the same
/// names as object keys.
pub const REPORT_COLUMNS: [&str; 11] = [
    "subject",
    "mae_full",
    "mae_air",
    "mae_bone",
    "mae_tissue",
    "psnr",
    "ssim",
    "voxels_head",
    "voxels_air",
    "voxels_bone",
    "voxels_tissue",
];

/// Header of the cross-validation summary CSV (one row per model).
pub const SUMMARY_COLUMNS: [&str; 14] = [
    "model",
    "mae_full_mean",
    "mae_full_sd",
    "mae_air_mean",
    "mae_air_sd",
    "mae_bone_mean",
    "mae_bone_sd",
    "mae_tissue_mean",
    "mae_tissue_sd",
    "psnr_mean",
    "psnr_sd",
    "ssim_mean",
    "ssim_sd",
    "subjects",
];

/// Renders a metric cell: absent regions become an empty cell and
/// non-finite values the textual sentinels `inf`/`-inf`/`nan`.
fn csv_number(v: Option<f64>) -> String {
    match v {
        None => String::new(),
        Some(x) if x.is_nan() => "nan".into(),
        Some(x) if x.is_infinite() => {
            if x > 0.0 {
                "inf".into()
            } else {
                "-inf".into()
            }
        }
        Some(x) => format!("{x}"),
    }
}

/// JSON twin of [`csv_number`]: `null` for absent, string sentinels for
/// non-finite (JSON numbers cannot carry them), plain numbers otherwise.
fn json_number(v: Option<f64>) -> Value {
    match v {
        None => Value::Null,
        Some(x) => serde_json::Number::from_f64(x)
            .map(Value::Number)
            .unwrap_or_else(|| Value::String(csv_number(Some(x)))),
    }
}

/// Population mean and standard deviation (matching how the metric fields
/// themselves are aggregated).
fn mean_sd(values: &[f64]) -> (f64, f64) {
    debug_assert!(!values.is_empty());
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

struct VoxelStats {
    head: (f64, f64),
    air: (f64, f64),
    bone: (f64, f64),
    tissue: (f64, f64),
}

fn voxel_stats(reports: &[MetricsReport]) -> VoxelStats {
    let stat = |pick: fn(&MetricsReport) -> usize| {
        let values: Vec<f64> = reports.iter().map(|r| pick(r) as f64).collect();
        mean_sd(&values)
    };
    VoxelStats {
        head: stat(|r| r.voxels_head),
        air: stat(|r| r.voxels_air),
        bone: stat(|r| r.voxels_bone),
        tissue: stat(|r| r.voxels_tissue),
    }
}

fn subject_row(r: &MetricsReport) -> String {
    [
        r.subject_id.clone(),
        csv_number(Some(r.mae_full)),
        csv_number(r.mae_air),
        csv_number(r.mae_bone),
        csv_number(r.mae_tissue),
        csv_number(Some(r.psnr)),
        csv_number(Some(r.ssim)),
        r.voxels_head.to_string(),
        r.voxels_air.to_string(),
        r.voxels_bone.to_string(),
        r.voxels_tissue.to_string(),
    ]
    .join(",")
}

fn stat_row(
    label: &str,
    agg: &Aggregate,
    voxels: &VoxelStats,
    pick: impl Fn(&FieldStat) -> Option<f64>,
    pick_voxels: impl Fn(&(f64, f64)) -> f64,
) -> String {
    [
        label.to_string(),
        csv_number(pick(&agg.mae_full)),
        csv_number(pick(&agg.mae_air)),
        csv_number(pick(&agg.mae_bone)),
        csv_number(pick(&agg.mae_tissue)),
        csv_number(pick(&agg.psnr)),
        csv_number(pick(&agg.ssim)),
        csv_number(Some(pick_voxels(&voxels.head))),
        csv_number(Some(pick_voxels(&voxels.air))),
        csv_number(Some(pick_voxels(&voxels.bone))),
        csv_number(Some(pick_voxels(&voxels.tissue))),
    ]
    .join(",")
}

/// Writes the per-subject CSV report: header, one row per subject, then
/// "mean" and "sd" rows over all subjects.
pub fn write_csv(path: &Path, reports: &[MetricsReport], agg: &Aggregate) -> Result<()> {
    let voxels = voxel_stats(reports);
    let mut lines = vec![REPORT_COLUMNS.join(",")];
    lines.extend(reports.iter().map(subject_row));
    lines.push(stat_row("mean", agg, &voxels, |s| s.mean, |v| v.0));
    lines.push(stat_row("sd", agg, &voxels, |s| s.sd, |v| v.1));
    std::fs::write(path, lines.join("\n") + "\n")
        .with_context(|| format!("writing {}", path.display()))
}

/// The JSON mirror of [`write_csv`]: a `reports` array plus `mean`/`sd`
/// objects, all using the CSV column names.
pub fn report_json(reports: &[MetricsReport], agg: &Aggregate) -> Value {
    let rows: Vec<Value> = reports
        .iter()
        .map(|r| {
            json!({
                "subject": r.subject_id,
                "mae_full": json_number(Some(r.mae_full)),
                "mae_air": json_number(r.mae_air),
                "mae_bone": json_number(r.mae_bone),
                "mae_tissue": json_number(r.mae_tissue),
                "psnr": json_number(Some(r.psnr)),
                "ssim": json_number(Some(r.ssim)),
                "voxels_head": r.voxels_head,
                "voxels_air": r.voxels_air,
                "voxels_bone": r.voxels_bone,
                "voxels_tissue": r.voxels_tissue,
            })
        })
        .collect();
    let voxels = voxel_stats(reports);
    let stats = |pick: fn(&FieldStat) -> Option<f64>, pick_voxels: fn(&(f64, f64)) -> f64| {
        json!({
            "mae_full": json_number(pick(&agg.mae_full)),
            "mae_air": json_number(pick(&agg.mae_air)),
            "mae_bone": json_number(pick(&agg.mae_bone)),
            "mae_tissue": json_number(pick(&agg.mae_tissue)),
            "psnr": json_number(pick(&agg.psnr)),
            "ssim": json_number(pick(&agg.ssim)),
            "voxels_head": json_number(Some(pick_voxels(&voxels.head))),
            "voxels_air": json_number(Some(pick_voxels(&voxels.air))),
            "voxels_bone": json_number(Some(pick_voxels(&voxels.bone))),
            "voxels_tissue": json_number(Some(pick_voxels(&voxels.tissue))),
        })
    };
    json!({
        "reports": rows,
        "mean": stats(|s| s.mean, |v| v.0),
        "sd": stats(|s| s.sd, |v| v.1),
    })
}

pub fn write_json(path: &Path, reports: &[MetricsReport], agg: &Aggregate) -> Result<()> {
    let body = serde_json::to_string_pretty(&report_json(reports, agg)).expect("report serializes");
    std::fs::write(path, body + "\n").with_context(|| format!("writing {}", path.display()))
}

fn summary_cells(kind: ModelKind, agg: &Aggregate, subjects: usize) -> Vec<(String, Value)> {
    let mut cells = vec![("model".to_string(), Value::String(kind.to_string()))];
    for (name, stat) in [
        ("mae_full", &agg.mae_full),
        ("mae_air", &agg.mae_air),
        ("mae_bone", &agg.mae_bone),
        ("mae_tissue", &agg.mae_tissue),
        ("psnr", &agg.psnr),
        ("ssim", &agg.ssim),
    ] {
        cells.push((format!("{name}_mean"), json_number(stat.mean)));
        cells.push((format!("{name}_sd"), json_number(stat.sd)));
    }
    cells.push(("subjects".to_string(), json!(subjects)));
    cells
}

fn summary_cell_text(value: &Value) -> String {
    match value {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Writes the cross-validation summary CSV: one row per model with
/// mean/sd columns for every metric.
pub fn write_summary_csv(path: &Path, rows: &[(ModelKind, Aggregate, usize)]) -> Result<()> {
    let mut lines = vec![SUMMARY_COLUMNS.join(",")];
    for (kind, agg, subjects) in rows {
        let cells = summary_cells(*kind, agg, *subjects);
        debug_assert!(cells.iter().map(|(n, _)| n.as_str()).eq(SUMMARY_COLUMNS));
        lines.push(
            cells
                .iter()
                .map(|(_, v)| summary_cell_text(v))
                .collect::<Vec<_>>()
                .join(","),
        );
    }
    std::fs::write(path, lines.join("\n") + "\n")
        .with_context(|| format!("writing {}", path.display()))
}

/// JSON mirror of the summary: an array of objects keyed by the CSV
/// column names.
pub fn write_summary_json(path: &Path, rows: &[(ModelKind, Aggregate, usize)]) -> Result<()> {
    let models: Vec<Value> = rows
        .iter()
        .map(|(kind, agg, subjects)| {
            Value::Object(
                summary_cells(*kind, agg, *subjects)
                    .into_iter()
                    .collect(),
            )
        })
        .collect();
    let body = serde_json::to_string_pretty(&json!({ "models": models }))
        .expect("summary serializes");
    std::fs::write(path, body + "\n").with_context(|| format!("writing {}", path.display()))
}
