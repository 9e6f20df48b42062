//! Run-directory output: `metrics.json`, per-scale predictions and attention
//! maps, checkpoints, and fused predictions.
//!
//! Layout under the run directory:
//!   metrics.json
//!   fused_predictions.csv
//!   scale_{s}/predictions.csv
//!   scale_{s}/attention/{image_id}.pgm
//!   scale_{s}/checkpoint.bin  (+ checkpoint.json sidecar)
//!
//! Everything written here is a pure function of the pipeline result, so two
//! identical runs produce byte-identical files. The run manifest (which has
//! timestamps) is written separately by the CLI.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attention::attention_to_pgm;
use crate::checkpoint::save_checkpoint;
use crate::config::PipelineConfig;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::MetricReport;
use crate::pipeline::{AblationOutcome, PipelineResult};

/// One row of `metrics.json`: display values rounded to 4 decimals at the top
/// level, full precision under `raw`.
#[derive(Debug, Serialize, Deserialize)]
pub struct MetricsRow {
    pub name: String,
    #[serde(flatten)]
    pub display: MetricReport,
    pub raw: MetricReport,
}

impl MetricsRow {
    pub fn new(name: impl Into<String>, report: MetricReport) -> Self {
        MetricsRow {
            name: name.into(),
            display: report.rounded(),
            raw: report,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MetricsDocument {
    pub num_classes: usize,
    pub positive_class: usize,
    pub rows: Vec<MetricsRow>,
}

fn roman(n: usize) -> String {
    const TABLE: [&str; 12] = [
        "I", "II", "III", "IV", "V", "VI", "VII", "VIII", "IX", "X", "XI", "XII",
    ];
    TABLE
        .get(n - 1)
        .map(|s| s.to_string())
        .unwrap_or_else(|| n.to_string())
}

pub fn scale_row_name(s: usize) -> String {
    format!("Scale {}", roman(s))
}

/// Rows for a plain training run: Scale I..S, then Fused.
pub fn pipeline_rows(result: &PipelineResult) -> Vec<MetricsRow> {
    let mut rows: Vec<MetricsRow> = result
        .scales
        .iter()
        .map(|o| MetricsRow::new(scale_row_name(o.scale), o.report))
        .collect();
    rows.push(MetricsRow::new("Fused", result.fused_report));
    rows
}

/// Rows for an ablation run: Average, Boosting, Scale I..S, Fused.
pub fn ablation_rows(outcome: &AblationOutcome) -> Vec<MetricsRow> {
    let mut rows = vec![
        MetricsRow::new("Average", outcome.average),
        MetricsRow::new("Boosting", outcome.boosting),
    ];
    rows.extend(pipeline_rows(&outcome.pipeline));
    rows
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub fn write_metrics_json(path: &Path, cfg: &PipelineConfig, rows: Vec<MetricsRow>, num_classes: usize) -> Result<()> {
    let doc = MetricsDocument {
        num_classes,
        positive_class: cfg.positive_class,
        rows,
    };
    let json = serde_json::to_string_pretty(&doc).expect("metrics serialize");
    write(path, json + "\n")
}

fn predictions_csv(eval: &Dataset, labels: &[usize], probs: &[Vec<f64>]) -> String {
    let m = probs.first().map(|p| p.len()).unwrap_or(eval.num_classes);
    let mut out = String::from("image_id,true_label,pred_label");
    for c in 0..m {
        out.push_str(&format!(",prob_{c}"));
    }
    out.push('\n');
    for i in 0..labels.len() {
        out.push_str(&format!("{},{},{}", eval.ids[i], eval.labels[i], labels[i]));
        for p in &probs[i] {
            out.push_str(&format!(",{p}"));
        }
        out.push('\n');
    }
    out
}

fn fused_csv(eval: &Dataset, fused: &[usize]) -> String {
    let mut out = String::from("image_id,true_label,fused_label\n");
    for (i, label) in fused.iter().enumerate() {
        out.push_str(&format!("{},{},{label}\n", eval.ids[i], eval.labels[i]));
    }
    out
}

/// Write the full run directory for a training run. Attention maps are the
/// eval split's (ids are unique across splits, and those are the maps the
/// eval-side enhancement consumed).
pub fn write_run_dir(
    out: &Path,
    cfg: &PipelineConfig,
    result: &PipelineResult,
    eval: &Dataset,
    extra_rows: Option<Vec<MetricsRow>>,
) -> Result<()> {
    mkdir(out)?;
    let rows = match extra_rows {
        Some(mut extra) => {
            extra.extend(pipeline_rows(result));
            extra
        }
        None => pipeline_rows(result),
    };
    write_metrics_json(&out.join("metrics.json"), cfg, rows, eval.num_classes)?;
    write(&out.join("fused_predictions.csv"), fused_csv(eval, &result.fused_labels))?;

    for outcome in &result.scales {
        let dir = out.join(format!("scale_{}", outcome.scale));
        mkdir(&dir)?;
        write(
            &dir.join("predictions.csv"),
            predictions_csv(eval, &outcome.eval_labels, &outcome.eval_probs),
        )?;
        let att_dir = dir.join("attention");
        mkdir(&att_dir)?;
        for (id, map) in eval.ids.iter().zip(&outcome.eval_attention) {
            write(&att_dir.join(format!("{id}.pgm")), attention_to_pgm(map))?;
        }
        save_checkpoint(&dir.join("checkpoint.bin"), &result.spec, &outcome.params)?;
    }
    Ok(())
}

/// Write scoring output for an existing checkpoint set: metrics and
/// predictions only, no checkpoints or attention maps.
pub fn write_eval_dir(
    out: &Path,
    cfg: &PipelineConfig,
    result: &PipelineResult,
    data: &Dataset,
) -> Result<()> {
    mkdir(out)?;
    write_metrics_json(&out.join("metrics.json"), cfg, pipeline_rows(result), data.num_classes)?;
    write(&out.join("fused_predictions.csv"), fused_csv(data, &result.fused_labels))?;
    for outcome in &result.scales {
        let dir = out.join(format!("scale_{}", outcome.scale));
        mkdir(&dir)?;
        write(
            &dir.join("predictions.csv"),
            predictions_csv(data, &outcome.eval_labels, &outcome.eval_probs),
        )?;
    }
    Ok(())
}
