//! Subcommand implementations. Each loads what it needs, runs the core
//! pipeline, and writes everything under its `--out` directory.

use std::path::Path;

use amen_core::checkpoint::load_checkpoint;
use amen_core::config::{Overrides, PipelineConfig};
use amen_core::data::{self, Dataset};
use amen_core::error::{Error, Result};
use amen_core::metrics::round4;
use amen_core::pipeline::{evaluate_branches, run_ablation, run_pipeline, PipelineResult};
use amen_core::report::{
    ablation_rows, scale_row_name, write_eval_dir, write_metrics_json, write_run_dir, MetricsRow,
};
use amen_core::BranchParams;
use serde::{Deserialize, Serialize};

use crate::manifest::RunManifest;

/// The weight grid swept by `sweep-lambda`: four decades.
pub const LAMBDA_GRID: [f64; 4] = [1e-5, 1e-4, 1e-3, 1e-2];

pub fn gen_data(
    n: usize,
    out: &Path,
    seed: u64,
    image_size: usize,
    detail_size: usize,
    noise: f64,
) -> Result<()> {
    let ds = data::gen_synthetic(n, image_size, detail_size, noise, seed)?;
    ds.validate()?;
    data::save_dataset_dir(&ds, out)?;
    println!(
        "wrote {n} images ({image_size}x{image_size}, detail {detail_size}, noise {noise}) to {}",
        out.display()
    );
    Ok(())
}

fn load_dataset(data_dir: &Path, image_size: usize) -> Result<Dataset> {
    let ds = data::load_image_dir(data_dir, &data::manifest_path(data_dir))?;
    if ds.is_empty() {
        return Err(Error::invalid(format!(
            "dataset at {} is empty",
            data_dir.display()
        )));
    }
    ds.validate()?;
    data::resize_dataset(&ds, image_size)
}

fn fmt_metric(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{:.4}", round4(v)),
        None => "  n/a ".to_string(),
    }
}

fn print_rows(rows: &[MetricsRow]) {
    println!("{:<10} {:>7} {:>7} {:>7} {:>7}", "row", "OA", "Sen", "PPV", "F1");
    for row in rows {
        println!(
            "{:<10} {:>7} {:>7} {:>7} {:>7}",
            row.name,
            fmt_metric(row.raw.oa),
            fmt_metric(row.raw.sen),
            fmt_metric(row.raw.ppv),
            fmt_metric(row.raw.f1),
        );
    }
}

fn planned_outputs(scales: usize) -> Vec<String> {
    let mut files = vec!["metrics.json".to_string(), "fused_predictions.csv".to_string()];
    for s in 1..=scales {
        files.push(format!("scale_{s}/predictions.csv"));
        files.push(format!("scale_{s}/attention/"));
        files.push(format!("scale_{s}/checkpoint.bin"));
        files.push(format!("scale_{s}/checkpoint.json"));
    }
    files
}

pub fn train(
    config: Option<&Path>,
    data_dir: &Path,
    out: &Path,
    overrides: &Overrides,
) -> Result<()> {
    let cfg = resolve_config(config, overrides)?;
    let ds = load_dataset(data_dir, cfg.image_size)?;
    let (train_split, eval_split) = data::split(&ds, cfg.eval_fraction, cfg.seed)?;

    RunManifest::new(&cfg, data_dir, planned_outputs(cfg.scales)).write(out)?;
    let result = run_pipeline(&train_split, &eval_split, &cfg)?;
    write_run_dir(out, &cfg, &result, &eval_split, None)?;

    let rows = amen_core::report::pipeline_rows(&result);
    print_rows(&rows);
    println!("run directory: {}", out.display());
    Ok(())
}

pub fn resolve_config(config: Option<&Path>, overrides: &Overrides) -> Result<PipelineConfig> {
    match config {
        Some(path) => amen_core::config::parse_config(path, overrides),
        None => amen_core::config::ConfigFile::default().resolve(overrides),
    }
}

fn load_branches(run_dir: &Path, scales: usize) -> Result<(amen_core::BackboneSpec, Vec<BranchParams>)> {
    let mut spec = None;
    let mut branches = Vec::with_capacity(scales);
    for s in 1..=scales {
        let path = run_dir.join(format!("scale_{s}/checkpoint.bin"));
        let (this_spec, params) = load_checkpoint(&path)?;
        match &spec {
            None => spec = Some(this_spec),
            Some(prev) if *prev == this_spec => {}
            Some(_) => {
                return Err(Error::Decode {
                    path,
                    reason: "checkpoint spec differs from scale 1".into(),
                })
            }
        }
        branches.push(params);
    }
    Ok((spec.expect("at least one scale"), branches))
}

pub fn eval(run_dir: &Path, data_dir: &Path, out: &Path) -> Result<()> {
    let manifest = RunManifest::read(run_dir)?;
    let cfg = manifest.config;
    let (spec, branches) = load_branches(run_dir, cfg.scales)?;
    let ds = load_dataset(data_dir, cfg.image_size)?;
    let result = evaluate_branches(&ds, &cfg, &spec, &branches)?;
    write_eval_dir(out, &cfg, &result, &ds)?;
    print_rows(&amen_core::report::pipeline_rows(&result));
    println!("eval output: {}", out.display());
    Ok(())
}

pub fn ablate(
    config: Option<&Path>,
    data_dir: &Path,
    out: &Path,
    repeats: usize,
    overrides: &Overrides,
) -> Result<()> {
    let cfg = resolve_config(config, overrides)?;
    let ds = load_dataset(data_dir, cfg.image_size)?;
    let (train_split, eval_split) = data::split(&ds, cfg.eval_fraction, cfg.seed)?;

    RunManifest::new(&cfg, data_dir, vec!["metrics.json".to_string()]).write(out)?;
    let outcome = run_ablation(&train_split, &eval_split, &cfg, repeats)?;
    let rows = ablation_rows(&outcome);
    write_metrics_json(&out.join("metrics.json"), &cfg, rows, eval_split.num_classes)?;

    print_rows(&ablation_rows(&outcome));
    println!("ablation output: {}", out.display());
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SweepEntry {
    pub lambda: f64,
    /// Fused overall accuracy (display rounding).
    pub oa: Option<f64>,
    pub per_scale_oa: Vec<Option<f64>>,
    pub fused: MetricsRowOwned,
}

/// Flattened copy of a metrics row for sweep serialization.
#[derive(Debug, Serialize, Deserialize)]
pub struct MetricsRowOwned {
    pub oa: Option<f64>,
    pub sen: Option<f64>,
    pub ppv: Option<f64>,
    pub f1: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SweepDocument {
    pub seed: u64,
    pub scales: usize,
    pub entries: Vec<SweepEntry>,
}

fn sweep_entry(lambda: f64, result: &PipelineResult) -> SweepEntry {
    let fused = result.fused_report.rounded();
    SweepEntry {
        lambda,
        oa: fused.oa,
        per_scale_oa: result
            .scales
            .iter()
            .map(|o| o.report.rounded().oa)
            .collect(),
        fused: MetricsRowOwned {
            oa: fused.oa,
            sen: fused.sen,
            ppv: fused.ppv,
            f1: fused.f1,
        },
    }
}

fn sweep_table(doc: &SweepDocument) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<10} {:>7} {:>7} {:>7} {:>7}",
        "lambda", "OA", "Sen", "PPV", "F1"
    ));
    for s in 1..=doc.scales {
        out.push_str(&format!(" {:>10}", format!("OA({})", scale_row_name(s))));
    }
    out.push('\n');
    for e in &doc.entries {
        out.push_str(&format!(
            "{:<10} {:>7} {:>7} {:>7} {:>7}",
            format!("{:e}", e.lambda),
            fmt_metric(e.fused.oa),
            fmt_metric(e.fused.sen),
            fmt_metric(e.fused.ppv),
            fmt_metric(e.fused.f1),
        ));
        for oa in &e.per_scale_oa {
            out.push_str(&format!(" {:>10}", fmt_metric(*oa)));
        }
        out.push('\n');
    }
    out
}

pub fn sweep_lambda(
    config: Option<&Path>,
    data_dir: &Path,
    out: &Path,
    overrides: &Overrides,
) -> Result<()> {
    let cfg = resolve_config(config, overrides)?;
    let ds = load_dataset(data_dir, cfg.image_size)?;
    let (train_split, eval_split) = data::split(&ds, cfg.eval_fraction, cfg.seed)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;

    let mut entries = Vec::with_capacity(LAMBDA_GRID.len());
    for &lambda in &LAMBDA_GRID {
        let cfg_l = cfg.with_uniform_lambda(lambda);
        let run_dir = out.join(format!("lambda_{lambda:e}"));
        RunManifest::new(&cfg_l, data_dir, planned_outputs(cfg_l.scales)).write(&run_dir)?;
        let result = run_pipeline(&train_split, &eval_split, &cfg_l)?;
        write_run_dir(&run_dir, &cfg_l, &result, &eval_split, None)?;
        entries.push(sweep_entry(lambda, &result));
    }

    let doc = SweepDocument {
        seed: cfg.seed,
        scales: cfg.scales,
        entries,
    };
    let json_path = out.join("sweep.json");
    let json = serde_json::to_string_pretty(&doc).expect("sweep serializes");
    std::fs::write(&json_path, json + "\n").map_err(|e| Error::io(&json_path, e))?;
    let table = sweep_table(&doc);
    let table_path = out.join("sweep.txt");
    std::fs::write(&table_path, &table).map_err(|e| Error::io(&table_path, e))?;

    print!("{table}");
    println!("sweep output: {}", out.display());
    Ok(())
}

pub fn export_attention(run_dir: &Path, data_dir: &Path, out: &Path) -> Result<()> {
    let manifest = RunManifest::read(run_dir)?;
    let cfg = manifest.config;
    let (spec, branches) = load_branches(run_dir, cfg.scales)?;
    let ds = load_dataset(data_dir, cfg.image_size)?;
    let result = evaluate_branches(&ds, &cfg, &spec, &branches)?;

    for outcome in &result.scales {
        let dir = out.join(format!("scale_{}", outcome.scale));
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for (id, map) in ds.ids.iter().zip(&outcome.eval_attention) {
            let path = dir.join(format!("{id}.pgm"));
            std::fs::write(&path, amen_core::attention::attention_to_pgm(map))
                .map_err(|e| Error::io(&path, e))?;
        }
    }
    println!(
        "wrote {} maps per scale for {} scales to {}",
        ds.len(),
        result.scales.len(),
        out.display()
    );
    Ok(())
}
