//! Grid runs over tokenization and architecture axes, one CSV row each.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use crate::config::{KeyValues, Switch};
use crate::data::EcgRecord;
use crate::error::{Error, Result};
use crate::model::{FusionMode, ModelConfig, S2m2Ecg};
use crate::train::{evaluate, train, TrainConfig};

pub const CSV_HEADER: [&str; 12] =
    ["p", "s", "depth", "dim", "bidir", "multi_branch", "fusion", "acc", "f1", "auc", "params", "train_s"];

/// Axis values of an ablation grid. Axes missing from the grid file keep
/// the base configuration's single value.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationGrid {
    pub patch_len: Vec<usize>,
    /// Step as a fraction of the patch length.
    pub step_ratio: Vec<f64>,
    pub depth: Vec<usize>,
    pub dim: Vec<usize>,
    pub bidirectional: Vec<bool>,
    pub multi_branch: Vec<bool>,
    pub fusion: Vec<FusionMode>,
}

fn list<T: FromStr>(kv: &mut KeyValues, key: &str, default: T) -> Result<Vec<T>>
where
    T::Err: fmt::Display,
{
    let Some(raw) = kv.take::<String>(key)? else {
        return Ok(vec![default]);
    };
    let values = raw
        .split(',')
        .map(|v| {
            let v = v.trim();
            v.parse().map_err(|e| Error::Config(format!("grid axis `{key}`: bad value `{v}`: {e}")))
        })
        .collect::<Result<Vec<T>>>()?;
    if values.is_empty() {
        return Err(Error::Config(format!("grid axis `{key}` lists no values")));
    }
    Ok(values)
}

impl AblationGrid {
    /// Parses `axis = v1, v2, …` lines. Keys: `p`, `s_ratio`, `depth`,
    /// `dim`, `bidirectional`, `multi_branch`, `fusion`.
    pub fn parse(text: &str, base: &ModelConfig) -> Result<Self> {
        let mut kv = KeyValues::parse(text)?;
        let grid = Self {
            patch_len: list(&mut kv, "p", base.patch_len)?,
            step_ratio: list(&mut kv, "s_ratio", base.step as f64 / base.patch_len as f64)?,
            depth: list(&mut kv, "depth", base.depth)?,
            dim: list(&mut kv, "dim", base.dim)?,
            bidirectional: list(&mut kv, "bidirectional", Switch(base.bidirectional))?.into_iter().map(|s| s.0).collect(),
            multi_branch: list(&mut kv, "multi_branch", Switch(base.multi_branch))?.into_iter().map(|s| s.0).collect(),
            fusion: list(&mut kv, "fusion", base.fusion)?,
        };
        kv.finish()?;
        Ok(grid)
    }

    /// Every combination in axis order, each either a runnable config or the
    /// reason it was skipped.
    pub fn combinations(&self, base: &ModelConfig) -> Vec<std::result::Result<ModelConfig, String>> {
        let mut out = Vec::new();
        for &p in &self.patch_len {
            for &ratio in &self.step_ratio {
                for &depth in &self.depth {
                    for &dim in &self.dim {
                        for &bidirectional in &self.bidirectional {
                            for &multi_branch in &self.multi_branch {
                                for &fusion in &self.fusion {
                                    out.push(combination(base, p, ratio, depth, dim, bidirectional, multi_branch, fusion));
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

#[allow(clippy::too_many_arguments)]
fn combination(
    base: &ModelConfig,
    p: usize,
    ratio: f64,
    depth: usize,
    dim: usize,
    bidirectional: bool,
    multi_branch: bool,
    fusion: FusionMode,
) -> std::result::Result<ModelConfig, String> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(format!("p={p} s_ratio={ratio}: step must be positive and at most the patch length"));
    }
    // Fractional steps round down, so p/2 of 25 is 12.
    let s = (p as f64 * ratio).floor() as usize;
    if s < 1 {
        return Err(format!("p={p} s_ratio={ratio}: step rounds down to zero samples"));
    }
    let cfg = ModelConfig { patch_len: p, step: s, depth, dim, bidirectional, multi_branch, fusion, ..base.clone() };
    cfg.validate().map(|()| cfg).map_err(|e| format!("p={p} s={s} depth={depth} dim={dim}: {e}"))
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub config: ModelConfig,
    pub accuracy: f64,
    pub f1: f64,
    pub auc: f64,
    pub params: usize,
    pub train_seconds: f64,
}

impl AblationRow {
    pub fn fields(&self) -> [String; 12] {
        let c = &self.config;
        let on = |b: bool| if b { "on" } else { "off" }.to_string();
        [
            c.patch_len.to_string(),
            c.step.to_string(),
            c.depth.to_string(),
            c.dim.to_string(),
            on(c.bidirectional),
            on(c.multi_branch),
            c.fusion.to_string(),
            format!("{:.6}", self.accuracy),
            format!("{:.6}", self.f1),
            format!("{:.6}", self.auc),
            self.params.to_string(),
            format!("{:.3}", self.train_seconds),
        ]
    }
}

/// Trains and scores every feasible combination with the same training
/// config (and so the same seed). `on_run` sees each row with its trained
/// model.
pub fn run_ablation(
    grid: &AblationGrid,
    base: &ModelConfig,
    train_config: &TrainConfig,
    train_set: &[EcgRecord],
    val_set: &[EcgRecord],
    eval_set: &[EcgRecord],
    mut on_run: impl FnMut(&AblationRow, &S2m2Ecg),
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for combo in grid.combinations(base) {
        let cfg = match combo {
            Ok(cfg) => cfg,
            Err(reason) => {
                log::warn!("skipping infeasible combination: {reason}");
                continue;
            }
        };
        let start = Instant::now();
        let outcome = train(train_set, val_set, cfg.clone(), train_config.clone(), |_| {})?;
        let train_seconds = start.elapsed().as_secs_f64();
        let report = evaluate(&outcome.model, eval_set)?;
        let row = AblationRow {
            params: outcome.model.param_count(),
            config: cfg,
            accuracy: report.accuracy,
            f1: report.f1,
            auc: report.auc,
            train_seconds,
        };
        log::info!("{}", row.fields().join(","));
        on_run(&row, &outcome.model);
        rows.push(row);
    }
    Ok(rows)
}

pub fn write_csv(rows: &[AblationRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path)?;
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record(r.fields())?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
