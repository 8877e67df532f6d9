use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::experiment::{ExperimentResult, SweepEntry};
use super::metrics::{AggregateRow, MetricSeries};
use crate::error::{Error, Result};

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(match path.extension() {
        Some(ext) => format!("{}.tmp", ext.to_string_lossy()),
        None => "tmp".into(),
    });
    let mut file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    file.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    file.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn csv_bytes(header: Vec<String>, rows: impl Iterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header).map_err(|e| Error::Serialization(e.to_string()))?;
    for row in rows {
        w.write_record(&row).map_err(|e| Error::Serialization(e.to_string()))?;
    }
    w.into_inner().map_err(|e| Error::Serialization(e.to_string()))
}

/// `t,avg_reward,avg_cost_1..avg_cost_d,regret,violation,epoch`.
pub fn series_csv(series: &MetricSeries, d: usize) -> Result<Vec<u8>> {
    let mut header = vec!["t".to_string(), "avg_reward".into()];
    header.extend((1..=d).map(|i| format!("avg_cost_{i}")));
    header.extend(["regret".into(), "violation".into(), "epoch".into()]);
    csv_bytes(
        header,
        series.rows.iter().map(|r| {
            let mut rec = vec![r.t.to_string(), r.avg_reward.to_string()];
            rec.extend(r.avg_costs.iter().map(f64::to_string));
            rec.extend([r.regret.to_string(), r.violation.to_string(), r.epoch.to_string()]);
            rec
        }),
    )
}

/// Per-column `_mean` and `_std` pairs in the per-seed column order, without `epoch`.
pub fn aggregate_csv(rows: &[AggregateRow], d: usize) -> Result<Vec<u8>> {
    let mut names = vec!["avg_reward".to_string()];
    names.extend((1..=d).map(|i| format!("avg_cost_{i}")));
    names.extend(["regret".into(), "violation".into()]);
    let mut header = vec!["t".to_string()];
    for n in &names {
        header.push(format!("{n}_mean"));
        header.push(format!("{n}_std"));
    }
    csv_bytes(
        header,
        rows.iter().map(|r| {
            let mut rec = vec![r.t.to_string()];
            for m in std::iter::once(&r.avg_reward).chain(&r.avg_costs).chain([&r.regret, &r.violation]) {
                rec.push(m.mean.to_string());
                rec.push(m.std.to_string());
            }
            rec
        }),
    )
}

pub fn seed_csv_name(seed: u64) -> String {
    format!("seed_{seed}.csv")
}

/// Writes `seed_<seed>.csv` per successful seed, `aggregate.csv` and `summary.json`.
pub fn emit_outputs(result: &ExperimentResult, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let d = result.summary.d;
    let mut written = Vec::new();
    for (seed, run) in result.successful() {
        let path = dir.join(seed_csv_name(seed));
        write_atomic(&path, &series_csv(&run.series, d)?)?;
        written.push(path);
    }
    let path = dir.join("aggregate.csv");
    write_atomic(&path, &aggregate_csv(&result.aggregate, d)?)?;
    written.push(path);
    let path = dir.join("summary.json");
    let json = serde_json::to_string_pretty(&result.summary).map_err(|e| Error::Serialization(e.to_string()))?;
    write_atomic(&path, json.as_bytes())?;
    written.push(path);
    Ok(written)
}

fn sweep_dir_name(index: usize, entry: &SweepEntry) -> String {
    format!("k{index}_{}", entry.choice.label())
}

/// Writes each sweep entry into its own subdirectory plus `sweep.csv`.
pub fn emit_sweep(entries: &[SweepEntry], dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for (i, entry) in entries.iter().enumerate() {
        written.extend(emit_outputs(&entry.result, &dir.join(sweep_dir_name(i, entry)))?);
    }
    let path = dir.join("sweep.csv");
    write_atomic(&path, &final_table(entries.iter().map(|e| (e.choice.label(), &e.result)))?)?;
    written.push(path);
    Ok(written)
}

/// Writes `doubling/`, `every_step/` and `compare.csv`.
pub fn emit_comparison(doubling: &ExperimentResult, every_step: &ExperimentResult, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = emit_outputs(doubling, &dir.join("doubling"))?;
    written.extend(emit_outputs(every_step, &dir.join("every_step"))?);
    let path = dir.join("compare.csv");
    write_atomic(&path, &final_table([("doubling".to_string(), doubling), ("every_step".to_string(), every_step)].into_iter())?)?;
    written.push(path);
    Ok(written)
}

/// One row per experiment with final means and standard deviations.
fn final_table<'a>(entries: impl Iterator<Item = (String, &'a ExperimentResult)>) -> Result<Vec<u8>> {
    let entries: Vec<_> = entries.collect();
    let d = entries.first().map_or(0, |(_, r)| r.summary.d);
    let mut header = vec!["label".to_string(), "k".into(), "seeds_ok".into()];
    let mut names = vec!["avg_reward".to_string()];
    names.extend((1..=d).map(|i| format!("avg_cost_{i}")));
    names.extend(["violation".into(), "epochs".into()]);
    for n in &names {
        header.push(format!("final_{n}_mean"));
        header.push(format!("final_{n}_std"));
    }
    csv_bytes(
        header,
        entries.into_iter().map(|(label, r)| {
            let s = &r.summary;
            let mut rec = vec![label, s.k.to_string(), (s.seeds.len() - s.seeds_failed).to_string()];
            for m in std::iter::once(&s.final_avg_reward)
                .chain(&s.final_avg_costs)
                .chain([&s.final_violation, &s.epoch_count])
            {
                rec.push(m.mean.to_string());
                rec.push(m.std.to_string());
            }
            rec
        }),
    )
}
