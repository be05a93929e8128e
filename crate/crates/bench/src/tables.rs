//! CSV output: raw per-seed rows, the metrics sweep and the MASS comparison,
//! each aggregated as mean and sample standard deviation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use specnet_core::metrics::MetricsRow;

use crate::experiment::{Manifest, ResultRow};

/// Mean and sample standard deviation (n − 1); the deviation of a single
/// value is 0.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Some((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Some((mean, var.sqrt()))
}

fn cell(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

/// (dataset, method, k)
type GroupKey = (String, String, Option<usize>);

fn group_key(r: &ResultRow) -> GroupKey {
    (r.dataset.clone(), r.method.clone(), r.k)
}

/// Per (dataset, method, k): mean and std of every metric column over rows
/// without errors.
fn aggregate(rows: &[ResultRow]) -> BTreeMap<GroupKey, Vec<Option<(f64, f64)>>> {
    let mut groups: BTreeMap<_, Vec<&MetricsRow>> = BTreeMap::new();
    for r in rows {
        if let Some(m) = &r.metrics {
            groups.entry(group_key(r)).or_default().push(m);
        }
    }
    groups
        .into_iter()
        .map(|(key, ms)| {
            let stats = (0..MetricsRow::HEADER.len())
                .map(|c| {
                    let vals: Vec<f64> = ms.iter().filter_map(|m| m.values()[c]).collect();
                    // a column is reported only when defined for every row
                    if vals.len() == ms.len() {
                        mean_std(&vals)
                    } else {
                        None
                    }
                })
                .collect();
            (key, stats)
        })
        .collect()
}

pub fn raw_csv(rows: &[ResultRow]) -> String {
    let mut out = format!(
        "dataset,method,k,seed,{},kept_nodes,wall_seconds,error\n",
        MetricsRow::HEADER.join(",")
    );
    for r in rows {
        let metrics = r.metrics.as_ref().map_or_else(
            || vec![String::new(); MetricsRow::HEADER.len()].join(","),
            MetricsRow::to_csv,
        );
        let error = r.error.as_deref().unwrap_or("").replace(['"', '\n'], " ");
        writeln!(
            out,
            "{},{},{},{},{},{},{},\"{}\"",
            r.dataset,
            r.method,
            r.k.map_or(String::new(), |k| k.to_string()),
            r.seed.map_or(String::new(), |s| s.to_string()),
            metrics,
            r.kept_nodes.map_or(String::new(), |k| k.to_string()),
            r.wall_seconds,
            error
        )
        .expect("writing to a String");
    }
    out
}

/// Learned sparsifier and original graph, all metric columns.
pub fn metrics_sweep_csv(rows: &[ResultRow]) -> String {
    let mut out = String::from("dataset,method,k,runs");
    for h in MetricsRow::HEADER {
        write!(out, ",{h}_mean,{h}_std").expect("writing to a String");
    }
    out.push('\n');
    let counts = run_counts(rows);
    for (key, stats) in aggregate(rows) {
        if key.1 != "original" && key.1 != "specnet" {
            continue;
        }
        write!(
            out,
            "{},{},{},{}",
            key.0,
            key.1,
            key.2.map_or(String::new(), |k| k.to_string()),
            counts[&key]
        )
        .expect("writing to a String");
        for s in stats {
            write!(out, ",{},{}", cell(s.map(|s| s.0)), cell(s.map(|s| s.1))).expect("writing to a String");
        }
        out.push('\n');
    }
    out
}

/// MASS of every method per (dataset, k).
pub fn mass_comparison_csv(rows: &[ResultRow]) -> String {
    let mass_col = MetricsRow::HEADER
        .iter()
        .position(|&h| h == "mass")
        .expect("mass column");
    let mut out = String::from("dataset,k,method,runs,mass_mean,mass_std\n");
    let counts = run_counts(rows);
    let mut by_k: Vec<_> = aggregate(rows).into_iter().filter(|(k, _)| k.2.is_some()).collect();
    by_k.sort_by(|a, b| (&a.0 .0, a.0 .2, &a.0 .1).cmp(&(&b.0 .0, b.0 .2, &b.0 .1)));
    for (key, stats) in by_k {
        let s = stats[mass_col];
        writeln!(
            out,
            "{},{},{},{},{},{}",
            key.0,
            key.2.expect("filtered"),
            key.1,
            counts[&key],
            cell(s.map(|s| s.0)),
            cell(s.map(|s| s.1))
        )
        .expect("writing to a String");
    }
    out
}

fn run_counts(rows: &[ResultRow]) -> BTreeMap<GroupKey, usize> {
    let mut counts = BTreeMap::new();
    for r in rows.iter().filter(|r| r.metrics.is_some()) {
        *counts.entry(group_key(r)).or_insert(0) += 1;
    }
    counts
}

/// Write raw.csv, metrics_sweep.csv, mass_comparison.csv, rows.json and
/// manifest.json into `out_dir`.
pub fn emit_tables(rows: &[ResultRow], manifest: &Manifest, out_dir: &Path) -> Result<Vec<PathBuf>, String> {
    if rows.is_empty() {
        return Err("no result rows to write".into());
    }
    fs::create_dir_all(out_dir).map_err(|e| format!("{}: {e}", out_dir.display()))?;
    let files = [
        ("raw.csv", raw_csv(rows)),
        ("metrics_sweep.csv", metrics_sweep_csv(rows)),
        ("mass_comparison.csv", mass_comparison_csv(rows)),
        (
            "rows.json",
            serde_json::to_string_pretty(rows).map_err(|e| e.to_string())?,
        ),
    ];
    let mut written = Vec::new();
    for (name, text) in files {
        let path = out_dir.join(name);
        fs::write(&path, text).map_err(|e| format!("{}: {e}", path.display()))?;
        written.push(path);
    }
    let path = out_dir.join("manifest.json");
    manifest.save(&path)?;
    written.push(path);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_statistics() {
        assert_eq!(mean_std(&[0.3]), Some((0.3, 0.0)));
        let (m, s) = mean_std(&[0.7, 0.8, 0.9]).unwrap();
        assert!((m - 0.8).abs() < 1e-12 && (s - 0.1).abs() < 1e-12);
        assert_eq!(mean_std(&[]), None);
    }

    #[test]
    fn sweep_header_follows_table_order() {
        let header = metrics_sweep_csv(&[]).lines().next().unwrap().to_string();
        let cols: Vec<&str> = header.split(',').collect();
        assert_eq!(
            &cols[4..],
            &[
                "n_edges_mean",
                "n_edges_std",
                "n_lcc_mean",
                "n_lcc_std",
                "k_bar_mean",
                "k_bar_std",
                "k_in_bar_mean",
                "k_in_bar_std",
                "k_out_bar_mean",
                "k_out_bar_std",
                "modularity_mean",
                "modularity_std",
                "mass_mean",
                "mass_std",
                "tau_c_mean",
                "tau_c_std"
            ]
        );
    }
}
