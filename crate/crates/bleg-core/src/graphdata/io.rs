//! On-disk formats: matrix/time-series CSV, the dataset manifest, and
//! SplitPlan files. All writers are canonical (shortest round-trip float
//! formatting, fixed field order), so equal data means equal bytes.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::correlation::{build_graph, CorrMatrix};
use super::graph::{BrainGraph, GraphMeta, TimeSeriesRecord};
use super::split::SplitPlan;
use super::synth::SynthDataset;
use super::{GraphDataError, Result};

fn parse_err(path: &Path, details: impl Into<String>) -> GraphDataError {
    GraphDataError::Parse { path: path.display().to_string(), details: details.into() }
}

/// N×N matrix as CSV, row per line.
pub fn write_matrix_csv(path: &Path, n: usize, values: &[f64]) -> Result<()> {
    let mut out = String::new();
    for i in 0..n {
        let row: Vec<String> = (0..n).map(|j| format!("{}", values[i * n + j])).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_matrix_csv(path: &Path) -> Result<(usize, Vec<f64>)> {
    let text = fs::read_to_string(path)?;
    let mut values = Vec::new();
    let mut n_cols = None;
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|f| f.trim().parse::<f64>()).collect();
        let row = row.map_err(|e| parse_err(path, format!("line {}: {e}", lineno + 1)))?;
        match n_cols {
            None => n_cols = Some(row.len()),
            Some(c) if c != row.len() => {
                return Err(parse_err(path, format!("ragged row at line {}", lineno + 1)));
            }
            _ => {}
        }
        values.extend(row);
    }
    let n = n_cols.ok_or_else(|| parse_err(path, "empty matrix"))?;
    if values.len() != n * n {
        return Err(parse_err(path, format!("expected square matrix, got {} values", values.len())));
    }
    Ok((n, values))
}

/// Time series CSV: header row of region names, then T rows × N columns.
pub fn write_timeseries_csv(path: &Path, ts: &TimeSeriesRecord, regions: &[String]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "{}", regions.join(","))?;
    for t in 0..ts.time_points {
        let row: Vec<String> = (0..ts.n_regions)
            .map(|r| format!("{}", ts.samples[t * ts.n_regions + r]))
            .collect();
        writeln!(f, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn read_timeseries_csv(path: &Path, subject: &str) -> Result<(TimeSeriesRecord, Vec<String>)> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| parse_err(path, "missing header"))?;
    let regions: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
    let n = regions.len();
    let mut samples = Vec::new();
    let mut t = 0;
    for (lineno, line) in lines.enumerate() {
        let row: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|f| f.trim().parse::<f64>()).collect();
        let row = row.map_err(|e| parse_err(path, format!("line {}: {e}", lineno + 2)))?;
        if row.len() != n {
            return Err(parse_err(path, format!("row {} has {} fields, header has {n}", lineno + 2, row.len())));
        }
        samples.extend(row);
        t += 1;
    }
    let ts = TimeSeriesRecord::new(subject.to_string(), t, n, samples)?;
    Ok((ts, regions))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub graph_file: String,
    pub timeseries_file: Option<String>,
    pub label: usize,
    pub subject: String,
}

/// Dataset manifest: everything needed to reload the dataset and replay the
/// text-generation oracle (planted edges are the oracle's hints).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub dataset: String,
    pub task: String,
    pub label_names: Vec<String>,
    pub regions: Vec<String>,
    pub keep_fraction: f64,
    pub seed: u64,
    pub planted_edges: Option<[Vec<(usize, usize)>; 2]>,
    pub entries: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Write the full dataset directory: per-subject correlation CSVs, the time
/// series, and the manifest.
pub fn save_dataset(dir: &Path, ds: &SynthDataset) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(ds.graphs.len());
    for (i, (graph, ts)) in ds.graphs.iter().zip(&ds.records).enumerate() {
        let graph_file = format!("corr_{i:04}.csv");
        let ts_file = format!("ts_{i:04}.csv");
        write_matrix_csv(&dir.join(&graph_file), graph.n, &graph.features)?;
        write_timeseries_csv(&dir.join(&ts_file), ts, &ds.regions)?;
        entries.push(ManifestEntry {
            graph_file,
            timeseries_file: Some(ts_file),
            label: graph.label,
            subject: graph.meta.subject.clone(),
        });
    }
    let manifest = DatasetManifest {
        dataset: ds.config.dataset_name.clone(),
        task: ds.config.task_name.clone(),
        label_names: ds.config.label_names.to_vec(),
        regions: ds.regions.clone(),
        keep_fraction: ds.config.keep_fraction,
        seed: ds.config.seed,
        planted_edges: Some(ds.config.planted_edges.clone()),
        entries,
    };
    let path = dir.join(MANIFEST_FILE);
    write_manifest(&path, &manifest)?;
    Ok(path)
}

pub fn write_manifest(path: &Path, manifest: &DatasetManifest) -> Result<()> {
    let json = serde_json::to_string_pretty(manifest)?;
    fs::write(path, json + "\n")?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Rebuild every graph referenced by a manifest.
pub fn load_dataset(manifest_path: &Path) -> Result<(DatasetManifest, Vec<BrainGraph>)> {
    let manifest = read_manifest(manifest_path)?;
    let dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let mut graphs = Vec::with_capacity(manifest.entries.len());
    for entry in &manifest.entries {
        let (n, values) = read_matrix_csv(&dir.join(&entry.graph_file))?;
        if n != manifest.regions.len() {
            return Err(parse_err(
                &dir.join(&entry.graph_file),
                format!("{n} nodes vs {} region names", manifest.regions.len()),
            ));
        }
        let corr = CorrMatrix::new(n, values)?;
        let meta = GraphMeta {
            dataset: manifest.dataset.clone(),
            task: manifest.task.clone(),
            label_names: manifest.label_names.clone(),
            subject: entry.subject.clone(),
        };
        graphs.push(build_graph(&corr, manifest.keep_fraction, &manifest.regions, entry.label, meta)?);
    }
    Ok((manifest, graphs))
}

pub fn write_split_plan(path: &Path, plan: &SplitPlan) -> Result<()> {
    let json = serde_json::to_string_pretty(plan)?;
    fs::write(path, json + "\n")?;
    Ok(())
}

pub fn read_split_plan(path: &Path) -> Result<SplitPlan> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphdata::split::{make_split, SplitKind};
    use crate::graphdata::synth::{generate_synthetic_dataset, SynthConfig};

    fn tiny_synth(seed: u64) -> SynthDataset {
        let cfg = SynthConfig {
            n_graphs: 6,
            n_nodes: 8,
            time_points: 40,
            planted_edges: [vec![(0, 1)], vec![(4, 5)]],
            signal_strength: 2.0,
            noise_level: 1.0,
            seed,
            dataset_name: "io-test".into(),
            task_name: "t".into(),
            label_names: ["A".into(), "B".into()],
            keep_fraction: 0.3,
        };
        generate_synthetic_dataset(&cfg).unwrap()
    }

    #[test]
    fn dataset_roundtrip_preserves_graphs() {
        let dir = tempfile::tempdir().unwrap();
        let ds = tiny_synth(5);
        let manifest_path = save_dataset(dir.path(), &ds).unwrap();
        let (manifest, graphs) = load_dataset(&manifest_path).unwrap();
        assert_eq!(manifest.entries.len(), 6);
        for (orig, loaded) in ds.graphs.iter().zip(&graphs) {
            assert_eq!(orig.adjacency, loaded.adjacency);
            assert_eq!(orig.label, loaded.label);
            assert_eq!(orig.regions, loaded.regions);
            for (a, b) in orig.features.iter().zip(&loaded.features) {
                assert_eq!(a, b, "float round-trip must be exact");
            }
        }
    }

    #[test]
    fn identical_configs_write_identical_bytes() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        save_dataset(d1.path(), &tiny_synth(9)).unwrap();
        save_dataset(d2.path(), &tiny_synth(9)).unwrap();
        let mut names: Vec<String> = std::fs::read_dir(d1.path())
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        names.sort();
        assert!(names.len() > 2);
        for name in names {
            let a = std::fs::read(d1.path().join(&name)).unwrap();
            let b = std::fs::read(d2.path().join(&name)).unwrap();
            assert_eq!(a, b, "file {name} differs between identical runs");
        }
    }

    #[test]
    fn split_plan_file_replays_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let labels: Vec<usize> = (0..40).map(|i| i % 2).collect();
        let plan = make_split(&labels, SplitKind::Kfold { k: 5 }, 17).unwrap();
        let path = dir.path().join("split.json");
        write_split_plan(&path, &plan).unwrap();
        let loaded = read_split_plan(&path).unwrap();
        assert_eq!(loaded.assignments, plan.assignments);
        assert_eq!(loaded.seed, 17);
    }

    #[test]
    fn timeseries_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = tiny_synth(2);
        let path = dir.path().join("ts.csv");
        write_timeseries_csv(&path, &ds.records[0], &ds.regions).unwrap();
        let (ts, regions) = read_timeseries_csv(&path, "sub-0000").unwrap();
        assert_eq!(regions, ds.regions);
        assert_eq!(ts.samples, ds.records[0].samples);
    }
}
