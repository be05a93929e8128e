//! Dataset loading: the edge-list/feature pair, the LINQS citation format,
//! and a small synthetic block model.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use specnet_core::io::{read_edge_list, read_features};
use specnet_core::{FeatureMatrix, Graph};

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("{path}: line {line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("graph has {graph} nodes but the feature matrix has {features} rows")]
    NodeMismatch { graph: usize, features: usize },
    #[error("{0}: {1}")]
    Io(PathBuf, std::io::Error),
    #[error(transparent)]
    Core(#[from] specnet_core::Error),
}

pub type Result<T> = std::result::Result<T, DatasetError>;

/// Where a dataset comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DatasetSource {
    /// Edge list plus feature file (`.bin` or CSV).
    Files { edges: PathBuf, features: PathBuf },
    /// Two-block stochastic block model.
    Sbm(SbmConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbmConfig {
    pub block_size: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub features: usize,
    pub seed: u64,
}

impl Default for SbmConfig {
    fn default() -> Self {
        Self {
            block_size: 50,
            p_in: 0.3,
            p_out: 0.02,
            features: 8,
            seed: 0,
        }
    }
}

/// Undirected two-block SBM. Features are standard normal with the block's
/// sign added to the first half of the columns.
pub fn sbm(config: &SbmConfig) -> (Graph, FeatureMatrix) {
    let n = 2 * config.block_size;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let block = |i: usize| i / config.block_size;
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let p = if block(i) == block(j) {
                config.p_in
            } else {
                config.p_out
            };
            if rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    let g = Graph::from_edges(n, false, edges).expect("indices below n");
    let half = config.features / 2;
    let x = Array2::from_shape_fn((n, config.features), |(i, j)| {
        let noise: f64 = rng.sample(StandardNormal);
        let shift = if j < half {
            if block(i) == 0 {
                1.0
            } else {
                -1.0
            }
        } else {
            0.0
        };
        noise + shift
    });
    (g, FeatureMatrix::new(x).expect("finite draws"))
}

/// Load a dataset. `directed` overrides the edge-list header.
pub fn load_dataset(source: &DatasetSource, directed: Option<bool>) -> Result<(Graph, FeatureMatrix)> {
    match source {
        DatasetSource::Files { edges, features } => {
            let x = read_features(features).map_err(|e| with_path(e, features))?;
            let list = read_edge_list(edges).map_err(|e| with_path(e, edges))?;
            if let Some(declared) = list.declared_nodes {
                if declared != x.n() {
                    return Err(DatasetError::NodeMismatch {
                        graph: declared,
                        features: x.n(),
                    });
                }
            }
            if list.node_count() > x.n() {
                return Err(DatasetError::NodeMismatch {
                    graph: list.node_count(),
                    features: x.n(),
                });
            }
            let g = list.into_graph(Some(x.n()), directed)?;
            Ok((g, x))
        }
        DatasetSource::Sbm(config) => Ok(sbm(config)),
    }
}

fn with_path(e: specnet_core::Error, path: &Path) -> DatasetError {
    match e {
        specnet_core::Error::Parse { line, msg } => DatasetError::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        },
        specnet_core::Error::Io(io) => DatasetError::Io(path.to_path_buf(), io),
        other => other.into(),
    }
}

/// A LINQS dataset converted to dense indices.
#[derive(Debug, Clone)]
pub struct LinqsDataset {
    pub graph: Graph,
    pub features: FeatureMatrix,
    /// Original paper id per node index.
    pub ids: Vec<String>,
    pub labels: Vec<String>,
    /// Citation lines whose endpoints have no content row.
    pub dangling: usize,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| DatasetError::Io(path.to_path_buf(), e))
}

/// Read `<prefix>.content` (id, features…, label) and `<prefix>.cites`
/// (`cited citing` per line). Each citation becomes the edge citing → cited.
/// Citations naming unknown ids are skipped and counted.
pub fn read_linqs(prefix: &Path, directed: bool) -> Result<LinqsDataset> {
    let content_path = prefix.with_extension("content");
    let cites_path = prefix.with_extension("cites");

    let mut ids = Vec::new();
    let mut labels = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut index = HashMap::new();
    for (lineno, line) in open(&content_path)?.lines().enumerate() {
        let line = line.map_err(|e| DatasetError::Io(content_path.clone(), e))?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        let parse_err = |msg: String| DatasetError::Parse {
            path: content_path.clone(),
            line: lineno + 1,
            msg,
        };
        if toks.len() < 3 {
            return Err(parse_err("expected id, features and label".into()));
        }
        let feats = toks[1..toks.len() - 1]
            .iter()
            .map(|t| t.parse::<f64>().map_err(|e| parse_err(format!("feature {t:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != feats.len() {
                return Err(parse_err(format!("{} features, expected {}", feats.len(), first.len())));
            }
        }
        if index.insert(toks[0].to_string(), ids.len()).is_some() {
            return Err(parse_err(format!("duplicate id {}", toks[0])));
        }
        ids.push(toks[0].to_string());
        labels.push(toks[toks.len() - 1].to_string());
        rows.push(feats);
    }

    let mut edges = Vec::new();
    let mut dangling = 0;
    for (lineno, line) in open(&cites_path)?.lines().enumerate() {
        let line = line.map_err(|e| DatasetError::Io(cites_path.clone(), e))?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            [] => continue,
            [cited, citing] => match (index.get(*citing), index.get(*cited)) {
                (Some(&a), Some(&b)) => edges.push((a, b)),
                _ => dangling += 1,
            },
            _ => {
                return Err(DatasetError::Parse {
                    path: cites_path.clone(),
                    line: lineno + 1,
                    msg: format!("expected two ids, got {}", toks.len()),
                })
            }
        }
    }

    let n = ids.len();
    let f = rows.first().map_or(0, Vec::len);
    let x = Array2::from_shape_vec((n, f), rows.into_iter().flatten().collect()).expect("rows have equal length");
    Ok(LinqsDataset {
        graph: Graph::from_edges(n, directed, edges)?,
        features: FeatureMatrix::new(x)?,
        ids,
        labels,
        dangling,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn linqs_roundtrip_small() {
        let dir = tempfile::tempdir().unwrap();
        let prefix = dir.path().join("toy");
        let mut c = File::create(prefix.with_extension("content")).unwrap();
        writeln!(c, "p1 1 0 a\np2 0 1 b\np3 1 1 a").unwrap();
        let mut e = File::create(prefix.with_extension("cites")).unwrap();
        writeln!(e, "p1 p2\np1 p3\np3 p3\np9 p1\np1 p2").unwrap();
        let d = read_linqs(&prefix, true).unwrap();
        assert_eq!(d.graph.edges(), &[(1, 0), (2, 0)]);
        assert_eq!(d.dangling, 1);
        assert_eq!(d.features.data()[[2, 1]], 1.0);
        assert_eq!(d.labels, vec!["a", "b", "a"]);
    }

    #[test]
    fn malformed_content_names_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let prefix = dir.path().join("bad");
        let mut c = File::create(prefix.with_extension("content")).unwrap();
        writeln!(c, "p1 1 0 a\np2 0 x b").unwrap();
        File::create(prefix.with_extension("cites")).unwrap();
        match read_linqs(&prefix, true) {
            Err(DatasetError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn sbm_shape_and_determinism() {
        let cfg = SbmConfig::default();
        let (g, x) = sbm(&cfg);
        assert_eq!((g.n(), x.f()), (100, 8));
        assert_eq!(sbm(&cfg).0, g);
        let inside = g.edges().iter().filter(|&&(a, b)| a / 50 == b / 50).count();
        assert!(inside > 5 * (g.m() - inside));
    }
}
