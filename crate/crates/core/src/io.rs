//! On-disk formats: whitespace edge lists, CSV and raw binary feature matrices,
//! and hard-mask exports.
//!
//! Edge list: one `tail head` pair per line, `#` starts a comment. A comment
//! of the form `# nodes=<n> directed=<bool>` (written by [`write_edge_list`])
//! fixes the node count so trailing isolated nodes survive a round trip.
//!
//! Binary features: little-endian `u32` n, `u32` f, then n·f `f64` values in
//! row-major order.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::graph::{FeatureMatrix, Graph};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeList {
    pub edges: Vec<(usize, usize)>,
    /// Node count declared in a header comment, if any.
    pub declared_nodes: Option<usize>,
    pub declared_directed: Option<bool>,
}

impl EdgeList {
    /// Node count: declared if present, otherwise max index + 1.
    pub fn node_count(&self) -> usize {
        self.declared_nodes
            .unwrap_or_else(|| self.edges.iter().map(|&(a, b)| a.max(b) + 1).max().unwrap_or(0))
    }

    pub fn into_graph(self, n: Option<usize>, directed: Option<bool>) -> Result<Graph> {
        let n = n.unwrap_or_else(|| self.node_count());
        let directed = directed.or(self.declared_directed).unwrap_or(true);
        Graph::from_edges(n, directed, self.edges)
    }
}

pub fn parse_edge_list(reader: impl BufRead) -> Result<EdgeList> {
    let mut edges = Vec::new();
    let mut declared_nodes = None;
    let mut declared_directed = None;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let (content, comment) = match line.find('#') {
            Some(p) => (&line[..p], Some(&line[p + 1..])),
            None => (line.as_str(), None),
        };
        if let Some(c) = comment {
            for tok in c.split_whitespace() {
                if let Some(v) = tok.strip_prefix("nodes=") {
                    declared_nodes = v.parse().ok();
                } else if let Some(v) = tok.strip_prefix("directed=") {
                    declared_directed = v.parse().ok();
                }
            }
        }
        let mut toks = content.split_whitespace();
        let Some(first) = toks.next() else { continue };
        let parse = |s: &str| {
            s.parse::<usize>().map_err(|e| Error::Parse {
                line: lineno + 1,
                msg: format!("bad node index {s:?}: {e}"),
            })
        };
        let tail = parse(first)?;
        let head = match toks.next() {
            Some(h) => parse(h)?,
            None => {
                return Err(Error::Parse {
                    line: lineno + 1,
                    msg: "expected two node indices".into(),
                })
            }
        };
        if toks.next().is_some() {
            return Err(Error::Parse {
                line: lineno + 1,
                msg: "trailing tokens after edge".into(),
            });
        }
        edges.push((tail, head));
    }
    Ok(EdgeList {
        edges,
        declared_nodes,
        declared_directed,
    })
}

pub fn read_edge_list(path: impl AsRef<Path>) -> Result<EdgeList> {
    parse_edge_list(BufReader::new(File::open(path)?))
}

pub fn write_edge_list(g: &Graph, mut w: impl Write) -> Result<()> {
    writeln!(w, "# nodes={} directed={}", g.n(), g.is_directed())?;
    for &(t, h) in g.edges() {
        writeln!(w, "{t} {h}")?;
    }
    Ok(())
}

pub fn save_edge_list(g: &Graph, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_edge_list(g, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn parse_features_csv(reader: impl BufRead) -> Result<FeatureMatrix> {
    let mut values = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let before = values.len();
        for tok in line.split(',') {
            let v: f64 = tok.trim().parse().map_err(|e| Error::Parse {
                line: lineno + 1,
                msg: format!("bad feature value {tok:?}: {e}"),
            })?;
            values.push(v);
        }
        let w = values.len() - before;
        match width {
            None => width = Some(w),
            Some(expected) if expected != w => {
                return Err(Error::Parse {
                    line: lineno + 1,
                    msg: format!("row has {w} values, expected {expected}"),
                })
            }
            _ => {}
        }
        rows += 1;
    }
    let data = Array2::from_shape_vec((rows, width.unwrap_or(0)), values).map_err(|e| Error::Shape(e.to_string()))?;
    FeatureMatrix::new(data)
}

pub fn write_features_csv(x: &FeatureMatrix, mut w: impl Write) -> Result<()> {
    for row in x.data().rows() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}

pub fn parse_features_bin(mut reader: impl Read) -> Result<FeatureMatrix> {
    let mut header = [0u8; 8];
    reader.read_exact(&mut header)?;
    let n = u32::from_le_bytes(header[..4].try_into().unwrap()) as usize;
    let f = u32::from_le_bytes(header[4..].try_into().unwrap()) as usize;
    let mut bytes = vec![0u8; n * f * 8];
    reader.read_exact(&mut bytes)?;
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let data = Array2::from_shape_vec((n, f), values).map_err(|e| Error::Shape(e.to_string()))?;
    FeatureMatrix::new(data)
}

pub fn write_features_bin(x: &FeatureMatrix, mut w: impl Write) -> Result<()> {
    let n = u32::try_from(x.n()).map_err(|_| Error::Shape("too many rows for header".into()))?;
    let f = u32::try_from(x.f()).map_err(|_| Error::Shape("too many columns for header".into()))?;
    w.write_all(&n.to_le_bytes())?;
    w.write_all(&f.to_le_bytes())?;
    for v in x.data().iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Reads `.bin` as raw binary and anything else as CSV.
pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    let file = BufReader::new(File::open(path)?);
    if path.extension().is_some_and(|e| e == "bin") {
        parse_features_bin(file)
    } else {
        parse_features_csv(file)
    }
}

pub fn save_features(x: &FeatureMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = BufWriter::new(File::create(path)?);
    if path.extension().is_some_and(|e| e == "bin") {
        write_features_bin(x, &mut w)?;
    } else {
        write_features_csv(x, &mut w)?;
    }
    w.flush()?;
    Ok(())
}

/// Newline-separated 0/1 per node.
pub fn write_mask(mask: &[bool], mut w: impl Write) -> Result<()> {
    for &b in mask {
        writeln!(w, "{}", u8::from(b))?;
    }
    Ok(())
}

pub fn parse_mask(reader: impl BufRead) -> Result<Vec<bool>> {
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        match line.trim() {
            "" => continue,
            "0" => out.push(false),
            "1" => out.push(true),
            other => {
                return Err(Error::Parse {
                    line: lineno + 1,
                    msg: format!("mask entries must be 0 or 1, got {other:?}"),
                })
            }
        }
    }
    Ok(out)
}
