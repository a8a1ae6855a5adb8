//! Plain-text file formats.
//!
//! * edge file: one `src<TAB>dst` pair per line, 0-based; `#` lines are comments
//! * feature / dense matrix file: header `rows cols`, then one whitespace-separated row per line
//! * anchor and match files: one `src<TAB>dst` pair per line
//!
//! Floats are written with Rust's shortest round-trip formatting, so
//! load -> save -> load is bit-exact.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::graph::{Graph, GroundTruth};
use crate::{Error, Result};

pub fn load_graph(edge_path: impl AsRef<Path>, feature_path: impl AsRef<Path>) -> Result<Graph> {
    let features = read_matrix(feature_path)?;
    let n = features.nrows();
    let edges = read_pairs(edge_path.as_ref())?;
    for &(line, u, v) in &edges {
        for id in [u, v] {
            if id >= n {
                return Err(Error::EdgeRange {
                    path: edge_path.as_ref().to_path_buf(),
                    line,
                    id,
                    n,
                });
            }
        }
    }
    Graph::new(n, edges.into_iter().map(|(_, u, v)| (u, v)), features)
}

pub fn save_graph(
    g: &Graph,
    edge_path: impl AsRef<Path>,
    feature_path: impl AsRef<Path>,
) -> Result<()> {
    write_file(edge_path, &format_pairs(g.edges()))?;
    write_file(feature_path, &format_matrix(g.features()))
}

pub fn read_anchors(path: impl AsRef<Path>) -> Result<GroundTruth> {
    let pairs = read_pairs(path.as_ref())?;
    GroundTruth::new(pairs.into_iter().map(|(_, u, v)| (u, v)).collect())
}

pub fn write_anchors(gt: &GroundTruth, path: impl AsRef<Path>) -> Result<()> {
    write_file(path, &format_pairs(gt.pairs()))
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    let path = path.as_ref();
    let text = read_file(path)?;
    parse_matrix(&text, path)
}

pub fn write_matrix(m: &Array2<f64>, path: impl AsRef<Path>) -> Result<()> {
    write_file(path, &format_matrix(m))
}

/// Reads a pair file (edges, anchors, matches) without validating it.
pub fn read_pairs_file(path: impl AsRef<Path>) -> Result<Vec<(usize, usize)>> {
    Ok(read_pairs(path.as_ref())?
        .into_iter()
        .map(|(_, u, v)| (u, v))
        .collect())
}

pub fn format_pairs(pairs: &[(usize, usize)]) -> String {
    let mut out = String::with_capacity(pairs.len() * 8);
    for (u, v) in pairs {
        writeln!(out, "{u}\t{v}").unwrap();
    }
    out
}

pub fn format_matrix(m: &Array2<f64>) -> String {
    let mut out = String::new();
    writeln!(out, "{} {}", m.nrows(), m.ncols()).unwrap();
    for row in m.rows() {
        let mut first = true;
        for v in row {
            if !first {
                out.push(' ');
            }
            first = false;
            write!(out, "{v}").unwrap();
        }
        out.push('\n');
    }
    out
}

fn read_pairs(path: &Path) -> Result<Vec<(usize, usize, usize)>> {
    let text = read_file(path)?;
    let mut pairs = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let lineno = idx + 1;
        let mut fields = line.split_whitespace();
        let (Some(a), Some(b), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(Error::parse(path, lineno, "expected two node ids"));
        };
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::parse(path, lineno, format!("invalid node id {s:?}")))
        };
        pairs.push((lineno, parse(a)?, parse(b)?));
    }
    Ok(pairs)
}

fn parse_matrix(text: &str, path: &Path) -> Result<Array2<f64>> {
    let mut lines = text.lines().enumerate();
    let (rows, cols) = loop {
        let Some((idx, raw)) = lines.next() else {
            return Err(Error::parse(path, 1, "missing `rows cols` header"));
        };
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let dims: Vec<_> = line.split_whitespace().collect();
        let parsed: Option<Vec<usize>> = dims.iter().map(|s| s.parse().ok()).collect();
        match parsed.as_deref() {
            Some([r, c]) => break (*r, *c),
            _ => return Err(Error::parse(path, idx + 1, "expected header `rows cols`")),
        }
    };

    let mut data = Vec::with_capacity(rows * cols);
    let mut seen = 0;
    for (idx, raw) in lines {
        let line = raw.trim();
        if seen == rows {
            if line.is_empty() {
                continue;
            }
            return Err(Error::Shape(format!(
                "{}: more than the declared {rows} rows (line {})",
                path.display(),
                idx + 1
            )));
        }
        if line.is_empty() && cols > 0 {
            continue;
        }
        let before = data.len();
        for tok in line.split_whitespace() {
            let v: f64 = tok
                .parse()
                .map_err(|_| Error::parse(path, idx + 1, format!("invalid number {tok:?}")))?;
            data.push(v);
        }
        if data.len() - before != cols {
            return Err(Error::parse(
                path,
                idx + 1,
                format!("expected {cols} values, found {}", data.len() - before),
            ));
        }
        seen += 1;
    }
    if seen != rows {
        return Err(Error::Shape(format!(
            "{}: header declares {rows} rows but {seen} were found",
            path.display()
        )));
    }
    Array2::from_shape_vec((rows, cols), data).map_err(|e| Error::Shape(e.to_string()))
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_file(path: impl AsRef<Path>, contents: &str) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}
