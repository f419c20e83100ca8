//! Areal adjacency structure: row-normalized neighbor weights and the
//! intrinsic-CAR precision structure used by the BYM spatial effects.
//!
//! Two regions are neighbors when the input pair list says so (typically:
//! they share a geographical boundary). The weight matrix follows the
//! row-normalized convention `w_ij = 1/N_i` for neighbors, 0 otherwise, so
//! the structured effect has full conditionals
//!
//! ```text
//! u_i | u_{j != i} ~ Normal( sum_j w_ij u_j , sigma_u^2 / N_i )
//! ```
//!
//! whose joint (improper) precision is `Q = diag(N) - A` with `A` the
//! binary adjacency matrix.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Symmetric neighbor structure over an ordered list of regions.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyGraph {
    region_ids: Vec<String>,
    /// Per-region sorted neighbor indices; symmetric, no self-loops.
    neighbors: Vec<Vec<usize>>,
}

/// Joint precision structure of the intrinsic CAR implied by the graph.
#[derive(Debug, Clone)]
pub struct CarStructure {
    /// `diag(N) - A`; symmetric PSD, rows sum to zero.
    pub q: DMatrix<f64>,
    /// Connected-component label per region (isolated regions are their
    /// own component).
    pub component_labels: Vec<usize>,
    /// Number of connected components; equals the rank deficiency of `q`.
    pub n_components: usize,
}

impl AdjacencyGraph {
    /// Builds a graph from undirected index pairs over `region_ids`.
    pub fn from_index_pairs(region_ids: Vec<String>, pairs: &[(usize, usize)]) -> Result<Self> {
        let n = region_ids.len();
        let mut neighbors = vec![Vec::new(); n];
        for &(a, b) in pairs {
            if a >= n || b >= n {
                return Err(Error::Argument(format!(
                    "neighbor index ({a}, {b}) out of range for {n} regions"
                )));
            }
            if a == b {
                return Err(Error::Argument(format!(
                    "self-loop on region '{}'",
                    region_ids[a]
                )));
            }
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        for list in &mut neighbors {
            list.sort_unstable();
            list.dedup();
        }
        Ok(Self {
            region_ids,
            neighbors,
        })
    }

    /// Parses a pair-list file: one undirected pair of region keys per
    /// line, whitespace-separated, `#` comments allowed. Regions absent
    /// from the file keep empty neighbor sets.
    ///
    /// With `strict` set, a line mentioning an unknown key, a self-loop,
    /// or a malformed pair is an error; otherwise self-loops are dropped
    /// with a warning.
    pub fn load(path: &Path, region_ids: &[String], strict: bool) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| {
            std::io::Error::new(e.kind(), format!("adjacency file '{}': {e}", path.display()))
        })?;
        Self::parse(BufReader::new(file), region_ids, strict)
    }

    pub fn parse<R: BufRead>(reader: R, region_ids: &[String], strict: bool) -> Result<Self> {
        let index: HashMap<&str, usize> = region_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect();
        let mut pairs = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let content = line.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let mut fields = content.split_whitespace();
            let (a, b) = match (fields.next(), fields.next(), fields.next()) {
                (Some(a), Some(b), None) => (a, b),
                _ => {
                    return Err(Error::Parse {
                        row: lineno + 1,
                        message: format!("expected two region keys, got '{content}'"),
                    })
                }
            };
            let ia = *index.get(a).ok_or_else(|| Error::Reference { key: a.into() })?;
            let ib = *index.get(b).ok_or_else(|| Error::Reference { key: b.into() })?;
            if ia == ib {
                if strict {
                    return Err(Error::Argument(format!(
                        "self-loop on region '{a}' at line {}",
                        lineno + 1
                    )));
                }
                log::warn!("dropping self-loop on region '{a}' at line {}", lineno + 1);
                continue;
            }
            pairs.push((ia, ib));
        }
        Self::from_index_pairs(region_ids.to_vec(), &pairs)
    }

    /// Rectangular grid over `rows * cols` regions with synthetic keys
    /// `R01, R02, ...`; rook contiguity. Used by the synthetic generator.
    pub fn grid(rows: usize, cols: usize) -> Self {
        let n = rows * cols;
        let region_ids: Vec<String> = (1..=n).map(|i| format!("R{i:02}")).collect();
        let mut pairs = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                let idx = r * cols + c;
                if c + 1 < cols {
                    pairs.push((idx, idx + 1));
                }
                if r + 1 < rows {
                    pairs.push((idx, idx + cols));
                }
            }
        }
        Self::from_index_pairs(region_ids, &pairs).expect("grid pairs are valid")
    }

    /// Path graph over `n` regions (each adjacent to its successor).
    pub fn path(n: usize) -> Self {
        let region_ids: Vec<String> = (1..=n).map(|i| format!("R{i:02}")).collect();
        let pairs: Vec<(usize, usize)> = (1..n).map(|i| (i - 1, i)).collect();
        Self::from_index_pairs(region_ids, &pairs).expect("path pairs are valid")
    }

    pub fn n_regions(&self) -> usize {
        self.region_ids.len()
    }

    pub fn region_ids(&self) -> &[String] {
        &self.region_ids
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    /// Neighbor count `N_i`.
    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.n_regions()).map(|i| self.degree(i)).collect()
    }

    /// Row-normalized weight `w_ij = 1/N_i` for neighbors, else 0.
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        if self.neighbors[i].binary_search(&j).is_ok() {
            1.0 / self.degree(i) as f64
        } else {
            0.0
        }
    }

    /// Dense row-normalized weight matrix, mostly for export/debugging.
    pub fn dense_weights(&self) -> DMatrix<f64> {
        let n = self.n_regions();
        DMatrix::from_fn(n, n, |i, j| self.weight(i, j))
    }

    /// Undirected edge list with `i < j`, in deterministic order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut edges = Vec::new();
        for i in 0..self.n_regions() {
            for &j in &self.neighbors[i] {
                if i < j {
                    edges.push((i, j));
                }
            }
        }
        edges
    }

    pub fn write_weights_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_matrix_csv(writer, &self.dense_weights(), &self.region_ids)
    }

    /// Writes the pair-list format `load` reads back.
    pub fn write_pairs<W: Write>(&self, mut writer: W) -> Result<()> {
        for (i, j) in self.edges() {
            writeln!(writer, "{} {}", self.region_ids[i], self.region_ids[j])?;
        }
        Ok(())
    }
}

/// `Q = diag(N) - A` plus the connected-component partition.
pub fn car_structure(graph: &AdjacencyGraph) -> CarStructure {
    let n = graph.n_regions();
    let mut q = DMatrix::zeros(n, n);
    for i in 0..n {
        q[(i, i)] = graph.degree(i) as f64;
        for &j in graph.neighbors(i) {
            q[(i, j)] = -1.0;
        }
    }
    let (component_labels, n_components) = connected_components(graph);
    CarStructure {
        q,
        component_labels,
        n_components,
    }
}

impl CarStructure {
    /// Rank deficiency of `q`: one flat direction per connected component.
    pub fn rank_deficiency(&self) -> usize {
        self.n_components
    }

    /// Region indices grouped by component, in label order.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.n_components];
        for (region, &label) in self.component_labels.iter().enumerate() {
            groups[label].push(region);
        }
        groups
    }

    pub fn write_q_csv<W: Write>(&self, writer: W, region_ids: &[String]) -> Result<()> {
        write_matrix_csv(writer, &self.q, region_ids)
    }
}

fn connected_components(graph: &AdjacencyGraph) -> (Vec<usize>, usize) {
    let n = graph.n_regions();
    let mut labels = vec![usize::MAX; n];
    let mut next = 0;
    for start in 0..n {
        if labels[start] != usize::MAX {
            continue;
        }
        let mut stack = vec![start];
        labels[start] = next;
        while let Some(i) = stack.pop() {
            for &j in graph.neighbors(i) {
                if labels[j] == usize::MAX {
                    labels[j] = next;
                    stack.push(j);
                }
            }
        }
        next += 1;
    }
    (labels, next)
}

fn write_matrix_csv<W: Write>(writer: W, m: &DMatrix<f64>, region_ids: &[String]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["region".to_string()];
    header.extend(region_ids.iter().cloned());
    w.write_record(&header)?;
    for i in 0..m.nrows() {
        let mut row = vec![region_ids[i].clone()];
        for j in 0..m.ncols() {
            row.push(format!("{}", m[(i, j)]));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
