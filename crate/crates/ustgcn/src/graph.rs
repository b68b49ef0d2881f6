//! Physical sensor graph and the block lower-triangular spatio-temporal
//! operator built from it.
//!
//! Node-timestamp order is timestamp-major: row `t·N + i` is node `i` at
//! timestamp `t+1`, so block (t, t′) of the NT×NT operator sits at rows
//! `t·N..` and columns `t′·N..`. Diagonal blocks carry the physical adjacency
//! A, strictly-lower blocks carry A+I (or just I in the self-only variant),
//! and everything above the diagonal stays empty, which is what makes the
//! normalized operator causal.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{CsrBuilder, SparseMatrix};

/// Weighted undirected sensor graph with zero diagonal.
#[derive(Debug, Clone)]
pub struct PhysicalGraph {
    pub n_nodes: usize,
    pub adjacency: SparseMatrix,
    pub sensor_ids: Vec<String>,
}

/// What the strictly-lower blocks of the spatio-temporal adjacency hold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum AdjacencyVariant {
    /// A+I below the diagonal: aggregate neighbors and the node itself from
    /// earlier timestamps.
    NeighborsAndSelf,
    /// I below the diagonal: only the node's own past.
    SelfOnly,
}

impl fmt::Display for AdjacencyVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AdjacencyVariant::NeighborsAndSelf => write!(f, "self-and-neighbors"),
            AdjacencyVariant::SelfOnly => write!(f, "self-only"),
        }
    }
}

impl std::str::FromStr for AdjacencyVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "self-and-neighbors" | "neighbors-and-self" | "a+i" => {
                Ok(AdjacencyVariant::NeighborsAndSelf)
            }
            "self-only" | "i" => Ok(AdjacencyVariant::SelfOnly),
            other => Err(Error::InvalidConfig {
                key: "variant".into(),
                msg: format!("unknown adjacency variant `{other}`"),
            }),
        }
    }
}

/// The NT×NT spatio-temporal operator plus its block metadata.
#[derive(Debug, Clone)]
pub struct STAdjacency {
    pub n_nodes: usize,
    pub t_window: usize,
    /// A_ST: diagonal blocks A, strictly-lower blocks Ã (or I), upper empty.
    pub raw: SparseMatrix,
    /// D^(-1/2) · A_ST · D^(-1/2) with zero-degree rows/columns mapping to 0.
    pub normalized: SparseMatrix,
    /// Row sums of `raw`.
    pub degree: Vec<f64>,
}

fn validate_edge_inputs(
    entries: &[(usize, usize, f64)],
    n_nodes: usize,
) -> Result<BTreeMap<(usize, usize), f64>> {
    let mut by_pair: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for &(i, j, d) in entries {
        if i >= n_nodes {
            return Err(Error::NodeIndexOutOfRange { index: i, n_nodes });
        }
        if j >= n_nodes {
            return Err(Error::NodeIndexOutOfRange { index: j, n_nodes });
        }
        if i == j {
            return Err(Error::InvalidArgument {
                op: "build_adjacency",
                msg: format!("self-distance for node {i}; the diagonal must stay zero"),
            });
        }
        if !d.is_finite() || d < 0.0 {
            return Err(Error::InvalidArgument {
                op: "build_adjacency",
                msg: format!("distance {d} for edge ({i},{j}) must be finite and nonnegative"),
            });
        }
        let key = (i.min(j), i.max(j));
        match by_pair.get(&key) {
            Some(&prev) if prev != d => {
                return Err(Error::ContradictoryEdge {
                    i: key.0,
                    j: key.1,
                    first: prev,
                    second: d,
                });
            }
            _ => {
                by_pair.insert(key, d);
            }
        }
    }
    Ok(by_pair)
}

fn graph_from_weights(
    n_nodes: usize,
    weights: BTreeMap<(usize, usize), f64>,
    sensor_ids: Option<Vec<String>>,
) -> Result<PhysicalGraph> {
    let mut triplets = Vec::with_capacity(weights.len() * 2);
    for (&(i, j), &w) in &weights {
        if w > 0.0 {
            triplets.push((i, j, w));
            triplets.push((j, i, w));
        }
    }
    let adjacency = SparseMatrix::from_triplets(n_nodes, n_nodes, &triplets)?;
    let sensor_ids =
        sensor_ids.unwrap_or_else(|| (0..n_nodes).map(|i| i.to_string()).collect());
    Ok(PhysicalGraph {
        n_nodes,
        adjacency,
        sensor_ids,
    })
}

/// Thresholded Gaussian kernel: A[i][j] = exp(−d²/δ) when that value reaches
/// ε and i≠j, else no edge. Edges are mirrored so A stays symmetric.
pub fn build_adjacency_gaussian_threshold(
    distances: &[(usize, usize, f64)],
    n_nodes: usize,
    delta: f64,
    epsilon: f64,
) -> Result<PhysicalGraph> {
    if delta <= 0.0 {
        return Err(Error::InvalidArgument {
            op: "build_adjacency",
            msg: format!("delta must be positive, got {delta}"),
        });
    }
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::InvalidArgument {
            op: "build_adjacency",
            msg: format!("epsilon must lie in [0,1], got {epsilon}"),
        });
    }
    let pairs = validate_edge_inputs(distances, n_nodes)?;
    let weights = pairs
        .into_iter()
        .filter_map(|((i, j), d)| {
            let w = (-d * d / delta).exp();
            (w >= epsilon).then_some(((i, j), w))
        })
        .collect();
    graph_from_weights(n_nodes, weights, None)
}

/// Gaussian kernel over declared neighbor pairs only (no threshold).
pub fn build_adjacency_gaussian_neighbor(
    neighbor_pairs: &[(usize, usize, f64)],
    n_nodes: usize,
    delta: f64,
) -> Result<PhysicalGraph> {
    if delta <= 0.0 {
        return Err(Error::InvalidArgument {
            op: "build_adjacency",
            msg: format!("delta must be positive, got {delta}"),
        });
    }
    let pairs = validate_edge_inputs(neighbor_pairs, n_nodes)?;
    let weights = pairs
        .into_iter()
        .map(|((i, j), d)| ((i, j), (-d * d / delta).exp()))
        .collect();
    graph_from_weights(n_nodes, weights, None)
}

/// Assemble A_ST for a T-step window and symmetrically normalize it.
pub fn build_st_adjacency(
    graph: &PhysicalGraph,
    t_window: usize,
    variant: AdjacencyVariant,
) -> Result<STAdjacency> {
    if t_window == 0 {
        return Err(Error::InvalidArgument {
            op: "build_st_adjacency",
            msg: "data window must contain at least one timestamp".into(),
        });
    }
    let n = graph.n_nodes;
    let nt = n * t_window;
    let mut builder = CsrBuilder::new(nt);
    let mut row_entries: Vec<(usize, f64)> = Vec::new();
    for t in 0..t_window {
        for i in 0..n {
            row_entries.clear();
            let (cols, ws) = graph.adjacency.row(i);
            for t_prev in 0..t {
                let off = t_prev * n;
                match variant {
                    AdjacencyVariant::NeighborsAndSelf => {
                        // merge A row i with the identity entry at column i;
                        // A's zero diagonal guarantees no collision
                        let mut self_written = false;
                        for (&c, &w) in cols.iter().zip(ws) {
                            if !self_written && c > i {
                                row_entries.push((off + i, 1.0));
                                self_written = true;
                            }
                            row_entries.push((off + c, w));
                        }
                        if !self_written {
                            row_entries.push((off + i, 1.0));
                        }
                    }
                    AdjacencyVariant::SelfOnly => row_entries.push((t_prev * n + i, 1.0)),
                }
            }
            let off = t * n;
            for (&c, &w) in cols.iter().zip(ws) {
                row_entries.push((off + c, w));
            }
            builder.push_row(row_entries.iter().copied())?;
        }
    }
    let raw = builder.finish();
    let degree = raw.row_sums();
    let normalized = symmetric_normalize(&raw, &degree)?;
    Ok(STAdjacency {
        n_nodes: n,
        t_window,
        raw,
        normalized,
        degree,
    })
}

/// Exact stored-entry count of A_ST for the given window and variant.
///
/// For the neighbors-and-self variant this equals
/// T·|E| + T(T−1)/2 · (|E|+N) with |E| the directed stored entries of A.
pub fn st_nonzero_count(
    graph: &PhysicalGraph,
    t_window: usize,
    variant: AdjacencyVariant,
) -> Result<usize> {
    Ok(build_st_adjacency(graph, t_window, variant)?.raw.nnz())
}

/// out[i][j] = raw[i][j] / √(degree[i]·degree[j]); zero degrees map the whole
/// row/column to 0 (the stored entry is dropped).
pub fn symmetric_normalize(raw: &SparseMatrix, degree: &[f64]) -> Result<SparseMatrix> {
    if degree.len() != raw.n_rows() || raw.n_rows() != raw.n_cols() {
        return Err(Error::InvalidArgument {
            op: "symmetric_normalize",
            msg: format!(
                "degree length {} does not match {}x{} matrix",
                degree.len(),
                raw.n_rows(),
                raw.n_cols()
            ),
        });
    }
    if let Some(d) = degree.iter().find(|d| **d < 0.0) {
        return Err(Error::InvalidArgument {
            op: "symmetric_normalize",
            msg: format!("negative degree {d}"),
        });
    }
    let inv_sqrt: Vec<f64> = degree
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
        .collect();
    let mut builder = CsrBuilder::new(raw.n_cols());
    for r in 0..raw.n_rows() {
        let (cols, ws) = raw.row(r);
        builder.push_row(
            cols.iter()
                .zip(ws)
                .map(|(&c, &w)| (c, w * inv_sqrt[r] * inv_sqrt[c])),
        )?;
    }
    Ok(builder.finish())
}

/// Parse a `from_id,to_id,distance` edge list. A header line is detected by a
/// non-numeric first field. IDs map to indices by first appearance unless an
/// explicit sensor-ID list is given.
pub fn load_distance_csv(
    path: &Path,
    sensor_ids: Option<&[String]>,
) -> Result<(Vec<(usize, usize, f64)>, Vec<String>)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let reader = BufReader::new(file);
    let mut ids: Vec<String> = sensor_ids.map(|s| s.to_vec()).unwrap_or_default();
    let mut index: BTreeMap<String, usize> = ids
        .iter()
        .enumerate()
        .map(|(k, v)| (v.clone(), k))
        .collect();
    let fixed_ids = sensor_ids.is_some();
    let mut edges = Vec::new();
    let mut resolve = |id: &str, line: usize| -> Result<usize> {
        if let Some(&k) = index.get(id) {
            return Ok(k);
        }
        if fixed_ids {
            return Err(Error::ParseError {
                path: path.display().to_string(),
                line,
                msg: format!("unknown sensor id `{id}`"),
            });
        }
        ids.push(id.to_string());
        index.insert(id.to_string(), ids.len() - 1);
        Ok(ids.len() - 1)
    };

    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        if lineno == 0 && fields[0].parse::<f64>().is_err() && !line_is_edge(&fields) {
            continue; // header
        }
        if fields.len() != 3 {
            return Err(Error::ParseError {
                path: path.display().to_string(),
                line: lineno + 1,
                msg: format!("expected 3 fields, got {}", fields.len()),
            });
        }
        let d: f64 = fields[2].parse().map_err(|_| Error::ParseError {
            path: path.display().to_string(),
            line: lineno + 1,
            msg: format!("bad distance `{}`", fields[2]),
        })?;
        let i = resolve(fields[0], lineno + 1)?;
        let j = resolve(fields[1], lineno + 1)?;
        edges.push((i, j, d));
    }
    Ok((edges, ids))
}

// A first line like "s1,s2,0.4" is an edge between string-named sensors, not
// a header; only treat it as a header when the last field is non-numeric too.
fn line_is_edge(fields: &[&str]) -> bool {
    fields.len() == 3 && fields[2].parse::<f64>().is_ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path_graph_2() -> PhysicalGraph {
        build_adjacency_gaussian_threshold(&[(0, 1, 0.0)], 2, 0.1, 0.5).unwrap()
    }

    #[test]
    fn kernel_zero_distance_gives_weight_one() {
        let g = path_graph_2();
        assert_eq!(g.adjacency.row(0), (&[1usize][..], &[1.0][..]));
        assert_eq!(g.adjacency.row(1), (&[0usize][..], &[1.0][..]));
    }

    #[test]
    fn kernel_formula_midrange() {
        let g = build_adjacency_gaussian_threshold(&[(0, 1, 0.2)], 2, 0.1, 0.5).unwrap();
        let w = g.adjacency.row(0).1[0];
        assert!((w - (-0.4f64).exp()).abs() < 1e-12);
        assert!((w - 0.67032).abs() < 1e-5);
    }

    #[test]
    fn kernel_threshold_drops_weak_edges() {
        // exp(-0.9) ≈ 0.40657 < 0.5
        let g = build_adjacency_gaussian_threshold(&[(0, 1, 0.3)], 2, 0.1, 0.5).unwrap();
        assert_eq!(g.adjacency.nnz(), 0);
    }

    #[test]
    fn neighbor_variant_keeps_declared_pairs_only() {
        let g = build_adjacency_gaussian_neighbor(&[(0, 1, 0.1)], 3, 0.1).unwrap();
        let w = g.adjacency.row(0).1[0];
        assert!((w - (-0.1f64).exp()).abs() < 1e-12);
        assert!((w - 0.90484).abs() < 1e-5);
        assert_eq!(g.adjacency.row(2).0.len(), 0);
    }

    #[test]
    fn out_of_range_and_contradictory_edges_rejected() {
        assert!(matches!(
            build_adjacency_gaussian_neighbor(&[(0, 5, 0.1)], 3, 0.1),
            Err(Error::NodeIndexOutOfRange { .. })
        ));
        assert!(matches!(
            build_adjacency_gaussian_neighbor(&[(0, 1, 0.1), (1, 0, 0.2)], 3, 0.1),
            Err(Error::ContradictoryEdge { .. })
        ));
        // exact duplicates are fine
        assert!(build_adjacency_gaussian_neighbor(&[(0, 1, 0.1), (1, 0, 0.1)], 3, 0.1).is_ok());
    }

    #[test]
    fn st_adjacency_hand_example() {
        // N=2 path, T=2, neighbors-and-self:
        // rows (n1t1,n2t1,n1t2,n2t2) = [0,1,0,0; 1,0,0,0; 1,1,0,1; 1,1,1,0]
        let st = build_st_adjacency(&path_graph_2(), 2, AdjacencyVariant::NeighborsAndSelf)
            .unwrap();
        let dense = st.raw.densify();
        let expect = [
            [0.0, 1.0, 0.0, 0.0],
            [1.0, 0.0, 0.0, 0.0],
            [1.0, 1.0, 0.0, 1.0],
            [1.0, 1.0, 1.0, 0.0],
        ];
        for (r, row) in expect.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                assert_eq!(dense.at(r, c), v, "entry ({r},{c})");
            }
        }
        assert_eq!(st.degree, vec![1.0, 1.0, 3.0, 3.0]);
        // normalized entry (n1t2, n1t1) = 1/sqrt(3*1)
        let norm = st.normalized.densify();
        assert!((norm.at(2, 0) - 1.0 / 3f64.sqrt()).abs() < 1e-12);
        assert!((norm.at(2, 0) - 0.57735).abs() < 1e-5);
    }

    #[test]
    fn degenerate_window_is_plain_adjacency() {
        let g = path_graph_2();
        let st = build_st_adjacency(&g, 1, AdjacencyVariant::NeighborsAndSelf).unwrap();
        assert_eq!(st.raw, g.adjacency);
    }

    #[test]
    fn upper_blocks_have_no_stored_entries() {
        let g = path_graph_2();
        let st = build_st_adjacency(&g, 3, AdjacencyVariant::NeighborsAndSelf).unwrap();
        for (r, c, _) in st.normalized.iter() {
            assert!(c / st.n_nodes <= r / st.n_nodes, "entry ({r},{c}) above diagonal");
        }
    }

    #[test]
    fn nonzero_counts_match_hand_assembly() {
        let g = path_graph_2();
        assert_eq!(
            st_nonzero_count(&g, 2, AdjacencyVariant::NeighborsAndSelf).unwrap(),
            8
        );
        assert_eq!(
            st_nonzero_count(&g, 1, AdjacencyVariant::NeighborsAndSelf).unwrap(),
            2
        );
        // empty graph on 3 nodes, T=3: identity blocks only
        let empty = build_adjacency_gaussian_neighbor(&[], 3, 0.1).unwrap();
        assert_eq!(
            st_nonzero_count(&empty, 3, AdjacencyVariant::NeighborsAndSelf).unwrap(),
            9
        );
    }

    #[test]
    fn self_only_is_subset_of_neighbors_and_self() {
        let g = build_adjacency_gaussian_neighbor(&[(0, 1, 0.1), (1, 2, 0.3)], 4, 0.1).unwrap();
        let full = build_st_adjacency(&g, 3, AdjacencyVariant::NeighborsAndSelf).unwrap();
        let slim = build_st_adjacency(&g, 3, AdjacencyVariant::SelfOnly).unwrap();
        let full_support: std::collections::BTreeSet<(usize, usize)> =
            full.raw.iter().map(|(r, c, _)| (r, c)).collect();
        for (r, c, _) in slim.raw.iter() {
            assert!(full_support.contains(&(r, c)));
        }
        assert!(slim.raw.nnz() < full.raw.nnz());
    }

    #[test]
    fn normalize_unit_degrees_is_identity_map() {
        let g = path_graph_2();
        let st = build_st_adjacency(&g, 1, AdjacencyVariant::NeighborsAndSelf).unwrap();
        assert_eq!(st.normalized, st.raw);
    }

    #[test]
    fn normalize_zero_matrix_stays_zero() {
        let z = SparseMatrix::empty(3, 3);
        let out = symmetric_normalize(&z, &[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(out.nnz(), 0);
    }

    #[test]
    fn normalize_rejects_negative_degree() {
        let z = SparseMatrix::empty(2, 2);
        assert!(symmetric_normalize(&z, &[1.0, -0.5]).is_err());
    }

    #[test]
    fn kernel_monotone_in_distance() {
        let mut prev = f64::INFINITY;
        for k in 0..10 {
            let d = 0.05 + 0.02 * k as f64;
            let g = build_adjacency_gaussian_neighbor(&[(0, 1, d)], 2, 0.1).unwrap();
            let w = g.adjacency.row(0).1[0];
            assert!(w < prev);
            prev = w;
        }
    }

    #[test]
    fn distance_csv_first_appearance_order() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("dist.csv");
        std::fs::write(&p, "from,to,cost\n773656,767454,0.2\n767454,717804,0.5\n").unwrap();
        let (edges, ids) = load_distance_csv(&p, None).unwrap();
        assert_eq!(ids, vec!["773656", "767454", "717804"]);
        assert_eq!(edges, vec![(0, 1, 0.2), (1, 2, 0.5)]);
    }

    #[test]
    fn distance_csv_with_supplied_ids_rejects_unknown() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("dist.csv");
        std::fs::write(&p, "a,b,0.2\n").unwrap();
        let ids = vec!["a".to_string()];
        assert!(load_distance_csv(&p, Some(&ids)).is_err());
    }
}
