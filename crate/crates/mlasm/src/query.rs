//! Sequence-probability queries evaluated directly on a fractional
//! solution, without rounding.
//!
//! The table T[x, e, y] is the probability of observing the first y query
//! characters and sitting at position x of edge e. Row 0 holds the edge
//! flows at every position, so the empty query sums to sum_e l_e x_e = 1.
//! Positions advance within an edge; at an edge's first position the mass
//! arriving at its source vertex is weighted by the follow probability
//! x_e / outflow. Zero-length edges carry no positions, so arrival mass is
//! pushed through them transitively (they form a DAG) before each row.
//! Only two rows are alive at any time.

use crate::error::{Error, Result};
use crate::graph::PrefixGraph;
use crate::model::base_index;

/// Row-stochastic 4x4 substitution table: pr(observed | true base).
#[derive(Debug, Clone, PartialEq)]
pub struct SubstitutionModel {
    table: [[f64; 4]; 4],
}

impl SubstitutionModel {
    /// Error-free reading.
    pub fn identity() -> Self {
        let mut table = [[0.0; 4]; 4];
        for (i, row) in table.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        SubstitutionModel { table }
    }

    /// Uniform per-base error: diagonal 1 - eps, off-diagonal eps / 3.
    pub fn uniform(eps: f64) -> Result<Self> {
        if !(0.0..=0.75).contains(&eps) {
            return Err(Error::BadParameter(format!(
                "substitution rate must be in [0, 0.75]: {eps}"
            )));
        }
        let mut table = [[eps / 3.0; 4]; 4];
        for (i, row) in table.iter_mut().enumerate() {
            row[i] = 1.0 - eps;
        }
        Ok(SubstitutionModel { table })
    }

    pub fn from_table(table: [[f64; 4]; 4]) -> Result<Self> {
        for row in &table {
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 || row.iter().any(|&v| v < 0.0) {
                return Err(Error::BadParameter(
                    "substitution rows must be nonnegative and sum to 1".into(),
                ));
            }
        }
        Ok(SubstitutionModel { table })
    }

    /// Probability of reading `observed` when the true base is `actual`.
    pub fn pr(&self, actual: u8, observed: u8) -> f64 {
        match (base_index(actual), base_index(observed)) {
            (Some(a), Some(o)) => self.table[a][o],
            _ => 0.0,
        }
    }
}

/// The chance a flow-respecting walk at the edge's source takes this edge:
/// x_e over the source's total outflow.
pub fn follow_probability(g: &PrefixGraph, x: &[f64], edge_index: usize) -> Result<f64> {
    let e = &g.edges[edge_index];
    let denom: f64 = g
        .edges
        .iter()
        .zip(x.iter())
        .filter(|(f, _)| f.src == e.src)
        .map(|(_, &v)| v)
        .sum();
    if denom <= 0.0 {
        return Err(Error::ZeroOutflow { vertex: e.src });
    }
    Ok(x[edge_index] / denom)
}

/// Probability of observing `s` under the substitution model, summed over
/// all flow-weighted walks. With `cross_break` false, hub edges are
/// excluded from the walk (breaks are impassable) and their mass is lost.
pub fn query_probability(
    g: &PrefixGraph,
    x: &[f64],
    s: &str,
    model: &SubstitutionModel,
    cross_break: bool,
) -> Result<f64> {
    if x.len() != g.edges.len() {
        return Err(Error::BadParameter(
            "solution does not match graph edge count".into(),
        ));
    }
    if x.iter().all(|&v| v <= 0.0) {
        return Err(Error::BadParameter("solution carries no flow".into()));
    }
    let include: Vec<bool> = g
        .edges
        .iter()
        .map(|e| cross_break || !g.is_hub_edge(e))
        .collect();

    // Follow probabilities per edge; outflow sums over ALL edges, so mass
    // entering an excluded edge is absorbed rather than renormalized.
    let nv = g.n_vertices();
    let mut outflow = vec![0.0f64; nv];
    for (ei, e) in g.edges.iter().enumerate() {
        outflow[g.vertex_index(e.src).unwrap()] += x[ei];
    }
    let follow: Vec<f64> = g
        .edges
        .iter()
        .enumerate()
        .map(|(ei, e)| {
            let o = outflow[g.vertex_index(e.src).unwrap()];
            if o > 0.0 {
                x[ei] / o
            } else {
                0.0
            }
        })
        .collect();

    // Position layout: contiguous slots per included positive-length edge.
    let mut offset = vec![usize::MAX; g.edges.len()];
    let mut total = 0usize;
    for (ei, e) in g.edges.iter().enumerate() {
        if include[ei] && e.length > 0 {
            offset[ei] = total;
            total += e.length;
        }
    }

    let mut prev = vec![0.0f64; total];
    for (ei, e) in g.edges.iter().enumerate() {
        if offset[ei] != usize::MAX {
            for pos in 0..e.length {
                prev[offset[ei] + pos] = x[ei];
            }
        }
    }
    if s.is_empty() {
        return Ok(prev.iter().sum());
    }

    // Zero-length included edges in topological order, for arrival closure.
    let zero_edges: Vec<usize> = {
        let ids: Vec<usize> = (0..g.edges.len())
            .filter(|&ei| include[ei] && g.edges[ei].length == 0)
            .collect();
        let mut indeg = vec![0usize; nv];
        let mut out_adj: Vec<Vec<usize>> = vec![Vec::new(); nv];
        for &ei in &ids {
            let e = &g.edges[ei];
            indeg[g.vertex_index(e.dst).unwrap()] += 1;
            out_adj[g.vertex_index(e.src).unwrap()].push(ei);
        }
        let mut order = Vec::with_capacity(ids.len());
        let mut queue: Vec<usize> = (0..nv).filter(|&v| indeg[v] == 0).collect();
        while let Some(v) = queue.pop() {
            for &ei in &out_adj[v] {
                order.push(ei);
                let d = g.vertex_index(g.edges[ei].dst).unwrap();
                indeg[d] -= 1;
                if indeg[d] == 0 {
                    queue.push(d);
                }
            }
        }
        if order.len() < ids.len() {
            return Err(Error::MalformedGraph("zero-length cycle".into()));
        }
        order
    };

    let sbytes = s.as_bytes();
    let mut cur = vec![0.0f64; total];
    let mut arrive = vec![0.0f64; nv];
    for &c in sbytes {
        // Mass at the last position of each edge arrives at its head, then
        // flows through zero-length edges without consuming characters.
        for a in arrive.iter_mut() {
            *a = 0.0;
        }
        for (ei, e) in g.edges.iter().enumerate() {
            if offset[ei] != usize::MAX {
                arrive[g.vertex_index(e.dst).unwrap()] += prev[offset[ei] + e.length - 1];
            }
        }
        for &ei in &zero_edges {
            let e = &g.edges[ei];
            let from = g.vertex_index(e.src).unwrap();
            let add = follow[ei] * arrive[from];
            arrive[g.vertex_index(e.dst).unwrap()] += add;
        }
        for (ei, e) in g.edges.iter().enumerate() {
            if offset[ei] == usize::MAX {
                continue;
            }
            let base = offset[ei];
            let label = e.label.as_bytes();
            for pos in (1..e.length).rev() {
                cur[base + pos] = model.pr(label[pos], c) * prev[base + pos - 1];
            }
            let src = g.vertex_index(e.src).unwrap();
            cur[base] = model.pr(label[0], c) * follow[ei] * arrive[src];
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev.iter().sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_prefix_graph, EdgeRecord, VertexRecord};
    use crate::model::{Assembly, ReadSet};
    use crate::oracle::occurrence_query_oracle;

    /// An integral single-cycle fixture: all length-k windows of a circular
    /// genome as reads, flow 1/L on each consecutive-rotation edge.
    fn rotation_fixture(genome: &str, k: usize) -> (PrefixGraph, Vec<f64>) {
        let l = genome.len();
        let doubled = format!("{genome}{genome}");
        let windows: Vec<String> = (0..l).map(|i| doubled[i..i + k].to_string()).collect();
        let distinct: std::collections::HashSet<&String> = windows.iter().collect();
        assert_eq!(distinct.len(), l, "fixture windows must be distinct");
        let reads = ReadSet::from_seqs(windows).unwrap();
        let g = build_prefix_graph(&reads).unwrap();
        let mut x = vec![0.0f64; g.edges.len()];
        for (ei, e) in g.edges.iter().enumerate() {
            if e.dst == (e.src + 1) % l && e.length == 1 {
                x[ei] = 1.0 / l as f64;
            }
        }
        (g, x)
    }

    #[test]
    fn empty_query_is_normalization() {
        let (g, x) = rotation_fixture("ACGGTC", 3);
        let p = query_probability(&g, &x, "", &SubstitutionModel::identity(), true).unwrap();
        assert!((p - 1.0).abs() < 1e-12, "{p}");
    }

    #[test]
    fn single_loop_matches_hand_dp() {
        // Contig ACGG as one self-loop with x = 1/4.
        let g = PrefixGraph {
            vertices: vec![VertexRecord {
                id: 0,
                read_id: Some(0),
                weight: 1,
                coverage: 1,
                seq: Some("ACGG".into()),
            }],
            edges: vec![EdgeRecord::simple(0, 0, 4, "ACGG".into(), false)],
            hub: None,
            params: None,
            error_rate: None,
        };
        let x = vec![0.25];
        let id = SubstitutionModel::identity();
        let q = |s: &str| query_probability(&g, &x, s, &id, true).unwrap();
        assert!((q("CG") - 0.25).abs() < 1e-12);
        assert!((q("G") - 0.5).abs() < 1e-12);
        assert!((q("GGA") - 0.25).abs() < 1e-12); // wraps
        assert!((q("T") - 0.0).abs() < 1e-12);
        assert!((q("") - 1.0).abs() < 1e-12);
    }

    #[test]
    fn matches_occurrence_oracle_on_rotation_fixture() {
        let genome = "ACGGTACT";
        let (g, x) = rotation_fixture(genome, 4);
        let asm = Assembly {
            contigs: vec![genome.to_string()],
        };
        let id = SubstitutionModel::identity();
        // All circular substrings up to the genome length.
        let doubled = format!("{genome}{genome}");
        for len in 1..=genome.len() {
            for start in 0..genome.len() {
                let s = &doubled[start..start + len];
                let dp = query_probability(&g, &x, s, &id, true).unwrap();
                let oracle = occurrence_query_oracle(&asm, s);
                assert!(
                    (dp - oracle).abs() < 1e-9,
                    "s = {s}: dp {dp} vs oracle {oracle}"
                );
            }
        }
        // A few absent strings.
        for s in ["AAAA", "TTTT", "GGGG"] {
            let dp = query_probability(&g, &x, s, &id, true).unwrap();
            assert!((dp - occurrence_query_oracle(&asm, s)).abs() < 1e-9);
        }
    }

    #[test]
    fn monotone_under_extension() {
        let (g, x) = rotation_fixture("ACGGTACT", 4);
        let id = SubstitutionModel::identity();
        let mut prev = 1.0f64;
        let s = "ACGGTA";
        for len in 1..=s.len() {
            let p = query_probability(&g, &x, &s[..len], &id, true).unwrap();
            assert!(p <= prev + 1e-12, "extension increased probability");
            prev = p;
        }
    }

    #[test]
    fn follow_probabilities_normalize() {
        let (g, x) = rotation_fixture("ACGGTC", 3);
        for v in 0..6usize {
            let total: f64 = g
                .edges
                .iter()
                .enumerate()
                .filter(|(_, e)| e.src == v)
                .map(|(ei, _)| follow_probability(&g, &x, ei).unwrap())
                .sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_outflow_is_error() {
        let g = build_prefix_graph(&ReadSet::from_seqs(["ACGG", "GGAC"]).unwrap()).unwrap();
        let x = vec![0.0; g.edges.len()];
        assert!(matches!(
            follow_probability(&g, &x, 0),
            Err(Error::ZeroOutflow { .. })
        ));
    }

    #[test]
    fn substitution_model_scores_mismatches() {
        let (g, x) = rotation_fixture("ACGGTC", 3);
        let eps = 0.3;
        let m = SubstitutionModel::uniform(eps).unwrap();
        // Single character: sum over positions of pr(base, 'A') * x.
        let p = query_probability(&g, &x, "A", &m, true).unwrap();
        let genome = "ACGGTC";
        let expect: f64 = genome
            .bytes()
            .map(|b| {
                (if b == b'A' { 1.0 - eps } else { eps / 3.0 }) / genome.len() as f64
            })
            .sum();
        assert!((p - expect).abs() < 1e-12, "{p} vs {expect}");
    }

    #[test]
    fn duplicate_chain_zero_edges_propagate() {
        // Two identical reads chained by a zero edge; the walk must pass
        // through the chain without consuming query characters.
        let reads = ReadSet::from_seqs(["ACGT", "ACGT"]).unwrap();
        let g = build_prefix_graph(&reads).unwrap();
        // Flow: period cycle 1 -> 0 (length 4) and chain 0 -> 1 (zero).
        let mut x = vec![0.0f64; g.edges.len()];
        for (ei, e) in g.edges.iter().enumerate() {
            if e.src == 0 && e.dst == 1 && e.length == 0 {
                x[ei] = 0.25;
            }
            if e.src == 1 && e.dst == 0 && e.length == 4 {
                x[ei] = 0.25;
            }
        }
        let id = SubstitutionModel::identity();
        let q = |s: &str| query_probability(&g, &x, s, &id, true).unwrap();
        assert!((q("") - 1.0).abs() < 1e-12);
        assert!((q("CG") - 0.25).abs() < 1e-12);
        assert!((q("GTAC") - 0.25).abs() < 1e-12); // wraps through the chain
    }
}
