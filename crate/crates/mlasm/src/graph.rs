//! The prefix graph over a read set.
//!
//! One vertex per read. The edge from read a to read b has the length of the
//! shortest prefix of a whose remainder is a prefix of b; the edge label is
//! that prefix. An edge of full read length carries an empty overlap and is
//! flagged as a break edge — a break in the assembly. Reads with identical
//! sequence are chained by zero-length edges (a zero-length path, never a
//! zero-length cycle). The complete graph built here is the reference
//! construction; `simplify` produces the same thing without materializing
//! all pairs.

use std::collections::HashMap;
use std::io::{Read as IoRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ReadSet;
use crate::simplify::SimplifyParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VertexRecord {
    pub id: usize,
    /// Originating read id; None for the break hub.
    pub read_id: Option<usize>,
    /// Objective weight. 1 for read vertices, 0 for the hub; compression
    /// folds interior weights into edge multiplicities.
    pub weight: u64,
    /// Estimated sequencing depth across this vertex: one plus the number of
    /// distinct reads whose recorded overlap enters it.
    pub coverage: u64,
    /// Read sequence; None for the hub.
    pub seq: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub src: usize,
    pub dst: usize,
    /// Edge length in characters.
    pub length: usize,
    /// The spelled prefix: walking this edge emits `label`.
    pub label: String,
    /// True when the edge represents no overlap (length = full source read).
    pub is_break: bool,
    /// Number of interior vertices compressed into this edge (sum of their
    /// weights); 0 before simplification.
    pub multiplicity: u64,
    /// Overlap probability; 1.0 in the exact model.
    pub p: f64,
    /// Probability weight this edge contributes to its source vertex's
    /// adjusted outflow. Equals `p` for simple edges; compression keeps the
    /// first constituent's value.
    pub p_src: f64,
    /// Objective constant accumulated from compressed interior vertices
    /// (sum of w * ln p over their outgoing constituents). 0.0 exactly.
    pub interior_logp: f64,
    /// Distinguishes parallel edges between the same ordered pair.
    pub overlap_id: u32,
}

impl EdgeRecord {
    pub fn simple(src: usize, dst: usize, length: usize, label: String, is_break: bool) -> Self {
        EdgeRecord {
            src,
            dst,
            length,
            label,
            is_break,
            multiplicity: 0,
            p: 1.0,
            p_src: 1.0,
            interior_logp: 0.0,
            overlap_id: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrefixGraph {
    /// Sorted by id; ids may be sparse after simplification.
    pub vertices: Vec<VertexRecord>,
    pub edges: Vec<EdgeRecord>,
    /// Break hub vertex id, if one has been added.
    pub hub: Option<usize>,
    /// Echo of the simplification parameters used, if any.
    pub params: Option<SimplifyParams>,
    /// Substitution rate assumed when probabilities were computed, if any.
    pub error_rate: Option<f64>,
}

/// Length of the shortest prefix of `a` whose remainder is a prefix of `b`.
/// For a self-loop (`same_vertex`) the search starts at 1, forbidding a
/// zero-length loop. The full length |a| always qualifies (empty remainder).
pub fn edge_length(a: &str, b: &str, same_vertex: bool) -> usize {
    let ab = a.as_bytes();
    let bb = b.as_bytes();
    let start = usize::from(same_vertex);
    'outer: for p in start..ab.len() {
        let rem = &ab[p..];
        if rem.len() > bb.len() {
            continue;
        }
        for i in 0..rem.len() {
            if rem[i] != bb[i] {
                continue 'outer;
            }
        }
        return p;
    }
    ab.len()
}

/// Builds the complete prefix graph: an edge for every ordered pair of
/// vertices, self-loops included. All-pairs by design; `simplify` holds the
/// near-linear construction.
pub fn build_prefix_graph(reads: &ReadSet) -> Result<PrefixGraph> {
    if reads.is_empty() {
        return Err(Error::EmptyReadSet);
    }
    let n = reads.len();

    // Identical sequences are chained r1 -> r2 -> ... by zero-length edges
    // (ids ascending); every other intra-group edge is computed from the
    // shared sequence like a self-loop, so no zero cycle can form.
    let mut groups: HashMap<&str, Vec<usize>> = HashMap::new();
    for r in reads.reads() {
        groups.entry(r.seq.as_str()).or_default().push(r.id);
    }
    let mut chain_next: HashMap<usize, usize> = HashMap::new();
    for ids in groups.values() {
        for w in ids.windows(2) {
            chain_next.insert(w[0], w[1]);
        }
    }

    let mut edges = Vec::with_capacity(n * n);
    for i in 0..n {
        let a = reads.seq(i);
        for j in 0..n {
            let b = reads.seq(j);
            let same_seq = a == b;
            let length = if i == j {
                edge_length(a, a, true)
            } else if same_seq {
                if chain_next.get(&i) == Some(&j) {
                    0
                } else {
                    edge_length(a, a, true)
                }
            } else {
                edge_length(a, b, false)
            };
            let is_break = length == a.len();
            edges.push(EdgeRecord::simple(
                i,
                j,
                length,
                a[..length].to_string(),
                is_break,
            ));
        }
    }

    let mut g = PrefixGraph {
        vertices: (0..n)
            .map(|id| VertexRecord {
                id,
                read_id: Some(id),
                weight: 1,
                coverage: 0,
                seq: Some(reads.seq(id).to_string()),
            })
            .collect(),
        edges,
        hub: None,
        params: None,
        error_rate: None,
    };
    g.recompute_coverage();
    Ok(g)
}

impl PrefixGraph {
    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    /// Index into `vertices` for a vertex id (vertices are sorted by id).
    pub fn vertex_index(&self, id: usize) -> Option<usize> {
        self.vertices.binary_search_by_key(&id, |v| v.id).ok()
    }

    pub fn vertex(&self, id: usize) -> Option<&VertexRecord> {
        self.vertex_index(id).map(|i| &self.vertices[i])
    }

    pub fn is_hub(&self, id: usize) -> bool {
        self.hub == Some(id)
    }

    pub fn is_hub_edge(&self, e: &EdgeRecord) -> bool {
        match self.hub {
            Some(h) => e.src == h || e.dst == h,
            None => false,
        }
    }

    /// Out- and in-adjacency as edge-index lists, keyed by vertex index.
    pub fn adjacency(&self) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
        let mut out = vec![Vec::new(); self.vertices.len()];
        let mut inc = vec![Vec::new(); self.vertices.len()];
        for (ei, e) in self.edges.iter().enumerate() {
            let si = self.vertex_index(e.src).expect("edge src exists");
            let di = self.vertex_index(e.dst).expect("edge dst exists");
            out[si].push(ei);
            inc[di].push(ei);
        }
        (out, inc)
    }

    /// One plus the number of distinct reads with a recorded overlap into
    /// each vertex. Used by the compact/uniform path classifier.
    pub fn recompute_coverage(&mut self) {
        let mut incoming: HashMap<usize, std::collections::HashSet<usize>> = HashMap::new();
        for e in &self.edges {
            if !e.is_break && e.src != e.dst {
                incoming.entry(e.dst).or_default().insert(e.src);
            }
        }
        for v in &mut self.vertices {
            let others = incoming.get(&v.id).map_or(0, |s| s.len());
            v.coverage = 1 + others as u64;
        }
        if let Some(h) = self.hub {
            if let Some(i) = self.vertex_index(h) {
                self.vertices[i].coverage = 0;
            }
        }
    }

    /// Structural validation: sorted unique ids, edge endpoints present,
    /// labels consistent with lengths, no zero-length cycle, no zero
    /// self-loop, probabilities in (0, 1].
    pub fn validate(&self) -> Result<()> {
        for w in self.vertices.windows(2) {
            if w[0].id >= w[1].id {
                return Err(Error::MalformedGraph(format!(
                    "vertex ids not strictly increasing at {}",
                    w[1].id
                )));
            }
        }
        if let Some(h) = self.hub {
            let v = self
                .vertex(h)
                .ok_or_else(|| Error::MalformedGraph(format!("hub id {h} missing")))?;
            if v.weight != 0 {
                return Err(Error::MalformedGraph("hub must have weight 0".into()));
            }
        }
        for (ei, e) in self.edges.iter().enumerate() {
            if self.vertex_index(e.src).is_none() || self.vertex_index(e.dst).is_none() {
                return Err(Error::MalformedGraph(format!(
                    "edge {ei} references missing vertex"
                )));
            }
            if e.label.len() != e.length {
                return Err(Error::MalformedGraph(format!(
                    "edge {ei}: label length {} != length {}",
                    e.label.len(),
                    e.length
                )));
            }
            if e.src == e.dst && e.length == 0 {
                return Err(Error::MalformedGraph(format!("edge {ei}: zero self-loop")));
            }
            if !(e.p > 0.0 && e.p <= 1.0) || !(e.p_src > 0.0 && e.p_src <= 1.0) {
                return Err(Error::MalformedGraph(format!(
                    "edge {ei}: probability out of (0, 1]"
                )));
            }
        }
        self.check_zero_acyclic()?;
        Ok(())
    }

    /// The subgraph of zero-length edges must be acyclic (Kahn's algorithm).
    fn check_zero_acyclic(&self) -> Result<()> {
        let n = self.vertices.len();
        let mut indeg = vec![0usize; n];
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut m = 0usize;
        for e in &self.edges {
            if e.length == 0 {
                let s = self.vertex_index(e.src).unwrap();
                let d = self.vertex_index(e.dst).unwrap();
                adj[s].push(d);
                indeg[d] += 1;
                m += 1;
            }
        }
        let mut queue: Vec<usize> = (0..n).filter(|&v| indeg[v] == 0).collect();
        let mut seen = 0usize;
        while let Some(v) = queue.pop() {
            seen += 1;
            for &d in &adj[v] {
                indeg[d] -= 1;
                if indeg[d] == 0 {
                    queue.push(d);
                }
            }
        }
        if m > 0 && seen < n {
            return Err(Error::MalformedGraph("zero-length cycle".into()));
        }
        Ok(())
    }

    /// Exhaustive triangle-inequality check over ordered triples; intended
    /// for desk-scale reference graphs. Uses the minimum length per ordered
    /// pair when parallel edges exist. Triples of identical sequences are
    /// exempt: duplicate reads are deliberately chained by a zero-length
    /// path, so the direct edge between non-consecutive duplicates is
    /// longer than the path through the chain.
    pub fn check_triangle(&self) -> Result<()> {
        let n = self.vertices.len();
        let mut min_len: HashMap<(usize, usize), usize> = HashMap::new();
        for e in &self.edges {
            let s = self.vertex_index(e.src).unwrap();
            let d = self.vertex_index(e.dst).unwrap();
            let entry = min_len.entry((s, d)).or_insert(usize::MAX);
            *entry = (*entry).min(e.length);
        }
        let same_seq = |a: usize, b: usize| {
            self.vertices[a].seq.is_some() && self.vertices[a].seq == self.vertices[b].seq
        };
        for i in 0..n {
            for j in 0..n {
                let Some(&lij) = min_len.get(&(i, j)) else {
                    continue;
                };
                for k in 0..n {
                    let (Some(&ljk), Some(&lik)) = (min_len.get(&(j, k)), min_len.get(&(i, k)))
                    else {
                        continue;
                    };
                    if same_seq(i, j) && same_seq(j, k) {
                        continue;
                    }
                    if lik > lij + ljk {
                        return Err(Error::MalformedGraph(format!(
                            "triangle inequality violated: l({},{}) = {} > {} + {}",
                            self.vertices[i].id, self.vertices[k].id, lik, lij, ljk
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Walk-spelling property: an edge label followed by the destination's
    /// sequence must contain the source's sequence as a prefix.
    pub fn check_spelling(&self) -> Result<()> {
        for (ei, e) in self.edges.iter().enumerate() {
            let (Some(src), Some(dst)) = (self.vertex(e.src), self.vertex(e.dst)) else {
                continue;
            };
            let Some(src_seq) = &src.seq else { continue };
            let dst_seq = dst.seq.as_deref().unwrap_or("");
            let spelled = format!("{}{}", e.label, dst_seq);
            if !spelled.starts_with(src_seq.as_str()) && !src_seq.starts_with(&spelled) {
                return Err(Error::MalformedGraph(format!(
                    "edge {ei} ({} -> {}): label does not spell source read",
                    e.src, e.dst
                )));
            }
        }
        Ok(())
    }

    pub fn to_json_writer<W: Write>(&self, writer: W) -> Result<()> {
        serde_json::to_writer_pretty(writer, self)?;
        Ok(())
    }

    pub fn from_json_reader<R: IoRead>(reader: R) -> Result<Self> {
        let g: PrefixGraph = serde_json::from_reader(reader)?;
        g.validate()?;
        Ok(g)
    }
}
