//! Optimality-preserving graph reductions and the direct construction of an
//! already-simplified graph.
//!
//! The reductions: transitive-edge removal, break-edge removal on compact
//! and uniform paths, unbranched-path compression with multiplicity
//! bookkeeping, and rerouting of all remaining break edges through a single
//! zero-weight hub vertex. `build_simplified_graph` composes the same
//! pipeline directly from the reads while only ever storing the recorded
//! overlaps, so memory stays proportional to the input instead of the
//! quadratic all-pairs graph.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EdgeRecord, PrefixGraph, VertexRecord};
use crate::model::ReadSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimplifyParams {
    /// Overlaps shorter than this are never recorded; the hub plays their
    /// role.
    pub min_overlap: usize,
    /// A path is compact when every edge on it is at most this long.
    pub compact_tau: usize,
    /// A path is uniform when max/min of vertex coverage estimates is at
    /// most this ratio.
    pub uniform_rho: f64,
    /// Absolute slack for the "approximately equal length" compression rule.
    pub compress_slack: usize,
}

impl SimplifyParams {
    /// Defaults scaled to a read length: tau = read_len / 2, rho = 2.
    pub fn for_read_len(read_len: usize) -> Self {
        SimplifyParams {
            min_overlap: 1,
            compact_tau: (read_len / 2).max(1),
            uniform_rho: 2.0,
            compress_slack: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_overlap == 0 || self.compact_tau == 0 {
            return Err(Error::BadParameter(
                "min_overlap and compact_tau must be >= 1".into(),
            ));
        }
        if !(self.uniform_rho >= 1.0) {
            return Err(Error::BadParameter("uniform_rho must be >= 1".into()));
        }
        Ok(())
    }
}

impl Default for SimplifyParams {
    fn default() -> Self {
        SimplifyParams::for_read_len(2)
    }
}

/// Removes every edge (i, k) dominated by a two-edge path (i, j), (j, k)
/// with no greater total length. Zero-length duplicate-chain edges are never
/// removed. Evaluated against the input graph, all removals simultaneous.
pub fn transitive_reduce(g: &PrefixGraph) -> PrefixGraph {
    let mut pair: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
    for (ei, e) in g.edges.iter().enumerate() {
        pair.entry((e.src, e.dst)).or_default().push(ei);
    }
    let mut out: HashMap<usize, Vec<usize>> = HashMap::new();
    for (ei, e) in g.edges.iter().enumerate() {
        out.entry(e.src).or_default().push(ei);
    }

    let mut removed = vec![false; g.edges.len()];
    for e1 in g.edges.iter() {
        if e1.src == e1.dst {
            continue; // intermediate must differ from the source
        }
        let j = e1.dst;
        for &e2i in out.get(&j).map_or(&[][..], |v| v.as_slice()) {
            let e2 = &g.edges[e2i];
            if e2.dst == j {
                continue; // intermediate must differ from the target
            }
            let via = e1.length + e2.length;
            if let Some(cands) = pair.get(&(e1.src, e2.dst)) {
                for &ci in cands {
                    let c = &g.edges[ci];
                    if c.length > 0 && c.length >= via {
                        removed[ci] = true;
                    }
                }
            }
        }
    }

    let mut out_g = g.clone();
    out_g.edges = g
        .edges
        .iter()
        .enumerate()
        .filter(|(i, _)| !removed[*i])
        .map(|(_, e)| e.clone())
        .collect();
    out_g
}

/// Per-vertex verdict of the compact/uniform path classifier, by vertex
/// index. A vertex qualifies when its non-break degrees are exactly (1, 1)
/// and the maximal unbranched non-break path through it is compact (all
/// edge lengths <= tau) and uniform (coverage ratio <= rho).
pub fn classify_compact_uniform(g: &PrefixGraph, params: &SimplifyParams) -> Vec<bool> {
    let n = g.n_vertices();
    let (out, inc) = g.adjacency();
    let nb = |edges: &[usize]| -> Vec<usize> {
        edges
            .iter()
            .copied()
            .filter(|&e| !g.edges[e].is_break)
            .collect()
    };
    let nb_out: Vec<Vec<usize>> = out.iter().map(|v| nb(v)).collect();
    let nb_in: Vec<Vec<usize>> = inc.iter().map(|v| nb(v)).collect();
    let chainlike: Vec<bool> = (0..n).map(|v| nb_out[v].len() == 1 && nb_in[v].len() == 1).collect();

    let mut classified = vec![false; n];
    let mut visited = vec![false; n];
    let index_of = |id: usize| g.vertex_index(id).unwrap();

    let judge_run = |run: &[usize], classified: &mut Vec<bool>| {
        let mut ok = true;
        let mut cov_min = u64::MAX;
        let mut cov_max = 0u64;
        for &v in run {
            let e_out = nb_out[v][0];
            let e_in = nb_in[v][0];
            if g.edges[e_out].length > params.compact_tau
                || g.edges[e_in].length > params.compact_tau
            {
                ok = false;
            }
            let c = g.vertices[v].coverage.max(1);
            cov_min = cov_min.min(c);
            cov_max = cov_max.max(c);
        }
        if (cov_max as f64) > params.uniform_rho * cov_min as f64 {
            ok = false;
        }
        if ok {
            for &v in run {
                classified[v] = true;
            }
        }
    };

    // Walk maximal runs of chainlike vertices; start from run heads, then
    // sweep up anything left (pure cycles of chainlike vertices).
    for start in 0..n {
        if !chainlike[start] || visited[start] {
            continue;
        }
        let pred = index_of(g.edges[nb_in[start][0]].src);
        let head = if !chainlike[pred] || pred == start {
            true
        } else {
            false
        };
        if !head {
            continue;
        }
        let mut run = Vec::new();
        let mut v = start;
        loop {
            if visited[v] {
                break;
            }
            visited[v] = true;
            run.push(v);
            let next = index_of(g.edges[nb_out[v][0]].dst);
            if !chainlike[next] || next == v {
                break;
            }
            v = next;
        }
        judge_run(&run, &mut classified);
    }
    for start in 0..n {
        if !chainlike[start] || visited[start] {
            continue;
        }
        // A cycle made entirely of chainlike vertices.
        let mut run = Vec::new();
        let mut v = start;
        while !visited[v] {
            visited[v] = true;
            run.push(v);
            v = index_of(g.edges[nb_out[v][0]].dst);
        }
        judge_run(&run, &mut classified);
    }
    classified
}

/// Deletes break edges incident to vertices the classifier accepts, then
/// restores the break edges of any vertex left without a non-break incoming
/// or outgoing edge (so feasibility is never destroyed).
pub fn remove_break_edges(g: &PrefixGraph, params: &SimplifyParams) -> PrefixGraph {
    let classified = classify_compact_uniform(g, params);
    let n = g.n_vertices();
    let (out, inc) = g.adjacency();
    let mut delete = vec![false; g.edges.len()];
    for (ei, e) in g.edges.iter().enumerate() {
        if !e.is_break || g.is_hub_edge(e) {
            continue;
        }
        let si = g.vertex_index(e.src).unwrap();
        let di = g.vertex_index(e.dst).unwrap();
        if classified[si] || classified[di] {
            delete[ei] = true;
        }
    }
    // Safety: a vertex with no non-break edge in some direction keeps all
    // its break edges.
    for v in 0..n {
        let has_nb_out = out[v].iter().any(|&e| !g.edges[e].is_break);
        let has_nb_in = inc[v].iter().any(|&e| !g.edges[e].is_break);
        if !has_nb_out || !has_nb_in {
            for &e in out[v].iter().chain(inc[v].iter()) {
                if g.edges[e].is_break {
                    delete[e] = false;
                }
            }
        }
    }
    let mut out_g = g.clone();
    out_g.edges = g
        .edges
        .iter()
        .enumerate()
        .filter(|(i, _)| !delete[*i])
        .map(|(_, e)| e.clone())
        .collect();
    out_g.params = Some(params.clone());
    out_g
}

/// Merges maximal unbranched paths into single edges. `allowed` restricts
/// which vertices may be absorbed (on top of the in = out = 1 requirement).
fn compress_core(
    g: &PrefixGraph,
    params: &SimplifyParams,
    allowed: &dyn Fn(usize) -> bool,
) -> PrefixGraph {
    let n = g.n_vertices();
    let (out, inc) = g.adjacency();
    let index_of = |id: usize| g.vertex_index(id).unwrap();
    let interior: Vec<bool> = (0..n)
        .map(|v| {
            out[v].len() == 1
                && inc[v].len() == 1
                && g.edges[out[v][0]].dst != g.vertices[v].id // no self-loop
                && allowed(v)
        })
        .collect();

    let mut edge_used = vec![false; g.edges.len()];
    let mut absorbed = vec![false; n];
    let mut new_edges: Vec<EdgeRecord> = Vec::new();

    let flush_run = |run: &[usize], new_edges: &mut Vec<EdgeRecord>, absorbed: &mut Vec<bool>| {
        // Greedy segmentation: extend while lengths stay within the slack
        // band and coverage along the touched vertices stays uniform.
        let mut seg_start = 0usize;
        let mut i = 0usize;
        while i < run.len() {
            let mut lo = g.edges[run[seg_start]].length;
            let mut hi = lo;
            let mut cov_lo = u64::MAX;
            let mut cov_hi = 0u64;
            let touch = |vi: usize, cov_lo: &mut u64, cov_hi: &mut u64| {
                let c = g.vertices[vi].coverage.max(1);
                *cov_lo = (*cov_lo).min(c);
                *cov_hi = (*cov_hi).max(c);
            };
            touch(index_of(g.edges[run[seg_start]].src), &mut cov_lo, &mut cov_hi);
            touch(index_of(g.edges[run[seg_start]].dst), &mut cov_lo, &mut cov_hi);
            let mut seg_end = seg_start;
            i = seg_start + 1;
            while i < run.len() {
                let e = &g.edges[run[i]];
                // Break edges are never merged; the hub replaces them next.
                if e.is_break || g.edges[run[seg_start]].is_break {
                    break;
                }
                let nlo = lo.min(e.length);
                let nhi = hi.max(e.length);
                let mut ncov_lo = cov_lo;
                let mut ncov_hi = cov_hi;
                touch(index_of(e.dst), &mut ncov_lo, &mut ncov_hi);
                if nhi - nlo <= params.compress_slack
                    && (ncov_hi as f64) <= params.uniform_rho * ncov_lo as f64
                {
                    lo = nlo;
                    hi = nhi;
                    cov_lo = ncov_lo;
                    cov_hi = ncov_hi;
                    seg_end = i;
                    i += 1;
                } else {
                    break;
                }
            }
            if seg_end > seg_start {
                // Merge run[seg_start..=seg_end] into one edge.
                let first = &g.edges[run[seg_start]];
                let last = &g.edges[run[seg_end]];
                let mut length = 0usize;
                let mut label = String::new();
                let mut mult = 0u64;
                let mut p = 1.0f64;
                let mut interior_logp = 0.0f64;
                for s in seg_start..=seg_end {
                    let e = &g.edges[run[s]];
                    length += e.length;
                    label.push_str(&e.label);
                    mult += e.multiplicity;
                    p *= e.p;
                    interior_logp += e.interior_logp;
                    if s > seg_start {
                        let vi = index_of(e.src);
                        absorbed[vi] = true;
                        mult += g.vertices[vi].weight;
                        interior_logp += g.vertices[vi].weight as f64 * e.p_src.ln();
                    }
                }
                new_edges.push(EdgeRecord {
                    src: first.src,
                    dst: last.dst,
                    length,
                    label,
                    is_break: false,
                    multiplicity: mult,
                    p,
                    p_src: first.p_src,
                    interior_logp,
                    overlap_id: 0,
                });
            } else {
                new_edges.push(g.edges[run[seg_start]].clone());
            }
            seg_start = seg_end + 1;
            i = seg_start;
        }
    };

    // Runs starting at a non-interior vertex.
    for v in 0..n {
        if interior[v] {
            continue;
        }
        let mut outs: Vec<usize> = out[v].clone();
        outs.sort_unstable();
        for e0 in outs {
            if edge_used[e0] {
                continue;
            }
            let mut run = vec![e0];
            edge_used[e0] = true;
            let mut w = index_of(g.edges[e0].dst);
            while interior[w] {
                let f = out[w][0];
                if edge_used[f] {
                    break;
                }
                edge_used[f] = true;
                run.push(f);
                w = index_of(g.edges[f].dst);
            }
            flush_run(&run, &mut new_edges, &mut absorbed);
        }
    }
    // Cycles made entirely of interior vertices: anchor at the smallest id.
    for v in 0..n {
        if !interior[v] {
            continue;
        }
        let e0 = out[v][0];
        if edge_used[e0] {
            continue;
        }
        let mut run = vec![e0];
        edge_used[e0] = true;
        let mut w = index_of(g.edges[e0].dst);
        let mut cycle: Vec<usize> = vec![v];
        while w != v {
            cycle.push(w);
            let f = out[w][0];
            edge_used[f] = true;
            run.push(f);
            w = index_of(g.edges[f].dst);
        }
        // Rotate so the run starts (and ends) at the smallest vertex id.
        let anchor_pos = (0..cycle.len())
            .min_by_key(|&i| g.vertices[cycle[i]].id)
            .unwrap();
        run.rotate_left(anchor_pos);
        flush_run(&run, &mut new_edges, &mut absorbed);
    }

    let mut out_g = g.clone();
    out_g.vertices = g
        .vertices
        .iter()
        .enumerate()
        .filter(|(i, _)| !absorbed[*i])
        .map(|(_, v)| v.clone())
        .collect();
    out_g.edges = new_edges;
    out_g.params = Some(params.clone());
    out_g
}

/// Replaces every maximal unbranched path whose edges have approximately
/// equal length and uniform coverage by a single edge that remembers the
/// interior vertices in its multiplicity.
pub fn compress_paths(g: &PrefixGraph, params: &SimplifyParams) -> PrefixGraph {
    compress_core(g, params, &|_| true)
}

/// Removes all remaining break edges and adds the break hub: a zero-weight
/// vertex with a full-read-length edge from every vertex and a zero-length
/// edge back to every vertex.
pub fn add_break_hub(g: &PrefixGraph) -> PrefixGraph {
    let mut out_g = g.clone();
    out_g.edges.retain(|e| !e.is_break || g.is_hub_edge(e));
    if out_g.hub.is_some() {
        return out_g;
    }
    let hub_id = g.vertices.last().map_or(0, |v| v.id + 1);
    let eps = g.error_rate.unwrap_or(0.0);
    for v in &g.vertices {
        let seq = v
            .seq
            .clone()
            .expect("read vertices carry their sequence");
        let p_out = (1.0 - eps).powi(seq.len() as i32).max(f64::MIN_POSITIVE);
        out_g.edges.push(EdgeRecord {
            src: v.id,
            dst: hub_id,
            length: seq.len(),
            label: seq,
            is_break: true,
            multiplicity: 0,
            p: p_out,
            p_src: p_out,
            interior_logp: 0.0,
            overlap_id: 0,
        });
        out_g.edges.push(EdgeRecord {
            src: hub_id,
            dst: v.id,
            length: 0,
            label: String::new(),
            is_break: false,
            multiplicity: 0,
            p: 1.0,
            p_src: 1.0,
            interior_logp: 0.0,
            overlap_id: 0,
        });
    }
    out_g.vertices.push(VertexRecord {
        id: hub_id,
        read_id: None,
        weight: 0,
        coverage: 0,
        seq: None,
    });
    out_g.hub = Some(hub_id);
    out_g
}

/// Recorded overlap: minimal split point per ordered pair of sequence
/// groups, restricted to overlaps of at least `min_overlap` characters.
struct OverlapIndex {
    /// Distinct sequences in first-appearance order.
    group_seqs: Vec<String>,
    /// Members (read ids, ascending) of each group.
    members: Vec<Vec<usize>>,
    /// (a, b) -> minimal split point p, overlap length |a| - p >= min_overlap.
    overlaps: HashMap<(usize, usize), usize>,
}

fn discover_overlaps(reads: &ReadSet, min_overlap: usize) -> OverlapIndex {
    let mut group_ids: HashMap<&str, usize> = HashMap::new();
    let mut group_seqs: Vec<String> = Vec::new();
    let mut members: Vec<Vec<usize>> = Vec::new();
    for r in reads.reads() {
        let gid = *group_ids.entry(r.seq.as_str()).or_insert_with(|| {
            group_seqs.push(r.seq.clone());
            members.push(Vec::new());
            group_seqs.len() - 1
        });
        members[gid].push(r.id);
    }

    // Index groups by their first min_overlap characters; scan every suffix
    // of every group that is long enough to overlap significantly.
    let k = min_overlap;
    let mut prefix_index: HashMap<&[u8], Vec<usize>> = HashMap::new();
    for (gi, s) in group_seqs.iter().enumerate() {
        if s.len() >= k {
            prefix_index.entry(&s.as_bytes()[..k]).or_default().push(gi);
        }
    }
    let mut overlaps: HashMap<(usize, usize), usize> = HashMap::new();
    for (a, sa) in group_seqs.iter().enumerate() {
        let ab = sa.as_bytes();
        if ab.len() < k {
            continue;
        }
        let mut found: HashSet<usize> = HashSet::new();
        for p in 0..=(ab.len() - k) {
            if let Some(cands) = prefix_index.get(&ab[p..p + k]) {
                for &b in cands {
                    if found.contains(&b) || (b == a && p == 0) {
                        continue;
                    }
                    let rem = &ab[p..];
                    let bb = group_seqs[b].as_bytes();
                    if rem.len() <= bb.len() && &bb[..rem.len()] == rem {
                        overlaps.insert((a, b), p);
                        found.insert(b);
                    }
                }
            }
        }
    }
    OverlapIndex {
        group_seqs,
        members,
        overlaps,
    }
}

/// The sparse overlap graph: recorded overlap edges plus duplicate chains,
/// with coverage estimates. No break edges are materialized.
fn sparse_overlap_graph(reads: &ReadSet, idx: &OverlapIndex) -> PrefixGraph {
    let n = reads.len();
    let mut chain_next: HashMap<usize, usize> = HashMap::new();
    for ids in &idx.members {
        for w in ids.windows(2) {
            chain_next.insert(w[0], w[1]);
        }
    }
    let mut edges: Vec<EdgeRecord> = Vec::new();
    let mut push_edge = |src: usize, dst: usize, p: usize, seq: &str| {
        edges.push(EdgeRecord::simple(src, dst, p, seq[..p].to_string(), false));
    };
    // Duplicate chains first.
    for (&u, &v) in chain_next.iter() {
        push_edge(u, v, 0, "");
    }
    for (&(a, b), &p) in &idx.overlaps {
        let sa = &idx.group_seqs[a];
        if a == b {
            for &u in &idx.members[a] {
                for &v in &idx.members[b] {
                    if u != v && chain_next.get(&u) == Some(&v) {
                        continue; // chained duplicates stay at zero length
                    }
                    push_edge(u, v, p, sa);
                }
            }
        } else {
            for &u in &idx.members[a] {
                for &v in &idx.members[b] {
                    push_edge(u, v, p, sa);
                }
            }
        }
    }
    edges.sort_by_key(|e| (e.src, e.dst, e.length));
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
    g
}

/// Transitive reduction on a recorded-overlap graph, accounting for the
/// unmaterialized break edges as possible second legs: edge (i, k) is also
/// dominated when some recorded (i, j) satisfies l_ij + |seq(j)| <= l_ik.
fn reduce_sparse(g: &PrefixGraph) -> PrefixGraph {
    let mut reduced = transitive_reduce(g);
    let (out, _) = g.adjacency();
    // Two smallest l_ij + |seq(j)| per source, to allow excluding j = k.
    let n = g.n_vertices();
    let mut best: Vec<[(usize, Option<usize>); 2]> = vec![[(usize::MAX, None); 2]; n];
    for v in 0..n {
        for &ei in &out[v] {
            let e = &g.edges[ei];
            if e.dst == e.src {
                continue;
            }
            let j_len = g
                .vertex(e.dst)
                .and_then(|x| x.seq.as_ref())
                .map_or(usize::MAX, |s| s.len());
            let val = e.length.saturating_add(j_len);
            let slot = &mut best[v];
            if val < slot[0].0 {
                slot[1] = slot[0];
                slot[0] = (val, Some(e.dst));
            } else if val < slot[1].0 && slot[0].1 != Some(e.dst) {
                slot[1] = (val, Some(e.dst));
            }
        }
    }
    reduced.edges.retain(|e| {
        if e.length == 0 {
            return true;
        }
        let si = g.vertex_index(e.src).unwrap();
        let b = &best[si];
        let dominated = (b[0].1.is_some() && b[0].1 != Some(e.dst) && b[0].0 <= e.length)
            || (b[1].1.is_some() && b[1].1 != Some(e.dst) && b[1].0 <= e.length);
        !dominated
    });
    reduced
}

/// Which vertices still carry break edges after reduction and classified
/// removal, computed without materializing the quadratic break-edge set.
struct BreakState {
    survive_out: Vec<bool>,
    survive_in: Vec<bool>,
    /// Vertices whose break edges the safety clause restores.
    resurrected: Vec<bool>,
    /// smallset[v]: break targets of v that do NOT survive reduction (or
    /// are overlap partners, hence not break targets at all). Only
    /// meaningful when all_cover[v] is false.
    smallset: Vec<HashSet<usize>>,
    all_cover: Vec<bool>,
}

fn break_state(
    reads: &ReadSet,
    pre: &PrefixGraph,
    post: &PrefixGraph,
    classified: &[bool],
) -> BreakState {
    let n = reads.len();
    let (pre_out, _) = pre.adjacency();
    let seq_len: Vec<usize> = (0..n).map(|v| reads.seq(v).len()).collect();

    // A break edge (v, k) exists when (v, k) has no recorded overlap, and
    // survives reduction unless some recorded (v, j) covers k:
    //   recorded (j, k): l_vj + l_jk <= |seq(v)|
    //   unrecorded (j, k) [a break]: l_vj + |seq(j)| <= |seq(v)|
    // If any partner j satisfies l_vj + |seq(j)| <= |seq(v)|, every target
    // except j itself is covered, and j is a partner, so nothing survives.
    let mut all_cover = vec![false; n];
    let mut smallset: Vec<HashSet<usize>> = vec![HashSet::new(); n];
    for v in 0..n {
        let mut set: HashSet<usize> = HashSet::new();
        for &e1i in &pre_out[v] {
            let e1 = &pre.edges[e1i];
            set.insert(e1.dst); // a recorded partner is never a break target
            if e1.dst == v {
                continue; // a self-loop cannot serve as the intermediate
            }
            if e1.length + seq_len[e1.dst] <= seq_len[v] {
                all_cover[v] = true;
            }
            let ji = pre.vertex_index(e1.dst).unwrap();
            for &e2i in &pre_out[ji] {
                let e2 = &pre.edges[e2i];
                if e2.dst == e1.dst {
                    continue;
                }
                if e1.length + e2.length <= seq_len[v] {
                    set.insert(e2.dst);
                }
            }
        }
        smallset[v] = set;
    }
    let survive_out: Vec<bool> = (0..n)
        .map(|v| !all_cover[v] && smallset[v].len() < n)
        .collect();
    let mut cnt = vec![0usize; n];
    let mut n_star = 0usize;
    for v in 0..n {
        if all_cover[v] {
            continue;
        }
        n_star += 1;
        for &t in &smallset[v] {
            cnt[t] += 1;
        }
    }
    let survive_in: Vec<bool> = (0..n).map(|v| n_star > cnt[v]).collect();

    // Safety clause, evaluated on the reduced recorded graph.
    let (post_out, post_in) = post.adjacency();
    let resurrected: Vec<bool> = (0..n)
        .map(|v| {
            let vi = post.vertex_index(v).unwrap();
            let stranded = post_out[vi].is_empty() || post_in[vi].is_empty();
            stranded && (survive_out[v] || survive_in[v]) && !classified[vi]
        })
        .collect();

    BreakState {
        survive_out,
        survive_in,
        resurrected,
        smallset,
        all_cover,
    }
}

impl BreakState {
    /// Does a surviving break edge run between u and v (either direction)?
    fn break_between(&self, u: usize, v: usize) -> bool {
        let uv = !self.all_cover[u] && !self.smallset[u].contains(&v);
        let vu = !self.all_cover[v] && !self.smallset[v].contains(&u);
        uv || vu
    }
}

/// Builds the simplified graph directly: recorded overlaps, transitive
/// reduction, classified break stripping, path compression, and the hub —
/// equivalent to running the reference pipeline on the complete graph, but
/// with memory proportional to reads plus recorded overlaps.
pub fn build_simplified_graph(reads: &ReadSet, params: &SimplifyParams) -> Result<PrefixGraph> {
    if reads.is_empty() {
        return Err(Error::EmptyReadSet);
    }
    params.validate()?;
    let idx = discover_overlaps(reads, params.min_overlap);
    let pre = sparse_overlap_graph(reads, &idx);
    let reduced = reduce_sparse(&pre);
    let classified = classify_compact_uniform(&reduced, params);
    let bs = break_state(reads, &pre, &reduced, &classified);

    // A vertex may be compressed away only if, in the reference pipeline, it
    // would carry no break edge after removal: either the classifier fired
    // for it, or none of its break edges survived reduction — and no
    // safety-restored neighbor pins a break edge onto it.
    let n = reads.len();
    let resurrected_ids: Vec<usize> = (0..n).filter(|&v| bs.resurrected[v]).collect();
    let allowed: Vec<bool> = (0..n)
        .map(|v| {
            let vi = reduced.vertex_index(v).unwrap();
            let own_break = if classified[vi] {
                false
            } else {
                bs.survive_out[v] || bs.survive_in[v]
            };
            let pinned = resurrected_ids
                .iter()
                .any(|&u| u != v && bs.break_between(u, v) || (u == v));
            !own_break && !pinned
        })
        .collect();

    let compressed = compress_core(&reduced, params, &|vi: usize| {
        allowed[reduced.vertices[vi].id]
    });
    let mut final_g = add_break_hub(&compressed);
    final_g.params = Some(params.clone());
    Ok(final_g)
}

/// The reference composition on the materialized complete graph. The direct
/// construction must produce an identical graph.
pub fn reference_simplified_graph(reads: &ReadSet, params: &SimplifyParams) -> Result<PrefixGraph> {
    let g = crate::graph::build_prefix_graph(reads)?;
    let g = transitive_reduce(&g);
    let g = remove_break_edges(&g, params);
    let g = compress_paths(&g, params);
    let mut g = add_break_hub(&g);
    g.params = Some(params.clone());
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_prefix_graph;
    use crate::model::{random_genome, simulate_reads, ReadSet};

    fn rs(seqs: &[&str]) -> ReadSet {
        ReadSet::from_seqs(seqs.iter().copied()).unwrap()
    }

    fn has_edge(g: &PrefixGraph, src: usize, dst: usize) -> bool {
        g.edges.iter().any(|e| e.src == src && e.dst == dst)
    }

    #[test]
    fn reduce_removes_dominated_edge() {
        // l_01 = 2, l_12 = 2, l_02 = 4: the 0 -> 2 edge is dominated.
        let g = build_prefix_graph(&rs(&["AACCGG", "CCGGTT", "GGTTAA"])).unwrap();
        let e02 = g
            .edges
            .iter()
            .find(|e| e.src == 0 && e.dst == 2)
            .unwrap();
        assert_eq!(e02.length, 4);
        let r = transitive_reduce(&g);
        assert!(!has_edge(&r, 0, 2));
        assert!(has_edge(&r, 0, 1));
        assert!(has_edge(&r, 1, 2));
    }

    #[test]
    fn reduce_keeps_strict_triangles() {
        // Mutual overlaps of 2 on reads of length 6: the 2-cycle paths are
        // strictly longer than every direct edge, so nothing is removed.
        let g = build_prefix_graph(&rs(&["AACCGG", "GGTTAA"])).unwrap();
        let r = transitive_reduce(&g);
        assert_eq!(g.edges, r.edges);
    }

    #[test]
    fn reduce_is_idempotent() {
        let genome = random_genome(40, 9);
        let reads = simulate_reads(&genome, 12, 8, 0.0, 5).unwrap();
        let g = build_prefix_graph(&reads).unwrap();
        let r1 = transitive_reduce(&g);
        let r2 = transitive_reduce(&r1);
        assert_eq!(r1.edges, r2.edges);
    }

    #[test]
    fn reduce_protects_duplicate_chains() {
        let g = build_prefix_graph(&rs(&["ACG", "ACG"])).unwrap();
        let r = transitive_reduce(&g);
        assert!(r
            .edges
            .iter()
            .any(|e| e.src == 0 && e.dst == 1 && e.length == 0));
    }

    /// A ten-vertex unbranched chain with the full complement of break
    /// edges, built directly so no coincidental overlaps sneak in.
    fn synthetic_chain(cov: &[u64], circular: bool) -> PrefixGraph {
        let n = cov.len();
        let seq = "ACGTACGTAC".to_string();
        let mut chain: std::collections::HashSet<(usize, usize)> = Default::default();
        for v in 0..n - 1 {
            chain.insert((v, v + 1));
        }
        if circular {
            chain.insert((n - 1, 0));
        }
        let mut edges = Vec::new();
        for &(u, v) in &chain {
            edges.push(EdgeRecord::simple(u, v, 3, "ACG".into(), false));
        }
        for u in 0..n {
            for v in 0..n {
                if chain.contains(&(u, v)) {
                    continue;
                }
                edges.push(EdgeRecord::simple(u, v, 10, seq.clone(), true));
            }
        }
        edges.sort_by_key(|e| (e.src, e.dst));
        PrefixGraph {
            vertices: (0..n)
                .map(|id| VertexRecord {
                    id,
                    read_id: Some(id),
                    weight: 1,
                    coverage: cov[id],
                    seq: Some(seq.clone()),
                })
                .collect(),
            edges,
            hub: None,
            params: None,
            error_rate: None,
        }
    }

    #[test]
    fn chain_interior_breaks_removed() {
        // A circular chain with equal offsets and equal coverage: the
        // classifier fires everywhere and every break edge goes.
        let g = synthetic_chain(&[4; 10], true);
        g.validate().unwrap();
        let s = remove_break_edges(&g, &SimplifyParams::for_read_len(10));
        assert_eq!(s.edges.iter().filter(|e| e.is_break).count(), 0);
        assert_eq!(s.edges.len(), 10);
    }

    #[test]
    fn linear_chain_endpoints_keep_breaks() {
        // A linear chain strands its endpoints (no non-break in-edge at the
        // head, none out at the tail), so the safety clause keeps their
        // break edges; breaks between interior vertices disappear.
        let g = synthetic_chain(&[4; 10], false);
        let s = remove_break_edges(&g, &SimplifyParams::for_read_len(10));
        for e in &s.edges {
            if e.is_break {
                assert!(
                    e.src == 0 || e.dst == 0 || e.src == 9 || e.dst == 9,
                    "interior-to-interior break {} -> {} survived",
                    e.src,
                    e.dst
                );
            }
        }
        let (out, inc) = s.adjacency();
        let end_break = out[0].iter().chain(inc[0].iter()).any(|&e| s.edges[e].is_break);
        assert!(end_break);
    }

    #[test]
    fn nonuniform_chain_keeps_breaks() {
        // A coverage cliff beyond rho = 2 blocks the classifier for the
        // whole cycle, so every break edge survives.
        let g = synthetic_chain(&[4, 4, 4, 4, 4, 1, 1, 1, 1, 1], true);
        let before = g.edges.iter().filter(|e| e.is_break).count();
        let s = remove_break_edges(&g, &SimplifyParams::for_read_len(10));
        let after = s.edges.iter().filter(|e| e.is_break).count();
        assert_eq!(before, after);
    }

    #[test]
    fn isolated_read_keeps_break_edges() {
        let g = build_prefix_graph(&rs(&["AAAACCCC", "CCCCGGGG", "TTTTTTTT"])).unwrap();
        let r = transitive_reduce(&g);
        let before: usize = r
            .edges
            .iter()
            .filter(|e| (e.src == 2 || e.dst == 2) && e.is_break)
            .count();
        let s = remove_break_edges(&r, &SimplifyParams::for_read_len(8));
        let after: usize = s
            .edges
            .iter()
            .filter(|e| (e.src == 2 || e.dst == 2) && e.is_break)
            .count();
        assert_eq!(before, after);
    }

    #[test]
    fn compress_merges_equal_chain() {
        // v0 -> v1 -> v2 -> v3 with lengths 2,2,2 becomes one edge of
        // length 6 and multiplicity 2, plus labels concatenated.
        let mut g = PrefixGraph {
            vertices: (0..4)
                .map(|id| VertexRecord {
                    id,
                    read_id: Some(id),
                    weight: 1,
                    coverage: 2,
                    seq: Some("ACACAC".into()),
                })
                .collect(),
            edges: vec![
                EdgeRecord::simple(0, 1, 2, "AC".into(), false),
                EdgeRecord::simple(1, 2, 2, "AC".into(), false),
                EdgeRecord::simple(2, 3, 2, "AC".into(), false),
            ],
            hub: None,
            params: None,
            error_rate: None,
        };
        g.validate().unwrap();
        let c = compress_paths(&g, &SimplifyParams::for_read_len(6));
        assert_eq!(c.edges.len(), 1);
        let e = &c.edges[0];
        assert_eq!((e.src, e.dst, e.length, e.multiplicity), (0, 3, 6, 2));
        assert_eq!(e.label, "ACACAC");
        assert_eq!(c.vertices.len(), 2);
    }

    #[test]
    fn compress_respects_coverage_uniformity() {
        // Same chain, but the middle vertices' coverage differs by more
        // than rho: the merge across them is refused.
        let mut g = PrefixGraph {
            vertices: (0..4)
                .map(|id| VertexRecord {
                    id,
                    read_id: Some(id),
                    weight: 1,
                    coverage: if id < 2 { 8 } else { 2 },
                    seq: Some("ACACAC".into()),
                })
                .collect(),
            edges: vec![
                EdgeRecord::simple(0, 1, 2, "AC".into(), false),
                EdgeRecord::simple(1, 2, 2, "AC".into(), false),
                EdgeRecord::simple(2, 3, 2, "AC".into(), false),
            ],
            hub: None,
            params: None,
            error_rate: None,
        };
        g.validate().unwrap();
        let mut params = SimplifyParams::for_read_len(6);
        params.uniform_rho = 2.0;
        let c = compress_paths(&g, &params);
        // 8/2 = 4 > rho: vertices 1 and 2 cannot both be absorbed into a
        // segment spanning the coverage cliff.
        assert!(c.edges.len() >= 2, "cliff must not be merged over");
        assert!(c.edges.iter().all(|e| e.length < 6));
    }

    #[test]
    fn compress_respects_length_slack() {
        let g = PrefixGraph {
            vertices: (0..3)
                .map(|id| VertexRecord {
                    id,
                    read_id: Some(id),
                    weight: 1,
                    coverage: 2,
                    seq: Some("ACACACAC".into()),
                })
                .collect(),
            edges: vec![
                EdgeRecord::simple(0, 1, 2, "AC".into(), false),
                EdgeRecord::simple(1, 2, 6, "ACACAC".into(), false),
            ],
            hub: None,
            params: None,
            error_rate: None,
        };
        let c = compress_paths(&g, &SimplifyParams::for_read_len(8));
        assert_eq!(c.edges.len(), 2, "length gap 4 > slack 1");
    }

    #[test]
    fn compress_cycle_keeps_anchor() {
        let g = PrefixGraph {
            vertices: (0..3)
                .map(|id| VertexRecord {
                    id,
                    read_id: Some(id),
                    weight: 1,
                    coverage: 2,
                    seq: Some("ACG".into()),
                })
                .collect(),
            edges: vec![
                EdgeRecord::simple(0, 1, 1, "A".into(), false),
                EdgeRecord::simple(1, 2, 1, "C".into(), false),
                EdgeRecord::simple(2, 0, 1, "G".into(), false),
            ],
            hub: None,
            params: None,
            error_rate: None,
        };
        let c = compress_paths(&g, &SimplifyParams::for_read_len(3));
        assert_eq!(c.vertices.len(), 1);
        assert_eq!(c.vertices[0].id, 0);
        assert_eq!(c.edges.len(), 1);
        let e = &c.edges[0];
        assert_eq!((e.src, e.dst, e.length, e.multiplicity), (0, 0, 3, 2));
        assert_eq!(e.label, "ACG");
    }

    #[test]
    fn hub_replaces_break_edges() {
        let g = build_prefix_graph(&rs(&["AACC", "GGTT"])).unwrap();
        let h = add_break_hub(&g);
        assert!(h.hub.is_some());
        let hub = h.hub.unwrap();
        assert!(h.edges.iter().all(|e| !e.is_break || e.dst == hub));
        // Two vertices: 4 hub edges; v -> hub has full read length.
        let hub_edges: Vec<_> = h.edges.iter().filter(|e| h.is_hub_edge(e)).collect();
        assert_eq!(hub_edges.len(), 4);
        for v in 0..2 {
            let to_hub = h
                .edges
                .iter()
                .find(|e| e.src == v && e.dst == hub)
                .unwrap();
            assert_eq!(to_hub.length, 4);
            assert_eq!(to_hub.label, g.vertex(v).unwrap().seq.clone().unwrap());
            let back = h
                .edges
                .iter()
                .find(|e| e.src == hub && e.dst == v)
                .unwrap();
            assert_eq!(back.length, 0);
        }
        h.validate().unwrap();
    }

    #[test]
    fn simplified_graph_matches_reference_pipeline() {
        // Same vertices and edge multisets on assorted small instances.
        let params = SimplifyParams::for_read_len(8);
        let mut cases: Vec<ReadSet> = vec![
            rs(&["ACGG", "GGAC"]),
            rs(&["AACC", "GGTT"]),
            rs(&["ACG", "ACG", "ACG"]),
            rs(&["AAAA", "AAAT"]),
        ];
        for seed in 0..8u64 {
            let genome = random_genome(30 + 3 * seed as usize, seed);
            let n = 6 + (seed as usize % 7);
            cases.push(simulate_reads(&genome, n, 8, 0.0, seed + 100).unwrap());
        }
        for (ci, reads) in cases.iter().enumerate() {
            let reference = reference_simplified_graph(reads, &params).unwrap();
            let direct = build_simplified_graph(reads, &params).unwrap();
            let canon = |g: &PrefixGraph| {
                let mut vs: Vec<_> = g
                    .vertices
                    .iter()
                    .map(|v| (v.id, v.read_id, v.weight, v.coverage))
                    .collect();
                vs.sort();
                let mut es: Vec<_> = g
                    .edges
                    .iter()
                    .map(|e| (e.src, e.dst, e.length, e.label.clone(), e.multiplicity))
                    .collect();
                es.sort();
                (vs, es)
            };
            assert_eq!(canon(&reference), canon(&direct), "case {ci}");
        }
    }

    #[test]
    fn simplified_hub_edge_budget() {
        let genome = random_genome(60, 21);
        let reads = simulate_reads(&genome, 30, 10, 0.0, 22).unwrap();
        let params = SimplifyParams::for_read_len(10);
        let g = build_simplified_graph(&reads, &params).unwrap();
        let hub_edges = g.edges.iter().filter(|e| g.is_hub_edge(e)).count();
        assert_eq!(hub_edges, 2 * (g.n_vertices() - 1));
        g.validate().unwrap();
    }
}
