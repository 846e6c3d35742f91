//! Erroneous-read extension: multi-edges per read pair with overlap
//! probabilities, probability-adjusted outflows, and the stricter (plus
//! heuristically relaxed) transitive rules.
//!
//! Every overlap offset gets its own edge, weighted by the probability of
//! reading the destination's overlap region from the source's sequence
//! under a uniform substitution model. Offsets start at 1 for distinct
//! reads so no zero-length cycle can form; identical reads keep their
//! zero-length chain. A probability floor bounds the multi-edge blowup.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EdgeRecord, PrefixGraph, VertexRecord};
use crate::model::ReadSet;
use crate::solver::VertexY;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorParams {
    /// Per-base substitution rate of the sequencing model.
    pub error_rate: f64,
    /// Mean of the error rate, for the heuristic transitive relaxation.
    pub mu: f64,
    /// Standard deviation of the error rate.
    pub sigma: f64,
    /// Number of standard deviations in the relaxation factor.
    pub d: f64,
    pub min_overlap: usize,
}

impl Default for ErrorParams {
    fn default() -> Self {
        ErrorParams {
            error_rate: 0.0,
            mu: 0.0,
            sigma: 0.0,
            d: 0.0,
            min_overlap: 1,
        }
    }
}

impl ErrorParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.error_rate) {
            return Err(Error::BadParameter("error_rate must be in [0, 1)".into()));
        }
        if self.mu < 0.0 || self.sigma < 0.0 || self.d < 0.0 {
            return Err(Error::BadParameter(
                "mu, sigma, d must be nonnegative".into(),
            ));
        }
        if self.mu + self.d * self.sigma >= 1.0 {
            return Err(Error::BadParameter(
                "mu + d * sigma must be below 1".into(),
            ));
        }
        if self.min_overlap == 0 {
            return Err(Error::BadParameter("min_overlap must be >= 1".into()));
        }
        Ok(())
    }

    /// Retention floor for an overlap of the given length.
    pub fn probability_floor(&self, overlap_len: usize) -> f64 {
        (1.0 - self.mu - self.d * self.sigma).powi(overlap_len as i32) * 1e-3
    }
}

/// Probability of observing the overlap region of `b` when sequencing from
/// `a` split at `split`: the product over overlapping positions of the
/// uniform substitution model.
pub fn overlap_probability(a: &str, b: &str, split: usize, eps: f64) -> f64 {
    let ab = a.as_bytes();
    let bb = b.as_bytes();
    let olen = ab.len() - split;
    debug_assert!(olen <= bb.len());
    let mut p = 1.0;
    for i in 0..olen {
        p *= if ab[split + i] == bb[i] {
            1.0 - eps
        } else {
            eps / 3.0
        };
    }
    p
}

/// Builds the multi-edge overlap graph: one edge per ordered read pair and
/// offset, for overlaps at least `min_overlap` long whose probability
/// clears the floor. Identical reads are chained with zero-length edges.
pub fn build_error_graph(reads: &ReadSet, params: &ErrorParams) -> Result<PrefixGraph> {
    if reads.is_empty() {
        return Err(Error::EmptyReadSet);
    }
    params.validate()?;
    let eps = params.error_rate;
    let n = reads.len();

    let mut groups: std::collections::HashMap<&str, Vec<usize>> = Default::default();
    for r in reads.reads() {
        groups.entry(r.seq.as_str()).or_default().push(r.id);
    }
    let mut chain_next: std::collections::HashMap<usize, usize> = Default::default();
    for ids in groups.values() {
        for w in ids.windows(2) {
            chain_next.insert(w[0], w[1]);
        }
    }

    let mut edges = Vec::new();
    for u in 0..n {
        let a = reads.seq(u);
        for v in 0..n {
            let b = reads.seq(v);
            if u != v && a == b && chain_next.get(&u) == Some(&v) {
                // Zero-length chain edge: the full-sequence self-alignment.
                let p = (1.0 - eps).powi(a.len() as i32).max(f64::MIN_POSITIVE);
                edges.push(EdgeRecord {
                    p,
                    p_src: p,
                    ..EdgeRecord::simple(u, v, 0, String::new(), false)
                });
                continue;
            }
            // Offsets start at 1: a zero-length edge between distinct reads
            // would allow zero-length cycles.
            if a.len() < params.min_overlap + 1 {
                continue;
            }
            let lo = 1.max(a.len().saturating_sub(b.len()));
            let hi = a.len() - params.min_overlap;
            let mut overlap_id = 0u32;
            for split in lo..=hi {
                let olen = a.len() - split;
                let p = overlap_probability(a, b, split, eps);
                if p < params.probability_floor(olen) || p <= 0.0 {
                    continue;
                }
                edges.push(EdgeRecord {
                    p,
                    p_src: p,
                    overlap_id,
                    ..EdgeRecord::simple(u, v, split, a[..split].to_string(), false)
                });
                overlap_id += 1;
            }
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
        error_rate: Some(eps),
    };
    g.recompute_coverage();
    g.validate()?;
    Ok(g)
}

/// Probability-adjusted outflow per weighted vertex: y_v is the sum of
/// p * x over v's out-edges. With all p = 1 this is the plain outflow.
pub fn adjusted_y(g: &PrefixGraph, x: &[f64]) -> Result<Vec<VertexY>> {
    if x.len() != g.edges.len() {
        return Err(Error::BadParameter(
            "flow vector does not match graph edge count".into(),
        ));
    }
    let mut acc: std::collections::HashMap<usize, f64> = Default::default();
    for (e, &xe) in g.edges.iter().zip(x.iter()) {
        *acc.entry(e.src).or_insert(0.0) += e.p_src * xe;
    }
    let mut ys: Vec<VertexY> = g
        .vertices
        .iter()
        .filter(|v| v.weight > 0)
        .map(|v| VertexY {
            id: v.id,
            y: acc.get(&v.id).copied().unwrap_or(0.0),
        })
        .collect();
    ys.sort_by_key(|v| v.id);
    Ok(ys)
}

/// Transitive reduction under errors. The strict rule removes (i, k) when a
/// two-edge path is both no longer and no less probable. The heuristic
/// relaxation discounts the direct edge by (1 - mu - d sigma)^l_ik.
pub fn error_transitive_reduce(
    g: &PrefixGraph,
    params: &ErrorParams,
    heuristic: bool,
) -> Result<PrefixGraph> {
    params.validate()?;
    let discount_base = 1.0 - params.mu - params.d * params.sigma;

    let mut out: std::collections::HashMap<usize, Vec<usize>> = Default::default();
    for (ei, e) in g.edges.iter().enumerate() {
        out.entry(e.src).or_default().push(ei);
    }
    let mut pair: std::collections::HashMap<(usize, usize), Vec<usize>> = Default::default();
    for (ei, e) in g.edges.iter().enumerate() {
        pair.entry((e.src, e.dst)).or_default().push(ei);
    }

    let mut removed = vec![false; g.edges.len()];
    for e1 in g.edges.iter() {
        if e1.src == e1.dst {
            continue;
        }
        let j = e1.dst;
        for &e2i in out.get(&j).map_or(&[][..], |v| v.as_slice()) {
            let e2 = &g.edges[e2i];
            if e2.dst == j {
                continue;
            }
            let via_len = e1.length + e2.length;
            let via_p = e1.p * e2.p;
            if let Some(cands) = pair.get(&(e1.src, e2.dst)) {
                for &ci in cands {
                    let c = &g.edges[ci];
                    if c.length == 0 || c.length < via_len {
                        continue;
                    }
                    let strict = c.p <= via_p;
                    let relaxed = heuristic
                        && c.p * discount_base.powi(c.length as i32) <= via_p;
                    if strict || relaxed {
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
    Ok(out_g)
}
