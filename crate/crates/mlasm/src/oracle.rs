//! Brute-force ground truth for tests: exhaustive integer circulations,
//! exhaustive assembly enumeration, exhaustive degree-feasible edge
//! selection, and a circular-occurrence query oracle. Every search carries a
//! hard size cap and errors out instead of grinding.

use crate::error::{Error, Result};
use crate::graph::PrefixGraph;
use crate::model::{circular_occurrences, log_likelihood, Assembly, ReadSet, ALPHABET};

const SEARCH_LIMIT: f64 = 1e7;

/// An integer circulation of exact total length with its objective
/// sum_v w_v ln(n_v / L) + sum_e m_e ln(x_e / L).
#[derive(Debug, Clone)]
pub struct IntegerSolution {
    /// Per graph edge.
    pub x: Vec<u64>,
    /// Visit count per weighted vertex id.
    pub counts: Vec<(usize, u64)>,
    pub total_len: u64,
    pub objective: f64,
}

/// Exhaustive maximum over integer circulations with total length exactly
/// `target_len` and per-edge flow at most `x_max`. Ties resolve to the
/// lexicographically smallest flow vector.
pub fn ip_bruteforce(g: &PrefixGraph, target_len: u64, x_max: u64) -> Result<IntegerSolution> {
    g.validate()?;
    let m = g.edges.len();
    let space = ((x_max + 1) as f64).powi(m as i32);
    if space > SEARCH_LIMIT {
        return Err(Error::SearchSpaceTooLarge {
            size: space,
            limit: SEARCH_LIMIT,
        });
    }
    let n = g.n_vertices();
    let heads: Vec<usize> = g
        .edges
        .iter()
        .map(|e| g.vertex_index(e.dst).unwrap())
        .collect();
    let tails: Vec<usize> = g
        .edges
        .iter()
        .map(|e| g.vertex_index(e.src).unwrap())
        .collect();

    let mut x = vec![0u64; m];
    let mut net = vec![0i64; n];
    let mut out_count = vec![0u64; n];
    let mut len = 0u64;
    let mut best: Option<(f64, Vec<u64>)> = None;

    // Depth-first over edge flows with a running-length prune.
    fn rec(
        g: &PrefixGraph,
        heads: &[usize],
        tails: &[usize],
        ei: usize,
        x: &mut Vec<u64>,
        net: &mut Vec<i64>,
        out_count: &mut Vec<u64>,
        len: &mut u64,
        target: u64,
        x_max: u64,
        best: &mut Option<(f64, Vec<u64>)>,
    ) {
        if ei == x.len() {
            if *len != target || net.iter().any(|&v| v != 0) {
                return;
            }
            let mut obj = 0.0f64;
            let lf = target as f64;
            for (vi, v) in g.vertices.iter().enumerate() {
                if v.weight > 0 {
                    if out_count[vi] == 0 {
                        obj = f64::NEG_INFINITY;
                        break;
                    }
                    obj += v.weight as f64 * (out_count[vi] as f64 / lf).ln();
                }
            }
            if obj.is_finite() {
                for (e, &xe) in g.edges.iter().zip(x.iter()) {
                    if e.multiplicity > 0 {
                        if xe == 0 {
                            obj = f64::NEG_INFINITY;
                            break;
                        }
                        obj += e.multiplicity as f64 * (xe as f64 / lf).ln();
                    }
                }
            }
            let better = match best {
                None => true,
                Some((b, _)) => obj > *b,
            };
            if better {
                *best = Some((obj, x.clone()));
            }
            return;
        }
        let el = g.edges[ei].length as u64;
        for v in 0..=x_max {
            if *len + v * el > target {
                break;
            }
            x[ei] = v;
            net[heads[ei]] += v as i64;
            net[tails[ei]] -= v as i64;
            out_count[tails[ei]] += v;
            *len += v * el;
            rec(
                g,
                heads,
                tails,
                ei + 1,
                x,
                net,
                out_count,
                len,
                target,
                x_max,
                best,
            );
            *len -= v * el;
            out_count[tails[ei]] -= v;
            net[heads[ei]] -= v as i64;
            net[tails[ei]] += v as i64;
            x[ei] = 0;
        }
    }
    rec(
        g,
        &heads,
        &tails,
        0,
        &mut x,
        &mut net,
        &mut out_count,
        &mut len,
        target_len,
        x_max,
        &mut best,
    );

    let (objective, x) = best.ok_or_else(|| {
        Error::Infeasible(format!(
            "no integer circulation of length {target_len} with x <= {x_max}"
        ))
    })?;
    let mut counts = Vec::new();
    for (vi, v) in g.vertices.iter().enumerate() {
        if v.weight > 0 {
            let c: u64 = g
                .edges
                .iter()
                .zip(x.iter())
                .filter(|(e, _)| g.vertex_index(e.src).unwrap() == vi)
                .map(|(_, &xe)| xe)
                .sum();
            counts.push((v.id, c));
        }
    }
    Ok(IntegerSolution {
        x,
        counts,
        total_len: target_len,
        objective,
    })
}

/// Exhaustively scores every circular string of length `l` and returns an
/// argmax of the log-likelihood (first in lexicographic order).
pub fn enumerate_best_assembly(reads: &ReadSet, l: usize) -> Result<(Assembly, f64)> {
    if reads.is_empty() {
        return Err(Error::EmptyReadSet);
    }
    let space = 4f64.powi(l as i32);
    if l == 0 || space > SEARCH_LIMIT {
        return Err(Error::SearchSpaceTooLarge {
            size: space,
            limit: SEARCH_LIMIT,
        });
    }
    let mut best: Option<(f64, String)> = None;
    let mut buf = vec![b'A'; l];
    let total = 4usize.pow(l as u32);
    for idx in 0..total {
        let mut rem = idx;
        for slot in buf.iter_mut() {
            *slot = ALPHABET[rem % 4];
            rem /= 4;
        }
        let cand = String::from_utf8(buf.clone()).unwrap();
        let asm = Assembly {
            contigs: vec![cand],
        };
        let ll = log_likelihood(reads, &asm)?;
        let better = match &best {
            None => true,
            Some((b, _)) => ll > *b,
        };
        if better {
            best = Some((ll, asm.contigs.into_iter().next().unwrap()));
        }
    }
    let (ll, s) = best.unwrap();
    Ok((Assembly { contigs: vec![s] }, ll))
}

/// Exhaustive minimum-cost edge multiset with out-degree = in-degree = n_v
/// at every counted vertex; the hub's degree is free up to `hub_cap`.
/// Mirrors `rounding::select_edges` as its ground truth.
pub fn matching_bruteforce(
    g: &PrefixGraph,
    counts: &[(usize, u64)],
    hub_cap: u64,
) -> Result<(u64, Vec<(usize, u64)>)> {
    let total: u64 = counts.iter().map(|&(_, n)| n).sum();
    if total > 7 {
        return Err(Error::SearchSpaceTooLarge {
            size: total as f64,
            limit: 7.0,
        });
    }
    let n = g.n_vertices();
    let mut need_out = vec![0u64; n];
    let mut need_in = vec![0u64; n];
    for &(id, c) in counts {
        let vi = g
            .vertex_index(id)
            .ok_or_else(|| Error::BadParameter(format!("unknown vertex {id}")))?;
        need_out[vi] = c;
        need_in[vi] = c;
    }
    let hub_vi = g.hub.map(|h| g.vertex_index(h).unwrap());

    let mut best: Option<(u64, Vec<u64>)> = None;
    let hub_degrees: Vec<u64> = match hub_vi {
        Some(_) => (0..=hub_cap).collect(),
        None => vec![0],
    };
    for hub_deg in hub_degrees {
        if let Some(hv) = hub_vi {
            need_out[hv] = hub_deg;
            need_in[hv] = hub_deg;
        }
        let mut x = vec![0u64; g.edges.len()];
        let mut out_rem = need_out.clone();
        let mut in_rem = need_in.clone();
        fn rec(
            g: &PrefixGraph,
            ei: usize,
            x: &mut Vec<u64>,
            out_rem: &mut Vec<u64>,
            in_rem: &mut Vec<u64>,
            cost: u64,
            best: &mut Option<(u64, Vec<u64>)>,
        ) {
            if let Some((b, _)) = best {
                if cost >= *b {
                    return;
                }
            }
            if ei == g.edges.len() {
                if out_rem.iter().all(|&v| v == 0) && in_rem.iter().all(|&v| v == 0) {
                    *best = Some((cost, x.clone()));
                }
                return;
            }
            let e = &g.edges[ei];
            let si = g.vertex_index(e.src).unwrap();
            let di = g.vertex_index(e.dst).unwrap();
            let cap = out_rem[si].min(in_rem[di]);
            for v in 0..=cap {
                x[ei] = v;
                out_rem[si] -= v;
                in_rem[di] -= v;
                rec(g, ei + 1, x, out_rem, in_rem, cost + v * e.length as u64, best);
                out_rem[si] += v;
                in_rem[di] += v;
                x[ei] = 0;
            }
        }
        rec(g, 0, &mut x, &mut out_rem, &mut in_rem, 0, &mut best);
    }
    if let Some(hv) = hub_vi {
        need_out[hv] = 0;
        need_in[hv] = 0;
    }
    let (cost, x) = best.ok_or_else(|| {
        let stuck = (0..n)
            .find(|&v| need_out[v] > 0)
            .map(|v| g.vertices[v].id)
            .unwrap_or(0);
        Error::MatchingInfeasible { vertex: stuck }
    })?;
    let multiset = x
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > 0)
        .map(|(ei, &v)| (ei, v))
        .collect();
    Ok((cost, multiset))
}

/// Probability of observing `s` in a known assembly: circular occurrences
/// over total length.
pub fn occurrence_query_oracle(assembly: &Assembly, s: &str) -> f64 {
    if s.is_empty() {
        return 1.0;
    }
    let l = assembly.total_len();
    let occ: usize = assembly
        .contigs
        .iter()
        .map(|c| circular_occurrences(c, s))
        .sum();
    occ as f64 / l as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_prefix_graph;

    fn rs(seqs: &[&str]) -> ReadSet {
        ReadSet::from_seqs(seqs.iter().copied()).unwrap()
    }

    #[test]
    fn ip_two_read_cycle() {
        let g = build_prefix_graph(&rs(&["ACGG", "GGAC"])).unwrap();
        let sol = ip_bruteforce(&g, 4, 1).unwrap();
        assert!((sol.objective - 2.0 * 0.25f64.ln()).abs() < 1e-12);
        let x01 = g
            .edges
            .iter()
            .zip(sol.x.iter())
            .find(|(e, _)| e.src == 0 && e.dst == 1)
            .unwrap()
            .1;
        assert_eq!(*x01, 1);
        assert_eq!(sol.counts, vec![(0, 1), (1, 1)]);
    }

    #[test]
    fn ip_doubled_self_loop() {
        let g = build_prefix_graph(&rs(&["ACGG"])).unwrap();
        let sol = ip_bruteforce(&g, 8, 2).unwrap();
        assert_eq!(sol.x[0], 2);
        assert_eq!(sol.counts, vec![(0, 2)]);
        assert!((sol.objective - (2.0f64 / 8.0).ln()).abs() < 1e-12);
    }

    #[test]
    fn ip_infeasible_below_shortest_cycle() {
        let g = build_prefix_graph(&rs(&["ACGG"])).unwrap();
        assert!(matches!(
            ip_bruteforce(&g, 3, 2),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn ip_search_cap() {
        let g = build_prefix_graph(&rs(&["ACGG", "GGAC", "CGGA", "GACG"])).unwrap();
        assert!(matches!(
            ip_bruteforce(&g, 4, 3),
            Err(Error::SearchSpaceTooLarge { .. })
        ));
    }

    #[test]
    fn best_assembly_recovers_rotated_genome() {
        let reads = rs(&["ACGT", "CGTA", "GTAC", "TACG"]);
        let (asm, ll) = enumerate_best_assembly(&reads, 4).unwrap();
        let contig = &asm.contigs[0];
        let doubled = format!("{}{}", "ACGT", "ACGT");
        assert!(doubled.contains(contig), "contig {contig} not a rotation");
        assert_eq!(ll, 4.0 * 0.25f64.ln());
    }

    #[test]
    fn best_assembly_trivial() {
        let (asm, ll) = enumerate_best_assembly(&rs(&["AA"]), 2).unwrap();
        assert_eq!(asm.contigs[0], "AA");
        assert_eq!(ll, 0.0); // both rotations of "AA" match: 2/2
    }

    #[test]
    fn matching_two_vertices() {
        let g = build_prefix_graph(&rs(&["ACGG", "GGAC"])).unwrap();
        let (cost, multiset) = matching_bruteforce(&g, &[(0, 1), (1, 1)], 0).unwrap();
        assert_eq!(cost, 4);
        let picked: Vec<(usize, usize)> = multiset
            .iter()
            .map(|&(ei, _)| (g.edges[ei].src, g.edges[ei].dst))
            .collect();
        assert!(picked.contains(&(0, 1)) && picked.contains(&(1, 0)));
    }

    #[test]
    fn matching_single_self_loop() {
        let g = build_prefix_graph(&rs(&["ACGG"])).unwrap();
        let (cost, multiset) = matching_bruteforce(&g, &[(0, 1)], 0).unwrap();
        assert_eq!(cost, 4);
        assert_eq!(multiset.len(), 1);
    }

    #[test]
    fn query_oracle_cases() {
        let asm = Assembly {
            contigs: vec!["ACGG".into()],
        };
        assert_eq!(occurrence_query_oracle(&asm, "CG"), 0.25);
        assert_eq!(occurrence_query_oracle(&asm, ""), 1.0);
        assert_eq!(occurrence_query_oracle(&asm, "GGA"), 0.25); // wraps
        assert_eq!(occurrence_query_oracle(&asm, "G"), 0.5);
    }
}
