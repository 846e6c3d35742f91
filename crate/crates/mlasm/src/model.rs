//! Sequence primitives and the sequencing model.
//!
//! An assembly is a set of circular contigs. The likelihood of a read set
//! given an assembly is the product over reads of (occurrences / total
//! length), reported here in natural-log units. A seeded simulator samples
//! fixed-length reads uniformly from a circular genome with an optional
//! per-base substitution error rate.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ALPHABET: [u8; 4] = [b'A', b'C', b'G', b'T'];

pub fn base_index(b: u8) -> Option<usize> {
    match b {
        b'A' => Some(0),
        b'C' => Some(1),
        b'G' => Some(2),
        b'T' => Some(3),
        _ => None,
    }
}

/// A single input read. Ids are dense 0..n-1 within a [`ReadSet`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Read {
    pub id: usize,
    pub seq: String,
}

/// An ordered collection of reads.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReadSet {
    reads: Vec<Read>,
}

impl ReadSet {
    /// Builds a read set from raw sequences, assigning dense ids in order.
    pub fn from_seqs<S: Into<String>, I: IntoIterator<Item = S>>(seqs: I) -> Result<Self> {
        let reads: Vec<Read> = seqs
            .into_iter()
            .enumerate()
            .map(|(id, s)| Read { id, seq: s.into() })
            .collect();
        let set = ReadSet { reads };
        set.validate()?;
        Ok(set)
    }

    fn validate(&self) -> Result<()> {
        if self.reads.is_empty() {
            return Err(Error::EmptyReadSet);
        }
        for (i, r) in self.reads.iter().enumerate() {
            if r.id != i {
                return Err(Error::BadParameter(format!(
                    "read ids must be dense: slot {i} has id {}",
                    r.id
                )));
            }
            if r.seq.is_empty() {
                return Err(Error::EmptySequence { id: r.id });
            }
            if let Some(ch) = r.seq.bytes().find(|b| base_index(*b).is_none()) {
                return Err(Error::InvalidCharacter {
                    id: r.id,
                    ch: ch as char,
                });
            }
        }
        Ok(())
    }

    pub fn reads(&self) -> &[Read] {
        &self.reads
    }

    pub fn len(&self) -> usize {
        self.reads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reads.is_empty()
    }

    pub fn seq(&self, id: usize) -> &str {
        &self.reads[id].seq
    }

    /// Total number of characters across all reads.
    pub fn total_len(&self) -> usize {
        self.reads.iter().map(|r| r.seq.len()).sum()
    }
}

/// A set of circular contigs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assembly {
    pub contigs: Vec<String>,
}

impl Assembly {
    pub fn new(contigs: Vec<String>) -> Result<Self> {
        let a = Assembly { contigs };
        if a.total_len() == 0 {
            return Err(Error::EmptyAssembly);
        }
        Ok(a)
    }

    /// Total length L in characters.
    pub fn total_len(&self) -> usize {
        self.contigs.iter().map(|c| c.len()).sum()
    }
}

/// Number of start positions at which `pattern` occurs in the circular
/// string `contig`. Patterns longer than the contig may still match by
/// wrapping more than once.
pub fn circular_occurrences(contig: &str, pattern: &str) -> usize {
    let c = contig.as_bytes();
    let p = pattern.as_bytes();
    if c.is_empty() {
        return 0;
    }
    if p.is_empty() {
        // Every position trivially starts an occurrence of the empty string.
        return c.len();
    }
    let n = c.len();
    (0..n)
        .filter(|&start| (0..p.len()).all(|i| c[(start + i) % n] == p[i]))
        .count()
}

/// Occurrences of `read` in `assembly`, counted circularly per contig.
pub fn count_occurrences(assembly: &Assembly, read: &Read) -> usize {
    assembly
        .contigs
        .iter()
        .map(|c| circular_occurrences(c, &read.seq))
        .sum()
}

/// Log-likelihood of the reads given the assembly: sum over reads of
/// ln(occurrences / L). Returns negative infinity when some read never
/// occurs, so candidate assemblies always stay comparable.
pub fn log_likelihood(reads: &ReadSet, assembly: &Assembly) -> Result<f64> {
    if reads.is_empty() {
        return Err(Error::EmptyReadSet);
    }
    let l = assembly.total_len();
    if l == 0 {
        return Err(Error::EmptyAssembly);
    }
    let mut total = 0.0;
    for r in reads.reads() {
        let n = count_occurrences(assembly, r);
        if n == 0 {
            return Ok(f64::NEG_INFINITY);
        }
        total += (n as f64 / l as f64).ln();
    }
    Ok(total)
}

/// A uniform random circular genome of the given length.
pub fn random_genome(len: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len)
        .map(|_| ALPHABET[rng.gen_range(0..4)] as char)
        .collect()
}

/// Samples `count` reads of length `read_len` from the circular `genome`.
/// Start positions are i.i.d. uniform; each base is independently replaced
/// by a uniformly random different base with probability `error_rate`.
/// Byte-identical output for a fixed seed.
pub fn simulate_reads(
    genome: &str,
    count: usize,
    read_len: usize,
    error_rate: f64,
    seed: u64,
) -> Result<ReadSet> {
    let g = genome.as_bytes();
    if read_len == 0 {
        return Err(Error::BadParameter("read_len must be >= 1".into()));
    }
    if count == 0 {
        return Err(Error::BadParameter("count must be >= 1".into()));
    }
    if read_len > g.len() {
        return Err(Error::ReadTooLong {
            read_len,
            genome_len: g.len(),
        });
    }
    if !(0.0..1.0).contains(&error_rate) {
        return Err(Error::BadParameter(format!(
            "error_rate must be in [0, 1): {error_rate}"
        )));
    }
    for (i, &b) in g.iter().enumerate() {
        if base_index(b).is_none() {
            return Err(Error::InvalidCharacter {
                id: i,
                ch: b as char,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seqs = Vec::with_capacity(count);
    for _ in 0..count {
        let start = rng.gen_range(0..g.len());
        let mut seq = Vec::with_capacity(read_len);
        for i in 0..read_len {
            let mut b = g[(start + i) % g.len()];
            if error_rate > 0.0 && rng.gen::<f64>() < error_rate {
                let idx = base_index(b).unwrap();
                let alt = rng.gen_range(0..3);
                let alt_idx = if alt >= idx { alt + 1 } else { alt };
                b = ALPHABET[alt_idx];
            }
            seq.push(b);
        }
        seqs.push(String::from_utf8(seq).unwrap());
    }
    ReadSet::from_seqs(seqs)
}
