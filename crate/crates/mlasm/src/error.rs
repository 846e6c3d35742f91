use thiserror::Error;

/// Errors shared across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("read set is empty")]
    EmptyReadSet,

    #[error("read {id}: invalid character {ch:?} (alphabet is A, C, G, T)")]
    InvalidCharacter { id: usize, ch: char },

    #[error("read {id} is empty")]
    EmptySequence { id: usize },

    #[error("assembly has no sequence (total length 0)")]
    EmptyAssembly,

    #[error("read length {read_len} exceeds genome length {genome_len}")]
    ReadTooLong { read_len: usize, genome_len: usize },

    #[error("invalid parameter: {0}")]
    BadParameter(String),

    #[error("FASTA parse error at line {line}: {msg}")]
    Fasta { line: usize, msg: String },

    #[error("program is infeasible: {0}")]
    Infeasible(String),

    #[error("no degree-feasible edge selection: vertex {vertex} cannot be matched")]
    MatchingInfeasible { vertex: usize },

    #[error("edge multiset is not Eulerian: vertex {vertex} has in-degree {indeg}, out-degree {outdeg}")]
    DegreeImbalance {
        vertex: usize,
        indeg: usize,
        outdeg: usize,
    },

    #[error("vertex {vertex} has zero outgoing flow")]
    ZeroOutflow { vertex: usize },

    #[error("brute-force search space too large: {size:.3e} > {limit:.3e}")]
    SearchSpaceTooLarge { size: f64, limit: f64 },

    #[error("graph is malformed: {0}")]
    MalformedGraph(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
