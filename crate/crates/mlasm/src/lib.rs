//! Maximum-likelihood sequence assembly toolkit.
//!
//! The pipeline: build the prefix graph over a read set, simplify it while
//! preserving the optimum, solve the convex flow relaxation of the
//! maximum-likelihood assembly problem with a certified gap, then either
//! round to an Eulerian assembly and emit contigs, or answer
//! sequence-probability queries directly on the fractional solution.

pub mod error;
pub mod error_model;
pub mod fasta;
pub mod graph;
pub mod model;
pub mod oracle;
pub mod query;
pub mod rounding;
pub mod simplify;
pub mod solver;

pub use error::{Error, Result};
pub use graph::{build_prefix_graph, edge_length, EdgeRecord, PrefixGraph, VertexRecord};
pub use model::{
    count_occurrences, log_likelihood, random_genome, simulate_reads, Assembly, Read, ReadSet,
};
pub use simplify::{
    add_break_hub, build_simplified_graph, compress_paths, remove_break_edges, transitive_reduce,
    SimplifyParams,
};
pub use solver::{
    build_program, initial_point, solve, verify_solution, ConvexProgram, FractionalSolution,
    SolveOptions,
};
