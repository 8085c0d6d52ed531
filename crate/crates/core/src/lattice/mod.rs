//! The `(T+1) x (U+1)` alignment lattice of a single token sequence.

mod forward;
mod grid;
mod normalize;
mod oracle;

pub use forward::{backward_table, forward_backward, forward_score, forward_table, occupancy_gradients};
pub use grid::{
    LabelSequence, Move, MoveKind, Path, Termination, TokenSequence, Topology, WeightGrid, BLANK,
};
pub use normalize::{apply_partial_normalization, normalize_row, partial_normalization_vjp};
pub use oracle::{
    brute_force_score, brute_force_score_capped, enumerate_paths, enumerate_paths_capped,
    path_to_labels, DEFAULT_ORACLE_CAP,
};
