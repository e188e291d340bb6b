//! Test support: instance generators and a brute-force oracle.

pub mod generate;
pub mod oracle;

pub use generate::{
    feasible_fkl_instance, psd_forest_matrix, random_forest_qcqp, random_psd_forest_matrix, random_tree_edges,
    random_tridiagonal, random_trs, shape_edges, Shape,
};
pub use oracle::{audit_phase1, brute_force_qcqp, brute_force_qcqp_with, grid_search_qcqp, OracleOptions, OracleResult, Region};
