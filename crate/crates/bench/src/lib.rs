//! Fixtures shared by the benchmarks.

use tri_lbm::analysis::param_set_for;
use tri_lbm::harness::build_triangle;
use tri_lbm::mesh::WallPlacement;
use tri_lbm::{Lattice, SchemeKind, SchemeParams};

/// Triangle lattice with `n` nodes (or triangles) per edge and the named set scaled to it.
pub fn triangle_case(scheme: SchemeKind, n: usize, set: &str) -> (Lattice, SchemeParams) {
    let lattice = build_triangle(scheme, n, 1.0, WallPlacement::Edge).expect("lattice");
    let params = param_set_for(scheme, set).expect("parameter set").params.with_dx(lattice.dx);
    (lattice, params)
}
