//! Finite-element discretization, optimization and verification tools for
//! bang-bang optimal control of semilinear elliptic equations on the unit square.

pub mod conditions;
pub mod control;
pub mod error;
pub mod fem;
pub mod harness;
pub mod mesh;
pub mod objective;
pub mod optimizer;
pub mod perturbation;
pub mod quadrature;
pub mod semilinear;

pub use conditions::{audit_growth, cone_membership, verify_slide_form, GrowthAudit, GrowthParams};
pub use control::{bangbang_from_switching, distance, project_pi_h, CellBounds, ControlField};
pub use error::{Error, Result};
pub use fem::{norm, solve_spd, FeFunction, Norm, Normed, SparseOperator};
pub use mesh::{build_uniform_mesh, mesh_size, refine, Mesh};
pub use objective::{eval_j, eval_j_prime, eval_j_second, switching_function, SwitchingField};
pub use optimizer::{
    solve_discrete_ocp, solve_variational_discretization, DiscreteSolution, OptimReport,
    SolveConfig,
};
pub use perturbation::{solve_perturbed, Perturbation};
pub use semilinear::{
    solve_adjoint, solve_linearized, solve_second_order, solve_state, Deriv2, NewtonReport,
    ProblemSpec,
};
