//! Preconditioners: first-level control-variable transforms, limited-memory
//! preconditioners (LMPs) and approximate-coupling preconditioners for the
//! weak-state system.

mod first_level;
mod ftilde;
mod lmp;

pub use first_level::first_level;
pub use ftilde::{ftilde_coupling, ftilde_factor, ftilde_preconditioner, FtildeChoice};
pub use lmp::{
    build_qn_lmp, build_ritz_lmp, choose_theta, ritz_lmp, Lmp, SpectralLmp, ThetaMode,
    THETA_SCAN_POINTS,
};
