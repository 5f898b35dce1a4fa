//! Block preconditioners and solve drivers for the 3×3 augmented system
//!
//! ```text
//! K = [ R    0     Obs ] [λ]   [d]
//!     [ 0    D     F⁻¹ ] [μ] = [f]
//!     [ Obsᵀ F⁻ᵀ   0   ] [s]   [0]
//! ```
//!
//! whose negative Schur complement is `S = F⁻ᵀ D⁻¹ F⁻¹ + Obsᵀ R⁻¹ Obs`.

mod blocks;
mod solve;

pub use blocks::{BlockPreconditioner, BlockVariant, SchurApprox, SchurKind};
pub use solve::{
    safeguarded_inner_solve, solve_saddle, SafeguardOutcome, SaddleSolution, SaddleSolver,
    SAFEGUARD_CAP,
};
