//! Compactly supported test functions, their stencils, and data-driven
//! radius selection.

mod family;
mod stencil;
mod support;

pub use family::{hermite_he, Family, TestFunction, HERMITE_CUTOFF};
pub use stencil::{discretize, Stencil};
pub use support::{relative_tail, SupportChoice, SupportSelector};

/// Default family for an axis that needs derivatives up to `k_max`:
/// a polynomial bump of order `k_max + 3` on the unit interval.
pub fn default_for_order(k_max: usize) -> TestFunction {
    TestFunction::poly_bump(k_max as u32 + 3, 1.0, k_max).expect("order k_max + 3 always suffices")
}
