//! Ground-truth data generators.

mod ode;
mod particles;
mod spectral;

pub use ode::{integrate_fn, integrate_ode, BuiltinOde, OdeModel};
pub use particles::{histogram_density, simulate_ips, Diffusion, Drift, InitialDistribution, ParticleEnsemble, Trajectories};
pub use spectral::{band_limited_initial, integrate_ks, integrate_periodic, ks_space_axis, ks_terms, ks_time_axis, SpectralTerm, KS_DT};
