//! Concrete model implementations.

mod lti;
mod maglev;
mod mlp;

pub use lti::LtiFirstOrder;
pub use maglev::{Maglev, MAGLEV_K0_TRUE, MAGLEV_KM_TRUE};
pub use mlp::MlpNio;
