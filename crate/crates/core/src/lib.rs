//! Joint user grouping, group scheduling and precoding for multigroup
//! multicast downlinks, maximizing multicast energy efficiency (MEE),
//! energy efficiency (EE) or the number of scheduled users (SUM) with
//! convex-concave procedure iterations over penalized DC reformulations.

pub mod ccp;
pub mod cone;
pub mod criteria;
pub mod error;
pub mod oracle;
pub mod state;
pub mod surrogate;
pub mod system;

pub use error::{Error, Result};
