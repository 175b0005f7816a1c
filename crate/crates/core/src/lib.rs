pub mod error;
pub mod lp;
pub mod oracle;

pub use error::{Error, Result};
pub mod lcp;
pub mod qp;
pub mod circuit;
pub mod steady;
pub mod random;
pub mod transient;
pub mod mpc;
