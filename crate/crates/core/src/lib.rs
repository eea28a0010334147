pub mod error;
pub mod logval;
pub mod special_fn;
pub mod kernels;
pub mod hunt;
pub mod pde;
pub mod mc;
pub mod exec;
pub mod certify;
pub(crate) mod quadrature;

pub use error::{Error, Result};
pub use exec::Execution;
pub use logval::LogValue;
