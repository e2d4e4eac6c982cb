pub mod certify;
pub mod conic;
pub mod dynamics;
pub mod error;
pub mod linalg;
pub mod output;
pub mod pipeline;
pub mod problem;
pub mod scenario;

pub use error::{LcvxError, Result};
