pub mod baselines;
pub mod crowd;
pub mod dgp;
pub mod error;
pub mod estimate;
pub mod harness;
pub mod io;
pub mod oracle;
pub mod poly;
pub mod qmc;
pub mod score;
pub mod sech;
pub mod wasserstein;

pub use error::{Error, Result};
pub use score::{MomentPair, Score2, Snapshot2, SnapshotBatch};
