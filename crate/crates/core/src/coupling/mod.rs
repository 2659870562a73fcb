//! Shared-path coupling of the autoregression and regression score sums.

pub mod berbee;
pub mod embed;
pub mod gaps;
pub mod mixing;
pub mod replicate;
pub mod skorokhod;
pub mod wiener;

pub use skorokhod::{skorokhod_stop, Barriers, ScoreLaw, Stop};
pub use wiener::{BrownianPath, Scan, WienerFamily};
