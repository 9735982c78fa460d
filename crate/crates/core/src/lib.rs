//! RSSI fingerprinting for LoRa-style networks: per-gateway RSSI → distance
//! models, trilateration, a calibrated channel simulator and the evaluation
//! tables that tie them together.

// `!(x > 0.0)` is how NaN gets rejected; index loops read better in the solvers.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod dataset;
pub mod evaluate;
pub mod numopt;
pub mod pipeline;
pub mod position;
pub mod ranging;
pub mod simulate;

pub use dataset::{Environment, FingerprintRecord, Landmark, RangingDataset, RawUplink, SitePlan};
pub use evaluate::{AccuracyRow, DNormPolicy, TestPointProfile};
pub use position::{trilaterate, FixStatus, PositionFix};
pub use ranging::{predict_distance, FitOptions, ModelKind, RangingModel, TrainReport};
pub use simulate::{ChannelParams, ScenarioFile, SimScenario};
