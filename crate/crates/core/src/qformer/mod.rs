//! Query-based connector with hand/object box heads and its Stage-1
//! training objectives.

pub mod connector;
pub mod giou;
pub mod gradcheck;
pub mod loss;
pub mod matching;
pub mod scene;
pub mod train;

pub use connector::{Connector, ConnectorConfig, ConnectorError, ConnectorOutput, LossParts, QuerySet};
pub use giou::giou;
pub use gradcheck::{grad_check, GradCheckError, GradCheckReport};
pub use loss::{loss_ho, loss_lm, loss_total, BoxPrediction, LossError};
pub use matching::{hungarian_match, MatchError};
pub use scene::{PatchGrid, Scene, SceneError, SceneSpec};
pub use train::{train_toy, TrainError, TrainReport};
