mod evaluate;
mod info;
mod interpret;
mod predict;
mod synth;
mod train;

pub use evaluate::{cmd_evaluate, EvaluateArgs};
pub use info::{cmd_info, BranchInfo, InfoArgs, ModelInfo};
pub use interpret::{cmd_interpret, InterpretArgs};
pub use predict::{cmd_predict, PredictArgs, RecordingPrediction};
pub use synth::{cmd_synth, SynthArgs, SynthOutcome};
pub use train::{cmd_train, TrainArgs, TrainOutcome};
