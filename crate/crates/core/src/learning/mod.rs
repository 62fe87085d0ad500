//! Losses, metrics, gradient checks and training loops.
//!
//! Losses are computed outside the autodiff tape and return analytic
//! gradients with respect to the network outputs, which are then fed to
//! [`crate::tape::Tape::backward`] as seeds. Pose losses work in metric units
//! relative to the view centroid: control points are `R p + s t` for a
//! normalized-frame translation `t` and view scale `s`.
//!
//! The implicit loss matches each prediction to its nearest ground-truth
//! grasp by default. Canonical IMLE runs the other way (each target to its
//! nearest sample); [`MatchDirection::TruthToPrediction`] selects that.

pub mod eval;
pub mod gradcheck;
pub mod losses;
pub mod metrics;
pub mod train;

pub use eval::{esm_by_object, evaluator_accuracy, heatmap_summary, mean_esm, EsmEntry, GraspSampler, HeatmapSummary};
pub use gradcheck::{grad_check, GradCheck, Probe};
pub use losses::{
    affordance_loss, control_point_l1, dice_loss, evaluator_bce, implicit_loss, implicit_loss_directed, LossReport, MatchDirection,
    PoseGrad, RawPose,
};
pub use metrics::{affordance_metrics, esm, AffordanceMetrics, EsmResult, LabelMetrics};
pub use train::{train_affordance, train_evaluator, train_generator, train_vae, Trace, TraceRow, TrainConfig};
