//! Grasp evaluator: a set-abstraction encoder over the object cloud plus the
//! posed gripper's skeleton points (flagged by a fourth channel), followed by
//! a fully connected stack and a logistic output.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::encoder::{Encoder, EncoderConfig, EncoderInput, Grouping};
use super::{assemble_evaluator_input, rows_to_points};
use crate::error::{Error, Result};
use crate::geometry::{GraspPose, GripperSpec, Vec3};
use crate::tape::{Linear, Mat, Mlp, ParamStore, Tape, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluatorConfig {
    pub encoder: EncoderConfig,
    pub fc: Vec<usize>,
    /// Gripper skeleton points appended to the cloud (at least 7).
    pub gripper_samples: usize,
}

impl Default for EvaluatorConfig {
    fn default() -> Self {
        Self { encoder: EncoderConfig::default(), fc: vec![1024, 512, 256], gripper_samples: 64 }
    }
}

impl EvaluatorConfig {
    pub fn desk() -> Self {
        Self { encoder: EncoderConfig::desk(), fc: vec![128, 64, 32], gripper_samples: 32 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluator {
    pub config: EvaluatorConfig,
    pub encoder: Encoder,
    pub fc: Mlp,
    pub head: Linear,
    pub params: ParamStore,
}

/// Candidates scored per graph at inference.
const SCORE_CHUNK: usize = 64;

/// A combined `(N + g) x 4` input with its precomputed neighbourhoods.
pub struct PreparedInput {
    pub grouping: Grouping,
    pub flags: Mat,
}

impl Evaluator {
    pub const KIND: &'static str = "evaluator";

    pub fn new(config: &EvaluatorConfig, seed: u64) -> Result<Self> {
        config.encoder.validate()?;
        if config.fc.is_empty() || config.gripper_samples < crate::geometry::NUM_CONTROL_POINTS {
            return Err(Error::InvalidInput("evaluator needs FC widths and at least 7 gripper samples".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let encoder = Encoder::new(&mut params, "enc", &config.encoder, 1, &mut rng);
        let fc = Mlp::new(&mut params, "fc", encoder.out_width(), &config.fc, &mut rng);
        let head = Linear::new(&mut params, "head", fc.out_width(), 1, &mut rng);
        Ok(Self { config: config.clone(), encoder, fc, head, params })
    }

    /// Validates and groups one combined input.
    pub fn prepare(&self, combined: &Mat) -> Result<PreparedInput> {
        if combined.ncols() != 4 {
            return Err(Error::Shape(format!("evaluator input has {} columns, expected 4", combined.ncols())));
        }
        if combined.column(3).iter().any(|&f| f != 0.0 && f != 1.0) {
            return Err(Error::InvalidInput("flag column must be 0 or 1".into()));
        }
        let grouping = Grouping::build(&rows_to_points(combined), &self.config.encoder)?;
        let flags = combined.column(3).to_owned().insert_axis(ndarray::Axis(1));
        Ok(PreparedInput { grouping, flags })
    }

    pub fn prepare_grasp(&self, cloud: &[Vec3], pose: &GraspPose, spec: &GripperSpec) -> Result<PreparedInput> {
        self.prepare(&assemble_evaluator_input(cloud, pose, spec, self.config.gripper_samples)?)
    }

    /// `B x 1` success probabilities.
    pub fn forward_prepared(&self, tape: &mut Tape, inputs: &[&PreparedInput]) -> Result<Var> {
        let items: Vec<EncoderInput> = inputs.iter().map(|p| EncoderInput { grouping: &p.grouping, features: &p.flags }).collect();
        let feat = self.encoder.forward(tape, &items)?;
        let h = self.fc.forward(tape, feat);
        let logit = self.head.forward(tape, h);
        Ok(tape.sigmoid(logit))
    }

    /// Success probability of one combined `(N + g) x 4` input.
    pub fn forward(&self, combined: &Mat) -> Result<f64> {
        let prepared = self.prepare(combined)?;
        let mut tape = Tape::new(&self.params);
        let p = self.forward_prepared(&mut tape, &[&prepared])?;
        Ok(tape.value(p)[[0, 0]])
    }

    /// Scores poses on a cloud; `spec` must be in the cloud's units.
    pub fn score(&self, cloud: &[Vec3], poses: &[GraspPose], spec: &GripperSpec) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(poses.len());
        for chunk in poses.chunks(SCORE_CHUNK) {
            let prepared = chunk.iter().map(|p| self.prepare_grasp(cloud, p, spec)).collect::<Result<Vec<_>>>()?;
            let refs: Vec<&PreparedInput> = prepared.iter().collect();
            let mut tape = Tape::new(&self.params);
            let p = self.forward_prepared(&mut tape, &refs)?;
            out.extend(tape.value(p).column(0).iter().copied());
        }
        Ok(out)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::from_stores(Self::KIND, &self.config, &[("evaluator".to_string(), &self.params)])
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let config: EvaluatorConfig = ckpt.config_as(Self::KIND)?;
        let mut net = Self::new(&config, 0)?;
        ckpt.restore_into("evaluator", &mut net.params)?;
        Ok(net)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn combined(seed: u64) -> Mat {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cloud: Vec<Vec3> =
            (0..100).map(|_| Vec3::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5))).collect();
        let pose = GraspPose::from_translation(Vec3::new(0.1, 0.0, 0.2));
        assemble_evaluator_input(&cloud, &pose, &GripperSpec::default().scaled(5.0), 32).unwrap()
    }

    #[test]
    fn output_is_a_probability_and_deterministic() {
        let net = Evaluator::new(&EvaluatorConfig::desk(), 1).unwrap();
        for seed in 0..5 {
            let x = combined(seed);
            let p = net.forward(&x).unwrap();
            assert!(p > 0.0 && p < 1.0);
            assert_eq!(p, net.forward(&x).unwrap());
        }
    }

    #[test]
    fn permuting_object_rows_keeps_the_score() {
        let net = Evaluator::new(&EvaluatorConfig::desk(), 2).unwrap();
        let x = combined(7);
        let mut order: Vec<usize> = (0..100).map(|i| (i * 31) % 100).collect();
        order.extend(100..x.nrows());
        let y = x.select(ndarray::Axis(0), &order);
        assert!((net.forward(&x).unwrap() - net.forward(&y).unwrap()).abs() < 1e-5);
    }

    #[test]
    fn rejects_bad_flags() {
        let net = Evaluator::new(&EvaluatorConfig::desk(), 3).unwrap();
        let mut x = combined(1);
        x[[0, 3]] = 0.5;
        assert!(net.forward(&x).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let net = Evaluator::new(&EvaluatorConfig::desk(), 4).unwrap();
        assert_eq!(Evaluator::from_checkpoint(&net.to_checkpoint()).unwrap(), net);
    }
}
