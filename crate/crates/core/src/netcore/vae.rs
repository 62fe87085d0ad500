//! Conditional VAE baseline generator.
//!
//! Per affordance stream, a posterior encoder reads the object cloud together
//! with the posed ground-truth gripper (the evaluator's four-channel input)
//! and emits a diagonal Gaussian; a decoder maps a cloud feature and a latent
//! sample to a pose. At inference the latent is drawn from the prior.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::encoder::{Encoder, EncoderConfig, EncoderInput, Grouping};
use super::evaluator::PreparedInput;
use super::{assemble_evaluator_input, pose_from_raw, rows_to_points, sample_latent};
use crate::error::{Error, Result};
use crate::geometry::{GraspPose, GripperSpec, Vec3};
use crate::synthdata::dataset::mix_seed;
use crate::synthdata::{AffordanceLabel, Category};
use crate::tape::{Linear, Mat, ParamStore, Tape, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VaeConfig {
    pub encoder: EncoderConfig,
    pub latent_len: usize,
    pub hidden: usize,
    /// KL weight.
    pub beta: f64,
    pub gripper_samples: usize,
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self { encoder: EncoderConfig::default(), latent_len: 2, hidden: 256, beta: 0.01, gripper_samples: 64 }
    }
}

impl VaeConfig {
    pub fn desk() -> Self {
        Self { encoder: EncoderConfig::desk(), latent_len: 2, hidden: 64, beta: 0.01, gripper_samples: 32 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VaeStream {
    pub label: AffordanceLabel,
    pub posterior: Encoder,
    pub mu: Linear,
    pub logvar: Linear,
    pub cloud: Encoder,
    pub hidden: Linear,
    pub quat: Linear,
    pub trans: Linear,
}

/// Outputs of a training pass.
pub struct VaeTrainVars {
    pub quat: Var,
    pub trans: Var,
    pub mu: Var,
    pub logvar: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VaeGenerator {
    pub category: Category,
    pub config: VaeConfig,
    pub streams: Vec<VaeStream>,
    pub params: ParamStore,
}

/// KL divergence of `N(mu, exp(logvar))` from `N(0, I)` and its gradients.
pub fn kl_divergence(mu: &[f64], logvar: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let kl = mu.iter().zip(logvar).map(|(m, lv)| 0.5 * (m * m + lv.exp() - 1.0 - lv)).sum();
    let dmu = mu.to_vec();
    let dlv = logvar.iter().map(|lv| 0.5 * (lv.exp() - 1.0)).collect();
    (kl, dmu, dlv)
}

impl VaeGenerator {
    pub fn new(category: Category, config: &VaeConfig, seed: u64) -> Result<Self> {
        config.encoder.validate()?;
        if config.latent_len == 0 || config.hidden == 0 || !(config.beta >= 0.0) {
            return Err(Error::InvalidInput("VAE needs positive latent length and width and a nonnegative beta".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let l = config.latent_len;
        let mut streams = Vec::new();
        for label in category.labels() {
            let n = label.name();
            let posterior = Encoder::new(&mut params, &format!("{n}.post"), &config.encoder, 1, &mut rng);
            let g = posterior.out_width();
            let mu = Linear::new(&mut params, &format!("{n}.mu"), g, l, &mut rng);
            let logvar = Linear::new(&mut params, &format!("{n}.logvar"), g, l, &mut rng);
            let cloud = Encoder::new(&mut params, &format!("{n}.cloud"), &config.encoder, 0, &mut rng);
            let hidden = Linear::new(&mut params, &format!("{n}.hidden"), cloud.out_width() + l, config.hidden, &mut rng);
            let quat = Linear::new(&mut params, &format!("{n}.quat"), config.hidden, 4, &mut rng);
            params.get_mut(quat.b)[[0, 0]] = 1.0;
            let trans = Linear::new(&mut params, &format!("{n}.trans"), config.hidden, 3, &mut rng);
            streams.push(VaeStream { label, posterior, mu, logvar, cloud, hidden, quat, trans });
        }
        Ok(Self { category, config: config.clone(), streams, params })
    }

    pub fn labels(&self) -> Vec<AffordanceLabel> {
        self.streams.iter().map(|s| s.label).collect()
    }

    pub fn stream(&self, task: AffordanceLabel) -> Result<&VaeStream> {
        self.streams.iter().find(|s| s.label == task).ok_or_else(|| Error::InvalidTask {
            task: task.to_string(),
            available: self.labels().iter().map(|l| l.name()).collect::<Vec<_>>().join(", "),
        })
    }

    pub fn prepare_posterior(&self, cloud: &[Vec3], gt: &GraspPose, spec: &GripperSpec) -> Result<PreparedInput> {
        let combined = assemble_evaluator_input(cloud, gt, spec, self.config.gripper_samples)?;
        let grouping = Grouping::build(&rows_to_points(&combined), &self.config.encoder)?;
        let flags = combined.column(3).to_owned().insert_axis(ndarray::Axis(1));
        Ok(PreparedInput { grouping, flags })
    }

    fn decode(&self, tape: &mut Tape, stream: &VaeStream, cloud_feat: Var, batch: usize, z: Var) -> (Var, Var) {
        let feats = tape.gather(cloud_feat, vec![0; batch]);
        let x = tape.concat_cols(&[feats, z]);
        let h = stream.hidden.forward(tape, x);
        let h = tape.relu(h);
        (stream.quat.forward(tape, h), stream.trans.forward(tape, h))
    }

    fn cloud_feature(&self, tape: &mut Tape, stream: &VaeStream, grouping: &Grouping) -> Result<Var> {
        let empty = Mat::zeros((grouping.n_points, 0));
        stream.cloud.forward(tape, &[EncoderInput { grouping, features: &empty }])
    }

    /// Reparameterized pass over a batch of ground-truth grasps on one cloud;
    /// `eps` is `B x L` standard-normal noise.
    pub fn forward_train(
        &self,
        tape: &mut Tape,
        task: AffordanceLabel,
        cloud_grouping: &Grouping,
        posteriors: &[&PreparedInput],
        eps: &Mat,
    ) -> Result<VaeTrainVars> {
        let stream = self.stream(task)?;
        if eps.dim() != (posteriors.len(), self.config.latent_len) {
            return Err(Error::Shape("noise must be B x latent_len".into()));
        }
        let items: Vec<EncoderInput> = posteriors.iter().map(|p| EncoderInput { grouping: &p.grouping, features: &p.flags }).collect();
        let g = stream.posterior.forward(tape, &items)?;
        let mu = stream.mu.forward(tape, g);
        let logvar = stream.logvar.forward(tape, g);
        let half = tape.scale(logvar, 0.5);
        let std = tape.exp(half);
        let eps = tape.constant(eps.clone());
        let noise = tape.mul(std, eps);
        let z = tape.add(mu, noise);
        let feat = self.cloud_feature(tape, stream, cloud_grouping)?;
        let (quat, trans) = self.decode(tape, stream, feat, posteriors.len(), z);
        Ok(VaeTrainVars { quat, trans, mu, logvar })
    }

    /// Poses decoded from explicit latents.
    pub fn generate_with(&self, cloud: &[Vec3], latents: &[Vec<f64>], task: AffordanceLabel) -> Result<Vec<GraspPose>> {
        let stream = self.stream(task)?;
        let l = self.config.latent_len;
        if latents.iter().any(|z| z.len() != l) {
            return Err(Error::Shape(format!("latents must have length {l}")));
        }
        let grouping = Grouping::build(cloud, &self.config.encoder)?;
        let mut tape = Tape::new(&self.params);
        let feat = self.cloud_feature(&mut tape, stream, &grouping)?;
        let z = Array2::from_shape_fn((latents.len(), l), |(b, c)| latents[b][c]);
        let z = tape.constant(z);
        let (q, t) = self.decode(&mut tape, stream, feat, latents.len(), z);
        let (q, t) = (tape.value(q), tape.value(t));
        (0..latents.len()).map(|b| pose_from_raw(q.row(b).as_slice().unwrap(), t.row(b).as_slice().unwrap())).collect()
    }

    /// Poses decoded from prior samples.
    pub fn generate<R: Rng + ?Sized>(&self, cloud: &[Vec3], count: usize, task: AffordanceLabel, rng: &mut R) -> Result<Vec<GraspPose>> {
        let latents = (0..count).map(|_| sample_latent(rng, self.config.latent_len).map(|z| z.0)).collect::<Result<Vec<_>>>()?;
        self.generate_with(cloud, &latents, task)
    }
}

/// One VAE per category, saved together.
#[derive(Clone, Debug, PartialEq)]
pub struct VaeBank {
    pub config: VaeConfig,
    pub generators: BTreeMap<Category, VaeGenerator>,
}

#[derive(Serialize, Deserialize)]
struct BankHeader {
    vae: VaeConfig,
    categories: Vec<Category>,
}

impl VaeBank {
    pub const KIND: &'static str = "vae";

    pub fn new(categories: &[Category], config: &VaeConfig, seed: u64) -> Result<Self> {
        let generators = categories
            .iter()
            .map(|&c| Ok((c, VaeGenerator::new(c, config, mix_seed(seed, 0x7661, c as u64))?)))
            .collect::<Result<_>>()?;
        Ok(Self { config: config.clone(), generators })
    }

    pub fn get(&self, category: Category) -> Result<&VaeGenerator> {
        self.generators
            .get(&category)
            .ok_or_else(|| Error::InvalidInput(format!("no VAE for category {category}")))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let header = BankHeader { vae: self.config.clone(), categories: self.generators.keys().copied().collect() };
        let stores: Vec<(String, &ParamStore)> = self.generators.iter().map(|(c, g)| (c.name().to_string(), &g.params)).collect();
        Checkpoint::from_stores(Self::KIND, &header, &stores)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let header: BankHeader = ckpt.config_as(Self::KIND)?;
        let mut bank = Self::new(&header.categories, &header.vae, 0)?;
        for (c, g) in bank.generators.iter_mut() {
            ckpt.restore_into(c.name(), &mut g.params)?;
        }
        Ok(bank)
    }
}
