//! Multi-stream implicit grasp generator: one set-abstraction stream per
//! affordance label of a category, each mapping a cloud and a latent
//! indicator to a grasp pose.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::encoder::{Encoder, EncoderConfig, EncoderInput, Grouping};
use super::{pose_from_raw, LatentIndicator};
use crate::error::{Error, Result};
use crate::geometry::{GraspPose, Vec3};
use crate::synthdata::dataset::mix_seed;
use crate::synthdata::{AffordanceLabel, Category};
use crate::tape::{Linear, ParamStore, Tape, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub encoder: EncoderConfig,
    pub latent_len: usize,
    /// Hidden width of the quaternion and translation heads.
    pub head_hidden: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self { encoder: EncoderConfig::default(), latent_len: 2, head_hidden: 256 }
    }
}

impl GeneratorConfig {
    pub fn desk() -> Self {
        Self { encoder: EncoderConfig::desk(), latent_len: 2, head_hidden: 64 }
    }
}

/// Two-layer head `G -> hidden -> out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Head {
    pub hidden: Linear,
    pub out: Linear,
}

impl Head {
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, hidden: usize, out: usize, rng: &mut ChaCha8Rng) -> Self {
        Self { hidden: Linear::new(store, &format!("{name}.hidden"), fan_in, hidden, rng), out: Linear::new(store, &format!("{name}.out"), hidden, out, rng) }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let h = self.hidden.forward(tape, x);
        let h = tape.relu(h);
        self.out.forward(tape, h)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stream {
    pub label: AffordanceLabel,
    pub encoder: Encoder,
    pub quat: Head,
    pub trans: Head,
}

/// Generator for one category.
#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    pub category: Category,
    pub config: GeneratorConfig,
    pub streams: Vec<Stream>,
    pub params: ParamStore,
}

/// Largest number of latent draws pushed through one graph at inference.
const INFERENCE_CHUNK: usize = 64;

impl Generator {
    pub fn new(category: Category, config: &GeneratorConfig, seed: u64) -> Result<Self> {
        config.encoder.validate()?;
        if config.latent_len == 0 || config.head_hidden == 0 {
            return Err(Error::InvalidInput("latent length and head width must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let mut streams = Vec::new();
        for label in category.labels() {
            let name = label.name();
            let encoder = Encoder::new(&mut params, &format!("{name}.enc"), &config.encoder, config.latent_len, &mut rng);
            let g = encoder.out_width();
            let quat = Head::new(&mut params, &format!("{name}.quat"), g, config.head_hidden, 4, &mut rng);
            // Start the quaternion head at the identity rotation, away from the
            // zero-norm singularity.
            params.get_mut(quat.out.b)[[0, 0]] = 1.0;
            let trans = Head::new(&mut params, &format!("{name}.trans"), g, config.head_hidden, 3, &mut rng);
            streams.push(Stream { label, encoder, quat, trans });
        }
        Ok(Self { category, config: config.clone(), streams, params })
    }

    pub fn labels(&self) -> Vec<AffordanceLabel> {
        self.streams.iter().map(|s| s.label).collect()
    }

    pub fn stream(&self, task: AffordanceLabel) -> Result<&Stream> {
        self.streams.iter().find(|s| s.label == task).ok_or_else(|| Error::InvalidTask {
            task: task.to_string(),
            available: self.labels().iter().map(|l| l.name()).collect::<Vec<_>>().join(", "),
        })
    }

    /// Raw head outputs (`B x 4` quaternion, `B x 3` translation) for one
    /// cloud and a batch of latents.
    pub fn forward_raw(&self, tape: &mut Tape, task: AffordanceLabel, grouping: &Grouping, latents: &[LatentIndicator]) -> Result<(Var, Var)> {
        let stream = self.stream(task)?;
        let l = self.config.latent_len;
        let features: Vec<_> = latents
            .iter()
            .map(|z| {
                if z.len() != l {
                    return Err(Error::Shape(format!("latent has length {}, model expects {l}", z.len())));
                }
                Ok(Array2::from_shape_fn((grouping.n_points, l), |(_, c)| z.0[c]))
            })
            .collect::<Result<_>>()?;
        let items: Vec<EncoderInput> = features.iter().map(|f| EncoderInput { grouping, features: f }).collect();
        let gfv = stream.encoder.forward(tape, &items)?;
        let q = stream.quat.forward(tape, gfv);
        let t = stream.trans.forward(tape, gfv);
        Ok((q, t))
    }

    /// One pose per latent for a normalized cloud.
    pub fn generate(&self, cloud: &[Vec3], latents: &[LatentIndicator], task: AffordanceLabel) -> Result<Vec<GraspPose>> {
        self.stream(task)?;
        let grouping = Grouping::build(cloud, &self.config.encoder)?;
        let mut out = Vec::with_capacity(latents.len());
        for chunk in latents.chunks(INFERENCE_CHUNK) {
            let mut tape = Tape::new(&self.params);
            let (q, t) = self.forward_raw(&mut tape, task, &grouping, chunk)?;
            let (q, t) = (tape.value(q), tape.value(t));
            for b in 0..chunk.len() {
                out.push(pose_from_raw(q.row(b).as_slice().unwrap(), t.row(b).as_slice().unwrap())?);
            }
        }
        Ok(out)
    }

    /// Single-latent forward pass.
    pub fn forward(&self, cloud: &[Vec3], latent: &LatentIndicator, task: AffordanceLabel) -> Result<GraspPose> {
        Ok(self.generate(cloud, std::slice::from_ref(latent), task)?.remove(0))
    }
}

/// One generator per category, saved together.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorBank {
    pub config: GeneratorConfig,
    pub generators: BTreeMap<Category, Generator>,
}

#[derive(Serialize, Deserialize)]
struct BankHeader {
    generator: GeneratorConfig,
    categories: Vec<Category>,
}

impl GeneratorBank {
    pub const KIND: &'static str = "generator";

    pub fn new(categories: &[Category], config: &GeneratorConfig, seed: u64) -> Result<Self> {
        let generators = categories
            .iter()
            .map(|&c| Ok((c, Generator::new(c, config, mix_seed(seed, 0x6e6e, c as u64))?)))
            .collect::<Result<_>>()?;
        Ok(Self { config: config.clone(), generators })
    }

    pub fn get(&self, category: Category) -> Result<&Generator> {
        self.generators
            .get(&category)
            .ok_or_else(|| Error::InvalidInput(format!("no generator for category {category}")))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let header = BankHeader { generator: self.config.clone(), categories: self.generators.keys().copied().collect() };
        let stores: Vec<(String, &ParamStore)> = self.generators.iter().map(|(c, g)| (c.name().to_string(), &g.params)).collect();
        Checkpoint::from_stores(Self::KIND, &header, &stores)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let header: BankHeader = ckpt.config_as(Self::KIND)?;
        let mut bank = Self::new(&header.categories, &header.generator, 0)?;
        for (c, g) in bank.generators.iter_mut() {
            ckpt.restore_into(c.name(), &mut g.params)?;
        }
        Ok(bank)
    }
}
