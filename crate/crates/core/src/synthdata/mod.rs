//! Procedural objects, affordance regions, a geometric grasp oracle and the
//! on-disk view dataset.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::geometry::{GraspPose, PointCloud};

pub mod dataset;
pub mod oracle;
pub mod shapes;

pub use dataset::{load_dataset, render_dataset, render_views, DatasetConfig, DatasetManifest, ViewRecord};
pub use oracle::{grasp_oracle, label_grasps, oracle_contacts, propose_grasps, OracleConfig};
pub use shapes::make_object;

/// Task affordances. Integer codes are stable: grasp=0, wrap=1, pour=2,
/// contain=3, cut_stab=4, wear=5.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AffordanceLabel {
    Grasp = 0,
    Wrap = 1,
    Pour = 2,
    Contain = 3,
    CutStab = 4,
    Wear = 5,
}

impl AffordanceLabel {
    pub const ALL: [AffordanceLabel; 6] = [
        AffordanceLabel::Grasp,
        AffordanceLabel::Wrap,
        AffordanceLabel::Pour,
        AffordanceLabel::Contain,
        AffordanceLabel::CutStab,
        AffordanceLabel::Wear,
    ];
    pub const COUNT: usize = 6;

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Option<Self> {
        Self::ALL.get(code).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            AffordanceLabel::Grasp => "grasp",
            AffordanceLabel::Wrap => "wrap",
            AffordanceLabel::Pour => "pour",
            AffordanceLabel::Contain => "contain",
            AffordanceLabel::CutStab => "cut_stab",
            AffordanceLabel::Wear => "wear",
        }
    }
}

impl fmt::Display for AffordanceLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AffordanceLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|l| l.name() == s || (s == "cut" && *l == AffordanceLabel::CutStab))
            .ok_or_else(|| Error::InvalidInput(format!("unknown affordance label {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Mug,
    Bottle,
    Knife,
    Hat,
    Bowl,
    Scissor,
}

impl Category {
    pub const ALL: [Category; 6] =
        [Category::Mug, Category::Bottle, Category::Knife, Category::Hat, Category::Bowl, Category::Scissor];

    pub fn name(self) -> &'static str {
        match self {
            Category::Mug => "mug",
            Category::Bottle => "bottle",
            Category::Knife => "knife",
            Category::Hat => "hat",
            Category::Bowl => "bowl",
            Category::Scissor => "scissor",
        }
    }

    /// Labels this category affords, in code order.
    pub fn labels(self) -> Vec<AffordanceLabel> {
        affordance_regions(self).into_keys().collect()
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown category {s:?}")))
    }
}

/// Geometric part a surface point was generated from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartTag {
    Handle,
    Body,
    Rim,
    Interior,
    Blade,
    Brim,
    Neck,
    Dome,
    RingHandle,
}

/// Which parts carry each affordance of a category.
pub fn affordance_regions(category: Category) -> BTreeMap<AffordanceLabel, Vec<PartTag>> {
    use AffordanceLabel as A;
    use PartTag as P;
    let table: Vec<(A, Vec<P>)> = match category {
        Category::Mug => vec![
            (A::Grasp, vec![P::Handle]),
            (A::Wrap, vec![P::Body]),
            (A::Pour, vec![P::Rim]),
            (A::Contain, vec![P::Rim, P::Interior]),
        ],
        Category::Bottle => vec![(A::Grasp, vec![P::Neck]), (A::Wrap, vec![P::Body]), (A::Contain, vec![P::Rim])],
        Category::Knife => vec![(A::Grasp, vec![P::Handle]), (A::CutStab, vec![P::Handle])],
        Category::Hat => vec![(A::Grasp, vec![P::Brim]), (A::Wear, vec![P::Dome])],
        Category::Bowl => vec![(A::Grasp, vec![P::Rim]), (A::Wrap, vec![P::Body])],
        Category::Scissor => vec![(A::Grasp, vec![P::RingHandle]), (A::CutStab, vec![P::RingHandle])],
    };
    table.into_iter().collect()
}

/// A procedurally generated object in its own centred frame (metres).
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectRecord {
    pub id: String,
    pub category: Category,
    pub seed: u64,
    pub params: BTreeMap<String, f64>,
    pub surface: PointCloud,
    pub tags: Vec<PartTag>,
}

impl ObjectRecord {
    pub fn region_of(&self, i: usize) -> PartTag {
        self.tags[i]
    }

    /// Whether surface point `i` lies in the region of `label`.
    pub fn in_region(&self, i: usize, label: AffordanceLabel) -> bool {
        affordance_regions(self.category).get(&label).is_some_and(|parts| parts.contains(&self.tags[i]))
    }
}

/// An oracle-tested grasp.
///
/// `label` is `None` only for successful grasps whose contacts touch no
/// affordance region (for instance a knife blade pinch).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledGrasp {
    pub pose: GraspPose,
    pub label: Option<AffordanceLabel>,
    pub success: bool,
    pub sentinel: bool,
}

impl LabeledGrasp {
    pub fn sentinel(label: AffordanceLabel) -> Self {
        Self { pose: GraspPose::identity(), label: Some(label), success: true, sentinel: true }
    }
}
