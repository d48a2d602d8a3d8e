//! Named parameter tensors with partition tags and seeded initialisation.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::{Mat, Tape, Var};

/// Which part of the objective a parameter belongs to: feature extractor,
/// outcome classifier or domain adversary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Partition {
    Feature,
    Classifier,
    Adversary,
}

impl Partition {
    pub fn tag(self) -> u8 {
        match self {
            Partition::Feature => 0,
            Partition::Classifier => 1,
            Partition::Adversary => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Partition::Feature),
            1 => Some(Partition::Classifier),
            2 => Some(Partition::Adversary),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitKind {
    /// Uniform in +-sqrt(6 / (fan_in + fan_out)).
    Xavier,
    Zeros,
    /// Random direction with unit Euclidean norm.
    UnitVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub partition: Partition,
    pub shape: (usize, usize),
    pub init: InitKind,
}

/// Collects parameter specs in registration order; the returned index is the
/// parameter's position in the resulting [`ParameterSet`].
#[derive(Debug, Default)]
pub struct SpecList {
    pub specs: Vec<ParamSpec>,
}

impl SpecList {
    pub fn add(
        &mut self,
        name: impl Into<String>,
        partition: Partition,
        shape: (usize, usize),
        init: InitKind,
    ) -> usize {
        self.specs.push(ParamSpec {
            name: name.into(),
            partition,
            shape,
            init,
        });
        self.specs.len() - 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub partition: Partition,
    pub value: Mat,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParameterSet {
    pub params: Vec<Param>,
}

impl ParameterSet {
    pub fn init(specs: &[ParamSpec], rng: &mut ChaCha8Rng) -> Self {
        let params = specs
            .iter()
            .map(|s| {
                let (r, c) = s.shape;
                let value = match s.init {
                    InitKind::Zeros => Array2::zeros((r, c)),
                    InitKind::Xavier => {
                        let bound = (6.0 / (r + c) as f64).sqrt();
                        Array2::from_shape_simple_fn((r, c), || rng.random_range(-bound..bound))
                    }
                    InitKind::UnitVector => {
                        let mut v: Mat = Array2::from_shape_simple_fn((r, c), || StandardNormal.sample(rng));
                        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                        v /= norm;
                        v
                    }
                };
                Param {
                    name: s.name.clone(),
                    partition: s.partition,
                    value,
                }
            })
            .collect();
        ParameterSet { params }
    }

    pub fn init_seeded(specs: &[ParamSpec], seed: u64) -> Self {
        Self::init(specs, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// Checks that names, partitions and shapes line up with `specs`.
    pub fn check(&self, specs: &[ParamSpec]) -> Result<()> {
        if self.params.len() != specs.len() {
            return Err(Error::Shape(format!(
                "expected {} parameter tensors, found {}",
                specs.len(),
                self.params.len()
            )));
        }
        for (p, s) in self.params.iter().zip(specs) {
            if p.name != s.name || p.partition != s.partition || p.value.dim() != s.shape {
                return Err(Error::Shape(format!(
                    "parameter {} {:?} does not match expected {} {:?}",
                    p.name,
                    p.value.dim(),
                    s.name,
                    s.shape
                )));
            }
            if p.value.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("parameter {}", p.name)));
            }
        }
        Ok(())
    }

    /// Registers every tensor as a borrowed leaf; `vars[i]` is parameter `i`.
    pub fn bind<'a>(&'a self, tape: &mut Tape<'a>) -> Vec<Var> {
        self.params.iter().map(|p| tape.borrowed(&p.value)).collect()
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zeros_like(&self) -> Vec<Mat> {
        self.params.iter().map(|p| Array2::zeros(p.value.raw_dim())).collect()
    }
}
