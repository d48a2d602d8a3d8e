//! Binary checkpoints.
//!
//! ```text
//! magic       "CKP1"
//! version     u16
//! header_len  u32, then a UTF-8 JSON header (configs, counters, RNG,
//!             sampler state, log)
//! count       u32 tensors, each:
//!   name_len  u16, name (UTF-8)
//!   partition u8 (0 feature, 1 classifier, 2 adversary)
//!   rows, cols u32
//!   payload   rows * cols f64, row-major
//! ```
//!
//! All integers and floats are little-endian. Tensor names carry a group
//! prefix: `model/`, `adversary/`, `adam.m/model/`, `adam.v/model/`,
//! `adam.m/adversary/`, `adam.v/adversary/`.

use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adaptation::{Adversary, AdversaryConfig};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, Network, Variant};
use crate::params::{Param, ParameterSet, Partition};
use crate::tape::Mat;

use super::{AdamMoments, EpochLog, Plateau, SamplerState, TrainConfig, TrainState};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CKP1";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub state: TrainState,
}

#[derive(Serialize, Deserialize)]
struct RngState {
    seed: [u8; 32],
    stream: u64,
    /// u128 word position as a decimal string.
    word_pos: String,
}

impl RngState {
    fn of(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    fn restore(&self) -> Result<ChaCha8Rng> {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| Error::Format(format!("bad RNG position {:?}", self.word_pos)))?;
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    model: ModelConfig,
    variant: Variant,
    adversary: Option<AdversaryConfig>,
    step: u64,
    total_steps: u64,
    batches_per_epoch: usize,
    num_source_domains: usize,
    lr: f64,
    epoch: usize,
    plateau: Plateau,
    best_val_micro_f1: Option<f64>,
    rng: RngState,
    sampler: SamplerState,
    log: Vec<EpochLog>,
    stopped: bool,
}

fn push_tensor(buf: &mut Vec<u8>, name: &str, partition: Partition, value: &Mat) {
    buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
    buf.extend_from_slice(name.as_bytes());
    buf.push(partition.tag());
    buf.extend_from_slice(&(value.nrows() as u32).to_le_bytes());
    buf.extend_from_slice(&(value.ncols() as u32).to_le_bytes());
    for v in value.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn push_group(buf: &mut Vec<u8>, count: &mut u32, prefix: &str, params: &ParameterSet, values: Option<&[Mat]>) {
    for (i, p) in params.params.iter().enumerate() {
        let value = values.map_or(&p.value, |v| &v[i]);
        push_tensor(buf, &format!("{prefix}{}", p.name), p.partition, value);
        *count += 1;
    }
}

pub fn encode_checkpoint(state: &TrainState, config: &TrainConfig) -> Result<Vec<u8>> {
    let header = Header {
        config: config.clone(),
        model: state.network.config.clone(),
        variant: state.network.variant,
        adversary: state.adversary.as_ref().map(|a| a.config.clone()),
        step: state.step,
        total_steps: state.total_steps,
        batches_per_epoch: state.batches_per_epoch,
        num_source_domains: state.num_source_domains,
        lr: state.lr,
        epoch: state.epoch,
        plateau: state.plateau,
        best_val_micro_f1: state.best_val_micro_f1,
        rng: RngState::of(&state.rng),
        sampler: state.sampler.clone(),
        log: state.log.clone(),
        stopped: state.stopped,
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);

    let mut body = Vec::new();
    let mut count = 0u32;
    let net = &state.network.params;
    push_group(&mut body, &mut count, "model/", net, None);
    push_group(&mut body, &mut count, "adam.m/model/", net, Some(&state.moments.m));
    push_group(&mut body, &mut count, "adam.v/model/", net, Some(&state.moments.v));
    if let Some(adv) = &state.adversary {
        push_group(&mut body, &mut count, "adversary/", &adv.params, None);
        if let Some(m) = &state.adversary_moments {
            push_group(&mut body, &mut count, "adam.m/adversary/", &adv.params, Some(&m.m));
            push_group(&mut body, &mut count, "adam.v/adversary/", &adv.params, Some(&m.v));
        }
    }
    buf.extend_from_slice(&count.to_le_bytes());
    buf.extend_from_slice(&body);
    Ok(buf)
}

/// Writes atomically through a sibling temporary file.
pub fn save_checkpoint(state: &TrainState, config: &TrainConfig, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(state, config)?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.data.len() - self.pos < n {
            return Err(Error::Format(format!(
                "checkpoint truncated: needed {n} bytes at offset {}, {} left",
                self.pos,
                self.data.len() - self.pos
            )));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

struct Tensor {
    name: String,
    partition: Partition,
    value: Mat,
}

fn take_group(
    tensors: &mut std::collections::BTreeMap<String, Tensor>,
    prefix: &str,
    names: &[String],
) -> Result<Vec<Param>> {
    names
        .iter()
        .map(|n| {
            let key = format!("{prefix}{n}");
            let t = tensors
                .remove(&key)
                .ok_or_else(|| Error::Format(format!("checkpoint is missing tensor {key}")))?;
            Ok(Param {
                name: n.clone(),
                partition: t.partition,
                value: t.value,
            })
        })
        .collect()
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { data: bytes, pos: 0 };
    if r.take(4).ok() != Some(CHECKPOINT_MAGIC.as_slice()) {
        return Err(Error::Format("not a CKP1 checkpoint".into()));
    }
    let version = r.u16()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version} (this reader handles version {CHECKPOINT_VERSION})"
        )));
    }
    let header_len = r.u32()? as usize;
    let header: Header =
        serde_json::from_slice(r.take(header_len)?).map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
    let count = r.u32()?;
    let mut tensors = std::collections::BTreeMap::new();
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
            .to_string();
        let tag = r.u8()?;
        let partition =
            Partition::from_tag(tag).ok_or_else(|| Error::Format(format!("bad partition tag {tag} for {name}")))?;
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let n = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| Error::Format(format!("tensor {name} too large")))?;
        let payload = r.take(n)?;
        let values: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let value = Mat::from_shape_vec((rows, cols), values).map_err(|e| Error::Format(e.to_string()))?;
        tensors.insert(name.clone(), Tensor { name, partition, value });
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "checkpoint has {} trailing bytes",
            bytes.len() - r.pos
        )));
    }

    let specs = Network::specs_for(&header.model, header.variant);
    let names: Vec<String> = specs.iter().map(|s| s.name.clone()).collect();
    let params = ParameterSet {
        params: take_group(&mut tensors, "model/", &names)?,
    };
    let moments = AdamMoments {
        m: take_group(&mut tensors, "adam.m/model/", &names)?
            .into_iter()
            .map(|p| p.value)
            .collect(),
        v: take_group(&mut tensors, "adam.v/model/", &names)?
            .into_iter()
            .map(|p| p.value)
            .collect(),
    };
    let network = Network::from_params(header.model.clone(), header.variant, params)?;
    check_like(&moments, &network.params)?;

    let (adversary, adversary_moments) = match &header.adversary {
        None => (None, None),
        Some(cfg) => {
            let (_, specs) = crate::adaptation::AdversaryLayout::new(cfg);
            let names: Vec<String> = specs.iter().map(|s| s.name.clone()).collect();
            let params = ParameterSet {
                params: take_group(&mut tensors, "adversary/", &names)?,
            };
            let adv = Adversary::from_params(cfg.clone(), params)?;
            let moments = if tensors.keys().any(|k| k.starts_with("adam.m/adversary/")) {
                let m = AdamMoments {
                    m: take_group(&mut tensors, "adam.m/adversary/", &names)?
                        .into_iter()
                        .map(|p| p.value)
                        .collect(),
                    v: take_group(&mut tensors, "adam.v/adversary/", &names)?
                        .into_iter()
                        .map(|p| p.value)
                        .collect(),
                };
                check_like(&m, &adv.params)?;
                Some(m)
            } else {
                None
            };
            (Some(adv), moments)
        }
    };
    if let Some(extra) = tensors.values().next() {
        return Err(Error::Format(format!("unexpected tensor {}", extra.name)));
    }
    if header.step > header.total_steps || !(header.lr > 0.0) {
        return Err(Error::Format("inconsistent step counters or learning rate".into()));
    }

    Ok(Checkpoint {
        config: header.config,
        state: TrainState {
            network,
            adversary,
            moments,
            adversary_moments,
            step: header.step,
            total_steps: header.total_steps,
            batches_per_epoch: header.batches_per_epoch,
            num_source_domains: header.num_source_domains,
            lr: header.lr,
            epoch: header.epoch,
            plateau: header.plateau,
            best_val_micro_f1: header.best_val_micro_f1,
            rng: header.rng.restore()?,
            sampler: header.sampler,
            log: header.log,
            stopped: header.stopped,
        },
    })
}

fn check_like(m: &AdamMoments, params: &ParameterSet) -> Result<()> {
    for ((a, b), p) in m.m.iter().zip(&m.v).zip(&params.params) {
        if a.raw_dim() != p.value.raw_dim() || b.raw_dim() != p.value.raw_dim() {
            return Err(Error::Shape(format!("optimiser state for {}", p.name)));
        }
    }
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}
