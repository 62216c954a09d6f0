//! The complete trainable state and its on-disk container.
//!
//! ```text
//! DASFFT-MODEL v1
//! config <key> = <value>
//! flag <name>
//! optimizer <group> step=<n> lr=<x> beta1=<x> beta2=<x> eps=<x> params=<name,...>
//! tensor <name> <owner> <d0,d1,...> <offset>
//! end
//! <TENS blob holding every tensor back to back>
//! ```
//!
//! Adam moments are stored as tensors named `adam.<group>.m.<param>` and
//! `adam.<group>.v.<param>` with owner `optimizer`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::kv;
use crate::scalar::Scalar;
use crate::tensor::{read_tens, write_tens, AdamConfig, AdamState, Tensor};

use super::model::{Ablation, GeneratorConfig, Networks};
use super::params::{GradAccum, Owner, ParamId, ParamStore};

pub const MODEL_MAGIC: &str = "DASFFT-MODEL v1";
pub const DEFAULT_EMBED_DIM: usize = 64;

/// Optimizer group names.
pub const GROUP_GENERATOR: &str = "generator";
pub const GROUP_DISCRIMINATOR: &str = "discriminator";
pub const GROUP_HQ_PRETRAIN: &str = "hq_pretrain";
pub const GROUP_LQ_ENCODER: &str = "lq_encoder";

/// Stage flags.
pub const FLAG_HQ_PRETRAINED: &str = "hq_pretrained";
pub const FLAG_DAFE_ALIGNED: &str = "dafe_aligned";
pub const FLAG_GAN_TRAINED: &str = "gan_trained";

/// Everything needed to rebuild the network layout.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub generator: GeneratorConfig,
    pub embed_dim: usize,
    pub ablation: Ablation,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(resolution: usize, ablation: Ablation, seed: u64) -> Result<Self> {
        Ok(Self {
            generator: GeneratorConfig::for_resolution(resolution)?,
            embed_dim: DEFAULT_EMBED_DIM,
            ablation,
            seed,
        })
    }

    fn to_lines(&self) -> Vec<(String, String)> {
        let g = &self.generator;
        let channels: Vec<String> = g.channels.iter().map(usize::to_string).collect();
        vec![
            ("resolution".into(), g.resolution.to_string()),
            ("scales".into(), g.scales.to_string()),
            ("base_channels".into(), g.base_channels.to_string()),
            ("channels".into(), channels.join(",")),
            ("embed_dim".into(), self.embed_dim.to_string()),
            ("ablation".into(), self.ablation.to_string()),
            ("seed".into(), self.seed.to_string()),
        ]
    }

    fn from_lines(lines: &[(String, String)]) -> Result<Self> {
        let get = |k: &str| {
            lines
                .iter()
                .find(|(key, _)| key == k)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| Error::format("model header", format!("missing config {k}")))
        };
        let channels = get("channels")?
            .split(',')
            .map(|c| kv::parse_value("channels", c.trim()))
            .collect::<Result<Vec<usize>>>()?;
        Ok(Self {
            generator: GeneratorConfig {
                scales: kv::parse_value("scales", get("scales")?)?,
                base_channels: kv::parse_value("base_channels", get("base_channels")?)?,
                channels,
                resolution: kv::parse_value("resolution", get("resolution")?)?,
            },
            embed_dim: kv::parse_value("embed_dim", get("embed_dim")?)?,
            ablation: get("ablation")?.parse()?,
            seed: kv::parse_value("seed", get("seed")?)?,
        })
    }
}

/// Adam state over a fixed, ordered list of parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerGroup<T: Scalar = f64> {
    pub ids: Vec<ParamId>,
    pub adam: AdamState<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelState<T: Scalar = f64> {
    pub config: ModelConfig,
    pub store: ParamStore<T>,
    pub nets: Networks,
    pub optimizers: BTreeMap<String, OptimizerGroup<T>>,
    pub flags: BTreeSet<String>,
}

impl<T: Scalar> ModelState<T> {
    /// Freshly initialized weights; no optimizer state yet.
    pub fn new(config: ModelConfig) -> Result<Self> {
        let mut store = ParamStore::new();
        let nets = Networks::build(&mut store, config.seed, config.generator.clone(), config.embed_dim, config.ablation)?;
        Ok(Self { config, store, nets, optimizers: BTreeMap::new(), flags: BTreeSet::new() })
    }

    pub fn has_flag(&self, flag: &str) -> bool {
        self.flags.contains(flag)
    }

    /// Parameters updated by each optimizer group.
    pub fn group_ids(&self, group: &str) -> Result<Vec<ParamId>> {
        let ids = match group {
            GROUP_GENERATOR => {
                let mut ids = self.nets.generator.trainable_ids(&self.store);
                ids.extend(self.store.ids_of(&[Owner::FcHead]));
                ids.sort();
                ids
            }
            GROUP_DISCRIMINATOR => self.store.ids_of(&[Owner::Discriminator]),
            GROUP_HQ_PRETRAIN => self.store.ids_of(&[Owner::HqEncoder, Owner::HqDecoder]),
            GROUP_LQ_ENCODER => self.store.ids_of(&[Owner::LqEncoder]),
            other => return Err(Error::invalid(format!("unknown optimizer group {other:?}"))),
        };
        Ok(ids)
    }

    /// Creates the group's Adam state on first use; later calls keep the
    /// existing moments and only adopt the new learning rate.
    pub fn ensure_optimizer(&mut self, group: &str, lr: f64) -> Result<()> {
        if let Some(opt) = self.optimizers.get_mut(group) {
            opt.adam.config.lr = T::lit(lr);
            return Ok(());
        }
        let ids = self.group_ids(group)?;
        let shapes: Vec<Vec<usize>> = ids.iter().map(|&id| self.store.get(id).shape().to_vec()).collect();
        let adam = AdamState::new(AdamConfig::with_lr(T::lit(lr)), &shapes);
        self.optimizers.insert(group.to_string(), OptimizerGroup { ids, adam });
        Ok(())
    }

    /// One Adam update of `group` from accumulated gradients.
    pub fn apply_grads(&mut self, group: &str, grads: &GradAccum<T>) -> Result<()> {
        let opt = self
            .optimizers
            .get_mut(group)
            .ok_or_else(|| Error::State(format!("optimizer group {group} not initialized")))?;
        let g: Vec<Tensor<T>> = opt.ids.iter().map(|&id| grads.get_or_zero(&self.store, id)).collect();
        let grefs: Vec<&Tensor<T>> = g.iter().collect();
        let mut params = self.store.many_mut(&opt.ids)?;
        opt.adam.step(&mut params, &grefs)
    }

    pub fn write(&self, mut out: impl Write) -> Result<()> {
        let mut header = String::new();
        let _ = writeln!(header, "{MODEL_MAGIC}");
        for (k, v) in self.config.to_lines() {
            let _ = writeln!(header, "config {k} = {v}");
        }
        for f in &self.flags {
            let _ = writeln!(header, "flag {f}");
        }
        let mut blob: Vec<T> = Vec::new();
        let mut tensors = String::new();
        let mut push = |name: &str, owner: &str, t: &Tensor<T>, blob: &mut Vec<T>| {
            let shape: Vec<String> = t.shape().iter().map(usize::to_string).collect();
            let _ = writeln!(tensors, "tensor {name} {owner} {} {}", shape.join(","), blob.len());
            blob.extend_from_slice(t.data());
        };
        for e in self.store.entries() {
            push(&e.name, e.owner.tag(), &e.value, &mut blob);
        }
        for (group, opt) in &self.optimizers {
            let c = &opt.adam.config;
            let names: Vec<&str> = opt.ids.iter().map(|&id| self.store.entry(id).name.as_str()).collect();
            let _ = writeln!(
                header,
                "optimizer {group} step={} lr={} beta1={} beta2={} eps={} params={}",
                opt.adam.step,
                c.lr.as_f64(),
                c.beta1.as_f64(),
                c.beta2.as_f64(),
                c.eps.as_f64(),
                names.join(",")
            );
            for (k, name) in names.iter().enumerate() {
                push(&format!("adam.{group}.m.{name}"), "optimizer", &opt.adam.first[k], &mut blob);
                push(&format!("adam.{group}.v.{name}"), "optimizer", &opt.adam.second[k], &mut blob);
            }
        }
        header.push_str(&tensors);
        header.push_str("end\n");
        out.write_all(header.as_bytes())?;
        let n = blob.len().max(1);
        if blob.is_empty() {
            blob.push(T::zero());
        }
        write_tens(&mut out, &Tensor::new(&[n], blob)?)
    }

    pub fn read(input: impl Read) -> Result<Self> {
        let mut input = BufReader::new(input);
        let mut line = String::new();
        let next_line = |input: &mut BufReader<_>, line: &mut String| -> Result<()> {
            line.clear();
            if input.read_line(line)? == 0 {
                return Err(Error::format("model file", "unexpected end of header"));
            }
            Ok(())
        };
        next_line(&mut input, &mut line)?;
        if line.trim_end() != MODEL_MAGIC {
            return Err(Error::format("model file", format!("expected {MODEL_MAGIC:?}, found {:?}", line.trim_end())));
        }
        let mut config = Vec::new();
        let mut flags = BTreeSet::new();
        let mut optimizers = Vec::new();
        let mut tensors: Vec<(String, Vec<usize>, usize)> = Vec::new();
        loop {
            next_line(&mut input, &mut line)?;
            let l = line.trim_end();
            let (kind, rest) = l.split_once(' ').unwrap_or((l, ""));
            match kind {
                "end" => break,
                "config" => config.extend(kv::parse(rest)?),
                "flag" => {
                    flags.insert(rest.to_string());
                }
                "optimizer" => optimizers.push(rest.to_string()),
                "tensor" => {
                    let parts: Vec<&str> = rest.split(' ').collect();
                    let [name, _owner, shape, offset] = parts[..] else {
                        return Err(Error::format("model manifest", format!("bad tensor line {l:?}")));
                    };
                    let shape = shape.split(',').map(|d| kv::parse_value("shape", d)).collect::<Result<Vec<usize>>>()?;
                    tensors.push((name.to_string(), shape, kv::parse_value("offset", offset)?));
                }
                _ => return Err(Error::format("model manifest", format!("unknown line {l:?}"))),
            }
        }
        let blob: Tensor<T> = read_tens(&mut input)?;
        let take = |name: &str, shape: &[usize]| -> Result<Tensor<T>> {
            let (_, s, off) = tensors
                .iter()
                .find(|(n, _, _)| n == name)
                .ok_or_else(|| Error::State(format!("model file lacks tensor {name}")))?;
            if s != shape {
                return Err(Error::State(format!("{name}: stored shape {s:?}, expected {shape:?}")));
            }
            let len: usize = s.iter().product();
            let data = blob
                .data()
                .get(*off..off + len)
                .ok_or_else(|| Error::format("model blob", format!("{name} beyond end of blob")))?;
            Tensor::new(s, data.to_vec())
        };

        let mut state = Self::new(ModelConfig::from_lines(&config)?)?;
        state.flags = flags;
        let ids: Vec<ParamId> = state.store.ids().collect();
        for id in ids {
            let e = state.store.entry(id);
            let t = take(&e.name, e.value.shape())?;
            *state.store.get_mut(id) = t;
        }
        for line in optimizers {
            let (group, rest) = line.split_once(' ').ok_or_else(|| Error::format("optimizer line", line.clone()))?;
            let fields: BTreeMap<&str, &str> = rest.split(' ').filter_map(|f| f.split_once('=')).collect();
            let field = |k: &str| fields.get(k).copied().ok_or_else(|| Error::format("optimizer line", format!("{group}: missing {k}")));
            let names: Vec<&str> = field("params")?.split(',').filter(|s| !s.is_empty()).collect();
            let ids = names
                .iter()
                .map(|n| state.store.find(n).ok_or_else(|| Error::State(format!("optimizer {group} names unknown parameter {n}"))))
                .collect::<Result<Vec<_>>>()?;
            let config = AdamConfig {
                lr: T::lit(kv::parse_value("lr", field("lr")?)?),
                beta1: T::lit(kv::parse_value("beta1", field("beta1")?)?),
                beta2: T::lit(kv::parse_value("beta2", field("beta2")?)?),
                eps: T::lit(kv::parse_value("eps", field("eps")?)?),
            };
            let mut first = Vec::with_capacity(ids.len());
            let mut second = Vec::with_capacity(ids.len());
            for (n, &id) in names.iter().zip(&ids) {
                let shape = state.store.get(id).shape().to_vec();
                first.push(take(&format!("adam.{group}.m.{n}"), &shape)?);
                second.push(take(&format!("adam.{group}.v.{n}"), &shape)?);
            }
            let adam = AdamState { config, step: kv::parse_value("step", field("step")?)?, first, second };
            state.optimizers.insert(group.to_string(), OptimizerGroup { ids, adam });
        }
        Ok(state)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
        self.write(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::read(File::open(path).map_err(|e| Error::io(path, e))?)
    }
}
