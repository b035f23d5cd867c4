//! Named parameter store and the parameter layout of the network.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u32 = 1;

/// Which training stage owns a parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scope {
    /// Encoder, auxiliary network, separator and decoder.
    Baseline,
    /// Speech branch and fusion layer.
    Dynamic,
}

impl Scope {
    pub fn of(name: &str) -> Scope {
        if name.starts_with("branch.") || name.starts_with("fuse.") {
            Scope::Dynamic
        } else {
            Scope::Baseline
        }
    }
}

/// How a freshly created parameter is initialised.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Init {
    /// Uniform in ±1/sqrt(fan_in).
    Uniform {
        fan_in: usize,
    },
    Const(f32),
}

#[derive(Debug, Clone)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    init: Init,
}

fn conv(out: &mut Vec<ParamSpec>, prefix: &str, cout: usize, cin: usize, k: usize, bias: bool) {
    out.push(ParamSpec {
        name: format!("{prefix}.weight"),
        shape: vec![cout, cin, k],
        init: Init::Uniform { fan_in: cin * k },
    });
    if bias {
        out.push(ParamSpec {
            name: format!("{prefix}.bias"),
            shape: vec![cout],
            init: Init::Uniform { fan_in: cin * k },
        });
    }
}

fn vector(out: &mut Vec<ParamSpec>, name: String, len: usize, value: f32) {
    out.push(ParamSpec {
        name,
        shape: vec![len],
        init: Init::Const(value),
    });
}

fn block(out: &mut Vec<ParamSpec>, prefix: &str, cfg: &ModelConfig) {
    let (b, h) = (cfg.bottleneck_channels, cfg.hidden_channels);
    conv(out, &format!("{prefix}.in"), h, b, 1, true);
    vector(out, format!("{prefix}.prelu1"), h, 0.25);
    vector(out, format!("{prefix}.norm1.gain"), h, 1.0);
    vector(out, format!("{prefix}.norm1.bias"), h, 0.0);
    conv(out, &format!("{prefix}.dw"), h, 1, cfg.tcn_kernel, true);
    vector(out, format!("{prefix}.prelu2"), h, 0.25);
    vector(out, format!("{prefix}.norm2.gain"), h, 1.0);
    vector(out, format!("{prefix}.norm2.bias"), h, 0.0);
    conv(out, &format!("{prefix}.out"), b, h, 1, true);
}

/// Encoder → 1×1 projection → TCN blocks → 1×1 head, shared by the
/// auxiliary network and the speech branch.
fn embedder(out: &mut Vec<ParamSpec>, prefix: &str, blocks: usize, cfg: &ModelConfig) {
    conv(
        out,
        &format!("{prefix}.encoder"),
        cfg.enc_channels,
        1,
        cfg.kernel,
        false,
    );
    conv(
        out,
        &format!("{prefix}.in_proj"),
        cfg.bottleneck_channels,
        cfg.enc_channels,
        1,
        true,
    );
    for i in 0..blocks {
        block(out, &format!("{prefix}.block{i}"), cfg);
    }
    conv(
        out,
        &format!("{prefix}.head"),
        cfg.embed_dim,
        cfg.bottleneck_channels,
        1,
        true,
    );
}

/// Every parameter the network reads, in a stable order.
pub fn parameter_layout(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let e = cfg.enc_channels;
    let n = cfg.embed_dim;
    let mut out = Vec::new();
    conv(&mut out, "encoder", e, 1, cfg.kernel, false);
    embedder(&mut out, "aux", cfg.aux_blocks, cfg);
    vector(&mut out, "separator.in_norm.gain".into(), e, 1.0);
    vector(&mut out, "separator.in_norm.bias".into(), e, 0.0);
    conv(
        &mut out,
        "separator.bottleneck",
        cfg.bottleneck_channels,
        e,
        1,
        true,
    );
    for i in 0..cfg.total_blocks() {
        block(&mut out, &format!("separator.block{i}"), cfg);
    }
    if n != cfg.bottleneck_channels {
        conv(&mut out, "adapt.proj", cfg.bottleneck_channels, n, 1, false);
    }
    conv(
        &mut out,
        "separator.mask",
        e,
        cfg.bottleneck_channels,
        1,
        true,
    );
    // Decoder kernels are laid out `enc_channels × 1 × K` for the transposed conv.
    out.push(ParamSpec {
        name: "decoder.weight".into(),
        shape: vec![e, 1, cfg.kernel],
        init: Init::Uniform { fan_in: e },
    });
    embedder(&mut out, "branch", cfg.speech_branch_blocks, cfg);
    out.push(ParamSpec {
        name: "fuse.weight".into(),
        shape: vec![n, 2 * n, 1],
        init: Init::Const(0.0),
    });
    vector(&mut out, "fuse.bias".into(), n, 0.0);
    vector(&mut out, "fuse.alpha".into(), n, 0.25);
    out
}

/// The mask-learning tensors of the fusion layer whose output is added to
/// the static embedding.
pub const MASK_LEARN_TENSORS: [&str; 2] = ["fuse.weight", "fuse.bias"];

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub tensor: Tensor,
    pub trainable: bool,
}

/// Named tensors with trainability flags plus the config they belong to.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    entries: BTreeMap<String, Entry>,
    pub config: ModelConfig,
    pub format_version: u32,
    access: Option<Arc<Mutex<BTreeSet<String>>>>,
}

impl PartialEq for Checkpoint {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries
            && self.config == other.config
            && self.format_version == other.format_version
    }
}

impl Checkpoint {
    pub fn empty(config: ModelConfig) -> Self {
        Self {
            entries: BTreeMap::new(),
            config,
            format_version: FORMAT_VERSION,
            access: None,
        }
    }

    /// Randomly initialised parameters. Baseline tensors start trainable and
    /// dynamic ones frozen; the fusion layer starts at zero so that dynamic
    /// inference initially reproduces the static network.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ckpt = Self::empty(config.clone());
        for spec in parameter_layout(&config) {
            let n: usize = spec.shape.iter().product();
            let data = match spec.init {
                Init::Const(v) => vec![v; n],
                Init::Uniform { fan_in } => {
                    let bound = 1.0 / (fan_in as f32).sqrt();
                    (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
                }
            };
            let trainable = Scope::of(&spec.name) == Scope::Baseline;
            ckpt.insert(spec.name, Tensor::new(spec.shape, data)?, trainable);
        }
        Ok(ckpt)
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor, trainable: bool) {
        self.entries
            .insert(name.into(), Entry { tensor, trainable });
    }

    pub fn entry(&self, name: &str) -> Result<&Entry> {
        if let Some(log) = &self.access {
            log.lock()
                .expect("access log poisoned")
                .insert(name.to_string());
        }
        self.entries
            .get(name)
            .ok_or_else(|| Error::MissingTensor(name.to_string()))
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.entry(name).map(|e| &e.tensor)
    }

    pub fn tensor_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.entries
            .get_mut(name)
            .map(|e| &mut e.tensor)
            .ok_or_else(|| Error::MissingTensor(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Entry)> {
        self.entries.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn parameter_count(&self) -> usize {
        self.entries.values().map(|e| e.tensor.len()).sum()
    }

    pub fn set_trainable(&mut self, name: &str, trainable: bool) -> Result<()> {
        self.entries
            .get_mut(name)
            .map(|e| e.trainable = trainable)
            .ok_or_else(|| Error::MissingTensor(name.to_string()))
    }

    pub fn set_scope_trainable(&mut self, scope: Scope, trainable: bool) {
        for (name, e) in self.entries.iter_mut() {
            if Scope::of(name) == scope {
                e.trainable = trainable;
            }
        }
    }

    /// Names in `scope`, in sorted order.
    pub fn scope_names(&self, scope: Scope) -> Vec<String> {
        self.entries
            .keys()
            .filter(|n| Scope::of(n) == scope)
            .cloned()
            .collect()
    }

    /// Zeroes the mask-learning weights and bias of the fusion layer so that
    /// the fused embedding equals the static one.
    pub fn zero_mask_learn(&mut self) -> Result<()> {
        for name in MASK_LEARN_TENSORS {
            self.tensor_mut(name)?.data_mut().fill(0.0);
        }
        Ok(())
    }

    /// Checks the config and that every tensor the network reads is present
    /// with the expected shape.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        for spec in parameter_layout(&self.config) {
            let entry = self
                .entries
                .get(&spec.name)
                .ok_or_else(|| Error::MissingTensor(spec.name.clone()))?;
            if entry.tensor.shape() != spec.shape.as_slice() {
                return Err(shape_err(
                    "checkpoint",
                    format!(
                        "`{}` has shape {:?}, expected {:?}",
                        spec.name,
                        entry.tensor.shape(),
                        spec.shape
                    ),
                ));
            }
        }
        Ok(())
    }

    /// Starts recording every tensor name read through [`Checkpoint::entry`].
    pub fn enable_access_log(&mut self) {
        self.access = Some(Arc::new(Mutex::new(BTreeSet::new())));
    }

    pub fn accessed(&self) -> BTreeSet<String> {
        self.access
            .as_ref()
            .map(|l| l.lock().expect("access log poisoned").clone())
            .unwrap_or_default()
    }

    /// True when every tensor of `scope` is bitwise identical in `other`.
    pub fn scope_bit_eq(&self, other: &Checkpoint, scope: Scope) -> bool {
        let mine = self.scope_names(scope);
        mine == other.scope_names(scope)
            && mine
                .iter()
                .all(|n| self.entries[n].tensor.bit_eq(&other.entries[n].tensor))
    }
}
