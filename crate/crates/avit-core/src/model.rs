//! Model assembly: variants, the parameter registry, the freezing contract,
//! and the full forward pass.
//!
//! Every parameter has a stable hierarchical name (the checkpoint contract),
//! a trainable flag derived from the variant, and a deterministic
//! initialization seeded from `seed ^ fnv1a(name)`. Because initialization
//! is keyed by name rather than enumeration order, two variants that share a
//! parameter (same name, same shape) initialize it to identical values —
//! which is what makes cross-variant identity tests and shared "pre-trained"
//! backbones work by construction.

use crate::backbone::{self, AdapterVars, BackboneCfg, BackboneVars, LayerVars};
use crate::decoder::{self, AsppVars, DecoderVars, HeadVars, ASPP_CHANNELS, ASPP_DILATIONS};
use crate::error::{fmt_shape, Result};
use crate::prompt::{self, BlockVars, BnState, BnVars, PromptVars, PROMPT_BLOCKS, PROMPT_CHANNELS};
use crate::rng::Rng;
use crate::tensor::{Tape, Tensor, Var};
use crate::{config_err, contract_err, Scalar};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

/// The five model variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Adapters + prompt generator + frozen backbone (LN trainable).
    Avit,
    /// Adapters + frozen backbone, no prompt generator.
    NoPrompt,
    /// Prompt generator + frozen backbone, no adapters.
    NoAdapter,
    /// Plain model, backbone entirely frozen (including LNs).
    BaseStar,
    /// Plain model, everything trainable.
    Base,
}

impl Variant {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "avit" => Ok(Variant::Avit),
            "no_prompt" => Ok(Variant::NoPrompt),
            "no_adapter" => Ok(Variant::NoAdapter),
            "base_star" => Ok(Variant::BaseStar),
            "base" => Ok(Variant::Base),
            other => Err(config_err!(
                "unknown variant '{other}' (expected avit, no_prompt, no_adapter, base_star, base)"
            )),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Variant::Avit => "avit",
            Variant::NoPrompt => "no_prompt",
            Variant::NoAdapter => "no_adapter",
            Variant::BaseStar => "base_star",
            Variant::Base => "base",
        }
    }

    pub fn use_adapters(&self) -> bool {
        matches!(self, Variant::Avit | Variant::NoPrompt)
    }

    pub fn use_prompt(&self) -> bool {
        matches!(self, Variant::Avit | Variant::NoAdapter)
    }

    pub fn freeze_backbone(&self) -> bool {
        !matches!(self, Variant::Base)
    }

    /// Whether backbone LayerNorm scales/shifts stay trainable despite the
    /// backbone freeze. True for every frozen variant except `base_star`,
    /// which freezes the backbone outright.
    pub fn train_backbone_ln(&self) -> bool {
        matches!(self, Variant::Avit | Variant::NoPrompt | Variant::NoAdapter)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelCfg {
    pub image_size: usize,
    pub patch: usize,
    pub dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub adapter_ratio: usize,
    pub variant: Variant,
}

impl ModelCfg {
    /// Full-scale configuration: ViT-B/16 at 224².
    pub fn vit_b16(variant: Variant) -> Self {
        ModelCfg {
            image_size: 224,
            patch: 16,
            dim: 768,
            depth: 12,
            heads: 12,
            adapter_ratio: 4,
            variant,
        }
    }

    /// Desk-scale configuration: 32² images, patch 4, D=32, 2 layers.
    pub fn toy(variant: Variant) -> Self {
        ModelCfg {
            image_size: 32,
            patch: 4,
            dim: 32,
            depth: 2,
            heads: 4,
            adapter_ratio: 4,
            variant,
        }
    }

    pub fn backbone_cfg(&self) -> BackboneCfg {
        BackboneCfg {
            image_size: self.image_size,
            patch: self.patch,
            dim: self.dim,
            depth: self.depth,
            heads: self.heads,
            adapter_ratio: self.adapter_ratio,
            adapters_enabled: self.variant.use_adapters(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone_cfg().validate()?;
        if self.patch % 4 != 0 {
            return Err(config_err!(
                "model: patch size {} must be a multiple of 4 (decoder head runs at stride 4)",
                self.patch
            ));
        }
        Ok(())
    }

    /// Upsample factor from ASPP output (stride P) to head input (stride 4).
    pub fn up_factor(&self) -> usize {
        self.patch / 4
    }

    /// Input channels of the decoder head's first conv.
    pub fn head_in_channels(&self) -> usize {
        if self.variant.use_prompt() {
            ASPP_CHANNELS + PROMPT_CHANNELS
        } else {
            ASPP_CHANNELS
        }
    }
}

/// Deterministic initialization families.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    TruncNormal(f64),
    Zeros,
    Ones,
    /// Uniform on `±bound`.
    UniformSym(f64),
    /// Normal with He std `√(2/fan_in)`.
    HeNormal(usize),
}

/// One registered parameter: its checkpoint name, shape, and contract flags.
#[derive(Debug, Clone)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
    /// Whether decoupled weight decay applies (weight matrices only — never
    /// biases, LN/BN scales/shifts, class token, or position embeddings).
    pub decay: bool,
    pub init: Init,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// BatchNorm parameter indices; the layer's running-stat buffer is the
/// next entry of `Model::buffers` in forward order (stem, then per-block),
/// which matches the order `assemble` registers buffer prefixes.
#[derive(Debug, Clone, Copy)]
struct BnIdx {
    gamma: usize,
    beta: usize,
}

#[derive(Debug, Clone, Copy)]
struct BlockIdx {
    conv1: usize,
    bn1: BnIdx,
    conv2: usize,
    bn2: BnIdx,
}

#[derive(Debug, Clone)]
struct PromptIdx {
    stem_conv: usize,
    stem_bn: BnIdx,
    blocks: Vec<BlockIdx>,
}

#[derive(Debug, Clone, Copy)]
struct LayerIdx {
    ln1: (usize, usize),
    qkv: (usize, usize),
    proj: (usize, usize),
    adapter_msa: Option<(usize, usize)>,
    ln2: (usize, usize),
    fc1: (usize, usize),
    fc2: (usize, usize),
    adapter_mlp: Option<(usize, usize)>,
}

#[derive(Debug, Clone, Copy)]
struct DecoderIdx {
    aspp: [(usize, usize); 6],
    head: [(usize, usize); 3],
}

#[derive(Debug, Clone)]
struct Layout {
    patch_embed: (usize, usize),
    class_token: usize,
    pos_embed: usize,
    layers: Vec<LayerIdx>,
    ln_final: (usize, usize),
    prompt: Option<PromptIdx>,
    decoder: DecoderIdx,
}

/// The complete parameter/buffer registry for a configuration.
pub struct Assembly {
    pub params: Vec<ParamSpec>,
    /// BatchNorm buffer name prefixes (each owns `.running_mean` and
    /// `.running_var`), in forward order.
    pub buffer_prefixes: Vec<String>,
    layout: Layout,
}

struct Builder {
    specs: Vec<ParamSpec>,
    buffers: Vec<String>,
    freeze_backbone: bool,
    train_ln: bool,
    ln_dim: usize,
}

impl Builder {
    fn new(freeze_backbone: bool, train_ln: bool, ln_dim: usize) -> Self {
        Builder {
            specs: Vec::new(),
            buffers: Vec::new(),
            freeze_backbone,
            train_ln,
            ln_dim,
        }
    }

    fn add(
        &mut self,
        name: String,
        shape: Vec<usize>,
        trainable: bool,
        decay: bool,
        init: Init,
    ) -> usize {
        self.specs.push(ParamSpec {
            name,
            shape,
            trainable,
            decay,
            init,
        });
        self.specs.len() - 1
    }

    /// Backbone weight matrix (decay applies; frozen under the contract).
    fn bb_weight(&mut self, name: String, shape: Vec<usize>) -> usize {
        self.add(name, shape, !self.freeze_backbone, true, Init::TruncNormal(0.02))
    }

    /// Backbone bias / token / position embedding (no decay).
    fn bb_vector(&mut self, name: String, shape: Vec<usize>, init: Init) -> usize {
        self.add(name, shape, !self.freeze_backbone, false, init)
    }

    /// Backbone LayerNorm pair; trainable when the variant tunes LNs.
    fn bb_ln(&mut self, prefix: &str) -> (usize, usize) {
        let t = !self.freeze_backbone || self.train_ln;
        let d = self.ln_dim;
        let g = self.add(format!("{prefix}.weight"), vec![d], t, false, Init::Ones);
        let b = self.add(format!("{prefix}.bias"), vec![d], t, false, Init::Zeros);
        (g, b)
    }

    fn add_buffer(&mut self, prefix: String) {
        self.buffers.push(prefix);
    }
}

/// Enumerates every parameter and buffer for a configuration, along with the
/// internal index layout used by the forward pass. This is the single source
/// of truth for names, shapes, trainability, and initialization.
pub fn assemble(cfg: &ModelCfg) -> Result<Assembly> {
    cfg.validate()?;
    let d = cfg.dim;
    let n = cfg.backbone_cfg().tokens();
    let mut b = Builder::new(
        cfg.variant.freeze_backbone(),
        cfg.variant.train_backbone_ln(),
        d,
    );

    // Backbone.
    let patch_embed = (
        b.bb_weight(
            "backbone.patch_embed.weight".to_string(),
            vec![d, 3 * cfg.patch * cfg.patch],
        ),
        b.bb_vector(
            "backbone.patch_embed.bias".to_string(),
            vec![d],
            Init::Zeros,
        ),
    );
    let class_token = b.bb_vector(
        "backbone.class_token".to_string(),
        vec![1, d],
        Init::TruncNormal(0.02),
    );
    let pos_embed = b.bb_vector(
        "backbone.pos_embed".to_string(),
        vec![n + 1, d],
        Init::TruncNormal(0.02),
    );
    let adapter_hidden = d / cfg.adapter_ratio;
    let mut layers = Vec::with_capacity(cfg.depth);
    for i in 0..cfg.depth {
        let p = format!("backbone.layer{i}");
        let ln1 = b.bb_ln(&format!("{p}.ln1"));
        let qkv = (
            b.bb_weight(format!("{p}.qkv.weight"), vec![3 * d, d]),
            b.bb_vector(format!("{p}.qkv.bias"), vec![3 * d], Init::Zeros),
        );
        let proj = (
            b.bb_weight(format!("{p}.proj.weight"), vec![d, d]),
            b.bb_vector(format!("{p}.proj.bias"), vec![d], Init::Zeros),
        );
        let ln2 = b.bb_ln(&format!("{p}.ln2"));
        let fc1 = (
            b.bb_weight(format!("{p}.fc1.weight"), vec![4 * d, d]),
            b.bb_vector(format!("{p}.fc1.bias"), vec![4 * d], Init::Zeros),
        );
        let fc2 = (
            b.bb_weight(format!("{p}.fc2.weight"), vec![d, 4 * d]),
            b.bb_vector(format!("{p}.fc2.bias"), vec![d], Init::Zeros),
        );
        let adapter = |suffix: &str, b: &mut Builder| -> (usize, usize) {
            let bound = 1.0 / libm::sqrt(d as f64);
            (
                b.add(
                    format!("{p}.{suffix}.w_down"),
                    vec![d, adapter_hidden],
                    true,
                    true,
                    Init::UniformSym(bound),
                ),
                b.add(
                    format!("{p}.{suffix}.w_up"),
                    vec![adapter_hidden, d],
                    true,
                    true,
                    Init::Zeros,
                ),
            )
        };
        let (adapter_msa, adapter_mlp) = if cfg.variant.use_adapters() {
            (
                Some(adapter("adapter_msa", &mut b)),
                Some(adapter("adapter_mlp", &mut b)),
            )
        } else {
            (None, None)
        };
        layers.push(LayerIdx {
            ln1,
            qkv,
            proj,
            adapter_msa,
            ln2,
            fc1,
            fc2,
            adapter_mlp,
        });
    }
    let ln_final = b.bb_ln("backbone.ln_final");

    // Prompt generator (always trainable when present).
    let prompt = if cfg.variant.use_prompt() {
        let c = PROMPT_CHANNELS;
        let conv = |name: String, cout: usize, cin: usize, k: usize, b: &mut Builder| {
            b.add(
                name,
                vec![cout, cin, k, k],
                true,
                true,
                Init::HeNormal(cin * k * k),
            )
        };
        let bn = |prefix: String, b: &mut Builder| -> BnIdx {
            let gamma = b.add(format!("{prefix}.weight"), vec![c], true, false, Init::Ones);
            let beta = b.add(format!("{prefix}.bias"), vec![c], true, false, Init::Zeros);
            b.add_buffer(prefix);
            BnIdx { gamma, beta }
        };
        let stem_conv = conv("prompt.stem.conv.weight".to_string(), c, 3, 7, &mut b);
        let stem_bn = bn("prompt.stem.bn".to_string(), &mut b);
        let blocks = (0..PROMPT_BLOCKS)
            .map(|i| {
                let p = format!("prompt.block{i}");
                let conv1 = conv(format!("{p}.conv1.weight"), c, c, 3, &mut b);
                let bn1 = bn(format!("{p}.bn1"), &mut b);
                let conv2 = conv(format!("{p}.conv2.weight"), c, c, 3, &mut b);
                let bn2 = bn(format!("{p}.bn2"), &mut b);
                BlockIdx {
                    conv1,
                    bn1,
                    conv2,
                    bn2,
                }
            })
            .collect();
        Some(PromptIdx {
            stem_conv,
            stem_bn,
            blocks,
        })
    } else {
        None
    };

    // Decoder (always trainable).
    let ac = ASPP_CHANNELS;
    let dconv = |name: String, cout: usize, cin: usize, k: usize, init: Option<Init>, b: &mut Builder| {
        let w_init = init.unwrap_or(Init::HeNormal(cin * k * k));
        (
            b.add(format!("{name}.weight"), vec![cout, cin, k, k], true, true, w_init),
            b.add(format!("{name}.bias"), vec![cout], true, false, Init::Zeros),
        )
    };
    let aspp = [
        dconv("decoder.aspp.b0".to_string(), ac, d, 1, None, &mut b),
        dconv("decoder.aspp.b1".to_string(), ac, d, 3, None, &mut b),
        dconv("decoder.aspp.b2".to_string(), ac, d, 3, None, &mut b),
        dconv("decoder.aspp.b3".to_string(), ac, d, 3, None, &mut b),
        dconv("decoder.aspp.pool".to_string(), ac, d, 1, None, &mut b),
        dconv("decoder.aspp.fuse".to_string(), ac, 5 * ac, 1, None, &mut b),
    ];
    let head = [
        dconv(
            "decoder.head.conv1".to_string(),
            ac,
            cfg.head_in_channels(),
            3,
            None,
            &mut b,
        ),
        dconv("decoder.head.conv2".to_string(), ac, ac, 3, None, &mut b),
        // Zero-initialized final conv: training starts from uniform logits.
        dconv(
            "decoder.head.conv3".to_string(),
            1,
            ac,
            1,
            Some(Init::Zeros),
            &mut b,
        ),
    ];

    let dilations_ok = ASPP_DILATIONS.iter().all(|&r| r >= 1);
    debug_assert!(dilations_ok);

    Ok(Assembly {
        params: b.specs,
        buffer_prefixes: b.buffers,
        layout: Layout {
            patch_embed,
            class_token,
            pos_embed,
            layers,
            ln_final,
            prompt,
            decoder: DecoderIdx { aspp, head },
        },
    })
}

/// Materializes one parameter from its spec, deterministically in
/// `seed ^ fnv1a(name)`.
pub fn init_param<E: Scalar>(spec: &ParamSpec, seed: u64) -> Tensor<E> {
    let mut rng = Rng::derive(seed, &spec.name);
    let n = spec.numel();
    let data: Vec<E> = match spec.init {
        Init::Zeros => return Tensor::zeros(&spec.shape),
        Init::Ones => return Tensor::full(&spec.shape, E::ONE),
        Init::TruncNormal(std) => (0..n)
            .map(|_| E::from_f64(rng.trunc_normal(std)))
            .collect(),
        Init::UniformSym(bound) => (0..n)
            .map(|_| E::from_f64(rng.uniform_in(-bound, bound)))
            .collect(),
        Init::HeNormal(fan_in) => {
            let std = libm::sqrt(2.0 / fan_in as f64);
            (0..n).map(|_| E::from_f64(rng.normal() * std)).collect()
        }
    };
    Tensor::from_vec(&spec.shape, data).expect("spec shape matches generated data")
}

/// BatchNorm running statistics for one layer.
pub struct BnBuffers<E: Scalar> {
    pub prefix: String,
    pub mean: Tensor<E>,
    pub var: Tensor<E>,
}

/// Result of one forward pass: variables live on the tape that ran it.
pub struct ForwardOut {
    /// `[B, 1, H, W]` segmentation logits.
    pub logits: Var,
    /// Backbone feature map `V: [B, D, H/P, W/P]`.
    pub v_feat: Var,
    /// Per-layer backbone token states `[z₀ … z_L]`.
    pub states: Vec<Var>,
    /// Leaf variables aligned with the model's parameter order.
    pub param_vars: Vec<Var>,
}

pub struct Model<E: Scalar> {
    pub cfg: ModelCfg,
    specs: Vec<ParamSpec>,
    params: Vec<Tensor<E>>,
    buffers: Vec<BnBuffers<E>>,
    layout: Layout,
}

impl<E: Scalar> Model<E> {
    /// Builds and deterministically initializes a model.
    pub fn build(cfg: ModelCfg, seed: u64) -> Result<Self> {
        let assembly = assemble(&cfg)?;
        let params: Vec<Tensor<E>> = assembly
            .params
            .iter()
            .map(|s| {
                let mut t = init_param::<E>(s, seed);
                t.requires_grad = s.trainable;
                t
            })
            .collect();
        let buffers = assembly
            .buffer_prefixes
            .iter()
            .map(|p| BnBuffers {
                prefix: p.clone(),
                mean: Tensor::zeros(&[PROMPT_CHANNELS]),
                var: Tensor::full(&[PROMPT_CHANNELS], E::ONE),
            })
            .collect();
        Ok(Model {
            cfg,
            specs: assembly.params,
            params,
            buffers,
            layout: assembly.layout,
        })
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn params(&self) -> &[Tensor<E>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<E>] {
        &mut self.params
    }

    /// Parameter storage and the matching specs, borrowed disjointly so an
    /// optimizer can read specs while writing parameters.
    pub fn params_and_specs_mut(&mut self) -> (&mut [Tensor<E>], &[ParamSpec]) {
        (&mut self.params, &self.specs)
    }

    pub fn total_param_count(&self) -> usize {
        self.specs.iter().map(|s| s.numel()).sum()
    }

    pub fn trainable_param_count(&self) -> usize {
        self.specs
            .iter()
            .filter(|s| s.trainable)
            .map(|s| s.numel())
            .sum()
    }

    /// All checkpointable tensors: parameters first, then BN buffers.
    pub fn tensor_entries(&self) -> Vec<(String, &Tensor<E>)> {
        let mut out: Vec<(String, &Tensor<E>)> = self
            .specs
            .iter()
            .zip(&self.params)
            .map(|(s, t)| (s.name.clone(), t))
            .collect();
        for b in &self.buffers {
            out.push((format!("{}.running_mean", b.prefix), &b.mean));
            out.push((format!("{}.running_var", b.prefix), &b.var));
        }
        out
    }

    /// Mutable lookup by checkpoint name (parameters and BN buffers).
    pub fn entry_mut(&mut self, name: &str) -> Option<&mut Tensor<E>> {
        if let Some(i) = self.specs.iter().position(|s| s.name == name) {
            return Some(&mut self.params[i]);
        }
        for b in &mut self.buffers {
            if name == format!("{}.running_mean", b.prefix) {
                return Some(&mut b.mean);
            }
            if name == format!("{}.running_var", b.prefix) {
                return Some(&mut b.var);
            }
        }
        None
    }

    /// Runs the model on a batch of images `[B, 3, H, W]`, recording the
    /// computation on `tape`. The model stays mutably borrowed for the
    /// tape's lifetime (training mode updates BN running statistics).
    pub fn forward_on<'p>(
        &'p mut self,
        tape: &mut Tape<'p, E>,
        image: &'p Tensor<E>,
        training: bool,
    ) -> Result<ForwardOut> {
        let Model {
            cfg,
            params,
            buffers,
            layout,
            ..
        } = self;
        let s = image.shape();
        if s.len() != 4 || s[1] != 3 || s[2] != cfg.image_size || s[3] != cfg.image_size {
            return Err(config_err!(
                "forward: expected image batch [B, 3, {0}, {0}], got {1:?}",
                cfg.image_size,
                s
            ));
        }
        let param_vars: Vec<Var> = params.iter().map(|t| tape.leaf(t)).collect();
        let at = |i: usize| param_vars[i];
        let pair = |p: (usize, usize)| (param_vars[p.0], param_vars[p.1]);

        let img = tape.leaf(image);
        let bvars = BackboneVars {
            patch_embed: pair(layout.patch_embed),
            class_token: at(layout.class_token),
            pos_embed: at(layout.pos_embed),
            layers: layout
                .layers
                .iter()
                .map(|l| LayerVars {
                    ln1: pair(l.ln1),
                    qkv: pair(l.qkv),
                    proj: pair(l.proj),
                    ln2: pair(l.ln2),
                    fc1: pair(l.fc1),
                    fc2: pair(l.fc2),
                    adapter_msa: l.adapter_msa.map(|a| AdapterVars {
                        down: param_vars[a.0],
                        up: param_vars[a.1],
                    }),
                    adapter_mlp: l.adapter_mlp.map(|a| AdapterVars {
                        down: param_vars[a.0],
                        up: param_vars[a.1],
                    }),
                })
                .collect(),
            ln_final: pair(layout.ln_final),
        };
        let (v_feat, states) = backbone::forward(tape, img, &bvars, &cfg.backbone_cfg())?;

        let t_feat = match &layout.prompt {
            Some(p) => {
                let bn = |i: BnIdx| BnVars {
                    gamma: at(i.gamma),
                    beta: at(i.beta),
                };
                let pvars = PromptVars {
                    stem_conv: at(p.stem_conv),
                    stem_bn: bn(p.stem_bn),
                    blocks: p
                        .blocks
                        .iter()
                        .map(|blk| BlockVars {
                            conv1: at(blk.conv1),
                            bn1: bn(blk.bn1),
                            conv2: at(blk.conv2),
                            bn2: bn(blk.bn2),
                        })
                        .collect(),
                };
                // Buffer order matches forward order: stem, then per-block.
                let mut states: Vec<BnState<'_, E>> = buffers
                    .iter_mut()
                    .map(|b| BnState {
                        mean: &mut b.mean,
                        var: &mut b.var,
                    })
                    .collect();
                Some(prompt::prompt_forward(
                    tape, img, &pvars, &mut states, training,
                )?)
            }
            None => None,
        };

        let dvars = DecoderVars {
            aspp: AsppVars {
                b0: pair(layout.decoder.aspp[0]),
                b1: pair(layout.decoder.aspp[1]),
                b2: pair(layout.decoder.aspp[2]),
                b3: pair(layout.decoder.aspp[3]),
                pool: pair(layout.decoder.aspp[4]),
                fuse: pair(layout.decoder.aspp[5]),
            },
            head: HeadVars {
                conv1: pair(layout.decoder.head[0]),
                conv2: pair(layout.decoder.head[1]),
                conv3: pair(layout.decoder.head[2]),
            },
        };
        let logits = decoder::decode(tape, v_feat, t_feat, &dvars, cfg.up_factor())?;
        Ok(ForwardOut {
            logits,
            v_feat,
            states,
            param_vars,
        })
    }

    /// Overwrites named tensors (parameters or BN buffers) from a snapshot.
    /// Every entry must name an existing tensor of identical shape; entries
    /// may cover any subset of the model. Only values are copied — the
    /// model's own gradient flags stay as the variant built them.
    pub fn restore_entries(&mut self, entries: &[(String, Tensor<E>)]) -> Result<()> {
        for (name, tensor) in entries {
            let slot = self
                .entry_mut(name)
                .ok_or_else(|| contract_err!("restore: model has no tensor named `{name}`"))?;
            if slot.shape() != tensor.shape() {
                return Err(contract_err!(
                    "restore: `{name}` has shape {} but snapshot has {}",
                    fmt_shape(slot.shape()),
                    fmt_shape(tensor.shape())
                ));
            }
            slot.data_mut().copy_from_slice(tensor.data());
        }
        Ok(())
    }

    /// Eval-mode forward returning the logits as an owned tensor.
    pub fn infer_logits(&mut self, image: &Tensor<E>) -> Result<Tensor<E>> {
        let mut tape = Tape::new();
        let out = self.forward_on(&mut tape, image, false)?;
        let shape = tape.shape(out.logits).to_vec();
        let data = tape.data(out.logits).to_vec();
        Tensor::from_vec(&shape, data)
    }
}
