//! Parameter budgets, analytic compute estimates, and storage amortization.
//!
//! Counting conventions, fixed here and relied on by the report tests:
//!
//! * Parameter counts walk the model's parameter registry and group entries
//!   by name prefix. BN running statistics are buffers, not parameters, and
//!   are never counted.
//! * The headline compute figure counts **multiply–accumulate operations**
//!   (1 GFLOP = 1e9 MACs): matmuls and convolutions as `out·in·k²·H'·W'`,
//!   attention as `(N+1)²·D` for each of QKᵀ and AV. Bias additions are
//!   folded into the MAC count (not counted separately).
//! * Elementwise work is reported separately and informationally, at 1 FLOP
//!   per output element, except softmax (5 per element) and layer norm
//!   (8 per element). It contributes a few percent at most and is excluded
//!   from the headline figure.

use crate::error::Result;
use crate::model::{assemble, ModelCfg, ParamSpec, Variant};
use crate::prompt::{PROMPT_BLOCKS, PROMPT_CHANNELS};
use crate::config_err;
use alloc::format;
use alloc::string::String;

/// Per-element costs of the two non-trivial elementwise ops.
pub const SOFTMAX_FLOPS_PER_ELEMENT: u64 = 5;
pub const LAYERNORM_FLOPS_PER_ELEMENT: u64 = 8;

// ---------------------------------------------------------------------------
// Parameter budget
// ---------------------------------------------------------------------------

/// Exact parameter counts grouped by component, from the live registry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BudgetReport {
    pub variant: Variant,
    /// ViT weights (patch embed, class/pos tokens, transformer layers, final
    /// norm), excluding adapters.
    pub backbone: usize,
    /// Bottleneck adapter weights (0 when the variant has none).
    pub adapters: usize,
    /// Prompt-generator CNN weights (0 when the variant has none).
    pub prompt: usize,
    /// ASPP + segmentation head weights.
    pub decoder: usize,
    pub total: usize,
    pub trainable: usize,
    pub frozen: usize,
}

impl BudgetReport {
    pub fn trainable_fraction(&self) -> f64 {
        self.trainable as f64 / self.total as f64
    }

    /// `key=value` lines, one per field.
    pub fn to_kv_lines(&self) -> String {
        format!(
            "variant={}\nparams_total={}\nparams_trainable={}\nparams_frozen={}\n\
             trainable_fraction={:.6}\nbackbone_params={}\nadapter_params={}\n\
             prompt_params={}\ndecoder_params={}\n",
            self.variant.name(),
            self.total,
            self.trainable,
            self.frozen,
            self.trainable_fraction(),
            self.backbone,
            self.adapters,
            self.prompt,
            self.decoder
        )
    }
}

/// Groups a parameter registry into a [`BudgetReport`].
pub fn budget_from_specs(specs: &[ParamSpec], variant: Variant) -> BudgetReport {
    let group = |pred: &dyn Fn(&ParamSpec) -> bool| -> usize {
        specs.iter().filter(|s| pred(s)).map(|s| s.numel()).sum()
    };
    let adapters = group(&|s| s.name.contains(".adapter_"));
    let backbone = group(&|s| s.name.starts_with("backbone.")) - adapters;
    let prompt = group(&|s| s.name.starts_with("prompt."));
    let decoder = group(&|s| s.name.starts_with("decoder."));
    let total: usize = specs.iter().map(|s| s.numel()).sum();
    let trainable: usize = specs.iter().filter(|s| s.trainable).map(|s| s.numel()).sum();
    BudgetReport {
        variant,
        backbone,
        adapters,
        prompt,
        decoder,
        total,
        trainable,
        frozen: total - trainable,
    }
}

/// Builds the registry for `cfg` and counts it. Counts depend only on the
/// configuration, never on seeds or weight values.
pub fn count_params(cfg: &ModelCfg) -> Result<BudgetReport> {
    let assembly = assemble(cfg)?;
    Ok(budget_from_specs(&assembly.params, cfg.variant))
}

// -- Closed forms (kept independent of the registry on purpose; the tests
//    cross-check them against `count_params` group by group). ---------------

/// ViT parameters excluding adapters: patch embedding, class token,
/// positional table, `L·(12D² + 13D)` for the layers, and the final norm.
pub fn closed_form_backbone(cfg: &ModelCfg) -> usize {
    let d = cfg.dim;
    let n = (cfg.image_size / cfg.patch) * (cfg.image_size / cfg.patch);
    let patch_embed = d * 3 * cfg.patch * cfg.patch + d;
    let tokens = d + (n + 1) * d;
    let per_layer = 12 * d * d + 13 * d;
    patch_embed + tokens + cfg.depth * per_layer + 2 * d
}

/// Adapter parameters: two bottlenecks per layer, `2·D²/r` weights each.
pub fn closed_form_adapters(cfg: &ModelCfg) -> usize {
    if !cfg.variant.use_adapters() {
        return 0;
    }
    cfg.depth * 4 * cfg.dim * cfg.dim / cfg.adapter_ratio
}

/// Prompt CNN parameters: 7×7 stem conv + BN, then `PROMPT_BLOCKS` residual
/// blocks of two 3×3 convs with BNs (convs bias-free, BN affine pairs).
pub fn closed_form_prompt(cfg: &ModelCfg) -> usize {
    if !cfg.variant.use_prompt() {
        return 0;
    }
    let c = PROMPT_CHANNELS;
    let stem = c * 3 * 7 * 7 + 2 * c;
    let block = 2 * (c * c * 3 * 3) + 2 * (2 * c);
    stem + PROMPT_BLOCKS * block
}

/// Decoder parameters: ASPP (1×1, three dilated 3×3, pooled 1×1, 5C→C fuse)
/// plus the three-conv head. All decoder convs carry biases.
pub fn closed_form_decoder(cfg: &ModelCfg) -> usize {
    let c = crate::decoder::ASPP_CHANNELS;
    let d = cfg.dim;
    let conv = |cout: usize, cin: usize, k: usize| cout * cin * k * k + cout;
    let aspp = conv(c, d, 1) + 3 * conv(c, d, 3) + conv(c, d, 1) + conv(c, 5 * c, 1);
    let head = conv(c, cfg.head_in_channels(), 3) + conv(c, c, 3) + conv(1, c, 1);
    aspp + head
}

// ---------------------------------------------------------------------------
// Compute estimate
// ---------------------------------------------------------------------------

/// Analytic inference-cost estimate for one image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlopsReport {
    pub variant: Variant,
    pub image_size: usize,
    /// ViT MACs excluding adapters (patch embedding + transformer layers).
    pub backbone_macs: u64,
    pub adapter_macs: u64,
    pub prompt_macs: u64,
    pub aspp_macs: u64,
    pub head_macs: u64,
    pub total_macs: u64,
    /// Informational elementwise FLOPs (activations, norms, softmax,
    /// residual adds, interpolation); excluded from the headline.
    pub elementwise_flops: u64,
}

impl FlopsReport {
    /// Headline figure: total MACs in units of 1e9.
    pub fn headline_gflops(&self) -> f64 {
        self.total_macs as f64 / 1e9
    }

    pub fn elementwise_gflops(&self) -> f64 {
        self.elementwise_flops as f64 / 1e9
    }

    /// `key=value` lines, one per field.
    pub fn to_kv_lines(&self) -> String {
        format!(
            "variant={}\nimage_size={}\nheadline_gflops={:.4}\ntotal_macs={}\n\
             backbone_macs={}\nadapter_macs={}\nprompt_macs={}\naspp_macs={}\n\
             head_macs={}\nelementwise_gflops={:.4}\n",
            self.variant.name(),
            self.image_size,
            self.headline_gflops(),
            self.total_macs,
            self.backbone_macs,
            self.adapter_macs,
            self.prompt_macs,
            self.aspp_macs,
            self.head_macs,
            self.elementwise_gflops()
        )
    }
}

/// Closed-form adapter MACs: per layer, two bottlenecks of `2·(N+1)·D²/r`
/// MACs each, i.e. `L · 2 · (N+1) · (2·D²/r)` in total.
pub fn adapter_macs_closed_form(cfg: &ModelCfg) -> u64 {
    if !cfg.variant.use_adapters() {
        return 0;
    }
    let grid = cfg.image_size / cfg.patch;
    let t = (grid * grid + 1) as u64;
    let d = cfg.dim as u64;
    cfg.depth as u64 * 2 * t * (2 * d * d / cfg.adapter_ratio as u64)
}

fn conv_macs(cout: usize, cin: usize, k: usize, out_hw: usize) -> u64 {
    cout as u64 * cin as u64 * (k * k) as u64 * out_hw as u64
}

/// Analytic MAC/elementwise count for `cfg` at its configured image size.
pub fn estimate_flops(cfg: &ModelCfg) -> Result<FlopsReport> {
    cfg.validate()?;
    let s = cfg.image_size;
    let d = cfg.dim as u64;
    let grid = s / cfg.patch;
    let n = (grid * grid) as u64;
    let t = n + 1;
    let l = cfg.depth as u64;
    let heads = cfg.heads as u64;

    // Backbone: patch embedding + L transformer layers.
    let patch_embed = n * d * (3 * cfg.patch * cfg.patch) as u64;
    let per_layer = 12 * t * d * d + 2 * t * t * d;
    let backbone_macs = patch_embed + l * per_layer;

    let adapter_macs = adapter_macs_closed_form(cfg);

    // Prompt CNN: 7×7 stem at S/2, six 3×3 block convs at S/4.
    let prompt_macs = if cfg.variant.use_prompt() {
        let c = PROMPT_CHANNELS;
        conv_macs(c, 3, 7, (s / 2) * (s / 2))
            + 2 * PROMPT_BLOCKS as u64 * conv_macs(c, c, 3, (s / 4) * (s / 4))
    } else {
        0
    };

    // ASPP on the grid-resolution feature map.
    let c = crate::decoder::ASPP_CHANNELS;
    let g2 = grid * grid;
    let aspp_macs = conv_macs(c, cfg.dim, 1, g2)
        + 3 * conv_macs(c, cfg.dim, 3, g2)
        + conv_macs(c, cfg.dim, 1, 1)
        + conv_macs(c, 5 * c, 1, g2);

    // Head at quarter image resolution.
    let u2 = (s / 4) * (s / 4);
    let head_macs = conv_macs(c, cfg.head_in_channels(), 3, u2)
        + conv_macs(c, c, 3, u2)
        + conv_macs(1, c, 1, u2);

    let total_macs = backbone_macs + adapter_macs + prompt_macs + aspp_macs + head_macs;

    // Elementwise inventory (informational).
    let mut ew = 0u64;
    // Per layer: two norms, softmax + scale, MLP GELU, two residual adds.
    let mut per_layer_ew = 2 * LAYERNORM_FLOPS_PER_ELEMENT * t * d
        + SOFTMAX_FLOPS_PER_ELEMENT * heads * t * t
        + heads * t * t
        + t * 4 * d
        + 2 * t * d;
    if cfg.variant.use_adapters() {
        // Adapter GELUs plus their additions into the residual stream.
        per_layer_ew += 2 * t * d / cfg.adapter_ratio as u64 + 2 * t * d;
    }
    ew += l * per_layer_ew + LAYERNORM_FLOPS_PER_ELEMENT * t * d;
    if cfg.variant.use_prompt() {
        let c = PROMPT_CHANNELS as u64;
        let half = ((s / 2) * (s / 2)) as u64;
        let quarter = ((s / 4) * (s / 4)) as u64;
        // Stem BN+ReLU at S/2; per block two BN+ReLU pairs and one add at S/4.
        ew += 2 * c * half + PROMPT_BLOCKS as u64 * (5 * c * quarter);
    }
    {
        let c = c as u64;
        let g2 = g2 as u64;
        let u2 = u2 as u64;
        // ASPP ReLUs, global pool reduction, fused ReLU; head ReLUs; both
        // bilinear interpolations at one FLOP per output element.
        ew += 4 * c * g2 + d * g2 + c + c * g2;
        ew += 2 * c * u2;
        ew += c * u2 + (s * s) as u64;
    }

    Ok(FlopsReport {
        variant: cfg.variant,
        image_size: s,
        backbone_macs,
        adapter_macs,
        prompt_macs,
        aspp_macs,
        head_macs,
        total_macs,
        elementwise_flops: ew,
    })
}

// ---------------------------------------------------------------------------
// Storage amortization
// ---------------------------------------------------------------------------

/// Parameter storage for serving `n_domains` specialized models.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StorageReport {
    pub n_domains: usize,
    /// Full fine-tuning: `n` complete single-task models.
    pub full_finetune: u64,
    /// Adapter-style tuning: one shared frozen trunk plus `n` tuned deltas.
    pub peft: u64,
}

impl StorageReport {
    pub fn to_kv_lines(&self) -> String {
        format!(
            "n_domains={}\nfull_finetune_params={}\npeft_params={}\n",
            self.n_domains, self.full_finetune, self.peft
        )
    }
}

/// Compares storing `n` fully fine-tuned baseline models against one frozen
/// trunk shared by `n` sets of tuned weights. `dims` supplies the
/// architecture; its `variant` field is ignored.
pub fn storage_amortization(n_domains: usize, dims: &ModelCfg) -> Result<StorageReport> {
    if n_domains == 0 {
        return Err(config_err!("storage: n_domains must be at least 1"));
    }
    let base = count_params(&ModelCfg {
        variant: Variant::Base,
        ..*dims
    })?;
    let avit = count_params(&ModelCfg {
        variant: Variant::Avit,
        ..*dims
    })?;
    let n = n_domains as u64;
    Ok(StorageReport {
        n_domains,
        full_finetune: n * base.total as u64,
        peft: avit.frozen as u64 + n * avit.trainable as u64,
    })
}
