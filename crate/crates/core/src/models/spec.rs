use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidSpec(msg.into())
}

/// Branch layout shared by every module of a backbone. The input width is
/// filled in per module when the backbone is built.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModuleTemplate {
    pub conv_kernels: Vec<usize>,
    pub use_maxpool_branch: bool,
    /// Filters per branch (Df).
    pub filters: usize,
    /// Bottleneck width (Db).
    pub bottleneck: usize,
}

impl ModuleTemplate {
    /// One k=3 convolution branch plus the max-pool branch.
    pub fn lite(filters: usize, bottleneck: usize) -> Self {
        Self { conv_kernels: vec![3], use_maxpool_branch: true, filters, bottleneck }
    }

    /// Three convolution branches (k = 3, 5, 7) plus the max-pool branch.
    pub fn classic(filters: usize, bottleneck: usize) -> Self {
        Self { conv_kernels: vec![3, 5, 7], use_maxpool_branch: true, filters, bottleneck }
    }

    /// Parses labels such as `"1+1"` or `"3+0"`: convolution branches taken
    /// in order from k = 3, 5, 7, then 0 or 1 max-pool branch.
    pub fn from_label(label: &str, filters: usize, bottleneck: usize) -> Result<Self> {
        let (n, p) = label.split_once('+').ok_or_else(|| invalid(format!("branch label {label:?}")))?;
        let n: usize = n.trim().parse().map_err(|_| invalid(format!("branch label {label:?}")))?;
        let p: usize = p.trim().parse().map_err(|_| invalid(format!("branch label {label:?}")))?;
        if n > 3 || p > 1 {
            return Err(invalid(format!("branch label {label:?}: at most 3 conv and 1 pool branch")));
        }
        let t = Self { conv_kernels: [3, 5, 7][..n].to_vec(), use_maxpool_branch: p == 1, filters, bottleneck };
        t.validate()?;
        Ok(t)
    }

    pub fn label(&self) -> String {
        format!("{}+{}", self.conv_kernels.len(), usize::from(self.use_maxpool_branch))
    }

    pub fn branch_count(&self) -> usize {
        self.conv_kernels.len() + usize::from(self.use_maxpool_branch)
    }

    pub fn output_channels(&self) -> usize {
        self.branch_count() * self.filters
    }

    pub fn validate(&self) -> Result<()> {
        if self.conv_kernels.len() > 3 {
            return Err(invalid("at most 3 convolution branches"));
        }
        if self.branch_count() == 0 {
            return Err(invalid("a module needs at least one branch"));
        }
        if self.conv_kernels.contains(&0) {
            return Err(invalid("kernel sizes must be >= 1"));
        }
        if self.filters == 0 {
            return Err(invalid("filters must be >= 1"));
        }
        if !self.conv_kernels.is_empty() && self.bottleneck == 0 {
            return Err(invalid("bottleneck width must be >= 1"));
        }
        Ok(())
    }

    pub fn with_input(&self, input_channels: usize) -> InceptionModuleSpec {
        InceptionModuleSpec {
            conv_kernels: self.conv_kernels.clone(),
            use_maxpool_branch: self.use_maxpool_branch,
            filters: self.filters,
            bottleneck: self.bottleneck,
            input_channels,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InceptionModuleSpec {
    pub conv_kernels: Vec<usize>,
    pub use_maxpool_branch: bool,
    pub filters: usize,
    pub bottleneck: usize,
    pub input_channels: usize,
}

impl InceptionModuleSpec {
    pub fn template(&self) -> ModuleTemplate {
        ModuleTemplate {
            conv_kernels: self.conv_kernels.clone(),
            use_maxpool_branch: self.use_maxpool_branch,
            filters: self.filters,
            bottleneck: self.bottleneck,
        }
    }

    pub fn output_channels(&self) -> usize {
        self.template().output_channels()
    }

    pub fn validate(&self) -> Result<()> {
        self.template().validate()?;
        if self.input_channels == 0 {
            return Err(invalid("input channels must be >= 1"));
        }
        Ok(())
    }

    /// Closed-form weight count of the bottleneck, convolution branches and
    /// pool projection: `Din·Db + Db·Df·Σk + Din·Df` (bias-free).
    pub fn analytic_weight_count(&self) -> usize {
        let (din, db, df) = (self.input_channels, self.bottleneck, self.filters);
        let ksum: usize = self.conv_kernels.iter().sum();
        let bottleneck = if self.conv_kernels.is_empty() { 0 } else { din * db };
        let pool = if self.use_maxpool_branch { din * df } else { 0 };
        bottleneck + db * df * ksum + pool
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneSpec {
    pub depth: usize,
    pub residual_period: usize,
    pub input_channels: usize,
    pub classes: usize,
    pub module: ModuleTemplate,
}

impl BackboneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(invalid("depth must be >= 1"));
        }
        if self.input_channels == 0 || self.classes == 0 {
            return Err(invalid("input channels and classes must be >= 1"));
        }
        self.module.validate()
    }

    pub fn module_spec(&self, i: usize) -> InceptionModuleSpec {
        let din = if i == 0 { self.input_channels } else { self.module.output_channels() };
        self.module.with_input(din)
    }

    /// True when a residual junction follows module `i` (0-based).
    pub fn junction_after(&self, i: usize) -> bool {
        self.residual_period > 0 && (i + 1) % self.residual_period == 0
    }

    pub fn junctions(&self) -> usize {
        (0..self.depth).filter(|&i| self.junction_after(i)).count()
    }

    pub fn feature_channels(&self) -> usize {
        self.module.output_channels()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeGateSpec {
    pub channels: usize,
    pub reduction: usize,
}

impl SeGateSpec {
    pub fn hidden(&self) -> usize {
        self.channels.div_ceil(self.reduction.max(1)).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.reduction == 0 {
            return Err(invalid("gate needs channels >= 1 and reduction >= 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderSpec {
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub ff_width: usize,
    pub dropout: f64,
    pub attn_downsample: usize,
}

impl Default for EncoderSpec {
    fn default() -> Self {
        Self { d_model: 128, heads: 4, layers: 2, ff_width: 256, dropout: 0.1, attn_downsample: 8 }
    }
}

impl EncoderSpec {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.heads == 0 || self.d_model % self.heads != 0 {
            return Err(invalid(format!("d_model {} not divisible by {} heads", self.d_model, self.heads)));
        }
        if self.ff_width == 0 || self.attn_downsample == 0 {
            return Err(invalid("ff_width and attn_downsample must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(invalid("dropout must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn output_len(&self, t: usize) -> usize {
        t.div_ceil(self.attn_downsample)
    }
}

/// Full declarative description of a network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub backbone: BackboneSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_gate: Option<SeGateSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub encoder: Option<EncoderSpec>,
}

impl ModelSpec {
    pub fn inception(input_channels: usize, classes: usize, depth: usize, module: ModuleTemplate) -> Self {
        Self {
            backbone: BackboneSpec { depth, residual_period: 3, input_channels, classes, module },
            input_gate: None,
            encoder: None,
        }
    }

    /// Binary detector: backbone features feed an attention encoder.
    pub fn hybrid(input_channels: usize, depth: usize, module: ModuleTemplate, encoder: EncoderSpec) -> Self {
        let mut s = Self::inception(input_channels, 2, depth, module);
        s.encoder = Some(encoder);
        s
    }

    pub fn with_gate(mut self, reduction: usize) -> Self {
        self.input_gate = Some(SeGateSpec { channels: self.backbone.input_channels, reduction });
        self
    }

    pub fn input_channels(&self) -> usize {
        self.backbone.input_channels
    }

    pub fn classes(&self) -> usize {
        self.backbone.classes
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        if let Some(g) = &self.input_gate {
            g.validate()?;
            if g.channels != self.backbone.input_channels {
                return Err(invalid(format!(
                    "gate covers {} channels but input has {}",
                    g.channels, self.backbone.input_channels
                )));
            }
        }
        if let Some(e) = &self.encoder {
            e.validate()?;
        }
        Ok(())
    }
}

/// `1 + L·(k − 1)` for `L` stacked stride-1 convolutions of kernel `k`.
pub fn receptive_field(k: usize, layers: usize) -> usize {
    1 + layers * k.saturating_sub(1)
}
