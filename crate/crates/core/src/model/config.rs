use std::fmt;
use std::str::FromStr;

use crate::config::{render, switch, KeyValues, Switch};
use crate::data::STANDARD_LEADS;
use crate::error::{Error, Result};
use crate::numerics::Discretization;
use crate::ssm::{BlockConfig, DirectionCombine};
use crate::tokenize::{ClsPolicy, TokenizerConfig};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum FusionMode {
    /// Shared token-wise FFN with residual, then squeeze-and-excitation.
    #[default]
    Full,
    /// Lead maps go straight to the head.
    ConcatOnly,
}

/// Which block outputs form a branch's feature map.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum LayerReadout {
    #[default]
    Last,
    /// Sum of every block's output.
    Sum,
}

macro_rules! keyword_enum {
    ($ty:ty { $($variant:path => $word:literal),+ $(,)? }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($variant => $word),+ })
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($word => Ok($variant),)+
                    other => Err(Error::Config(format!(
                        "`{other}` is not one of {}", [$($word),+].join("/")
                    ))),
                }
            }
        }
    };
}

keyword_enum!(FusionMode { FusionMode::Full => "full", FusionMode::ConcatOnly => "concat-only" });
keyword_enum!(LayerReadout { LayerReadout::Last => "last", LayerReadout::Sum => "sum" });
keyword_enum!(ClsPolicy { ClsPolicy::BothEnds => "both-ends", ClsPolicy::StartOnly => "start-only" });
keyword_enum!(DirectionCombine { DirectionCombine::Sum => "sum", DirectionCombine::Concat => "concat" });
keyword_enum!(Discretization {
    Discretization::Simplified => "simplified",
    Discretization::ExactZoh => "exact-zoh",
});

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub patch_len: usize,
    pub step: usize,
    pub depth: usize,
    pub dim: usize,
    pub state_n: usize,
    pub leads: usize,
    pub classes: usize,
    pub bidirectional: bool,
    pub multi_branch: bool,
    pub fusion: FusionMode,
    pub cls_policy: ClsPolicy,
    pub direction_combine: DirectionCombine,
    pub layer_readout: LayerReadout,
    pub discretization: Discretization,
    pub conv_kernel: usize,
    /// Width of each lead's slice of the head.
    pub head_dim: usize,
    /// Samples per lead the positional table is sized for.
    pub signal_len: usize,
}

impl Default for ModelConfig {
    /// The reference configuration: 12 blocks of width 192.
    fn default() -> Self {
        Self {
            patch_len: 50,
            step: 25,
            depth: 12,
            dim: 192,
            state_n: 16,
            leads: STANDARD_LEADS,
            classes: 4,
            bidirectional: true,
            multi_branch: true,
            fusion: FusionMode::Full,
            cls_policy: ClsPolicy::BothEnds,
            direction_combine: DirectionCombine::Sum,
            layer_readout: LayerReadout::Last,
            discretization: Discretization::Simplified,
            conv_kernel: 4,
            head_dim: 64,
            signal_len: 2500,
        }
    }
}

impl ModelConfig {
    /// Small model used for smoke runs and the overfit check.
    pub fn tiny() -> Self {
        Self {
            depth: 2,
            dim: 32,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth < 1 {
            return Err(Error::Config("depth must be at least 1".into()));
        }
        if !self.dim.is_multiple_of(2) {
            return Err(Error::Config(format!("dim {} must be even", self.dim)));
        }
        if self.classes < 2 {
            return Err(Error::Config(format!("classes {} must be at least 2", self.classes)));
        }
        if self.leads != STANDARD_LEADS {
            return Err(Error::Config(format!("leads must be {STANDARD_LEADS}, got {}", self.leads)));
        }
        if self.state_n < 1 || self.conv_kernel < 1 || self.head_dim < 1 {
            return Err(Error::Config("state_n, conv_kernel and head_dim must be positive".into()));
        }
        self.tokenizer().validate(self.signal_len)
    }

    pub fn tokenizer(&self) -> TokenizerConfig {
        TokenizerConfig {
            patch_len: self.patch_len,
            step: self.step,
            model_dim: self.dim,
            cls_policy: self.cls_policy,
        }
    }

    pub fn block(&self) -> BlockConfig {
        BlockConfig {
            dim: self.dim,
            state: self.state_n,
            conv_kernel: self.conv_kernel,
            discretization: self.discretization,
            bidirectional: self.bidirectional,
            combine: self.direction_combine,
        }
    }

    /// Tokens per lead including CLS.
    pub fn total_tokens(&self) -> usize {
        self.tokenizer().total_tokens(self.signal_len)
    }

    pub fn branch_count(&self) -> usize {
        if self.multi_branch {
            self.leads
        } else {
            1
        }
    }

    pub fn to_text(&self) -> String {
        render(&[
            ("patch_len", self.patch_len.to_string()),
            ("step", self.step.to_string()),
            ("depth", self.depth.to_string()),
            ("dim", self.dim.to_string()),
            ("state_n", self.state_n.to_string()),
            ("leads", self.leads.to_string()),
            ("classes", self.classes.to_string()),
            ("bidirectional", switch(self.bidirectional)),
            ("multi_branch", switch(self.multi_branch)),
            ("fusion", self.fusion.to_string()),
            ("cls_policy", self.cls_policy.to_string()),
            ("direction_combine", self.direction_combine.to_string()),
            ("layer_readout", self.layer_readout.to_string()),
            ("discretization", self.discretization.to_string()),
            ("conv_kernel", self.conv_kernel.to_string()),
            ("head_dim", self.head_dim.to_string()),
            ("signal_len", self.signal_len.to_string()),
        ])
    }

    /// Overrides fields present in `kv`, leaving others untouched. Consumed
    /// keys are removed so the caller can reject leftovers.
    pub fn apply(&mut self, kv: &mut KeyValues) -> Result<()> {
        let d = self.clone();
        self.patch_len = kv.take_or("patch_len", d.patch_len)?;
        self.step = kv.take_or("step", d.step)?;
        self.depth = kv.take_or("depth", d.depth)?;
        self.dim = kv.take_or("dim", d.dim)?;
        self.state_n = kv.take_or("state_n", d.state_n)?;
        self.leads = kv.take_or("leads", d.leads)?;
        self.classes = kv.take_or("classes", d.classes)?;
        self.bidirectional = kv.take_or("bidirectional", Switch(d.bidirectional))?.0;
        self.multi_branch = kv.take_or("multi_branch", Switch(d.multi_branch))?.0;
        self.fusion = kv.take_or("fusion", d.fusion)?;
        self.cls_policy = kv.take_or("cls_policy", d.cls_policy)?;
        self.direction_combine = kv.take_or("direction_combine", d.direction_combine)?;
        self.layer_readout = kv.take_or("layer_readout", d.layer_readout)?;
        self.discretization = kv.take_or("discretization", d.discretization)?;
        self.conv_kernel = kv.take_or("conv_kernel", d.conv_kernel)?;
        self.head_dim = kv.take_or("head_dim", d.head_dim)?;
        self.signal_len = kv.take_or("signal_len", d.signal_len)?;
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut kv = KeyValues::parse(text)?;
        let mut cfg = Self::default();
        cfg.apply(&mut kv)?;
        kv.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }
}
