use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::tensor::Activation;

/// The networks of the system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    CvaeEnc,
    CvaeDec,
    NvaeEnc,
    NvaeDec,
    NsvaeEnc,
    DiscSpeech,
    DiscNoise,
    /// Optional joint decoder `q(y | zx, zd)`, only used by the PVAE loss.
    NsvaeDec,
}

impl Role {
    /// The seven networks every bundle carries, in checkpoint order.
    pub const CORE: [Role; 7] = [
        Role::CvaeEnc,
        Role::CvaeDec,
        Role::NvaeEnc,
        Role::NvaeDec,
        Role::NsvaeEnc,
        Role::DiscSpeech,
        Role::DiscNoise,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Role::CvaeEnc => "cvae_enc",
            Role::CvaeDec => "cvae_dec",
            Role::NvaeEnc => "nvae_enc",
            Role::NvaeDec => "nvae_dec",
            Role::NsvaeEnc => "nsvae_enc",
            Role::DiscSpeech => "disc_speech",
            Role::DiscNoise => "disc_noise",
            Role::NsvaeDec => "nsvae_dec",
        }
    }

    /// Signal domain the network reads or writes.
    pub fn domain(self) -> Domain {
        match self {
            Role::CvaeEnc | Role::CvaeDec | Role::DiscSpeech => Domain::Clean,
            Role::NvaeEnc | Role::NvaeDec | Role::DiscNoise => Domain::Noise,
            Role::NsvaeEnc | Role::NsvaeDec => Domain::Noisy,
        }
    }

    pub fn kind(self) -> RoleKind {
        match self {
            Role::CvaeEnc | Role::NvaeEnc => RoleKind::Encoder,
            Role::NsvaeEnc => RoleKind::NoisyEncoder,
            Role::CvaeDec | Role::NvaeDec | Role::NsvaeDec => RoleKind::Decoder,
            Role::DiscSpeech | Role::DiscNoise => RoleKind::Discriminator,
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Role::CORE
            .iter()
            .chain(std::iter::once(&Role::NsvaeDec))
            .copied()
            .find(|r| r.name() == s)
            .ok_or_else(|| format!("unknown network role '{s}'"))
    }
}

/// Which of the three aligned signals a feature matrix holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Clean,
    Noise,
    Noisy,
}

impl Domain {
    pub const ALL: [Domain; 3] = [Domain::Clean, Domain::Noise, Domain::Noisy];

    pub fn name(self) -> &'static str {
        match self {
            Domain::Clean => "clean",
            Domain::Noise => "noise",
            Domain::Noisy => "noisy",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoleKind {
    Encoder,
    NoisyEncoder,
    Decoder,
    Discriminator,
}

/// Widths that fix every network shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDims {
    /// LPS bins per frame.
    pub features: usize,
    /// Latent dimension `L`.
    pub latent: usize,
    /// Width of every hidden fully-connected layer.
    pub hidden: usize,
    /// GRU width of encoders and decoders.
    pub gru: usize,
    /// GRU width of the discriminators.
    pub disc_gru: usize,
}

impl ModelDims {
    /// Table I widths.
    pub fn full() -> Self {
        Self {
            features: 257,
            latent: 128,
            hidden: 512,
            gru: 512,
            disc_gru: 256,
        }
    }

    /// Desk-scale widths with the same shape relationships.
    pub fn toy() -> Self {
        Self {
            features: 257,
            latent: 16,
            hidden: 64,
            gru: 64,
            disc_gru: 32,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let all = [self.features, self.latent, self.hidden, self.gru, self.disc_gru];
        if all.contains(&0) {
            return Err(format!("all model widths must be >= 1, got {self:?}"));
        }
        Ok(())
    }
}

/// Layer layout of one network: time-distributed dense layers, one GRU,
/// more dense layers, then parallel linear output heads.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub role: Role,
    pub input: usize,
    /// Output widths of the dense layers before the GRU.
    pub pre_fc: Vec<usize>,
    pub gru: usize,
    /// Output widths of the dense layers after the GRU.
    pub post_fc: Vec<usize>,
    pub heads: usize,
    pub head_width: usize,
    pub hidden_activation: Activation,
    pub head_activation: Activation,
}

impl NetworkSpec {
    pub fn for_role(role: Role, d: &ModelDims) -> Self {
        let (input, pre_fc, gru, post_fc, heads, head_width) = match role.kind() {
            RoleKind::Encoder => (d.features, vec![d.hidden; 2], d.gru, vec![], 2, d.latent),
            RoleKind::NoisyEncoder => (
                d.features,
                vec![d.hidden; 2],
                d.gru,
                vec![d.hidden],
                4,
                d.latent,
            ),
            RoleKind::Decoder => {
                let input = if role == Role::NsvaeDec { 2 * d.latent } else { d.latent };
                (input, vec![], d.gru, vec![d.hidden; 2], 2, d.features)
            }
            RoleKind::Discriminator => (
                d.features,
                vec![d.hidden],
                d.disc_gru,
                vec![d.hidden],
                1,
                1,
            ),
        };
        Self {
            role,
            input,
            pre_fc,
            gru,
            post_fc,
            heads,
            head_width,
            hidden_activation: Activation::Relu,
            head_activation: Activation::Linear,
        }
    }

    /// Node counts of the pre-GRU block as a table lists them: the input
    /// width followed by every dense layer width.
    pub fn pre_fc_nodes(&self) -> Vec<usize> {
        std::iter::once(self.input).chain(self.pre_fc.iter().copied()).collect()
    }

    /// Width fed into the GRU.
    pub fn gru_input(&self) -> usize {
        self.pre_fc.last().copied().unwrap_or(self.input)
    }

    /// Width fed into the output heads.
    pub fn head_input(&self) -> usize {
        self.post_fc.last().copied().unwrap_or(self.gru)
    }

    pub fn validate(&self) -> Result<(), String> {
        let widths = std::iter::once(self.input)
            .chain(self.pre_fc.iter().copied())
            .chain(std::iter::once(self.gru))
            .chain(self.post_fc.iter().copied())
            .chain([self.heads, self.head_width]);
        if widths.into_iter().any(|w| w == 0) {
            return Err(format!("{}: all widths must be >= 1", self.role));
        }
        Ok(())
    }
}
