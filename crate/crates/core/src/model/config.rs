use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::tensor::PoolKind;

/// Encoder and decoder both have this many resolution steps, so the spatial
/// scale round-trips by 1/32 and back.
pub const NUM_STAGES: usize = 5;

pub const CONFIG_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncoderStage {
    pub convs: usize,
    pub width: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DecoderStage {
    pub width: usize,
    pub batch_norm: bool,
    pub activation: bool,
}

/// Declarative description of the network.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub encoder_stages: Vec<EncoderStage>,
    pub encoder_pool: PoolKind,
    pub decoder_stages: Vec<DecoderStage>,
    /// Multiplies every channel width; 1.0 is the full-size network.
    pub channel_scale: f64,
}

impl Default for ModelConfig {
    /// VGG-16 configuration D convolutions with average pooling, then five
    /// transpose-conv stages halving the width from 256 down to 16.
    fn default() -> Self {
        let enc = [(2, 64), (2, 128), (3, 256), (3, 512), (3, 512)];
        let dec = [256, 128, 64, 32, 16];
        ModelConfig {
            encoder_stages: enc
                .iter()
                .map(|&(convs, width)| EncoderStage { convs, width })
                .collect(),
            encoder_pool: PoolKind::Average,
            decoder_stages: dec
                .iter()
                .map(|&width| DecoderStage {
                    width,
                    batch_norm: true,
                    activation: true,
                })
                .collect(),
            channel_scale: 1.0,
        }
    }
}

impl ModelConfig {
    pub fn with_channel_scale(mut self, scale: f64) -> Self {
        self.channel_scale = scale;
        self
    }

    pub fn with_pool(mut self, pool: PoolKind) -> Self {
        self.encoder_pool = pool;
        self
    }

    /// Small network for tests and smoke runs: widths divided by 16.
    pub fn tiny() -> Self {
        Self::default().with_channel_scale(1.0 / 16.0)
    }

    pub fn scaled(&self, width: usize) -> usize {
        (width as f64 * self.channel_scale).round() as usize
    }

    pub fn encoder_widths(&self) -> Vec<usize> {
        self.encoder_stages.iter().map(|s| self.scaled(s.width)).collect()
    }

    pub fn decoder_widths(&self) -> Vec<usize> {
        self.decoder_stages.iter().map(|s| self.scaled(s.width)).collect()
    }

    /// Spatial divisor between input and the deepest feature map.
    pub fn downsampling(&self) -> usize {
        1 << self.encoder_stages.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.channel_scale.is_finite() && self.channel_scale > 0.0) {
            return Err(Error::config("channel_scale", format!("must be positive, got {}", self.channel_scale)));
        }
        if self.encoder_stages.len() != NUM_STAGES {
            return Err(Error::config(
                "encoder_stages",
                format!("need exactly {NUM_STAGES} stages, got {}", self.encoder_stages.len()),
            ));
        }
        if self.decoder_stages.len() != NUM_STAGES {
            return Err(Error::config(
                "decoder_stages",
                format!("need exactly {NUM_STAGES} stages, got {}", self.decoder_stages.len()),
            ));
        }
        for (i, s) in self.encoder_stages.iter().enumerate() {
            if s.convs == 0 {
                return Err(Error::config("encoder_stages", format!("stage {} has no convolutions", i + 1)));
            }
            if self.scaled(s.width) == 0 {
                return Err(Error::config(
                    "channel_scale",
                    format!("encoder stage {} width {} scales to zero", i + 1, s.width),
                ));
            }
        }
        for (i, s) in self.decoder_stages.iter().enumerate() {
            if self.scaled(s.width) == 0 {
                return Err(Error::config(
                    "channel_scale",
                    format!("decoder stage {} width {} scales to zero", i + 1, s.width),
                ));
            }
        }
        Ok(())
    }

    /// Flat `key=value` lines, the form embedded in checkpoints.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let join = |v: Vec<String>| v.join(",");
        let flag = |b: bool| if b { "1" } else { "0" }.to_string();
        writeln!(s, "format_version={CONFIG_FORMAT_VERSION}").unwrap();
        writeln!(
            s,
            "encoder_stages={}",
            join(self.encoder_stages.iter().map(|e| format!("{}x{}", e.convs, e.width)).collect())
        )
        .unwrap();
        writeln!(s, "encoder_pool={}", self.encoder_pool.as_str()).unwrap();
        writeln!(s, "decoder_widths={}", join(self.decoder_stages.iter().map(|d| d.width.to_string()).collect())).unwrap();
        writeln!(s, "decoder_batch_norm={}", join(self.decoder_stages.iter().map(|d| flag(d.batch_norm)).collect())).unwrap();
        writeln!(s, "decoder_activation={}", join(self.decoder_stages.iter().map(|d| flag(d.activation)).collect())).unwrap();
        writeln!(s, "channel_scale={}", self.channel_scale).unwrap();
        s
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let kv = parse_kv(text)?;
        let get = |key: &str| {
            kv.iter()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| Error::config(key, "missing"))
        };
        let version: u32 = get("format_version")?
            .parse()
            .map_err(|_| Error::config("format_version", "not an integer"))?;
        if version != CONFIG_FORMAT_VERSION {
            return Err(Error::Version(format!("model config version {version}")));
        }
        let encoder_stages = get("encoder_stages")?
            .split(',')
            .map(|item| {
                let (c, w) = item
                    .split_once('x')
                    .ok_or_else(|| Error::config("encoder_stages", format!("bad stage {item:?}")))?;
                Ok(EncoderStage {
                    convs: parse_num("encoder_stages", c)?,
                    width: parse_num("encoder_stages", w)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let widths: Vec<usize> = get("decoder_widths")?
            .split(',')
            .map(|w| parse_num("decoder_widths", w))
            .collect::<Result<_>>()?;
        let flags = |key: &str| -> Result<Vec<bool>> {
            get(key)?
                .split(',')
                .map(|f| match f.trim() {
                    "1" | "true" => Ok(true),
                    "0" | "false" => Ok(false),
                    other => Err(Error::config(key, format!("bad flag {other:?}"))),
                })
                .collect()
        };
        let bn = flags("decoder_batch_norm")?;
        let act = flags("decoder_activation")?;
        if bn.len() != widths.len() || act.len() != widths.len() {
            return Err(Error::config("decoder_stages", "widths and flags differ in length"));
        }
        let cfg = ModelConfig {
            encoder_stages,
            encoder_pool: get("encoder_pool")?.parse()?,
            decoder_stages: widths
                .into_iter()
                .zip(bn.into_iter().zip(act))
                .map(|(width, (batch_norm, activation))| DecoderStage {
                    width,
                    batch_norm,
                    activation,
                })
                .collect(),
            channel_scale: get("channel_scale")?
                .parse()
                .map_err(|_| Error::config("channel_scale", "not a number"))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_num(field: &str, s: &str) -> Result<usize> {
    s.trim()
        .parse()
        .map_err(|_| Error::config(field, format!("not an integer: {s:?}")))
}

/// Parses `key=value` lines; blank lines and `#` comments are ignored.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut offset = 0u64;
    for line in text.split_inclusive('\n') {
        let trimmed = line.trim();
        if !trimmed.is_empty() && !trimmed.starts_with('#') {
            let (k, v) = trimmed
                .split_once('=')
                .ok_or_else(|| Error::format(offset, format!("expected key=value, got {trimmed:?}")))?;
            out.push((k.trim().to_string(), v.trim().to_string()));
        }
        offset += line.len() as u64;
    }
    Ok(out)
}
