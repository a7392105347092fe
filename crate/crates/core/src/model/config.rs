use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Hyperparameters of one transformer stack (encoder, backbone or decoder).
#[derive(Clone, Debug, PartialEq)]
pub struct StackConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub n_kv_heads: usize,
    pub head_size: usize,
    pub hidden: usize,
    pub mlp_expansion: f64,
    pub rope_base: f64,
    /// Sliding attention window in bytes; `None` means full causal attention.
    pub window: Option<usize>,
}

impl StackConfig {
    /// SwiGLU width: `round(expansion × hidden)`.
    pub fn intermediate(&self) -> usize {
        (self.mlp_expansion * self.hidden as f64).round() as usize
    }

    pub fn q_dim(&self) -> usize {
        self.n_heads * self.head_size
    }

    pub fn kv_dim(&self) -> usize {
        self.n_kv_heads * self.head_size
    }

    fn validate(&self, name: &str) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("{name}: {msg}")));
        if self.n_layers == 0 || self.hidden == 0 || self.n_heads == 0 || self.n_kv_heads == 0 {
            return bad("layers, hidden size and head counts must be positive".into());
        }
        if self.n_heads % self.n_kv_heads != 0 {
            return bad(format!(
                "{} heads not divisible by {} key-value heads",
                self.n_heads, self.n_kv_heads
            ));
        }
        if self.head_size == 0 || self.head_size % 2 != 0 {
            return bad(format!("head_size must be even and positive, got {}", self.head_size));
        }
        if self.q_dim() != self.hidden {
            return bad(format!(
                "n_heads × head_size = {} but hidden = {}",
                self.q_dim(),
                self.hidden
            ));
        }
        if !(self.mlp_expansion > 0.0) || self.intermediate() == 0 {
            return bad(format!("mlp_expansion {} gives an empty MLP", self.mlp_expansion));
        }
        if !(self.rope_base > 1.0) {
            return bad(format!("rope_base must exceed 1, got {}", self.rope_base));
        }
        if self.window == Some(0) {
            return bad("window_bytes must be at least 1".into());
        }
        Ok(())
    }
}

/// Cross-attention connectors between the stacks.
#[derive(Clone, Debug, PartialEq)]
pub struct ConnectorConfig {
    /// Width of the encoder pooling attention; equals the backbone hidden size.
    pub cross_hidden: usize,
    pub encoder_cross_heads: usize,
    pub decoder_cross_heads: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HatConfig {
    pub encoder: StackConfig,
    pub backbone: StackConfig,
    pub decoder: StackConfig,
    pub connector: ConnectorConfig,
    pub max_word_bytes: usize,
    pub max_word_positions: usize,
    pub max_byte_positions: usize,
    pub norm_eps: f64,
    pub qk_norm: bool,
    pub softcap: Option<f64>,
}

pub const BYTE_VOCAB: usize = 256;

const TABLE1: &str = include_str!("../../configs/table1.cfg");
const TABLE2: &str = include_str!("../../configs/table2.cfg");
const MICRO: &str = include_str!("../../configs/micro.cfg");

impl HatConfig {
    /// The 8B-class configuration (encoder 6×1024, backbone 32×4096, decoder 4×1024).
    pub fn table1() -> Self {
        Self::parse(TABLE1).expect("bundled table1 config")
    }

    /// The 70B-class configuration (encoder 6×2048, backbone 80×8192, decoder 4×2048).
    pub fn table2() -> Self {
        Self::parse(TABLE2).expect("bundled table2 config")
    }

    /// Desk-scale configuration used by tests and toy training.
    pub fn micro() -> Self {
        Self::parse(MICRO).expect("bundled micro config")
    }

    /// Looks up a bundled config by name (`table1`, `table2`, `micro`).
    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "table1" => Some(Self::table1()),
            "table2" => Some(Self::table2()),
            "micro" => Some(Self::micro()),
            _ => None,
        }
    }

    /// Loads a config file, or a preset name when no such file exists.
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("");
            if let Some(c) = Self::preset(stem) {
                return Ok(c);
            }
        }
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn head_size_cross_encoder(&self) -> usize {
        self.connector.cross_hidden / self.connector.encoder_cross_heads
    }

    pub fn head_size_cross_decoder(&self) -> usize {
        self.decoder.hidden / self.connector.decoder_cross_heads
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate("encoder")?;
        self.backbone.validate("backbone")?;
        self.decoder.validate("decoder")?;
        if self.encoder.window.is_none() || self.decoder.window.is_none() {
            return Err(Error::Config("encoder and decoder need window_bytes".into()));
        }
        if self.backbone.window.is_some() {
            return Err(Error::Config("backbone attention is fully causal; drop window_bytes".into()));
        }
        if self.encoder.hidden != self.decoder.hidden {
            return Err(Error::Config(format!(
                "decoder consumes encoder states: hidden sizes {} and {} must match",
                self.encoder.hidden, self.decoder.hidden
            )));
        }
        let c = &self.connector;
        if c.cross_hidden != self.backbone.hidden {
            return Err(Error::Config(format!(
                "connector.cross_hidden {} must equal backbone.hidden {}",
                c.cross_hidden, self.backbone.hidden
            )));
        }
        if c.encoder_cross_heads == 0 || c.cross_hidden % c.encoder_cross_heads != 0 {
            return Err(Error::Config("encoder_cross_heads must divide cross_hidden".into()));
        }
        if c.decoder_cross_heads == 0 || self.decoder.hidden % c.decoder_cross_heads != 0 {
            return Err(Error::Config("decoder_cross_heads must divide decoder.hidden".into()));
        }
        if self.max_word_bytes < crate::splitter::MIN_MAX_WORD_BYTES {
            return Err(Error::Config(format!(
                "max_word_bytes must be at least {}",
                crate::splitter::MIN_MAX_WORD_BYTES
            )));
        }
        if self.max_word_positions < 1 || self.max_byte_positions < 2 {
            return Err(Error::Config("position limits too small".into()));
        }
        if !(self.norm_eps > 0.0) {
            return Err(Error::Config("norm_eps must be positive".into()));
        }
        if let Some(s) = self.softcap {
            if !(s > 0.0) {
                return Err(Error::Config("softcap must be positive or off".into()));
            }
        }
        Ok(())
    }

    fn to_map(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        for (p, s) in [
            ("encoder", &self.encoder),
            ("backbone", &self.backbone),
            ("decoder", &self.decoder),
        ] {
            m.insert(format!("{p}.n_layers"), s.n_layers.to_string());
            m.insert(format!("{p}.n_heads"), s.n_heads.to_string());
            m.insert(format!("{p}.n_kv_heads"), s.n_kv_heads.to_string());
            m.insert(format!("{p}.head_size"), s.head_size.to_string());
            m.insert(format!("{p}.hidden"), s.hidden.to_string());
            m.insert(format!("{p}.mlp_expansion"), s.mlp_expansion.to_string());
            m.insert(format!("{p}.rope_base"), s.rope_base.to_string());
            if let Some(w) = s.window {
                m.insert(format!("{p}.window_bytes"), w.to_string());
            }
        }
        m.insert("connector.cross_hidden".into(), self.connector.cross_hidden.to_string());
        m.insert(
            "connector.encoder_cross_heads".into(),
            self.connector.encoder_cross_heads.to_string(),
        );
        m.insert(
            "connector.decoder_cross_heads".into(),
            self.connector.decoder_cross_heads.to_string(),
        );
        m.insert("byte_vocab".into(), BYTE_VOCAB.to_string());
        m.insert("max_word_bytes".into(), self.max_word_bytes.to_string());
        m.insert("max_word_positions".into(), self.max_word_positions.to_string());
        m.insert("max_byte_positions".into(), self.max_byte_positions.to_string());
        m.insert("norm_eps".into(), self.norm_eps.to_string());
        m.insert("qk_norm".into(), self.qk_norm.to_string());
        m.insert(
            "softcap".into(),
            self.softcap.map_or_else(|| "off".to_string(), |c| c.to_string()),
        );
        m
    }

    /// Canonical `key = value` text, keys sorted. Parsing it back yields an
    /// equal config.
    pub fn to_canonical_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.to_map() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = parse_kv(text)?;
        let mut take = |key: &str| -> Result<String> {
            kv.remove(key)
                .ok_or_else(|| Error::Config(format!("missing key `{key}`")))
        };
        fn num<T: std::str::FromStr>(key: &str, v: String) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`")))
        }
        let mut stack = |p: &str, windowed: bool| -> Result<StackConfig> {
            let f = |k: &str| format!("{p}.{k}");
            Ok(StackConfig {
                n_layers: num(&f("n_layers"), take(&f("n_layers"))?)?,
                n_heads: num(&f("n_heads"), take(&f("n_heads"))?)?,
                n_kv_heads: num(&f("n_kv_heads"), take(&f("n_kv_heads"))?)?,
                head_size: num(&f("head_size"), take(&f("head_size"))?)?,
                hidden: num(&f("hidden"), take(&f("hidden"))?)?,
                mlp_expansion: num(&f("mlp_expansion"), take(&f("mlp_expansion"))?)?,
                rope_base: num(&f("rope_base"), take(&f("rope_base"))?)?,
                window: if windowed {
                    Some(num(&f("window_bytes"), take(&f("window_bytes"))?)?)
                } else {
                    None
                },
            })
        };
        let encoder = stack("encoder", true)?;
        let backbone = stack("backbone", false)?;
        let decoder = stack("decoder", true)?;
        let connector = ConnectorConfig {
            cross_hidden: num("connector.cross_hidden", take("connector.cross_hidden")?)?,
            encoder_cross_heads: num(
                "connector.encoder_cross_heads",
                take("connector.encoder_cross_heads")?,
            )?,
            decoder_cross_heads: num(
                "connector.decoder_cross_heads",
                take("connector.decoder_cross_heads")?,
            )?,
        };
        let vocab: usize = num("byte_vocab", take("byte_vocab")?)?;
        if vocab != BYTE_VOCAB {
            return Err(Error::Config(format!("byte_vocab must be 256, got {vocab}")));
        }
        let qk = take("qk_norm")?;
        let qk_norm = match qk.as_str() {
            "true" => true,
            "false" => false,
            _ => return Err(Error::Config(format!("`qk_norm`: expected true/false, got `{qk}`"))),
        };
        let sc = take("softcap")?;
        let softcap = if sc == "off" { None } else { Some(num("softcap", sc)?) };
        let cfg = HatConfig {
            encoder,
            backbone,
            decoder,
            connector,
            max_word_bytes: num("max_word_bytes", take("max_word_bytes")?)?,
            max_word_positions: num("max_word_positions", take("max_word_positions")?)?,
            max_byte_positions: num("max_byte_positions", take("max_byte_positions")?)?,
            norm_eps: num("norm_eps", take("norm_eps")?)?,
            qk_norm,
            softcap,
        };
        if let Some(k) = kv.keys().next() {
            return Err(Error::Config(format!("unknown key `{k}`")));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parses `key = value` lines; `#` starts a comment. Duplicate keys are errors.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", n + 1)));
        }
        if map.insert(k.to_string(), v.to_string()).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key `{k}`", n + 1)));
        }
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_parse_and_round_trip() {
        for c in [HatConfig::table1(), HatConfig::table2(), HatConfig::micro()] {
            let text = c.to_canonical_text();
            assert_eq!(HatConfig::parse(&text).unwrap(), c);
            let mut lines: Vec<_> = text.lines().collect();
            let before = lines.clone();
            lines.sort();
            assert_eq!(lines, before);
        }
    }

    #[test]
    fn table1_shapes() {
        let c = HatConfig::table1();
        assert_eq!(c.backbone.intermediate(), 14336);
        assert_eq!(c.encoder.intermediate(), 2816);
        assert_eq!(c.encoder.window, Some(768));
        assert_eq!(c.head_size_cross_encoder(), 128);
        assert_eq!(c.head_size_cross_decoder(), 128);
    }

    #[test]
    fn rejects_bad_configs() {
        let good = HatConfig::micro().to_canonical_text();
        let bad_heads = good.replace("backbone.n_kv_heads = 2", "backbone.n_kv_heads = 3");
        assert!(HatConfig::parse(&bad_heads).is_err());
        assert!(HatConfig::parse(&format!("{good}extra = 1\n")).is_err());
        assert!(HatConfig::parse(&good.replace("byte_vocab = 256\n", "")).is_err());
        assert!(HatConfig::parse(&format!("{good}qk_norm = true\n")).is_err());
    }
}
