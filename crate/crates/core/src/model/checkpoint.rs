//! Binary checkpoint format, all integers and floats little-endian:
//!
//! ```text
//! magic            8 bytes  "HIERTYPE"
//! version          u32      1
//! dim              u32
//! width            u32
//! num_types        u32
//! encoder_mode     u8       0 = mention, 1 = cnn
//! mention_kind     u8       0 = order, 1 = bilinear, 2 = dot
//! mention_margin   f64      0 unless order
//! structure_kind   u8       as mention_kind, 255 = none
//! structure_margin f64
//! share_bilinear   u8
//! embeddings       u32 length + UTF-8 bytes (length 0 = none)
//! type names       num_types x (u32 length + UTF-8 bytes)
//! tensors          f64, row-major, in this order:
//!                  conv_filter [width, dim, dim], conv_bias [dim],
//!                  hidden_weight [dim, 2*dim], hidden_bias [dim],
//!                  output_weight [dim, dim], output_bias [dim],
//!                  type_embeddings [num_types, dim],
//!                  mention_bilinear [dim, dim]    (mention_kind = bilinear)
//!                  structure_bilinear [dim, dim]  (structure_kind = bilinear
//!                                                  and not shared)
//! ```

use std::fs;
use std::path::Path;

use super::{EncoderMode, Model, ModelConfig, ModelError, ParamSet, Params, Result, ScoreKind};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"HIERTYPE";
const VERSION: u32 = 1;
const NO_KIND: u8 = 255;

fn kind_code(kind: Option<ScoreKind>) -> (u8, f64) {
    match kind {
        Some(ScoreKind::Order { margin }) => (0, margin),
        Some(ScoreKind::Bilinear) => (1, 0.0),
        Some(ScoreKind::Dot) => (2, 0.0),
        None => (NO_KIND, 0.0),
    }
}

fn kind_from_code(code: u8, margin: f64) -> Result<Option<ScoreKind>> {
    match code {
        0 => Ok(Some(ScoreKind::Order { margin })),
        1 => Ok(Some(ScoreKind::Bilinear)),
        2 => Ok(Some(ScoreKind::Dot)),
        NO_KIND => Ok(None),
        other => Err(ModelError::Checkpoint(format!(
            "unknown score kind code {other}"
        ))),
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| ModelError::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| ModelError::Checkpoint("string is not UTF-8".into()))
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

impl Model {
    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.config;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for v in [c.dim, c.width, c.num_types] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.push(match c.mode {
            EncoderMode::MentionOnly => 0,
            EncoderMode::CnnPlusMention => 1,
        });
        for kind in [Some(c.mention_kind), c.structure_kind] {
            let (code, margin) = kind_code(kind);
            out.push(code);
            out.extend_from_slice(&margin.to_le_bytes());
        }
        out.push(u8::from(c.share_bilinear));
        put_str(&mut out, self.embeddings.as_deref().unwrap_or(""));
        for name in &self.type_names {
            put_str(&mut out, name);
        }
        for (_, tensor) in self.params.tensors() {
            for v in tensor {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(ModelError::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(ModelError::Checkpoint(format!(
                "unsupported version {version}"
            )));
        }
        let dim = r.u32()? as usize;
        let width = r.u32()? as usize;
        let num_types = r.u32()? as usize;
        let mode = match r.u8()? {
            0 => EncoderMode::MentionOnly,
            1 => EncoderMode::CnnPlusMention,
            other => {
                return Err(ModelError::Checkpoint(format!(
                    "unknown encoder mode {other}"
                )))
            }
        };
        let (code, margin) = (r.u8()?, r.f64()?);
        let mention_kind = kind_from_code(code, margin)?
            .ok_or_else(|| ModelError::Checkpoint("missing mention score kind".into()))?;
        let (code, margin) = (r.u8()?, r.f64()?);
        let structure_kind = kind_from_code(code, margin)?;
        let share_bilinear = r.u8()? != 0;
        let embeddings = Some(r.string()?).filter(|s| !s.is_empty());
        let type_names = (0..num_types)
            .map(|_| r.string())
            .collect::<Result<Vec<_>>>()?;

        let config = ModelConfig {
            dim,
            width,
            num_types,
            mode,
            mention_kind,
            structure_kind,
            share_bilinear,
        };
        config
            .validate()
            .map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        let mut params = Params::zeros(&config);
        for (_, tensor) in params.tensors_mut() {
            for v in tensor.iter_mut() {
                *v = r.f64()?;
            }
        }
        if r.pos != bytes.len() {
            return Err(ModelError::Checkpoint(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        let mut model = Model::new(config, params, type_names)?;
        model.embeddings = embeddings;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|source| ModelError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|source| ModelError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}
