//! Versioned binary checkpoints: config JSON plus named weight sections as
//! little-endian f32, covering codec parameters, the codebook with its EMA
//! state and usage counts, and (when present) adapters and backbone.

use super::adapter::AdapterPair;
use super::backbone::MockBackbone;
use super::codebook::Codebook;
use super::codec::VqCodec;
use super::graph::ParamSet;
use super::mat::Mat;
use super::{CodecConfig, VqError};
use std::io::Write;
use std::path::Path;

const MAGIC: &[u8; 8] = b"SEMVQCKP";
const VERSION: u32 = 1;

fn push_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_section(out: &mut Vec<u8>, name: &str, mat: &Mat) {
    push_u32(out, name.len() as u32);
    out.extend_from_slice(name.as_bytes());
    push_u32(out, mat.rows as u32);
    push_u32(out, mat.cols as u32);
    for &v in &mat.data {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

pub fn checkpoint_bytes(codec: &VqCodec) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    push_u32(&mut out, VERSION);
    let config = serde_json::to_vec(&codec.config).expect("config serializes");
    push_u32(&mut out, config.len() as u32);
    out.extend_from_slice(&config);

    let mut sections: Vec<(String, Mat)> = Vec::new();
    for (name, mat) in codec.params.iter() {
        sections.push((format!("p:{name}"), mat.clone()));
    }
    sections.push(("codebook.entries".to_string(), codec.codebook.entries.clone()));
    sections.push((
        "codebook.ema_counts".to_string(),
        Mat::from_vec(codec.codebook.size(), 1, codec.codebook.ema_counts().to_vec()),
    ));
    sections.push(("codebook.ema_sums".to_string(), codec.codebook.ema_sums().clone()));
    sections.push((
        "codebook.usage".to_string(),
        Mat::from_vec(
            codec.codebook.size(),
            1,
            codec.codebook.usage.iter().map(|&u| u as f64).collect(),
        ),
    ));
    if let Some(adapters) = &codec.adapters {
        sections.push(("adapter.up".to_string(), adapters.up.clone()));
        sections.push(("adapter.down".to_string(), adapters.down.clone()));
    }
    if let Some(backbone) = &codec.backbone {
        sections.push(("backbone.embed".to_string(), backbone.embed.clone()));
        sections.push(("backbone.logit".to_string(), backbone.logit.clone()));
    }
    push_u32(&mut out, sections.len() as u32);
    for (name, mat) in &sections {
        push_section(&mut out, name, mat);
    }
    out
}

pub fn save_checkpoint(codec: &VqCodec, path: &Path) -> std::io::Result<()> {
    let mut file = std::fs::File::create(path)?;
    file.write_all(&checkpoint_bytes(codec))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], VqError> {
        if self.pos + n > self.bytes.len() {
            return Err(VqError::BadCheckpoint {
                reason: "truncated".to_string(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, VqError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<VqCodec, VqError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(VqError::BadCheckpoint {
            reason: "bad magic".to_string(),
        });
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(VqError::BadCheckpoint {
            reason: format!("unsupported format version {version}"),
        });
    }
    let config_len = r.u32()? as usize;
    let config: CodecConfig =
        serde_json::from_slice(r.take(config_len)?).map_err(|e| VqError::BadCheckpoint {
            reason: format!("config: {e}"),
        })?;

    let section_count = r.u32()? as usize;
    let mut sections: Vec<(String, Mat)> = Vec::with_capacity(section_count);
    for _ in 0..section_count {
        let name_len = r.u32()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec()).map_err(|_| {
            VqError::BadCheckpoint {
                reason: "section name".to_string(),
            }
        })?;
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let raw = r.take(rows * cols * 4)?;
        let data: Vec<f64> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        sections.push((name, Mat::from_vec(rows, cols, data)));
    }

    let find = |name: &str| -> Result<&Mat, VqError> {
        sections
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m)
            .ok_or_else(|| VqError::BadCheckpoint {
                reason: format!("missing section {name}"),
            })
    };

    let mut params = ParamSet::new();
    for (name, mat) in &sections {
        if let Some(stripped) = name.strip_prefix("p:") {
            params.add(stripped, mat.clone());
        }
    }
    if params.is_empty() {
        return Err(VqError::BadCheckpoint {
            reason: "no parameters".to_string(),
        });
    }

    let entries = find("codebook.entries")?.clone();
    let ema_counts = find("codebook.ema_counts")?.data.clone();
    let ema_sums = find("codebook.ema_sums")?.clone();
    let usage: Vec<u64> = find("codebook.usage")?
        .data
        .iter()
        .map(|&v| v as u64)
        .collect();
    let codebook = Codebook::from_parts(entries, ema_counts, ema_sums, usage, config.ema_decay);

    let adapters = match (find("adapter.up"), find("adapter.down")) {
        (Ok(up), Ok(down)) => Some(AdapterPair {
            up: up.clone(),
            down: down.clone(),
        }),
        _ => None,
    };
    let backbone = match (find("backbone.embed"), find("backbone.logit")) {
        (Ok(embed), Ok(logit)) => Some(MockBackbone::from_parts(embed.clone(), logit.clone())),
        _ => None,
    };

    Ok(VqCodec {
        config,
        params,
        codebook,
        adapters,
        backbone,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<VqCodec, VqError> {
    let bytes = std::fs::read(path).map_err(|e| VqError::BadCheckpoint {
        reason: format!("io: {e}"),
    })?;
    checkpoint_from_bytes(&bytes)
}
