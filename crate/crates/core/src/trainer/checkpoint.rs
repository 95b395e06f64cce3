//! Binary checkpoint format.
//!
//! ```text
//! b"VRMD0001"
//! u32 metadata length, metadata bytes (UTF-8 `key=value` lines)
//! u32 record count
//! per record: u32 name length, name bytes, u8 dtype tag (1 = f64),
//!             u32 rank, rank × u64 extents, little-endian payload
//! ```
//!
//! All integers are little-endian. Parameter records use the parameter
//! name; optimizer moments are stored as `optim.m/<name>` and
//! `optim.v/<name>`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::optim::{AdamW, AdamWConfig};
use super::TrainConfig;
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::model::Vremd;
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"VRMD0001";
pub const FORMAT_VERSION: &str = "0001";
const DTYPE_F64: u8 = 1;

/// Everything needed to rebuild a model and resume its optimizer.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub train: Option<TrainConfig>,
    pub step: usize,
    pub params: Vec<(String, Tensor)>,
    pub optimizer: Option<AdamW>,
    pub rng: Option<ChaCha8Rng>,
}

impl Checkpoint {
    pub fn from_model(model: &Vremd, store: &ParamStore) -> Self {
        Self {
            model: model.cfg.clone(),
            train: None,
            step: 0,
            params: store.iter().map(|(_, p)| (p.name.clone(), p.value.clone())).collect(),
            optimizer: None,
            rng: None,
        }
    }

    /// Rebuilds the model and fills in the stored parameter values.
    pub fn restore(&self) -> Result<(Vremd, ParamStore)> {
        let (model, mut store) = Vremd::new(self.model.clone(), 0)?;
        if store.len() != self.params.len() {
            return Err(Error::CorruptCheckpoint(format!(
                "{} parameter records for a model with {} parameters",
                self.params.len(),
                store.len()
            )));
        }
        for (name, t) in &self.params {
            store
                .set(name, t.clone())
                .map_err(|e| Error::CorruptCheckpoint(format!("parameter `{name}`: {e}")))?;
        }
        Ok((model, store))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut meta = BTreeMap::new();
        meta.insert("format_version", FORMAT_VERSION.to_string());
        meta.insert("step", self.step.to_string());
        meta.insert("model", serde_json::to_string(&self.model)?);
        if let Some(t) = &self.train {
            meta.insert("train", serde_json::to_string(t)?);
        }
        if let Some(r) = &self.rng {
            meta.insert("rng_seed", hex(&r.get_seed()));
            meta.insert("rng_stream", r.get_stream().to_string());
            meta.insert("rng_word_pos", r.get_word_pos().to_string());
        }
        let mut records: Vec<(String, &Tensor)> = self.params.iter().map(|(n, t)| (n.clone(), t)).collect();
        if let Some(o) = &self.optimizer {
            meta.insert("optim", serde_json::to_string(&o.cfg)?);
            meta.insert("optim_t", o.t.to_string());
            for (i, (name, _)) in self.params.iter().enumerate() {
                records.push((format!("optim.m/{name}"), &o.m[i]));
                records.push((format!("optim.v/{name}"), &o.v[i]));
            }
        }
        let meta: String = meta.iter().map(|(k, v)| format!("{k}={v}\n")).collect();

        let mut out = MAGIC.to_vec();
        out.extend((meta.len() as u32).to_le_bytes());
        out.extend(meta.as_bytes());
        out.extend((records.len() as u32).to_le_bytes());
        for (name, t) in records {
            out.extend((name.len() as u32).to_le_bytes());
            out.extend(name.as_bytes());
            out.push(DTYPE_F64);
            out.extend((t.rank() as u32).to_le_bytes());
            for &e in t.shape() {
                out.extend((e as u64).to_le_bytes());
            }
            for &v in t.data() {
                out.extend(v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() {
            return Err(Error::CorruptCheckpoint("file shorter than the header".into()));
        }
        if &bytes[..MAGIC.len()] != MAGIC {
            if &bytes[..4] == b"VRMD" {
                return Err(Error::VersionMismatch {
                    expected: FORMAT_VERSION.into(),
                    found: String::from_utf8_lossy(&bytes[4..8]).into_owned(),
                });
            }
            return Err(Error::CorruptCheckpoint("missing VRMD magic".into()));
        }
        let mut r = Reader {
            bytes,
            pos: MAGIC.len(),
        };
        let meta_len = r.u32()? as usize;
        let meta_text = std::str::from_utf8(r.take(meta_len)?)
            .map_err(|_| Error::CorruptCheckpoint("metadata is not UTF-8".into()))?;
        let mut meta = BTreeMap::new();
        for line in meta_text.lines() {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::CorruptCheckpoint(format!("bad metadata line `{line}`")))?;
            meta.insert(k.to_string(), v.to_string());
        }
        let get = |k: &str| {
            meta.get(k)
                .map(String::as_str)
                .ok_or_else(|| Error::CorruptCheckpoint(format!("missing metadata `{k}`")))
        };
        let version = get("format_version")?;
        if version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                expected: FORMAT_VERSION.into(),
                found: version.into(),
            });
        }
        let parse = |k: &str| -> Result<u128> {
            get(k)?
                .parse()
                .map_err(|_| Error::CorruptCheckpoint(format!("bad metadata `{k}`")))
        };
        let model: ModelConfig = serde_json::from_str(get("model")?)?;
        let train = meta.get("train").map(|s| serde_json::from_str(s)).transpose()?;
        let step = parse("step")? as usize;

        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let n = r.u32()? as usize;
            let name = String::from_utf8(r.take(n)?.to_vec())
                .map_err(|_| Error::CorruptCheckpoint("record name is not UTF-8".into()))?;
            let tag = r.take(1)?[0];
            if tag != DTYPE_F64 {
                return Err(Error::CorruptCheckpoint(format!("unknown dtype tag {tag} for `{name}`")));
            }
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u64()? as usize);
            }
            let len: usize = shape.iter().product();
            let raw = r.take(len.checked_mul(8).ok_or_else(|| Error::CorruptCheckpoint("record too large".into()))?)?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            let t = Tensor::new(shape, data).map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
            tensors.push((name, t));
        }
        if r.pos != bytes.len() {
            return Err(Error::CorruptCheckpoint("trailing bytes after the last record".into()));
        }

        let (moments, params): (Vec<_>, Vec<_>) = tensors.into_iter().partition(|(n, _)| n.starts_with("optim."));
        let optimizer = match meta.get("optim") {
            Some(cfg) => {
                let cfg: AdamWConfig = serde_json::from_str(cfg)?;
                let lookup: BTreeMap<_, _> = moments.into_iter().collect();
                let pick = |kind: &str| -> Result<Vec<Tensor>> {
                    params
                        .iter()
                        .map(|(n, _)| {
                            lookup
                                .get(&format!("optim.{kind}/{n}"))
                                .cloned()
                                .ok_or_else(|| Error::CorruptCheckpoint(format!("missing optimizer state for `{n}`")))
                        })
                        .collect()
                };
                Some(AdamW {
                    cfg,
                    t: parse("optim_t")? as u64,
                    m: pick("m")?,
                    v: pick("v")?,
                })
            }
            None => None,
        };
        let rng = match meta.get("rng_seed") {
            Some(seed) => {
                let seed = unhex(seed).ok_or_else(|| Error::CorruptCheckpoint("bad rng seed".into()))?;
                let mut rng = ChaCha8Rng::from_seed(seed);
                rng.set_stream(parse("rng_stream")? as u64);
                rng.set_word_pos(parse("rng_word_pos")?);
                Some(rng)
            }
            None => None,
        };
        Ok(Self {
            model,
            train,
            step,
            params,
            optimizer,
            rng,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::CorruptCheckpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unhex(s: &str) -> Option<[u8; 32]> {
    if s.len() != 64 {
        return None;
    }
    let mut out = [0u8; 32];
    for (i, o) in out.iter_mut().enumerate() {
        *o = u8::from_str_radix(s.get(2 * i..2 * i + 2)?, 16).ok()?;
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::trunc_normal;
    use rand::Rng;

    fn tiny() -> (Vremd, ParamStore) {
        Vremd::new(ModelConfig::tiny(), 3).unwrap()
    }

    #[test]
    fn round_trip_gives_identical_forward() {
        let (m, store) = tiny();
        let mut ck = Checkpoint::from_model(&m, &store);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let _: u64 = rng.random();
        ck.rng = Some(rng.clone());
        ck.optimizer = Some(AdamW::new(AdamWConfig::default(), &store));
        ck.step = 17;
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        assert_eq!(back.step, 17);
        assert_eq!(back.rng.as_ref().unwrap(), &rng);
        assert_eq!(back.optimizer, ck.optimizer);
        let (m2, s2) = back.restore().unwrap();
        let x = trunc_normal(&[3, 1, 16, 12], 1.0, &mut rng);
        let a = m.predict(&store, &x).unwrap();
        let b = m2.predict(&s2, &x).unwrap();
        assert!(a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn header_and_truncation() {
        let (m, store) = tiny();
        let bytes = Checkpoint::from_model(&m, &store).to_bytes().unwrap();
        assert_eq!(&bytes[..8], b"VRMD0001");
        for cut in [0, 5, 12, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(Checkpoint::from_bytes(&bytes[..cut]), Err(Error::CorruptCheckpoint(_))), "cut {cut}");
        }
        let mut other = bytes.clone();
        other[7] = b'2';
        assert!(matches!(Checkpoint::from_bytes(&other), Err(Error::VersionMismatch { .. })));
    }
}
