//! Binary checkpoint container.
//!
//! Little-endian layout: the magic bytes `DFSN`, a `u32` version, then
//! records until end of file. Each record is a `u32` name length, the UTF-8
//! name, a `u32` rank, `rank` `u64` dimensions and the `f64` payload.
//! Metadata travels as ordinary records whose names start with `__`.

use std::path::Path;

use crate::data::{FeatureKind, Standardizer};
use crate::denoiser::{DenoiserConfig, DenoiserModel};
use crate::error::{Error, Result};
use crate::guidance::GuidanceClassifier;
use crate::schedule::NoiseSchedule;
use crate::tensor::{ParamSet, Tensor};

pub const MAGIC: &[u8; 4] = b"DFSN";
pub const VERSION: u32 = 1;

const MAX_NAME: usize = 1 << 16;
const MAX_RANK: usize = 16;

/// Serialize named tensors in the given order.
pub fn encode(records: &[(String, Tensor)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for (name, t) in records {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.buf.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }
}

/// Parse a checkpoint image. Errors name the record that failed.
pub fn decode(bytes: &[u8]) -> std::result::Result<Vec<(String, Tensor)>, String> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(4) != Some(MAGIC.as_slice()) {
        return Err("bad magic (not a checkpoint file)".into());
    }
    match c.u32() {
        Some(VERSION) => {}
        Some(v) => return Err(format!("unsupported version {v} (expected {VERSION})")),
        None => return Err("truncated header".into()),
    }
    let mut records = Vec::new();
    while c.pos < bytes.len() {
        let idx = records.len();
        let at = |what: &str| format!("record #{idx}: truncated {what}");
        let len = c.u32().ok_or_else(|| at("name length"))? as usize;
        if len > MAX_NAME {
            return Err(format!("record #{idx}: name length {len} is implausible"));
        }
        let name = c.take(len).ok_or_else(|| at("name"))?;
        let name = String::from_utf8(name.to_vec()).map_err(|_| format!("record #{idx}: name is not UTF-8"))?;
        let at = |what: &str| format!("record #{idx} {name:?}: truncated {what}");
        let rank = c.u32().ok_or_else(|| at("rank"))? as usize;
        if rank == 0 || rank > MAX_RANK {
            return Err(format!("record #{idx} {name:?}: invalid rank {rank}"));
        }
        let mut shape = Vec::with_capacity(rank);
        let mut count: usize = 1;
        for _ in 0..rank {
            let d = c.u64().ok_or_else(|| at("dimensions"))?;
            let d = usize::try_from(d).map_err(|_| at("dimensions"))?;
            count = count.checked_mul(d).ok_or_else(|| format!("record #{idx} {name:?}: size overflow"))?;
            shape.push(d);
        }
        let bytes_needed = count.checked_mul(8).ok_or_else(|| format!("record #{idx} {name:?}: size overflow"))?;
        let payload = c.take(bytes_needed).ok_or_else(|| at("payload"))?;
        let data = payload
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| format!("record #{idx} {name:?}: {e}"))?;
        records.push((name, t));
    }
    Ok(records)
}

fn ckpt_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

pub fn write_records(path: impl AsRef<Path>, records: &[(String, Tensor)]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(records)).map_err(|e| ckpt_err(path, e.to_string()))
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<(String, Tensor)>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| ckpt_err(path, e.to_string()))?;
    decode(&bytes).map_err(|m| ckpt_err(path, m))
}

/// Provenance stored with a trained denoiser.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainMeta {
    pub steps: usize,
    pub seed: u64,
    pub loss: f64,
}

/// Everything needed to sample from a saved denoiser.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserCheckpoint {
    pub model: DenoiserModel,
    pub schedule: NoiseSchedule,
    pub meta: TrainMeta,
    pub kind: FeatureKind,
    pub standardizer: Option<Standardizer>,
    pub names: Vec<String>,
}

const KIND_DENOISER: f64 = 0.0;
const KIND_CLASSIFIER: f64 = 1.0;

fn schedule_record(s: &NoiseSchedule) -> (String, Tensor) {
    (
        "__schedule".into(),
        Tensor::vector(vec![s.steps() as f64, s.beta_start(), s.beta_end()]),
    )
}

fn check_linear(s: &NoiseSchedule) -> Result<()> {
    if NoiseSchedule::linear(s.steps(), s.beta_start(), s.beta_end())? != *s {
        return Err(Error::config("only linear schedules can be stored in a checkpoint"));
    }
    Ok(())
}

fn names_record(names: &[String]) -> (String, Tensor) {
    // Column names as code points separated by 0.
    let mut v = Vec::new();
    for (i, n) in names.iter().enumerate() {
        if i > 0 {
            v.push(0.0);
        }
        v.extend(n.chars().map(|c| c as u32 as f64));
    }
    if v.is_empty() {
        v.push(-1.0);
    }
    ("__names".into(), Tensor::vector(v))
}

fn parse_names(t: &Tensor) -> Option<Vec<String>> {
    if t.data() == [-1.0] {
        return Some(Vec::new());
    }
    t.data()
        .split(|&v| v == 0.0)
        .map(|chunk| chunk.iter().map(|&c| char::from_u32(c as u32)).collect::<Option<String>>())
        .collect()
}

impl DenoiserCheckpoint {
    pub fn to_records(&self) -> Vec<(String, Tensor)> {
        let mut r = vec![
            ("__kind".to_string(), Tensor::scalar(KIND_DENOISER)),
            schedule_record(&self.schedule),
            ("__arch".to_string(), Tensor::vector(self.model.config().to_descriptor())),
            (
                "__train".to_string(),
                Tensor::vector(vec![self.meta.steps as f64, self.meta.seed as f64, self.meta.loss]),
            ),
            (
                "__data".to_string(),
                Tensor::scalar(match self.kind {
                    FeatureKind::Binary => 0.0,
                    FeatureKind::Continuous => 1.0,
                }),
            ),
            names_record(&self.names),
        ];
        if let Some(s) = &self.standardizer {
            r.push(("__std.mean".into(), Tensor::vector(s.mean.clone())));
            r.push(("__std.std".into(), Tensor::vector(s.std.clone())));
        }
        r.extend(self.model.params().iter().map(|(n, t)| (n.to_string(), t.clone())));
        r
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        if self.meta.seed >= 1u64 << 53 {
            return Err(Error::config("seeds above 2^53 cannot be stored exactly"));
        }
        check_linear(&self.schedule)?;
        write_records(path, &self.to_records())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let records = read_records(path)?;
        Self::from_records(records).map_err(|m| ckpt_err(path, m))
    }

    pub fn from_records(records: Vec<(String, Tensor)>) -> std::result::Result<Self, String> {
        let mut meta = Meta::split(records)?;
        if meta.take("__kind")?.data() != [KIND_DENOISER] {
            return Err("checkpoint does not hold a denoiser".into());
        }
        let schedule = meta.schedule()?;
        let config = DenoiserConfig::from_descriptor(meta.take("__arch")?.data()).map_err(|e| e.to_string())?;
        let tr = meta.take("__train")?;
        let [steps, seed, loss] = tr.data() else {
            return Err("record \"__train\": expected 3 values".into());
        };
        let kind = match meta.take("__data")?.data() {
            [0.0] => FeatureKind::Binary,
            [1.0] => FeatureKind::Continuous,
            _ => return Err("record \"__data\": unknown feature kind".into()),
        };
        let names = parse_names(&meta.take("__names")?).ok_or("record \"__names\": invalid characters")?;
        let standardizer = match (meta.opt("__std.mean"), meta.opt("__std.std")) {
            (Some(m), Some(s)) => Some(Standardizer {
                mean: m.into_data(),
                std: s.into_data(),
            }),
            (None, None) => None,
            _ => return Err("standardizer statistics are incomplete".into()),
        };
        meta.finish()?;
        let model = DenoiserModel::from_params(config, meta.params).map_err(|e| e.to_string())?;
        Ok(DenoiserCheckpoint {
            model,
            schedule,
            meta: TrainMeta {
                steps: *steps as usize,
                seed: *seed as u64,
                loss: *loss,
            },
            kind,
            standardizer,
            names,
        })
    }
}

/// Saved guidance classifier with the schedule it was trained under.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierCheckpoint {
    pub classifier: GuidanceClassifier,
    pub schedule: NoiseSchedule,
}

impl ClassifierCheckpoint {
    pub fn to_records(&self) -> Vec<(String, Tensor)> {
        let mut r = vec![
            ("__kind".to_string(), Tensor::scalar(KIND_CLASSIFIER)),
            schedule_record(&self.schedule),
            ("__clf".to_string(), Tensor::vector(self.classifier.descriptor())),
        ];
        r.extend(self.classifier.params().iter().map(|(n, t)| (n.to_string(), t.clone())));
        r
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        check_linear(&self.schedule)?;
        write_records(path, &self.to_records())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let records = read_records(path)?;
        Self::from_records(records).map_err(|m| ckpt_err(path, m))
    }

    pub fn from_records(records: Vec<(String, Tensor)>) -> std::result::Result<Self, String> {
        let mut meta = Meta::split(records)?;
        if meta.take("__kind")?.data() != [KIND_CLASSIFIER] {
            return Err("checkpoint does not hold a classifier".into());
        }
        let schedule = meta.schedule()?;
        let desc = meta.take("__clf")?;
        meta.finish()?;
        let classifier = GuidanceClassifier::from_parts(desc.data(), meta.params).map_err(|e| e.to_string())?;
        Ok(ClassifierCheckpoint { classifier, schedule })
    }
}

/// Metadata records split from parameters.
struct Meta {
    meta: Vec<(String, Tensor)>,
    params: ParamSet,
}

impl Meta {
    fn split(records: Vec<(String, Tensor)>) -> std::result::Result<Self, String> {
        let mut meta = Vec::new();
        let mut params = ParamSet::new();
        for (n, t) in records {
            if n.starts_with("__") {
                if meta.iter().any(|(m, _)| *m == n) {
                    return Err(format!("duplicate record {n:?}"));
                }
                meta.push((n, t));
            } else {
                params.insert(n.clone(), t).map_err(|_| format!("duplicate record {n:?}"))?;
            }
        }
        Ok(Meta { meta, params })
    }

    fn opt(&mut self, name: &str) -> Option<Tensor> {
        let i = self.meta.iter().position(|(n, _)| n == name)?;
        Some(self.meta.remove(i).1)
    }

    fn take(&mut self, name: &str) -> std::result::Result<Tensor, String> {
        self.opt(name).ok_or_else(|| format!("missing record {name:?}"))
    }

    fn schedule(&mut self) -> std::result::Result<NoiseSchedule, String> {
        let s = self.take("__schedule")?;
        let [t, a, b] = s.data() else {
            return Err("record \"__schedule\": expected 3 values".into());
        };
        NoiseSchedule::linear(*t as usize, *a, *b).map_err(|e| format!("record \"__schedule\": {e}"))
    }

    fn finish(&self) -> std::result::Result<(), String> {
        match self.meta.first() {
            Some((n, _)) => Err(format!("unexpected record {n:?}")),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::Arch;

    fn small() -> DenoiserCheckpoint {
        let cfg = DenoiserConfig {
            arch: Arch::Mlp { hidden: 8, layers: 2 },
            feature_dim: 3,
            embed_dim: 8,
            time_dim: 8,
        };
        let mut model = DenoiserModel::new(cfg, 7).unwrap();
        model.params_mut().values_mut("mlp.out.w").unwrap()[0] = std::f64::consts::PI;
        DenoiserCheckpoint {
            model,
            schedule: NoiseSchedule::linear(200, 1e-4, 1e-2).unwrap(),
            meta: TrainMeta {
                steps: 10,
                seed: 42,
                loss: 0.123456789,
            },
            kind: FeatureKind::Continuous,
            standardizer: Some(Standardizer {
                mean: vec![0.1, -2.0, 3.5],
                std: vec![1.0, 0.25, 7.0],
            }),
            names: vec!["age".into(), "bmi".into(), "hé".into()],
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        let ck = small();
        ck.save(&p).unwrap();
        let back = DenoiserCheckpoint::load(&p).unwrap();
        assert_eq!(back, ck);
        let p2 = dir.path().join("m2.ckpt");
        back.save(&p2).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn header_layout() {
        let bytes = encode(&[("ab".into(), Tensor::vector(vec![1.5]))]);
        assert_eq!(&bytes[..4], b"DFSN");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &2u32.to_le_bytes());
        assert_eq!(&bytes[12..14], b"ab");
        assert_eq!(&bytes[14..18], &1u32.to_le_bytes());
        assert_eq!(&bytes[18..26], &1u64.to_le_bytes());
        assert_eq!(&bytes[26..34], &1.5f64.to_le_bytes());
        assert_eq!(bytes.len(), 34);
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = encode(&small().to_records());
        let err = decode(&bytes[..bytes.len() - 1]).unwrap_err();
        assert!(err.contains("truncated payload"), "{err}");
        assert!(err.contains("\"time.w2\""), "{err}");

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode(&bad).unwrap_err().contains("magic"));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(decode(&bad).unwrap_err().contains("version"));

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.ckpt");
        std::fs::write(&p, &bytes[..bytes.len() - 1]).unwrap();
        match DenoiserCheckpoint::load(&p) {
            Err(Error::Checkpoint { path, .. }) => assert_eq!(path, p),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn wrong_kind_and_missing_records() {
        let ck = small();
        let mut recs = ck.to_records();
        assert!(ClassifierCheckpoint::from_records(recs.clone()).is_err());
        recs.retain(|(n, _)| n != "__arch");
        assert!(DenoiserCheckpoint::from_records(recs).unwrap_err().contains("__arch"));
        let mut recs = ck.to_records();
        recs.push(("__bogus".into(), Tensor::scalar(1.0)));
        assert!(DenoiserCheckpoint::from_records(recs).unwrap_err().contains("__bogus"));
    }

    #[test]
    fn classifier_round_trip() {
        let clf = GuidanceClassifier::binary_logistic(&[0.5, -1.25], 0.3).unwrap();
        let ck = ClassifierCheckpoint {
            classifier: clf,
            schedule: NoiseSchedule::linear(50, 1e-4, 0.02).unwrap(),
        };
        let back = ClassifierCheckpoint::from_records(decode(&encode(&ck.to_records())).unwrap()).unwrap();
        assert_eq!(back, ck);
    }
}
