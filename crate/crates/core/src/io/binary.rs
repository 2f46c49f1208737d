//! Little-endian binary containers.
//!
//! Every file is `magic (4 bytes) | version u32 | body | sha256(magic..body)`.
//! Strings are a u32 byte length followed by UTF-8; optional values are a u8
//! presence flag followed by the value.

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use ndarray::{Array2, Array3, Array4};
use sha2::{Digest, Sha256};

use crate::bootstrap::BootstrapCI;
use crate::encoder::{LayerScores, ModelScores, ScoreTensor};
use crate::error::{Error, Result};
use crate::event_model::{ElectrodeMeta, ResponseTensor};
use crate::feature_store::FeatureMatrix;
use crate::scalar::Real;

pub const VERSION: u32 = 1;
pub const MAGIC_RESPONSES: &[u8; 4] = b"NRSP";
pub const MAGIC_FEATURES: &[u8; 4] = b"NFEA";
pub const MAGIC_SCORES: &[u8; 4] = b"NSCR";
pub const MAGIC_INTERVALS: &[u8; 4] = b"NBCI";

/// Payload element type codes.
pub const DTYPE_F32: u8 = 1;
pub const DTYPE_F64: u8 = 2;

struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    fn new(magic: &[u8; 4]) -> Self {
        let mut buf = magic.to_vec();
        buf.write_u32::<LE>(VERSION).expect("vec write");
        Self { buf }
    }

    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u32(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| Error::data(format!("{v} does not fit the u32 header field")))?;
        self.buf.write_u32::<LE>(v).expect("vec write");
        Ok(())
    }

    fn u64(&mut self, v: u64) {
        self.buf.write_u64::<LE>(v).expect("vec write");
    }

    fn f32(&mut self, v: f32) {
        self.buf.write_f32::<LE>(v).expect("vec write");
    }

    fn f64(&mut self, v: f64) {
        self.buf.write_f64::<LE>(v).expect("vec write");
    }

    fn str(&mut self, s: &str) -> Result<()> {
        self.u32(s.len())?;
        self.buf.extend_from_slice(s.as_bytes());
        Ok(())
    }

    fn finish(mut self, path: &Path) -> Result<()> {
        let digest = Sha256::digest(&self.buf);
        self.buf.extend_from_slice(&digest);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, &self.buf).map_err(|e| Error::io(path, e))
    }
}

struct Decoder {
    cur: Cursor<Vec<u8>>,
    path: String,
}

impl Decoder {
    fn open(path: &Path, magic: &[u8; 4]) -> Result<Self> {
        let mut bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let shown = path.display().to_string();
        if bytes.len() < 8 + 32 {
            return Err(Error::data(format!("{shown}: truncated file")));
        }
        let body_len = bytes.len() - 32;
        if Sha256::digest(&bytes[..body_len]).as_slice() != &bytes[body_len..] {
            return Err(Error::data(format!("{shown}: checksum mismatch")));
        }
        bytes.truncate(body_len);
        if &bytes[..4] != magic {
            return Err(Error::data(format!(
                "{shown}: expected magic {}, found {:?}",
                String::from_utf8_lossy(magic),
                String::from_utf8_lossy(&bytes[..4])
            )));
        }
        let mut d = Self {
            cur: Cursor::new(bytes),
            path: shown,
        };
        d.cur.set_position(4);
        let version = d.u32()?;
        if version != VERSION {
            return Err(Error::data(format!("{}: unsupported version {version}", d.path)));
        }
        Ok(d)
    }

    fn err(&self, what: &str) -> Error {
        Error::data(format!("{}: truncated or malformed while reading {what}", self.path))
    }

    fn u8(&mut self) -> Result<u8> {
        self.cur.read_u8().map_err(|_| self.err("u8"))
    }

    fn u32(&mut self) -> Result<u32> {
        self.cur.read_u32::<LE>().map_err(|_| self.err("u32"))
    }

    fn len(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        self.cur.read_u64::<LE>().map_err(|_| self.err("u64"))
    }

    fn f32(&mut self) -> Result<f32> {
        self.cur.read_f32::<LE>().map_err(|_| self.err("f32"))
    }

    fn f64(&mut self) -> Result<f64> {
        self.cur.read_f64::<LE>().map_err(|_| self.err("f64"))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        self.check_remaining(n * 8)?;
        (0..n).map(|_| self.f64()).collect()
    }

    fn str(&mut self) -> Result<String> {
        let n = self.len()?;
        self.check_remaining(n)?;
        let mut b = vec![0; n];
        self.cur.read_exact(&mut b).map_err(|_| self.err("string"))?;
        String::from_utf8(b).map_err(|_| Error::data(format!("{}: invalid UTF-8 string", self.path)))
    }

    fn check_remaining(&self, bytes: usize) -> Result<()> {
        let left = self.cur.get_ref().len() as u64 - self.cur.position();
        if (bytes as u64) > left {
            return Err(self.err(&format!("{bytes} bytes of payload")));
        }
        Ok(())
    }

    fn done(&self) -> Result<()> {
        if self.cur.position() as usize != self.cur.get_ref().len() {
            return Err(Error::data(format!("{}: trailing bytes after payload", self.path)));
        }
        Ok(())
    }
}

/// Writes a response tensor; values are stored as f32.
pub fn write_responses<T: Real>(path: &Path, responses: &ResponseTensor<T>, provenance: &str) -> Result<()> {
    let mut w = Encoder::new(MAGIC_RESPONSES);
    w.str(provenance)?;
    w.u32(responses.n_electrodes())?;
    w.u32(responses.n_events())?;
    w.u32(responses.n_bins())?;
    for &c in &responses.bin_centers_ms {
        w.f64(c);
    }
    for e in &responses.electrodes {
        w.u32(e.electrode_id as usize)?;
        w.u32(e.subject_id as usize)?;
        w.str(&e.region_label)?;
        match e.coordinates {
            Some(xyz) => {
                w.u8(1);
                xyz.iter().for_each(|&v| w.f64(v));
            }
            None => w.u8(0),
        }
    }
    for v in responses.values.iter() {
        w.f32(v.to_f64_lossy() as f32);
    }
    w.finish(path)
}

pub fn read_responses(path: &Path) -> Result<(ResponseTensor<f64>, String)> {
    let mut r = Decoder::open(path, MAGIC_RESPONSES)?;
    let provenance = r.str()?;
    let (ne, nv, nb) = (r.len()?, r.len()?, r.len()?);
    let centers = r.f64s(nb)?;
    let mut electrodes = Vec::with_capacity(ne.min(1 << 16));
    for _ in 0..ne {
        let electrode_id = r.u32()?;
        let subject_id = r.u32()?;
        let region_label = r.str()?;
        let coordinates = match r.u8()? {
            0 => None,
            _ => Some([r.f64()?, r.f64()?, r.f64()?]),
        };
        electrodes.push(ElectrodeMeta {
            electrode_id,
            subject_id,
            region_label,
            coordinates,
        });
    }
    let count = ne * nv * nb;
    r.check_remaining(count * 4)?;
    let flat: Vec<f64> = (0..count).map(|_| r.f32().map(f64::from)).collect::<Result<_>>()?;
    r.done()?;
    let values = Array3::from_shape_vec((ne, nv, nb), flat).expect("counted payload");
    Ok((ResponseTensor::new(electrodes, values, centers)?, provenance))
}

/// Writes a feature matrix with an f32 payload.
pub fn write_features<T: Real>(path: &Path, features: &FeatureMatrix<T>, provenance: &str) -> Result<()> {
    let mut w = Encoder::new(MAGIC_FEATURES);
    w.str(provenance)?;
    w.str(&features.model_id)?;
    w.str(&features.layer_id)?;
    w.u64(features.n_events() as u64);
    w.u64(features.dim() as u64);
    w.u8(DTYPE_F32);
    match features.seed {
        Some(s) => {
            w.u8(1);
            w.u64(s);
        }
        None => w.u8(0),
    }
    w.u8(u8::from(features.projected));
    for v in features.data.iter() {
        w.f32(v.to_f64_lossy() as f32);
    }
    w.finish(path)
}

/// Reads a feature file with an f32 or f64 payload.
pub fn read_features(path: &Path) -> Result<FeatureMatrix<f64>> {
    let mut r = Decoder::open(path, MAGIC_FEATURES)?;
    let _provenance = r.str()?;
    let model_id = r.str()?;
    let layer_id = r.str()?;
    let n = usize::try_from(r.u64()?).map_err(|_| r.err("n"))?;
    let d = usize::try_from(r.u64()?).map_err(|_| r.err("D"))?;
    let dtype = r.u8()?;
    let seed = match r.u8()? {
        0 => None,
        _ => Some(r.u64()?),
    };
    let projected = r.u8()? != 0;
    let count = n.checked_mul(d).ok_or_else(|| r.err("dimensions"))?;
    let flat: Vec<f64> = match dtype {
        DTYPE_F32 => {
            r.check_remaining(count * 4)?;
            (0..count).map(|_| r.f32().map(f64::from)).collect::<Result<_>>()?
        }
        DTYPE_F64 => r.f64s(count)?,
        other => return Err(Error::data(format!("{}: unknown dtype code {other}", r.path))),
    };
    r.done()?;
    let mut fm = FeatureMatrix::new(model_id, layer_id, Array2::from_shape_vec((n, d), flat).expect("counted payload"));
    fm.seed = seed;
    fm.projected = projected;
    fm.check_finite()?;
    Ok(fm)
}

/// Writes regression scores as f64, indexed `[split, electrode, bin]` per layer.
pub fn write_scores<T: Real>(path: &Path, scores: &ScoreTensor<T>, provenance: &str) -> Result<()> {
    let mut w = Encoder::new(MAGIC_SCORES);
    w.str(provenance)?;
    w.u32(scores.n_electrodes)?;
    w.u32(scores.n_bins)?;
    w.u32(scores.lambdas.len())?;
    scores.lambdas.iter().for_each(|&l| w.f64(l));
    w.u32(scores.models.len())?;
    for m in &scores.models {
        w.str(&m.model_id)?;
        w.u32(m.layers.len())?;
        for l in &m.layers {
            w.str(&l.layer_id)?;
            l.lambda.iter().for_each(|&v| w.f64(v));
            l.scores.iter().for_each(|v| w.f64(v.to_f64_lossy()));
        }
        for &c in &m.chosen_layer {
            w.u32(c)?;
        }
    }
    w.finish(path)
}

pub fn read_scores(path: &Path) -> Result<(ScoreTensor<f64>, String)> {
    let mut r = Decoder::open(path, MAGIC_SCORES)?;
    let provenance = r.str()?;
    let (ne, nb) = (r.len()?, r.len()?);
    let nl = r.len()?;
    let lambdas = r.f64s(nl)?;
    let nm = r.len()?;
    let mut models = Vec::new();
    for _ in 0..nm {
        let model_id = r.str()?;
        let n_layers = r.len()?;
        let mut layers = Vec::new();
        for _ in 0..n_layers {
            let layer_id = r.str()?;
            let lambda = r.f64s(ne)?;
            let flat = r.f64s(3 * ne * nb)?;
            layers.push(LayerScores {
                layer_id,
                lambda,
                scores: Array3::from_shape_vec((3, ne, nb), flat).expect("counted payload"),
            });
        }
        let chosen_layer = (0..ne).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
        if chosen_layer.iter().any(|&c| c >= n_layers) {
            return Err(Error::data(format!("{}: chosen layer out of range", r.path)));
        }
        models.push(ModelScores {
            model_id,
            layers,
            chosen_layer,
        });
    }
    r.done()?;
    Ok((
        ScoreTensor {
            n_electrodes: ne,
            n_bins: nb,
            lambdas,
            models,
        },
        provenance,
    ))
}

pub fn write_intervals(path: &Path, ci: &BootstrapCI, provenance: &str) -> Result<()> {
    let mut w = Encoder::new(MAGIC_INTERVALS);
    w.str(provenance)?;
    w.str(&ci.resample_digest)?;
    w.u32(ci.n_electrodes)?;
    w.u32(ci.n_bins)?;
    w.u32(ci.models.len())?;
    for (m, id) in ci.models.iter().enumerate() {
        w.str(id)?;
        w.u32(ci.used_resamples[m])?;
    }
    for a in [&ci.mean, &ci.lower, &ci.upper] {
        a.iter().for_each(|&v| w.f64(v));
    }
    w.finish(path)
}

pub fn read_intervals(path: &Path) -> Result<(BootstrapCI, String)> {
    let mut r = Decoder::open(path, MAGIC_INTERVALS)?;
    let provenance = r.str()?;
    let resample_digest = r.str()?;
    let (ne, nb, nm) = (r.len()?, r.len()?, r.len()?);
    let mut models = Vec::new();
    let mut used_resamples = Vec::new();
    for _ in 0..nm {
        models.push(r.str()?);
        used_resamples.push(r.len()?);
    }
    let shape = (nm, 3, ne, nb);
    let mut arrays = Vec::new();
    for _ in 0..3 {
        let flat = r.f64s(nm * 3 * ne * nb)?;
        arrays.push(Array4::from_shape_vec(shape, flat).expect("counted payload"));
    }
    r.done()?;
    let upper = arrays.pop().expect("three arrays");
    let lower = arrays.pop().expect("three arrays");
    let mean = arrays.pop().expect("three arrays");
    Ok((
        BootstrapCI {
            models,
            n_electrodes: ne,
            n_bins: nb,
            mean,
            lower,
            upper,
            used_resamples,
            resample_digest,
        },
        provenance,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;

    fn tensor() -> ResponseTensor<f64> {
        let electrodes = vec![
            ElectrodeMeta {
                electrode_id: 7,
                subject_id: 2,
                region_label: "insula".into(),
                coordinates: Some([1.5, -2.0, 30.25]),
            },
            ElectrodeMeta {
                electrode_id: 9,
                subject_id: 3,
                region_label: "fusiform".into(),
                coordinates: None,
            },
        ];
        let values = Array::from_shape_fn((2, 4, 3), |(e, i, b)| (e * 100 + i * 10 + b) as f64 * 0.5);
        ResponseTensor::new(electrodes, values, vec![-100.0, 0.0, 100.0]).unwrap()
    }

    #[test]
    fn responses_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.nrsp");
        write_responses(&p, &tensor(), "abc").unwrap();
        let (back, prov) = read_responses(&p).unwrap();
        assert_eq!(prov, "abc");
        assert_eq!(back.values, tensor().values);
        assert_eq!(back.electrodes, tensor().electrodes);
        assert_eq!(back.bin_centers_ms, tensor().bin_centers_ms);
    }

    #[test]
    fn corruption_and_wrong_magic_are_detected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.nrsp");
        write_responses(&p, &tensor(), "").unwrap();
        let mut bytes = fs::read(&p).unwrap();
        bytes[20] ^= 0xff;
        fs::write(&p, &bytes).unwrap();
        assert!(matches!(read_responses(&p), Err(Error::Data(m)) if m.contains("checksum")));
        write_responses(&p, &tensor(), "").unwrap();
        assert!(matches!(read_features(&p), Err(Error::Data(m)) if m.contains("magic")));
        assert!(matches!(read_scores(&dir.path().join("missing")), Err(Error::Io { .. })));
    }

    #[test]
    fn features_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.nfea");
        let mut fm = FeatureMatrix::new("m", "blocks.0.attn.q", Array::from_shape_fn((3, 24), |(i, j)| (i * 24 + j) as f64));
        fm.seed = Some(99);
        fm.projected = true;
        write_features(&p, &fm, "").unwrap();
        let back = read_features(&p).unwrap();
        assert_eq!(back.data, fm.data);
        assert_eq!((back.model_id.as_str(), back.layer_id.as_str()), ("m", "blocks.0.attn.q"));
        assert_eq!(back.seed, Some(99));
        assert!(back.projected);
        // writing twice gives identical bytes
        let q = dir.path().join("g.nfea");
        write_features(&q, &fm, "").unwrap();
        assert_eq!(fs::read(&p).unwrap(), fs::read(&q).unwrap());
    }

    #[test]
    fn scores_and_intervals_round_trip() {
        let scores = ScoreTensor {
            n_electrodes: 2,
            n_bins: 3,
            lambdas: vec![0.1, 10.0],
            models: vec![ModelScores {
                model_id: "m".into(),
                layers: vec![
                    LayerScores {
                        layer_id: "a".into(),
                        lambda: vec![0.1, 10.0],
                        scores: Array::from_shape_fn((3, 2, 3), |(s, e, b)| (s + e + b) as f64 / 7.0),
                    },
                    LayerScores {
                        layer_id: "b".into(),
                        lambda: vec![10.0, 10.0],
                        scores: Array3::zeros((3, 2, 3)),
                    },
                ],
                chosen_layer: vec![0, 1],
            }],
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.nscr");
        write_scores(&p, &scores, "h").unwrap();
        let (back, prov) = read_scores(&p).unwrap();
        assert_eq!(back, scores);
        assert_eq!(prov, "h");

        let ci = BootstrapCI {
            models: vec!["m".into(), "n".into()],
            n_electrodes: 2,
            n_bins: 3,
            mean: Array::from_shape_fn((2, 3, 2, 3), |(a, b, c, d)| (a + b + c + d) as f64),
            lower: Array4::zeros((2, 3, 2, 3)),
            upper: Array4::ones((2, 3, 2, 3)),
            used_resamples: vec![100, 99],
            resample_digest: "d".into(),
        };
        let p = dir.path().join("c.nbci");
        write_intervals(&p, &ci, "h").unwrap();
        assert_eq!(read_intervals(&p).unwrap().0, ci);
    }
}
