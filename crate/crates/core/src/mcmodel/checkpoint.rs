use std::io::{Read, Write};
use std::path::Path;

use super::{
    Architecture, ClassifierStack, EsfHead, FeNetwork, Head, Model, PoolScope, SpatialFilterLayer,
    WtsfHead,
};
use crate::dsp::{GlobalStats, StftConfig, WindowKind};
use crate::error::{Error, Result};
use crate::geometry::Direction;
use crate::nnet::{Affine, Conv1xD, Lstm, Param};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MCAM";
pub const CHECKPOINT_VERSION: u32 = 1;
const MAX_ID_LEN: usize = 4096;

struct Bytes<'a>(&'a [u8]);

impl Bytes<'_> {
    fn take<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        if self.0.len() < N {
            return Err(Error::Format(format!("checkpoint truncated in {what}")));
        }
        let (head, rest) = self.0.split_at(N);
        self.0 = rest;
        Ok(head.try_into().expect("length checked"))
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take::<1>(what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(what)?))
    }

    fn usize(&mut self, what: &str) -> Result<usize> {
        Ok(self.u32(what)? as usize)
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(what)?))
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        if self.0.len() / 8 < n {
            return Err(Error::Format(format!("checkpoint truncated in {what}")));
        }
        (0..n).map(|_| self.f64(what)).collect()
    }

    fn flag(&mut self, what: &str) -> Result<bool> {
        match self.u8(what)? {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(Error::Format(format!("bad {what} flag {v}"))),
        }
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_f64s(out: &mut Vec<u8>, v: &[f64]) {
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

fn window_tag(w: WindowKind) -> u8 {
    match w {
        WindowKind::Hann => 0,
        WindowKind::Rectangular => 1,
    }
}

impl Model {
    /// Layout, little-endian: magic `MCAM`, version, architecture tag, the
    /// feature analysis config, classifier dims (input, H, L, C), optional
    /// DFT stats (embedded `MGST`), optional FE dims and output
    /// standardization, optional SF dims with directions and geometry ids,
    /// head tag and dims, then a u64 count and every parameter as f32 in
    /// [`Model::params`] order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        put_u32(&mut out, CHECKPOINT_VERSION as usize);
        out.push(self.arch.tag());
        out.extend_from_slice(&self.stft.sample_rate.to_le_bytes());
        put_u32(&mut out, self.stft.window_len);
        put_u32(&mut out, self.stft.hop);
        put_u32(&mut out, self.stft.fft_size);
        out.push(window_tag(self.stft.window));
        out.extend_from_slice(&self.mean_decay.to_le_bytes());
        let c = &self.classifier;
        for v in [c.input_dim(), c.hidden(), c.layers.len(), c.num_classes()] {
            put_u32(&mut out, v);
        }
        match &self.stats {
            Some(s) => {
                out.push(1);
                s.write_to(&mut out).expect("vec write");
            }
            None => out.push(0),
        }
        match &self.fe {
            Some(fe) => {
                out.push(1);
                put_u32(&mut out, fe.mel.output_dim());
                put_u32(&mut out, fe.mel.input_dim());
                put_f64s(&mut out, &fe.out_mean);
                put_f64s(&mut out, &fe.out_scale);
            }
            None => out.push(0),
        }
        match &self.sf {
            Some(sf) => {
                out.push(1);
                put_u32(&mut out, sf.num_geometries());
                put_u32(&mut out, sf.num_directions());
                put_u32(&mut out, sf.num_bins());
                for d in &sf.directions {
                    put_f64s(&mut out, &[d.azimuth(), d.elevation()]);
                }
                for (id, &m) in sf.geometry_ids.iter().zip(&sf.channels) {
                    put_u32(&mut out, m);
                    put_u32(&mut out, id.len());
                    out.extend_from_slice(id.as_bytes());
                }
            }
            None => out.push(0),
        }
        match &self.head {
            None => out.push(0),
            Some(Head::Esf(_)) => out.push(1),
            Some(Head::Wtsf(h)) => {
                out.push(2);
                put_u32(&mut out, h.num_filters());
                out.push(h.scope.tag());
            }
        }
        let params = self.params();
        let total: usize = params.iter().map(|(_, p)| p.len()).sum();
        out.extend_from_slice(&(total as u64).to_le_bytes());
        for (_, p) in params {
            for &v in &p.value {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Bytes(bytes);
        if &r.take::<4>("header")? != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a model checkpoint (bad magic)".into()));
        }
        let version = r.u32("header")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let arch = Architecture::from_tag(r.u8("header")?)?;
        let sample_rate = r.f64("dsp config")?;
        let (window_len, hop, fft_size) = (
            r.usize("dsp config")?,
            r.usize("dsp config")?,
            r.usize("dsp config")?,
        );
        let window = match r.u8("dsp config")? {
            0 => WindowKind::Hann,
            1 => WindowKind::Rectangular,
            t => return Err(Error::Format(format!("unknown window tag {t}"))),
        };
        let stft = StftConfig::new(sample_rate, window_len, hop, fft_size, window)?;
        let mean_decay = r.f64("dsp config")?;
        let (input, hidden, layers, classes) = (
            r.usize("classifier dims")?,
            r.usize("classifier dims")?,
            r.usize("classifier dims")?,
            r.usize("classifier dims")?,
        );
        if input == 0 || hidden == 0 || layers == 0 || classes < 2 || layers > 64 {
            return Err(Error::Format(format!(
                "implausible classifier dims in={input} H={hidden} L={layers} C={classes}"
            )));
        }
        let stats = if r.flag("stats")? {
            Some(GlobalStats::read_from(&mut r.0)?)
        } else {
            None
        };
        let fe = if r.flag("FE")? {
            let (n, k) = (r.usize("FE dims")?, r.usize("FE dims")?);
            let out_mean = r.f64s(n, "FE standardization")?;
            let out_scale = r.f64s(n, "FE standardization")?;
            Some(FeNetwork {
                mel: Affine {
                    w: Param::zeros(n, k),
                    b: Param::zeros(1, n),
                },
                out_mean,
                out_scale,
            })
        } else {
            None
        };
        let sf = if r.flag("SF")? {
            let (g_len, d_len, k_len) = (r.usize("SF dims")?, r.usize("SF dims")?, r.usize("SF dims")?);
            if g_len == 0 || d_len == 0 || k_len == 0 {
                return Err(Error::Format("SF layer with a zero dimension".into()));
            }
            let raw = r.f64s(2 * d_len, "directions")?;
            let directions = raw
                .chunks(2)
                .map(|p| Direction::new(p[0], p[1]))
                .collect::<Result<Vec<_>>>()?;
            let mut ids = Vec::new();
            let mut channels = Vec::new();
            for _ in 0..g_len {
                let m = r.usize("geometry table")?;
                let len = r.usize("geometry table")?;
                if m == 0 || len > MAX_ID_LEN || r.0.len() < len {
                    return Err(Error::Format("bad geometry table entry".into()));
                }
                let (id, rest) = r.0.split_at(len);
                r.0 = rest;
                ids.push(
                    String::from_utf8(id.to_vec())
                        .map_err(|_| Error::Format("geometry id is not UTF-8".into()))?,
                );
                channels.push(m);
            }
            let rows = k_len * d_len * 2;
            Some(SpatialFilterLayer {
                weights: channels.iter().map(|&m| Param::zeros(rows, 2 * m)).collect(),
                bias: channels.iter().map(|_| Param::zeros(1, rows)).collect(),
                geometry_ids: ids,
                channels,
                directions,
                num_bins: k_len,
            })
        } else {
            None
        };
        let head = match r.u8("head")? {
            0 => None,
            1 => {
                let sf = sf
                    .as_ref()
                    .ok_or_else(|| Error::Format("ESF head without SF layer".into()))?;
                let width = sf.num_geometries() * sf.num_directions();
                Some(Head::Esf(EsfHead {
                    combine: Affine {
                        w: Param::zeros(sf.num_bins(), sf.num_bins() * width),
                        b: Param::zeros(1, sf.num_bins()),
                    },
                }))
            }
            2 => {
                let sf = sf
                    .as_ref()
                    .ok_or_else(|| Error::Format("WTSF head without SF layer".into()))?;
                let f = r.usize("WTSF dims")?;
                let scope = PoolScope::from_tag(r.u8("WTSF dims")?)?;
                Some(Head::Wtsf(WtsfHead {
                    conv: Conv1xD::new(Param::zeros(f, sf.num_directions()), Param::zeros(1, f))?,
                    scope,
                }))
            }
            t => return Err(Error::Format(format!("unknown head tag {t}"))),
        };
        let lstm = (0..layers)
            .map(|l| {
                let i = if l == 0 { input } else { hidden };
                Lstm::new(
                    Affine {
                        w: Param::zeros(4 * hidden, i),
                        b: Param::zeros(1, 4 * hidden),
                    },
                    Param::zeros(4 * hidden, hidden),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let mut model = Model {
            arch,
            stft,
            mean_decay,
            stats,
            sf,
            head,
            fe,
            classifier: ClassifierStack {
                layers: lstm,
                output: Affine {
                    w: Param::zeros(classes, hidden),
                    b: Param::zeros(1, classes),
                },
            },
        };
        model.check_consistency()?;
        let total = u64::from_le_bytes(r.take("parameter count")?) as usize;
        let expected = model.num_params();
        if total != expected {
            return Err(Error::Format(format!(
                "checkpoint declares {total} parameters, architecture needs {expected}"
            )));
        }
        if r.0.len() != 4 * total {
            return Err(Error::Format(format!(
                "parameter block is {} bytes, expected {}",
                r.0.len(),
                4 * total
            )));
        }
        for (_, p) in model.params_mut() {
            for v in p.value.iter_mut() {
                *v = f32::from_le_bytes(r.take("parameters")?) as f64;
            }
        }
        Ok(model)
    }

    fn check_consistency(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Format(msg));
        let k = self.stft.num_bins();
        let needs = (
            self.stats.is_some(),
            self.fe.is_some(),
            self.sf.is_some(),
            self.head.is_some(),
        );
        let expected = match self.arch {
            Architecture::LfbeBaseline => (false, false, false, false),
            Architecture::SingleDft => (true, true, false, false),
            Architecture::Esf | Architecture::Wtsf => (true, true, true, true),
        };
        if needs != expected {
            return bad(format!("component set does not match architecture {}", self.arch));
        }
        match (&self.head, self.arch) {
            (Some(Head::Esf(_)), Architecture::Esf) | (Some(Head::Wtsf(_)), Architecture::Wtsf) | (None, _) => {}
            _ => return bad(format!("head does not match architecture {}", self.arch)),
        }
        if let Some(s) = &self.stats {
            if s.dims() != 2 * k {
                return bad(format!("stats dims {} for K = {k}", s.dims()));
            }
        }
        if let Some(fe) = &self.fe {
            if fe.mel.input_dim() != k || fe.output_dim() != self.classifier.input_dim() {
                return bad("FE dims do not match the feature config or classifier".into());
            }
        }
        if let Some(sf) = &self.sf {
            if sf.num_bins() != k {
                return bad(format!("SF layer has {} bins, config has {k}", sf.num_bins()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mcmodel::ClassifierConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn baseline_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = Model::lfbe_baseline(ClassifierConfig::default(), &mut rng).unwrap();
        let a = m.to_bytes();
        let back = Model::from_bytes(&a).unwrap();
        assert_eq!(back.to_bytes(), a);
        assert_eq!(back.architecture(), Architecture::LfbeBaseline);
        assert!(Model::from_bytes(&a[..a.len() - 3]).is_err());
        let mut bumped = a.clone();
        bumped[4] = 9;
        let msg = Model::from_bytes(&bumped).unwrap_err().to_string();
        assert!(msg.contains("version 9"), "{msg}");
    }
}
