//! Versioned little-endian checkpoint files. See `docs/checkpoint.md` for
//! the byte layout.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::net::{Arch, Network, NetworkConfig};
use crate::optim::{OptimError, OptimState};

pub const MAGIC: [u8; 4] = *b"ECAM";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub iteration: u64,
    pub network: Network<f32>,
    pub state: Option<OptimState<f32>>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn entry(&mut self, name: &str, dims: &[usize], values: &[f32]) {
        self.u32(name.len() as u32);
        self.0.extend_from_slice(name.as_bytes());
        self.u32(dims.len() as u32);
        for &d in dims {
            self.u32(d as u32);
        }
        for v in values {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], OptimError> {
        let end = self.pos.checked_add(n).ok_or(OptimError::TruncatedFile)?;
        let out = self.buf.get(self.pos..end).ok_or(OptimError::TruncatedFile)?;
        self.pos = end;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8, OptimError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, OptimError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, OptimError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, OptimError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn entry(&mut self) -> Result<(String, Vec<usize>, Vec<f32>), OptimError> {
        let len = self.u32()? as usize;
        let name = String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| OptimError::ShapeMismatch("parameter name is not UTF-8".into()))?;
        let rank = self.u32()? as usize;
        if rank > 8 {
            return Err(OptimError::ShapeMismatch(format!("`{name}` has rank {rank}")));
        }
        let dims = (0..rank)
            .map(|_| self.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let count: usize = dims.iter().product();
        let raw = self.take(count.checked_mul(4).ok_or(OptimError::TruncatedFile)?)?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok((name, dims, values))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(&MAGIC);
        w.u32(FORMAT_VERSION);
        w.u64(self.iteration);
        let cfg = self.network.config();
        w.u8(match cfg.arch {
            Arch::Proposed => 0,
            Arch::Baseline => 1,
        });
        w.u32(cfg.scales as u32);
        w.u32(cfg.classes as u32);
        w.u32(cfg.input_channels as u32);
        w.u64(cfg.seed);
        w.u32(cfg.filters_per_scale.len() as u32);
        for &f in &cfg.filters_per_scale {
            w.u32(f as u32);
        }
        let params = self.network.params();
        w.u32(params.len() as u32);
        for p in &params {
            w.entry(&p.name, &p.dims, p.values);
        }
        match &self.state {
            None => w.u8(0),
            Some(state) => {
                w.u8(1);
                w.f64(state.learning_rate);
                w.f64(state.momentum);
                // velocity entries in parameter order, dims copied from the parameter
                w.u32(params.len() as u32);
                for p in &params {
                    let v = state.velocity(&p.name).unwrap_or(&[]);
                    w.entry(&p.name, &p.dims, v);
                }
            }
        }
        w.0
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self, OptimError> {
        if buf.len() < 4 {
            return Err(if MAGIC.starts_with(buf) {
                OptimError::TruncatedFile
            } else {
                OptimError::BadMagic
            });
        }
        if buf[..4] != MAGIC {
            return Err(OptimError::BadMagic);
        }
        let mut r = Reader { buf, pos: 4 };
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(OptimError::VersionUnsupported(version));
        }
        let iteration = r.u64()?;
        let arch = match r.u8()? {
            0 => Arch::Proposed,
            1 => Arch::Baseline,
            other => return Err(OptimError::ShapeMismatch(format!("unknown arch tag {other}"))),
        };
        let scales = r.u32()? as usize;
        let classes = r.u32()? as usize;
        let input_channels = r.u32()? as usize;
        let seed = r.u64()?;
        let nf = r.u32()? as usize;
        if nf > 64 {
            return Err(OptimError::ShapeMismatch(format!("{nf} filter widths")));
        }
        let filters_per_scale = (0..nf)
            .map(|_| r.u32().map(|v| v as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let config = NetworkConfig {
            scales,
            classes,
            input_channels,
            filters_per_scale,
            arch,
            seed,
        };
        let mut network = Network::<f32>::build(config)?;

        let count = r.u32()? as usize;
        let expected = network.params().len();
        if count != expected {
            return Err(OptimError::ShapeMismatch(format!(
                "{count} parameter entries, config implies {expected}"
            )));
        }
        let mut entries = BTreeMap::new();
        for _ in 0..count {
            let (name, dims, values) = r.entry()?;
            entries.insert(name, (dims, values));
        }
        for p in network.params_mut() {
            let (dims, values) = entries
                .remove(&p.name)
                .ok_or_else(|| OptimError::ShapeMismatch(format!("missing `{}`", p.name)))?;
            if dims != p.dims {
                return Err(OptimError::ShapeMismatch(format!(
                    "`{}` has dims {dims:?}, expected {:?}",
                    p.name, p.dims
                )));
            }
            p.values.copy_from_slice(&values);
        }

        let state = match r.u8()? {
            0 => None,
            1 => {
                let learning_rate = r.f64()?;
                let momentum = r.f64()?;
                let n = r.u32()? as usize;
                let mut velocity = BTreeMap::new();
                for _ in 0..n {
                    let (name, _, values) = r.entry()?;
                    velocity.insert(name, values);
                }
                let state = OptimState::from_parts(learning_rate, momentum, velocity);
                if !state.matches(&network) {
                    return Err(OptimError::ShapeMismatch("velocity entries".into()));
                }
                Some(state)
            }
            other => return Err(OptimError::ShapeMismatch(format!("velocity flag {other}"))),
        };
        if r.pos != buf.len() {
            return Err(OptimError::TrailingBytes(buf.len() - r.pos));
        }
        Ok(Self {
            iteration,
            network,
            state,
        })
    }
}

pub fn save(
    net: &Network<f32>,
    state: Option<&OptimState<f32>>,
    iteration: u64,
    path: impl AsRef<Path>,
) -> Result<(), OptimError> {
    let ckpt = Checkpoint {
        iteration,
        network: net.clone(),
        state: state.cloned(),
    };
    fs::write(path, ckpt.to_bytes())?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint, OptimError> {
    Checkpoint::from_bytes(&fs::read(path)?)
}
