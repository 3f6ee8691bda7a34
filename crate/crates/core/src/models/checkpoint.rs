//! Binary checkpoint container.
//!
//! All integers little-endian:
//!
//! ```text
//! magic        4 bytes  "GSCK"
//! version      u32      1
//! sections     u32
//! per section:
//!   role              u8    0 generator, 1 generator_ema, 2 critic
//!   input_dim         i32
//!   hidden_layers     i32
//!   hidden_units      i32
//!   output_dim        i32
//!   hidden_activation u8    0 relu, 1 leaky_relu, 2 tanh
//!   output_activation u8    0 identity, 1 tanh
//!   param_count       u64
//!   params            f64 × param_count
//! ```

use std::path::Path;

use super::{HiddenActivation, NetworkSpec, OutputActivation, ParamVector};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"GSCK";
const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NetworkRole {
    Generator,
    GeneratorEma,
    Critic,
}

impl NetworkRole {
    fn tag(self) -> u8 {
        match self {
            NetworkRole::Generator => 0,
            NetworkRole::GeneratorEma => 1,
            NetworkRole::Critic => 2,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        Ok(match tag {
            0 => NetworkRole::Generator,
            1 => NetworkRole::GeneratorEma,
            2 => NetworkRole::Critic,
            t => return Err(Error::Checkpoint(format!("unknown role tag {t}"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Section {
    pub role: NetworkRole,
    pub spec: NetworkSpec,
    pub params: ParamVector,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub sections: Vec<Section>,
}

impl Checkpoint {
    pub fn push(&mut self, role: NetworkRole, spec: &NetworkSpec, params: &ParamVector) {
        self.sections.push(Section { role, spec: spec.clone(), params: params.clone() });
    }

    pub fn get(&self, role: NetworkRole) -> Option<&Section> {
        self.sections.iter().find(|s| s.role == role)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.sections.len() as u32).to_le_bytes());
        for s in &self.sections {
            out.push(s.role.tag());
            for v in [s.spec.input_dim, s.spec.hidden_layers, s.spec.hidden_units, s.spec.output_dim] {
                out.extend_from_slice(&(v as i32).to_le_bytes());
            }
            out.push(match s.spec.hidden_activation {
                HiddenActivation::Relu => 0,
                HiddenActivation::LeakyRelu => 1,
                HiddenActivation::Tanh => 2,
            });
            out.push(match s.spec.output_activation {
                OutputActivation::Identity => 0,
                OutputActivation::Tanh => 1,
            });
            out.extend_from_slice(&(s.params.len() as u64).to_le_bytes());
            for v in s.params.values() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, at: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let n = r.u32()?;
        let mut sections = Vec::with_capacity(n as usize);
        for _ in 0..n {
            let role = NetworkRole::from_tag(r.u8()?)?;
            let mut dims = [0usize; 4];
            for d in &mut dims {
                let v = r.i32()?;
                *d = usize::try_from(v).map_err(|_| Error::Checkpoint(format!("negative dimension {v}")))?;
            }
            let hidden_activation = match r.u8()? {
                0 => HiddenActivation::Relu,
                1 => HiddenActivation::LeakyRelu,
                2 => HiddenActivation::Tanh,
                t => return Err(Error::Checkpoint(format!("unknown hidden activation tag {t}"))),
            };
            let output_activation = match r.u8()? {
                0 => OutputActivation::Identity,
                1 => OutputActivation::Tanh,
                t => return Err(Error::Checkpoint(format!("unknown output activation tag {t}"))),
            };
            let spec = NetworkSpec {
                input_dim: dims[0],
                hidden_layers: dims[1],
                hidden_units: dims[2],
                output_dim: dims[3],
                hidden_activation,
                output_activation,
            };
            spec.validate().map_err(|e| Error::Checkpoint(e.to_string()))?;
            let count = r.u64()? as usize;
            if count != spec.param_count() {
                return Err(Error::Checkpoint(format!(
                    "{} section declares {count} parameters, architecture needs {}",
                    spec.arch_name(),
                    spec.param_count()
                )));
            }
            let raw = r.take(count.checked_mul(8).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
            let values = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            let params = ParamVector::from_values(&spec, values)?;
            sections.push(Section { role, spec, params });
        }
        if r.at != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.at)));
        }
        Ok(Checkpoint { sections })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Checkpoint::from_bytes(&std::fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.at..end];
                self.at = end;
                Ok(s)
            }
            None => Err(Error::Checkpoint(format!("truncated at byte {}", self.at))),
        }
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
