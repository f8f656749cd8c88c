//! Binary weight container.
//!
//! All integers are little-endian `u32`, all floats little-endian IEEE-754
//! `f64`:
//!
//! ```text
//! offset  size  field
//! 0       8     magic "SAFERLPW"
//! 8       4     format version (1)
//! 12      ...   actor network
//! ...     ...   critic network
//! end-8   8     log_std
//!
//! network := activation:u8 (0 = tanh, 1 = identity)
//!            n_layers:u32
//!            n_layers x { inputs:u32 outputs:u32
//!                         weights: outputs*inputs f64, row-major
//!                         bias: outputs f64 }
//! ```
//!
//! The file must end exactly after `log_std`.

use std::fs;
use std::path::Path;

use super::{Dense, Mlp, OutputActivation, PolicyParams};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SAFERLPW";
pub const FORMAT_VERSION: u32 = 1;

/// Layers larger than this are rejected as corrupt rather than allocated.
const MAX_LAYER_WIDTH: u32 = 1 << 16;

pub fn write_to(params: &PolicyParams, out: &mut Vec<u8>) -> Result<()> {
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for net in [&params.actor, &params.critic] {
        out.push(match net.output {
            OutputActivation::Tanh => 0,
            OutputActivation::Identity => 1,
        });
        out.extend_from_slice(&(net.layers.len() as u32).to_le_bytes());
        for l in &net.layers {
            out.extend_from_slice(&(l.inputs as u32).to_le_bytes());
            out.extend_from_slice(&(l.outputs as u32).to_le_bytes());
            for w in l.weights.iter().chain(&l.bias) {
                out.extend_from_slice(&w.to_le_bytes());
            }
        }
    }
    out.extend_from_slice(&params.log_std.to_le_bytes());
    Ok(())
}

/// Write atomically: the target is replaced only once the whole file is on disk.
pub fn save(params: &PolicyParams, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_to(params, &mut buf)?;
    crate::util::write_atomic(path, &buf)
}

pub fn load(path: &Path) -> Result<PolicyParams> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_from(&bytes)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn err(&self, reason: impl Into<String>) -> Error {
        Error::WeightFormat {
            offset: self.pos,
            reason: reason.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.err(format!("truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        let b = self.take(8, what)?;
        Ok(f64::from_le_bytes(b.try_into().unwrap()))
    }

    fn network(&mut self) -> Result<Mlp> {
        let output = match self.u8("activation tag")? {
            0 => OutputActivation::Tanh,
            1 => OutputActivation::Identity,
            t => return Err(self.err(format!("unknown activation tag {t}"))),
        };
        let n = self.u32("layer count")?;
        if n == 0 || n > 64 {
            return Err(self.err(format!("implausible layer count {n}")));
        }
        let mut layers = Vec::with_capacity(n as usize);
        for _ in 0..n {
            let inputs = self.u32("layer inputs")?;
            let outputs = self.u32("layer outputs")?;
            if inputs == 0 || outputs == 0 || inputs > MAX_LAYER_WIDTH || outputs > MAX_LAYER_WIDTH {
                return Err(self.err(format!("implausible layer shape {outputs}x{inputs}")));
            }
            if let Some(prev) = layers.last().map(|l: &Dense| l.outputs) {
                if prev != inputs as usize {
                    return Err(self.err(format!("layer expects {inputs} inputs, previous has {prev} outputs")));
                }
            }
            let (inputs, outputs) = (inputs as usize, outputs as usize);
            let weights = (0..inputs * outputs)
                .map(|_| self.f64("weights"))
                .collect::<Result<Vec<_>>>()?;
            let bias = (0..outputs).map(|_| self.f64("bias")).collect::<Result<Vec<_>>>()?;
            layers.push(Dense {
                inputs,
                outputs,
                weights,
                bias,
            });
        }
        Ok(Mlp { layers, output })
    }
}

pub fn read_from(bytes: &[u8]) -> Result<PolicyParams> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(8, "magic")? != MAGIC {
        c.pos = 0;
        return Err(c.err("bad magic"));
    }
    let version = c.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(c.err(format!("unsupported format version {version}")));
    }
    let actor = c.network()?;
    let critic = c.network()?;
    let log_std = c.f64("log_std")?;
    if c.pos != bytes.len() {
        return Err(c.err(format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    Ok(PolicyParams {
        actor,
        critic,
        log_std,
    })
}
