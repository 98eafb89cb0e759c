//! Checkpoint file layout, little-endian:
//!
//! ```text
//! magic "DFCK" | version u32 (=1) | role u32
//! input_dim u32 | recurrent_hidden u32 | mlp_hidden u32 | policy_outputs u32 | has_value_head u32
//! meta count u32 | meta f64 x count
//! param count N u64 | params f64 x N
//! adam step u64 | first moments f64 x N | second moments f64 x N
//! ```
//!
//! `role` identifies the agent that owns the parameters and `meta` carries
//! role-specific scalars (for observers: objective level and beta).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Adam, NetworkSpec};
use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"DFCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub role: u32,
    pub spec: NetworkSpec,
    pub meta: Vec<f64>,
    pub params: Vec<f64>,
    pub adam: Adam,
}

impl Checkpoint {
    pub fn write<W: Write>(&self, out: W) -> Result<W> {
        let mut w = Writer::new(out);
        w.bytes(MAGIC)?;
        w.u32(VERSION)?;
        w.u32(self.role)?;
        w.u32(self.spec.input_dim as u32)?;
        w.u32(self.spec.recurrent_hidden as u32)?;
        w.u32(self.spec.mlp_hidden as u32)?;
        w.u32(self.spec.policy_outputs as u32)?;
        w.u32(self.spec.has_value_head as u32)?;
        w.u32(self.meta.len() as u32)?;
        w.f64s(&self.meta)?;
        w.u64(self.params.len() as u64)?;
        w.f64s(&self.params)?;
        w.u64(self.adam.t)?;
        w.f64s(&self.adam.first)?;
        w.f64s(&self.adam.second)?;
        w.finish()
    }

    pub fn read<R: Read>(input: R, name: &str) -> Result<Self> {
        let mut r = Reader::new(input, name);
        r.magic(MAGIC)?;
        let version = r.u32()?;
        if version != VERSION {
            return Err(r.fail(format!("unsupported version {version}")));
        }
        let role = r.u32()?;
        let spec = NetworkSpec {
            input_dim: r.u32()? as usize,
            recurrent_hidden: r.u32()? as usize,
            mlp_hidden: r.u32()? as usize,
            policy_outputs: r.u32()? as usize,
            has_value_head: r.u32()? != 0,
        };
        spec.validate().map_err(|e| r.fail(e.to_string()))?;
        let n_meta = r.u32()? as usize;
        let meta = r.f64s(n_meta)?;
        let n = r.u64()? as usize;
        if n != spec.layout().total {
            return Err(r.fail(format!("{n} parameters do not match the network layout")));
        }
        let params = r.f64s(n)?;
        let mut adam = Adam::new(n);
        adam.t = r.u64()?;
        adam.first = r.f64s(n)?;
        adam.second = r.f64s(n)?;
        r.end()?;
        Ok(Self {
            role,
            spec,
            meta,
            params,
            adam,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write(BufWriter::new(File::create(path)?))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|_| Error::MissingArtifact(path.to_path_buf()))?;
        Self::read(BufReader::new(f), &path.display().to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::Network;
    use crate::seed::{SeedTree, Stream};

    #[test]
    fn round_trip_and_header_layout() {
        let spec = NetworkSpec {
            input_dim: 3,
            recurrent_hidden: 4,
            mlp_hidden: 5,
            policy_outputs: 2,
            has_value_head: true,
        };
        let net = Network::new(spec).unwrap();
        let params = net.init_params(&mut SeedTree::new(1).rng(Stream::Init, 0));
        let mut adam = Adam::new(params.len());
        adam.step(&mut params.clone(), &vec![0.1; params.len()], 1e-3).unwrap();
        let ck = Checkpoint {
            role: 2,
            spec,
            meta: vec![3.0, 0.05],
            params,
            adam,
        };
        let bytes = ck.write(Vec::new()).unwrap();
        assert_eq!(&bytes[..4], b"DFCK");
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 3);
        assert_eq!(Checkpoint::read(bytes.as_slice(), "mem").unwrap(), ck);
        assert!(Checkpoint::read(&bytes[..bytes.len() - 1], "mem").is_err());
    }
}
