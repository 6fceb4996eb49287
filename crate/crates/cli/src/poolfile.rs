//! Binary pool files: the 8-byte magic `FXPOOL01`, the header length as a
//! little-endian `u64`, a JSON header, then the pools of every equation in
//! order as little-endian `f64`, row-major.

use std::io::{Read, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sfpe_core::solver::{SamplePool, SeedLineage};

pub const MAGIC: &[u8; 8] = b"FXPOOL01";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoolHeader {
    pub system: String,
    pub m: usize,
    pub d: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub generation: u64,
    pub seed: u64,
    pub lineage: Vec<SeedLineage>,
}

pub fn encode(system: &str, seed: u64, pools: &[SamplePool]) -> Result<Vec<u8>> {
    let first = pools.first().context("no pools to write")?;
    let header = PoolHeader {
        system: system.to_string(),
        m: pools.len(),
        d: first.d(),
        n: first.len(),
        generation: first.generation(),
        seed,
        lineage: pools.iter().map(|p| p.lineage().clone()).collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + json.len() + 8 * pools.len() * first.values().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for p in pools {
        if p.d() != header.d || p.len() != header.n {
            bail!("pools of one file must share d and N");
        }
        for x in p.values() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = std::fs::File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    f.write_all(bytes)?;
    Ok(())
}

pub fn is_pool_file(path: &Path) -> bool {
    let mut magic = [0u8; 8];
    std::fs::File::open(path).and_then(|mut f| f.read_exact(&mut magic)).is_ok() && &magic == MAGIC
}

pub fn read(path: &Path) -> Result<(PoolHeader, Vec<SamplePool>)> {
    let bytes = std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    decode(&bytes).with_context(|| format!("{} is not a valid pool file", path.display()))
}

pub fn decode(bytes: &[u8]) -> Result<(PoolHeader, Vec<SamplePool>)> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        bail!("missing FXPOOL01 magic");
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = 16usize.checked_add(len).filter(|&e| e <= bytes.len()).context("truncated header")?;
    let header: PoolHeader = serde_json::from_slice(&bytes[16..body])?;
    let per_pool = header.n * header.d;
    let expected = header.m.checked_mul(per_pool).and_then(|k| k.checked_mul(8)).context("header sizes overflow")?;
    if bytes.len() - body != expected || header.lineage.len() != header.m {
        bail!("payload holds {} bytes, header announces {expected}", bytes.len() - body);
    }
    let values: Vec<f64> = bytes[body..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let pools = values
        .chunks_exact(per_pool.max(1))
        .take(header.m)
        .zip(&header.lineage)
        .map(|(v, l)| SamplePool::new(header.d, v.to_vec(), header.generation, l.clone()))
        .collect::<sfpe_core::Result<Vec<_>>>()?;
    Ok((header, pools))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let a = SamplePool::new(2, vec![1.0, -2.5, 3.0, f64::MIN_POSITIVE], 7, SeedLineage::root(3)).unwrap();
        let b = SamplePool::new(2, vec![0.0, 0.5, -0.0, 1e300], 7, SeedLineage { master: 3, path: "x".into() }).unwrap();
        let bytes = encode("sys", 3, &[a.clone(), b.clone()]).unwrap();
        let (h, pools) = decode(&bytes).unwrap();
        assert_eq!((h.m, h.d, h.n, h.generation, h.seed), (2, 2, 2, 7, 3));
        assert_eq!(pools, vec![a, b]);
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode(b"FXPOOL02").is_err());
    }
}
