//! Binary weight files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "MELW" | version u32 | layer count u32
//! per layer: name len u16 | name (UTF-8)
//!            weight: rank u8 | dims u32 * rank | f32 * prod(dims)
//!            bias:   rank u8 | dims u32 * rank | f32 * prod(dims)
//! trailer: u64 byte length of everything before it
//! ```
//!
//! The network configuration travels in a JSON sidecar next to the weights
//! (`<file>.config.json`).

use std::path::{Path, PathBuf};

use super::{LayerParams, NetworkConfig, NnError, ParameterSet, Tensor};

pub const MAGIC: &[u8; 4] = b"MELW";
pub const FORMAT_VERSION: u32 = 1;

pub fn encode_weights(params: &ParameterSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + params.num_params() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(params.layers.len() as u32).to_le_bytes());
    for layer in &params.layers {
        out.extend_from_slice(&(layer.name.len() as u16).to_le_bytes());
        out.extend_from_slice(layer.name.as_bytes());
        for t in [&layer.weight, &layer.bias] {
            out.push(t.shape.len() as u8);
            for &d in &t.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let len = out.len() as u64;
    out.extend_from_slice(&len.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NnError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or(NnError::TruncatedTensor)?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, NnError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, NnError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, NnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn tensor(&mut self) -> Result<Tensor, NnError> {
        let rank = self.u8()? as usize;
        let shape = (0..rank).map(|_| self.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or(NnError::TruncatedTensor)?;
        let bytes = self.take(n.checked_mul(4).ok_or(NnError::TruncatedTensor)?)?;
        let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(Tensor { shape, data })
    }
}

pub fn decode_weights(bytes: &[u8]) -> Result<ParameterSet, NnError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(NnError::BadMagic);
    }
    let mut r = Reader { buf: bytes, pos: 4 };
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(NnError::VersionMismatch { found: version, supported: FORMAT_VERSION });
    }
    let count = r.u32()? as usize;
    let mut layers = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec()).map_err(|_| NnError::Corrupt("layer name is not UTF-8".into()))?;
        let weight = r.tensor()?;
        let bias = r.tensor()?;
        layers.push(LayerParams { name, weight, bias });
    }
    let body = r.pos as u64;
    let trailer = u64::from_le_bytes(r.take(8)?.try_into().unwrap());
    if trailer != body {
        return Err(NnError::TruncatedTensor);
    }
    if r.pos != bytes.len() {
        return Err(NnError::Corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(ParameterSet { layers })
}

pub fn config_sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".config.json");
    PathBuf::from(s)
}

/// Writes the weight file and its configuration sidecar.
pub fn save_weights(params: &ParameterSet, config: &NetworkConfig, path: &Path) -> Result<(), NnError> {
    params.check_against(config)?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, encode_weights(params))?;
    std::fs::write(config_sidecar(path), serde_json::to_string_pretty(config).expect("config serializes"))?;
    Ok(())
}

/// Reads weights against a known configuration, verifying every shape.
pub fn load_weights_with(path: &Path, config: &NetworkConfig) -> Result<ParameterSet, NnError> {
    let params = decode_weights(&std::fs::read(path)?)?;
    params.check_against(config)?;
    Ok(params)
}

/// Reads weights together with the configuration stored in the sidecar.
pub fn load_weights(path: &Path) -> Result<(ParameterSet, NetworkConfig), NnError> {
    let text = std::fs::read_to_string(config_sidecar(path))?;
    let config: NetworkConfig = serde_json::from_str(&text).map_err(|e| NnError::Corrupt(e.to_string()))?;
    let params = load_weights_with(path, &config)?;
    Ok((params, config))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{build_network, compact_config};

    fn bits(p: &ParameterSet) -> Vec<u32> {
        p.tensors().flat_map(|t| t.data.iter().map(|v| v.to_bits())).collect()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = compact_config([3, 16, 16], &[4, 8], 6);
        let mut params = build_network(&cfg, 77).unwrap();
        params.layers[0].weight.data[0] = -0.0;
        params.layers[1].bias.data[0] = f32::MIN_POSITIVE / 2.0;
        let path = dir.path().join("m.melw");
        save_weights(&params, &cfg, &path).unwrap();
        let (back, back_cfg) = load_weights(&path).unwrap();
        assert_eq!(bits(&back), bits(&params));
        assert_eq!(back_cfg, cfg);
    }

    #[test]
    fn header_layout() {
        let cfg = compact_config([1, 4, 4], &[2], 0);
        let params = build_network(&cfg, 1).unwrap();
        let b = encode_weights(&params);
        assert_eq!(&b[..4], b"MELW");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 2);
        assert_eq!(u16::from_le_bytes(b[12..14].try_into().unwrap()), 5);
        assert_eq!(&b[14..19], b"conv0");
        assert_eq!(b[19], 4);
        let trailer = u64::from_le_bytes(b[b.len() - 8..].try_into().unwrap());
        assert_eq!(trailer as usize, b.len() - 8);
    }

    #[test]
    fn errors() {
        let cfg = compact_config([1, 4, 4], &[2], 0);
        let params = build_network(&cfg, 1).unwrap();
        let good = encode_weights(&params);
        assert!(matches!(decode_weights(b"NOPE\x01\0\0\0"), Err(NnError::BadMagic)));
        let mut v2 = good.clone();
        v2[4] = 2;
        assert!(matches!(decode_weights(&v2), Err(NnError::VersionMismatch { found: 2, .. })));
        for cut in [good.len() - 1, good.len() - 9, 30] {
            assert!(matches!(decode_weights(&good[..cut]), Err(NnError::TruncatedTensor)), "cut {cut}");
        }
        let other = compact_config([1, 4, 4], &[2, 2], 0);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.melw");
        save_weights(&params, &cfg, &path).unwrap();
        assert!(matches!(load_weights_with(&path, &other), Err(NnError::ConfigMismatch(_))));
    }
}
