//! Versioned binary checkpoints.
//!
//! Layout (little-endian):
//! ```text
//! "ACLBCKPT" u32 version
//! u32 n_meta   { str key, str value } * n_meta
//! u32 n_tensor { str name, u32 rank, u64 dims[rank], f64 values[prod(dims)] } * n_tensor
//! ```
//! Strings are `u32 length` followed by UTF-8 bytes. Tensor names are
//! `<net>/<layer>/weight` or `<net>/<layer>/bias`; layer activations are
//! stored as metadata under `activation:<net>/<layer>`.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use super::{Activation, Dense, Mlp, NnError, ParamSet};

const MAGIC: &[u8; 8] = b"ACLBCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub metadata: BTreeMap<String, String>,
    pub params: ParamSet,
}

impl Checkpoint {
    pub fn new(params: ParamSet) -> Self {
        Self { metadata: BTreeMap::new(), params }
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<(), NnError> {
        let mut meta = self.metadata.clone();
        let mut tensors: Vec<(String, Vec<usize>, &[f64])> = Vec::new();
        for (name, net) in self.params.iter() {
            for (i, layer) in net.layers.iter().enumerate() {
                meta.insert(format!("activation:{name}/{i}"), layer.activation.name().to_string());
                tensors.push((
                    format!("{name}/{i}/weight"),
                    layer.weight.shape().to_vec(),
                    layer.weight.as_slice().expect("standard layout"),
                ));
                tensors.push((
                    format!("{name}/{i}/bias"),
                    vec![layer.bias.len()],
                    layer.bias.as_slice().expect("standard layout"),
                ));
            }
        }
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(meta.len() as u32).to_le_bytes())?;
        for (k, v) in &meta {
            write_str(w, k)?;
            write_str(w, v)?;
        }
        w.write_all(&(tensors.len() as u32).to_le_bytes())?;
        for (name, dims, values) in tensors {
            write_str(w, &name)?;
            w.write_all(&(dims.len() as u32).to_le_bytes())?;
            for d in dims {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for v in values {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self, NnError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(NnError::Checkpoint("bad magic".into()));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(NnError::Checkpoint(format!("unsupported version {version}")));
        }
        let mut metadata = BTreeMap::new();
        for _ in 0..read_u32(r)? {
            let k = read_str(r)?;
            let v = read_str(r)?;
            metadata.insert(k, v);
        }
        // net -> layer -> (weight, bias)
        let mut layers: BTreeMap<String, BTreeMap<usize, (Option<Array2<f64>>, Option<Array1<f64>>)>> =
            BTreeMap::new();
        for _ in 0..read_u32(r)? {
            let name = read_str(r)?;
            let rank = read_u32(r)? as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(read_u64(r)? as usize);
            }
            let count: usize = dims.iter().product();
            let mut values = Vec::with_capacity(count);
            for _ in 0..count {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                values.push(f64::from_le_bytes(b));
            }
            let (net, layer, kind) = split_tensor_name(&name)?;
            let slot = layers.entry(net).or_default().entry(layer).or_default();
            match (kind.as_str(), rank) {
                ("weight", 2) => {
                    slot.0 = Some(
                        Array2::from_shape_vec((dims[0], dims[1]), values)
                            .map_err(|e| NnError::Checkpoint(e.to_string()))?,
                    )
                }
                ("bias", 1) => slot.1 = Some(Array1::from(values)),
                _ => return Err(NnError::Checkpoint(format!("unexpected tensor `{name}`"))),
            }
        }
        let mut params = ParamSet::new();
        for (net, by_layer) in layers {
            let mut dense = Vec::new();
            for (i, (idx, (w, b))) in by_layer.into_iter().enumerate() {
                if i != idx {
                    return Err(NnError::Checkpoint(format!("{net}: missing layer {i}")));
                }
                let key = format!("activation:{net}/{idx}");
                let activation = metadata
                    .remove(&key)
                    .as_deref()
                    .and_then(Activation::parse)
                    .ok_or_else(|| NnError::Checkpoint(format!("missing or bad `{key}`")))?;
                let weight = w.ok_or_else(|| NnError::Checkpoint(format!("{net}/{idx}: no weight")))?;
                let bias = b.ok_or_else(|| NnError::Checkpoint(format!("{net}/{idx}: no bias")))?;
                dense.push(Dense { weight, bias, activation });
            }
            params.insert(net, Mlp::from_layers(dense)?);
        }
        Ok(Self { metadata, params })
    }

    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        let bytes = std::fs::read(path)?;
        Self::read_from(&mut bytes.as_slice())
    }
}

fn split_tensor_name(name: &str) -> Result<(String, usize, String), NnError> {
    let bad = || NnError::Checkpoint(format!("bad tensor name `{name}`"));
    let (rest, kind) = name.rsplit_once('/').ok_or_else(bad)?;
    let (net, layer) = rest.rsplit_once('/').ok_or_else(bad)?;
    let layer = layer.parse().map_err(|_| bad())?;
    Ok((net.to_string(), layer, kind.to_string()))
}

fn write_str<W: Write>(w: &mut W, s: &str) -> std::io::Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, NnError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, NnError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_str<R: Read>(r: &mut R) -> Result<String, NnError> {
    let len = read_u32(r)? as usize;
    let mut b = vec![0u8; len];
    r.read_exact(&mut b)?;
    String::from_utf8(b).map_err(|e| NnError::Checkpoint(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from;

    #[test]
    fn round_trip_is_exact() {
        let mut rng = rng_from(8);
        let mut params = ParamSet::new();
        params.insert("phi", Mlp::orthogonal(&[5, 7, 3], Activation::Tanh, Activation::Tanh, 2f64.sqrt(), 1.0, &mut rng));
        params.insert("dynamics/actor", Mlp::orthogonal(&[3, 2], Activation::Tanh, Activation::Identity, 1.0, 0.01, &mut rng));
        let mut ck = Checkpoint::new(params);
        ck.metadata.insert("coupling".into(), "decoupled".into());
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        let back = Checkpoint::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back, ck);
    }

    #[test]
    fn corrupt_magic_is_rejected() {
        let mut buf = Vec::new();
        Checkpoint::default().write_to(&mut buf).unwrap();
        buf[0] = b'X';
        assert!(Checkpoint::read_from(&mut buf.as_slice()).is_err());
    }
}
