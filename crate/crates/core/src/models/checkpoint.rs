use std::fs;
use std::io::Write;
use std::path::Path;

use crate::autodiff::{ParamStore, Shape, Tensor};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"MCVAECP1";

/// Parsed checkpoint: a metadata line plus named tensors.
pub struct CheckpointData {
    pub meta: String,
    pub tensors: Vec<(String, Tensor)>,
}

/// Writes a flat key-to-tensor container (little-endian f64 payload with
/// shape headers) plus a text manifest `<path>.manifest` listing names and
/// shapes, first line the metadata string.
pub fn save_checkpoint(path: &Path, meta: &str, store: &ParamStore) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    let meta_bytes = meta.as_bytes();
    buf.extend_from_slice(&(meta_bytes.len() as u32).to_le_bytes());
    buf.extend_from_slice(meta_bytes);
    let names: Vec<&str> = store.names().collect();
    buf.extend_from_slice(&(names.len() as u32).to_le_bytes());
    let mut manifest = String::new();
    manifest.push_str(meta);
    manifest.push('\n');
    for name in names {
        let t = store.value(name);
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        let dims: Vec<u64> = match t.shape {
            Shape::Vector(n) => vec![n as u64],
            Shape::Matrix(r, c) => vec![r as u64, c as u64],
        };
        buf.extend_from_slice(&(dims.len() as u32).to_le_bytes());
        for d in &dims {
            buf.extend_from_slice(&d.to_le_bytes());
        }
        for v in &t.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let shape_str = dims
            .iter()
            .map(u64::to_string)
            .collect::<Vec<_>>()
            .join("x");
        manifest.push_str(&format!("{name} {shape_str}\n"));
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    fs::write(manifest_path(path), manifest)?;
    Ok(())
}

fn manifest_path(path: &Path) -> std::path::PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".manifest");
    std::path::PathBuf::from(p)
}

/// Reads a checkpoint written by [`save_checkpoint`]. Bit-exact: the f64
/// payloads round-trip unchanged.
pub fn load_checkpoint(path: &Path) -> Result<CheckpointData> {
    let bytes = fs::read(path)?;
    let bad = |msg: &str| Error::ShapeMismatch(format!("checkpoint {}: {msg}", path.display()));
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if *pos + n > bytes.len() {
            return Err(bad("truncated"));
        }
        let s = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    if take(&mut pos, 8)? != MAGIC {
        return Err(bad("wrong magic"));
    }
    let meta_len = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
    let meta = String::from_utf8(take(&mut pos, meta_len)?.to_vec())
        .map_err(|_| bad("metadata is not utf-8"))?;
    let count = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(&mut pos, name_len)?.to_vec())
            .map_err(|_| bad("tensor name is not utf-8"))?;
        let ndim = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize);
        }
        let total: usize = dims.iter().product();
        let mut data = Vec::with_capacity(total);
        for _ in 0..total {
            data.push(f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()));
        }
        let tensor = match dims.len() {
            1 => Tensor::vector(data),
            2 => Tensor::matrix(dims[0], dims[1], data),
            _ => return Err(bad("unsupported rank")),
        };
        tensors.push((name, tensor));
    }
    Ok(CheckpointData { meta, tensors })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = std::env::temp_dir().join(format!("ckpt-test-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.ckpt");

        let mut store = ParamStore::new();
        store.insert("theta.w", Tensor::matrix(2, 3, vec![1.5, -0.25, 3e-17, 0.1, 2.0, -9.9]));
        store.insert("phi0.b", Tensor::vector(vec![f64::MIN_POSITIVE, 1.0 / 3.0]));
        save_checkpoint(&path, "kind=test n=2", &store).unwrap();

        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.meta, "kind=test n=2");
        assert_eq!(loaded.tensors.len(), 2);
        for (name, t) in &loaded.tensors {
            assert_eq!(&t.data, &store.value(name).data);
            assert_eq!(t.shape, store.value(name).shape);
        }
        let manifest = fs::read_to_string(manifest_path(&path)).unwrap();
        assert!(manifest.starts_with("kind=test n=2\n"));
        assert!(manifest.contains("theta.w 2x3"));
        fs::remove_dir_all(&dir).unwrap();
    }
}
