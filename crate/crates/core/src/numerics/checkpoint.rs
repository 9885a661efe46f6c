//! Flat binary parameter archive.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   b"TWINCKPT"
//! version u32 (= 1)
//! hash    [u8; 32]   sha-256 of the config text
//! config  u32 length + utf-8 bytes
//! count   u64
//! count × { name: u32 length + utf-8, rows: u64, cols: u64, rows*cols × f64 }
//! ```

use std::io::{Read, Write};

use sha2::{Digest, Sha256};

use super::params::ParamStore;
use super::tensor::Tensor2;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const MAGIC: &[u8; 8] = b"TWINCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_hash: [u8; 32],
    pub config_text: String,
    pub tensors: Vec<(String, Tensor2<f64>)>,
}

pub fn config_hash(text: &str) -> [u8; 32] {
    Sha256::digest(text.as_bytes()).into()
}

impl Checkpoint {
    pub fn from_store<T: Scalar>(store: &ParamStore<T>, config_text: &str) -> Self {
        let tensors = store
            .iter()
            .map(|(_, p)| {
                let data = p.tensor.data().iter().map(|v| v.as_f64()).collect();
                let t = Tensor2::from_vec(p.tensor.rows(), p.tensor.cols(), data)
                    .expect("shape preserved");
                (p.name.clone(), t)
            })
            .collect();
        Self {
            config_hash: config_hash(config_text),
            config_text: config_text.to_string(),
            tensors,
        }
    }

    /// Loads the tensors into `store`, converting precision as needed.
    pub fn restore<T: Scalar>(&self, store: &mut ParamStore<T>) -> Result<()> {
        let cast: Vec<(String, Tensor2<T>)> = self
            .tensors
            .iter()
            .map(|(n, t)| (n.clone(), t.cast()))
            .collect();
        store.load_values(&cast)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&self.config_hash)?;
        write_str(&mut w, &self.config_text)?;
        w.write_all(&(self.tensors.len() as u64).to_le_bytes())?;
        for (name, t) in &self.tensors {
            write_str(&mut w, name)?;
            w.write_all(&(t.rows() as u64).to_le_bytes())?;
            w.write_all(&(t.cols() as u64).to_le_bytes())?;
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)
            .expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let mut config_hash = [0u8; 32];
        r.read_exact(&mut config_hash)?;
        let config_text = read_str(&mut r)?;
        if self::config_hash(&config_text) != config_hash {
            return Err(Error::Checkpoint(
                "config hash does not match config text".into(),
            ));
        }
        let count = read_u64(&mut r)? as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name = read_str(&mut r)?;
            let rows = read_u64(&mut r)? as usize;
            let cols = read_u64(&mut r)? as usize;
            let n = rows
                .checked_mul(cols)
                .ok_or_else(|| Error::Checkpoint(format!("{name}: shape overflow")))?;
            let mut data = Vec::with_capacity(n.min(1 << 24));
            let mut b = [0u8; 8];
            for _ in 0..n {
                r.read_exact(&mut b)?;
                data.push(f64::from_le_bytes(b));
            }
            tensors.push((name, Tensor2::from_vec(rows, cols, data)?));
        }
        Ok(Self {
            config_hash,
            config_text,
            tensors,
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let n = read_u32(r)? as usize;
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Checkpoint(e.to_string()))
}
