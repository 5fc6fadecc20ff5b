//! Parameter storage, initialization and the `GAE1` model file.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::basis::NUM_BASES;
use crate::io::{write_atomic, Reader};
use crate::{Error, Result};

/// Width of the per-member directional stage of the encoder.
pub const DIR_WIDTH: usize = 64;
/// Width of the shared hidden layers (encoder FC and decoder directional stage).
pub const HIDDEN: usize = 256;

const MAGIC: &[u8; 4] = b"GAE1";
const VERSION: u32 = 1;

/// Dense layer `y = W x + b`, `W` row-major `rows × cols`, offsets into the
/// parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dense {
    pub w: usize,
    pub b: usize,
    pub rows: usize,
    pub cols: usize,
}

/// Batch-norm layer: `gamma`/`beta` index the parameters, `mean`/`var` the
/// running-statistics buffers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Norm {
    pub gamma: usize,
    pub beta: usize,
    pub mean: usize,
    pub var: usize,
    pub width: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Store {
    Param,
    Buffer,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Block {
    name: String,
    store: Store,
    offset: usize,
    len: usize,
}

/// Offsets of every tensor for a given `(d, v)`; blocks are listed in file order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub attr_dim: usize,
    pub latent_dim: usize,
    pub enc_dir: [Dense; NUM_BASES],
    pub enc_fc1: Dense,
    pub bn1: Norm,
    pub enc_fc2: Dense,
    pub bn2: Norm,
    pub dec_dir: [Dense; NUM_BASES],
    pub bn3: Norm,
    pub dec_out: Dense,
    pub num_params: usize,
    pub num_buffers: usize,
    blocks: Vec<Block>,
}

struct Builder {
    blocks: Vec<Block>,
    params: usize,
    buffers: usize,
}

impl Builder {
    fn push(&mut self, name: String, store: Store, len: usize) -> usize {
        let counter = match store {
            Store::Param => &mut self.params,
            Store::Buffer => &mut self.buffers,
        };
        let offset = *counter;
        *counter += len;
        self.blocks.push(Block {
            name,
            store,
            offset,
            len,
        });
        offset
    }

    fn dense(&mut self, name: &str, rows: usize, cols: usize) -> Dense {
        let w = self.push(format!("{name}.weight"), Store::Param, rows * cols);
        let b = self.push(format!("{name}.bias"), Store::Param, rows);
        Dense { w, b, rows, cols }
    }

    fn norm(&mut self, name: &str, width: usize) -> Norm {
        Norm {
            gamma: self.push(format!("{name}.gamma"), Store::Param, width),
            beta: self.push(format!("{name}.beta"), Store::Param, width),
            mean: self.push(format!("{name}.running_mean"), Store::Buffer, width),
            var: self.push(format!("{name}.running_var"), Store::Buffer, width),
            width,
        }
    }
}

impl Layout {
    pub fn new(attr_dim: usize, latent_dim: usize) -> Self {
        let mut b = Builder {
            blocks: Vec::new(),
            params: 0,
            buffers: 0,
        };
        let enc_dir = std::array::from_fn(|k| b.dense(&format!("enc_dir{k}"), DIR_WIDTH, attr_dim));
        let enc_fc1 = b.dense("enc_fc1", HIDDEN, DIR_WIDTH);
        let bn1 = b.norm("enc_bn1", HIDDEN);
        let enc_fc2 = b.dense("enc_fc2", latent_dim, HIDDEN);
        let bn2 = b.norm("enc_bn2", latent_dim);
        let dec_dir = std::array::from_fn(|k| b.dense(&format!("dec_dir{k}"), HIDDEN, latent_dim));
        let bn3 = b.norm("dec_bn", HIDDEN);
        let dec_out = b.dense("dec_out", 3 + attr_dim, HIDDEN);
        Layout {
            attr_dim,
            latent_dim,
            enc_dir,
            enc_fc1,
            bn1,
            enc_fc2,
            bn2,
            dec_dir,
            bn3,
            dec_out,
            num_params: b.params,
            num_buffers: b.buffers,
            blocks: b.blocks,
        }
    }

    /// Names and parameter ranges of the trainable tensors, in file order.
    pub fn param_blocks(&self) -> Vec<(String, std::ops::Range<usize>)> {
        self.blocks
            .iter()
            .filter(|b| b.store == Store::Param)
            .map(|b| (b.name.clone(), b.offset..b.offset + b.len))
            .collect()
    }

    fn dense_layers(&self) -> impl Iterator<Item = &Dense> {
        self.enc_dir
            .iter()
            .chain([&self.enc_fc1, &self.enc_fc2])
            .chain(self.dec_dir.iter())
            .chain([&self.dec_out])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderModel {
    pub radius: f64,
    pub seed: u64,
    layout: Layout,
    pub(crate) params: Vec<f64>,
    pub(crate) buffers: Vec<f64>,
}

/// Rounds to the nearest `f32` so the value survives the model file unchanged.
#[inline]
pub(crate) fn quantize(x: f64) -> f64 {
    x as f32 as f64
}

impl AutoencoderModel {
    /// Fresh model: Glorot-uniform weights, zero biases, identity batch norms.
    pub fn new(attr_dim: usize, latent_dim: usize, radius: f64, seed: u64) -> Result<Self> {
        if attr_dim == 0 {
            return Err(Error::invalid("attribute dimension must be at least 1"));
        }
        if latent_dim == 0 {
            return Err(Error::invalid("latent dimension must be at least 1"));
        }
        if !(radius > 0.0 && radius <= 1.0) {
            return Err(Error::invalid(format!("radius {radius} outside (0,1]")));
        }
        let layout = Layout::new(attr_dim, latent_dim);
        let mut params = vec![0.0; layout.num_params];
        let mut buffers = vec![0.0; layout.num_buffers];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in layout.dense_layers() {
            let limit = (6.0 / (layer.rows + layer.cols) as f64).sqrt();
            for w in &mut params[layer.w..layer.w + layer.rows * layer.cols] {
                *w = quantize(rng.random_range(-limit..limit));
            }
        }
        for n in [&layout.bn1, &layout.bn2, &layout.bn3] {
            params[n.gamma..n.gamma + n.width].fill(1.0);
            buffers[n.var..n.var + n.width].fill(1.0);
        }
        Ok(AutoencoderModel {
            radius,
            seed,
            layout,
            params,
            buffers,
        })
    }

    pub fn attr_dim(&self) -> usize {
        self.layout.attr_dim
    }

    pub fn latent_dim(&self) -> usize {
        self.layout.latent_dim
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Running batch-norm statistics.
    pub fn buffers(&self) -> &[f64] {
        &self.buffers
    }

    pub fn buffers_mut(&mut self) -> &mut [f64] {
        &mut self.buffers
    }

    pub(crate) fn quantize_all(&mut self) {
        self.params.iter_mut().for_each(|p| *p = quantize(*p));
        self.buffers.iter_mut().for_each(|p| *p = quantize(*p));
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().chain(&self.buffers).all(|v| v.is_finite())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + 4 * (self.params.len() + self.buffers.len()) + 4 * self.layout.blocks.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.attr_dim() as u32).to_le_bytes());
        out.extend_from_slice(&(self.latent_dim() as u32).to_le_bytes());
        out.extend_from_slice(&self.radius.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        for block in &self.layout.blocks {
            let src = match block.store {
                Store::Param => &self.params,
                Store::Buffer => &self.buffers,
            };
            out.extend_from_slice(&(block.len as u32).to_le_bytes());
            for &v in &src[block.offset..block.offset + block.len] {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader::new(bytes, path);
        let magic = r.bytes(4)?;
        if magic != MAGIC {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                location: "byte 0".into(),
                message: format!("bad magic {:?}, expected GAE1", String::from_utf8_lossy(magic)),
            });
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(r.fail(format!("unsupported model version {version}")));
        }
        let d = r.u32()? as usize;
        let v = r.u32()? as usize;
        if d == 0 || v == 0 || d > 1 << 16 || v > 1 << 16 {
            return Err(r.fail(format!("implausible dimensions d={d} v={v}")));
        }
        let radius = r.f64()?;
        if !(radius > 0.0 && radius <= 1.0) {
            return Err(r.fail(format!("radius {radius} outside (0,1]")));
        }
        let seed = r.u64()?;
        let layout = Layout::new(d, v);
        let mut params = vec![0.0; layout.num_params];
        let mut buffers = vec![0.0; layout.num_buffers];
        for block in &layout.blocks {
            let len = r.u32()? as usize;
            if len != block.len {
                return Err(r.fail(format!("block {} has {len} values, expected {}", block.name, block.len)));
            }
            let dst = match block.store {
                Store::Param => &mut params,
                Store::Buffer => &mut buffers,
            };
            for slot in &mut dst[block.offset..block.offset + len] {
                let x = r.f32()?;
                if !x.is_finite() {
                    return Err(r.fail(format!("non-finite value in {}", block.name)));
                }
                *slot = x as f64;
            }
        }
        if r.remaining() != 0 {
            return Err(r.fail(format!("{} trailing bytes", r.remaining())));
        }
        for n in [&layout.bn1, &layout.bn2, &layout.bn3] {
            if buffers[n.var..n.var + n.width].iter().any(|&x| x < 0.0) {
                return Err(Error::Format("negative running variance".into()));
            }
        }
        Ok(AutoencoderModel {
            radius,
            seed,
            layout,
            params,
            buffers,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    /// SHA-256 of the serialized model.
    pub fn digest(&self) -> [u8; 32] {
        Sha256::digest(self.to_bytes()).into()
    }

    pub fn digest_hex(&self) -> String {
        hex::encode(self.digest())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_counts() {
        let l = Layout::new(2, 5);
        let expect = 6 * (64 * 2 + 64)
            + (256 * 64 + 256)
            + 2 * 256
            + (5 * 256 + 5)
            + 2 * 5
            + 6 * (256 * 5 + 256)
            + 2 * 256
            + (5 * 256 + 5);
        assert_eq!(l.num_params, expect);
        assert_eq!(l.num_buffers, 2 * (256 + 5 + 256));
        let blocks = l.param_blocks();
        assert_eq!(blocks.first().unwrap().0, "enc_dir0.weight");
        assert_eq!(blocks.last().unwrap().1.end, l.num_params);
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = AutoencoderModel::new(1, 4, 0.1, 3).unwrap();
        let b = AutoencoderModel::new(1, 4, 0.1, 3).unwrap();
        let c = AutoencoderModel::new(1, 4, 0.1, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.params, c.params);
        let fc1 = a.layout.enc_fc1;
        let lim = (6.0f64 / (256.0 + 64.0)).sqrt();
        assert!(a.params[fc1.w..fc1.w + 256 * 64].iter().all(|w| w.abs() <= lim));
        assert!(a.params[fc1.b..fc1.b + 256].iter().all(|&w| w == 0.0));
        assert!(AutoencoderModel::new(0, 4, 0.1, 0).is_err());
        assert!(AutoencoderModel::new(1, 4, 0.0, 0).is_err());
    }

    #[test]
    fn bytes_round_trip_and_rejects_garbage() {
        let m = AutoencoderModel::new(3, 7, 0.05, 9).unwrap();
        let bytes = m.to_bytes();
        let p = Path::new("m.gae");
        let back = AutoencoderModel::from_bytes(&bytes, p).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_bytes(), bytes);

        let mut wrong = bytes.clone();
        wrong[..4].copy_from_slice(b"PDS1");
        assert!(matches!(AutoencoderModel::from_bytes(&wrong, p), Err(Error::Parse { .. })));
        assert!(AutoencoderModel::from_bytes(&bytes[..bytes.len() - 3], p).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(AutoencoderModel::from_bytes(&extra, p).is_err());
    }
}
