//! Versioned little-endian binary checkpoints.
//!
//! Layout: magic, format version, resolved config text, model dimensions,
//! every parameter tensor by name, then the optimizer state. Floats are
//! stored as raw bits so a round trip is exact.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::numerics::{Adam, AdamConfig, DenseMatrix, Moments, ParamStore};

const MAGIC: &[u8; 8] = b"UMGADCKP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub optimizer: Option<Adam>,
    pub epochs_done: u64,
    /// Resolved configuration the parameters were trained with.
    pub config_text: String,
}

struct Writer<W: Write>(W);

impl<W: Write> Writer<W> {
    fn bytes(&mut self, b: &[u8]) -> std::io::Result<()> {
        self.0.write_all(b)
    }
    fn u64(&mut self, v: u64) -> std::io::Result<()> {
        self.bytes(&v.to_le_bytes())
    }
    fn f64(&mut self, v: f64) -> std::io::Result<()> {
        self.u64(v.to_bits())
    }
    fn str(&mut self, s: &str) -> std::io::Result<()> {
        self.u64(s.len() as u64)?;
        self.bytes(s.as_bytes())
    }
    fn matrix(&mut self, m: &DenseMatrix) -> std::io::Result<()> {
        self.u64(m.rows() as u64)?;
        self.u64(m.cols() as u64)?;
        m.data().iter().try_for_each(|&v| self.f64(v))
    }
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.buf.len() < n {
            return Err(Error::VersionMismatch("checkpoint is truncated".into()));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?)
            .map_err(|_| Error::VersionMismatch("size overflows usize".into()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }
    fn str(&mut self) -> Result<String> {
        let n = self.usize()?;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::VersionMismatch("invalid utf-8 in checkpoint".into()))
    }
    fn matrix(&mut self) -> Result<DenseMatrix> {
        let (rows, cols) = (self.usize()?, self.usize()?);
        let len = rows
            .checked_mul(cols)
            .filter(|&l| l.saturating_mul(8) <= self.buf.len())
            .ok_or_else(|| Error::VersionMismatch("checkpoint is truncated".into()))?;
        let data = (0..len).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        DenseMatrix::from_vec(rows, cols, data)
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        self.write_into(&mut w).expect("writing to memory");
        w.0
    }

    fn write_into<W: Write>(&self, w: &mut Writer<W>) -> std::io::Result<()> {
        let p = &self.params;
        w.bytes(MAGIC)?;
        w.bytes(&FORMAT_VERSION.to_le_bytes())?;
        w.str(&self.config_text)?;
        w.u64(self.epochs_done)?;
        for d in [p.relations(), p.repeats(), p.feature_dim(), p.hidden_dim()] {
            w.u64(d as u64)?;
        }
        w.u64(p.store.len() as u64)?;
        for t in p.store.iter() {
            w.str(&t.name)?;
            w.matrix(&t.value)?;
        }
        match &self.optimizer {
            None => w.u64(0)?,
            Some(adam) => {
                w.u64(1)?;
                let c = adam.config;
                for v in [c.lr, c.weight_decay, c.betas.0, c.betas.1, c.eps] {
                    w.f64(v)?;
                }
                w.u64(adam.step)?;
                for m in &adam.moments {
                    w.matrix(&m.m)?;
                    w.matrix(&m.v)?;
                }
            }
        }
        Ok(())
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf };
        if r.take(8).ok() != Some(MAGIC.as_slice()) {
            return Err(Error::VersionMismatch(
                "not a checkpoint file (bad magic)".into(),
            ));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::VersionMismatch(format!(
                "checkpoint format {version}, this build reads {FORMAT_VERSION}"
            )));
        }
        let config_text = r.str()?;
        let epochs_done = r.u64()?;
        let (relations, repeats, feature_dim, hidden_dim) =
            (r.usize()?, r.usize()?, r.usize()?, r.usize()?);
        let count = r.usize()?;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let name = r.str()?;
            let value = r.matrix()?;
            store.add(name, value)?;
        }
        let params = ModelParams::from_store(store, relations, repeats, feature_dim, hidden_dim)?;
        let optimizer = match r.u64()? {
            0 => None,
            1 => {
                let config = AdamConfig {
                    lr: r.f64()?,
                    weight_decay: r.f64()?,
                    betas: (r.f64()?, r.f64()?),
                    eps: r.f64()?,
                };
                let step = r.u64()?;
                let moments = (0..count)
                    .map(|_| {
                        Ok(Moments {
                            m: r.matrix()?,
                            v: r.matrix()?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Some(Adam {
                    config,
                    step,
                    moments,
                })
            }
            other => {
                return Err(Error::VersionMismatch(format!(
                    "unknown optimizer tag {other}"
                )))
            }
        };
        if !r.buf.is_empty() {
            return Err(Error::VersionMismatch(
                "trailing bytes after checkpoint".into(),
            ));
        }
        Ok(Self {
            params,
            optimizer,
            epochs_done,
            config_text,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = Writer(std::io::BufWriter::new(file));
        self.write_into(&mut w)
            .and_then(|_| w.0.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut buf))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf)
    }
}

/// Saves parameters alone.
pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    Checkpoint {
        params: params.clone(),
        optimizer: None,
        epochs_done: 0,
        config_text: String::new(),
    }
    .save(path)
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    Ok(Checkpoint::load(path)?.params)
}
