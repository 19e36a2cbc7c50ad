//! Binary checkpoints: config, parameters, forest topology, optimizer state
//! and loop position, all little-endian.
//!
//! ```text
//! "GLOG" u32:version
//! str:config_toml
//! u32:n  u64*n node vocab     u32:n  u64*n edge vocab
//! u32:gin_layers  u64:hidden
//! u32:P  { str:name  u32:rank  u64*rank dims  f64*numel data }*P
//! u8:has_forest [ u32:L  { u32:M_l  u64*M_l parent }*L ]
//! u8:has_head   [ u64:tasks ]
//! u32:S  { u8:present [ u64:step  f64*numel m  f64*numel v ] }*S
//! u64:epoch  u64:batch  u64:step
//! u8:has_diagnostics [ u32:T  f64*T nce_loss  f64*T mean_energy
//!                      u32:L  { u32:M_l  u64*M_l usage }*L ]
//! ```
//!
//! Strings are `u32` byte length plus UTF-8. Forest layer 0 is the top and
//! its parent list is empty.

use std::fs;
use std::path::Path;

use crate::config::TrainConfig;
use crate::em::EmDiagnostics;
use crate::error::{Error, Result};
use crate::forest::PrototypeForest;
use crate::gin::GinParams;
use crate::graph::AttrSchema;
use crate::optim::{Adam, Moments};
use crate::tensor::{ParamSet, Tensor};
use crate::trainer::{Head, Model, Progress};

const MAGIC: &[u8; 4] = b"GLOG";
pub const VERSION: u32 = 1;

/// Everything needed to resume training or reuse a model.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub model: Model,
    pub adam: Adam,
    pub progress: Progress,
    pub diagnostics: Option<EmDiagnostics>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        self.0
            .extend_from_slice(&u32::try_from(v).expect("count fits in u32").to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, xs: &[f64]) {
        for x in xs {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len());
        self.0.extend_from_slice(s.as_bytes());
    }
    fn usizes(&mut self, xs: &[usize]) {
        self.u32(xs.len());
        for &x in xs {
            self.u64(x as u64);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end =
            end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn flag(&mut self) -> Result<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(Error::Checkpoint(format!(
                "bad flag byte {b} at {}",
                self.pos - 1
            ))),
        }
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Checkpoint("count overflows usize".into()))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::Checkpoint("length overflow".into()))?,
        )?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| Error::Checkpoint(e.to_string()))
    }
    fn usizes(&mut self) -> Result<Vec<usize>> {
        let n = self.u32()?;
        (0..n).map(|_| self.usize()).collect()
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(VERSION as usize);
        w.str(&self.config.to_toml());
        let gin = &self.model.gin;
        w.usizes(&gin.schema.node_vocab);
        w.usizes(&gin.schema.edge_vocab);
        w.u32(gin.num_layers());
        w.u64(gin.hidden as u64);

        let params = &self.model.params;
        w.u32(params.len());
        for (_, name, t) in params.iter() {
            w.str(name);
            w.u32(t.shape().len());
            for &d in t.shape() {
                w.u64(d as u64);
            }
            w.f64s(t.data());
        }

        match &self.model.forest {
            Some(f) => {
                w.u8(1);
                w.u32(f.depth());
                for l in 0..f.depth() {
                    w.usizes(f.parents(l));
                }
            }
            None => w.u8(0),
        }
        match &self.model.head {
            Some(h) => {
                w.u8(1);
                w.u64(h.tasks as u64);
            }
            None => w.u8(0),
        }

        w.u32(self.adam.state.len());
        for s in &self.adam.state {
            match s {
                Some(m) => {
                    w.u8(1);
                    w.u64(m.step);
                    w.f64s(&m.m);
                    w.f64s(&m.v);
                }
                None => w.u8(0),
            }
        }

        w.u64(self.progress.epoch as u64);
        w.u64(self.progress.batch as u64);
        w.u64(self.progress.step);
        match &self.diagnostics {
            Some(d) => {
                debug_assert_eq!(d.nce_loss.len(), d.mean_energy.len());
                w.u8(1);
                w.u32(d.nce_loss.len());
                w.f64s(&d.nce_loss);
                w.f64s(&d.mean_energy);
                w.u32(d.usage.len());
                for layer in &d.usage {
                    w.u32(layer.len());
                    layer.iter().for_each(|&c| w.u64(c));
                }
            }
            None => w.u8(0),
        }
        w.0
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION as usize {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let config = TrainConfig::from_toml(&r.str()?)?;
        let schema = AttrSchema {
            node_vocab: r.usizes()?,
            edge_vocab: r.usizes()?,
        };
        let gin_layers = r.u32()?;
        let hidden = r.usize()?;

        let mut params = ParamSet::new();
        for _ in 0..r.u32()? {
            let name = r.str()?;
            let rank = r.u32()?;
            let shape: Vec<usize> = (0..rank).map(|_| r.usize()).collect::<Result<_>>()?;
            let numel = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| Error::Checkpoint(format!("shape of {name} overflows")))?;
            let data = r.f64s(numel)?;
            params.add(name, Tensor::new(shape, data)?);
        }
        let gin = GinParams::attach(&params, &schema, gin_layers, hidden)?;

        let forest = if r.flag()? {
            let depth = r.u32()?;
            let parent: Vec<Vec<usize>> = (0..depth).map(|_| r.usizes()).collect::<Result<_>>()?;
            Some(PrototypeForest::attach(&params, parent)?)
        } else {
            None
        };
        let head = if r.flag()? {
            Some(Head::attach(&params, r.usize()?)?)
        } else {
            None
        };

        let slots = r.u32()?;
        if slots > params.len() {
            return Err(Error::Checkpoint(format!(
                "{slots} optimizer slots for {} parameters",
                params.len()
            )));
        }
        let mut state = Vec::with_capacity(slots);
        for (i, id) in params.ids().take(slots).enumerate() {
            debug_assert_eq!(i, id.index());
            state.push(if r.flag()? {
                let n = params.get(id).numel();
                Some(Moments {
                    step: r.u64()?,
                    m: r.f64s(n)?,
                    v: r.f64s(n)?,
                })
            } else {
                None
            });
        }
        let adam = Adam {
            config: config.adam,
            state,
        };

        let progress = Progress {
            epoch: r.usize()?,
            batch: r.usize()?,
            step: r.u64()?,
        };
        let diagnostics = if r.flag()? {
            let t = r.u32()?;
            let nce_loss = r.f64s(t)?;
            let mean_energy = r.f64s(t)?;
            let layers = r.u32()?;
            let usage = (0..layers)
                .map(|_| {
                    let m = r.u32()?;
                    (0..m).map(|_| r.u64()).collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            Some(EmDiagnostics {
                nce_loss,
                mean_energy,
                usage,
            })
        } else {
            None
        };
        if r.pos != buf.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes",
                buf.len() - r.pos
            )));
        }
        Ok(Self {
            config,
            model: Model {
                params,
                gin,
                forest,
                head,
            },
            adam,
            progress,
            diagnostics,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
