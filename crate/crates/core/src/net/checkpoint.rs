//! Little-endian binary checkpoints.
//!
//! ```text
//! "DBPN"                    magic
//! u32                       format version
//! u32 len, bytes            network config as key=value text
//! u64                       training iteration
//! u32 n, n x block          parameters
//! u8                        1 if optimizer state follows, else 0
//!   u64 t, 4 x f64          Adam step count, lr, beta1, beta2, eps
//!   n x block, n x block    first and second moments
//! u32 len, bytes            free-form metadata text
//!
//! block: u32 len, name bytes, u32 rank, rank x u32 dims, f32 values
//! ```

use std::io::Write;
use std::path::Path;

use super::{DbpnNetwork, NetworkConfig};
use crate::error::{Error, Result};
use crate::tensor::{Adam, AdamConfig, ParamStore, Tensor};

const MAGIC: &[u8; 4] = b"DBPN";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything restored from a checkpoint file.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub network: DbpnNetwork<f32>,
    pub iteration: u64,
    pub optimizer: Option<Adam<f32>>,
    pub metadata: String,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn text(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn block(&mut self, name: &str, t: &Tensor<f32>) {
        self.text(name);
        self.u32(4);
        for d in t.shape() {
            self.u32(d as u32);
        }
        for v in t.data() {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

fn corrupt(what: &str) -> Error {
    Error::Checkpoint(format!("truncated or corrupt file while reading {what}"))
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or_else(|| corrupt(what))?;
        let s = self.buf.get(self.pos..end).ok_or_else(|| corrupt(what))?;
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
    fn text(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)? as usize;
        String::from_utf8(self.take(n, what)?.to_vec())
            .map_err(|_| Error::Checkpoint(format!("{what} is not UTF-8")))
    }
    fn block(&mut self) -> Result<(String, Tensor<f32>)> {
        let name = self.text("parameter name")?;
        let rank = self.u32(&name)?;
        if rank != 4 {
            return Err(Error::Checkpoint(format!(
                "{name}: unsupported rank {rank}"
            )));
        }
        let mut shape = [0usize; 4];
        for d in &mut shape {
            *d = self.u32(&name)? as usize;
        }
        let n: usize = shape.iter().product();
        let raw = self.take(n.checked_mul(4).ok_or_else(|| corrupt(&name))?, &name)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok((name, Tensor::from_vec(shape, data)?))
    }
}

/// Write `net` (and optionally optimizer state) to `path`. The file is
/// written next to the target and renamed into place.
pub fn save_checkpoint(
    path: impl AsRef<Path>,
    net: &DbpnNetwork<f32>,
    iteration: u64,
    optimizer: Option<&Adam<f32>>,
    metadata: &str,
) -> Result<()> {
    let path = path.as_ref();
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(CHECKPOINT_VERSION);
    w.text(&net.config().to_kv());
    w.u64(iteration);
    let store = net.params();
    w.u32(store.len() as u32);
    for id in store.ids() {
        w.block(store.name(id), store.value(id));
    }
    match optimizer {
        None => w.0.push(0),
        Some(adam) => {
            w.0.push(1);
            w.u64(adam.t);
            let c = adam.config;
            for v in [c.lr, c.beta1, c.beta2, c.eps] {
                w.f64(v);
            }
            for moments in [&adam.first_moment, &adam.second_moment] {
                for (id, m) in store.ids().zip(moments.iter()) {
                    w.block(store.name(id), m);
                }
            }
        }
    }
    w.text(metadata);
    let tmp = path.with_extension("tmp");
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&w.0).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn read_moments(r: &mut Reader, store: &ParamStore<f32>) -> Result<Vec<Tensor<f32>>> {
    store
        .ids()
        .map(|id| {
            let (name, t) = r.block()?;
            if name != store.name(id) || t.shape() != store.value(id).shape() {
                return Err(Error::Checkpoint(format!(
                    "optimizer state {name} does not match parameter {}",
                    store.name(id)
                )));
            }
            Ok(t)
        })
        .collect()
}

/// Read a checkpoint. Nothing is returned unless the whole file parses and
/// every tensor matches the layout implied by the stored configuration.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader { buf: &buf, pos: 0 };
    if r.take(4, "magic").ok() != Some(MAGIC.as_slice()) {
        return Err(Error::Checkpoint(format!(
            "{} is not a checkpoint (bad magic)",
            path.display()
        )));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let config = NetworkConfig::from_kv(&r.text("config")?)
        .map_err(|e| Error::Checkpoint(format!("stored configuration is invalid: {e}")))?;
    let iteration = r.u64("iteration")?;
    let n = r.u32("parameter count")? as usize;
    let mut stored = ParamStore::new();
    for _ in 0..n {
        let (name, t) = r.block()?;
        stored.add(name, t);
    }
    let mut network = DbpnNetwork::<f32>::build(&config, 0)?;
    network.load_params(&stored)?;
    let optimizer = match r.u8("optimizer flag")? {
        0 => None,
        1 => {
            let t = r.u64("optimizer step")?;
            let mut hp = [0.0; 4];
            for v in &mut hp {
                *v = r.f64("optimizer settings")?;
            }
            let first_moment = read_moments(&mut r, network.params())?;
            let second_moment = read_moments(&mut r, network.params())?;
            Some(Adam {
                config: AdamConfig {
                    lr: hp[0],
                    beta1: hp[1],
                    beta2: hp[2],
                    eps: hp[3],
                },
                t,
                first_moment,
                second_moment,
            })
        }
        other => return Err(Error::Checkpoint(format!("bad optimizer flag {other}"))),
    };
    let metadata = r.text("metadata")?;
    if r.pos != buf.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after checkpoint",
            buf.len() - r.pos
        )));
    }
    Ok(Checkpoint {
        network,
        iteration,
        optimizer,
        metadata,
    })
}
