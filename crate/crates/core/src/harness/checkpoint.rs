//! Binary checkpoints.
//!
//! Layout (all integers and floats little-endian, floats as IEEE-754 f64):
//!
//! ```text
//! magic "UAVNETCK" | u32 version | 32-byte scenario fingerprint
//! u8 algorithm | u64 counter | string label
//! actor ParamSet | critic ParamSet
//! optional RMSProp (actor) | optional RMSProp (critic)
//! optional MetaConfig (JSON string)
//! ```
//!
//! A ParamSet is `u8 role | u32 layer count | (u32 in, u32 out)* | u32 extra |
//! u64 version | u64 n | n × f64`. Strings are `u32 length | UTF-8 bytes`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::meta::MetaConfig;
use crate::nn::{ActorCritic, LayerShape, ParamSet, RmsPropState, Role};

use super::config::{hex, ExperimentConfig};
use super::Algo;

const MAGIC: &[u8; 8] = b"UAVNETCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub fingerprint: [u8; 32],
    pub algo: Algo,
    /// Global updates (A3C) or meta-iterations completed.
    pub counter: u64,
    /// Free-form creation note, e.g. the config name.
    pub label: String,
    pub model: ActorCritic,
    pub actor_opt: Option<RmsPropState>,
    pub critic_opt: Option<RmsPropState>,
    pub meta: Option<MetaConfig>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Vec::new();
        w.extend_from_slice(MAGIC);
        w.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        w.extend_from_slice(&self.fingerprint);
        w.push(self.algo as u8);
        w.extend_from_slice(&self.counter.to_le_bytes());
        put_str(&mut w, &self.label);
        put_params(&mut w, &self.model.actor);
        put_params(&mut w, &self.model.critic);
        put_opt(&mut w, self.actor_opt.as_ref());
        put_opt(&mut w, self.critic_opt.as_ref());
        match &self.meta {
            Some(m) => {
                w.push(1);
                put_str(&mut w, &serde_json::to_string(m).map_err(|e| Error::Config(e.to_string()))?);
            }
            None => w.push(0),
        }
        Ok(w)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if bytes.len() < MAGIC.len() + 4 || &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::UnsupportedCheckpoint);
        }
        r.pos = MAGIC.len();
        if r.u32()? != FORMAT_VERSION {
            return Err(Error::UnsupportedCheckpoint);
        }
        let fingerprint: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let algo = match r.u8()? {
            0 => Algo::A3c,
            1 => Algo::MetaA3c,
            a => return Err(Error::CorruptCheckpoint(format!("unknown algorithm tag {a}"))),
        };
        let counter = r.u64()?;
        let label = r.string()?;
        let actor = r.params()?;
        let critic = r.params()?;
        let actor_opt = r.opt()?;
        let critic_opt = r.opt()?;
        let meta = match r.u8()? {
            0 => None,
            1 => Some(serde_json::from_str(&r.string()?).map_err(|e| Error::CorruptCheckpoint(e.to_string()))?),
            t => return Err(Error::CorruptCheckpoint(format!("bad meta-config tag {t}"))),
        };
        if r.pos != bytes.len() {
            return Err(Error::CorruptCheckpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        if actor.role() != Role::Actor || critic.role() != Role::Critic {
            return Err(Error::CorruptCheckpoint("network roles out of order".into()));
        }
        Ok(Self {
            fingerprint,
            algo,
            counter,
            label,
            model: ActorCritic { actor, critic },
            actor_opt,
            critic_opt,
            meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Errors unless the checkpoint was written for `cfg`'s scenario family.
    pub fn check(&self, cfg: &ExperimentConfig) -> Result<()> {
        let expected = cfg.fingerprint()?;
        if expected != self.fingerprint {
            return Err(Error::FingerprintMismatch { expected: hex(&expected), found: hex(&self.fingerprint) });
        }
        Ok(())
    }
}

fn put_str(w: &mut Vec<u8>, s: &str) {
    w.extend_from_slice(&(s.len() as u32).to_le_bytes());
    w.extend_from_slice(s.as_bytes());
}

fn put_f64s(w: &mut Vec<u8>, v: &[f64]) {
    w.extend_from_slice(&(v.len() as u64).to_le_bytes());
    for x in v {
        w.extend_from_slice(&x.to_le_bytes());
    }
}

fn put_params(w: &mut Vec<u8>, p: &ParamSet) {
    w.push(match p.role() {
        Role::Actor => 0,
        Role::Critic => 1,
    });
    w.extend_from_slice(&(p.layers().len() as u32).to_le_bytes());
    for l in p.layers() {
        w.extend_from_slice(&(l.inputs as u32).to_le_bytes());
        w.extend_from_slice(&(l.outputs as u32).to_le_bytes());
    }
    w.extend_from_slice(&(p.extra_len() as u32).to_le_bytes());
    w.extend_from_slice(&p.version().to_le_bytes());
    put_f64s(w, p.values());
}

fn put_opt(w: &mut Vec<u8>, o: Option<&RmsPropState>) {
    match o {
        Some(o) => {
            w.push(1);
            for x in [o.decay, o.lr, o.eps] {
                w.extend_from_slice(&x.to_le_bytes());
            }
            put_f64s(w, &o.mean_square);
        }
        None => w.push(0),
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::CorruptCheckpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| Error::CorruptCheckpoint(e.to_string()))
    }

    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.u64()? as usize;
        if n > (self.buf.len() - self.pos) / 8 {
            return Err(Error::CorruptCheckpoint(format!("vector of {n} values overruns the file")));
        }
        (0..n).map(|_| self.f64()).collect()
    }

    fn params(&mut self) -> Result<ParamSet> {
        let role = match self.u8()? {
            0 => Role::Actor,
            1 => Role::Critic,
            t => return Err(Error::CorruptCheckpoint(format!("bad role tag {t}"))),
        };
        let n = self.u32()? as usize;
        if n > 1024 {
            return Err(Error::CorruptCheckpoint(format!("{n} layers")));
        }
        let mut layers = Vec::with_capacity(n);
        for _ in 0..n {
            layers.push(LayerShape { inputs: self.u32()? as usize, outputs: self.u32()? as usize });
        }
        let extra = self.u32()? as usize;
        let version = self.u64()?;
        let values = self.f64s()?;
        ParamSet::from_parts(role, layers, extra, values, version).map_err(|e| Error::CorruptCheckpoint(e.to_string()))
    }

    fn opt(&mut self) -> Result<Option<RmsPropState>> {
        match self.u8()? {
            0 => Ok(None),
            1 => {
                let (decay, lr, eps) = (self.f64()?, self.f64()?, self.f64()?);
                let mean_square = self.f64s()?;
                Ok(Some(RmsPropState { mean_square, decay, lr, eps }))
            }
            t => Err(Error::CorruptCheckpoint(format!("bad optimizer tag {t}"))),
        }
    }
}
