//! Versioned binary checkpoint of the adaptation state.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic        8 bytes  "DPGLACK\0"
//! version      u32      1
//! iteration    u64
//! inputs       u32
//! hidden       u32
//! outputs      u32
//! student      f64 × P  (P = parameter count of the shape)
//! teacher      f64 × P
//! classes      u32
//! dplf t       u64
//! λg, λcs      f64, f64
//! γ, warmup    u64, u64
//! global       u8 flag, then mean f64, std f64 when flag = 1
//! per class    same as global, `classes` times
//! ```

use std::path::Path;

use crate::dplf::{EmaSchedule, Moments, ThresholdState};
use crate::error::{Error, Result};
use crate::io::write_atomic;

use super::model::{MlpShape, ModelParams};
use super::train::AdaptState;

const MAGIC: &[u8; 8] = b"DPGLACK\0";
const VERSION: u32 = 1;

pub type Checkpoint = AdaptState;

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn moments(&mut self, m: Option<Moments>) {
        match m {
            None => self.u8(0),
            Some(m) => {
                self.u8(1);
                self.f64(m.mean);
                self.f64(m.std);
            }
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn moments(&mut self) -> Result<Option<Moments>> {
        match self.u8()? {
            0 => Ok(None),
            1 => Ok(Some(Moments {
                mean: self.f64()?,
                std: self.f64()?,
            })),
            f => Err(Error::Checkpoint(format!("bad presence flag {f}"))),
        }
    }
}

pub fn encode_checkpoint(c: &Checkpoint) -> Vec<u8> {
    let mut w = Writer(MAGIC.to_vec());
    w.u32(VERSION);
    w.u64(c.iteration);
    let s = c.student.shape();
    w.u32(s.inputs as u32);
    w.u32(s.hidden as u32);
    w.u32(s.outputs as u32);
    for p in [&c.student, &c.teacher] {
        for &v in p.as_slice() {
            w.f64(v);
        }
    }
    let th = &c.thresholds;
    w.u32(th.num_classes() as u32);
    w.u64(th.iteration());
    let sch = th.schedule();
    w.f64(sch.lambda_global);
    w.f64(sch.lambda_class);
    w.u64(sch.period);
    w.u64(sch.warmup);
    w.moments(th.global());
    for k in 0..th.num_classes() {
        w.moments(th.class(k));
    }
    w.0
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let iteration = r.u64()?;
    let shape = MlpShape::new(r.u32()? as usize, r.u32()? as usize, r.u32()? as usize)
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut params = Vec::with_capacity(2);
    for _ in 0..2 {
        let values = (0..shape.param_count())
            .map(|_| r.f64())
            .collect::<Result<Vec<_>>>()?;
        params.push(ModelParams::from_values(shape, values)?);
    }
    let teacher = params.pop().unwrap();
    let student = params.pop().unwrap();
    let classes = r.u32()? as usize;
    let t = r.u64()?;
    let schedule = EmaSchedule {
        lambda_global: r.f64()?,
        lambda_class: r.f64()?,
        period: r.u64()?,
        warmup: r.u64()?,
    };
    let global = r.moments()?;
    let class = (0..classes).map(|_| r.moments()).collect::<Result<Vec<_>>>()?;
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Ok(AdaptState {
        iteration,
        student,
        teacher,
        thresholds: ThresholdState::from_parts(global, class, schedule, t),
    })
}

pub fn save_checkpoint(path: impl AsRef<Path>, c: &Checkpoint) -> Result<()> {
    write_atomic(path.as_ref(), &encode_checkpoint(c))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
