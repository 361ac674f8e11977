//! Binary model checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "NADSFLW1"
//! u32 format version (1)
//! u32 C, H, W            input sample shape
//! u32 B, K               blocks, flows per block
//! u8  tying              0 per-step, 1 per-block, 2 shared
//! u32 n_ops, u8 × n_ops  candidate op codes (index into OpKind::ALL)
//! u32 nodes, u32 n_edges, (u32 from, u32 to) × n_edges
//! u32 n_steps, then per step:
//!     u8 actnorm initialized, u32 C, u32 × C permutation, i8 × C diagonal sign
//! u64 n_params, f64 × n_params in FlowModel::params order
//! ```

use std::path::Path;

use super::{FlowModel, FlowSpec};
use crate::error::{Error, Result};
use crate::search::{CellTopology, LogitTying, OpKind, SearchSpace};

pub const MAGIC: &[u8; 8] = b"NADSFLW1";
const FORMAT_VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.at + n > self.buf.len() {
            return Err(Error::Checkpoint("truncated checkpoint".into()));
        }
        let s = &self.buf[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn tying_code(t: LogitTying) -> u8 {
    match t {
        LogitTying::PerStep => 0,
        LogitTying::PerBlock => 1,
        LogitTying::Shared => 2,
    }
}

pub fn to_bytes(model: &FlowModel) -> Vec<u8> {
    let spec = model.spec();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for &d in &spec.input_shape {
        put_u32(&mut out, d);
    }
    put_u32(&mut out, spec.blocks);
    put_u32(&mut out, spec.flows_per_block);
    out.push(tying_code(spec.space.tying));
    put_u32(&mut out, spec.space.ops.len());
    for op in &spec.space.ops {
        out.push(OpKind::ALL.iter().position(|o| o == op).unwrap() as u8);
    }
    let topo = &spec.space.topology;
    put_u32(&mut out, topo.nodes());
    put_u32(&mut out, topo.num_edges());
    for &(i, j) in topo.edges() {
        put_u32(&mut out, i);
        put_u32(&mut out, j);
    }
    put_u32(&mut out, model.steps().len());
    for step in model.steps() {
        out.push(step.actnorm.is_initialized() as u8);
        put_u32(&mut out, step.inv.channels());
        for &p in step.inv.perm() {
            put_u32(&mut out, p);
        }
        for &s in step.inv.sign() {
            out.push((s as i8) as u8);
        }
    }
    let params = model.params();
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for p in params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

pub fn from_bytes(buf: &[u8]) -> Result<FlowModel> {
    let mut r = Reader { buf, at: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic; not a flow checkpoint".into()));
    }
    let version = r.u32()?;
    if version as u32 != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let input_shape = [r.u32()?, r.u32()?, r.u32()?];
    let blocks = r.u32()?;
    let flows_per_block = r.u32()?;
    let tying = match r.u8()? {
        0 => LogitTying::PerStep,
        1 => LogitTying::PerBlock,
        2 => LogitTying::Shared,
        t => return Err(Error::Checkpoint(format!("unknown tying code {t}"))),
    };
    let n_ops = r.u32()?;
    let mut ops = Vec::with_capacity(n_ops);
    for _ in 0..n_ops {
        let code = r.u8()? as usize;
        ops.push(
            *OpKind::ALL
                .get(code)
                .ok_or_else(|| Error::Checkpoint(format!("unknown op code {code}")))?,
        );
    }
    let nodes = r.u32()?;
    let n_edges = r.u32()?;
    let mut edges = Vec::with_capacity(n_edges);
    for _ in 0..n_edges {
        edges.push((r.u32()?, r.u32()?));
    }
    let topology = CellTopology::new(nodes, edges).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let spec = FlowSpec {
        input_shape,
        blocks,
        flows_per_block,
        space: SearchSpace {
            topology,
            ops,
            tying,
        },
    };
    let mut model = FlowModel::new(spec, 0).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let n_steps = r.u32()?;
    if n_steps != model.steps().len() {
        return Err(Error::Checkpoint("step count does not match the header".into()));
    }
    let mut buffers = Vec::with_capacity(n_steps);
    for _ in 0..n_steps {
        let init = r.u8()? != 0;
        let c = r.u32()?;
        let perm = (0..c).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let sign = (0..c)
            .map(|_| r.u8().map(|b| b as i8 as f64))
            .collect::<Result<Vec<_>>>()?;
        buffers.push((init, perm, sign));
    }
    let n_params = r.u64()? as usize;
    if n_params != model.num_params() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {n_params} parameters, architecture needs {}",
            model.num_params()
        )));
    }
    let params = (0..n_params).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    if r.at != buf.len() {
        return Err(Error::Checkpoint("trailing bytes after parameters".into()));
    }
    for (step, (init, perm, sign)) in model.steps_mut().iter_mut().zip(buffers) {
        if perm.len() != step.inv.channels() {
            return Err(Error::Checkpoint("1x1 channel count mismatch".into()));
        }
        step.inv.set_buffers(perm, sign)?;
        step.actnorm.mark_initialized(init);
    }
    model.set_params(&params)?;
    Ok(model)
}

pub fn save(model: &FlowModel, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<FlowModel> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&buf)
}
