//! Single-file binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "VAEGANCK" | u32 version
//! u32 x5 dims (features, latent, hidden, gru, disc_gru)
//! u8 stage | u32 epoch | u64 step | u64 seed
//! u32 network count, then per network its spec
//! u32 block count, then per block: name, u32 rows, u32 cols, f32 values
//! ```
//!
//! Strings are a u16 byte length followed by UTF-8. Blocks are the three
//! feature normalisations followed by every network's parameters in
//! declaration order.

use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;

use super::train::{Progress, Stage};
use super::{write_atomic, PipelineError, Result};
use crate::models::{Domain, FeatureNorm, ModelBundle, ModelDims, Network, NetworkSpec, Role};
use crate::tensor::{Activation, Real};

const MAGIC: &[u8; 8] = b"VAEGANCK";
pub const FORMAT_VERSION: u32 = 1;

/// A bundle with the training state it was saved at.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub bundle: ModelBundle<f32>,
    pub progress: Progress,
    pub seed: u64,
}

fn corrupt(msg: impl Into<String>) -> PipelineError {
    PipelineError::Corrupt(msg.into())
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.write_u16::<LE>(s.len() as u16).expect("vec write");
    out.extend_from_slice(s.as_bytes());
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.write_u32::<LE>(v as u32).expect("vec write");
}

fn put_block<T: Real>(out: &mut Vec<u8>, name: &str, a: &Array2<T>) {
    put_str(out, name);
    put_u32(out, a.nrows());
    put_u32(out, a.ncols());
    for v in a.iter() {
        out.write_f32::<LE>(Real::to_f64(*v) as f32).expect("vec write");
    }
}

fn put_spec(out: &mut Vec<u8>, s: &NetworkSpec) {
    put_str(out, s.role.name());
    put_u32(out, s.input);
    put_u32(out, s.pre_fc.len());
    s.pre_fc.iter().for_each(|&w| put_u32(out, w));
    put_u32(out, s.gru);
    put_u32(out, s.post_fc.len());
    s.post_fc.iter().for_each(|&w| put_u32(out, w));
    put_u32(out, s.heads);
    put_u32(out, s.head_width);
    out.push(s.hidden_activation.code());
    out.push(s.head_activation.code());
}

/// Serialises a bundle. Parameters are stored as 32-bit floats.
pub fn encode_checkpoint<T: Real>(bundle: &ModelBundle<T>, progress: Progress, seed: u64) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.write_u32::<LE>(FORMAT_VERSION).expect("vec write");
    let d = bundle.dims();
    for w in [d.features, d.latent, d.hidden, d.gru, d.disc_gru] {
        put_u32(&mut out, w);
    }
    out.push(progress.stage.code());
    out.write_u32::<LE>(progress.epoch).expect("vec write");
    out.write_u64::<LE>(progress.step).expect("vec write");
    out.write_u64::<LE>(seed).expect("vec write");
    let nets: Vec<&Network<T>> = bundle.networks().collect();
    put_u32(&mut out, nets.len());
    nets.iter().for_each(|n| put_spec(&mut out, n.spec()));
    let blocks = 2 * Domain::ALL.len() + nets.iter().map(|n| n.named_params().len()).sum::<usize>();
    put_u32(&mut out, blocks);
    for dom in Domain::ALL {
        let n = bundle.norm(dom);
        put_block(&mut out, &format!("norm.{}.mean", dom.name()), &n.mean);
        put_block(&mut out, &format!("norm.{}.std", dom.name()), &n.std);
    }
    for n in nets {
        for (local, p) in n.named_params() {
            put_block(&mut out, &format!("{}.{local}", n.spec().role), p);
        }
    }
    out
}

pub fn save_checkpoint<T: Real>(
    bundle: &ModelBundle<T>,
    progress: Progress,
    seed: u64,
    path: impl AsRef<Path>,
) -> Result<()> {
    write_atomic(path.as_ref(), &encode_checkpoint(bundle, progress, seed))
}

struct Reader<'a>(Cursor<&'a [u8]>);

impl Reader<'_> {
    fn u8(&mut self) -> Result<u8> {
        self.0.read_u8().map_err(|_| corrupt("truncated file"))
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(self.0.read_u32::<LE>().map_err(|_| corrupt("truncated file"))? as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        self.0.read_u64::<LE>().map_err(|_| corrupt("truncated file"))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.0.read_u16::<LE>().map_err(|_| corrupt("truncated file"))? as usize;
        let mut buf = vec![0; n];
        self.0.read_exact(&mut buf).map_err(|_| corrupt("truncated file"))?;
        String::from_utf8(buf).map_err(|_| corrupt("block name is not UTF-8"))
    }

    fn widths(&mut self) -> Result<Vec<usize>> {
        let n = self.u32()?;
        if n > 64 {
            return Err(corrupt(format!("implausible layer count {n}")));
        }
        (0..n).map(|_| self.u32()).collect()
    }

    fn activation(&mut self) -> Result<Activation> {
        let c = self.u8()?;
        Activation::from_code(c).ok_or_else(|| corrupt(format!("unknown activation code {c}")))
    }

    fn spec(&mut self) -> Result<NetworkSpec> {
        let name = self.string()?;
        let role: Role = name.parse().map_err(|_| corrupt(format!("unknown role '{name}'")))?;
        Ok(NetworkSpec {
            role,
            input: self.u32()?,
            pre_fc: self.widths()?,
            gru: self.u32()?,
            post_fc: self.widths()?,
            heads: self.u32()?,
            head_width: self.u32()?,
            hidden_activation: self.activation()?,
            head_activation: self.activation()?,
        })
    }

    /// Reads the next block, checking its name and shape.
    fn block(&mut self, name: &str, shape: (usize, usize)) -> Result<Array2<f32>> {
        let found_name = self.string()?;
        if found_name != name {
            return Err(corrupt(format!("expected block '{name}', found '{found_name}'")));
        }
        let found = (self.u32()?, self.u32()?);
        if found != shape {
            return Err(PipelineError::ShapeMismatch {
                block: name.to_string(),
                expected: shape,
                found,
            });
        }
        let mut vals = vec![0f32; found.0 * found.1];
        self.0
            .read_f32_into::<LE>(&mut vals)
            .map_err(|_| corrupt(format!("truncated in block '{name}'")))?;
        Array2::from_shape_vec(found, vals).map_err(|e| corrupt(e.to_string()))
    }
}

/// Parses a checkpoint. With `expected`, block shapes are checked against
/// networks of those widths instead of the embedded ones, so a model of the
/// wrong size fails on the first block that differs.
pub fn decode_checkpoint(bytes: &[u8], expected: Option<&ModelDims>) -> Result<Checkpoint> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let mut r = Reader(Cursor::new(&bytes[MAGIC.len()..]));
    let version = r.u32()? as u32;
    if version != FORMAT_VERSION {
        return Err(PipelineError::VersionMismatch {
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    let dims = ModelDims {
        features: r.u32()?,
        latent: r.u32()?,
        hidden: r.u32()?,
        gru: r.u32()?,
        disc_gru: r.u32()?,
    };
    dims.validate().map_err(corrupt)?;
    let stage = r.u8()?;
    let progress = Progress {
        stage: Stage::from_code(stage).ok_or_else(|| corrupt(format!("unknown stage code {stage}")))?,
        epoch: r.u32()? as u32,
        step: r.u64()?,
    };
    let seed = r.u64()?;
    let count = r.u32()?;
    if count > 16 {
        return Err(corrupt(format!("implausible network count {count}")));
    }
    let mut specs = Vec::with_capacity(count);
    for _ in 0..count {
        let s = r.spec()?;
        if s != NetworkSpec::for_role(s.role, &dims) {
            return Err(corrupt(format!("spec of {} does not match the stored widths", s.role)));
        }
        specs.push(s);
    }
    let target = expected.copied().unwrap_or(dims);
    let blocks = r.u32()?;
    let f = target.features;
    let mut norms = Vec::new();
    for dom in Domain::ALL {
        let mean = r.block(&format!("norm.{}.mean", dom.name()), (1, f))?;
        let std = r.block(&format!("norm.{}.std", dom.name()), (1, f))?;
        if std.iter().any(|s| !(*s > 0.0)) {
            return Err(corrupt(format!("non-positive std in norm.{}", dom.name())));
        }
        norms.push(FeatureNorm { mean, std });
    }
    let mut nets = Vec::with_capacity(specs.len());
    let mut seen = 2 * Domain::ALL.len();
    for s in &specs {
        let mut net = Network::<f32>::zeros(NetworkSpec::for_role(s.role, &target))?;
        let names: Vec<(String, (usize, usize))> =
            net.named_params().into_iter().map(|(n, p)| (n, p.dim())).collect();
        for ((local, shape), p) in names.into_iter().zip(net.params_mut()) {
            *p = r.block(&format!("{}.{local}", s.role), shape)?;
            seen += 1;
        }
        nets.push(net);
    }
    if seen != blocks {
        return Err(corrupt(format!("header declares {blocks} blocks, found {seen}")));
    }
    if (r.0.position() as usize) != bytes.len() - MAGIC.len() {
        return Err(corrupt("trailing bytes after last block"));
    }
    let norms: [FeatureNorm<f32>; 3] = norms.try_into().expect("three domains");
    Ok(Checkpoint {
        bundle: ModelBundle::from_parts(target, norms, nets)?,
        progress,
        seed,
    })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    decode_checkpoint(&std::fs::read(path)?, None)
}

/// Loads a checkpoint that must hold networks of the widths in `dims`.
pub fn load_checkpoint_for(path: impl AsRef<Path>, dims: &ModelDims) -> Result<Checkpoint> {
    decode_checkpoint(&std::fs::read(path)?, Some(dims))
}
