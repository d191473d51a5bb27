//! Checkpoint container: a plain-text header (format version, model
//! configuration, training step) followed by named little-endian f32
//! parameter blobs with explicit shapes. Optimizer moments ride along as
//! `adam.m.*` / `adam.v.*` tensors when present.

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use ndarray::{ArrayD, IxDyn};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &str = "stvsr-checkpoint";
pub const FORMAT_VERSION: u32 = 1;

/// Raw checkpoint contents, decoupled from any live model.
pub struct Checkpoint {
    pub format_version: u32,
    pub config: ModelConfig,
    pub step: u64,
    pub tensors: Vec<(String, ArrayD<f32>)>,
}

impl Checkpoint {
    pub fn model_tensors(&self) -> impl Iterator<Item = &(String, ArrayD<f32>)> {
        self.tensors.iter().filter(|(n, _)| !n.starts_with("adam."))
    }

    pub fn optimizer_tensors(&self) -> impl Iterator<Item = &(String, ArrayD<f32>)> {
        self.tensors.iter().filter(|(n, _)| n.starts_with("adam."))
    }

    pub fn has_optimizer(&self) -> bool {
        self.tensors.iter().any(|(n, _)| n.starts_with("adam."))
    }
}

fn write_tensor<W: Write>(w: &mut W, name: &str, v: &ArrayD<f32>) -> Result<()> {
    let name_bytes = name.as_bytes();
    w.write_all(&(name_bytes.len() as u16).to_le_bytes())?;
    w.write_all(name_bytes)?;
    w.write_all(&[v.ndim() as u8])?;
    for d in v.shape() {
        w.write_all(&(*d as u32).to_le_bytes())?;
    }
    for x in v.iter() {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn read_tensor<R: Read>(r: &mut R) -> Result<(String, ArrayD<f32>)> {
    let mut len2 = [0u8; 2];
    r.read_exact(&mut len2)?;
    let name_len = u16::from_le_bytes(len2) as usize;
    let mut name = vec![0u8; name_len];
    r.read_exact(&mut name)?;
    let name = String::from_utf8(name).map_err(|_| Error::Checkpoint("bad tensor name".into()))?;
    let mut nd = [0u8; 1];
    r.read_exact(&mut nd)?;
    let mut dims = Vec::with_capacity(nd[0] as usize);
    for _ in 0..nd[0] {
        let mut d4 = [0u8; 4];
        r.read_exact(&mut d4)?;
        dims.push(u32::from_le_bytes(d4) as usize);
    }
    let total: usize = dims.iter().product();
    let mut data = vec![0f32; total];
    let mut buf = [0u8; 4];
    for x in data.iter_mut() {
        r.read_exact(&mut buf)?;
        *x = f32::from_le_bytes(buf);
    }
    let arr = ArrayD::from_shape_vec(IxDyn(&dims), data)
        .map_err(|e| Error::Checkpoint(format!("tensor `{name}`: {e}")))?;
    Ok((name, arr))
}

/// Writes a checkpoint for a model, optionally with optimizer tensors.
pub fn save(
    path: &Path,
    model: &Model<f32>,
    step: u64,
    optimizer: &[(String, ArrayD<f32>)],
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{MAGIC}")?;
    writeln!(w, "format_version={FORMAT_VERSION}")?;
    writeln!(w, "step={step}")?;
    for (k, v) in model.config.to_key_values() {
        writeln!(w, "config.{k}={v}")?;
    }
    writeln!(w, "optimizer={}", if optimizer.is_empty() { 0 } else { 1 })?;
    writeln!(w, "tensors={}", model.params.len() + optimizer.len())?;
    writeln!(w, "end-header")?;
    for (name, v) in model.params.iter() {
        write_tensor(&mut w, name, v)?;
    }
    for (name, v) in optimizer {
        write_tensor(&mut w, name, v)?;
    }
    w.flush()?;
    Ok(())
}

fn read_line<R: Read>(r: &mut R) -> Result<String> {
    let mut line = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        r.read_exact(&mut byte)?;
        if byte[0] == b'\n' {
            break;
        }
        line.push(byte[0]);
        if line.len() > 4096 {
            return Err(Error::Checkpoint("header line too long".into()));
        }
    }
    String::from_utf8(line).map_err(|_| Error::Checkpoint("non-utf8 header".into()))
}

/// Reads a checkpoint from disk.
pub fn load(path: &Path) -> Result<Checkpoint> {
    let mut r = BufReader::new(File::open(path)?);
    if read_line(&mut r)? != MAGIC {
        return Err(Error::Checkpoint("bad magic line".into()));
    }
    let mut format_version = 0u32;
    let mut step = 0u64;
    let mut tensor_count = 0usize;
    let mut config = ModelConfig::default();
    loop {
        let line = read_line(&mut r)?;
        if line == "end-header" {
            break;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Checkpoint(format!("malformed header line `{line}`")));
        };
        match key {
            "format_version" => {
                format_version = value
                    .parse()
                    .map_err(|_| Error::Checkpoint("bad format_version".into()))?;
                if format_version != FORMAT_VERSION {
                    return Err(Error::Checkpoint(format!(
                        "unsupported format version {format_version}"
                    )));
                }
            }
            "step" => {
                step = value
                    .parse()
                    .map_err(|_| Error::Checkpoint("bad step".into()))?
            }
            "optimizer" => {}
            "tensors" => {
                tensor_count = value
                    .parse()
                    .map_err(|_| Error::Checkpoint("bad tensor count".into()))?
            }
            k if k.starts_with("config.") => {
                config
                    .set_key(&k["config.".len()..], value)
                    .map_err(|e| Error::Checkpoint(e.to_string()))?;
            }
            other => {
                return Err(Error::Checkpoint(format!("unknown header key `{other}`")));
            }
        }
    }
    let mut tensors = Vec::with_capacity(tensor_count);
    for _ in 0..tensor_count {
        tensors.push(read_tensor(&mut r)?);
    }
    Ok(Checkpoint {
        format_version,
        config,
        step,
        tensors,
    })
}

/// Rebuilds a model from a checkpoint, verifying the tensor names and
/// shapes against the configured architecture.
pub fn to_model(ckpt: &Checkpoint) -> Result<Model<f32>> {
    let mut model = Model::<f32>::new(ckpt.config, 0)?;
    let expected: Vec<String> = model.params.names().to_vec();
    let mut seen = 0usize;
    for (name, value) in ckpt.model_tensors() {
        let Some(id) = model.params.index_of(name) else {
            return Err(Error::Checkpoint(format!(
                "tensor `{name}` not part of variant {}",
                ckpt.config.variant
            )));
        };
        if model.params.value(id).shape() != value.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor `{name}` shape {:?} != expected {:?}",
                value.shape(),
                model.params.value(id).shape()
            )));
        }
        *model.params.value_mut(id) = value.clone();
        seen += 1;
    }
    if seen != expected.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds {seen} model tensors, architecture needs {}",
            expected.len()
        )));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Graph, Var};
    use crate::model::Variant;
    use ndarray::Array4;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_cfg() -> ModelConfig {
        ModelConfig {
            channels: 8,
            deformable_groups: 2,
            ..ModelConfig::desk(Variant::Guided)
        }
    }

    #[test]
    fn save_load_roundtrips_parameters_and_forward_bits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.bin");
        let model = Model::<f32>::new(small_cfg(), 42).unwrap();
        save(&path, &model, 123, &[]).unwrap();
        let ckpt = load(&path).unwrap();
        assert_eq!(ckpt.step, 123);
        assert_eq!(ckpt.config, model.config);
        assert!(!ckpt.has_optimizer());
        let restored = to_model(&ckpt).unwrap();
        for ((n1, v1), (n2, v2)) in model.params.iter().zip(restored.params.iter()) {
            assert_eq!(n1, n2);
            assert!(v1.iter().zip(v2.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
        // Forward outputs reproduce bit-identically.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let frames: Vec<_> = (0..2)
            .map(|_| Array4::from_shape_fn((1, 3, 8, 8), |_| rng.gen_range(0.0..1.0f32)).into_dyn())
            .collect();
        let run = |m: &Model<f32>| -> Vec<f32> {
            let mut g = Graph::new();
            let lv = m.inject(&mut g);
            let vars: Vec<Var> = frames.iter().map(|f| g.constant(f.clone())).collect();
            let out = m.forward(&mut g, &lv, &vars).unwrap();
            out.hr_frames
                .iter()
                .flat_map(|v| g.value(*v).iter().copied().collect::<Vec<_>>())
                .collect()
        };
        let a = run(&model);
        let b = run(&restored);
        assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn optimizer_tensors_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.bin");
        let model = Model::<f32>::new(small_cfg(), 7).unwrap();
        let opt: Vec<(String, ndarray::ArrayD<f32>)> = model
            .params
            .iter()
            .flat_map(|(n, v)| {
                [
                    (format!("adam.m.{n}"), v.mapv(|x| x * 0.5)),
                    (format!("adam.v.{n}"), v.mapv(|x| x * x)),
                ]
            })
            .collect();
        save(&path, &model, 9, &opt).unwrap();
        let ckpt = load(&path).unwrap();
        assert!(ckpt.has_optimizer());
        assert_eq!(ckpt.optimizer_tensors().count(), 2 * model.params.len());
    }

    #[test]
    fn mismatched_tensors_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.bin");
        let model = Model::<f32>::new(small_cfg(), 7).unwrap();
        save(&path, &model, 0, &[]).unwrap();
        let mut ckpt = load(&path).unwrap();
        // A checkpoint claiming a different variant no longer matches the
        // stored tensor names.
        ckpt.config.variant = Variant::NaiveInterp;
        assert!(to_model(&ckpt).is_err());
    }
}
