//! Named parameter traversal and the text parameter-file format.
//!
//! File layout (UTF-8, one record per line):
//!
//! ```text
//! wavefield-params 1
//! meta <key> <value>
//! tensor <name> <rank> <dim>...
//! <value> <value> ...
//! ```
//!
//! The first line carries the format version. `meta` lines hold
//! non-learnable settings (block count, step counts, readout kind, ...).
//! Each `tensor` header is followed by exactly one line with the
//! row-major values written as shortest round-trip `f64` literals, so a
//! save/load cycle is bit-exact. A rank-0 tensor is a scalar.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Result, WaveError};
use crate::model::{
    BlockParams, DtSharing, InputMap, LayerNorm, LayerParams, Linear, ModelParams, ReadoutKind,
    V0Mode,
};
use crate::scalar::Real;

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "wavefield-params";

/// Visits every learnable tensor with a dotted name and its shape.
#[allow(clippy::type_complexity)]
pub trait Parameters<T: Real> {
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[T]));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &[usize], &mut [T]));

    fn num_params(&self) -> usize {
        let mut count = 0;
        self.visit(&mut |_, _, xs| count += xs.len());
        count
    }

    /// All learnable scalars in visiting order.
    fn to_flat(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.num_params());
        self.visit(&mut |_, _, xs| out.extend_from_slice(xs));
        out
    }

    fn load_flat(&mut self, flat: &[T]) -> Result<()> {
        let expected = self.num_params();
        if flat.len() != expected {
            return Err(WaveError::ShapeMismatch {
                what: "flat parameter vector",
                expected,
                found: flat.len(),
            });
        }
        let mut offset = 0;
        self.visit_mut(&mut |_, _, xs| {
            xs.copy_from_slice(&flat[offset..offset + xs.len()]);
            offset += xs.len();
        });
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// In-memory form of a parameter file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamFile {
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<(String, Tensor)>,
}

impl ParamFile {
    pub fn set_meta(&mut self, key: &str, value: impl ToString) {
        self.meta.insert(key.to_string(), value.to_string());
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| WaveError::ParamFormat(format!("missing meta key `{key}`")))
    }

    pub fn meta_parse<V: std::str::FromStr>(&self, key: &str) -> Result<V> {
        let raw = self.meta(key)?;
        raw.parse()
            .map_err(|_| WaveError::ParamFormat(format!("bad value `{raw}` for meta key `{key}`")))
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| WaveError::ParamFormat(format!("missing tensor `{name}`")))
    }

    /// Appends every tensor of `params`, names prefixed with `prefix`.
    pub fn push_params<T: Real, P: Parameters<T> + ?Sized>(&mut self, prefix: &str, params: &P) {
        params.visit(&mut |name, shape, xs| {
            self.tensors.push((
                format!("{prefix}{name}"),
                Tensor {
                    shape: shape.to_vec(),
                    values: xs.iter().map(|x| x.as_f64()).collect(),
                },
            ));
        });
    }

    /// Fills every tensor of `params` from this file, checking shapes.
    pub fn fill_params<T: Real, P: Parameters<T> + ?Sized>(&self, prefix: &str, params: &mut P) -> Result<()> {
        let mut failure = None;
        params.visit_mut(&mut |name, shape, xs| {
            if failure.is_some() {
                return;
            }
            let full = format!("{prefix}{name}");
            match self.tensor(&full) {
                Ok(t) if t.shape == shape && t.values.len() == xs.len() => {
                    for (x, &v) in xs.iter_mut().zip(&t.values) {
                        *x = T::lit(v);
                    }
                }
                Ok(t) => {
                    failure = Some(WaveError::ParamFormat(format!(
                        "tensor `{full}` has shape {:?}, expected {:?}",
                        t.shape, shape
                    )))
                }
                Err(e) => failure = Some(e),
            }
        });
        failure.map_or(Ok(()), Err)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{MAGIC} {FORMAT_VERSION}\n");
        for (k, v) in &self.meta {
            writeln!(out, "meta {k} {v}").unwrap();
        }
        for (name, t) in &self.tensors {
            write!(out, "tensor {name} {}", t.shape.len()).unwrap();
            for d in &t.shape {
                write!(out, " {d}").unwrap();
            }
            out.push('\n');
            let line: Vec<String> = t.values.iter().map(|v| format!("{v:e}")).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: &str| WaveError::ParamFormat(format!("line {line}: {msg}"));
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (_, header) = lines.next().ok_or_else(|| bad(1, "empty file"))?;
        let mut head = header.split_whitespace();
        if head.next() != Some(MAGIC) {
            return Err(bad(1, "not a wavefield parameter file"));
        }
        let version: u32 = head
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad(1, "missing format version"))?;
        if version != FORMAT_VERSION {
            return Err(bad(1, &format!("unsupported format version {version}")));
        }
        let mut file = ParamFile::default();
        while let Some((no, line)) = lines.next() {
            let mut parts = line.split_whitespace();
            match parts.next() {
                None => continue,
                Some("meta") => {
                    let key = parts.next().ok_or_else(|| bad(no, "meta without key"))?;
                    let value: Vec<&str> = parts.collect();
                    file.meta.insert(key.to_string(), value.join(" "));
                }
                Some("tensor") => {
                    let name = parts.next().ok_or_else(|| bad(no, "tensor without name"))?;
                    let rank: usize = parts
                        .next()
                        .and_then(|r| r.parse().ok())
                        .ok_or_else(|| bad(no, "tensor without rank"))?;
                    let shape: Vec<usize> = parts
                        .map(|d| d.parse().map_err(|_| bad(no, "bad dimension")))
                        .collect::<Result<_>>()?;
                    if shape.len() != rank {
                        return Err(bad(no, "rank does not match dimension count"));
                    }
                    let (vno, values) = lines.next().ok_or_else(|| bad(no, "tensor without values"))?;
                    let values: Vec<f64> = values
                        .split_whitespace()
                        .map(|v| v.parse().map_err(|_| bad(vno, &format!("bad value `{v}`"))))
                        .collect::<Result<_>>()?;
                    let expected: usize = shape.iter().product();
                    if values.len() != expected {
                        return Err(bad(
                            vno,
                            &format!("tensor `{name}` has {} values, expected {expected}", values.len()),
                        ));
                    }
                    file.tensors.push((name.to_string(), Tensor { shape, values }));
                }
                Some(other) => return Err(bad(no, &format!("unknown record `{other}`"))),
            }
        }
        Ok(file)
    }
}

fn readout_name(kind: ReadoutKind) -> &'static str {
    match kind {
        ReadoutKind::PerPosition => "per-position",
        ReadoutKind::Pooled => "pooled",
    }
}

impl<T: Real> ModelParams<T> {
    pub fn to_param_file(&self) -> ParamFile {
        let mut file = ParamFile::default();
        file.set_meta("kind", "model");
        file.set_meta("d", self.d);
        file.set_meta("blocks", self.blocks.len());
        file.set_meta("readout", readout_name(self.readout_kind));
        file.set_meta("out_dim", self.readout.d_out);
        file.set_meta(
            "dt_sharing",
            match self.dt_sharing {
                DtSharing::PerLayer => "per-layer",
                DtSharing::Shared => "shared",
            },
        );
        match &self.input {
            InputMap::Identity => file.set_meta("input", "identity"),
            InputMap::Embedding { vocab, .. } => {
                file.set_meta("input", "embedding");
                file.set_meta("vocab", vocab);
            }
        }
        for (i, b) in self.blocks.iter().enumerate() {
            file.set_meta(&format!("blocks.{i}.wave.steps"), b.wave.steps);
            file.set_meta(&format!("blocks.{i}.wave.v0_mode"), b.wave.v0_mode.name());
        }
        file.push_params("", self);
        file
    }

    pub fn from_param_file(file: &ParamFile) -> Result<Self> {
        if file.meta("kind")? != "model" {
            return Err(WaveError::ParamFormat("file does not hold a model".into()));
        }
        let d: usize = file.meta_parse("d")?;
        let blocks: usize = file.meta_parse("blocks")?;
        let out_dim: usize = file.meta_parse("out_dim")?;
        let readout_kind = match file.meta("readout")? {
            "per-position" => ReadoutKind::PerPosition,
            "pooled" => ReadoutKind::Pooled,
            other => return Err(WaveError::ParamFormat(format!("unknown readout `{other}`"))),
        };
        let dt_sharing = match file.meta("dt_sharing")? {
            "per-layer" => DtSharing::PerLayer,
            "shared" => DtSharing::Shared,
            other => return Err(WaveError::ParamFormat(format!("unknown dt sharing `{other}`"))),
        };
        let input = match file.meta("input")? {
            "identity" => InputMap::Identity,
            "embedding" => {
                let vocab: usize = file.meta_parse("vocab")?;
                InputMap::Embedding {
                    vocab,
                    table: vec![T::zero(); vocab * d],
                }
            }
            other => return Err(WaveError::ParamFormat(format!("unknown input map `{other}`"))),
        };
        let mut block_params = Vec::with_capacity(blocks);
        for i in 0..blocks {
            let steps: usize = file.meta_parse(&format!("blocks.{i}.wave.steps"))?;
            let v0_mode = match file.meta(&format!("blocks.{i}.wave.v0_mode"))? {
                "zero" => V0Mode::Zero,
                "linear" => V0Mode::Linear,
                other => return Err(WaveError::ParamFormat(format!("unknown v0 mode `{other}`"))),
            };
            let wave = LayerParams {
                w_c: vec![T::zero(); d],
                b_c: T::zero(),
                w_g: vec![T::zero(); d],
                b_g: T::zero(),
                dt_raw: T::zero(),
                steps,
                v0_mode,
                w_v: (v0_mode == V0Mode::Linear).then(|| vec![T::zero(); d * d]),
            };
            block_params.push(BlockParams {
                norm: LayerNorm::new(d),
                wave,
            });
        }
        let mut params = ModelParams {
            d,
            input,
            blocks: block_params,
            readout_kind,
            readout: Linear::zeros(d, out_dim),
            dt_sharing,
        };
        file.fill_params("", &mut params)?;
        params.validate()?;
        Ok(params)
    }
}
