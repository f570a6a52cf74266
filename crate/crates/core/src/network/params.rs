//! Named parameter storage and the checkpoint format.
//!
//! Checkpoint layout: `PSEG1\n`, then the entry count on its own line, then one
//! `name\trank\td0 d1 ...\n` line per entry, then every payload in entry order
//! as little-endian `f64`.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::formats::{read_bytes, write_atomic};
use crate::numerics::{Param, Tensor};

/// Index of a parameter inside [`ModelParams`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

/// Name, shape and initial distribution of one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    /// `None` marks a bias (zero init); otherwise the fan-in for He scaling.
    pub fan_in: Option<usize>,
}

/// Ordered named parameters; the order is the serialization order.
#[derive(Clone, Debug, Default)]
pub struct ModelParams {
    names: Vec<String>,
    params: Vec<Param>,
}

impl ModelParams {
    pub fn new() -> Self {
        Self::default()
    }

    /// He-normal weights (std `sqrt(2 / fan_in)`), zero biases.
    pub fn init(specs: &[ParamSpec], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = ModelParams::new();
        for s in specs {
            let value = match s.fan_in {
                Some(fan) => Tensor::randn(&s.shape, (2.0 / fan as f64).sqrt(), &mut rng),
                None => Tensor::zeros(&s.shape),
            };
            out.push(&s.name, value);
        }
        out
    }

    pub fn push(&mut self, name: &str, value: Tensor) -> ParamId {
        self.names.push(name.to_string());
        self.params.push(Param::new(value));
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.names.iter().map(String::as_str).zip(&self.params)
    }

    pub(crate) fn accumulate(&mut self, id: ParamId, grad: &Tensor) -> Result<()> {
        self.params[id.0].grad.add_assign(grad)
    }

    /// Parameters whose name starts with any of `prefixes`, in storage order.
    pub fn select<'a>(&'a self, prefixes: &'a [&str]) -> impl Iterator<Item = &'a Param> + 'a {
        self.iter().filter(move |(n, _)| prefixes.iter().any(|p| n.starts_with(p))).map(|(_, p)| p)
    }

    pub fn select_mut<'a>(&'a mut self, prefixes: &'a [&str]) -> impl Iterator<Item = &'a mut Param> + 'a {
        self.names
            .iter()
            .zip(self.params.iter_mut())
            .filter(move |(n, _)| prefixes.iter().any(|p| n.starts_with(p)))
            .map(|(_, p)| p)
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.zero_grad();
        }
    }

    /// Copies the values of every parameter named in `src` into `self`.
    pub fn copy_values_from(&mut self, src: &ModelParams) -> Result<()> {
        for (name, p) in src.iter() {
            let id = self
                .id_of(name)
                .ok_or_else(|| Error::InvalidArgument(format!("parameter `{name}` not present in target")))?;
            if self.value(id).shape() != p.value.shape() {
                return Err(Error::shape("copy_values_from", format!("parameter `{name}`")));
            }
            self.params[id.0].value = p.value.clone();
        }
        Ok(())
    }

    /// Subset of parameters (values only) whose names start with any of `prefixes`.
    pub fn subset(&self, prefixes: &[&str]) -> ModelParams {
        let mut out = ModelParams::new();
        for (n, p) in self.iter().filter(|(n, _)| prefixes.iter().any(|pre| n.starts_with(pre))) {
            out.push(n, p.value.clone());
        }
        out
    }

    /// Checks names and shapes against an architecture's spec list, in order.
    pub fn check_against(&self, specs: &[ParamSpec]) -> Result<()> {
        if specs.len() != self.len() {
            return Err(Error::InvalidArgument(format!(
                "checkpoint holds {} parameters, architecture expects {}",
                self.len(),
                specs.len()
            )));
        }
        for (s, (name, p)) in specs.iter().zip(self.iter()) {
            if s.name != name || s.shape != p.value.shape() {
                return Err(Error::InvalidArgument(format!(
                    "checkpoint entry `{name}` {:?} does not match expected `{}` {:?}",
                    p.value.shape(),
                    s.name,
                    s.shape
                )));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = format!("PSEG1\n{}\n", self.len()).into_bytes();
        for (name, p) in self.iter() {
            let dims: Vec<String> = p.value.shape().iter().map(|d| d.to_string()).collect();
            out.extend_from_slice(format!("{name}\t{}\t{}\n", dims.len(), dims.join(" ")).as_bytes());
        }
        for (_, p) in self.iter() {
            for v in p.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |m: String| Error::format(path, m);
        let mut rest = bytes;
        let mut line = || -> Result<String> {
            let end = rest.iter().position(|&b| b == b'\n').ok_or_else(|| bad("truncated manifest".into()))?;
            let s = std::str::from_utf8(&rest[..end]).map_err(|_| bad("non-UTF-8 manifest".into()))?.to_string();
            rest = &rest[end + 1..];
            Ok(s)
        };
        if line()? != "PSEG1" {
            return Err(bad("missing PSEG1 magic".into()));
        }
        let n: usize = line()?.trim().parse().map_err(|_| bad("bad entry count".into()))?;
        let mut entries = Vec::with_capacity(n);
        for _ in 0..n {
            let l = line()?;
            let fields: Vec<&str> = l.split('\t').collect();
            if fields.len() != 3 {
                return Err(bad(format!("bad manifest line `{l}`")));
            }
            let rank: usize = fields[1].parse().map_err(|_| bad(format!("bad rank in `{l}`")))?;
            let shape: Vec<usize> = fields[2]
                .split(' ')
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad(format!("bad dims in `{l}`")))?;
            if shape.len() != rank {
                return Err(bad(format!("rank {rank} does not match dims in `{l}`")));
            }
            entries.push((fields[0].to_string(), shape));
        }
        let payload = rest;
        let total: usize = entries.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
        if payload.len() != total * 8 {
            return Err(bad(format!("expected {} payload bytes, got {}", total * 8, payload.len())));
        }
        let mut out = ModelParams::new();
        let mut off = 0;
        for (name, shape) in entries {
            let n: usize = shape.iter().product();
            let data =
                payload[off..off + n * 8].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            off += n * 8;
            let t = Tensor::from_vec(&shape, data).map_err(|e| bad(e.to_string()))?;
            out.push(&name, t);
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_bytes(path)?, path)
    }

    /// Bitwise equality of names, shapes and values.
    pub fn values_bit_eq(&self, other: &ModelParams) -> bool {
        self.names == other.names && self.params.iter().zip(&other.params).all(|(a, b)| a.value.bit_eq(&b.value))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn specs() -> Vec<ParamSpec> {
        vec![
            ParamSpec { name: "a.w".into(), shape: vec![3, 3, 3, 2, 4], fan_in: Some(54) },
            ParamSpec { name: "a.b".into(), shape: vec![4], fan_in: None },
        ]
    }

    #[test]
    fn init_is_seeded_and_biases_zero() {
        let a = ModelParams::init(&specs(), 5);
        let b = ModelParams::init(&specs(), 5);
        let c = ModelParams::init(&specs(), 6);
        assert_eq!(a.to_bytes(), b.to_bytes());
        assert_ne!(a.to_bytes(), c.to_bytes());
        assert!(a.value(ParamId(1)).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn checkpoint_round_trip() {
        let a = ModelParams::init(&specs(), 1);
        let bytes = a.to_bytes();
        assert!(bytes.starts_with(b"PSEG1\n2\na.w\t5\t3 3 3 2 4\na.b\t1\t4\n"));
        let b = ModelParams::from_bytes(&bytes, Path::new("ck")).unwrap();
        assert!(a.values_bit_eq(&b));
        assert_eq!(b.to_bytes(), bytes);
        assert!(ModelParams::from_bytes(&bytes[..bytes.len() - 3], Path::new("ck")).is_err());
        b.check_against(&specs()).unwrap();
    }

    #[test]
    fn select_by_prefix() {
        let mut p = ModelParams::new();
        p.push("f.x", Tensor::zeros(&[1]));
        p.push("g.y", Tensor::zeros(&[2]));
        p.push("f.z", Tensor::zeros(&[3]));
        let sizes: Vec<usize> = p.select(&["f."]).map(|q| q.value.len()).collect();
        assert_eq!(sizes, vec![1, 3]);
        assert_eq!(p.subset(&["g."]).names(), &["g.y".to_string()]);
    }
}
