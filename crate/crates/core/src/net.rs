//! Residual colour network: a per-view point-wise extractor, max-pooling over
//! source views and a 3x3 convolutional decoder.

use std::path::Path;

use ibgs_autodiff::{Tape, Tensor, Var};
use rand::Rng;

use crate::error::{Error, Result};

pub const FEATURE_IN: usize = 7;
pub const HIDDEN: usize = 32;
pub const DECODER_IN: usize = 3 + 3 + HIDDEN;
pub const DECODER_LAYERS: usize = 9;

const MANIFEST_MAGIC: &str = "ibgs-weights 1";

/// Names and shapes of every tensor, in checkpoint order.
pub fn layout() -> Vec<(String, Vec<usize>)> {
    let mut out = Vec::new();
    for (i, (cin, cout)) in [(FEATURE_IN, HIDDEN), (HIDDEN, HIDDEN)].into_iter().enumerate() {
        out.push((format!("extractor.{i}.weight"), vec![cin, cout]));
        out.push((format!("extractor.{i}.bias"), vec![cout]));
    }
    for i in 0..DECODER_LAYERS {
        let cin = if i == 0 { DECODER_IN } else { HIDDEN };
        let cout = if i + 1 == DECODER_LAYERS { 3 } else { HIDDEN };
        out.push((format!("decoder.{i}.weight"), vec![9 * cin, cout]));
        out.push((format!("decoder.{i}.bias"), vec![cout]));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualNet {
    pub tensors: Vec<Tensor>,
}

impl ResidualNet {
    pub fn zeros() -> Self {
        ResidualNet {
            tensors: layout().into_iter().map(|(_, s)| Tensor::zeros(s)).collect(),
        }
    }

    /// He-uniform weights, zero biases, zero final layer.
    pub fn init(rng: &mut impl Rng) -> Self {
        let mut net = Self::zeros();
        let names = layout();
        let last = names.len() - 2;
        for (i, ((name, shape), t)) in names.iter().zip(net.tensors.iter_mut()).enumerate() {
            if !name.ends_with("weight") || i == last {
                continue;
            }
            let bound = (6.0 / shape[0] as f64).sqrt();
            for v in t.data_mut() {
                *v = rng.gen_range(-bound..bound);
            }
        }
        net
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        layout().iter().position(|(n, _)| n == name).map(|i| &self.tensors[i])
    }

    pub fn leaves<'t>(&self, tape: &'t Tape) -> NetVars<'t> {
        NetVars {
            vars: self.tensors.iter().map(|t| tape.leaf(t.clone())).collect(),
        }
    }

    pub fn constants<'t>(&self, tape: &'t Tape) -> NetVars<'t> {
        NetVars {
            vars: self.tensors.iter().map(|t| tape.constant(t.clone())).collect(),
        }
    }

    /// Text manifest (one `name dims...` line per tensor) and little-endian f64 payload.
    pub fn to_parts(&self) -> (String, Vec<u8>) {
        let mut manifest = String::from(MANIFEST_MAGIC);
        manifest.push('\n');
        let mut bin = Vec::with_capacity(8 * self.param_count());
        for ((name, shape), t) in layout().iter().zip(&self.tensors) {
            let dims: Vec<String> = shape.iter().map(ToString::to_string).collect();
            manifest.push_str(&format!("{} {}\n", name, dims.join(" ")));
            for v in t.data() {
                bin.extend_from_slice(&v.to_le_bytes());
            }
        }
        (manifest, bin)
    }

    pub fn from_parts(manifest: &str, bin: &[u8]) -> Result<Self> {
        const WHAT: &str = "weights manifest";
        let mut lines = manifest.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, l)) if l.trim() == MANIFEST_MAGIC => {}
            Some((i, _)) => return Err(Error::parse(WHAT, i + 1, format!("expected {:?}", MANIFEST_MAGIC))),
            None => return Err(Error::parse(WHAT, 1, "empty manifest")),
        }
        let expected = layout();
        let mut tensors = Vec::with_capacity(expected.len());
        let mut offset = 0usize;
        for (name, shape) in &expected {
            let (i, line) = lines
                .next()
                .ok_or_else(|| Error::parse(WHAT, manifest.lines().count() + 1, format!("missing tensor {}", name)))?;
            let mut fields = line.split_whitespace();
            if fields.next() != Some(name.as_str()) {
                return Err(Error::parse(WHAT, i + 1, format!("expected tensor {}", name)));
            }
            let dims: Vec<usize> = fields
                .map(|f| f.parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::parse(WHAT, i + 1, "bad dimension"))?;
            if &dims != shape {
                return Err(Error::parse(WHAT, i + 1, format!("{} has shape {:?}, expected {:?}", name, dims, shape)));
            }
            let n: usize = shape.iter().product();
            let bytes = bin
                .get(offset..offset + 8 * n)
                .ok_or_else(|| Error::Invalid(format!("weights payload too short at {}", name)))?;
            offset += 8 * n;
            let data: Vec<f64> = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            if data.iter().any(|v| !v.is_finite()) {
                return Err(Error::Invalid(format!("non-finite weight in {}", name)));
            }
            tensors.push(Tensor::new(shape.clone(), data)?);
        }
        if let Some((i, _)) = lines.next() {
            return Err(Error::parse(WHAT, i + 1, "unexpected extra tensor"));
        }
        if offset != bin.len() {
            return Err(Error::Invalid(format!(
                "weights payload has {} trailing bytes",
                bin.len() - offset
            )));
        }
        Ok(ResidualNet { tensors })
    }

    pub fn save(&self, manifest_path: &Path, bin_path: &Path) -> Result<()> {
        let (m, b) = self.to_parts();
        std::fs::write(manifest_path, m).map_err(|e| Error::io(manifest_path, e))?;
        std::fs::write(bin_path, b).map_err(|e| Error::io(bin_path, e))
    }

    pub fn load(manifest_path: &Path, bin_path: &Path) -> Result<Self> {
        let m = std::fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
        let b = std::fs::read(bin_path).map_err(|e| Error::io(bin_path, e))?;
        Self::from_parts(&m, &b)
    }
}

/// Network tensors recorded on a tape, in [`layout`] order.
#[derive(Clone)]
pub struct NetVars<'t> {
    pub vars: Vec<Var<'t>>,
}

impl<'t> NetVars<'t> {
    fn extractor(&self, i: usize) -> (Var<'t>, Var<'t>) {
        (self.vars[2 * i], self.vars[2 * i + 1])
    }

    fn decoder(&self, i: usize) -> (Var<'t>, Var<'t>) {
        (self.vars[4 + 2 * i], self.vars[5 + 2 * i])
    }

    /// Per-view features `[P, 7] -> [P, 32]`.
    pub fn extract(&self, x: Var<'t>) -> Result<Var<'t>> {
        let (w0, b0) = self.extractor(0);
        let (w1, b1) = self.extractor(1);
        let h = x.matmul(w0)?.add(b0)?.relu();
        Ok(h.matmul(w1)?.add(b1)?.relu())
    }

    /// Max over the views that are valid at each pixel; zero where none is.
    pub fn extract_and_pool(&self, tape: &'t Tape, feats: &[Var<'t>], masks: &[Vec<bool>], pixels: usize) -> Result<Var<'t>> {
        if feats.is_empty() {
            return Ok(tape.constant(Tensor::zeros(vec![pixels, HIDDEN])));
        }
        let f: Vec<Var<'t>> = feats.iter().map(|x| self.extract(*x)).collect::<Result<_>>()?;
        Ok(Var::masked_max(&f, masks)?)
    }

    /// Residual `[P, 3]` from base colour, ray directions and pooled features.
    pub fn decode(&self, c: Var<'t>, d: Var<'t>, f: Var<'t>, height: usize, width: usize) -> Result<Var<'t>> {
        let x = Var::concat_last(&[c, d, f])?.reshape(&[height, width, DECODER_IN])?;
        self.decode_from(x, 0)
    }

    /// Runs decoder layers `first..` on the `[H, W, C]` input of layer `first`.
    pub fn decode_from(&self, mut x: Var<'t>, first: usize) -> Result<Var<'t>> {
        let (height, width) = (x.shape()[0], x.shape()[1]);
        for i in first..DECODER_LAYERS {
            let (w, b) = self.decoder(i);
            x = x.conv3x3(w, b)?;
            if i + 1 < DECODER_LAYERS {
                x = x.relu();
            }
        }
        Ok(x.reshape(&[height * width, 3])?)
    }
}

/// `C + ΔC`.
pub fn compose_final<'t>(c: Var<'t>, residual: Var<'t>) -> Result<Var<'t>> {
    Ok(c.add(residual)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn layout_widths() {
        let l = layout();
        assert_eq!(l.len(), 2 * (2 + DECODER_LAYERS));
        assert_eq!(l[4].1, vec![9 * 38, 32]);
        assert_eq!(l.last().unwrap().1, vec![3]);
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let net = ResidualNet::init(&mut rand_chacha::ChaCha8Rng::seed_from_u64(3));
        let (m, b) = net.to_parts();
        assert_eq!(ResidualNet::from_parts(&m, &b).unwrap(), net);
        assert!(ResidualNet::from_parts(&m, &b[..b.len() - 8]).is_err());
        let mut longer = b.clone();
        longer.push(0);
        assert!(ResidualNet::from_parts(&m, &longer).is_err());
    }
}
