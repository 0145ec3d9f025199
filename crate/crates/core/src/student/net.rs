use rand::Rng as _;

use super::Descriptors;
use crate::error::{Error, Result};
use crate::field::{FeatureField, Granularity};
use crate::gpff::Tensor;
use crate::{par, rng};

pub const DEFAULT_WIDTHS: [usize; 5] = [13, 64, 64, 64, 32];

const CHECKPOINT_VERSION: u8 = 1;

/// Learning-rate group of a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerGroup {
    Input,
    Middle,
    Output,
}

/// Fully connected ReLU network with an L2-normalized output.
///
/// Parameters live in one flat buffer: for each layer, its `out x in`
/// row-major weight matrix followed by its bias.
#[derive(Debug, Clone, PartialEq)]
pub struct StudentNet {
    widths: Vec<usize>,
    seed: u64,
    params: Vec<f64>,
    offsets: Vec<usize>,
    normalize: bool,
    /// Bumped on every parameter change, so caches can detect staleness.
    version: u64,
}

/// Activations kept from a forward pass for [`StudentNet::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    version: u64,
    rows: usize,
    /// `acts[l]` is the input to layer `l`; `acts[0]` is the descriptor batch.
    acts: Vec<Vec<f64>>,
    /// Pre-normalization output.
    out: Vec<f64>,
    norms: Vec<f64>,
}

impl StudentNet {
    /// Glorot-uniform weights, zero biases.
    pub fn new(widths: &[usize], seed: u64) -> Result<Self> {
        if widths.len() < 2 || widths.iter().any(|&w| w == 0) {
            return Err(Error::param(format!("invalid layer widths {widths:?}")));
        }
        let mut offsets = vec![0];
        for w in widths.windows(2) {
            offsets.push(offsets.last().unwrap() + w[0] * w[1] + w[1]);
        }
        let mut params = vec![0.0; *offsets.last().unwrap()];
        let mut r = rng::sub_rng(seed, &[0x1417]);
        for (l, w) in widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let start = offsets[l];
            for p in &mut params[start..start + fan_in * fan_out] {
                *p = r.random_range(-a..a);
            }
        }
        Ok(Self { widths: widths.to_vec(), seed, params, offsets, normalize: true, version: 0 })
    }

    #[cfg(test)]
    pub(crate) fn without_normalization(mut self) -> Self {
        self.normalize = false;
        self
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Mutable parameters; invalidates outstanding forward caches.
    pub fn params_mut(&mut self) -> &mut [f64] {
        self.version += 1;
        &mut self.params
    }

    /// Flat-buffer range `[start, end)` of layer `l` (weights then bias).
    pub fn layer_range(&self, l: usize) -> (usize, usize) {
        (self.offsets[l], self.offsets[l + 1])
    }

    pub fn layer_group(&self, l: usize) -> LayerGroup {
        if l == 0 {
            LayerGroup::Input
        } else if l + 1 == self.num_layers() {
            LayerGroup::Output
        } else {
            LayerGroup::Middle
        }
    }

    fn weights(&self, l: usize) -> &[f64] {
        let (i, o) = (self.widths[l], self.widths[l + 1]);
        &self.params[self.offsets[l]..self.offsets[l] + i * o]
    }

    fn bias(&self, l: usize) -> &[f64] {
        let (i, o) = (self.widths[l], self.widths[l + 1]);
        &self.params[self.offsets[l] + i * o..self.offsets[l + 1]]
    }

    fn check_input(&self, x: &Descriptors) -> Result<()> {
        if x.dim != self.input_dim() {
            return Err(Error::param(format!(
                "descriptor dim {} does not match network input {}",
                x.dim,
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Forward pass returning unit-norm embeddings and the cache for backprop.
    pub fn forward(&self, x: &Descriptors) -> Result<(FeatureField, ForwardCache)> {
        self.check_input(x)?;
        let rows = x.rows;
        let mut acts = vec![x.data.clone()];
        let layers = self.num_layers();
        for l in 0..layers {
            let (din, dout) = (self.widths[l], self.widths[l + 1]);
            let (w, b) = (self.weights(l), self.bias(l));
            let input = &acts[l];
            let relu = l + 1 < layers;
            let mut next = vec![0.0; rows * dout];
            par::for_each_row(&mut next, dout, |r, out| {
                let a = &input[r * din..(r + 1) * din];
                for (o, y) in out.iter_mut().enumerate() {
                    let wr = &w[o * din..(o + 1) * din];
                    let z = b[o] + wr.iter().zip(a).map(|(p, q)| p * q).sum::<f64>();
                    *y = if relu { z.max(0.0) } else { z };
                }
            });
            acts.push(next);
        }
        let out = acts.pop().expect("at least one layer");
        let d = self.output_dim();
        let norms: Vec<f64> = out
            .chunks_exact(d)
            .map(|r| if self.normalize { r.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12) } else { 1.0 })
            .collect();
        let emb: Vec<f64> = out
            .chunks_exact(d)
            .zip(&norms)
            .flat_map(|(r, &n)| r.iter().map(move |v| v / n))
            .collect();
        let field = FeatureField::new(emb, d, Granularity::Point)?;
        Ok((field, ForwardCache { version: self.version, rows, acts, out, norms }))
    }

    /// Embeddings only.
    pub fn embed(&self, x: &Descriptors) -> Result<FeatureField> {
        self.forward(x).map(|(f, _)| f)
    }

    /// Parameter gradient for upstream gradient `grad` (`rows x D_out`) with
    /// respect to the embeddings of the cached forward pass.
    pub fn backward(&self, cache: &ForwardCache, grad: &[f64]) -> Result<Vec<f64>> {
        if cache.version != self.version {
            return Err(Error::Usage("forward cache is stale: parameters changed since forward".into()));
        }
        let dout = self.output_dim();
        if grad.len() != cache.rows * dout {
            return Err(Error::Usage("gradient shape does not match the cached forward pass".into()));
        }
        let partials = par::map_chunks(cache.rows, |start, end| self.backward_rows(cache, grad, start, end));
        let mut total = vec![0.0; self.params.len()];
        for p in partials {
            total.iter_mut().zip(&p).for_each(|(t, v)| *t += v);
        }
        Ok(total)
    }

    fn backward_rows(&self, cache: &ForwardCache, grad: &[f64], start: usize, end: usize) -> Vec<f64> {
        let layers = self.num_layers();
        let mut g = vec![0.0; self.params.len()];
        let dout = self.output_dim();
        let mut delta = vec![0.0; dout];
        let mut prev = Vec::new();
        for r in start..end {
            // d/dz of z/|z| is (I - u u^T)/|z|.
            let up = &grad[r * dout..(r + 1) * dout];
            let z = &cache.out[r * dout..(r + 1) * dout];
            let n = cache.norms[r];
            if self.normalize {
                let proj: f64 = up.iter().zip(z).map(|(a, b)| a * b).sum::<f64>() / n;
                for k in 0..dout {
                    delta[k] = (up[k] - z[k] / n * proj) / n;
                }
            } else {
                delta.copy_from_slice(up);
            }
            delta.truncate(dout);
            for l in (0..layers).rev() {
                let (din, lout) = (self.widths[l], self.widths[l + 1]);
                let a = &cache.acts[l][r * din..(r + 1) * din];
                let w = self.weights(l);
                let off = self.offsets[l];
                for o in 0..lout {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    let gw = &mut g[off + o * din..off + (o + 1) * din];
                    gw.iter_mut().zip(a).for_each(|(gv, av)| *gv += d * av);
                    g[off + din * lout + o] += d;
                }
                if l > 0 {
                    prev.clear();
                    prev.resize(din, 0.0);
                    for o in 0..lout {
                        let d = delta[o];
                        if d != 0.0 {
                            prev.iter_mut().zip(&w[o * din..(o + 1) * din]).for_each(|(p, wv)| *p += d * wv);
                        }
                    }
                    // ReLU mask from the layer input, which is a post-activation.
                    for (p, &av) in prev.iter_mut().zip(a) {
                        if av <= 0.0 {
                            *p = 0.0;
                        }
                    }
                    std::mem::swap(&mut delta, &mut prev);
                }
            }
            delta.resize(dout, 0.0);
        }
        g
    }

    /// GPFF byte-tensor checkpoint: version, widths, seed, f32 parameters.
    pub fn to_checkpoint(&self) -> Tensor {
        let mut b = vec![CHECKPOINT_VERSION, self.normalize as u8];
        b.extend_from_slice(&(self.widths.len() as u32).to_le_bytes());
        for &w in &self.widths {
            b.extend_from_slice(&(w as u32).to_le_bytes());
        }
        b.extend_from_slice(&self.seed.to_le_bytes());
        b.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for &p in &self.params {
            b.extend_from_slice(&(p as f32).to_le_bytes());
        }
        Tensor::bytes(b)
    }

    pub fn from_checkpoint(t: &Tensor) -> Result<Self> {
        let b = t.as_bytes()?;
        let bad = || Error::format("malformed student checkpoint");
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            let s = b.get(pos..pos + n).ok_or_else(bad)?;
            pos += n;
            Ok(s)
        };
        let version = take(1)?[0];
        if version != CHECKPOINT_VERSION {
            return Err(Error::format(format!("unsupported checkpoint version {version}")));
        }
        let normalize = take(1)?[0] != 0;
        let n = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        if n > 64 {
            return Err(bad());
        }
        let widths: Vec<usize> = (0..n)
            .map(|_| take(4).map(|s| u32::from_le_bytes(s.try_into().unwrap()) as usize))
            .collect::<Result<_>>()?;
        let seed = u64::from_le_bytes(take(8)?.try_into().unwrap());
        let count = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        let mut net = Self::new(&widths, seed).map_err(|_| bad())?;
        if count != net.params.len() {
            return Err(bad());
        }
        for p in net.params.iter_mut() {
            *p = f32::from_le_bytes(take(4)?.try_into().unwrap()) as f64;
        }
        if pos != b.len() {
            return Err(bad());
        }
        net.normalize = normalize;
        Ok(net)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_desc(rows: usize, dim: usize, seed: u64) -> Descriptors {
        let mut r = rng::rng(seed);
        Descriptors::new(rows, dim, (0..rows * dim).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Straightforward per-sample forward pass, independent of the batched one.
    fn reference_forward(net: &StudentNet, x: &[f64]) -> Vec<f64> {
        let mut a = x.to_vec();
        let w = net.widths();
        for l in 0..net.num_layers() {
            let (start, _) = net.layer_range(l);
            let mut z = Vec::new();
            for o in 0..w[l + 1] {
                let mut s = net.params()[start + w[l] * w[l + 1] + o];
                for i in 0..w[l] {
                    s += net.params()[start + o * w[l] + i] * a[i];
                }
                z.push(if l + 1 < net.num_layers() { s.max(0.0) } else { s });
            }
            a = z;
        }
        let n = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        a.iter().map(|v| v / n).collect()
    }

    #[test]
    fn parameter_count_closed_form() {
        let net = StudentNet::new(&DEFAULT_WIDTHS, 0).unwrap();
        assert_eq!(net.param_count(), 13 * 64 + 64 + 2 * (64 * 64 + 64) + 64 * 32 + 32);
        assert_eq!(net.param_count(), 11_296);
    }

    #[test]
    fn seeded_init() {
        let a = StudentNet::new(&DEFAULT_WIDTHS, 7).unwrap();
        let b = StudentNet::new(&DEFAULT_WIDTHS, 7).unwrap();
        let c = StudentNet::new(&DEFAULT_WIDTHS, 8).unwrap();
        assert_eq!(a.params(), b.params());
        assert_ne!(a.params(), c.params());
        let (s, e) = a.layer_range(0);
        let bound = (6.0f64 / (13.0 + 64.0)).sqrt();
        assert!(a.params()[s..e - 64].iter().all(|p| p.abs() < bound));
        assert!(a.params()[e - 64..e].iter().all(|&p| p == 0.0));
    }

    #[test]
    fn invalid_widths() {
        assert!(StudentNet::new(&[13], 0).is_err());
        assert!(StudentNet::new(&[13, 0, 4], 0).is_err());
    }

    #[test]
    fn constant_network() {
        let mut net = StudentNet::new(&[3, 4, 2], 1).unwrap();
        let (s, e) = net.layer_range(1);
        let p = net.params_mut();
        p[s..e - 2].fill(0.0);
        p[e - 2] = 3.0;
        p[e - 1] = -4.0;
        let f = net.embed(&random_desc(5, 3, 2)).unwrap();
        for r in f.iter_rows() {
            assert_eq!(r, &[0.6, -0.8]);
        }
    }

    #[test]
    fn matches_reference_forward() {
        let net = StudentNet::new(&DEFAULT_WIDTHS, 3).unwrap();
        let x = random_desc(300, 13, 4);
        let f = net.embed(&x).unwrap();
        for i in 0..x.rows {
            let want = reference_forward(&net, x.row(i));
            for (a, b) in f.row(i).iter().zip(&want) {
                assert!((a - b).abs() <= 1e-12);
            }
            assert!((crate::field::norm(f.row(i)) - 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn duplicate_rows_embed_identically() {
        let net = StudentNet::new(&DEFAULT_WIDTHS, 3).unwrap();
        let x = random_desc(2, 13, 5);
        let dup = x.select(&[1, 0, 1]);
        let f = net.embed(&dup).unwrap();
        assert_eq!(f.row(0), f.row(2));
        assert_eq!(f.row(0), net.embed(&x).unwrap().row(1));
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let net = StudentNet::new(&DEFAULT_WIDTHS, 3).unwrap();
        let x = random_desc(10, 13, 6);
        let (_, cache) = net.forward(&x).unwrap();
        let g = net.backward(&cache, &vec![0.0; 10 * 32]).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_layer_gradient_is_outer_product_sum() {
        let net = StudentNet::new(&[3, 2], 9).unwrap().without_normalization();
        let x = random_desc(4, 3, 10);
        let up: Vec<f64> = (0..8).map(|v| v as f64 * 0.5 - 1.0).collect();
        let (_, cache) = net.forward(&x).unwrap();
        let g = net.backward(&cache, &up).unwrap();
        for o in 0..2 {
            for i in 0..3 {
                let want: f64 = (0..4).map(|r| up[r * 2 + o] * x.row(r)[i]).sum();
                assert!((g[o * 3 + i] - want).abs() < 1e-14);
            }
            let want_b: f64 = (0..4).map(|r| up[r * 2 + o]).sum();
            assert!((g[6 + o] - want_b).abs() < 1e-14);
        }
    }

    fn loss_of(net: &StudentNet, x: &Descriptors, weights: &[f64]) -> f64 {
        let f = net.embed(x).unwrap();
        f.values().iter().zip(weights).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let net = StudentNet::new(&DEFAULT_WIDTHS, 21).unwrap();
        let x = random_desc(32, 13, 22);
        let mut r = rng::rng(23);
        let up: Vec<f64> = (0..32 * 32).map(|_| r.random_range(-1.0..1.0)).collect();
        let (_, cache) = net.forward(&x).unwrap();
        let g = net.backward(&cache, &up).unwrap();
        let h = 1e-5;
        for l in 0..net.num_layers() {
            let (s, e) = net.layer_range(l);
            let mut num = Vec::new();
            for p in s..e {
                let mut plus = net.clone();
                plus.params_mut()[p] += h;
                let mut minus = net.clone();
                minus.params_mut()[p] -= h;
                num.push((loss_of(&plus, &x, &up) - loss_of(&minus, &x, &up)) / (2.0 * h));
            }
            let diff: f64 = num.iter().zip(&g[s..e]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let scale = crate::field::norm(&num).max(crate::field::norm(&g[s..e]));
            assert!(diff / scale < 1e-4, "layer {l}: relative error {}", diff / scale);
        }
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut net = StudentNet::new(&[3, 2], 0).unwrap();
        let x = random_desc(2, 3, 0);
        let (_, cache) = net.forward(&x).unwrap();
        net.params_mut()[0] += 1.0;
        assert!(matches!(net.backward(&cache, &[0.0; 4]), Err(Error::Usage(_))));
        let (_, cache) = net.forward(&x).unwrap();
        assert!(matches!(net.backward(&cache, &[0.0; 3]), Err(Error::Usage(_))));
        assert!(net.forward(&random_desc(2, 4, 0)).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let net = StudentNet::new(&DEFAULT_WIDTHS, 5).unwrap();
        let t = net.to_checkpoint();
        let back = StudentNet::from_checkpoint(&Tensor::from_bytes(&t.to_bytes()).unwrap()).unwrap();
        assert_eq!(back.widths(), net.widths());
        assert_eq!(back.seed(), 5);
        for (a, b) in back.params().iter().zip(net.params()) {
            assert_eq!(*a, *b as f32 as f64);
        }
        assert_eq!(back.to_checkpoint(), t);
    }
}
