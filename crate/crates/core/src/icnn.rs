//! Input convex neural network `f` and the concave generating function `G = -f`.
//!
//! ```text
//! z₁     = softplus(W₀ x + b₀)
//! zₖ₊₁   = softplus(Wₖ zₖ + Uₖ x + bₖ)      k = 1..K-1
//! f(x)   = wᵀ z_K + uᵀ x + c
//! ```
//!
//! `f` is convex in `x` when every `Wₖ` with `k ≥ 1` and the read-out `w`
//! are entrywise non-negative; [`IcnnParams::project_constraints`] restores
//! that after each optimiser step.
//!
//! The input gradient `∇ₓ log G` is computed by an explicit backward
//! recursion written in tape primitives, so a single reverse pass yields
//! `∂/∂θ` of anything built from the portfolio weights.

use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{sigmoid, softplus, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Floor applied to `G` before taking logs or dividing by it.
pub const G_FLOOR: f64 = 1e-8;

/// Value of `G` at the uniform simplex point right after [`IcnnParams::init`].
pub const INIT_G_AT_UNIFORM: f64 = 2.0;

const FORMAT_TAG: &str = "neural-fgp-icnn";
const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct IcnnParams {
    /// Input dimension (asset count).
    pub n: usize,
    /// Hidden widths `m₁..m_K`.
    pub widths: Vec<usize>,
    /// `W₀ (m₁×n)`, then `Wₖ (mₖ₊₁×mₖ)`.
    pub hidden: Vec<Tensor>,
    /// `Uₖ (mₖ₊₁×n)` for `k = 1..K-1`.
    pub skip: Vec<Tensor>,
    /// `bₖ (mₖ₊₁×1)`.
    pub bias: Vec<Tensor>,
    /// Read-out `w (m_K×1)`.
    pub out_hidden: Tensor,
    /// Linear term `u (n×1)`.
    pub out_linear: Tensor,
    /// Offset `c`.
    pub offset: f64,
}

/// Pre-activations and activations of one plain forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardCache {
    pub pre: Vec<Vec<f64>>,
    pub act: Vec<Vec<f64>>,
    pub f_value: f64,
}

impl IcnnParams {
    /// Network with every weight and bias zero, i.e. `f ≡ offset`.
    pub fn constant(n: usize, widths: &[usize], offset: f64) -> Result<Self> {
        check_arch(n, widths)?;
        let hidden = (0..widths.len())
            .map(|k| {
                let cols = if k == 0 { n } else { widths[k - 1] };
                Tensor::zeros(widths[k], cols)
            })
            .collect();
        let skip = widths[1..].iter().map(|&m| Tensor::zeros(m, n)).collect();
        let bias = widths.iter().map(|&m| Tensor::zeros(m, 1)).collect();
        Ok(Self {
            n,
            widths: widths.to_vec(),
            hidden,
            skip,
            bias,
            out_hidden: Tensor::zeros(widths[widths.len() - 1], 1),
            out_linear: Tensor::zeros(n, 1),
            offset,
        })
    }

    /// Glorot-uniform weights, zero biases, non-negative draws on the
    /// constrained path, and `c` shifted so that `G(uniform) = 2`.
    pub fn init(n: usize, widths: &[usize], seed: u64) -> Result<Self> {
        let mut p = Self::constant(n, widths, 0.0)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |t: &mut Tensor, nonneg: bool| {
            let a = (6.0 / (t.cols() + t.rows()) as f64).sqrt();
            for v in t.data_mut() {
                let draw = rng.gen_range(-a..a);
                *v = if nonneg { draw.abs() } else { draw };
            }
        };
        for (k, w) in p.hidden.iter_mut().enumerate() {
            fill(w, k >= 1);
        }
        for u in &mut p.skip {
            fill(u, false);
        }
        // read-out vectors: fan_out = 1
        let mut fill_vec = |t: &mut Tensor, nonneg: bool| {
            let a = (6.0 / (t.rows() + 1) as f64).sqrt();
            for v in t.data_mut() {
                let draw = rng.gen_range(-a..a);
                *v = if nonneg { draw.abs() } else { draw };
            }
        };
        fill_vec(&mut p.out_hidden, true);
        fill_vec(&mut p.out_linear, false);

        let uniform = vec![1.0 / n as f64; n];
        let (f0, _) = p.forward(&uniform)?;
        p.offset = -f0 - INIT_G_AT_UNIFORM;
        Ok(p)
    }

    pub fn depth(&self) -> usize {
        self.widths.len()
    }

    pub fn validate(&self) -> Result<()> {
        check_arch(self.n, &self.widths)?;
        let k = self.widths.len();
        let bad = |what: String| Err(Error::dim("icnn", what));
        if self.hidden.len() != k || self.bias.len() != k || self.skip.len() + 1 != k {
            return bad(format!(
                "{} hidden, {} skip, {} bias tensors for depth {k}",
                self.hidden.len(),
                self.skip.len(),
                self.bias.len()
            ));
        }
        for (i, w) in self.hidden.iter().enumerate() {
            let cols = if i == 0 { self.n } else { self.widths[i - 1] };
            if w.shape() != (self.widths[i], cols) {
                return bad(format!(
                    "W{i} is {:?}, expected {:?}",
                    w.shape(),
                    (self.widths[i], cols)
                ));
            }
        }
        for (i, u) in self.skip.iter().enumerate() {
            if u.shape() != (self.widths[i + 1], self.n) {
                return bad(format!("U{} is {:?}", i + 1, u.shape()));
            }
        }
        for (i, b) in self.bias.iter().enumerate() {
            if b.shape() != (self.widths[i], 1) {
                return bad(format!("b{i} is {:?}", b.shape()));
            }
        }
        if self.out_hidden.shape() != (self.widths[k - 1], 1) {
            return bad(format!("w is {:?}", self.out_hidden.shape()));
        }
        if self.out_linear.shape() != (self.n, 1) {
            return bad(format!("u is {:?}", self.out_linear.shape()));
        }
        Ok(())
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n {
            return Err(Error::dim(
                "icnn",
                format!("network expects {} inputs, got {}", self.n, x.len()),
            ));
        }
        if x.iter().any(|&v| !(v > 0.0)) || (x.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Data(format!("{x:?} is not in the open simplex")));
        }
        Ok(())
    }

    /// Plain `f64` evaluation of `f(x)`.
    pub fn forward(&self, x: &[f64]) -> Result<(f64, ForwardCache)> {
        self.validate()?;
        self.check_point(x)?;
        Ok(self.forward_unchecked(x))
    }

    /// Same recursion without simplex checks; used by finite-difference probes
    /// that step slightly off the simplex.
    pub fn forward_unchecked(&self, x: &[f64]) -> (f64, ForwardCache) {
        let affine = |w: &Tensor, input: &[f64], acc: &mut [f64]| {
            for (r, a) in acc.iter_mut().enumerate() {
                *a += (0..w.cols()).map(|c| w.get(r, c) * input[c]).sum::<f64>();
            }
        };
        let mut pre = Vec::with_capacity(self.depth());
        let mut act: Vec<Vec<f64>> = Vec::with_capacity(self.depth());
        for k in 0..self.depth() {
            let mut p = self.bias[k].data().to_vec();
            match act.last() {
                None => affine(&self.hidden[0], x, &mut p),
                Some(z) => {
                    affine(&self.hidden[k], z, &mut p);
                    affine(&self.skip[k - 1], x, &mut p);
                }
            }
            act.push(p.iter().map(|&v| softplus(v)).collect());
            pre.push(p);
        }
        let z = act.last().expect("depth >= 1");
        let f_value = dot(self.out_hidden.data(), z) + dot(self.out_linear.data(), x) + self.offset;
        (f_value, ForwardCache { pre, act, f_value })
    }

    /// `G(x) = -f(x)`, without flooring.
    pub fn generating_function(&self, x: &[f64]) -> Result<f64> {
        Ok(-self.forward(x)?.0)
    }

    /// `∇ₓ f` by the hand-written recursion on plain `f64` (no tape).
    pub fn input_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let (_, cache) = self.forward(x)?;
        Ok(self.input_gradient_from_cache(&cache))
    }

    fn input_gradient_from_cache(&self, cache: &ForwardCache) -> Vec<f64> {
        let mut grad = self.out_linear.data().to_vec();
        let mut delta = self.out_hidden.data().to_vec();
        for k in (0..self.depth()).rev() {
            let a: Vec<f64> = delta
                .iter()
                .zip(&cache.pre[k])
                .map(|(d, &p)| d * sigmoid(p))
                .collect();
            let into_x = if k == 0 {
                &self.hidden[0]
            } else {
                &self.skip[k - 1]
            };
            for (c, g) in grad.iter_mut().enumerate() {
                *g += (0..into_x.rows())
                    .map(|r| into_x.get(r, c) * a[r])
                    .sum::<f64>();
            }
            if k > 0 {
                let w = &self.hidden[k];
                delta = (0..w.cols())
                    .map(|c| (0..w.rows()).map(|r| w.get(r, c) * a[r]).sum())
                    .collect();
            }
        }
        grad
    }

    /// `∇ₓ log max(G, G_FLOOR)` evaluated on a fresh tape.
    pub fn grad_log_g(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.validate()?;
        self.check_point(x)?;
        let mut tape = Tape::new();
        let vars = ParamVars::register(&mut tape, self);
        let xv = tape.leaf(Tensor::column(x.to_vec()));
        let eval = eval_on_tape(&mut tape, &vars, self, xv)?;
        Ok(tape.value(eval.grad_log_g).data().to_vec())
    }

    /// Tensors in canonical order: `W₀..`, `U₁..`, `b₀..`, `w`, `u`, `c`.
    pub fn tensors(&self) -> Vec<Tensor> {
        let mut out: Vec<Tensor> = Vec::with_capacity(3 * self.depth() + 2);
        out.extend(self.hidden.iter().cloned());
        out.extend(self.skip.iter().cloned());
        out.extend(self.bias.iter().cloned());
        out.push(self.out_hidden.clone());
        out.push(self.out_linear.clone());
        out.push(Tensor::scalar(self.offset));
        out
    }

    /// Mutable views in the same order as [`IcnnParams::tensors`]; the offset is
    /// exposed as a one-element slice.
    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::with_capacity(3 * self.depth() + 2);
        out.extend(self.hidden.iter_mut().map(Tensor::data_mut));
        out.extend(self.skip.iter_mut().map(Tensor::data_mut));
        out.extend(self.bias.iter_mut().map(Tensor::data_mut));
        out.push(self.out_hidden.data_mut());
        out.push(self.out_linear.data_mut());
        out.push(std::slice::from_mut(&mut self.offset));
        out
    }

    /// Which canonical tensors carry the non-negativity constraint.
    pub fn constrained_mask(&self) -> Vec<bool> {
        let k = self.depth();
        let mut mask = Vec::with_capacity(3 * k + 2);
        mask.extend((0..k).map(|i| i >= 1));
        mask.extend(std::iter::repeat_n(false, 2 * k - 1));
        mask.extend([true, false, false]);
        mask
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(Tensor::len).sum()
    }

    /// Clamp every constrained entry at zero.
    pub fn project_constraints(&mut self) {
        for w in self.hidden.iter_mut().skip(1) {
            for v in w.data_mut() {
                *v = v.max(0.0);
            }
        }
        for v in self.out_hidden.data_mut() {
            *v = v.max(0.0);
        }
    }

    pub fn projected(&self) -> Self {
        let mut p = self.clone();
        p.project_constraints();
        p
    }

    pub fn is_feasible(&self) -> bool {
        self.hidden
            .iter()
            .skip(1)
            .flat_map(|w| w.data())
            .all(|&v| v >= 0.0)
            && self.out_hidden.data().iter().all(|&v| v >= 0.0)
    }

    pub fn to_json(&self) -> Result<String> {
        let names = self.tensor_names();
        let arrays = self
            .tensors()
            .into_iter()
            .zip(names)
            .map(|(t, name)| StoredArray {
                name,
                rows: t.rows(),
                cols: t.cols(),
                data: encode_f64s(t.data()),
            })
            .collect();
        let doc = StoredParams {
            format: FORMAT_TAG.into(),
            version: FORMAT_VERSION,
            n: self.n,
            widths: self.widths.clone(),
            activation: "softplus".into(),
            arrays,
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: StoredParams = serde_json::from_str(text)?;
        if doc.format != FORMAT_TAG || doc.version != FORMAT_VERSION {
            return Err(Error::Data(format!(
                "unsupported parameter document {} v{}",
                doc.format, doc.version
            )));
        }
        if doc.activation != "softplus" {
            return Err(Error::Data(format!(
                "unsupported activation `{}`",
                doc.activation
            )));
        }
        let mut p = Self::constant(doc.n, &doc.widths, 0.0)?;
        let expected = p.tensor_names();
        if doc.arrays.len() != expected.len() {
            return Err(Error::Data(format!(
                "expected {} arrays, found {}",
                expected.len(),
                doc.arrays.len()
            )));
        }
        let shapes: Vec<(usize, usize)> = p.tensors().iter().map(Tensor::shape).collect();
        for (((slot, arr), name), shape) in p
            .slices_mut()
            .into_iter()
            .zip(&doc.arrays)
            .zip(&expected)
            .zip(shapes)
        {
            if &arr.name != name || (arr.rows, arr.cols) != shape {
                return Err(Error::Data(format!(
                    "array `{}` {}x{} does not match `{name}` {}x{}",
                    arr.name, arr.rows, arr.cols, shape.0, shape.1
                )));
            }
            let values = decode_f64s(&arr.data)?;
            if values.len() != slot.len() {
                return Err(Error::Data(format!(
                    "array `{name}` has {} values",
                    values.len()
                )));
            }
            slot.copy_from_slice(&values);
        }
        Ok(p)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    fn tensor_names(&self) -> Vec<String> {
        let k = self.depth();
        let mut names: Vec<String> = (0..k).map(|i| format!("W{i}")).collect();
        names.extend((1..k).map(|i| format!("U{i}")));
        names.extend((0..k).map(|i| format!("b{i}")));
        names.extend(["w".into(), "u".into(), "c".into()]);
        names
    }
}

fn check_arch(n: usize, widths: &[usize]) -> Result<()> {
    if n < 2 {
        return Err(Error::Config(format!("ICNN needs n >= 2 inputs, got {n}")));
    }
    if widths.is_empty() || widths.contains(&0) {
        return Err(Error::Config(format!("invalid hidden widths {widths:?}")));
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Serialize, Deserialize)]
struct StoredParams {
    format: String,
    version: u32,
    n: usize,
    widths: Vec<usize>,
    activation: String,
    arrays: Vec<StoredArray>,
}

/// Row-major values as base64 of little-endian IEEE-754 doubles.
#[derive(Serialize, Deserialize)]
struct StoredArray {
    name: String,
    rows: usize,
    cols: usize,
    data: String,
}

fn encode_f64s(values: &[f64]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    B64.encode(bytes)
}

fn decode_f64s(text: &str) -> Result<Vec<f64>> {
    let bytes = B64
        .decode(text)
        .map_err(|e| Error::Data(format!("bad base64 array: {e}")))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Data(
            "array byte length is not a multiple of 8".into(),
        ));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

/// Tape handles for every parameter tensor.
#[derive(Clone, Debug)]
pub struct ParamVars {
    pub hidden: Vec<Var>,
    pub skip: Vec<Var>,
    pub bias: Vec<Var>,
    pub out_hidden: Var,
    pub out_linear: Var,
    pub offset: Var,
}

impl ParamVars {
    pub fn register(tape: &mut Tape, p: &IcnnParams) -> Self {
        Self {
            hidden: p.hidden.iter().map(|t| tape.leaf(t.clone())).collect(),
            skip: p.skip.iter().map(|t| tape.leaf(t.clone())).collect(),
            bias: p.bias.iter().map(|t| tape.leaf(t.clone())).collect(),
            out_hidden: tape.leaf(p.out_hidden.clone()),
            out_linear: tape.leaf(p.out_linear.clone()),
            offset: tape.scalar(p.offset),
        }
    }

    /// Handles in canonical order.
    pub fn all(&self) -> Vec<Var> {
        let mut v = Vec::new();
        v.extend(&self.hidden);
        v.extend(&self.skip);
        v.extend(&self.bias);
        v.extend([self.out_hidden, self.out_linear, self.offset]);
        v
    }

    /// Collect adjoints into a parameter-shaped value; unreached tensors are zero.
    pub fn gradients(&self, tape: &Tape, like: &IcnnParams) -> IcnnParams {
        let mut g = like.clone();
        for (slot, var) in g.slices_mut().into_iter().zip(self.all()) {
            match tape.grad(var) {
                Some(t) => slot.copy_from_slice(t.data()),
                None => slot.fill(0.0),
            }
        }
        g
    }
}

/// Handles produced by [`eval_on_tape`], all indexed by input column.
#[derive(Clone, Copy, Debug)]
pub struct TapeEval {
    /// `f`, shape `1×T`.
    pub f: Var,
    /// `G = -f` before flooring, shape `1×T`.
    pub g: Var,
    /// `∇ₓ log max(G, G_FLOOR)`, shape `n×T`.
    pub grad_log_g: Var,
}

/// Evaluate the network on the columns of `x` (`n×T`) and the input
/// gradient of `log G`, all differentiable with respect to `vars`.
pub fn eval_on_tape(tape: &mut Tape, vars: &ParamVars, p: &IcnnParams, x: Var) -> Result<TapeEval> {
    let (n, cols) = tape.value(x).shape();
    if n != p.n {
        return Err(Error::dim(
            "icnn",
            format!("network expects {} inputs, got {n}", p.n),
        ));
    }
    let depth = p.depth();

    let mut pre = Vec::with_capacity(depth);
    let mut z: Option<Var> = None;
    for k in 0..depth {
        let b = tape.broadcast_cols(vars.bias[k], cols)?;
        let lin = match z {
            None => tape.matmul(vars.hidden[0], x)?,
            Some(zk) => {
                let from_z = tape.matmul(vars.hidden[k], zk)?;
                let from_x = tape.matmul(vars.skip[k - 1], x)?;
                tape.add(from_z, from_x)?
            }
        };
        let pk = tape.add(lin, b)?;
        z = Some(tape.softplus(pk));
        pre.push(pk);
    }
    let z_last = z.expect("depth >= 1");
    let w_t = tape.transpose(vars.out_hidden);
    let u_t = tape.transpose(vars.out_linear);
    let wz = tape.matmul(w_t, z_last)?;
    let ux = tape.matmul(u_t, x)?;
    let c = tape.broadcast_cols(vars.offset, cols)?;
    let f = tape.add(wz, ux)?;
    let f = tape.add(f, c)?;

    // ∇ₓ f by reverse recursion through the layers
    let mut delta = tape.broadcast_cols(vars.out_hidden, cols)?;
    let mut grad = tape.broadcast_cols(vars.out_linear, cols)?;
    for k in (0..depth).rev() {
        let s = tape.sigmoid(pre[k]);
        let a = tape.mul(delta, s)?;
        let into_x = if k == 0 {
            vars.hidden[0]
        } else {
            vars.skip[k - 1]
        };
        let into_x_t = tape.transpose(into_x);
        let contrib = tape.matmul(into_x_t, a)?;
        grad = tape.add(grad, contrib)?;
        if k > 0 {
            let w_t = tape.transpose(vars.hidden[k]);
            delta = tape.matmul(w_t, a)?;
        }
    }

    let g = tape.scale(f, -1.0);
    let g_floor = tape.max_scalar(g, G_FLOOR);
    let denom = tape.broadcast_rows(g_floor, n)?;
    let ratio = tape.div(grad, denom)?;
    let grad_log_g = tape.scale(ratio, -1.0);
    Ok(TapeEval { f, g, grad_log_g })
}
