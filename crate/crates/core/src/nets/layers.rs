//! Recurrent cells and residual blocks built from autodiff primitives.

use octforce_autodiff::{Graph, Padding, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{ModelParams, ParamVars};
use crate::error::NetError;

type Result<T> = std::result::Result<T, NetError>;

/// Gate weights of a (conv)GRU cell. Input weights `w*` carry the biases,
/// recurrent weights `u*` do not.
#[derive(Debug, Clone, Copy)]
pub struct GruParams {
    pub wz: Var,
    pub uz: Var,
    pub bz: Var,
    pub wr: Var,
    pub ur: Var,
    pub br: Var,
    pub wh: Var,
    pub uh: Var,
    pub bh: Var,
}

const GATE_NAMES: [&str; 9] = ["wz", "uz", "bz", "wr", "ur", "br", "wh", "uh", "bh"];

impl GruParams {
    pub fn lookup(pv: &ParamVars, prefix: &str) -> Result<Self> {
        let v = |n: &str| pv.get(&format!("{prefix}.{n}"));
        Ok(Self {
            wz: v("wz")?,
            uz: v("uz")?,
            bz: v("bz")?,
            wr: v("wr")?,
            ur: v("ur")?,
            br: v("br")?,
            wh: v("wh")?,
            uh: v("uh")?,
            bh: v("bh")?,
        })
    }

    /// Leaves for explicitly given tensors, in `wz, uz, bz, wr, ur, br, wh, uh, bh` order.
    pub fn from_vars(v: &[Var]) -> Self {
        Self { wz: v[0], uz: v[1], bz: v[2], wr: v[3], ur: v[4], br: v[5], wh: v[6], uh: v[7], bh: v[8] }
    }
}

/// Standard GRU update on `x: [batch, in]`, `h: [batch, hidden]`:
///
/// ```text
/// z  = sigmoid(Wz x + Uz h + bz)
/// r  = sigmoid(Wr x + Ur h + br)
/// h~ = tanh(Wh x + Uh (r * h) + bh)
/// h' = (1 - z) * h + z * h~
/// ```
pub fn gru_cell(g: &mut Graph, x: Var, h: Var, p: &GruParams) -> Result<Var> {
    let gate = |g: &mut Graph, w: Var, u: Var, b: Var, hin: Var| -> Result<Var> {
        let a = g.dense(x, w, Some(b))?;
        let c = g.dense(hin, u, None)?;
        Ok(g.add(a, c)?)
    };
    blend(g, h, p, gate)
}

/// GRU update with every matrix product replaced by a "same"-padded stride-1
/// convolution, so `x: [batch, c_in, len]` and `h: [batch, c_h, len]` keep their length.
pub fn convgru_cell(g: &mut Graph, x: Var, h: Var, p: &GruParams) -> Result<Var> {
    let gate = |g: &mut Graph, w: Var, u: Var, b: Var, hin: Var| -> Result<Var> {
        let a = g.conv1d(x, w, Some(b), 1, Padding::Same)?;
        let c = g.conv1d(hin, u, None, 1, Padding::Same)?;
        Ok(g.add(a, c)?)
    };
    blend(g, h, p, gate)
}

fn blend<F>(g: &mut Graph, h: Var, p: &GruParams, gate: F) -> Result<Var>
where
    F: Fn(&mut Graph, Var, Var, Var, Var) -> Result<Var>,
{
    let z = gate(g, p.wz, p.uz, p.bz, h)?;
    let z = g.sigmoid(z);
    let r = gate(g, p.wr, p.ur, p.br, h)?;
    let r = g.sigmoid(r);
    let rh = g.mul(r, h)?;
    let cand = gate(g, p.wh, p.uh, p.bh, rh)?;
    let cand = g.tanh(cand);
    let diff = g.sub(cand, h)?;
    let step = g.mul(z, diff)?;
    Ok(g.add(h, step)?)
}

/// Weights of one residual block; `proj` is present when the shortcut needs reshaping.
#[derive(Debug, Clone, Copy)]
pub struct ResBlockParams {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
    pub proj: Option<(Var, Var)>,
}

impl ResBlockParams {
    pub fn lookup(pv: &ParamVars, prefix: &str) -> Result<Self> {
        let v = |n: &str| pv.get(&format!("{prefix}.{n}"));
        let proj = match (pv.try_get(&format!("{prefix}.proj.w")), pv.try_get(&format!("{prefix}.proj.b"))) {
            (Some(w), Some(b)) => Some((w, b)),
            _ => None,
        };
        Ok(Self { w1: v("conv1.w")?, b1: v("conv1.b")?, w2: v("conv2.w")?, b2: v("conv2.b")?, proj })
    }
}

/// `relu(conv2(relu(conv1(x))) + shortcut(x))`; the first convolution and the
/// projection use `stride`, the shortcut is the identity when `proj` is absent.
pub fn resblock_1d(g: &mut Graph, x: Var, p: &ResBlockParams, stride: usize) -> Result<Var> {
    let y = g.conv1d(x, p.w1, Some(p.b1), stride, Padding::Same)?;
    let y = g.relu(y);
    let y = g.conv1d(y, p.w2, Some(p.b2), 1, Padding::Same)?;
    let short = match p.proj {
        Some((w, b)) => g.conv1d(x, w, Some(b), stride, Padding::Same)?,
        None => x,
    };
    let s = g.add(y, short)?;
    Ok(g.relu(s))
}

/// 2D analogue of [`resblock_1d`] with `stride x stride` steps.
pub fn resblock_2d(g: &mut Graph, x: Var, p: &ResBlockParams, stride: usize) -> Result<Var> {
    let st = (stride, stride);
    let y = g.conv2d(x, p.w1, Some(p.b1), st, Padding::Same)?;
    let y = g.relu(y);
    let y = g.conv2d(y, p.w2, Some(p.b2), (1, 1), Padding::Same)?;
    let short = match p.proj {
        Some((w, b)) => g.conv2d(x, w, Some(b), st, Padding::Same)?,
        None => x,
    };
    let s = g.add(y, short)?;
    Ok(g.relu(s))
}

/// Fan-in scaled uniform initializer writing into a [`ModelParams`].
pub(crate) struct Init<'a> {
    pub params: &'a mut ModelParams,
    pub rng: ChaCha8Rng,
}

impl Init<'_> {
    pub fn uniform(&mut self, name: String, shape: Vec<usize>, fan_in: usize) {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.rng.random_range(-bound..bound)).collect();
        self.params.insert(name, Tensor::new(shape, data).expect("consistent shape"));
    }

    pub fn zeros(&mut self, name: String, shape: Vec<usize>) {
        self.params.insert(name, Tensor::zeros(shape));
    }

    /// `kernel` is the spatial kernel shape (empty for a dense GRU).
    pub fn gru(&mut self, prefix: &str, n_in: usize, hidden: usize, kernel: &[usize]) {
        let area: usize = kernel.iter().product();
        for n in GATE_NAMES {
            let name = format!("{prefix}.{n}");
            let mut shape = vec![hidden];
            match &n[..1] {
                "w" => {
                    shape.push(n_in);
                    shape.extend_from_slice(kernel);
                    self.uniform(name, shape, n_in * area);
                }
                "u" => {
                    shape.push(hidden);
                    shape.extend_from_slice(kernel);
                    self.uniform(name, shape, hidden * area);
                }
                _ => self.zeros(name, shape),
            }
        }
    }

    /// `kernel` is `[k]` for 1D or `[k, k]` for 2D blocks.
    pub fn resblock(&mut self, prefix: &str, c_in: usize, c_out: usize, kernel: &[usize], needs_proj: bool) {
        let area: usize = kernel.iter().product();
        let shape = |ci: usize, k: &[usize]| {
            let mut s = vec![c_out, ci];
            s.extend_from_slice(k);
            s
        };
        self.uniform(format!("{prefix}.conv1.w"), shape(c_in, kernel), c_in * area);
        self.zeros(format!("{prefix}.conv1.b"), vec![c_out]);
        self.uniform(format!("{prefix}.conv2.w"), shape(c_out, kernel), c_out * area);
        self.zeros(format!("{prefix}.conv2.b"), vec![c_out]);
        if needs_proj {
            let ones = vec![1; kernel.len()];
            self.uniform(format!("{prefix}.proj.w"), shape(c_in, &ones), c_in);
            self.zeros(format!("{prefix}.proj.b"), vec![c_out]);
        }
    }
}
