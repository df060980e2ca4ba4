//! Building blocks shared by all model variants. Every block reads its
//! parameters through a [`Ctx`], so the same code serves training, full
//! evaluation and single-step decoding.

use nmt_tensor::{ParamId, ParamStore, Scalar, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

pub const LN_EPS: f64 = 1e-6;

/// A tape plus the parameter store it reads from.
pub struct Ctx<'t, 's, T> {
    pub tape: &'t Tape<T>,
    pub store: &'s ParamStore<T>,
}

impl<'t, 's, T: Scalar> Ctx<'t, 's, T> {
    pub fn new(tape: &'t Tape<T>, store: &'s ParamStore<T>) -> Self {
        Self { tape, store }
    }

    pub fn p(&self, id: ParamId) -> Var<'t, T> {
        self.tape.param(self.store, id)
    }

    pub fn constant(&self, t: Tensor<T>) -> Var<'t, T> {
        self.tape.constant(t)
    }
}

/// Registers parameters with their initial values.
pub struct Builder<'a, T> {
    pub store: &'a mut ParamStore<T>,
    rng: ChaCha8Rng,
}

impl<'a, T: Scalar> Builder<'a, T> {
    pub fn new(store: &'a mut ParamStore<T>, seed: u64) -> Self {
        Self {
            store,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Uniform in `±sqrt(6 / (rows + cols))`.
    pub fn matrix(&mut self, name: &str, rows: usize, cols: usize) -> Result<ParamId> {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let rng = &mut self.rng;
        let t = Tensor::from_fn(&[rows, cols], |_| T::cast(rng.random_range(-bound..bound)));
        Ok(self.store.add(name, t)?)
    }

    pub fn filled(&mut self, name: &str, shape: &[usize], v: f64) -> Result<ParamId> {
        Ok(self.store.add(name, Tensor::full(shape, T::cast(v)))?)
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<T: Scalar>(bd: &mut Builder<T>, name: &str, fan_in: usize, fan_out: usize, bias: bool) -> Result<Self> {
        let w = bd.matrix(&format!("{name}.w"), fan_in, fan_out)?;
        let b = if bias {
            Some(bd.filled(&format!("{name}.b"), &[fan_out], 0.0)?)
        } else {
            None
        };
        Ok(Self { w, b, fan_in, fan_out })
    }

    /// `x[.., fan_in] -> [.., fan_out]`, computed as one 2-D product.
    pub fn forward<'t, T: Scalar>(&self, cx: &Ctx<'t, '_, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let shape = x.shape();
        let rows = shape.iter().rev().skip(1).product::<usize>();
        let mut y = x.reshape(&[rows, self.fan_in])?.matmul(cx.p(self.w))?;
        if let Some(b) = self.b {
            y = y.add(cx.p(b))?;
        }
        let mut out = shape;
        *out.last_mut().expect("linear input has axes") = self.fan_out;
        Ok(y.reshape(&out)?)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new<T: Scalar>(bd: &mut Builder<T>, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gain: bd.filled(&format!("{name}.gain"), &[dim], 1.0)?,
            bias: bd.filled(&format!("{name}.bias"), &[dim], 0.0)?,
        })
    }

    pub fn forward<'t, T: Scalar>(&self, cx: &Ctx<'t, '_, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        Ok(x.layer_norm(cx.p(self.gain), cx.p(self.bias), LN_EPS)?)
    }
}

fn split_heads<'t, T: Scalar>(x: Var<'t, T>, nhead: usize) -> Result<Var<'t, T>> {
    let s = x.shape();
    let (b, t, hs) = (s[0], s[1], s[2]);
    Ok(x.reshape(&[b, t, nhead, hs / nhead])?.permute(&[0, 2, 1, 3])?)
}

fn merge_heads<'t, T: Scalar>(x: Var<'t, T>) -> Result<Var<'t, T>> {
    let s = x.shape();
    let (b, h, t, d) = (s[0], s[1], s[2], s[3]);
    Ok(x.permute(&[0, 2, 1, 3])?.reshape(&[b, t, h * d])?)
}

/// Scaled dot-product attention over `nhead` heads. `q` is `[B, Tq, hs]`,
/// `k`/`v` are `[B, Tk, hs]`; `mask` is additive (0 or -inf) and broadcasts
/// to `[B, heads, Tq, Tk]`. A fully masked query row attends to nothing and
/// yields zeros.
pub fn attend<'t, T: Scalar>(
    q: Var<'t, T>,
    k: Var<'t, T>,
    v: Var<'t, T>,
    nhead: usize,
    mask: Option<Var<'t, T>>,
    drop: f64,
) -> Result<Var<'t, T>> {
    let dh = q.shape()[2] / nhead;
    let (q, k, v) = (split_heads(q, nhead)?, split_heads(k, nhead)?, split_heads(v, nhead)?);
    let mut scores = q.matmul(k.transpose()?)?.scale(1.0 / (dh as f64).sqrt());
    if let Some(m) = mask {
        scores = scores.add(m)?;
    }
    let w = scores.softmax(3)?.dropout(drop)?;
    merge_heads(w.matmul(v)?)
}

/// Attention with separate query, key and value projections.
#[derive(Debug, Clone)]
pub struct MultiHeadAttn {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub nhead: usize,
    pub drop: f64,
}

impl MultiHeadAttn {
    pub fn new<T: Scalar>(bd: &mut Builder<T>, name: &str, dim: usize, hsize: usize, nhead: usize, drop: f64) -> Result<Self> {
        Ok(Self {
            q: Linear::new(bd, &format!("{name}.q"), dim, hsize, true)?,
            k: Linear::new(bd, &format!("{name}.k"), dim, hsize, true)?,
            v: Linear::new(bd, &format!("{name}.v"), dim, hsize, true)?,
            o: Linear::new(bd, &format!("{name}.o"), hsize, dim, true)?,
            nhead,
            drop,
        })
    }

    pub fn forward<'t, T: Scalar>(
        &self,
        cx: &Ctx<'t, '_, T>,
        q: Var<'t, T>,
        k: Var<'t, T>,
        v: Var<'t, T>,
        mask: Option<Var<'t, T>>,
    ) -> Result<Var<'t, T>> {
        let (q, k, v) = (self.q.forward(cx, q)?, self.k.forward(cx, k)?, self.v.forward(cx, v)?);
        let a = attend(q, k, v, self.nhead, mask, self.drop)?;
        self.o.forward(cx, a)
    }
}

/// Self-attention with one fused projection producing queries, keys and values.
#[derive(Debug, Clone)]
pub struct SelfAttn {
    pub qkv: Linear,
    pub o: Linear,
    pub nhead: usize,
    pub hsize: usize,
    pub drop: f64,
}

impl SelfAttn {
    pub fn new<T: Scalar>(bd: &mut Builder<T>, name: &str, dim: usize, hsize: usize, nhead: usize, drop: f64) -> Result<Self> {
        Ok(Self {
            qkv: Linear::new(bd, &format!("{name}.qkv"), dim, 3 * hsize, true)?,
            o: Linear::new(bd, &format!("{name}.o"), hsize, dim, true)?,
            nhead,
            hsize,
            drop,
        })
    }

    fn project<'t, T: Scalar>(&self, cx: &Ctx<'t, '_, T>, x: Var<'t, T>) -> Result<[Var<'t, T>; 3]> {
        let p = self.qkv.forward(cx, x)?;
        let h = self.hsize;
        Ok([p.narrow(2, 0, h)?, p.narrow(2, h, h)?, p.narrow(2, 2 * h, h)?])
    }

    pub fn forward<'t, T: Scalar>(&self, cx: &Ctx<'t, '_, T>, x: Var<'t, T>, mask: Option<Var<'t, T>>) -> Result<Var<'t, T>> {
        let [q, k, v] = self.project(cx, x)?;
        let a = attend(q, k, v, self.nhead, mask, self.drop)?;
        self.o.forward(cx, a)
    }

    /// One decoding step for `x[B, 1, d]`, extending the cached keys and
    /// values (`[B, t, hs]` each) with the new position.
    pub fn step<'t, T: Scalar>(
        &self,
        cx: &Ctx<'t, '_, T>,
        x: Var<'t, T>,
        cache: Option<(&Tensor<T>, &Tensor<T>)>,
    ) -> Result<(Var<'t, T>, Tensor<T>, Tensor<T>)> {
        let [q, k, v] = self.project(cx, x)?;
        let (k, v) = match cache {
            Some((ck, cv)) => (
                cx.tape.concat(&[cx.constant(ck.clone()), k], 1)?,
                cx.tape.concat(&[cx.constant(cv.clone()), v], 1)?,
            ),
            None => (k, v),
        };
        let a = attend(q, k, v, self.nhead, None, self.drop)?;
        let out = self.o.forward(cx, a)?;
        Ok((out, (*k.value()).clone(), (*v.value()).clone()))
    }
}

/// Attention from decoder queries to a fixed memory. Keys and values come
/// from one fused projection and can be computed once per source.
#[derive(Debug, Clone)]
pub struct CrossAttn {
    pub q: Linear,
    pub kv: Linear,
    pub o: Linear,
    pub nhead: usize,
    pub hsize: usize,
    pub drop: f64,
}

impl CrossAttn {
    pub fn new<T: Scalar>(bd: &mut Builder<T>, name: &str, dim: usize, hsize: usize, nhead: usize, drop: f64) -> Result<Self> {
        Ok(Self {
            q: Linear::new(bd, &format!("{name}.q"), dim, hsize, true)?,
            kv: Linear::new(bd, &format!("{name}.kv"), dim, 2 * hsize, true)?,
            o: Linear::new(bd, &format!("{name}.o"), hsize, dim, true)?,
            nhead,
            hsize,
            drop,
        })
    }

    pub fn memory<'t, T: Scalar>(&self, cx: &Ctx<'t, '_, T>, mem: Var<'t, T>) -> Result<(Var<'t, T>, Var<'t, T>)> {
        let p = self.kv.forward(cx, mem)?;
        Ok((p.narrow(2, 0, self.hsize)?, p.narrow(2, self.hsize, self.hsize)?))
    }

    pub fn forward<'t, T: Scalar>(
        &self,
        cx: &Ctx<'t, '_, T>,
        x: Var<'t, T>,
        k: Var<'t, T>,
        v: Var<'t, T>,
        mask: Option<Var<'t, T>>,
    ) -> Result<Var<'t, T>> {
        let q = self.q.forward(cx, x)?;
        let a = attend(q, k, v, self.nhead, mask, self.drop)?;
        self.o.forward(cx, a)
    }
}

/// Pre-norm residual feed-forward block: `x + dropout(W2 relu(W1 LN(x)))`.
#[derive(Debug, Clone)]
pub struct PositionwiseFF {
    pub ln: LayerNorm,
    pub w1: Linear,
    pub w2: Linear,
    pub drop: f64,
}

impl PositionwiseFF {
    pub fn new<T: Scalar>(bd: &mut Builder<T>, name: &str, dim: usize, hidden: usize, drop: f64) -> Result<Self> {
        Ok(Self {
            ln: LayerNorm::new(bd, &format!("{name}.ln"), dim)?,
            w1: Linear::new(bd, &format!("{name}.w1"), dim, hidden, true)?,
            w2: Linear::new(bd, &format!("{name}.w2"), hidden, dim, true)?,
            drop,
        })
    }

    pub fn forward<'t, T: Scalar>(&self, cx: &Ctx<'t, '_, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let h = self.w1.forward(cx, self.ln.forward(cx, x)?)?.relu();
        let h = self.w2.forward(cx, h)?.dropout(self.drop)?;
        Ok(x.add(h)?)
    }
}

/// Cumulative-average replacement for decoder self-attention, followed by a
/// feed-forward transform and input/forget gating.
#[derive(Debug, Clone)]
pub struct AverageAttn {
    pub w1: Linear,
    pub w2: Linear,
    pub gate: Linear,
    pub dim: usize,
}

impl AverageAttn {
    pub fn new<T: Scalar>(bd: &mut Builder<T>, name: &str, dim: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            w1: Linear::new(bd, &format!("{name}.w1"), dim, hidden, true)?,
            w2: Linear::new(bd, &format!("{name}.w2"), hidden, dim, true)?,
            gate: Linear::new(bd, &format!("{name}.gate"), 2 * dim, 2 * dim, true)?,
            dim,
        })
    }

    fn mix<'t, T: Scalar>(&self, cx: &Ctx<'t, '_, T>, y: Var<'t, T>, avg: Var<'t, T>) -> Result<Var<'t, T>> {
        let h = self.w2.forward(cx, self.w1.forward(cx, avg)?.relu())?;
        let g = self.gate.forward(cx, cx.tape.concat(&[y, h], 2)?)?.sigmoid();
        let (gi, gf) = (g.narrow(2, 0, self.dim)?, g.narrow(2, self.dim, self.dim)?);
        Ok(gi.mul(y)?.add(gf.mul(h)?)?)
    }

    /// Running sums of `y[B, T, d]` over positions, as a product with a
    /// lower-triangular ones matrix. Summation order matches repeated
    /// addition in [`AverageAttn::step`].
    fn running_sum<'t, T: Scalar>(cx: &Ctx<'t, '_, T>, y: Var<'t, T>) -> Result<Var<'t, T>> {
        let t = y.shape()[1];
        let tri = Tensor::from_fn(&[t, t], |i| if i % t <= i / t { T::one() } else { T::zero() });
        Ok(cx.constant(tri).matmul(y)?)
    }

    fn inverse_counts<T: Scalar>(start: usize, len: usize) -> Tensor<T> {
        Tensor::from_fn(&[len, 1], |i| T::cast(1.0 / (start + i + 1) as f64))
    }

    pub fn forward<'t, T: Scalar>(&self, cx: &Ctx<'t, '_, T>, y: Var<'t, T>) -> Result<Var<'t, T>> {
        let t = y.shape()[1];
        let avg = Self::running_sum(cx, y)?.mul(cx.constant(Self::inverse_counts(0, t)))?;
        self.mix(cx, y, avg)
    }

    /// Step `t` (1-based) for `y[B, 1, d]` given the sum of earlier inputs.
    /// Returns the output and the updated sum.
    pub fn step<'t, T: Scalar>(
        &self,
        cx: &Ctx<'t, '_, T>,
        y: Var<'t, T>,
        sum: Option<&Tensor<T>>,
        t: usize,
    ) -> Result<(Var<'t, T>, Tensor<T>)> {
        if t == 0 {
            return Err(crate::error::CoreError::Contract("average attention needs t >= 1".into()));
        }
        let prev = match sum {
            Some(s) => s.clone(),
            None => Tensor::zeros(&y.shape()),
        };
        let total = cx.constant(prev).add(y)?;
        let avg = total.mul(cx.constant(Self::inverse_counts(t - 1, 1)))?;
        let out = self.mix(cx, y, avg)?;
        Ok((out, (*total.value()).clone()))
    }
}

/// Combines several same-shaped layer outputs: a feed-forward network over
/// their concatenation plus their sum as residual, then layer normalization.
#[derive(Debug, Clone)]
pub struct ResidueCombiner {
    pub w1: Linear,
    pub w2: Linear,
    pub ln: LayerNorm,
    pub inputs: usize,
}

impl ResidueCombiner {
    pub fn new<T: Scalar>(bd: &mut Builder<T>, name: &str, inputs: usize, dim: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            w1: Linear::new(bd, &format!("{name}.w1"), inputs * dim, hidden, true)?,
            w2: Linear::new(bd, &format!("{name}.w2"), hidden, dim, true)?,
            ln: LayerNorm::new(bd, &format!("{name}.ln"), dim)?,
            inputs,
        })
    }

    pub fn forward<'t, T: Scalar>(&self, cx: &Ctx<'t, '_, T>, xs: &[Var<'t, T>]) -> Result<Var<'t, T>> {
        if xs.len() != self.inputs {
            return Err(crate::error::CoreError::Contract(format!(
                "combiner built for {} inputs, got {}",
                self.inputs,
                xs.len()
            )));
        }
        let shape = xs[0].shape();
        if let Some(bad) = xs.iter().find(|x| x.shape() != shape) {
            return Err(nmt_tensor::TensorError::Shape {
                op: "residue_combiner",
                lhs: shape,
                rhs: bad.shape(),
            }
            .into());
        }
        let axis = shape.len() - 1;
        let h = self.w1.forward(cx, cx.tape.concat(xs, axis)?)?.relu();
        let mut out = self.w2.forward(cx, h)?;
        for &x in xs {
            out = out.add(x)?;
        }
        self.ln.forward(cx, out)
    }
}

/// LSTM cell over `[B, 1, in]` inputs.
#[derive(Debug, Clone)]
pub struct LstmCell {
    pub w: Linear,
    pub dim: usize,
}

impl LstmCell {
    pub fn new<T: Scalar>(bd: &mut Builder<T>, name: &str, input: usize, dim: usize) -> Result<Self> {
        Ok(Self {
            w: Linear::new(bd, &format!("{name}.w"), input + dim, 4 * dim, true)?,
            dim,
        })
    }

    pub fn step<'t, T: Scalar>(
        &self,
        cx: &Ctx<'t, '_, T>,
        x: Var<'t, T>,
        h: Var<'t, T>,
        c: Var<'t, T>,
    ) -> Result<(Var<'t, T>, Var<'t, T>)> {
        let d = self.dim;
        let g = self.w.forward(cx, cx.tape.concat(&[x, h], 2)?)?;
        let i = g.narrow(2, 0, d)?.sigmoid();
        let f = g.narrow(2, d, d)?.sigmoid();
        let u = g.narrow(2, 2 * d, d)?.tanh();
        let o = g.narrow(2, 3 * d, d)?.sigmoid();
        let c = f.mul(c)?.add(i.mul(u)?)?;
        let h = o.mul(c.tanh())?;
        Ok((h, c))
    }
}
