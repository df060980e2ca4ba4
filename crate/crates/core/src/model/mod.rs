//! Transformer encoder-decoder with average-attention, transparent,
//! hierarchical and recurrent-decoder variants.

mod config;
pub mod layers;
mod positional;

use nmt_corpus::PAD;
use nmt_tensor::{ParamId, ParamStore, Scalar, Tape, Tensor, Var};

pub use config::{ModelConfig, Variant};
pub use positional::PositionalCache;

use crate::error::{CoreError, Result};
use layers::{
    AverageAttn, Builder, CrossAttn, Ctx, LayerNorm, Linear, LstmCell, PositionwiseFF, ResidueCombiner, SelfAttn,
};

/// Row-major `rows x cols` matrix of token ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenBatch {
    pub data: Vec<u32>,
    pub rows: usize,
    pub cols: usize,
}

impl TokenBatch {
    pub fn new(data: Vec<u32>, rows: usize, cols: usize) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(CoreError::Contract(format!("{} ids do not fill {rows}x{cols}", data.len())));
        }
        Ok(Self { data, rows, cols })
    }

    /// Pads rows on the right with `<pad>`.
    pub fn from_rows(rows: &[Vec<u32>]) -> Self {
        let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            data.extend_from_slice(r);
            data.extend(std::iter::repeat(PAD).take(cols - r.len()));
        }
        Self {
            data,
            rows: rows.len(),
            cols,
        }
    }

    pub fn row(&self, r: usize) -> &[u32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Columns `start..start + len` of every row.
    pub fn columns(&self, start: usize, len: usize) -> Self {
        let data = (0..self.rows)
            .flat_map(|r| self.row(r)[start..start + len].iter().copied())
            .collect();
        Self {
            data,
            rows: self.rows,
            cols: len,
        }
    }

    fn indices(&self) -> Vec<usize> {
        self.data.iter().map(|&i| i as usize).collect()
    }
}

/// Encoder result on the tape that produced it.
pub struct EncoderOutput<'t, T> {
    pub final_out: Var<'t, T>,
    /// Embedding output followed by each layer's output; transparent variant only.
    pub per_layer: Option<Vec<Var<'t, T>>>,
    /// Additive mask `[B, 1, 1, S]`: 0 on tokens, -inf on padding.
    pub src_mask: Tensor<T>,
}

#[derive(Debug, Clone)]
enum LayerCache<T> {
    Empty,
    Kv(Tensor<T>, Tensor<T>),
    Sum(Tensor<T>),
}

/// Per-sentence incremental decoding state for a batch of `rows` hypotheses.
#[derive(Debug, Clone)]
pub struct DecoderIncrementalState<T> {
    rows: usize,
    step: usize,
    layers: Vec<LayerCache<T>>,
    rnn: Vec<(Tensor<T>, Tensor<T>)>,
    cross: Vec<(Tensor<T>, Tensor<T>)>,
    src_mask: Tensor<T>,
}

impl<T: Scalar> DecoderIncrementalState<T> {
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Number of tokens consumed so far.
    pub fn step(&self) -> usize {
        self.step
    }

    /// Bytes held by all cached tensors.
    pub fn byte_size(&self) -> usize {
        let caches: usize = self
            .layers
            .iter()
            .map(|c| match c {
                LayerCache::Empty => 0,
                LayerCache::Kv(k, v) => k.byte_size() + v.byte_size(),
                LayerCache::Sum(s) => s.byte_size(),
            })
            .sum();
        let rnn: usize = self.rnn.iter().map(|(h, c)| h.byte_size() + c.byte_size()).sum();
        let cross: usize = self.cross.iter().map(|(k, v)| k.byte_size() + v.byte_size()).sum();
        caches + rnn + cross + self.src_mask.byte_size()
    }

    /// Keeps rows `idx` (with repetition) in the given order.
    pub fn reorder(&mut self, idx: &[usize]) -> Result<()> {
        let pick = |t: &Tensor<T>| t.select_rows(idx);
        for c in &mut self.layers {
            *c = match c {
                LayerCache::Empty => LayerCache::Empty,
                LayerCache::Kv(k, v) => LayerCache::Kv(pick(k)?, pick(v)?),
                LayerCache::Sum(s) => LayerCache::Sum(pick(s)?),
            };
        }
        for (h, c) in &mut self.rnn {
            *h = pick(h)?;
            *c = pick(c)?;
        }
        for (k, v) in &mut self.cross {
            *k = pick(k)?;
            *v = pick(v)?;
        }
        self.src_mask = pick(&self.src_mask)?;
        self.rows = idx.len();
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct EncLayer {
    ln: LayerNorm,
    attn: SelfAttn,
    ff: PositionwiseFF,
}

#[derive(Debug, Clone)]
enum SelfBlock {
    Attn(SelfAttn),
    Avg(AverageAttn),
}

#[derive(Debug, Clone)]
struct DecLayer {
    ln_self: LayerNorm,
    self_block: SelfBlock,
    ln_cross: LayerNorm,
    cross: CrossAttn,
    ff: PositionwiseFF,
    /// Softmax logits over encoder layer outputs (transparent variant).
    mix: Option<ParamId>,
}

#[derive(Debug, Clone)]
struct Rnmt {
    cells: Vec<LstmCell>,
    ln_ctx: LayerNorm,
    cross: CrossAttn,
    reduce: Linear,
}

/// A translation model and its parameters.
#[derive(Debug)]
pub struct Model<T> {
    cfg: ModelConfig,
    store: ParamStore<T>,
    pos: PositionalCache,
    src_emb: ParamId,
    tgt_emb: ParamId,
    cls_w: ParamId,
    cls_b: ParamId,
    enc_layers: Vec<EncLayer>,
    enc_combiners: Vec<ResidueCombiner>,
    enc_ln: Option<LayerNorm>,
    dec_layers: Vec<DecLayer>,
    dec_combiners: Vec<ResidueCombiner>,
    dec_ln: Option<LayerNorm>,
    rnmt: Option<Rnmt>,
}

fn combiners<T: Scalar>(bd: &mut Builder<T>, prefix: &str, cfg: &ModelConfig) -> Result<Vec<ResidueCombiner>> {
    if cfg.variant != Variant::Hierarchical {
        return Ok(Vec::new());
    }
    (0..cfg.nlayer.div_ceil(2))
        .map(|g| {
            let group = (cfg.nlayer - 2 * g).min(2);
            ResidueCombiner::new(bd, &format!("{prefix}.combiner.{g}"), group + 1, cfg.isize, cfg.ff_hsize)
        })
        .collect()
}

fn neg_inf_mask<T: Scalar>(shape: &[usize], masked: impl Fn(usize) -> bool) -> Tensor<T> {
    Tensor::from_fn(shape, |i| if masked(i) { T::neg_infinity() } else { T::zero() })
}

impl<T: Scalar> Model<T> {
    /// Builds a freshly initialized model; initialization is a function of `seed`.
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut bd = Builder::new(&mut store, seed);
        let (d, hs, nh) = (cfg.isize, cfg.attn_hsize, cfg.nhead);

        let src_emb = bd.matrix("src_emb", cfg.src_vocab, d)?;
        let tgt_emb = if cfg.share_emb {
            src_emb
        } else {
            bd.matrix("tgt_emb", cfg.tgt_vocab, d)?
        };

        let mut enc_layers = Vec::with_capacity(cfg.nlayer);
        for l in 0..cfg.nlayer {
            let p = format!("enc.{l}");
            enc_layers.push(EncLayer {
                ln: LayerNorm::new(&mut bd, &format!("{p}.ln"), d)?,
                attn: SelfAttn::new(&mut bd, &format!("{p}.attn"), d, hs, nh, cfg.attn_drop)?,
                ff: PositionwiseFF::new(&mut bd, &format!("{p}.ff"), d, cfg.ff_hsize, cfg.drop)?,
            });
        }
        let enc_combiners = combiners(&mut bd, "enc", &cfg)?;
        let enc_ln = if cfg.norm_output {
            Some(LayerNorm::new(&mut bd, "enc.out_ln", d)?)
        } else {
            None
        };

        let mut dec_layers = Vec::new();
        let mut rnmt = None;
        if cfg.variant == Variant::RnmtDec {
            let mut cells = Vec::with_capacity(cfg.nlayer);
            for l in 0..cfg.nlayer {
                let input = if l == 0 { d } else { 2 * d };
                cells.push(LstmCell::new(&mut bd, &format!("dec.rnn.{l}"), input, d)?);
            }
            rnmt = Some(Rnmt {
                cells,
                ln_ctx: LayerNorm::new(&mut bd, "dec.ctx_ln", d)?,
                cross: CrossAttn::new(&mut bd, "dec.cross", d, hs, nh, cfg.attn_drop)?,
                reduce: Linear::new(&mut bd, "dec.reduce", 2 * d, d, true)?,
            });
        } else {
            for l in 0..cfg.nlayer {
                let p = format!("dec.{l}");
                let self_block = if cfg.variant == Variant::AvgAttn {
                    SelfBlock::Avg(AverageAttn::new(&mut bd, &format!("{p}.avg"), d, cfg.ff_hsize)?)
                } else {
                    SelfBlock::Attn(SelfAttn::new(&mut bd, &format!("{p}.self"), d, hs, nh, cfg.attn_drop)?)
                };
                let mix = if cfg.variant == Variant::Transparent {
                    Some(bd.filled(&format!("{p}.mix"), &[cfg.nlayer + 1], 0.0)?)
                } else {
                    None
                };
                dec_layers.push(DecLayer {
                    ln_self: LayerNorm::new(&mut bd, &format!("{p}.ln_self"), d)?,
                    self_block,
                    ln_cross: LayerNorm::new(&mut bd, &format!("{p}.ln_cross"), d)?,
                    cross: CrossAttn::new(&mut bd, &format!("{p}.cross"), d, hs, nh, cfg.attn_drop)?,
                    ff: PositionwiseFF::new(&mut bd, &format!("{p}.ff"), d, cfg.ff_hsize, cfg.drop)?,
                    mix,
                });
            }
        }
        let dec_combiners = combiners(&mut bd, "dec", &cfg)?;
        let dec_ln = if cfg.norm_output && cfg.variant != Variant::RnmtDec {
            Some(LayerNorm::new(&mut bd, "dec.out_ln", d)?)
        } else {
            None
        };
        let cls_w = if cfg.bind_decoder_emb {
            tgt_emb
        } else {
            bd.matrix("classifier.w", cfg.tgt_vocab, d)?
        };
        let cls_b = bd.filled("classifier.b", &[cfg.tgt_vocab], 0.0)?;

        Ok(Self {
            pos: PositionalCache::new(d, cfg.cache_len),
            cfg,
            store,
            src_emb,
            tgt_emb,
            cls_w,
            cls_b,
            enc_layers,
            enc_combiners,
            enc_ln,
            dec_layers,
            dec_combiners,
            dec_ln,
            rnmt,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn param_count(&self) -> usize {
        self.store.num_elements()
    }

    pub fn positional(&self) -> &PositionalCache {
        &self.pos
    }

    /// Ids of the encoder and decoder embedding tables and the classifier weight.
    pub fn embedding_ids(&self) -> (ParamId, ParamId, ParamId) {
        (self.src_emb, self.tgt_emb, self.cls_w)
    }

    /// Replaces every parameter by name; names and shapes must match exactly.
    pub fn load_params<'a>(&mut self, params: impl IntoIterator<Item = (&'a str, Tensor<T>)>) -> Result<()> {
        let mut seen = vec![false; self.store.len()];
        for (name, t) in params {
            let id = self
                .store
                .id(name)
                .ok_or_else(|| CoreError::Format(format!("unexpected parameter {name}")))?;
            self.store
                .set(id, t)
                .map_err(|e| CoreError::Format(format!("parameter {name}: {e}")))?;
            seen[id.0] = true;
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(CoreError::Format(format!(
                "missing parameter {}",
                self.store.name(nmt_tensor::ParamId(i))
            )));
        }
        Ok(())
    }

    /// Scaled embedding plus positions `start..`, with dropout and optional noise.
    fn embed<'t>(&self, cx: &Ctx<'t, '_, T>, table: ParamId, ids: &TokenBatch, start: usize) -> Result<Var<'t, T>> {
        let e = cx
            .tape
            .embedding(cx.p(table), &ids.indices(), &[ids.rows, ids.cols])?
            .scale((self.cfg.isize as f64).sqrt());
        let pe = cx.constant(self.pos.rows(start, ids.cols));
        Ok(e.add(pe)?.dropout(self.cfg.drop)?.noise(self.cfg.emb_noise)?)
    }

    /// Applies `layer` `nlayer` times. The hierarchical variant folds every
    /// two layer outputs into a running summary with a combiner; the summary
    /// feeds the next layer and is the result.
    fn stack<'t>(
        &self,
        cx: &Ctx<'t, '_, T>,
        x: Var<'t, T>,
        combiners: &[ResidueCombiner],
        record: &mut Option<Vec<Var<'t, T>>>,
        mut layer: impl FnMut(usize, Var<'t, T>) -> Result<Var<'t, T>>,
    ) -> Result<Var<'t, T>> {
        if let Some(r) = record.as_mut() {
            r.push(x);
        }
        let n = self.cfg.nlayer;
        if self.cfg.variant != Variant::Hierarchical {
            let mut x = x;
            for l in 0..n {
                x = layer(l, x)?;
                if let Some(r) = record.as_mut() {
                    r.push(x);
                }
            }
            return Ok(x);
        }
        let mut summary = x;
        let mut input = x;
        let mut group = Vec::with_capacity(3);
        for l in 0..n {
            let h = layer(l, input)?;
            group.push(h);
            input = h;
            if group.len() == 2 || l + 1 == n {
                let mut xs = vec![summary];
                xs.append(&mut group);
                summary = combiners[l / 2].forward(cx, &xs)?;
                input = summary;
            }
        }
        Ok(summary)
    }

    pub fn encode<'t>(&self, cx: &Ctx<'t, '_, T>, src: &TokenBatch) -> Result<EncoderOutput<'t, T>> {
        if src.cols == 0 || src.rows == 0 {
            return Err(CoreError::Contract("cannot encode an empty sequence".into()));
        }
        let s = src.cols;
        let src_mask = neg_inf_mask(&[src.rows, 1, 1, s], |i| src.data[i] == PAD);
        let mask = cx.constant(src_mask.clone());
        let x = self.embed(cx, self.src_emb, src, 0)?;
        let mut record = (self.cfg.variant == Variant::Transparent).then(Vec::new);
        let out = self.stack(cx, x, &self.enc_combiners, &mut record, |l, x| {
            let lay = &self.enc_layers[l];
            let a = lay.attn.forward(cx, lay.ln.forward(cx, x)?, Some(mask))?;
            let x = x.add(a.dropout(self.cfg.drop)?)?;
            lay.ff.forward(cx, x)
        })?;
        let final_out = match &self.enc_ln {
            Some(ln) => ln.forward(cx, out)?,
            None => out,
        };
        Ok(EncoderOutput {
            final_out,
            per_layer: record,
            src_mask,
        })
    }

    /// Encoder memory seen by decoder layer `l`.
    fn memory<'t>(&self, cx: &Ctx<'t, '_, T>, enc: &EncoderOutput<'t, T>, l: usize) -> Result<Var<'t, T>> {
        let (Some(mix), Some(per_layer)) = (self.dec_layers.get(l).and_then(|d| d.mix), &enc.per_layer) else {
            return Ok(enc.final_out);
        };
        let shape = per_layer[0].shape();
        let n: usize = shape.iter().product();
        let rows = per_layer
            .iter()
            .map(|v| v.reshape(&[1, n]))
            .collect::<nmt_tensor::Result<Vec<_>>>()?;
        let stacked = cx.tape.concat(&rows, 0)?;
        let w = cx.p(mix).reshape(&[1, per_layer.len()])?.softmax(1)?;
        Ok(w.matmul(stacked)?.reshape(&shape)?)
    }

    /// Projected cross-attention keys and values for every decoder layer.
    fn cross_memories<'t>(&self, cx: &Ctx<'t, '_, T>, enc: &EncoderOutput<'t, T>) -> Result<Vec<(Var<'t, T>, Var<'t, T>)>> {
        if let Some(r) = &self.rnmt {
            return Ok(vec![r.cross.memory(cx, enc.final_out)?]);
        }
        (0..self.dec_layers.len())
            .map(|l| self.dec_layers[l].cross.memory(cx, self.memory(cx, enc, l)?))
            .collect()
    }

    fn classify<'t>(&self, cx: &Ctx<'t, '_, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let s = x.shape();
        let rows: usize = s[..s.len() - 1].iter().product();
        let logits = x
            .reshape(&[rows, self.cfg.isize])?
            .matmul(cx.p(self.cls_w).transpose()?)?
            .add(cx.p(self.cls_b))?;
        let mut out = s;
        *out.last_mut().expect("decoder output has axes") = self.cfg.tgt_vocab;
        Ok(logits.reshape(&out)?)
    }

    /// One recurrent-decoder position for `x[B, 1, d]`; `rnn` holds `(h, c)` per layer.
    fn rnmt_position<'t>(
        &self,
        cx: &Ctx<'t, '_, T>,
        r: &Rnmt,
        x: Var<'t, T>,
        rnn: &mut [(Var<'t, T>, Var<'t, T>)],
        kv: (Var<'t, T>, Var<'t, T>),
        mask: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        let (h, c) = r.cells[0].step(cx, x, rnn[0].0, rnn[0].1)?;
        rnn[0] = (h, c);
        let ctx = r.cross.forward(cx, r.ln_ctx.forward(cx, h)?, kv.0, kv.1, Some(mask))?;
        let mut top = h;
        for l in 1..r.cells.len() {
            let input = cx.tape.concat(&[top, ctx], 2)?;
            let (h, c) = r.cells[l].step(cx, input, rnn[l].0, rnn[l].1)?;
            rnn[l] = (h, c);
            top = h;
        }
        let out = r.reduce.forward(cx, cx.tape.concat(&[ctx, top], 2)?)?.tanh();
        Ok(out.dropout(self.cfg.drop)?)
    }

    /// Teacher-forced decoder over `tgt` (starting with `<sos>`); returns
    /// logits `[B, T, V]`.
    pub fn decode_forward<'t>(
        &self,
        cx: &Ctx<'t, '_, T>,
        enc: &EncoderOutput<'t, T>,
        tgt: &TokenBatch,
    ) -> Result<Var<'t, T>> {
        let t = tgt.cols;
        if t == 0 {
            return Err(CoreError::Contract("decoder input is empty".into()));
        }
        if enc.src_mask.shape()[0] != tgt.rows {
            return Err(CoreError::Contract("source and target batch sizes differ".into()));
        }
        let src_mask = cx.constant(enc.src_mask.clone());
        let x = self.embed(cx, self.tgt_emb, tgt, 0)?;
        let kvs = self.cross_memories(cx, enc)?;

        if let Some(r) = &self.rnmt {
            let zero = cx.constant(Tensor::zeros(&[tgt.rows, 1, self.cfg.isize]));
            let mut rnn = vec![(zero, zero); r.cells.len()];
            let mut outs = Vec::with_capacity(t);
            for p in 0..t {
                outs.push(self.rnmt_position(cx, r, x.narrow(1, p, 1)?, &mut rnn, kvs[0], src_mask)?);
            }
            let h = cx.tape.concat(&outs, 1)?;
            return self.classify(cx, h);
        }

        let causal = cx.constant(neg_inf_mask(&[t, t], |i| i % t > i / t));
        let out = self.stack(cx, x, &self.dec_combiners, &mut None, |l, x| {
            let lay = &self.dec_layers[l];
            let y = lay.ln_self.forward(cx, x)?;
            let a = match &lay.self_block {
                SelfBlock::Attn(sa) => sa.forward(cx, y, Some(causal))?,
                SelfBlock::Avg(avg) => avg.forward(cx, y)?,
            };
            let x = x.add(a.dropout(self.cfg.drop)?)?;
            let c = lay
                .cross
                .forward(cx, lay.ln_cross.forward(cx, x)?, kvs[l].0, kvs[l].1, Some(src_mask))?;
            let x = x.add(c.dropout(self.cfg.drop)?)?;
            lay.ff.forward(cx, x)
        })?;
        let out = match &self.dec_ln {
            Some(ln) => ln.forward(cx, out)?,
            None => out,
        };
        self.classify(cx, out)
    }

    /// Encoder plus teacher-forced decoder in one call.
    pub fn forward<'t>(&self, cx: &Ctx<'t, '_, T>, src: &TokenBatch, tgt_in: &TokenBatch) -> Result<Var<'t, T>> {
        let enc = self.encode(cx, src)?;
        self.decode_forward(cx, &enc, tgt_in)
    }

    /// Fresh incremental state for the encoded batch.
    pub fn init_state<'t>(&self, cx: &Ctx<'t, '_, T>, enc: &EncoderOutput<'t, T>) -> Result<DecoderIncrementalState<T>> {
        let rows = enc.src_mask.shape()[0];
        let cross = self
            .cross_memories(cx, enc)?
            .into_iter()
            .map(|(k, v)| ((*k.value()).clone(), (*v.value()).clone()))
            .collect();
        let rnn = match &self.rnmt {
            Some(r) => {
                let z = Tensor::zeros(&[rows, 1, self.cfg.isize]);
                vec![(z.clone(), z); r.cells.len()]
            }
            None => Vec::new(),
        };
        Ok(DecoderIncrementalState {
            rows,
            step: 0,
            layers: vec![LayerCache::Empty; self.dec_layers.len()],
            rnn,
            cross,
            src_mask: enc.src_mask.clone(),
        })
    }

    /// Encodes `src` without gradients and returns a fresh decoding state.
    pub fn start(&self, src: &TokenBatch) -> Result<DecoderIncrementalState<T>> {
        let tape = Tape::inference();
        let cx = Ctx::new(&tape, &self.store);
        let enc = self.encode(&cx, src)?;
        self.init_state(&cx, &enc)
    }

    /// Feeds one token per row and returns next-token logits `[B, V]`.
    pub fn decode_step(&self, state: &mut DecoderIncrementalState<T>, last: &[u32]) -> Result<Tensor<T>> {
        if last.len() != state.rows {
            return Err(CoreError::Contract(format!(
                "state holds {} rows but {} tokens were given",
                state.rows,
                last.len()
            )));
        }
        let tape = Tape::inference();
        let cx = Ctx::new(&tape, &self.store);
        let ids = TokenBatch::new(last.to_vec(), last.len(), 1)?;
        let x = self.embed(&cx, self.tgt_emb, &ids, state.step)?;
        let src_mask = cx.constant(state.src_mask.clone());
        let t = state.step + 1;

        let out = if let Some(r) = &self.rnmt {
            let mut rnn: Vec<_> = state
                .rnn
                .iter()
                .map(|(h, c)| (cx.constant(h.clone()), cx.constant(c.clone())))
                .collect();
            let (k, v) = &state.cross[0];
            let kv = (cx.constant(k.clone()), cx.constant(v.clone()));
            let out = self.rnmt_position(&cx, r, x, &mut rnn, kv, src_mask)?;
            state.rnn = rnn
                .iter()
                .map(|(h, c)| ((*h.value()).clone(), (*c.value()).clone()))
                .collect();
            out
        } else {
            let mut caches = std::mem::take(&mut state.layers);
            let out = self.stack(&cx, x, &self.dec_combiners, &mut None, |l, x| {
                let lay = &self.dec_layers[l];
                let y = lay.ln_self.forward(&cx, x)?;
                let a = match (&lay.self_block, &caches[l]) {
                    (SelfBlock::Attn(sa), cache) => {
                        let prev = match cache {
                            LayerCache::Kv(k, v) => Some((k, v)),
                            _ => None,
                        };
                        let (a, k, v) = sa.step(&cx, y, prev)?;
                        caches[l] = LayerCache::Kv(k, v);
                        a
                    }
                    (SelfBlock::Avg(avg), cache) => {
                        let prev = match cache {
                            LayerCache::Sum(s) => Some(s),
                            _ => None,
                        };
                        let (a, sum) = avg.step(&cx, y, prev, t)?;
                        caches[l] = LayerCache::Sum(sum);
                        a
                    }
                };
                let x = x.add(a)?;
                let (k, v) = &state.cross[l];
                let c = lay.cross.forward(
                    &cx,
                    lay.ln_cross.forward(&cx, x)?,
                    cx.constant(k.clone()),
                    cx.constant(v.clone()),
                    Some(src_mask),
                )?;
                lay.ff.forward(&cx, x.add(c)?)
            });
            state.layers = caches;
            let out = out?;
            match &self.dec_ln {
                Some(ln) => ln.forward(&cx, out)?,
                None => out,
            }
        };
        state.step = t;
        let logits = self.classify(&cx, out)?;
        let v = self.cfg.tgt_vocab;
        Ok(logits.value().reshape(&[last.len(), v])?)
    }
}
