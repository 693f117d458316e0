//! Copy-augmented encoder–decoder transformer.
//!
//! Two forward paths share the same parameters and kernels:
//!
//! * [`Model::forward_taped`] runs a whole teacher-forced example on a
//!   [`Tape`] for training.
//! * [`Model::encode`] and [`Model::decode_step`] run untaped, one decoder
//!   position at a time with cached keys and values, for beam search.
//!
//! The output distribution mixes generation and copying:
//! `P(y) = p_gen · P_vocab(y) + (1 − p_gen) · Σ_{i: src_i = y} α_i`, where
//! `α` is the final decoder layer's cross-attention averaged over heads and
//! `p_gen = σ(W_gen · [h*; x_dec] + b_gen)`.

pub mod checkpoint;
pub mod train;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::vocab::{self, EncodedInput, Vocabulary, BOS, PAD, UNK};
use crate::corpus::{CorpusError, SliceInstance};
use crate::seed;
use crate::tensor::kernels::{self, MASK_VALUE};
use crate::tensor::{Tape, Tensor, TensorError, Var};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("sequence of length {len} exceeds the limit {max}")]
    Length { len: usize, max: usize },
    #[error("extended id {id} needs more than {slots} out-of-vocabulary slots")]
    Capacity { id: u32, slots: usize },
    #[error("data error: {0}")]
    Data(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// What the copy gate reads next to `h*`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateInput {
    /// The decoder input vector at the current step.
    #[default]
    Embedding,
    /// The final decoder hidden state at the current step.
    Hidden,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub heads: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub ffn_dim: usize,
    pub max_src: usize,
    pub max_tgt: usize,
    pub vocab_size: usize,
    pub max_oov_slots: usize,
    /// When false the gate is pinned to `p_gen = 1` and the model can only
    /// generate from the vocabulary.
    pub copy: bool,
    pub gate_input: GateInput,
}

impl ModelConfig {
    pub fn new(vocab_size: usize) -> Self {
        Self {
            d_model: 128,
            heads: 4,
            enc_layers: 2,
            dec_layers: 2,
            ffn_dim: 256,
            max_src: 256,
            max_tgt: 256,
            vocab_size,
            max_oov_slots: 64,
            copy: true,
            gate_input: GateInput::Embedding,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.d_model == 0 || self.heads == 0 || self.d_model % self.heads != 0 {
            return bad("d_model must be a positive multiple of heads");
        }
        if self.vocab_size <= vocab::NL as usize {
            return bad("vocabulary is smaller than the reserved tokens");
        }
        if self.ffn_dim == 0 || self.max_src == 0 || self.max_tgt == 0 {
            return bad("ffn_dim, max_src and max_tgt must be positive");
        }
        Ok(())
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.heads
    }

    /// Width of the extended vocabulary.
    pub fn ext_size(&self) -> usize {
        self.vocab_size + self.max_oov_slots
    }
}

/// Parameter indices of one attention block.
#[derive(Debug, Clone, Copy)]
struct AttnIdx {
    wq: usize,
    wk: usize,
    wv: usize,
    wo: usize,
    bo: usize,
}

#[derive(Debug, Clone, Copy)]
struct FfnIdx {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

#[derive(Debug, Clone, Copy)]
struct NormIdx {
    g: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy)]
struct EncLayer {
    ln1: NormIdx,
    attn: AttnIdx,
    ln2: NormIdx,
    ffn: FfnIdx,
}

#[derive(Debug, Clone, Copy)]
struct DecLayer {
    ln1: NormIdx,
    self_attn: AttnIdx,
    ln2: NormIdx,
    cross: AttnIdx,
    ln3: NormIdx,
    ffn: FfnIdx,
}

#[derive(Debug, Clone)]
struct Layout {
    embed: usize,
    enc: Vec<EncLayer>,
    enc_ln: NormIdx,
    dec: Vec<DecLayer>,
    dec_ln: NormIdx,
    w_out: usize,
    b_out: usize,
    w_gen: usize,
    b_gen: usize,
}

#[derive(Debug, Clone, Copy)]
enum Init {
    /// Uniform with variance `1 / fan_out`, for embeddings.
    Embedding,
    Glorot,
    Zeros,
    Ones,
}

struct Spec {
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    inits: Vec<Init>,
}

impl Spec {
    fn add(&mut self, name: String, shape: Vec<usize>, init: Init) -> usize {
        self.names.push(name);
        self.shapes.push(shape);
        self.inits.push(init);
        self.names.len() - 1
    }

    fn norm(&mut self, p: &str, d: usize) -> NormIdx {
        NormIdx {
            g: self.add(format!("{p}.g"), vec![d], Init::Ones),
            b: self.add(format!("{p}.b"), vec![d], Init::Zeros),
        }
    }

    fn attn(&mut self, p: &str, d: usize) -> AttnIdx {
        AttnIdx {
            wq: self.add(format!("{p}.wq"), vec![d, d], Init::Glorot),
            wk: self.add(format!("{p}.wk"), vec![d, d], Init::Glorot),
            wv: self.add(format!("{p}.wv"), vec![d, d], Init::Glorot),
            wo: self.add(format!("{p}.wo"), vec![d, d], Init::Glorot),
            bo: self.add(format!("{p}.bo"), vec![d], Init::Zeros),
        }
    }

    fn ffn(&mut self, p: &str, d: usize, f: usize) -> FfnIdx {
        FfnIdx {
            w1: self.add(format!("{p}.w1"), vec![d, f], Init::Glorot),
            b1: self.add(format!("{p}.b1"), vec![f], Init::Zeros),
            w2: self.add(format!("{p}.w2"), vec![f, d], Init::Glorot),
            b2: self.add(format!("{p}.b2"), vec![d], Init::Zeros),
        }
    }
}

fn layout(c: &ModelConfig) -> (Layout, Spec) {
    let (d, f) = (c.d_model, c.ffn_dim);
    let mut s = Spec { names: Vec::new(), shapes: Vec::new(), inits: Vec::new() };
    let embed = s.add("embed".into(), vec![c.vocab_size, d], Init::Embedding);
    let enc = (0..c.enc_layers)
        .map(|l| EncLayer {
            ln1: s.norm(&format!("enc.{l}.ln1"), d),
            attn: s.attn(&format!("enc.{l}.attn"), d),
            ln2: s.norm(&format!("enc.{l}.ln2"), d),
            ffn: s.ffn(&format!("enc.{l}.ffn"), d, f),
        })
        .collect();
    let enc_ln = s.norm("enc.ln", d);
    let dec = (0..c.dec_layers)
        .map(|l| DecLayer {
            ln1: s.norm(&format!("dec.{l}.ln1"), d),
            self_attn: s.attn(&format!("dec.{l}.self"), d),
            ln2: s.norm(&format!("dec.{l}.ln2"), d),
            cross: s.attn(&format!("dec.{l}.cross"), d),
            ln3: s.norm(&format!("dec.{l}.ln3"), d),
            ffn: s.ffn(&format!("dec.{l}.ffn"), d, f),
        })
        .collect();
    let dec_ln = s.norm("dec.ln", d);
    let w_out = s.add("out.w".into(), vec![d, c.vocab_size], Init::Glorot);
    let b_out = s.add("out.b".into(), vec![c.vocab_size], Init::Zeros);
    let w_gen = s.add("gen.w".into(), vec![2 * d, 1], Init::Glorot);
    let b_gen = s.add("gen.b".into(), vec![1], Init::Zeros);
    let l = Layout { embed, enc, enc_ln, dec, dec_ln, w_out, b_out, w_gen, b_gen };
    (l, s)
}

/// One teacher-forced training example in extended ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    /// Embedding ids of the source (`UNK` for out-of-vocabulary pieces).
    pub src_ids: Vec<u32>,
    /// Extended ids of the source.
    pub src_ext: Vec<u32>,
    /// Gold output, ending with `EOS`. Does not include the leading `BOS`.
    pub target: Vec<u32>,
}

impl Example {
    /// Encodes an instance. Fails when a gold piece is neither in the
    /// vocabulary nor in the source, since such a token could never be
    /// produced.
    pub fn from_instance(inst: &SliceInstance, vocab: &Vocabulary, max_src: usize) -> Result<Self> {
        let input = vocab::encode_input(inst, vocab, max_src)?;
        let pieces = vocab::target_pieces(&inst.gold_text);
        let mut target = Vec::with_capacity(pieces.len());
        for p in &pieces {
            match input.ext_id(vocab, p) {
                Some(id) => target.push(id),
                None => {
                    return Err(ModelError::Data(format!(
                        "gold token {p:?} is not in the vocabulary or the source"
                    )))
                }
            }
        }
        Ok(Self { src_ids: input.ids, src_ext: input.ext_ids, target })
    }

    pub fn from_encoded(input: &EncodedInput, target: Vec<u32>) -> Self {
        Self { src_ids: input.ids.clone(), src_ext: input.ext_ids.clone(), target }
    }
}

/// Named parameter tensors in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub names: Vec<String>,
    pub tensors: Vec<Tensor>,
}

impl ModelParams {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.names.iter().position(|n| n == name).map(move |i| &mut self.tensors[i])
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }
}

/// Output of one decoder step.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderStepOutput {
    /// Mixed distribution over `vocab_size + max_oov_slots` ids.
    pub p_extended: Vec<f64>,
    /// Head-averaged cross-attention over source positions.
    pub alpha: Vec<f64>,
    pub p_gen: f64,
    /// Attention context, the per-head `α_h · V_h` concatenated.
    pub h_star: Vec<f64>,
}

/// Encoder output plus the cross-attention keys and values of every
/// decoder layer.
#[derive(Debug, Clone)]
pub struct Encoded {
    pub states: Vec<f64>,
    pub len: usize,
    pub src_ext: Vec<u32>,
    cross: Vec<(Vec<f64>, Vec<f64>)>,
    pad: Option<Vec<f64>>,
}

/// Self-attention keys and values accumulated by [`Model::decode_step`].
#[derive(Debug, Clone, Default)]
pub struct DecoderCache {
    kv: Vec<(Vec<f64>, Vec<f64>)>,
    pos: usize,
}

impl DecoderCache {
    /// Number of tokens fed so far.
    pub fn len(&self) -> usize {
        self.pos
    }

    pub fn is_empty(&self) -> bool {
        self.pos == 0
    }
}

/// Variables of a taped forward pass.
#[derive(Debug, Clone)]
pub struct TapedOutput {
    /// `[T × (vocab_size + n_oov)]` mixed distributions.
    pub p: Var,
    /// `[T × 1]` gate values; absent when copying is disabled.
    pub p_gen: Option<Var>,
    /// `[T × S]` head-averaged cross-attention.
    pub alpha: Var,
    /// Mean token negative log-likelihood.
    pub loss: Var,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams,
    layout: Layout,
}

impl Model {
    /// Fresh parameters drawn from the `init` stream of `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (layout, spec) = layout(&config);
        let mut rng = seed::substream(seed, seed::INIT, 0);
        let mut tensors = Vec::with_capacity(spec.names.len());
        for (shape, init) in spec.shapes.iter().zip(&spec.inits) {
            let n: usize = shape.iter().product();
            let data: Vec<f64> = match init {
                Init::Zeros => vec![0.0; n],
                Init::Ones => vec![1.0; n],
                Init::Embedding => {
                    let a = (3.0 / shape[1] as f64).sqrt();
                    (0..n).map(|_| rng.gen_range(-a..a)).collect()
                }
                Init::Glorot => {
                    let a = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                    (0..n).map(|_| rng.gen_range(-a..a)).collect()
                }
            };
            tensors.push(Tensor::new(shape.clone(), data)?.with_requires_grad(true));
        }
        let params = ModelParams { names: spec.names, tensors };
        Ok(Self { config, params, layout })
    }

    /// Wraps existing parameters after checking them against the config.
    pub fn from_params(config: ModelConfig, params: ModelParams) -> Result<Self> {
        config.validate()?;
        let (layout, spec) = layout(&config);
        if params.names != spec.names {
            return Err(ModelError::Checkpoint("parameter names do not match the config".into()));
        }
        for ((name, t), shape) in params.names.iter().zip(&params.tensors).zip(&spec.shapes) {
            if t.shape() != shape.as_slice() {
                return Err(ModelError::Checkpoint(format!(
                    "{name}: shape {:?}, config expects {shape:?}",
                    t.shape()
                )));
            }
        }
        Ok(Self { config, params, layout })
    }

    fn p(&self, i: usize) -> &[f64] {
        self.params.tensors[i].data()
    }

    fn embed_id(&self, id: u32) -> usize {
        if (id as usize) < self.config.vocab_size {
            id as usize
        } else {
            UNK as usize
        }
    }

    fn check_ext(&self, ids: &[u32]) -> Result<()> {
        match ids.iter().find(|&&id| id as usize >= self.config.ext_size()) {
            Some(&id) => Err(ModelError::Capacity { id, slots: self.config.max_oov_slots }),
            None => Ok(()),
        }
    }

    fn check_src(&self, src_ids: &[u32], src_ext: &[u32]) -> Result<()> {
        if src_ids.len() != src_ext.len() {
            return Err(ModelError::Data("source ids and extended ids differ in length".into()));
        }
        if src_ids.is_empty() {
            return Err(ModelError::Data("empty source".into()));
        }
        if src_ids.len() > self.config.max_src {
            return Err(ModelError::Length { len: src_ids.len(), max: self.config.max_src });
        }
        if let Some(&id) = src_ids.iter().find(|&&id| id as usize >= self.config.vocab_size) {
            return Err(ModelError::Data(format!("source id {id} is outside the vocabulary")));
        }
        self.check_ext(src_ext)
    }

    fn input_rows(&self, ids: &[usize]) -> Vec<f64> {
        let d = self.config.d_model;
        let scale = (d as f64).sqrt();
        let table = self.p(self.layout.embed);
        let mut out = Vec::with_capacity(ids.len() * d);
        for (pos, &id) in ids.iter().enumerate() {
            let pe = kernels::positional_row(pos, d);
            out.extend(table[id * d..(id + 1) * d].iter().zip(&pe).map(|(e, p)| e * scale + p));
        }
        out
    }

    // ---- taped path ----

    /// Registers every parameter on `tape` as a gradient-requiring leaf, in
    /// parameter order.
    pub fn leaves(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.tensors.iter().map(|t| tape.leaf(t.clone())).collect()
    }

    /// Teacher-forced forward pass of one example, with the loss.
    pub fn forward_taped(&self, tape: &mut Tape, vars: &[Var], ex: &Example) -> Result<TapedOutput> {
        let c = &self.config;
        self.check_src(&ex.src_ids, &ex.src_ext)?;
        if ex.target.is_empty() {
            return Err(ModelError::Data("empty target".into()));
        }
        if ex.target.len() > c.max_tgt {
            return Err(ModelError::Length { len: ex.target.len(), max: c.max_tgt });
        }
        self.check_ext(&ex.target)?;
        let d = c.d_model;
        let l = &self.layout;
        let scale = (d as f64).sqrt();

        // Encoder.
        let src: Vec<usize> = ex.src_ids.iter().map(|&i| i as usize).collect();
        let s_len = src.len();
        let e = tape.gather_rows(vars[l.embed], &src)?;
        let e = tape.scale(e, scale);
        let mut x = tape.add_const(e, &positions(s_len, d))?;
        let pad = key_mask(&ex.src_ids);
        let enc_mask = pad.as_ref().map(|m| tile(m, s_len));
        for layer in &l.enc {
            let h = self.norm_t(tape, vars, x, layer.ln1)?;
            let a = self.attn_t(tape, vars, layer.attn, h, h, enc_mask.as_ref())?;
            x = tape.add(x, a.out)?;
            let h = self.norm_t(tape, vars, x, layer.ln2)?;
            let f = self.ffn_t(tape, vars, layer.ffn, h)?;
            x = tape.add(x, f)?;
        }
        let enc = self.norm_t(tape, vars, x, l.enc_ln)?;

        // Decoder.
        let t_len = ex.target.len();
        let mut dec_in = vec![BOS as usize];
        dec_in.extend(ex.target[..t_len - 1].iter().map(|&t| self.embed_id(t)));
        let e = tape.gather_rows(vars[l.embed], &dec_in)?;
        let e = tape.scale(e, scale);
        let x_dec = tape.add_const(e, &positions(t_len, d))?;
        let causal = causal_mask(t_len);
        let cross_mask = pad.as_ref().map(|m| tile(m, t_len));
        let mut y = x_dec;
        let mut last = None;
        for layer in &l.dec {
            let h = self.norm_t(tape, vars, y, layer.ln1)?;
            let a = self.attn_t(tape, vars, layer.self_attn, h, h, Some(&causal))?;
            y = tape.add(y, a.out)?;
            let h = self.norm_t(tape, vars, y, layer.ln2)?;
            let a = self.attn_t(tape, vars, layer.cross, h, enc, cross_mask.as_ref())?;
            y = tape.add(y, a.out)?;
            let h = self.norm_t(tape, vars, y, layer.ln3)?;
            let f = self.ffn_t(tape, vars, layer.ffn, h)?;
            y = tape.add(y, f)?;
            last = Some(a);
        }
        let hidden = self.norm_t(tape, vars, y, l.dec_ln)?;
        let logits = tape.matmul(hidden, vars[l.w_out])?;
        let logits = tape.add_row(logits, vars[l.b_out])?;
        let p_vocab = tape.softmax_rows(logits)?;

        let n_oov = ex.src_ext.iter().chain(&ex.target).map(|&i| i as usize + 1).max().unwrap_or(0);
        let width = c.vocab_size.max(n_oov);
        let padded = tape.pad_cols(p_vocab, width)?;

        let alpha = match &last {
            Some(a) => {
                let mut sum = a.probs[0];
                for &p in &a.probs[1..] {
                    sum = tape.add(sum, p)?;
                }
                tape.scale(sum, 1.0 / c.heads as f64)
            }
            None => tape.constant(Tensor::new(vec![t_len, s_len], vec![1.0 / s_len as f64; t_len * s_len])?),
        };

        let (p, p_gen, targets) = if c.copy {
            let h_star = match &last {
                Some(a) => a.context,
                None => tape.constant(Tensor::zeros(vec![t_len, d])),
            };
            let other = match c.gate_input {
                GateInput::Embedding => x_dec,
                GateInput::Hidden => hidden,
            };
            let gate_in = tape.concat_cols(&[h_star, other])?;
            let z = tape.matmul(gate_in, vars[l.w_gen])?;
            let z = tape.add_row(z, vars[l.b_gen])?;
            let g = tape.sigmoid(z);
            let gen = tape.row_scale(padded, g)?;
            let og = tape.one_minus(g);
            let copy = tape.row_scale(alpha, og)?;
            let src_pos: Vec<usize> = ex.src_ext.iter().map(|&i| i as usize).collect();
            let p = tape.scatter_add(gen, &src_pos, copy)?;
            let targets: Vec<usize> = ex.target.iter().map(|&t| t as usize).collect();
            (p, Some(g), targets)
        } else {
            let targets: Vec<usize> = ex.target.iter().map(|&t| self.embed_id(t)).collect();
            (padded, None, targets)
        };
        let loss = tape.nll_rows(p, &targets)?;
        Ok(TapedOutput { p, p_gen, alpha, loss })
    }

    fn norm_t(&self, tape: &mut Tape, vars: &[Var], x: Var, n: NormIdx) -> Result<Var> {
        Ok(tape.layer_norm(x, vars[n.g], vars[n.b])?)
    }

    fn ffn_t(&self, tape: &mut Tape, vars: &[Var], f: FfnIdx, x: Var) -> Result<Var> {
        let h = tape.matmul(x, vars[f.w1])?;
        let h = tape.add_row(h, vars[f.b1])?;
        let h = tape.relu(h);
        let o = tape.matmul(h, vars[f.w2])?;
        Ok(tape.add_row(o, vars[f.b2])?)
    }

    fn attn_t(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        a: AttnIdx,
        xq: Var,
        xkv: Var,
        mask: Option<&Tensor>,
    ) -> Result<AttnOut> {
        let dh = self.config.d_head();
        let q = tape.matmul(xq, vars[a.wq])?;
        let k = tape.matmul(xkv, vars[a.wk])?;
        let v = tape.matmul(xkv, vars[a.wv])?;
        let mut probs = Vec::with_capacity(self.config.heads);
        let mut ctxs = Vec::with_capacity(self.config.heads);
        for h in 0..self.config.heads {
            let qh = tape.slice_cols(q, h * dh, dh)?;
            let kh = tape.slice_cols(k, h * dh, dh)?;
            let vh = tape.slice_cols(v, h * dh, dh)?;
            let s = tape.matmul_nt(qh, kh)?;
            let mut s = tape.scale(s, 1.0 / (dh as f64).sqrt());
            if let Some(m) = mask {
                s = tape.add_const(s, m)?;
            }
            let p = tape.softmax_rows(s)?;
            ctxs.push(tape.matmul(p, vh)?);
            probs.push(p);
        }
        let context = tape.concat_cols(&ctxs)?;
        let o = tape.matmul(context, vars[a.wo])?;
        let out = tape.add_row(o, vars[a.bo])?;
        Ok(AttnOut { out, probs, context })
    }

    // ---- untaped path ----

    /// Runs the encoder and precomputes cross-attention keys and values.
    pub fn encode(&self, src_ids: &[u32], src_ext: &[u32]) -> Result<Encoded> {
        self.check_src(src_ids, src_ext)?;
        let d = self.config.d_model;
        let n = src_ids.len();
        let ids: Vec<usize> = src_ids.iter().map(|&i| i as usize).collect();
        let mut x = self.input_rows(&ids);
        let pad = key_mask(src_ids);
        let mask = pad.as_ref().map(|m| tile(m, n));
        for layer in &self.layout.enc {
            let h = self.norm(&x, layer.ln1);
            let k = self.linear(&h, n, layer.attn.wk, d);
            let v = self.linear(&h, n, layer.attn.wv, d);
            let (o, _, _) = self.attend(&h, n, &k, &v, n, layer.attn, mask.as_ref().map(|m| m.data()));
            add_in_place(&mut x, &o);
            let h = self.norm(&x, layer.ln2);
            add_in_place(&mut x, &self.ffn(&h, n, layer.ffn));
        }
        let states = self.norm(&x, self.layout.enc_ln);
        let cross = self
            .layout
            .dec
            .iter()
            .map(|l| (self.linear(&states, n, l.cross.wk, d), self.linear(&states, n, l.cross.wv, d)))
            .collect();
        Ok(Encoded { states, len: n, src_ext: src_ext.to_vec(), cross, pad })
    }

    /// Convenience for [`Model::encode`] on a corpus encoding.
    pub fn encode_input(&self, input: &EncodedInput) -> Result<Encoded> {
        self.encode(&input.ids, &input.ext_ids)
    }

    pub fn new_cache(&self) -> DecoderCache {
        DecoderCache { kv: vec![(Vec::new(), Vec::new()); self.layout.dec.len()], pos: 0 }
    }

    /// Feeds `token` (an extended id) at the next position and returns the
    /// distribution for the token after it.
    pub fn decode_step(&self, enc: &Encoded, cache: &mut DecoderCache, token: u32) -> Result<DecoderStepOutput> {
        let c = &self.config;
        if cache.pos >= c.max_tgt {
            return Err(ModelError::Length { len: cache.pos + 1, max: c.max_tgt });
        }
        self.check_ext(&[token])?;
        let d = c.d_model;
        let d_scale = (d as f64).sqrt();
        let id = self.embed_id(token);
        let pe = kernels::positional_row(cache.pos, d);
        let x_dec: Vec<f64> = self.p(self.layout.embed)[id * d..(id + 1) * d]
            .iter()
            .zip(&pe)
            .map(|(e, p)| e * d_scale + p)
            .collect();
        let mut y = x_dec.clone();
        let mut alpha = Vec::new();
        let mut h_star = Vec::new();
        for (li, layer) in self.layout.dec.iter().enumerate() {
            let h = self.norm(&y, layer.ln1);
            let k = self.linear(&h, 1, layer.self_attn.wk, d);
            let v = self.linear(&h, 1, layer.self_attn.wv, d);
            let (ck, cv) = &mut cache.kv[li];
            ck.extend_from_slice(&k);
            cv.extend_from_slice(&v);
            let (o, _, _) = self.attend(&h, 1, ck, cv, cache.pos + 1, layer.self_attn, None);
            add_in_place(&mut y, &o);
            let h = self.norm(&y, layer.ln2);
            let (ek, ev) = &enc.cross[li];
            let (o, probs, ctx) = self.attend(&h, 1, ek, ev, enc.len, layer.cross, enc.pad.as_deref());
            add_in_place(&mut y, &o);
            let h = self.norm(&y, layer.ln3);
            add_in_place(&mut y, &self.ffn(&h, 1, layer.ffn));
            alpha = average_heads(&probs, c.heads, enc.len);
            h_star = ctx;
        }
        cache.pos += 1;
        if self.layout.dec.is_empty() {
            alpha = vec![1.0 / enc.len as f64; enc.len];
            h_star = vec![0.0; d];
        }
        let hidden = self.norm(&y, self.layout.dec_ln);
        let mut p_vocab = kernels::matmul(&hidden, self.p(self.layout.w_out), 1, d, c.vocab_size);
        kernels::add_row(&mut p_vocab, self.p(self.layout.b_out));
        kernels::softmax_in_place(&mut p_vocab);

        let mut p_extended = vec![0.0; c.ext_size()];
        let p_gen = if c.copy {
            let other = match c.gate_input {
                GateInput::Embedding => &x_dec,
                GateInput::Hidden => &hidden,
            };
            let w = self.p(self.layout.w_gen);
            let z = h_star.iter().chain(other.iter()).zip(w).map(|(a, b)| a * b).sum::<f64>()
                + self.p(self.layout.b_gen)[0];
            kernels::sigmoid(z)
        } else {
            1.0
        };
        for (dst, p) in p_extended.iter_mut().zip(&p_vocab) {
            *dst = p * p_gen;
        }
        if c.copy {
            for (&pos, a) in enc.src_ext.iter().zip(&alpha) {
                p_extended[pos as usize] += a * (1.0 - p_gen);
            }
        }
        Ok(DecoderStepOutput { p_extended, alpha, p_gen, h_star })
    }

    /// Runs the decoder over a whole prefix (starting with `BOS`) and
    /// returns the output at its last position.
    pub fn decode_prefix(&self, enc: &Encoded, prefix: &[u32]) -> Result<DecoderStepOutput> {
        if prefix.first() != Some(&BOS) {
            return Err(ModelError::Data("decoder prefix must start with BOS".into()));
        }
        let mut cache = self.new_cache();
        let mut out = None;
        for &t in prefix {
            out = Some(self.decode_step(enc, &mut cache, t)?);
        }
        Ok(out.expect("prefix is non-empty"))
    }

    fn norm(&self, x: &[f64], n: NormIdx) -> Vec<f64> {
        kernels::layer_norm_rows(x, self.p(n.g), self.p(n.b), self.config.d_model).0
    }

    fn linear(&self, x: &[f64], rows: usize, w: usize, out: usize) -> Vec<f64> {
        let inp = x.len() / rows.max(1);
        kernels::matmul(x, self.p(w), rows, inp, out)
    }

    fn ffn(&self, x: &[f64], rows: usize, f: FfnIdx) -> Vec<f64> {
        let (d, ff) = (self.config.d_model, self.config.ffn_dim);
        let mut h = self.linear(x, rows, f.w1, ff);
        kernels::add_row(&mut h, self.p(f.b1));
        h.iter_mut().for_each(|v| *v = v.max(0.0));
        let mut o = self.linear(&h, rows, f.w2, d);
        kernels::add_row(&mut o, self.p(f.b2));
        o
    }

    /// Multi-head attention of `rows` queries against `n` cached keys and
    /// values. Returns the projected output, per-head probabilities
    /// `[heads × rows × n]` and the concatenated context.
    #[allow(clippy::too_many_arguments)]
    fn attend(
        &self,
        xq: &[f64],
        rows: usize,
        k: &[f64],
        v: &[f64],
        n: usize,
        a: AttnIdx,
        mask: Option<&[f64]>,
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let (d, heads) = (self.config.d_model, self.config.heads);
        let dh = d / heads;
        let q = self.linear(xq, rows, a.wq, d);
        let mut context = vec![0.0; rows * d];
        let mut probs = Vec::with_capacity(heads * rows * n);
        let inv = 1.0 / (dh as f64).sqrt();
        for h in 0..heads {
            let qh = cols(&q, rows, d, h * dh, dh);
            let kh = cols(k, n, d, h * dh, dh);
            let vh = cols(v, n, d, h * dh, dh);
            let mut s = kernels::matmul_nt(&qh, &kh, rows, dh, n);
            s.iter_mut().for_each(|x| *x *= inv);
            if let Some(m) = mask {
                add_in_place(&mut s, m);
            }
            kernels::softmax_rows(&mut s, n);
            let ctx = kernels::matmul(&s, &vh, rows, n, dh);
            for r in 0..rows {
                context[r * d + h * dh..r * d + (h + 1) * dh].copy_from_slice(&ctx[r * dh..(r + 1) * dh]);
            }
            probs.extend(s);
        }
        let mut out = self.linear(&context, rows, a.wo, d);
        kernels::add_row(&mut out, self.p(a.bo));
        (out, probs, context)
    }
}

struct AttnOut {
    out: Var,
    probs: Vec<Var>,
    context: Var,
}

fn positions(n: usize, d: usize) -> Tensor {
    let data = (0..n).flat_map(|p| kernels::positional_row(p, d)).collect();
    Tensor::new(vec![n, d], data).expect("positional table shape")
}

/// Additive key mask hiding `PAD` source positions, if there are any.
fn key_mask(src_ids: &[u32]) -> Option<Vec<f64>> {
    src_ids
        .contains(&PAD)
        .then(|| src_ids.iter().map(|&i| if i == PAD { MASK_VALUE } else { 0.0 }).collect())
}

fn tile(row: &[f64], rows: usize) -> Tensor {
    let data = (0..rows).flat_map(|_| row.iter().copied()).collect();
    Tensor::new(vec![rows, row.len()], data).expect("mask shape")
}

fn causal_mask(n: usize) -> Tensor {
    let mut data = vec![0.0; n * n];
    for r in 0..n {
        for c in r + 1..n {
            data[r * n + c] = MASK_VALUE;
        }
    }
    Tensor::new(vec![n, n], data).expect("mask shape")
}

fn cols(x: &[f64], rows: usize, width: usize, start: usize, len: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows * len);
    for r in 0..rows {
        out.extend_from_slice(&x[r * width + start..r * width + start + len]);
    }
    out
}

fn add_in_place(x: &mut [f64], y: &[f64]) {
    for (a, b) in x.iter_mut().zip(y) {
        *a += b;
    }
}

/// Mean over heads of single-query attention rows.
fn average_heads(probs: &[f64], heads: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for h in 0..heads {
        for (o, p) in out.iter_mut().zip(&probs[h * n..(h + 1) * n]) {
            *o += p;
        }
    }
    out.iter_mut().for_each(|v| *v /= heads as f64);
    out
}
