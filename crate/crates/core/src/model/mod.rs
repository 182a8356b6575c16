//! Bidirectional LSTM encoders, a bilinear-attention LSTM decoder, and the
//! parameter bundle shared across the three training routes.
//!
//! Two encoders exist side by side: `enc_s` reads source-side text, `enc_t`
//! reads target-side text for denoising auto-encoder training. They share no
//! parameters with each other. The decoder, target embedding, attention
//! matrix, and output projection are one set of storage used by every route.

mod checkpoint;
mod lstm;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_TAG};
pub use lstm::{LstmCell, LstmWeights};

use crate::data::{BOS_ID, EOS_ID};
use crate::error::{Error, Result};
use crate::tensor::{ParamId, ParamStore, Tape, Tensor};
use lstm::{argmax, sample_categorical, uniform_init};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Which encoder a token sequence goes through.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Source,
    Target,
}

/// Autoregressive decoding regime.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecodeMode {
    /// Argmax with lowest-index tie-break; used for evaluation decoding.
    Greedy,
    /// Draw from the output distribution; required by the policy-gradient
    /// estimator.
    Sample,
}

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub src_vocab: usize,
    pub tgt_vocab: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
}

impl ModelConfig {
    /// Desk-scale defaults: 64-dim embeddings and hidden states, one encoder
    /// and one decoder layer.
    pub fn desk(src_vocab: usize, tgt_vocab: usize) -> Self {
        ModelConfig {
            src_vocab,
            tgt_vocab,
            embed_dim: 64,
            hidden_dim: 64,
            enc_layers: 1,
            dec_layers: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.src_vocab < 5 || self.tgt_vocab < 5 {
            return Err(Error::contract(
                "vocabulary sizes must cover the 4 reserved ids plus content",
            ));
        }
        if self.embed_dim == 0
            || self.hidden_dim == 0
            || self.enc_layers == 0
            || self.dec_layers == 0
        {
            return Err(Error::contract("model dimensions must be positive"));
        }
        Ok(())
    }
}

/// Forward-pass context: the active tape plus the dropout regime.
pub struct Forward<'a> {
    pub tape: &'a mut Tape,
    pub training: bool,
    pub dropout: f64,
    pub rng: Option<&'a mut ChaCha8Rng>,
}

impl<'a> Forward<'a> {
    pub fn train(tape: &'a mut Tape, dropout: f64, rng: &'a mut ChaCha8Rng) -> Self {
        Forward {
            tape,
            training: true,
            dropout,
            rng: Some(rng),
        }
    }

    pub fn eval(tape: &'a mut Tape) -> Self {
        Forward {
            tape,
            training: false,
            dropout: 0.0,
            rng: None,
        }
    }

    fn drop_out(&mut self, t: &Tensor) -> Result<Tensor> {
        if !self.training || self.dropout == 0.0 {
            return Ok(t.clone());
        }
        let rng = self
            .rng
            .as_mut()
            .ok_or_else(|| Error::contract("training forward pass without an RNG"))?;
        self.tape.dropout(t, self.dropout, true, rng)
    }
}

/// Per-position encoder states (forward and backward halves concatenated)
/// plus projected initial states for every decoder layer.
pub struct EncoderOutput {
    /// One `[1 x 2*hidden]` row per input position.
    pub rows: Vec<Tensor>,
    /// The same rows stacked into `[|X| x 2*hidden]` for attention.
    pub mat: Tensor,
    /// `(h0, c0)` per decoder layer.
    pub init: Vec<(Tensor, Tensor)>,
}

/// One attention step: raw bilinear scores, normalized weights, and the
/// context vector.
pub struct AttentionStep {
    pub scores: Tensor,
    pub weights: Tensor,
    pub context: Tensor,
}

/// Running decoder state, one `(h, c)` per layer.
#[derive(Clone)]
pub struct DecoderState {
    pub layers: Vec<(Tensor, Tensor)>,
}

impl DecoderState {
    pub fn top_h(&self) -> &Tensor {
        &self.layers.last().expect("decoder has layers").0
    }
}

#[derive(Clone)]
struct EncoderIds {
    /// (forward, backward) cells per layer.
    layers: Vec<(LstmCell, LstmCell)>,
    /// Initial-state projections into the decoder, one (w_h,b_h,w_c,b_c)
    /// quadruple per decoder layer. Owned by the encoder's parameter group.
    bridge: Vec<(ParamId, ParamId, ParamId, ParamId)>,
}

#[derive(Clone)]
struct DecoderIds {
    layers: Vec<LstmCell>,
    attn_w: ParamId,
    combine_w: ParamId,
    combine_b: ParamId,
    out_w: ParamId,
    out_b: ParamId,
}

/// Parameter groups by canonical name prefix.
pub const GROUP_ENC_S: &str = "enc_s.";
pub const GROUP_ENC_T: &str = "enc_t.";
pub const GROUP_DEC: &str = "dec.";

/// The full parameter bundle. `dec.*` (decoder LSTM stack, attention matrix,
/// output projection, target embedding) is one storage shared by all routes;
/// `enc_s.*` and `enc_t.*` are disjoint.
#[derive(Clone)]
pub struct Seq2SeqModel {
    pub cfg: ModelConfig,
    pub params: ParamStore,
    src_embedding: ParamId,
    tgt_embedding: ParamId,
    enc_s: EncoderIds,
    enc_t: EncoderIds,
    dec: DecoderIds,
}

impl Seq2SeqModel {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        let src_embedding = uniform_init(
            &mut store,
            "enc_s.src_embedding".into(),
            vec![cfg.src_vocab, cfg.embed_dim],
            &mut rng,
        );
        let enc_s = Self::register_encoder(&mut store, "enc_s", &cfg, &mut rng);
        let enc_t = Self::register_encoder(&mut store, "enc_t", &cfg, &mut rng);

        let tgt_embedding = uniform_init(
            &mut store,
            "dec.tgt_embedding".into(),
            vec![cfg.tgt_vocab, cfg.embed_dim],
            &mut rng,
        );
        let mut dec_layers = Vec::with_capacity(cfg.dec_layers);
        for l in 0..cfg.dec_layers {
            let input_dim = if l == 0 { cfg.embed_dim } else { cfg.hidden_dim };
            dec_layers.push(LstmCell::register(
                &mut store,
                &format!("dec.layer{l}"),
                input_dim,
                cfg.hidden_dim,
                &mut rng,
            ));
        }
        let h = cfg.hidden_dim;
        let dec = DecoderIds {
            layers: dec_layers,
            attn_w: uniform_init(&mut store, "dec.attn_w".into(), vec![h, 2 * h], &mut rng),
            combine_w: uniform_init(
                &mut store,
                "dec.combine_w".into(),
                vec![h + 2 * h, h],
                &mut rng,
            ),
            combine_b: uniform_init(&mut store, "dec.combine_b".into(), vec![1, h], &mut rng),
            out_w: uniform_init(
                &mut store,
                "dec.out_w".into(),
                vec![h, cfg.tgt_vocab],
                &mut rng,
            ),
            out_b: uniform_init(
                &mut store,
                "dec.out_b".into(),
                vec![1, cfg.tgt_vocab],
                &mut rng,
            ),
        };
        Ok(Seq2SeqModel {
            cfg,
            params: store,
            src_embedding,
            tgt_embedding,
            enc_s,
            enc_t,
            dec,
        })
    }

    fn register_encoder(
        store: &mut ParamStore,
        prefix: &str,
        cfg: &ModelConfig,
        rng: &mut ChaCha8Rng,
    ) -> EncoderIds {
        let mut layers = Vec::with_capacity(cfg.enc_layers);
        for l in 0..cfg.enc_layers {
            let input_dim = if l == 0 {
                cfg.embed_dim
            } else {
                 2 * cfg.hidden_dim
            };
            let fwd = LstmCell::register(
                store,
                &format!("{prefix}.layer{l}.fwd"),
                input_dim,
                cfg.hidden_dim,
                rng,
            );
            let bwd = LstmCell::register(
                store,
                &format!("{prefix}.layer{l}.bwd"),
                input_dim,
                cfg.hidden_dim,
                rng,
            );
            layers.push((fwd, bwd));
        }
        let h = cfg.hidden_dim;
        let mut bridge = Vec::with_capacity(cfg.dec_layers);
        for l in 0..cfg.dec_layers {
            bridge.push((
                uniform_init(store, format!("{prefix}.bridge{l}.w_h"), vec![2 * h, h], rng),
                uniform_init(store, format!("{prefix}.bridge{l}.b_h"), vec![1, h], rng),
                uniform_init(store, format!("{prefix}.bridge{l}.w_c"), vec![2 * h, h], rng),
                uniform_init(store, format!("{prefix}.bridge{l}.b_c"), vec![1, h], rng),
            ));
        }
        EncoderIds { layers, bridge }
    }

    fn encoder(&self, side: Side) -> &EncoderIds {
        match side {
            Side::Source => &self.enc_s,
            Side::Target => &self.enc_t,
        }
    }

    fn embedding(&self, side: Side) -> ParamId {
        match side {
            Side::Source => self.src_embedding,
            Side::Target => self.tgt_embedding,
        }
    }

    pub fn src_embedding(&self) -> ParamId {
        self.src_embedding
    }

    pub fn tgt_embedding(&self) -> ParamId {
        self.tgt_embedding
    }

    fn vocab_size(&self, side: Side) -> usize {
        match side {
            Side::Source => self.cfg.src_vocab,
            Side::Target => self.cfg.tgt_vocab,
        }
    }

    /// Run the bidirectional encoder stack over a token sequence. Produces
    /// the per-position states `H` and tanh-projected initial states for
    /// the decoder.
    pub fn encode(&self, fwd: &mut Forward, tokens: &[u32], side: Side) -> Result<EncoderOutput> {
        if tokens.is_empty() {
            return Err(Error::contract("encode: empty token sequence"));
        }
        let vocab = self.vocab_size(side);
        if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= vocab) {
            return Err(Error::IndexOutOfRange {
                id: bad as usize,
                size: vocab,
            });
        }
        let encoder = self.encoder(side);
        let table = fwd.tape.param(&self.params, self.embedding(side));

        // layer inputs: embeddings first, then each layer's concatenated output
        let mut inputs: Vec<Tensor> = tokens
            .iter()
            .map(|&t| fwd.tape.lookup(&table, &[t]))
            .collect::<Result<_>>()?;

        let mut final_fwd = None;
        let mut final_bwd = None;
        let mut rows = Vec::new();
        for (fwd_cell, bwd_cell) in &encoder.layers {
            let fw = fwd_cell.bind(fwd.tape, &self.params);
            let bw = bwd_cell.bind(fwd.tape, &self.params);

            let mut fwd_states = Vec::with_capacity(inputs.len());
            let (mut h, mut c) = fwd_cell.zero_state();
            for x in &inputs {
                let (nh, nc) = fw.step(fwd.tape, x, &h, &c)?;
                fwd_states.push(nh.clone());
                h = nh;
                c = nc;
            }
            final_fwd = Some(h);

            let mut bwd_states = vec![Tensor::zeros(vec![0]); inputs.len()];
            let (mut h, mut c) = bwd_cell.zero_state();
            for (t, x) in inputs.iter().enumerate().rev() {
                let (nh, nc) = bw.step(fwd.tape, x, &h, &c)?;
                bwd_states[t] = nh.clone();
                h = nh;
                c = nc;
            }
            final_bwd = Some(h);

            rows = fwd_states
                .iter()
                .zip(&bwd_states)
                .map(|(f, b)| {
                    let fd = fwd.drop_out(f)?;
                    let bd = fwd.drop_out(b)?;
                    fwd.tape.concat_cols(&[&fd, &bd])
                })
                .collect::<Result<_>>()?;
            inputs = rows.clone();
        }

        let final_cat = fwd
            .tape
            .concat_cols(&[&final_fwd.unwrap(), &final_bwd.unwrap()])?;
        let mut init = Vec::with_capacity(encoder.bridge.len());
        for &(w_h, b_h, w_c, b_c) in &encoder.bridge {
            let (w_h, b_h) = (
                fwd.tape.param(&self.params, w_h),
                fwd.tape.param(&self.params, b_h),
            );
            let (w_c, b_c) = (
                fwd.tape.param(&self.params, w_c),
                fwd.tape.param(&self.params, b_c),
            );
            let hp = fwd.tape.matmul(&final_cat, &w_h)?;
            let hp = fwd.tape.add(&hp, &b_h)?;
            let h0 = fwd.tape.tanh(&hp);
            let cp = fwd.tape.matmul(&final_cat, &w_c)?;
            let cp = fwd.tape.add(&cp, &b_c)?;
            let c0 = fwd.tape.tanh(&cp);
            init.push((h0, c0));
        }

        let row_refs: Vec<&Tensor> = rows.iter().collect();
        let mat = fwd.tape.concat_rows(&row_refs)?;
        Ok(EncoderOutput { rows, mat, init })
    }

    /// Fresh decoder state from the encoder's projected initial states.
    pub fn init_decoder_state(&self, enc: &EncoderOutput) -> DecoderState {
        DecoderState {
            layers: enc.init.clone(),
        }
    }

    /// Bilinear attention over `H`: score each position j as
    /// `prev_state * W_a * h_j`, normalize with a softmax, and take the
    /// weighted sum of positions as the context.
    pub fn attend(
        &self,
        tape: &mut Tape,
        prev_state: &Tensor,
        enc: &EncoderOutput,
    ) -> Result<AttentionStep> {
        if enc.rows.is_empty() {
            return Err(Error::contract("attend: empty encoder output"));
        }
        let w_a = tape.param(&self.params, self.dec.attn_w);
        let query = tape.matmul(prev_state, &w_a)?;
        let mat_t = tape.transpose(&enc.mat);
        let scores = tape.matmul(&query, &mat_t)?;
        let weights = tape.softmax_rows(&scores);
        let context = tape.matmul(&weights, &enc.mat)?;
        Ok(AttentionStep {
            scores,
            weights,
            context,
        })
    }

    /// One decode step: embed the previous token, compute the attention
    /// context from the pre-step top state, advance the LSTM stack, and
    /// combine state and context into a distribution over the target
    /// vocabulary.
    pub fn decode_step(
        &self,
        fwd: &mut Forward,
        prev_token: u32,
        state: &DecoderState,
        enc: &EncoderOutput,
    ) -> Result<(Tensor, DecoderState)> {
        if prev_token as usize >= self.cfg.tgt_vocab {
            return Err(Error::IndexOutOfRange {
                id: prev_token as usize,
                size: self.cfg.tgt_vocab,
            });
        }
        let table = fwd.tape.param(&self.params, self.tgt_embedding);
        let x = fwd.tape.lookup(&table, &[prev_token])?;

        // Attention scores use the previous step's top-layer state.
        let att = self.attend(fwd.tape, state.top_h(), enc)?;

        let mut layers = Vec::with_capacity(self.dec.layers.len());
        let mut input = x;
        let mut top = None;
        for (cell, (h, c)) in self.dec.layers.iter().zip(&state.layers) {
            let w = cell.bind(fwd.tape, &self.params);
            let (nh, nc) = w.step(fwd.tape, &input, h, c)?;
            let out = fwd.drop_out(&nh)?;
            layers.push((nh, nc));
            input = out.clone();
            top = Some(out);
        }
        let top = top.expect("decoder has layers");

        let combine_w = fwd.tape.param(&self.params, self.dec.combine_w);
        let combine_b = fwd.tape.param(&self.params, self.dec.combine_b);
        let cat = fwd.tape.concat_cols(&[&top, &att.context])?;
        let pre = fwd.tape.matmul(&cat, &combine_w)?;
        let pre = fwd.tape.add(&pre, &combine_b)?;
        let combined = fwd.tape.tanh(&pre);

        let out_w = fwd.tape.param(&self.params, self.dec.out_w);
        let out_b = fwd.tape.param(&self.params, self.dec.out_b);
        let logits = fwd.tape.matmul(&combined, &out_w)?;
        let logits = fwd.tape.add(&logits, &out_b)?;
        let p = fwd.tape.softmax_rows(&logits);

        Ok((p, DecoderState { layers }))
    }

    /// Teacher-forced decoding: the first input is BOS, then each gold
    /// token feeds the next step. Returns one distribution per target
    /// position.
    pub fn decode_teacher_forced(
        &self,
        fwd: &mut Forward,
        target: &[u32],
        enc: &EncoderOutput,
    ) -> Result<Vec<Tensor>> {
        if target.is_empty() {
            return Err(Error::contract("decode_teacher_forced: empty target"));
        }
        let mut state = self.init_decoder_state(enc);
        let mut dists = Vec::with_capacity(target.len());
        let mut prev = BOS_ID;
        for &gold in target {
            let (p, next) = self.decode_step(fwd, prev, &state, enc)?;
            dists.push(p);
            state = next;
            prev = gold;
        }
        Ok(dists)
    }

    /// Autoregressive decoding that feeds its own previous output back as
    /// the next input. Stops after emitting EOS or reaching `max_len`.
    /// Sampling draws from each step's distribution with `rng`.
    pub fn decode_autoregressive(
        &self,
        fwd: &mut Forward,
        enc: &EncoderOutput,
        mode: DecodeMode,
        max_len: usize,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Vec<u32>, Vec<Tensor>)> {
        if max_len == 0 {
            return Err(Error::contract("decode_autoregressive: max_len must be >= 1"));
        }
        let mut rng = rng;
        let mut state = self.init_decoder_state(enc);
        let mut tokens = Vec::new();
        let mut dists = Vec::new();
        let mut prev = BOS_ID;
        for _ in 0..max_len {
            let (p, next_state) = self.decode_step(fwd, prev, &state, enc)?;
            let choice = match mode {
                DecodeMode::Greedy => argmax(p.values()) as u32,
                DecodeMode::Sample => {
                    let r = rng
                        .as_deref_mut()
                        .ok_or_else(|| Error::contract("sampled decoding requires an RNG"))?;
                    sample_categorical(p.values(), r) as u32
                }
            };
            tokens.push(choice);
            dists.push(p);
            state = next_state;
            prev = choice;
            if choice == EOS_ID {
                break;
            }
        }
        Ok((tokens, dists))
    }

    /// Greedy decode in eval mode, EOS stripped. The plain inference path.
    pub fn generate(&self, source: &[u32], max_len: usize) -> Result<Vec<u32>> {
        self.greedy_from(source, Side::Source, max_len)
    }

    /// Auto-encoding path: encode target-side text with `enc_t` and decode
    /// it back. Used to measure denoising reconstruction quality.
    pub fn reconstruct(&self, target: &[u32], max_len: usize) -> Result<Vec<u32>> {
        self.greedy_from(target, Side::Target, max_len)
    }

    fn greedy_from(&self, tokens: &[u32], side: Side, max_len: usize) -> Result<Vec<u32>> {
        let mut tape = Tape::new();
        let mut fwd = Forward::eval(&mut tape);
        let enc = self.encode(&mut fwd, tokens, side)?;
        let (mut out, _) =
            self.decode_autoregressive(&mut fwd, &enc, DecodeMode::Greedy, max_len, None)?;
        if out.last() == Some(&EOS_ID) {
            out.pop();
        }
        Ok(out)
    }
}
