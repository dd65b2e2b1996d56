//! Encoder/decoder Transformer over audio and pose windows.
//!
//! Pre-norm residual blocks; the encoder self-attends over the audio window
//! under a padding mask, the decoder self-attends causally over the shifted
//! pose window and cross-attends to the encoder memory under the encoder's
//! padding mask. A learned positional table indexed by absolute song position
//! is shared between the two streams, index 0 reserved for the start token.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{linear_init, normal_init, pose_head, ParamId, ParamStore, WindowInput, POSE_DIM};
use crate::error::{Error, Result};
use crate::tensor::{Graph, NodeId, Scalar, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformerConfig {
    pub layers: usize,
    pub heads: usize,
    pub embed_dim: usize,
    pub ff_dim: usize,
    pub dropout: f64,
    pub window: usize,
    pub position_vocab: usize,
    pub feature_dim: usize,
}

impl TransformerConfig {
    /// The published configuration: 6 blocks, 8 heads, 128-dim embeddings,
    /// 2048-neuron feed-forwards, dropout 0.1, K = 20.
    pub fn paper(position_vocab: usize) -> Self {
        TransformerConfig {
            layers: 6,
            heads: 8,
            embed_dim: 128,
            ff_dim: 2048,
            dropout: 0.1,
            window: 20,
            position_vocab,
            feature_dim: crate::audio::FEATURE_DIM,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "embed_dim {} not divisible by heads {}",
                self.embed_dim, self.heads
            )));
        }
        if self.window == 0 {
            return Err(Error::Config("window K must be >= 1".into()));
        }
        if self.position_vocab < 2 {
            return Err(Error::Config("position vocab must hold >= 2 entries".into()));
        }
        Ok(())
    }
}

/// Additive padding mask over K key slots: 0 where the slot is real,
/// −∞ where it is padding. Errors when `valid_len` is 0 (the encoder needs
/// at least one token) or exceeds `k`.
pub fn make_padding_mask<S: Scalar>(valid_len: usize, k: usize) -> Result<Tensor<S>> {
    if valid_len == 0 {
        return Err(Error::Data("padding mask needs valid_len >= 1".into()));
    }
    if valid_len > k {
        return Err(Error::Data(format!(
            "valid_len {valid_len} exceeds window {k}"
        )));
    }
    let data: Vec<S> = (0..k)
        .map(|i| {
            if i < valid_len {
                S::zero()
            } else {
                S::neg_infinity()
            }
        })
        .collect();
    Ok(Tensor::new(vec![k], data))
}

/// Additive causal mask: entry (i, j) is 0 for j ≤ i and −∞ above the
/// diagonal, so each query attends to itself and the past.
pub fn make_causal_mask<S: Scalar>(k: usize) -> Tensor<S> {
    assert!(k >= 1, "causal mask needs K >= 1");
    let mut data = vec![S::zero(); k * k];
    for i in 0..k {
        for j in i + 1..k {
            data[i * k + j] = S::neg_infinity();
        }
    }
    Tensor::new(vec![k, k], data)
}

struct AttnParams {
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
}

struct LayerNormParams {
    gain: ParamId,
    bias: ParamId,
}

struct FfParams {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

struct EncoderLayer {
    ln1: LayerNormParams,
    attn: AttnParams,
    ln2: LayerNormParams,
    ff: FfParams,
}

struct DecoderLayer {
    ln1: LayerNormParams,
    self_attn: AttnParams,
    ln2: LayerNormParams,
    cross_attn: AttnParams,
    ln3: LayerNormParams,
    ff: FfParams,
}

pub struct TransformerModel<S: Scalar> {
    cfg: TransformerConfig,
    store: ParamStore<S>,
    audio_w: ParamId,
    audio_b: ParamId,
    pose_w: ParamId,
    pose_b: ParamId,
    pos_table: ParamId,
    encoder: Vec<EncoderLayer>,
    enc_ln: LayerNormParams,
    decoder: Vec<DecoderLayer>,
    dec_ln: LayerNormParams,
    head_w: ParamId,
    head_b: ParamId,
}

fn add_linear<S: Scalar>(
    store: &mut ParamStore<S>,
    rng: &mut ChaCha8Rng,
    name: &str,
    fan_in: usize,
    fan_out: usize,
) -> (ParamId, ParamId) {
    let w = store.add(format!("{name}.w"), linear_init(rng, fan_in, fan_out));
    let b = store.add(format!("{name}.b"), Tensor::zeros(vec![fan_out]));
    (w, b)
}

fn add_layer_norm<S: Scalar>(
    store: &mut ParamStore<S>,
    name: &str,
    dim: usize,
) -> LayerNormParams {
    LayerNormParams {
        gain: store.add(format!("{name}.g"), Tensor::filled(vec![dim], S::one())),
        bias: store.add(format!("{name}.b"), Tensor::zeros(vec![dim])),
    }
}

fn add_attn<S: Scalar>(
    store: &mut ParamStore<S>,
    rng: &mut ChaCha8Rng,
    name: &str,
    dim: usize,
) -> AttnParams {
    let (wq, bq) = add_linear(store, rng, &format!("{name}.q"), dim, dim);
    let (wk, bk) = add_linear(store, rng, &format!("{name}.k"), dim, dim);
    let (wv, bv) = add_linear(store, rng, &format!("{name}.v"), dim, dim);
    let (wo, bo) = add_linear(store, rng, &format!("{name}.o"), dim, dim);
    AttnParams {
        wq,
        bq,
        wk,
        bk,
        wv,
        bv,
        wo,
        bo,
    }
}

fn add_ff<S: Scalar>(
    store: &mut ParamStore<S>,
    rng: &mut ChaCha8Rng,
    name: &str,
    dim: usize,
    ff_dim: usize,
) -> FfParams {
    let (w1, b1) = add_linear(store, rng, &format!("{name}.1"), dim, ff_dim);
    let (w2, b2) = add_linear(store, rng, &format!("{name}.2"), ff_dim, dim);
    FfParams { w1, b1, w2, b2 }
}

impl<S: Scalar> TransformerModel<S> {
    pub fn new(cfg: TransformerConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let e = cfg.embed_dim;
        let (audio_w, audio_b) = add_linear(&mut store, rng, "embed.audio", cfg.feature_dim, e);
        let (pose_w, pose_b) = add_linear(&mut store, rng, "embed.pose", POSE_DIM, e);
        let pos_table = store.add(
            "embed.position",
            normal_init(rng, vec![cfg.position_vocab, e], 0.02),
        );
        let mut encoder = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            encoder.push(EncoderLayer {
                ln1: add_layer_norm(&mut store, &format!("enc.{l}.ln1"), e),
                attn: add_attn(&mut store, rng, &format!("enc.{l}.attn"), e),
                ln2: add_layer_norm(&mut store, &format!("enc.{l}.ln2"), e),
                ff: add_ff(&mut store, rng, &format!("enc.{l}.ff"), e, cfg.ff_dim),
            });
        }
        let enc_ln = add_layer_norm(&mut store, "enc.final_ln", e);
        let mut decoder = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            decoder.push(DecoderLayer {
                ln1: add_layer_norm(&mut store, &format!("dec.{l}.ln1"), e),
                self_attn: add_attn(&mut store, rng, &format!("dec.{l}.self"), e),
                ln2: add_layer_norm(&mut store, &format!("dec.{l}.ln2"), e),
                cross_attn: add_attn(&mut store, rng, &format!("dec.{l}.cross"), e),
                ln3: add_layer_norm(&mut store, &format!("dec.{l}.ln3"), e),
                ff: add_ff(&mut store, rng, &format!("dec.{l}.ff"), e, cfg.ff_dim),
            });
        }
        let dec_ln = add_layer_norm(&mut store, "dec.final_ln", e);
        let (head_w, head_b) = add_linear(&mut store, rng, "head", e, POSE_DIM);
        Ok(TransformerModel {
            cfg,
            store,
            audio_w,
            audio_b,
            pose_w,
            pose_b,
            pos_table,
            encoder,
            enc_ln,
            decoder,
            dec_ln,
            head_w,
            head_b,
        })
    }

    pub fn config(&self) -> &TransformerConfig {
        &self.cfg
    }

    pub fn store(&self) -> &ParamStore<S> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<S> {
        &mut self.store
    }

    /// Positional ids for the encoder: absolute song index + 1 (0 is the
    /// start token), clamped to the table for songs longer than the vocab.
    fn position_ids(&self, input: &WindowInput<'_, S>, decoder: bool) -> Vec<usize> {
        let k = self.cfg.window;
        let cap = self.cfg.position_vocab - 1;
        let mut ids = Vec::with_capacity(input.start_positions.len() * k);
        for &start in input.start_positions {
            for i in 0..k {
                let raw = start + i + if decoder { 0 } else { 1 };
                ids.push(raw.min(cap));
            }
        }
        ids
    }

    /// Batched additive key mask `(batch, 1, 1, K)` from per-element valid
    /// lengths.
    fn batch_padding_mask(&self, valid_lens: &[usize]) -> Tensor<S> {
        let k = self.cfg.window;
        let mut data = Vec::with_capacity(valid_lens.len() * k);
        for &v in valid_lens {
            let m = make_padding_mask::<S>(v, k).expect("valid_len checked by caller");
            data.extend_from_slice(m.data());
        }
        Tensor::new(vec![valid_lens.len(), 1, 1, k], data)
    }

    #[allow(clippy::too_many_arguments)]
    fn attention(
        &self,
        g: &mut Graph<S>,
        p: &AttnParams,
        bound: &[NodeId],
        queries: NodeId,
        keys_values: NodeId,
        mask: NodeId,
        batch: usize,
    ) -> NodeId {
        let e = self.cfg.embed_dim;
        let h = self.cfg.heads;
        let d = e / h;
        let k = self.cfg.window;
        let split = |g: &mut Graph<S>, x: NodeId| {
            let r = g.reshape(x, vec![batch, k, h, d]);
            g.permute(r, &[0, 2, 1, 3]) // (B, H, K, D)
        };
        let q = g.linear(queries, bound[p.wq.0], bound[p.bq.0]);
        let kx = g.linear(keys_values, bound[p.wk.0], bound[p.bk.0]);
        let v = g.linear(keys_values, bound[p.wv.0], bound[p.bv.0]);
        let q = split(g, q);
        let kx = split(g, kx);
        let v = split(g, v);
        let kt = g.permute(kx, &[0, 1, 3, 2]); // (B, H, D, K)
        let scores = g.matmul(q, kt); // (B, H, K, K)
        let scaled = g.scale(scores, S::from_f64(1.0 / (d as f64).sqrt()));
        let masked = g.add(scaled, mask);
        let before = g.empty_softmax_rows();
        let attn = g.softmax(masked, 3);
        assert_eq!(
            g.empty_softmax_rows(),
            before,
            "attention encountered a fully masked row"
        );
        let ctx = g.matmul(attn, v); // (B, H, K, D)
        let merged = g.permute(ctx, &[0, 2, 1, 3]);
        let flat = g.reshape(merged, vec![batch, k, e]);
        g.linear(flat, bound[p.wo.0], bound[p.bo.0])
    }

    fn feed_forward(
        &self,
        g: &mut Graph<S>,
        p: &FfParams,
        bound: &[NodeId],
        x: NodeId,
    ) -> NodeId {
        let h = g.linear(x, bound[p.w1.0], bound[p.b1.0]);
        let a = g.relu(h);
        g.linear(a, bound[p.w2.0], bound[p.b2.0])
    }

    fn layer_norm(
        &self,
        g: &mut Graph<S>,
        p: &LayerNormParams,
        bound: &[NodeId],
        x: NodeId,
    ) -> NodeId {
        g.layer_norm(x, bound[p.gain.0], bound[p.bias.0])
    }

    /// Encoder stack: audio embedding + positions, then pre-norm blocks of
    /// padded self-attention and feed-forward.
    #[allow(clippy::too_many_arguments)]
    pub fn encode(
        &self,
        g: &mut Graph<S>,
        bound: &[NodeId],
        input: &WindowInput<'_, S>,
        pad_mask: NodeId,
        training: bool,
        rng: &mut ChaCha8Rng,
    ) -> NodeId {
        let batch = input.start_positions.len();
        let k = self.cfg.window;
        let audio = g.constant(input.audio.clone());
        let emb = g.linear(audio, bound[self.audio_w.0], bound[self.audio_b.0]);
        let ids = self.position_ids(input, false);
        let pos = g.embedding(bound[self.pos_table.0], &ids, &[batch, k]);
        let summed = g.add(emb, pos);
        let mut x = g.dropout(summed, self.cfg.dropout, training, rng);
        for layer in &self.encoder {
            let normed = self.layer_norm(g, &layer.ln1, bound, x);
            let attn = self.attention(g, &layer.attn, bound, normed, normed, pad_mask, batch);
            let attn = g.dropout(attn, self.cfg.dropout, training, rng);
            x = g.add(x, attn);
            let normed = self.layer_norm(g, &layer.ln2, bound, x);
            let ff = self.feed_forward(g, &layer.ff, bound, normed);
            let ff = g.dropout(ff, self.cfg.dropout, training, rng);
            x = g.add(x, ff);
        }
        self.layer_norm(g, &self.enc_ln, bound, x)
    }

    /// Decoder stack over the shifted pose window: causal+padded
    /// self-attention, cross-attention over the encoder memory (encoder
    /// padding mask), feed-forward; then the tanh·π head.
    #[allow(clippy::too_many_arguments)]
    pub fn decode(
        &self,
        g: &mut Graph<S>,
        bound: &[NodeId],
        input: &WindowInput<'_, S>,
        memory: NodeId,
        dec_mask: NodeId,
        pad_mask: NodeId,
        training: bool,
        rng: &mut ChaCha8Rng,
    ) -> NodeId {
        let batch = input.start_positions.len();
        let k = self.cfg.window;
        let poses = g.constant(input.shifted_poses.clone());
        let emb = g.linear(poses, bound[self.pose_w.0], bound[self.pose_b.0]);
        let ids = self.position_ids(input, true);
        let pos = g.embedding(bound[self.pos_table.0], &ids, &[batch, k]);
        let summed = g.add(emb, pos);
        let mut x = g.dropout(summed, self.cfg.dropout, training, rng);
        for layer in &self.decoder {
            let normed = self.layer_norm(g, &layer.ln1, bound, x);
            let attn =
                self.attention(g, &layer.self_attn, bound, normed, normed, dec_mask, batch);
            let attn = g.dropout(attn, self.cfg.dropout, training, rng);
            x = g.add(x, attn);
            let normed = self.layer_norm(g, &layer.ln2, bound, x);
            let cross =
                self.attention(g, &layer.cross_attn, bound, normed, memory, pad_mask, batch);
            let cross = g.dropout(cross, self.cfg.dropout, training, rng);
            x = g.add(x, cross);
            let normed = self.layer_norm(g, &layer.ln3, bound, x);
            let ff = self.feed_forward(g, &layer.ff, bound, normed);
            let ff = g.dropout(ff, self.cfg.dropout, training, rng);
            x = g.add(x, ff);
        }
        let x = self.layer_norm(g, &self.dec_ln, bound, x);
        pose_head(g, x, bound[self.head_w.0], bound[self.head_b.0])
    }

    pub fn forward(
        &self,
        g: &mut Graph<S>,
        bound: &[NodeId],
        input: &WindowInput<'_, S>,
        training: bool,
        rng: &mut ChaCha8Rng,
    ) -> NodeId {
        let batch = input.start_positions.len();
        let k = self.cfg.window;
        assert_eq!(
            input.audio.shape(),
            &[batch, k, self.cfg.feature_dim],
            "audio window shape"
        );
        assert_eq!(
            input.shifted_poses.shape(),
            &[batch, k, POSE_DIM],
            "pose window shape"
        );
        assert_eq!(input.valid_lens.len(), batch);
        assert!(input
            .valid_lens
            .iter()
            .all(|&v| v >= 1 && v <= k), "valid lengths out of range");

        let pad = self.batch_padding_mask(input.valid_lens);
        let pad_mask = g.constant(pad);
        let causal = make_causal_mask::<S>(k).reshaped(vec![1, 1, k, k]);
        let causal = g.constant(causal);
        // Decoder self-attention mask: causal ∧ padding, composed additively.
        let dec_mask = g.add(causal, pad_mask);

        let memory = self.encode(g, bound, input, pad_mask, training, rng);
        self.decode(
            g, bound, input, memory, dec_mask, pad_mask, training, rng,
        )
    }
}
