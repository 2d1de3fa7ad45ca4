//! Small post-norm transformer encoder trained from scratch.
//!
//! Embeddings are token + learned absolute position + segment, followed by a
//! layer norm. Each layer is multi-head self-attention and a feed-forward
//! block, each wrapped as `LayerNorm(x + Dropout(sublayer(x)))`.
//!
//! Dense weights are stored input-major (`[d_in × d_out]`) so a layer is a
//! plain `x · W + b`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Activation, Graph, ParamId, ParamStore, Tensor, Var};
use crate::text::EncodedInput;

/// Added to attention scores of masked keys; `exp` of it underflows to 0.
const MASK_BIAS: f64 = -1e30;
const LN_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_positions: usize,
    pub vocab_size: usize,
    pub dropout_p: f64,
    pub activation: Activation,
}

impl EncoderConfig {
    /// Desk-scale defaults for a given vocabulary.
    pub fn desk(vocab_size: usize) -> Self {
        EncoderConfig {
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            d_ff: 256,
            max_positions: 128,
            vocab_size,
            dropout_p: 0.1,
            activation: Activation::Gelu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("d_model", self.d_model),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("d_ff", self.d_ff),
            ("max_positions", self.max_positions),
            ("vocab_size", self.vocab_size),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::config(format!("encoder {name} must be positive")));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::config(format!("encoder dropout {} outside [0,1)", self.dropout_p)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct LayerIds {
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln1_gain: ParamId,
    ln1_bias: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
    ln2_gain: ParamId,
    ln2_bias: ParamId,
}

/// Encoder architecture bound to parameter slots in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Encoder {
    config: EncoderConfig,
    token_emb: ParamId,
    pos_emb: ParamId,
    seg_emb: ParamId,
    emb_ln_gain: ParamId,
    emb_ln_bias: ParamId,
    layers: Vec<LayerIds>,
}

/// Per-layer attention probabilities, one `[len × len]` node per head.
pub struct EncodeTrace {
    pub attention: Vec<Vec<Var>>,
}

fn uniform<R: Rng + ?Sized>(shape: &[usize], scale: f64, rng: &mut R) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-scale..=scale)).collect();
    Tensor::new(shape.to_vec(), data).expect("positive shape")
}

impl Encoder {
    /// Registers freshly initialised encoder parameters.
    ///
    /// Every weight matrix and embedding is drawn from `U[-scale, scale]`;
    /// biases start at 0, layer-norm gains at 1.
    pub fn init_params<R: Rng + ?Sized>(
        config: &EncoderConfig,
        store: &mut ParamStore,
        rng: &mut R,
        scale: f64,
    ) -> Result<Encoder> {
        config.validate()?;
        let d = config.d_model;
        let mut weight = |store: &mut ParamStore, name: String, shape: &[usize]| {
            store.insert(name, uniform(shape, scale, rng))
        };
        weight(store, "encoder.token_emb".into(), &[config.vocab_size, d])?;
        weight(store, "encoder.pos_emb".into(), &[config.max_positions, d])?;
        weight(store, "encoder.seg_emb".into(), &[2, d])?;
        store.insert("encoder.emb_ln.gain", Tensor::full(&[d], 1.0))?;
        store.insert("encoder.emb_ln.bias", Tensor::zeros(&[d]))?;
        for l in 0..config.n_layers {
            let p = format!("encoder.layer{l}");
            for w in ["wq", "wk", "wv", "wo"] {
                weight(store, format!("{p}.attn.{w}"), &[d, d])?;
                store.insert(format!("{p}.attn.b{}", &w[1..]), Tensor::zeros(&[d]))?;
            }
            store.insert(format!("{p}.ln1.gain"), Tensor::full(&[d], 1.0))?;
            store.insert(format!("{p}.ln1.bias"), Tensor::zeros(&[d]))?;
            weight(store, format!("{p}.ffn.w1"), &[d, config.d_ff])?;
            store.insert(format!("{p}.ffn.b1"), Tensor::zeros(&[config.d_ff]))?;
            weight(store, format!("{p}.ffn.w2"), &[config.d_ff, d])?;
            store.insert(format!("{p}.ffn.b2"), Tensor::zeros(&[d]))?;
            store.insert(format!("{p}.ln2.gain"), Tensor::full(&[d], 1.0))?;
            store.insert(format!("{p}.ln2.bias"), Tensor::zeros(&[d]))?;
        }
        Encoder::bind(config, store)
    }

    /// Resolves parameter slots by name and checks their shapes.
    pub fn bind(config: &EncoderConfig, store: &ParamStore) -> Result<Encoder> {
        config.validate()?;
        let d = config.d_model;
        let get = |name: &str, shape: &[usize]| -> Result<ParamId> {
            let id = store.expect_id(name)?;
            let actual = store.get(id).shape();
            if actual != shape && !(shape.len() == 1 && actual.iter().product::<usize>() == shape[0]) {
                return Err(Error::Shape {
                    op: "encoder parameter",
                    lhs: shape.to_vec(),
                    rhs: actual.to_vec(),
                });
            }
            Ok(id)
        };
        let layers = (0..config.n_layers)
            .map(|l| {
                let p = format!("encoder.layer{l}");
                Ok(LayerIds {
                    wq: get(&format!("{p}.attn.wq"), &[d, d])?,
                    bq: get(&format!("{p}.attn.bq"), &[d])?,
                    wk: get(&format!("{p}.attn.wk"), &[d, d])?,
                    bk: get(&format!("{p}.attn.bk"), &[d])?,
                    wv: get(&format!("{p}.attn.wv"), &[d, d])?,
                    bv: get(&format!("{p}.attn.bv"), &[d])?,
                    wo: get(&format!("{p}.attn.wo"), &[d, d])?,
                    bo: get(&format!("{p}.attn.bo"), &[d])?,
                    ln1_gain: get(&format!("{p}.ln1.gain"), &[d])?,
                    ln1_bias: get(&format!("{p}.ln1.bias"), &[d])?,
                    w1: get(&format!("{p}.ffn.w1"), &[d, config.d_ff])?,
                    b1: get(&format!("{p}.ffn.b1"), &[config.d_ff])?,
                    w2: get(&format!("{p}.ffn.w2"), &[config.d_ff, d])?,
                    b2: get(&format!("{p}.ffn.b2"), &[d])?,
                    ln2_gain: get(&format!("{p}.ln2.gain"), &[d])?,
                    ln2_bias: get(&format!("{p}.ln2.bias"), &[d])?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Encoder {
            config: config.clone(),
            token_emb: get("encoder.token_emb", &[config.vocab_size, d])?,
            pos_emb: get("encoder.pos_emb", &[config.max_positions, d])?,
            seg_emb: get("encoder.seg_emb", &[2, d])?,
            emb_ln_gain: get("encoder.emb_ln.gain", &[d])?,
            emb_ln_bias: get("encoder.emb_ln.bias", &[d])?,
            layers,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    /// Hidden states `[len × d_model]`, one row per input position.
    pub fn encode<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        input: &EncodedInput,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        self.run(g, store, input, training, rng, None)
    }

    /// Like [`Encoder::encode`] but also returns attention probabilities.
    pub fn encode_traced<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        input: &EncodedInput,
        training: bool,
        rng: &mut R,
    ) -> Result<(Var, EncodeTrace)> {
        let mut trace = EncodeTrace { attention: Vec::new() };
        let h = self.run(g, store, input, training, rng, Some(&mut trace))?;
        Ok((h, trace))
    }

    fn run<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        input: &EncodedInput,
        training: bool,
        rng: &mut R,
        mut trace: Option<&mut EncodeTrace>,
    ) -> Result<Var> {
        let cfg = &self.config;
        let len = input.len();
        if len == 0 {
            return Err(Error::config("cannot encode an empty input"));
        }
        if len > cfg.max_positions {
            return Err(Error::config(format!(
                "input of {len} positions exceeds max_positions {}",
                cfg.max_positions
            )));
        }
        let ids: Vec<usize> = input.token_ids.iter().map(|&t| t as usize).collect();
        if let Some(&bad) = ids.iter().find(|&&t| t >= cfg.vocab_size) {
            return Err(Error::config(format!("token id {bad} outside vocabulary of {}", cfg.vocab_size)));
        }
        let segs: Vec<usize> = input.segment_ids.iter().map(|&s| s as usize).collect();
        let positions: Vec<usize> = (0..len).collect();

        let p = |g: &mut Graph, id| g.param(store, id);
        let tok_table = p(g, self.token_emb);
        let tok = g.gather_rows(tok_table, &ids)?;
        let pos_table = p(g, self.pos_emb);
        let pos = g.gather_rows(pos_table, &positions)?;
        let seg_table = p(g, self.seg_emb);
        let seg = g.gather_rows(seg_table, &segs)?;
        let x = g.sum(&[tok, pos, seg])?;
        let (gain, bias) = (p(g, self.emb_ln_gain), p(g, self.emb_ln_bias));
        let x = g.layer_norm(x, gain, bias, LN_EPS)?;
        let mut x = g.dropout(x, cfg.dropout_p, training, rng)?;

        let mask = if input.attention_mask.iter().all(|&m| m) {
            None
        } else {
            let row: Vec<f64> = input
                .attention_mask
                .iter()
                .map(|&m| if m { 0.0 } else { MASK_BIAS })
                .collect();
            Some(g.constant(Tensor::new(vec![len, len], row.repeat(len))?))
        };

        let dh = cfg.d_model / cfg.n_heads;
        let inv_sqrt = 1.0 / (dh as f64).sqrt();
        for layer in &self.layers {
            let dense = |g: &mut Graph, x: Var, w: ParamId, b: ParamId| -> Result<Var> {
                let (w, b) = (g.param(store, w), g.param(store, b));
                let y = g.matmul(x, w)?;
                g.add_row(y, b)
            };
            let q = dense(g, x, layer.wq, layer.bq)?;
            let k = dense(g, x, layer.wk, layer.bk)?;
            let v = dense(g, x, layer.wv, layer.bv)?;
            let mut heads = Vec::with_capacity(cfg.n_heads);
            let mut probs = Vec::with_capacity(cfg.n_heads);
            for h in 0..cfg.n_heads {
                let qh = g.slice_cols(q, h * dh, dh)?;
                let kh = g.slice_cols(k, h * dh, dh)?;
                let vh = g.slice_cols(v, h * dh, dh)?;
                let kt = g.transpose(kh)?;
                let scores = g.matmul(qh, kt)?;
                let mut scores = g.scale(scores, inv_sqrt);
                if let Some(m) = mask {
                    scores = g.add(scores, m)?;
                }
                let att = g.softmax(scores, 1)?;
                probs.push(att);
                heads.push(g.matmul(att, vh)?);
            }
            if let Some(t) = trace.as_deref_mut() {
                t.attention.push(probs);
            }
            let ctx = g.concat_cols(&heads)?;
            let attn_out = dense(g, ctx, layer.wo, layer.bo)?;
            let attn_out = g.dropout(attn_out, cfg.dropout_p, training, rng)?;
            let res = g.add(x, attn_out)?;
            let (gain, bias) = (p(g, layer.ln1_gain), p(g, layer.ln1_bias));
            let x1 = g.layer_norm(res, gain, bias, LN_EPS)?;

            let hdn = dense(g, x1, layer.w1, layer.b1)?;
            let hdn = g.activation(hdn, cfg.activation);
            let ff = dense(g, hdn, layer.w2, layer.b2)?;
            let ff = g.dropout(ff, cfg.dropout_p, training, rng)?;
            let res = g.add(x1, ff)?;
            let (gain, bias) = (p(g, layer.ln2_gain), p(g, layer.ln2_bias));
            x = g.layer_norm(res, gain, bias, LN_EPS)?;
        }
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng_from_seed;
    use crate::tensor::{finite_diff_check, sample_coords_among};
    use crate::text::{encode_single, train_vocab, Vocab};

    fn setup(d_model: usize) -> (Vocab, EncoderConfig, ParamStore, Encoder) {
        let vocab = train_vocab(&["troops open fire on protestors", "crowd celebrates"], 80).unwrap();
        let mut cfg = EncoderConfig::desk(vocab.len());
        cfg.d_model = d_model;
        cfg.d_ff = 2 * d_model;
        cfg.n_heads = 2;
        cfg.max_positions = 32;
        let mut store = ParamStore::new();
        let enc = Encoder::init_params(&cfg, &mut store, &mut rng_from_seed(7), 0.07).unwrap();
        (vocab, cfg, store, enc)
    }

    #[test]
    fn init_is_uniform_and_seeded() {
        let (_, cfg, store, _) = setup(16);
        let w = store.by_name("encoder.layer0.attn.wq").unwrap();
        assert!(w.data().iter().all(|v| v.abs() <= 0.07));
        assert_eq!(store.by_name("encoder.layer1.ln2.gain").unwrap().data(), &[1.0; 16]);
        let mut again = ParamStore::new();
        Encoder::init_params(&cfg, &mut again, &mut rng_from_seed(7), 0.07).unwrap();
        assert_eq!(store, again);
    }

    #[test]
    fn rejects_bad_config() {
        let mut cfg = EncoderConfig::desk(10);
        cfg.n_heads = 3;
        assert!(cfg.validate().is_err());
        cfg.n_heads = 4;
        cfg.d_ff = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn masking_makes_padding_invisible() {
        let (vocab, _, store, enc) = setup(16);
        let input = encode_single("troops open fire", &vocab, 12).unwrap();
        let n = input.unpadded_len();
        let mut other = input.clone();
        // swap two padding positions' ids and change padding content
        other.token_ids[n] = vocab.id("c").unwrap();
        other.token_ids[n + 3] = vocab.id("##s").unwrap();
        other.segment_ids[n + 1] = 1;
        let run = |inp: &EncodedInput| {
            let mut g = Graph::new();
            let h = enc.encode(&mut g, &store, inp, false, &mut rng_from_seed(0)).unwrap();
            g.value(h).clone()
        };
        let (a, b) = (run(&input), run(&other));
        for r in 0..n {
            assert_eq!(a.row_slice(r), b.row_slice(r), "row {r}");
        }
        // trimming padding gives the same content rows too
        let t = run(&input.trimmed());
        for r in 0..n {
            for (x, y) in a.row_slice(r).iter().zip(t.row_slice(r)) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn attention_rows_normalized_over_unmasked() {
        let (vocab, _, store, enc) = setup(16);
        let input = encode_single("troops open fire", &vocab, 12).unwrap();
        let n = input.unpadded_len();
        let mut g = Graph::new();
        let (_, trace) = enc
            .encode_traced(&mut g, &store, &input, false, &mut rng_from_seed(0))
            .unwrap();
        for layer in &trace.attention {
            for &a in layer {
                let t = g.value(a);
                for r in 0..t.rows_cols().0 {
                    let row = t.row_slice(r);
                    assert!((row[..n].iter().sum::<f64>() - 1.0).abs() < 1e-12);
                    assert!(row[n..].iter().all(|&v| v == 0.0));
                }
            }
        }
    }

    #[test]
    fn single_token_and_overlong_inputs() {
        let (vocab, _, store, enc) = setup(16);
        let input = encode_single("", &vocab, 3).unwrap().trimmed();
        let mut g = Graph::new();
        let h = enc.encode(&mut g, &store, &input, false, &mut rng_from_seed(0)).unwrap();
        assert_eq!(g.shape(h), &[2, 16]);
        assert!(g.value(h).is_finite());
        let long = encode_single("troops", &vocab, 40).unwrap();
        assert!(enc.encode(&mut g, &store, &long, false, &mut rng_from_seed(0)).is_err());
    }

    #[test]
    fn end_to_end_gradient_matches_finite_differences() {
        let (vocab, _, mut store, enc) = setup(8);
        let input = encode_single("troops open fire", &vocab, 10).unwrap();
        let mut rng = rng_from_seed(21);
        let probe = Tensor::new(vec![10, 8], (0..80).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let forward = |s: &ParamStore| {
            let mut g = Graph::new();
            let h = enc.encode(&mut g, s, &input, true, &mut rng_from_seed(3)).unwrap();
            let w = g.constant(probe.clone());
            let y = g.mul(h, w).unwrap();
            let loss = g.sum_all(y);
            (g, loss)
        };
        let (mut g, loss) = forward(&store);
        let grads = g.backward(loss).unwrap();
        // key biases shift every score in a row equally; their gradient is zero
        let among: Vec<_> = store
            .iter()
            .filter(|(_, n, _)| !n.ends_with(".attn.bk"))
            .map(|(id, _, _)| id)
            .collect();
        let coords = sample_coords_among(&store, &among, 300, &mut rng);
        let err = finite_diff_check(
            |s| {
                let (g, l) = forward(s);
                g.value(l).item()
            },
            &mut store,
            &grads,
            &coords,
            1e-5,
        );
        assert!(err < 1e-4, "encoder gradient rel error {err}");
    }
}
