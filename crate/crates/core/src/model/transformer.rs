use crate::error::{ModelError, QuantError};
use crate::gsq::ChannelScales;
use crate::kernels::{LayerWeights, LinearLayer};
use crate::matrix::Matrix;
use crate::quant::{Method, QuantizedTensor};
use crate::rng::{Distribution, SeededRng};
use crate::tensor_file::{TensorData, TensorEntry};

use super::config::ToyTransformerConfig;
use super::eval::LanguageModel;

const LN_EPS: f32 = 1e-5;
const META_LEN: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
}

impl LayerNorm {
    fn identity(d: usize) -> Self {
        Self { gamma: vec![1.0; d], beta: vec![0.0; d] }
    }

    pub fn forward(&self, x: &Matrix) -> Matrix {
        let d = x.cols();
        let mut out = x.clone();
        for r in 0..x.rows() {
            let row = out.row_mut(r);
            let mean = row.iter().sum::<f32>() / d as f32;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / d as f32;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            for ((v, g), b) in row.iter_mut().zip(&self.gamma).zip(&self.beta) {
                *v = (*v - mean) * inv * g + b;
            }
        }
        out
    }
}

/// Tanh approximation of GELU.
#[inline]
pub fn gelu(x: f32) -> f32 {
    const C: f32 = 0.797_884_6; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044_715 * x * x * x)).tanh())
}

/// Numerically stable softmax over one row.
pub fn softmax_in_place(row: &mut [f32]) {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0f32;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Block {
    ln1: LayerNorm,
    q_proj: LinearLayer,
    k_proj: LinearLayer,
    v_proj: LinearLayer,
    o_proj: LinearLayer,
    ln2: LayerNorm,
    up_proj: LinearLayer,
    down_proj: LinearLayer,
}

const LAYER_SUFFIXES: [&str; 6] =
    ["attn.q_proj", "attn.k_proj", "attn.v_proj", "attn.o_proj", "ff.up_proj", "ff.down_proj"];

impl Block {
    fn layer(&self, suffix: &str) -> Option<&LinearLayer> {
        Some(match suffix {
            "attn.q_proj" => &self.q_proj,
            "attn.k_proj" => &self.k_proj,
            "attn.v_proj" => &self.v_proj,
            "attn.o_proj" => &self.o_proj,
            "ff.up_proj" => &self.up_proj,
            "ff.down_proj" => &self.down_proj,
            _ => return None,
        })
    }

    fn layer_mut(&mut self, suffix: &str) -> Option<&mut LinearLayer> {
        Some(match suffix {
            "attn.q_proj" => &mut self.q_proj,
            "attn.k_proj" => &mut self.k_proj,
            "attn.v_proj" => &mut self.v_proj,
            "attn.o_proj" => &mut self.o_proj,
            "ff.up_proj" => &mut self.up_proj,
            "ff.down_proj" => &mut self.down_proj,
            _ => return None,
        })
    }
}

/// Pre-norm decoder-only transformer with learned positions and a GELU MLP.
///
/// Parameters are named `tok_emb`, `pos_emb`, `blocks.{i}.ln1.weight`,
/// `blocks.{i}.attn.q_proj`, ..., `ln_f.bias`, `lm_head`. The quantizable
/// layers are the attention projections and the two feed-forward layers of
/// each block; embeddings, norms and `lm_head` stay FP32.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyTransformer {
    config: ToyTransformerConfig,
    tok_emb: Matrix,
    pos_emb: Matrix,
    blocks: Vec<Block>,
    ln_f: LayerNorm,
    lm_head: LinearLayer,
    quant: Option<(Method, usize)>,
}

/// Deterministically initialized model.
pub fn build_model(config: &ToyTransformerConfig) -> Result<ToyTransformer, ModelError> {
    config.validate()?;
    let d = config.d_model;
    let mut stream = 0u64;
    let mut gaussian = |rows: usize, cols: usize, std_dev: f32| {
        stream += 1;
        let mut rng = SeededRng::derive(config.seed, stream);
        Matrix::from_fn(rows, cols, |_, _| rng.sample(Distribution::Gaussian { std_dev }))
    };
    let proj = |n: usize| 1.0 / (n as f32).sqrt();
    let tok_emb = gaussian(config.vocab, d, 1.0);
    let pos_emb = gaussian(config.max_seq_len, d, 0.2);
    let blocks = (0..config.n_layers)
        .map(|_| Block {
            ln1: LayerNorm::identity(d),
            q_proj: LinearLayer::dense(gaussian(d, d, proj(d))),
            k_proj: LinearLayer::dense(gaussian(d, d, proj(d))),
            v_proj: LinearLayer::dense(gaussian(d, d, proj(d))),
            o_proj: LinearLayer::dense(gaussian(d, d, proj(d))),
            ln2: LayerNorm::identity(d),
            up_proj: LinearLayer::dense(gaussian(config.d_ff, d, proj(d))),
            down_proj: LinearLayer::dense(gaussian(d, config.d_ff, proj(config.d_ff))),
        })
        .collect();
    let lm_head = LinearLayer::dense(gaussian(config.vocab, d, proj(d)));
    Ok(ToyTransformer {
        config: config.clone(),
        tok_emb,
        pos_emb,
        blocks,
        ln_f: LayerNorm::identity(d),
        lm_head,
        quant: None,
    })
}

impl ToyTransformer {
    pub fn config(&self) -> &ToyTransformerConfig {
        &self.config
    }

    /// Method and group size, if the linear layers are quantized.
    pub fn quantization(&self) -> Option<(Method, usize)> {
        self.quant
    }

    /// Names of the quantizable linear layers, in forward order.
    pub fn layer_names(&self) -> Vec<String> {
        (0..self.blocks.len()).flat_map(|i| LAYER_SUFFIXES.iter().map(move |s| format!("blocks.{i}.{s}"))).collect()
    }

    fn split_name(name: &str) -> Option<(usize, &str)> {
        let rest = name.strip_prefix("blocks.")?;
        let (idx, suffix) = rest.split_once('.')?;
        Some((idx.parse().ok()?, suffix))
    }

    pub fn layer(&self, name: &str) -> Option<&LinearLayer> {
        let (i, suffix) = Self::split_name(name)?;
        self.blocks.get(i)?.layer(suffix)
    }

    fn layer_mut(&mut self, name: &str) -> Option<&mut LinearLayer> {
        let (i, suffix) = Self::split_name(name)?;
        self.blocks.get_mut(i)?.layer_mut(suffix)
    }

    /// Replaces one quantizable layer. Dimensions must match.
    pub fn replace_layer(&mut self, name: &str, layer: LinearLayer) -> Result<(), ModelError> {
        let slot = self.layer_mut(name).ok_or_else(|| ModelError::MissingParameter(name.to_string()))?;
        if (slot.out_features(), slot.in_features()) != (layer.out_features(), layer.in_features()) {
            return Err(ModelError::BadParameter {
                name: name.to_string(),
                reason: format!(
                    "shape {}x{} does not match {}x{}",
                    layer.out_features(),
                    layer.in_features(),
                    slot.out_features(),
                    slot.in_features()
                ),
            });
        }
        *slot = layer;
        Ok(())
    }

    pub(crate) fn set_quantization(&mut self, q: Option<(Method, usize)>) {
        self.quant = q;
    }

    pub fn lm_head(&self) -> &LinearLayer {
        &self.lm_head
    }

    fn check_tokens(&self, tokens: &[u32]) -> Result<(), ModelError> {
        if tokens.is_empty() {
            return Err(ModelError::InvalidArgument("empty token sequence".into()));
        }
        if tokens.len() > self.config.max_seq_len {
            return Err(ModelError::LengthOverflow { requested: tokens.len(), max: self.config.max_seq_len });
        }
        if let Some(&t) = tokens.iter().find(|&&t| t as usize >= self.config.vocab) {
            return Err(ModelError::TokenOutOfRange(t));
        }
        Ok(())
    }

    /// Logits for every position, calling `capture(layer, input)` with the
    /// input rows of each quantizable layer.
    pub fn forward_with_capture(
        &self,
        tokens: &[u32],
        capture: &mut dyn FnMut(&str, &Matrix),
    ) -> Result<Matrix, ModelError> {
        self.check_tokens(tokens)?;
        let d = self.config.d_model;
        let t_len = tokens.len();
        let mut x = Matrix::from_fn(t_len, d, |t, c| self.tok_emb.get(tokens[t] as usize, c) + self.pos_emb.get(t, c));
        let n_heads = self.config.n_heads;
        let hd = d / n_heads;
        let inv_sqrt = 1.0 / (hd as f32).sqrt();
        let mut probs = vec![0.0f32; t_len];
        for (bi, b) in self.blocks.iter().enumerate() {
            let name = |s: &str| format!("blocks.{bi}.{s}");
            let lay = |l: &LinearLayer, s: &str, input: &Matrix| l.forward(input).map_err(ModelError::layer(name(s)));

            let h = b.ln1.forward(&x);
            for s in &LAYER_SUFFIXES[..3] {
                capture(&name(s), &h);
            }
            let q = lay(&b.q_proj, "attn.q_proj", &h)?;
            let k = lay(&b.k_proj, "attn.k_proj", &h)?;
            let v = lay(&b.v_proj, "attn.v_proj", &h)?;
            let mut attn = Matrix::zeros(t_len, d);
            for head in 0..n_heads {
                let off = head * hd;
                for t in 0..t_len {
                    let qt = &q.row(t)[off..off + hd];
                    let p = &mut probs[..=t];
                    for (u, pu) in p.iter_mut().enumerate() {
                        let ku = &k.row(u)[off..off + hd];
                        *pu = qt.iter().zip(ku).map(|(a, b)| a * b).sum::<f32>() * inv_sqrt;
                    }
                    softmax_in_place(p);
                    let out = &mut attn.row_mut(t)[off..off + hd];
                    for (u, &pu) in p.iter().enumerate() {
                        for (o, vv) in out.iter_mut().zip(&v.row(u)[off..off + hd]) {
                            *o += pu * vv;
                        }
                    }
                }
            }
            capture(&name("attn.o_proj"), &attn);
            let o = lay(&b.o_proj, "attn.o_proj", &attn)?;
            add_in_place(&mut x, &o);

            let h2 = b.ln2.forward(&x);
            capture(&name("ff.up_proj"), &h2);
            let mut u = lay(&b.up_proj, "ff.up_proj", &h2)?;
            u.as_mut_slice().iter_mut().for_each(|v| *v = gelu(*v));
            capture(&name("ff.down_proj"), &u);
            let down = lay(&b.down_proj, "ff.down_proj", &u)?;
            add_in_place(&mut x, &down);
        }
        let h = self.ln_f.forward(&x);
        self.lm_head.forward(&h).map_err(ModelError::layer("lm_head"))
    }

    pub fn forward(&self, tokens: &[u32]) -> Result<Matrix, ModelError> {
        self.forward_with_capture(tokens, &mut |_, _| {})
    }

    /// Named parameters in a fixed order.
    pub fn to_entries(&self) -> Vec<TensorEntry> {
        let c = &self.config;
        // The seed is split into 16-bit limbs so every value is exact in f32.
        let mut meta: Vec<f32> =
            [c.vocab, c.d_model, c.n_layers, c.n_heads, c.d_ff, c.max_seq_len].iter().map(|&v| v as f32).collect();
        meta.extend((0..4).map(|i| ((c.seed >> (16 * i)) & 0xffff) as f32));
        let mut out = vec![TensorEntry::f32("meta.config", Matrix::new(1, META_LEN, meta).expect("meta row"))];
        if let Some((m, g)) = self.quant {
            out.push(TensorEntry::f32(
                "meta.quant",
                Matrix::new(1, 2, vec![f32::from(m.tag()), g as f32]).expect("1x2"),
            ));
        }
        out.push(TensorEntry::f32("tok_emb", self.tok_emb.clone()));
        out.push(TensorEntry::f32("pos_emb", self.pos_emb.clone()));
        let vec_row = |v: &[f32]| Matrix::new(1, v.len(), v.to_vec()).expect("row vector");
        for (i, b) in self.blocks.iter().enumerate() {
            let p = format!("blocks.{i}");
            out.push(TensorEntry::f32(format!("{p}.ln1.weight"), vec_row(&b.ln1.gamma)));
            out.push(TensorEntry::f32(format!("{p}.ln1.bias"), vec_row(&b.ln1.beta)));
            for s in &LAYER_SUFFIXES[..4] {
                push_layer(&mut out, &format!("{p}.{s}"), b.layer(s).expect("known suffix"));
            }
            out.push(TensorEntry::f32(format!("{p}.ln2.weight"), vec_row(&b.ln2.gamma)));
            out.push(TensorEntry::f32(format!("{p}.ln2.bias"), vec_row(&b.ln2.beta)));
            for s in &LAYER_SUFFIXES[4..] {
                push_layer(&mut out, &format!("{p}.{s}"), b.layer(s).expect("known suffix"));
            }
        }
        out.push(TensorEntry::f32("ln_f.weight", vec_row(&self.ln_f.gamma)));
        out.push(TensorEntry::f32("ln_f.bias", vec_row(&self.ln_f.beta)));
        push_layer(&mut out, "lm_head", &self.lm_head);
        out
    }

    /// Inverse of [`ToyTransformer::to_entries`]. Every entry must be used.
    pub fn from_entries(entries: &[TensorEntry]) -> Result<Self, ModelError> {
        let mut rd = EntryReader::new(entries);
        let meta = rd.f32("meta.config", Some((1, META_LEN)))?;
        let int = |v: f32| -> Result<usize, ModelError> {
            if v >= 0.0 && v.fract() == 0.0 && v < 1e7 {
                Ok(v as usize)
            } else {
                Err(ModelError::BadParameter { name: "meta.config".into(), reason: format!("bad value {v}") })
            }
        };
        let m = meta.as_slice();
        let mut config = ToyTransformerConfig {
            vocab: int(m[0])?,
            d_model: int(m[1])?,
            n_layers: int(m[2])?,
            n_heads: int(m[3])?,
            d_ff: int(m[4])?,
            max_seq_len: int(m[5])?,
            seed: 0,
        };
        for (i, &limb) in m[6..].iter().enumerate() {
            let limb = int(limb)?;
            if limb > 0xffff {
                return Err(ModelError::BadParameter { name: "meta.config".into(), reason: "bad seed limb".into() });
            }
            config.seed |= (limb as u64) << (16 * i);
        }
        config.validate()?;
        let quant = match rd.try_f32("meta.quant", Some((1, 2)))? {
            None => None,
            Some(q) => {
                let method = Method::from_tag(int(q.get(0, 0))? as u8).ok_or_else(|| ModelError::BadParameter {
                    name: "meta.quant".into(),
                    reason: "unknown method tag".into(),
                })?;
                Some((method, int(q.get(0, 1))?))
            }
        };
        let d = config.d_model;
        let tok_emb = rd.f32("tok_emb", Some((config.vocab, d)))?;
        let pos_emb = rd.f32("pos_emb", Some((config.max_seq_len, d)))?;
        let mut blocks = Vec::with_capacity(config.n_layers);
        for i in 0..config.n_layers {
            let p = format!("blocks.{i}");
            let ln1 = rd.norm(&format!("{p}.ln1"), d)?;
            let q_proj = rd.layer(&format!("{p}.attn.q_proj"), (d, d))?;
            let k_proj = rd.layer(&format!("{p}.attn.k_proj"), (d, d))?;
            let v_proj = rd.layer(&format!("{p}.attn.v_proj"), (d, d))?;
            let o_proj = rd.layer(&format!("{p}.attn.o_proj"), (d, d))?;
            let ln2 = rd.norm(&format!("{p}.ln2"), d)?;
            let up_proj = rd.layer(&format!("{p}.ff.up_proj"), (config.d_ff, d))?;
            let down_proj = rd.layer(&format!("{p}.ff.down_proj"), (d, config.d_ff))?;
            blocks.push(Block { ln1, q_proj, k_proj, v_proj, o_proj, ln2, up_proj, down_proj });
        }
        let ln_f = rd.norm("ln_f", d)?;
        let lm_head = rd.layer("lm_head", (config.vocab, d))?;
        rd.finish()?;
        Ok(Self { config, tok_emb, pos_emb, blocks, ln_f, lm_head, quant })
    }

    /// Bytes of the quantizable layers' weights as FP32.
    pub fn quantizable_fp32_bytes(&self) -> usize {
        self.layer_names().iter().filter_map(|n| self.layer(n)).map(|l| 4 * l.out_features() * l.in_features()).sum()
    }
}

fn add_in_place(x: &mut Matrix, y: &Matrix) {
    for (a, b) in x.as_mut_slice().iter_mut().zip(y.as_slice()) {
        *a += b;
    }
}

fn push_layer(out: &mut Vec<TensorEntry>, name: &str, layer: &LinearLayer) {
    out.extend(layer_entries(name, layer));
}

/// Tensor entries storing one linear layer: the weights under `name`, plus
/// `name.gsq_scales` and `name.gsq_alpha` for GSQ layers.
pub fn layer_entries(name: &str, layer: &LinearLayer) -> Vec<TensorEntry> {
    let mut out = Vec::with_capacity(3);
    match layer.weights() {
        LayerWeights::Dense(m) => out.push(TensorEntry::f32(name, m.clone())),
        LayerWeights::Quantized(q) => out.push(TensorEntry::q4(name, q.clone())),
    }
    if let Some(s) = layer.gsq_scales() {
        out.push(TensorEntry::f32(
            format!("{name}.gsq_scales"),
            Matrix::new(1, s.len(), s.per_channel.clone()).expect("row vector"),
        ));
        out.push(TensorEntry::f32(format!("{name}.gsq_alpha"), Matrix::new(1, 1, vec![s.alpha]).expect("1x1")));
    }
    out
}

struct EntryReader<'a> {
    entries: &'a [TensorEntry],
    used: Vec<bool>,
}

impl<'a> EntryReader<'a> {
    fn new(entries: &'a [TensorEntry]) -> Self {
        Self { entries, used: vec![false; entries.len()] }
    }

    fn take(&mut self, name: &str) -> Option<&'a TensorData> {
        let i = self.entries.iter().position(|e| e.name == name)?;
        self.used[i] = true;
        Some(&self.entries[i].data)
    }

    fn bad(name: &str, reason: String) -> ModelError {
        ModelError::BadParameter { name: name.to_string(), reason }
    }

    fn try_f32(&mut self, name: &str, shape: Option<(usize, usize)>) -> Result<Option<Matrix>, ModelError> {
        let Some(data) = self.take(name) else { return Ok(None) };
        let m = data.as_f32().ok_or_else(|| Self::bad(name, "expected an F32 entry".into()))?;
        if let Some(s) = shape {
            if m.shape() != s {
                return Err(Self::bad(name, format!("shape {:?}, expected {:?}", m.shape(), s)));
            }
        }
        Ok(Some(m.clone()))
    }

    fn f32(&mut self, name: &str, shape: Option<(usize, usize)>) -> Result<Matrix, ModelError> {
        self.try_f32(name, shape)?.ok_or_else(|| ModelError::MissingParameter(name.to_string()))
    }

    fn norm(&mut self, prefix: &str, d: usize) -> Result<LayerNorm, ModelError> {
        let gamma = self.f32(&format!("{prefix}.weight"), Some((1, d)))?.into_vec();
        let beta = self.f32(&format!("{prefix}.bias"), Some((1, d)))?.into_vec();
        Ok(LayerNorm { gamma, beta })
    }

    fn layer(&mut self, name: &str, shape: (usize, usize)) -> Result<LinearLayer, ModelError> {
        let data = self.take(name).ok_or_else(|| ModelError::MissingParameter(name.to_string()))?;
        if data.shape() != shape {
            return Err(Self::bad(name, format!("shape {:?}, expected {:?}", data.shape(), shape)));
        }
        let scales = self.try_f32(&format!("{name}.gsq_scales"), Some((1, shape.1)))?;
        let alpha = self.try_f32(&format!("{name}.gsq_alpha"), Some((1, 1)))?;
        let wrap = |e: QuantError| Self::bad(name, e.to_string());
        match (data, scales, alpha) {
            (TensorData::F32(m), None, None) => Ok(LinearLayer::dense(m.clone())),
            (TensorData::Q4(q), s, a) => {
                let gsq = match (s, a) {
                    (None, None) => None,
                    (Some(s), Some(a)) => Some(ChannelScales { alpha: a.get(0, 0), per_channel: s.into_vec() }),
                    _ => return Err(Self::bad(name, "gsq_scales and gsq_alpha must come together".into())),
                };
                LinearLayer::quantized(QuantizedTensor::clone(q), gsq).map_err(wrap)
            }
            (TensorData::F32(_), _, _) => Err(Self::bad(name, "GSQ scales on an unquantized layer".into())),
        }
    }

    fn finish(self) -> Result<(), ModelError> {
        match self.used.iter().position(|u| !u) {
            Some(i) => Err(Self::bad(&self.entries[i].name, "unexpected entry".into())),
            None => Ok(()),
        }
    }
}

impl LanguageModel for ToyTransformer {
    fn vocab_size(&self) -> usize {
        self.config.vocab
    }

    fn max_seq_len(&self) -> usize {
        self.config.max_seq_len
    }

    fn logits(&self, tokens: &[u32]) -> Result<Matrix, ModelError> {
        self.forward(tokens)
    }
}
