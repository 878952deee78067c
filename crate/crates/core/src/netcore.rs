//! The fixed differentiable graph: one convolution over zero-padded binary
//! sequences, ReLU, dropout, max pooling, then two heads blended by `alpha`.
//!
//! The thresholding head normalizes each pooled response by the filter's own
//! L1 mass, so a binary filter scores exactly 1 on a perfect match, pushes the
//! result through a steep sigmoid, and aggregates with a low-temperature
//! softmax. The traditional head is a logistic layer over the pooled
//! responses and is only used as a warm-up during training.

use std::path::Path;

use rand::Rng;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::corpus::Clip;
use crate::curator::PatternBank;
use crate::error::{Error, Result};

/// Row-major M × k × d convolution weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterTensor {
    m: usize,
    k: usize,
    d: usize,
    data: Vec<f64>,
}

impl FilterTensor {
    pub fn zeros(m: usize, k: usize, d: usize) -> Self {
        FilterTensor {
            m,
            k,
            d,
            data: vec![0.0; m * k * d],
        }
    }

    pub fn from_vec(m: usize, k: usize, d: usize, data: Vec<f64>) -> Result<Self> {
        if m.checked_mul(k).and_then(|mk| mk.checked_mul(d)) != Some(data.len()) {
            return Err(Error::Shape(format!(
                "{} weights for a {m}x{k}x{d} tensor",
                data.len()
            )));
        }
        if data.iter().any(|w| !w.is_finite()) {
            return Err(Error::Shape("non-finite filter weight".into()));
        }
        Ok(FilterTensor { m, k, d, data })
    }

    /// Uniform on [0, 1).
    pub fn random(m: usize, k: usize, d: usize, rng: &mut impl Rng) -> Self {
        FilterTensor {
            m,
            k,
            d,
            data: (0..m * k * d).map(|_| rng.gen::<f64>()).collect(),
        }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn filter_len(&self) -> usize {
        self.k * self.d
    }

    #[inline]
    pub fn index(&self, p: usize, n: usize, j: usize) -> usize {
        (p * self.k + n) * self.d + j
    }

    #[inline]
    pub fn get(&self, p: usize, n: usize, j: usize) -> f64 {
        self.data[self.index(p, n, j)]
    }

    pub fn filter(&self, p: usize) -> &[f64] {
        let len = self.filter_len();
        &self.data[p * len..(p + 1) * len]
    }

    pub fn filter_mut(&mut self, p: usize) -> &mut [f64] {
        let len = self.filter_len();
        &mut self.data[p * len..(p + 1) * len]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn clamp_unit(&mut self) {
        for w in &mut self.data {
            *w = w.clamp(0.0, 1.0);
        }
    }

    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&w| w == 0.0 || w == 1.0)
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, other: &FilterTensor, scale: f64) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }
}

/// Parameters of the thresholding head.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdingParams {
    /// Sigmoid steepness `t`.
    pub steepness: f64,
    /// Sigmoid offset `beta`.
    pub offset: f64,
    /// Softmax temperature `tau`.
    pub temperature: f64,
    /// Stabilizer added to each filter's L1 mass.
    pub epsilon: f64,
}

impl Default for ThresholdingParams {
    fn default() -> Self {
        ThresholdingParams {
            steepness: 200.0,
            offset: 0.99,
            temperature: 0.01,
            epsilon: 1e-6,
        }
    }
}

impl ThresholdingParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.steepness > 0.0
            && self.temperature > 0.0
            && self.epsilon > 0.0
            && self.offset > 0.0
            && self.offset <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid thresholding parameters {self:?}")))
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Post-ReLU convolution outputs, row-major M × C.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMaps {
    pub m: usize,
    pub c: usize,
    pub h: Vec<f64>,
}

impl FeatureMaps {
    pub fn row(&self, p: usize) -> &[f64] {
        &self.h[p * self.c..(p + 1) * self.c]
    }
}

/// Max over each filter's row. Ties resolve to the lowest position.
pub fn maxpool(fm: &FeatureMaps) -> (Vec<f64>, Vec<usize>) {
    assert!(fm.c >= 1, "max pooling needs at least one position");
    (0..fm.m)
        .map(|p| {
            let row = fm.row(p);
            let mut best = 0;
            for (c, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = c;
                }
            }
            (row[best], best)
        })
        .unzip()
}

/// `w_p = 1 / (sum |W_p| + eps)`, recomputed from the current filters.
pub fn thresholding_weights(conv: &FilterTensor, epsilon: f64) -> Vec<f64> {
    (0..conv.m())
        .map(|p| 1.0 / (l1_mass(conv.filter(p)) + epsilon))
        .collect()
}

fn l1_mass(filter: &[f64]) -> f64 {
    filter.iter().map(|w| w.abs()).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdOutput {
    pub y: f64,
    /// Per-filter step activations.
    pub a: Vec<f64>,
    /// Softmax weights over `a`.
    pub s: Vec<f64>,
    pub z: Vec<f64>,
}

/// The four stages: scale, steep sigmoid, low-temperature softmax, weighted sum.
pub fn thresholding_forward(f: &[f64], w: &[f64], params: &ThresholdingParams) -> ThresholdOutput {
    assert_eq!(f.len(), w.len());
    let z: Vec<f64> = f.iter().zip(w).map(|(fi, wi)| fi * wi).collect();
    let a: Vec<f64> = z
        .iter()
        .map(|zi| sigmoid(params.steepness * (zi - params.offset)))
        .collect();
    let top = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s: Vec<f64> = a.iter().map(|ai| ((ai - top) / params.temperature).exp()).collect();
    let total: f64 = s.iter().sum();
    for si in &mut s {
        *si /= total;
    }
    let y = a.iter().zip(&s).map(|(ai, si)| ai * si).sum();
    ThresholdOutput { y, a, s, z }
}

/// `sigmoid(fc . pooled)`; the adaptive pool reduces each filter row to one
/// value, so `pooled` is the max-pooled vector itself.
pub fn traditional_forward(pooled: &[f64], fc_trad: &[f64]) -> Result<f64> {
    if pooled.len() != fc_trad.len() {
        return Err(Error::Shape(format!(
            "traditional head has {} weights for {} pooled values",
            fc_trad.len(),
            pooled.len()
        )));
    }
    Ok(sigmoid(pooled.iter().zip(fc_trad).map(|(x, w)| x * w).sum()))
}

/// Every learnable and fixed quantity of the network.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    conv: FilterTensor,
    fc_trad: Vec<f64>,
    trad_frozen: bool,
    pub thresh: ThresholdingParams,
    alpha: f64,
    pub dropout_rate: f64,
    padding: usize,
    generation: u64,
}

/// Gradients of a scalar loss with respect to the learnable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub conv: FilterTensor,
    pub fc_trad: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(state: &ModelState) -> Self {
        let c = &state.conv;
        Gradients {
            conv: FilterTensor::zeros(c.m, c.k, c.d),
            fc_trad: vec![0.0; state.fc_trad.len()],
        }
    }

    pub fn accumulate(&mut self, other: &Gradients, scale: f64) {
        self.conv.add_scaled(&other.conv, scale);
        for (a, b) in self.fc_trad.iter_mut().zip(&other.fc_trad) {
            *a += scale * b;
        }
    }

    pub fn conv_norm(&self) -> f64 {
        self.conv.data.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn fc_norm(&self) -> f64 {
        self.fc_trad.iter().map(|g| g * g).sum::<f64>().sqrt()
    }
}

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    generation: u64,
    /// Active feature indices per padded row (empty for padding rows).
    active: Vec<Vec<usize>>,
    pre: Vec<f64>,
    /// Dropout scale per (p, c); `None` outside training.
    mask: Option<Vec<f64>>,
    pub maps: FeatureMaps,
    pub pooled: Vec<f64>,
    pub argmax: Vec<usize>,
    pub norm_weights: Vec<f64>,
    pub thresh: ThresholdOutput,
    pub y_trad: f64,
    pub y_raw: f64,
    pub y: f64,
}

impl ModelState {
    /// Conv weights uniform on [0,1); traditional head uniform on ±1/sqrt(M).
    pub fn init(m: usize, k: usize, d: usize, padding: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (m as f64).sqrt();
        let conv = FilterTensor::random(m, k, d, rng);
        let fc_trad = (0..m).map(|_| rng.gen_range(-bound..bound)).collect();
        ModelState {
            conv,
            fc_trad,
            trad_frozen: false,
            thresh: ThresholdingParams::default(),
            alpha: 0.0,
            dropout_rate: 0.2,
            padding,
            generation: 0,
        }
    }

    pub fn from_parts(
        conv: FilterTensor,
        fc_trad: Vec<f64>,
        thresh: ThresholdingParams,
        alpha: f64,
        dropout_rate: f64,
        padding: usize,
    ) -> Result<Self> {
        let state = ModelState {
            conv,
            fc_trad,
            trad_frozen: false,
            thresh,
            alpha,
            dropout_rate,
            padding,
            generation: 0,
        };
        state.validate()?;
        Ok(state)
    }

    /// A pure thresholding model (alpha = 1) whose filters are the bank's
    /// patterns. An empty bank becomes a single all-zero filter that never
    /// fires.
    pub fn from_bank(bank: &PatternBank, thresh: ThresholdingParams) -> Result<Self> {
        let d = bank.vocabulary().d();
        let k = bank.patterns().first().map_or(3, |p| p.k());
        let m = bank.len().max(1);
        let mut conv = FilterTensor::zeros(m, k, d);
        for (p, pattern) in bank.patterns().iter().enumerate() {
            for &(n, j) in pattern.positives() {
                let idx = conv.index(p, n, j);
                conv.data[idx] = 1.0;
            }
        }
        let mut state = ModelState::from_parts(conv, vec![0.0; m], thresh, 1.0, 0.0, bank.padding())?;
        state.trad_frozen = true;
        Ok(state)
    }

    pub fn validate(&self) -> Result<()> {
        self.thresh.validate()?;
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!("dropout rate {} outside [0, 1)", self.dropout_rate)));
        }
        if self.fc_trad.len() != self.conv.m {
            return Err(Error::Shape(format!(
                "traditional head has {} weights for {} filters",
                self.fc_trad.len(),
                self.conv.m
            )));
        }
        if self.conv.m == 0 || self.conv.k == 0 {
            return Err(Error::Shape("model needs at least one filter of at least one step".into()));
        }
        Ok(())
    }

    pub fn conv(&self) -> &FilterTensor {
        &self.conv
    }

    /// Mutable access to the filters; invalidates outstanding caches.
    pub fn conv_mut(&mut self) -> &mut FilterTensor {
        self.generation += 1;
        &mut self.conv
    }

    pub fn fc_trad(&self) -> &[f64] {
        &self.fc_trad
    }

    pub fn fc_trad_mut(&mut self) -> &mut [f64] {
        self.generation += 1;
        &mut self.fc_trad
    }

    pub fn trad_frozen(&self) -> bool {
        self.trad_frozen
    }

    pub fn freeze_trad(&mut self) {
        self.trad_frozen = true;
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn set_alpha(&mut self, alpha: f64) {
        self.generation += 1;
        self.alpha = alpha.clamp(0.0, 1.0);
    }

    pub fn padding(&self) -> usize {
        self.padding
    }

    pub fn m(&self) -> usize {
        self.conv.m
    }

    pub fn k(&self) -> usize {
        self.conv.k
    }

    pub fn d(&self) -> usize {
        self.conv.d
    }

    /// Number of convolution positions for clips of `len` steps.
    pub fn positions(&self, len: usize) -> usize {
        crate::curator::window_count(len, self.conv.k, self.padding)
    }

    fn check_clip(&self, clip: &Clip) -> Result<()> {
        if clip.width() != self.conv.d {
            return Err(Error::Shape(format!(
                "clip {} has {} features, model expects {}",
                clip.clip_id,
                clip.width(),
                self.conv.d
            )));
        }
        if self.positions(clip.len()) == 0 {
            return Err(Error::Shape(format!(
                "clip {} of {} steps is shorter than the kernel ({} steps, padding {})",
                clip.clip_id,
                clip.len(),
                self.conv.k,
                self.padding
            )));
        }
        Ok(())
    }

    fn padded_active(&self, clip: &Clip) -> Vec<Vec<usize>> {
        let pad = self.padding;
        let mut rows = vec![Vec::new(); clip.len() + 2 * pad];
        for t in 0..clip.len() {
            rows[t + pad] = clip.active(t).collect();
        }
        rows
    }

    fn conv_pre(&self, active: &[Vec<usize>]) -> (Vec<f64>, usize) {
        let (m, k) = (self.conv.m, self.conv.k);
        let c_count = active.len() + 1 - k;
        let mut pre = vec![0.0; m * c_count];
        for p in 0..m {
            let filt = self.conv.filter(p);
            for c in 0..c_count {
                let mut acc = 0.0;
                for n in 0..k {
                    let row = &filt[n * self.conv.d..(n + 1) * self.conv.d];
                    for &j in &active[c + n] {
                        acc += row[j];
                    }
                }
                pre[p * c_count + c] = acc;
            }
        }
        (pre, c_count)
    }

    /// Convolution followed by ReLU, without dropout.
    pub fn conv_forward(&self, clip: &Clip) -> Result<FeatureMaps> {
        self.check_clip(clip)?;
        let active = self.padded_active(clip);
        let (pre, c) = self.conv_pre(&active);
        Ok(FeatureMaps {
            m: self.conv.m,
            c,
            h: pre.into_iter().map(|v| v.max(0.0)).collect(),
        })
    }

    fn forward_impl(&self, clip: &Clip, rng: Option<&mut dyn RngCore>) -> Result<ForwardCache> {
        self.check_clip(clip)?;
        let active = self.padded_active(clip);
        let (pre, c) = self.conv_pre(&active);
        let mut h: Vec<f64> = pre.iter().map(|v| v.max(0.0)).collect();
        let mask = match rng {
            Some(rng) if self.dropout_rate > 0.0 => {
                let keep = 1.0 - self.dropout_rate;
                let mask: Vec<f64> = (0..h.len())
                    .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
                    .collect();
                for (v, s) in h.iter_mut().zip(&mask) {
                    *v *= s;
                }
                Some(mask)
            }
            _ => None,
        };
        let maps = FeatureMaps { m: self.conv.m, c, h };
        let (pooled, argmax) = maxpool(&maps);
        let norm_weights = thresholding_weights(&self.conv, self.thresh.epsilon);
        let thresh = thresholding_forward(&pooled, &norm_weights, &self.thresh);
        let y_trad = traditional_forward(&pooled, &self.fc_trad)?;
        let y_raw = (1.0 - self.alpha) * y_trad + self.alpha * thresh.y;
        Ok(ForwardCache {
            generation: self.generation,
            active,
            pre,
            mask,
            maps,
            pooled,
            argmax,
            norm_weights,
            thresh,
            y_trad,
            y_raw,
            y: y_raw.min(1.0),
        })
    }

    /// Deterministic forward pass without dropout.
    pub fn forward_eval(&self, clip: &Clip) -> Result<ForwardCache> {
        self.forward_impl(clip, None)
    }

    /// Training forward pass: inverted dropout on the convolution outputs.
    pub fn forward_train(&self, clip: &Clip, rng: &mut dyn RngCore) -> Result<ForwardCache> {
        self.forward_impl(clip, Some(rng))
    }

    /// Model output for one clip, or 0 for a clip the model cannot read.
    pub fn predict(&self, clip: &Clip) -> f64 {
        self.forward_eval(clip).map_or(0.0, |c| c.y)
    }

    /// Analytic gradients of a loss with `d loss / d y = dy` through the
    /// forward pass recorded in `cache`.
    pub fn backward(&self, cache: &ForwardCache, dy: f64) -> Result<Gradients> {
        if cache.generation != self.generation || cache.pooled.len() != self.conv.m {
            return Err(Error::Shape("stale forward cache".into()));
        }
        let (m, k, d) = (self.conv.m, self.conv.k, self.conv.d);
        let mut grads = Gradients::zeros_like(self);
        if dy == 0.0 {
            return Ok(grads);
        }
        let dy_raw = if cache.y_raw <= 1.0 { dy } else { 0.0 };

        // Traditional head.
        let mut d_pooled = vec![0.0; m];
        let d_logit = (1.0 - self.alpha) * dy_raw * cache.y_trad * (1.0 - cache.y_trad);
        if d_logit != 0.0 {
            for p in 0..m {
                if !self.trad_frozen {
                    grads.fc_trad[p] = d_logit * cache.pooled[p];
                }
                d_pooled[p] += d_logit * self.fc_trad[p];
            }
        }

        // Thresholding head.
        let d_yth = self.alpha * dy_raw;
        if d_yth != 0.0 {
            let t = &cache.thresh;
            let tau = self.thresh.temperature;
            for p in 0..m {
                let (a, s) = (t.a[p], t.s[p]);
                let da = d_yth * s * (1.0 + (a - t.y) / tau);
                let dz = da * self.thresh.steepness * a * (1.0 - a);
                if dz == 0.0 {
                    continue;
                }
                let w = cache.norm_weights[p];
                d_pooled[p] += dz * w;
                // w = 1 / (sum|W| + eps)  =>  dw/dW = -w^2 sign(W)
                let d_mass = -dz * cache.pooled[p] * w * w;
                let filt = self.conv.filter(p);
                let g = grads.conv.filter_mut(p);
                for (gi, &wi) in g.iter_mut().zip(filt) {
                    if wi > 0.0 {
                        *gi += d_mass;
                    } else if wi < 0.0 {
                        *gi -= d_mass;
                    }
                }
            }
        }

        // Max pool routes to the recorded argmax; then dropout and ReLU.
        let c_count = cache.maps.c;
        for p in 0..m {
            if d_pooled[p] == 0.0 {
                continue;
            }
            let c = cache.argmax[p];
            let idx = p * c_count + c;
            let scale = cache.mask.as_ref().map_or(1.0, |mask| mask[idx]);
            if cache.pre[idx] <= 0.0 || scale == 0.0 {
                continue;
            }
            let d_pre = d_pooled[p] * scale;
            let g = grads.conv.filter_mut(p);
            for n in 0..k {
                for &j in &cache.active[c + n] {
                    g[n * d + j] += d_pre;
                }
            }
        }
        Ok(grads)
    }

    /// Flat JSON document with shape header and all parameters.
    pub fn to_document(&self) -> ModelDocument {
        ModelDocument {
            format: MODEL_FORMAT.into(),
            version: FORMAT_VERSION,
            config_hash: None,
            shape: self.shape(),
            weights: self.conv.data.clone(),
            fc_trad: self.fc_trad.clone(),
            trad_frozen: self.trad_frozen,
            thresholding: self.thresh,
            alpha: self.alpha,
            dropout_rate: self.dropout_rate,
        }
    }

    pub fn from_document(doc: ModelDocument) -> Result<Self> {
        if doc.format != MODEL_FORMAT || doc.version != FORMAT_VERSION {
            return Err(Error::Config(format!("unsupported model format {}/{}", doc.format, doc.version)));
        }
        let s = doc.shape;
        let conv = FilterTensor::from_vec(s.m, s.k, s.d, doc.weights)?;
        let mut state = ModelState::from_parts(conv, doc.fc_trad, doc.thresholding, doc.alpha, doc.dropout_rate, s.padding)?;
        state.trad_frozen = doc.trad_frozen;
        Ok(state)
    }

    pub fn shape(&self) -> Shape {
        Shape {
            m: self.conv.m,
            k: self.conv.k,
            d: self.conv.d,
            padding: self.padding,
        }
    }

    /// Filter-only export (weights plus shape).
    pub fn export_filters(&self) -> FilterExport {
        FilterExport {
            format: FILTERS_FORMAT.into(),
            version: FORMAT_VERSION,
            shape: self.shape(),
            weights: self.conv.data.clone(),
        }
    }

    pub fn save(&self, path: &Path, config_hash: Option<&str>) -> Result<()> {
        let mut doc = self.to_document();
        doc.config_hash = config_hash.map(str::to_string);
        let text = serde_json::to_string_pretty(&doc)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ModelState::from_document(serde_json::from_str(&text)?)
    }
}

const MODEL_FORMAT: &str = "gamedet-model";
pub(crate) const FILTERS_FORMAT: &str = "gamedet-filters";
pub(crate) const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub m: usize,
    pub k: usize,
    pub d: usize,
    pub padding: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub format: String,
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    pub shape: Shape,
    pub weights: Vec<f64>,
    pub fc_trad: Vec<f64>,
    pub trad_frozen: bool,
    pub thresholding: ThresholdingParams,
    pub alpha: f64,
    pub dropout_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterExport {
    pub format: String,
    pub version: u32,
    pub shape: Shape,
    pub weights: Vec<f64>,
}

impl FilterExport {
    pub fn tensor(&self) -> Result<FilterTensor> {
        if self.format != FILTERS_FORMAT || self.version != FORMAT_VERSION {
            return Err(Error::Config(format!("unsupported filter format {}/{}", self.format, self.version)));
        }
        FilterTensor::from_vec(self.shape.m, self.shape.k, self.shape.d, self.weights.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{FeatureVocabulary, Submission};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fixture_clip() -> Clip {
        let v = FeatureVocabulary::default_fixture();
        let rows: [(Submission, &[usize]); 5] = [
            (Submission::Help, &[0, 1]),
            (Submission::Incorrect, &[5]),
            (Submission::Incorrect, &[5, 7]),
            (Submission::Correct, &[]),
            (Submission::Help, &[2]),
        ];
        Clip {
            clip_id: "x".into(),
            label: true,
            steps: rows
                .iter()
                .map(|(s, extra)| {
                    let mut r = vec![0u8; 13];
                    r[v.submission_index(*s)] = 1;
                    for &j in *extra {
                        r[j] = 1;
                    }
                    r
                })
                .collect(),
        }
    }

    fn state_with(conv: FilterTensor) -> ModelState {
        let m = conv.m();
        ModelState::from_parts(conv, vec![0.0; m], ThresholdingParams::default(), 0.0, 0.0, 1).unwrap()
    }

    #[test]
    fn zero_filters_give_zero_maps() {
        let s = state_with(FilterTensor::zeros(2, 3, 13));
        let fm = s.conv_forward(&fixture_clip()).unwrap();
        assert_eq!(fm.c, 5);
        assert!(fm.h.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn window_filter_counts_ones() {
        let clip = fixture_clip();
        // filter = clip steps 1..=3, which is padded window 2
        let mut conv = FilterTensor::zeros(1, 3, 13);
        for n in 0..3 {
            for j in 0..13 {
                conv.as_mut_slice()[n * 13 + j] = f64::from(clip.steps[n + 1][j]);
            }
        }
        let ones: usize = clip.steps[1..4].iter().flatten().map(|&v| v as usize).sum();
        assert_eq!(ones, 6);
        let fm = state_with(conv).conv_forward(&clip).unwrap();
        assert_eq!(fm.row(0)[2], 6.0);
    }

    #[test]
    fn positions_shape_law() {
        let s = state_with(FilterTensor::zeros(1, 3, 13));
        assert_eq!(s.positions(5), 5);
        assert_eq!(s.positions(1), 1);
        assert_eq!(s.positions(10), 10);
    }

    #[test]
    fn maxpool_tie_and_edges() {
        let fm = FeatureMaps {
            m: 3,
            c: 5,
            h: vec![0.0, 3.0, 1.0, 3.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 2.5, 0.0, 0.0],
        };
        let (f, arg) = maxpool(&fm);
        assert_eq!(f, vec![3.0, 0.0, 2.5]);
        assert_eq!(arg, vec![1, 0, 2]);
    }

    #[test]
    fn thresholding_weight_formula() {
        let mut conv = FilterTensor::zeros(3, 3, 13);
        for i in 0..12 {
            conv.filter_mut(0)[i * 3] = 1.0;
        }
        conv.filter_mut(2).iter_mut().for_each(|w| *w = 0.5);
        let w = thresholding_weights(&conv, 1e-6);
        assert!((w[0] - 1.0 / 12.000001).abs() < 1e-15);
        assert!((w[0] - 0.08333).abs() < 1e-5);
        assert!((w[1] - 1e6).abs() < 1e-6);
        assert!((w[2] - 1.0 / (19.5 + 1e-6)).abs() < 1e-15);
    }

    #[test]
    fn thresholding_perfect_match() {
        let params = ThresholdingParams::default();
        // filter 0 matches perfectly (z = 1), others reach 3/5
        let f = [5.0, 3.0, 3.0];
        let w = [0.2, 0.2, 0.2];
        let out = thresholding_forward(&f, &w, &params);
        assert!((out.a[0] - sigmoid(2.0)).abs() < 1e-12);
        assert!((out.a[0] - 0.8808).abs() < 1e-4);
        assert!(out.y >= 0.85);
    }

    #[test]
    fn thresholding_no_match_below_half() {
        let params = ThresholdingParams::default();
        let out = thresholding_forward(&[4.0, 0.0], &[0.2, 0.2], &params);
        assert!(out.a.iter().all(|&a| a < 0.5));
        assert!(out.y < 0.5);
        let boundary = thresholding_forward(&[0.99], &[1.0], &params);
        assert_eq!(boundary.a[0], 0.5);
        assert_eq!(boundary.s[0], 1.0);
        assert_eq!(boundary.y, 0.5);
    }

    #[test]
    fn traditional_head_values() {
        assert_eq!(traditional_forward(&[3.0, 1.0], &[0.0, 0.0]).unwrap(), 0.5);
        assert!((traditional_forward(&[1.0, 0.0], &[2.0, -1.0]).unwrap() - 0.8808).abs() < 1e-4);
        let tiny = traditional_forward(&[50.0], &[-1.0]).unwrap();
        assert!(tiny > 0.0 && tiny < 1e-20);
        assert!(traditional_forward(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn blend_endpoints() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut s = ModelState::init(4, 3, 13, 1, &mut rng);
        let clip = fixture_clip();
        s.set_alpha(0.0);
        let c = s.forward_eval(&clip).unwrap();
        assert_eq!(c.y, c.y_trad);
        s.set_alpha(1.0);
        let c = s.forward_eval(&clip).unwrap();
        assert_eq!(c.y, c.thresh.y);
        s.set_alpha(0.5);
        let c = s.forward_eval(&clip).unwrap();
        assert!((c.y - 0.5 * (c.y_trad + c.thresh.y)).abs() < 1e-15);
        assert!((0.5f64 * 0.9 + 0.5 * 0.881 - 0.8905).abs() < 1e-12);
    }

    #[test]
    fn zero_upstream_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut s = ModelState::init(3, 3, 13, 1, &mut rng);
        s.set_alpha(0.5);
        let cache = s.forward_eval(&fixture_clip()).unwrap();
        let g = s.backward(&cache, 0.0).unwrap();
        assert!(g.conv.as_slice().iter().all(|&v| v == 0.0));
        assert!(g.fc_trad.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stale_cache_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut s = ModelState::init(2, 3, 13, 1, &mut rng);
        let cache = s.forward_eval(&fixture_clip()).unwrap();
        s.conv_mut().as_mut_slice()[0] = 0.3;
        assert!(s.backward(&cache, 1.0).is_err());
    }

    #[test]
    fn zero_weight_has_zero_mass_subgradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut s = ModelState::init(1, 3, 13, 1, &mut rng);
        s.set_alpha(1.0);
        s.thresh.steepness = 5.0;
        // features absent everywhere in the fixture clip so only the |W| path sees them
        let idx = s.conv().index(0, 0, 9);
        s.conv_mut().as_mut_slice()[idx] = 0.0;
        let cache = s.forward_eval(&fixture_clip()).unwrap();
        let g = s.backward(&cache, 1.0).unwrap();
        assert_eq!(g.conv.as_slice()[idx], 0.0);
        let other = s.conv().index(0, 0, 8);
        assert_ne!(g.conv.as_slice()[other], 0.0);
    }

    #[test]
    fn frozen_head_gets_no_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut s = ModelState::init(3, 3, 13, 1, &mut rng);
        s.set_alpha(0.3);
        s.freeze_trad();
        let cache = s.forward_eval(&fixture_clip()).unwrap();
        let g = s.backward(&cache, 1.0).unwrap();
        assert!(g.fc_trad.iter().all(|&v| v == 0.0));
        assert!(g.conv.as_slice().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn eval_is_deterministic_and_dropout_varies() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut s = ModelState::init(8, 3, 13, 1, &mut rng);
        s.set_alpha(0.4);
        let clip = fixture_clip();
        let a = s.forward_eval(&clip).unwrap().y;
        let b = s.forward_eval(&clip).unwrap().y;
        assert_eq!(a.to_bits(), b.to_bits());
        s.dropout_rate = 0.5;
        let ys: Vec<f64> = (0..10)
            .map(|_| s.forward_train(&clip, &mut rng).unwrap().y)
            .collect();
        assert!(ys.iter().any(|&y| y != a));
    }

    #[test]
    fn rejects_bad_clips() {
        let s = state_with(FilterTensor::zeros(1, 3, 13));
        let mut clip = fixture_clip();
        clip.steps.iter_mut().for_each(|r| r.truncate(12));
        assert!(s.conv_forward(&clip).is_err());
        let s0 = ModelState::from_parts(FilterTensor::zeros(1, 5, 13), vec![0.0], ThresholdingParams::default(), 0.0, 0.0, 0)
            .unwrap();
        let mut short = fixture_clip();
        short.steps.truncate(4);
        assert!(s0.conv_forward(&short).is_err());
    }

    #[test]
    fn document_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = ModelState::init(2, 3, 13, 1, &mut rng);
        let doc = s.to_document();
        let text = serde_json::to_string(&doc).unwrap();
        let back = ModelState::from_document(serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(back, s);
    }
}
