//! Composite loss: binary cross entropy plus the four filter constraints,
//! each with its analytic gradient with respect to the convolution weights.

use serde::{Deserialize, Serialize};

use crate::corpus::FeatureVocabulary;
use crate::netcore::FilterTensor;

const BCE_CLAMP: f64 = 1e-7;

/// Current scale of each regularizer.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub bin: f64,
    pub min: f64,
    pub sub: f64,
    pub poss: f64,
}

impl LossWeights {
    pub fn is_zero(&self) -> bool {
        self.bin == 0.0 && self.min == 0.0 && self.sub == 0.0 && self.poss == 0.0
    }
}

/// Shape of the per-step mass penalty `ReLU(rate^(onset - mass) - bias)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinPenaltyParams {
    pub rate: f64,
    /// Number of active features at which the penalty starts.
    pub onset: f64,
    pub bias: f64,
}

impl Default for MinPenaltyParams {
    fn default() -> Self {
        MinPenaltyParams {
            rate: 0.5,
            onset: 3.0,
            bias: 1.0,
        }
    }
}

impl MinPenaltyParams {
    pub fn is_valid(&self) -> bool {
        self.rate > 0.0 && self.rate < 1.0 && self.onset > 0.0 && self.bias >= 0.0
    }
}

/// How a step's submission weights are squashed before the single-submission
/// penalty.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubmissionSquash {
    /// Plain sum of the (already clamped) weights.
    #[default]
    Sum,
    /// Sum of element-wise sigmoids.
    Sigmoid,
}

pub fn bce(y: f64, label: bool) -> f64 {
    let y = y.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
    if label {
        -y.ln()
    } else {
        -(1.0 - y).ln()
    }
}

/// Derivative of [`bce`] with respect to `y`, evaluated at the clamped `y`.
pub fn bce_grad(y: f64, label: bool) -> f64 {
    let y = y.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
    if label {
        -1.0 / y
    } else {
        1.0 / (1.0 - y)
    }
}

fn each_step(w: &FilterTensor) -> impl Iterator<Item = std::ops::Range<usize>> + '_ {
    let d = w.d();
    (0..w.m() * w.k()).map(move |s| s * d..(s + 1) * d)
}

/// Sum of `|W^2 - W|`; adds `scale * gradient` into `grad` when given.
pub fn l_bin(w: &FilterTensor, grad: Option<(&mut FilterTensor, f64)>) -> f64 {
    let value = w.as_slice().iter().map(|&x| (x * x - x).abs()).sum();
    if let Some((g, scale)) = grad {
        for (gi, &x) in g.as_mut_slice().iter_mut().zip(w.as_slice()) {
            let inner = x * x - x;
            if inner != 0.0 {
                *gi += scale * inner.signum() * (2.0 * x - 1.0);
            }
        }
    }
    value
}

/// Per-step mass penalty; a step's mass is the sum of its weights.
pub fn l_min(w: &FilterTensor, params: &MinPenaltyParams, grad: Option<(&mut FilterTensor, f64)>) -> f64 {
    let data = w.as_slice();
    let ln_r = params.rate.ln();
    let mut value = 0.0;
    let mut step_grads = Vec::new();
    for range in each_step(w) {
        let mass: f64 = data[range.clone()].iter().sum();
        let pow = params.rate.powf(params.onset - mass);
        let excess = pow - params.bias;
        if excess > 0.0 {
            value += excess;
            // d/d mass of rate^(onset - mass)
            step_grads.push((range, -ln_r * pow));
        }
    }
    if let Some((g, scale)) = grad {
        let gs = g.as_mut_slice();
        for (range, dm) in step_grads {
            for gi in &mut gs[range] {
                *gi += scale * dm;
            }
        }
    }
    value
}

/// Single-submission penalty summed over every filter step.
pub fn l_sub(
    w: &FilterTensor,
    submission: &[usize],
    squash: SubmissionSquash,
    grad: Option<(&mut FilterTensor, f64)>,
) -> f64 {
    let data = w.as_slice();
    let mut value = 0.0;
    let mut active = Vec::new();
    for range in each_step(w) {
        let row = &data[range.clone()];
        let s: f64 = match squash {
            SubmissionSquash::Sum => submission.iter().map(|&i| row[i]).sum(),
            SubmissionSquash::Sigmoid => submission.iter().map(|&i| crate::netcore::sigmoid(row[i])).sum(),
        };
        if s > 1.0 {
            value += s - 1.0;
            active.push(range.start);
        }
    }
    if let Some((g, scale)) = grad {
        let gs = g.as_mut_slice();
        for start in active {
            for &i in submission {
                let dsi = match squash {
                    SubmissionSquash::Sum => 1.0,
                    SubmissionSquash::Sigmoid => {
                        let sg = crate::netcore::sigmoid(data[start + i]);
                        sg * (1.0 - sg)
                    }
                };
                gs[start + i] += scale * dsi;
            }
        }
    }
    value
}

/// Penalty on steps that place weight in both the help-related and the
/// attempt-related feature sets.
pub fn l_poss(w: &FilterTensor, help: &[usize], attempt: &[usize], grad: Option<(&mut FilterTensor, f64)>) -> f64 {
    let data = w.as_slice();
    let (nh, na) = (help.len() as f64, attempt.len() as f64);
    let mut value = 0.0;
    let mut pulls = Vec::new();
    for range in each_step(w) {
        let row = &data[range.clone()];
        let mh = help.iter().map(|&i| row[i]).sum::<f64>() / nh;
        let ma = attempt.iter().map(|&i| row[i]).sum::<f64>() / na;
        let (sq_h, sq_a) = (mh * mh, ma * ma);
        if sq_h <= sq_a {
            value += sq_h;
            if mh != 0.0 {
                pulls.push((range.start, true, 2.0 * mh / nh));
            }
        } else {
            value += sq_a;
            if ma != 0.0 {
                pulls.push((range.start, false, 2.0 * ma / na));
            }
        }
    }
    if let Some((g, scale)) = grad {
        let gs = g.as_mut_slice();
        for (start, on_help, dv) in pulls {
            let set = if on_help { help } else { attempt };
            for &i in set {
                gs[start + i] += scale * dv;
            }
        }
    }
    value
}

/// Unweighted values of the four regularizers.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RegularizerValues {
    pub bin: f64,
    pub min: f64,
    pub sub: f64,
    pub poss: f64,
}

impl RegularizerValues {
    pub fn weighted(&self, w: &LossWeights) -> f64 {
        w.bin * self.bin + w.min * self.min + w.sub * self.sub + w.poss * self.poss
    }
}

/// Static inputs of the constraint terms.
#[derive(Debug, Clone, Copy)]
pub struct ConstraintSpec<'a> {
    pub vocab: &'a FeatureVocabulary,
    pub min_params: &'a MinPenaltyParams,
    pub squash: SubmissionSquash,
}

/// Evaluates all four regularizers and adds their weighted gradient to `grad`.
pub fn regularizers(
    w: &FilterTensor,
    weights: &LossWeights,
    spec: &ConstraintSpec<'_>,
    mut grad: Option<&mut FilterTensor>,
) -> RegularizerValues {
    RegularizerValues {
        bin: l_bin(w, scaled(&mut grad, weights.bin)),
        min: l_min(w, spec.min_params, scaled(&mut grad, weights.min)),
        sub: l_sub(w, spec.vocab.submission_indices(), spec.squash, scaled(&mut grad, weights.sub)),
        poss: l_poss(
            w,
            spec.vocab.help_related(),
            spec.vocab.attempt_related(),
            scaled(&mut grad, weights.poss),
        ),
    }
}

fn scaled<'a>(grad: &'a mut Option<&mut FilterTensor>, scale: f64) -> Option<(&'a mut FilterTensor, f64)> {
    if scale == 0.0 {
        None
    } else {
        grad.as_deref_mut().map(|g| (g, scale))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TotalLoss {
    pub value: f64,
    pub bce: f64,
    pub terms: RegularizerValues,
    /// d loss / d y
    pub d_y: f64,
    /// d loss / d W through the regularizers only; the BCE path goes through
    /// the network's backward pass with `d_y`.
    pub d_w: FilterTensor,
}

/// `bce(y, label) + sum_i gamma_i * L_i(W)` for a single prediction.
pub fn total_loss(y: f64, label: bool, w: &FilterTensor, weights: &LossWeights, spec: &ConstraintSpec<'_>) -> TotalLoss {
    let mut d_w = FilterTensor::zeros(w.m(), w.k(), w.d());
    let terms = regularizers(w, weights, spec, Some(&mut d_w));
    let b = bce(y, label);
    TotalLoss {
        value: b + terms.weighted(weights),
        bce: b,
        terms,
        d_y: bce_grad(y, label),
        d_w,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tensor(m: usize, k: usize, d: usize, f: impl Fn(usize) -> f64) -> FilterTensor {
        FilterTensor::from_vec(m, k, d, (0..m * k * d).map(f).collect()).unwrap()
    }

    #[test]
    fn bce_values() {
        assert!((bce(0.5, true) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((bce(0.5, false) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((bce(0.9, true) - 0.1053605).abs() < 1e-6);
        assert!((bce(0.9, false) - std::f64::consts::LN_10).abs() < 1e-6);
        assert!(bce(0.0, true).is_finite());
        assert!(bce(1.0, false).is_finite());
    }

    #[test]
    fn l_bin_values() {
        assert_eq!(l_bin(&tensor(2, 3, 4, |i| (i % 2) as f64), None), 0.0);
        assert!((l_bin(&tensor(1, 1, 3, |i| if i == 0 { 0.5 } else { 0.0 }), None) - 0.25).abs() < 1e-15);
        assert!((l_bin(&tensor(2, 1, 2, |_| 0.9), None) - 0.36).abs() < 1e-12);
    }

    #[test]
    fn l_min_values() {
        let p = MinPenaltyParams::default();
        let step = |mass: f64| tensor(1, 1, 5, |_| mass / 5.0);
        assert!(l_min(&step(3.0), &p, None).abs() < 1e-12);
        assert!((l_min(&step(5.0), &p, None) - 3.0).abs() < 1e-12);
        assert_eq!(l_min(&step(0.0), &p, None), 0.0);
    }

    #[test]
    fn l_sub_values() {
        let sub = [0, 1, 2];
        let one = tensor(1, 2, 4, |i| if i % 4 == 1 { 1.0 } else { 0.0 });
        assert_eq!(l_sub(&one, &sub, SubmissionSquash::Sum, None), 0.0);
        let two = tensor(1, 1, 4, |i| if i == 0 || i == 2 { 1.0 } else { 0.0 });
        assert_eq!(l_sub(&two, &sub, SubmissionSquash::Sum, None), 1.0);
        let spread = tensor(1, 1, 4, |i| if i < 3 { 0.4 } else { 0.0 });
        assert!((l_sub(&spread, &sub, SubmissionSquash::Sum, None) - 0.2).abs() < 1e-12);
    }

    #[test]
    fn l_poss_values() {
        let help = [0, 1, 2, 3, 4];
        let attempt = [5, 6, 7, 8, 9];
        let only_attempt = tensor(1, 1, 10, |i| if i >= 5 { 1.0 } else { 0.0 });
        assert_eq!(l_poss(&only_attempt, &help, &attempt, None), 0.0);
        let both = tensor(1, 1, 10, |i| if i == 0 || i == 5 { 1.0 } else { 0.0 });
        assert!((l_poss(&both, &help, &attempt, None) - 0.04).abs() < 1e-15);
        let only_help = tensor(1, 1, 10, |i| if i < 5 { 1.0 } else { 0.0 });
        assert_eq!(l_poss(&only_help, &help, &attempt, None), 0.0);
    }

    #[test]
    fn total_reduces_to_bce() {
        let v = FeatureVocabulary::default_fixture();
        let mp = MinPenaltyParams::default();
        let spec = ConstraintSpec {
            vocab: &v,
            min_params: &mp,
            squash: SubmissionSquash::Sum,
        };
        let w = tensor(2, 3, 13, |i| ((i * 7) % 10) as f64 / 10.0);
        let t = total_loss(0.3, true, &w, &LossWeights::default(), &spec);
        assert_eq!(t.value, bce(0.3, true));
        assert!(t.d_w.as_slice().iter().all(|&g| g == 0.0));

        // binary, single submission, one-sided, mass <= onset
        let mut legal = FilterTensor::zeros(1, 3, 13);
        for (n, j) in [(0, 10), (0, 0), (1, 12), (2, 12), (2, 5)] {
            let idx = legal.index(0, n, j);
            legal.as_mut_slice()[idx] = 1.0;
        }
        let all = LossWeights { bin: 1.0, min: 1.0, sub: 1.0, poss: 1.0 };
        let t = total_loss(0.7, false, &legal, &all, &spec);
        assert!((t.value - bce(0.7, false)).abs() < 1e-12);

        let mut single = FilterTensor::zeros(1, 3, 13);
        single.as_mut_slice()[3] = 0.5;
        let g = LossWeights { bin: 2.0, ..LossWeights::default() };
        let t = total_loss(0.5, true, &single, &g, &spec);
        assert!((t.value - (std::f64::consts::LN_2 + 0.5)).abs() < 1e-12);
    }
}
