//! Discrete pattern semantics and the curation funnel that turns harvested
//! filters into a deduplicated, subsumption-pruned, precision-ranked bank.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Clip, Dataset, FeatureRole, FeatureVocabulary};
use crate::error::{Error, Result};
use crate::evalmetrics::{kappa, Confusion};

/// Patterns matched on fewer clips than this rank below equally precise ones.
pub const LOW_SUPPORT: usize = 3;

/// Default distance from {0,1} a continuous weight may have and still binarize.
pub const DEFAULT_BINARIZE_TOLERANCE: f64 = 0.05;

/// A binary k × d template of required feature presences.
///
/// Cells set to 1 must be present in the matched window; cells set to 0 are
/// unconstrained.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "RawPattern", into = "RawPattern")]
pub struct Pattern {
    pub pattern_id: String,
    cells: Vec<Vec<u8>>,
    pub precision_train: Option<f64>,
    /// Number of clips the pattern matched when `precision_train` was computed.
    pub support: usize,
    pub source_era: Option<usize>,
    positives: Vec<(usize, usize)>,
}

#[derive(Serialize, Deserialize)]
struct RawPattern {
    pattern_id: String,
    cells: Vec<Vec<u8>>,
    precision_train: Option<f64>,
    #[serde(default)]
    support: usize,
    source_era: Option<usize>,
}

impl TryFrom<RawPattern> for Pattern {
    type Error = Error;

    fn try_from(raw: RawPattern) -> Result<Self> {
        let mut p = Pattern::from_cells(raw.pattern_id, raw.cells)?;
        p.precision_train = raw.precision_train;
        p.support = raw.support;
        p.source_era = raw.source_era;
        Ok(p)
    }
}

impl From<Pattern> for RawPattern {
    fn from(p: Pattern) -> Self {
        RawPattern {
            pattern_id: p.pattern_id,
            cells: p.cells,
            precision_train: p.precision_train,
            support: p.support,
            source_era: p.source_era,
        }
    }
}

impl PartialEq for Pattern {
    fn eq(&self, other: &Self) -> bool {
        self.pattern_id == other.pattern_id
            && self.cells == other.cells
            && self.precision_train == other.precision_train
            && self.support == other.support
            && self.source_era == other.source_era
    }
}

impl Pattern {
    /// Structural checks only (rectangular, binary, non-empty).
    pub fn from_cells(pattern_id: impl Into<String>, cells: Vec<Vec<u8>>) -> Result<Self> {
        let pattern_id = pattern_id.into();
        let fail = |reason: &str| Error::Pattern {
            name: pattern_id.clone(),
            reason: reason.into(),
        };
        let d = cells.first().map_or(0, Vec::len);
        if cells.is_empty() || d == 0 {
            return Err(fail("empty cell matrix"));
        }
        if cells.iter().any(|r| r.len() != d) {
            return Err(fail("rows of unequal width"));
        }
        if cells.iter().flatten().any(|&v| v > 1) {
            return Err(fail("cell value is not 0/1"));
        }
        let positives: Vec<(usize, usize)> = cells
            .iter()
            .enumerate()
            .flat_map(|(n, row)| {
                row.iter()
                    .enumerate()
                    .filter(|(_, &v)| v == 1)
                    .map(move |(j, _)| (n, j))
            })
            .collect();
        if positives.is_empty() {
            return Err(fail("pattern has no positive cell"));
        }
        Ok(Pattern {
            pattern_id,
            cells,
            precision_train: None,
            support: 0,
            source_era: None,
            positives,
        })
    }

    /// Structural checks plus the vocabulary invariants.
    pub fn new(pattern_id: impl Into<String>, cells: Vec<Vec<u8>>, vocab: &FeatureVocabulary) -> Result<Self> {
        let p = Pattern::from_cells(pattern_id, cells)?;
        p.validate(vocab)?;
        Ok(p)
    }

    pub fn validate(&self, vocab: &FeatureVocabulary) -> Result<()> {
        if self.d() != vocab.d() {
            return Err(Error::Pattern {
                name: self.pattern_id.clone(),
                reason: format!("width {} does not match vocabulary ({})", self.d(), vocab.d()),
            });
        }
        if let Some(rejection) = step_violation(&self.cells, vocab) {
            return Err(Error::Pattern {
                name: self.pattern_id.clone(),
                reason: rejection.to_string(),
            });
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.cells.len()
    }

    pub fn d(&self) -> usize {
        self.cells[0].len()
    }

    pub fn cells(&self) -> &[Vec<u8>] {
        &self.cells
    }

    pub fn cell(&self, n: usize, j: usize) -> bool {
        self.cells[n][j] == 1
    }

    /// (step, feature) coordinates of the required cells, row-major.
    pub fn positives(&self) -> &[(usize, usize)] {
        &self.positives
    }

    pub fn positive_count(&self) -> usize {
        self.positives.len()
    }

    fn is_low_support(&self) -> bool {
        self.support < LOW_SUPPORT
    }
}

fn step_violation(cells: &[Vec<u8>], vocab: &FeatureVocabulary) -> Option<Rejection> {
    for (n, row) in cells.iter().enumerate() {
        let mut subs = 0;
        let mut help = false;
        let mut attempt = false;
        for (j, &v) in row.iter().enumerate() {
            if v == 0 {
                continue;
            }
            match vocab.role(j) {
                FeatureRole::Submission(_) => subs += 1,
                FeatureRole::HelpRelated => help = true,
                FeatureRole::AttemptRelated => attempt = true,
            }
        }
        if subs > 1 {
            return Some(Rejection::SubmissionInvariant { step: n });
        }
        if help && attempt {
            return Some(Rejection::ExclusiveFeatureSets { step: n });
        }
    }
    None
}

/// Why a continuous filter could not become a pattern.
#[derive(Debug, Clone, PartialEq)]
pub enum Rejection {
    NonBinaryCell { step: usize, feature: usize, value: f64 },
    SubmissionInvariant { step: usize },
    ExclusiveFeatureSets { step: usize },
    Empty,
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rejection::NonBinaryCell { step, feature, value } => {
                write!(f, "non-binary cell ({step}, {feature}) = {value}")
            }
            Rejection::SubmissionInvariant { step } => {
                write!(f, "submission invariant: more than one submission type in step {step}")
            }
            Rejection::ExclusiveFeatureSets { step } => {
                write!(f, "help-related and attempt-related cells both set in step {step}")
            }
            Rejection::Empty => f.write_str("all-zero filter"),
        }
    }
}

/// Rounds a k × d filter (row-major slice) at 0.5, rejecting it if any
/// weight lies farther than `tolerance` from {0,1} or the rounded result
/// breaks the pattern invariants.
pub fn binarize(
    filter: &[f64],
    k: usize,
    vocab: &FeatureVocabulary,
    tolerance: f64,
    pattern_id: impl Into<String>,
) -> std::result::Result<Pattern, Rejection> {
    let d = vocab.d();
    assert_eq!(filter.len(), k * d, "filter length must be k * d");
    let mut cells = vec![vec![0u8; d]; k];
    for (idx, &w) in filter.iter().enumerate() {
        let (n, j) = (idx / d, idx % d);
        let bit = w >= 0.5;
        let dist = if bit { (1.0 - w).abs() } else { w.abs() };
        if !(dist <= tolerance) {
            return Err(Rejection::NonBinaryCell { step: n, feature: j, value: w });
        }
        cells[n][j] = u8::from(bit);
    }
    if let Some(r) = step_violation(&cells, vocab) {
        return Err(r);
    }
    Pattern::from_cells(pattern_id, cells).map_err(|_| Rejection::Empty)
}

/// Number of window positions over a clip of `len` steps zero-padded by
/// `padding` on both ends.
pub fn window_count(len: usize, k: usize, padding: usize) -> usize {
    (len + 2 * padding + 1).saturating_sub(k)
}

/// Finds the first window (in padded coordinates) where every required cell
/// of `pattern` is present in `clip`. Padded steps are all-zero.
pub fn discrete_match(pattern: &Pattern, clip: &Clip, padding: usize) -> Option<usize> {
    match_positives(&pattern.positives, pattern.k(), clip, padding)
}

/// Matching on a raw list of required `(step, feature)` cells of a k-step
/// window. An empty list matches the first window.
pub fn match_positives(positives: &[(usize, usize)], k: usize, clip: &Clip, padding: usize) -> Option<usize> {
    let len = clip.len();
    (0..window_count(len, k, padding)).find(|&c| {
        positives.iter().all(|&(n, j)| {
            (c + n)
                .checked_sub(padding)
                .filter(|&t| t < len)
                .is_some_and(|t| clip.steps[t][j] == 1)
        })
    })
}

/// Every pattern that matches, with its window.
#[derive(Debug, Clone, PartialEq)]
pub struct BankPrediction {
    pub positive: bool,
    /// (index into the bank, padded window position)
    pub matches: Vec<(usize, usize)>,
}

/// An immutable ordered collection of patterns over one vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBank", into = "RawBank")]
pub struct PatternBank {
    vocabulary: FeatureVocabulary,
    patterns: Vec<Pattern>,
    padding: usize,
    config_hash: Option<String>,
}

const BANK_FORMAT: &str = "gamedet-bank";
const BANK_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct RawBank {
    format: String,
    version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config_hash: Option<String>,
    vocabulary: FeatureVocabulary,
    padding: usize,
    patterns: Vec<Pattern>,
}

impl TryFrom<RawBank> for PatternBank {
    type Error = Error;

    fn try_from(raw: RawBank) -> Result<Self> {
        if raw.format != BANK_FORMAT || raw.version != BANK_VERSION {
            return Err(Error::Config(format!(
                "unsupported bank format {}/{}",
                raw.format, raw.version
            )));
        }
        let mut bank = PatternBank::new(raw.vocabulary, raw.patterns, raw.padding)?;
        bank.config_hash = raw.config_hash;
        Ok(bank)
    }
}

impl From<PatternBank> for RawBank {
    fn from(b: PatternBank) -> Self {
        RawBank {
            format: BANK_FORMAT.into(),
            version: BANK_VERSION,
            config_hash: b.config_hash,
            vocabulary: b.vocabulary,
            padding: b.padding,
            patterns: b.patterns,
        }
    }
}

impl PatternBank {
    /// Validates every pattern against the vocabulary and rejects duplicate
    /// cell matrices, duplicate ids, and position-aligned subsumption.
    pub fn new(vocabulary: FeatureVocabulary, patterns: Vec<Pattern>, padding: usize) -> Result<Self> {
        let mut ids = HashSet::new();
        let mut cells = HashSet::new();
        for p in &patterns {
            p.validate(&vocabulary)?;
            if !ids.insert(p.pattern_id.as_str()) {
                return Err(Error::Pattern {
                    name: p.pattern_id.clone(),
                    reason: "duplicate pattern_id".into(),
                });
            }
            if !cells.insert(&p.cells) {
                return Err(Error::Pattern {
                    name: p.pattern_id.clone(),
                    reason: "duplicate cell matrix".into(),
                });
            }
        }
        if let Some(k) = patterns.first().map(Pattern::k) {
            if let Some(p) = patterns.iter().find(|p| p.k() != k) {
                return Err(Error::Pattern {
                    name: p.pattern_id.clone(),
                    reason: format!("pattern has {} steps, bank uses {k}", p.k()),
                });
            }
        }
        for (i, a) in patterns.iter().enumerate() {
            for (j, b) in patterns.iter().enumerate() {
                if i != j && aligned_subset(a, b) {
                    return Err(Error::Pattern {
                        name: b.pattern_id.clone(),
                        reason: format!("subsumed by {}", a.pattern_id),
                    });
                }
            }
        }
        Ok(PatternBank {
            vocabulary,
            patterns,
            padding,
            config_hash: None,
        })
    }

    pub fn empty(vocabulary: FeatureVocabulary, padding: usize) -> Self {
        PatternBank {
            vocabulary,
            patterns: Vec::new(),
            padding,
            config_hash: None,
        }
    }

    pub fn with_config_hash(mut self, hash: impl Into<String>) -> Self {
        self.config_hash = Some(hash.into());
        self
    }

    pub fn config_hash(&self) -> Option<&str> {
        self.config_hash.as_deref()
    }

    pub fn vocabulary(&self) -> &FeatureVocabulary {
        &self.vocabulary
    }

    pub fn patterns(&self) -> &[Pattern] {
        &self.patterns
    }

    pub fn padding(&self) -> usize {
        self.padding
    }

    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("bank serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        PatternBank::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

/// OR over all patterns of the bank; also reports which ones matched.
pub fn bank_predict(bank: &PatternBank, clip: &Clip) -> BankPrediction {
    let matches: Vec<(usize, usize)> = bank
        .patterns
        .iter()
        .enumerate()
        .filter_map(|(i, p)| discrete_match(p, clip, bank.padding).map(|c| (i, c)))
        .collect();
    BankPrediction {
        positive: !matches.is_empty(),
        matches,
    }
}

/// Precision of `pattern` over `dataset` and the number of clips it matched.
/// Precision is `None` when nothing matched.
pub fn pattern_precision(pattern: &Pattern, dataset: &Dataset, padding: usize) -> (Option<f64>, usize) {
    let (mut hits, mut pos) = (0usize, 0usize);
    for clip in dataset.clips() {
        if discrete_match(pattern, clip, padding).is_some() {
            hits += 1;
            pos += usize::from(clip.label);
        }
    }
    let precision = (hits > 0).then(|| pos as f64 / hits as f64);
    (precision, hits)
}

/// Keeps the first occurrence of every distinct cell matrix.
pub fn dedup(patterns: Vec<Pattern>) -> Vec<Pattern> {
    let mut seen = HashSet::new();
    patterns
        .into_iter()
        .filter(|p| seen.insert(p.cells.clone()))
        .collect()
}

/// Geometry that decides when one pattern matches wherever another does.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsumptionRule {
    pub clip_len: usize,
    pub padding: usize,
    /// Also accept containment at a step offset, provided the offset window
    /// is valid for every placement of the more specific pattern.
    pub allow_shift: bool,
}

impl Default for SubsumptionRule {
    fn default() -> Self {
        SubsumptionRule {
            clip_len: crate::corpus::DEFAULT_CLIP_LEN,
            padding: 1,
            allow_shift: true,
        }
    }
}

fn aligned_subset(a: &Pattern, b: &Pattern) -> bool {
    a.k() == b.k() && a.d() == b.d() && a.positives.iter().all(|&(n, j)| b.cells[n][j] == 1)
}

/// Whether `general` matches every clip that `specific` matches.
pub fn subsumes(general: &Pattern, specific: &Pattern, rule: &SubsumptionRule) -> bool {
    if general.d() != specific.d() || general.k() != specific.k() {
        return false;
    }
    if aligned_subset(general, specific) {
        return true;
    }
    if !rule.allow_shift {
        return false;
    }
    let k = general.k() as isize;
    // Offsets at which `general`'s required cells all sit on required cells of `specific`.
    let shifts: Vec<isize> = (-(k - 1)..k)
        .filter(|&delta| {
            delta != 0
                && general.positives.iter().all(|&(n, j)| {
                    let m = n as isize + delta;
                    (0..k).contains(&m) && specific.cells[m as usize][j] == 1
                })
        })
        .collect();
    if shifts.is_empty() {
        return false;
    }
    // Every placement of `specific` must leave room for one of the shifts.
    let windows = window_count(rule.clip_len, specific.k(), rule.padding) as isize;
    let real = rule.padding as isize..(rule.padding + rule.clip_len) as isize;
    (0..windows)
        .filter(|&c| {
            specific
                .positives
                .iter()
                .all(|&(n, _)| real.contains(&(c + n as isize)))
        })
        .all(|c| shifts.iter().any(|&delta| (0..windows).contains(&(c + delta))))
}

/// Removes every pattern that another pattern strictly generalizes. Among
/// mutually subsuming (equivalent) patterns the earliest survives, so the
/// result is an antichain.
pub fn prune_subsumed(patterns: Vec<Pattern>, rule: &SubsumptionRule) -> Vec<Pattern> {
    let n = patterns.len();
    let keep: Vec<bool> = (0..n)
        .map(|i| {
            !(0..n).any(|j| {
                j != i
                    && subsumes(&patterns[j], &patterns[i], rule)
                    && (j < i || !subsumes(&patterns[i], &patterns[j], rule))
            })
        })
        .collect();
    patterns
        .into_iter()
        .zip(keep)
        .filter_map(|(p, k)| k.then_some(p))
        .collect()
}

/// Descending precision, low-support patterns after well-supported ones at
/// equal precision, then by id.
pub fn ranking_order(a: &Pattern, b: &Pattern) -> Ordering {
    let prec = |p: &Pattern| p.precision_train.unwrap_or(f64::NEG_INFINITY);
    prec(b)
        .total_cmp(&prec(a))
        .then(a.is_low_support().cmp(&b.is_low_support()))
        .then_with(|| a.pattern_id.cmp(&b.pattern_id))
}

/// Patterns sorted by ranking precision and the evaluation kappa of every
/// prefix of that order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KappaCurve {
    pub sorted: Vec<Pattern>,
    /// (prefix size n, kappa of the n best patterns); `None` when undefined.
    pub points: Vec<(usize, Option<f64>)>,
}

/// Recomputes each pattern's precision on `ranking_set`, sorts, and scores
/// every prefix of the ranking on `eval_set`.
pub fn cumulative_kappa_curve(
    patterns: Vec<Pattern>,
    ranking_set: &Dataset,
    eval_set: &Dataset,
    padding: usize,
) -> KappaCurve {
    let mut sorted: Vec<Pattern> = patterns
        .into_iter()
        .map(|mut p| {
            let (precision, support) = pattern_precision(&p, ranking_set, padding);
            p.precision_train = precision;
            p.support = support;
            p
        })
        .collect();
    sorted.sort_by(ranking_order);

    let labels = eval_set.labels();
    let mut predicted = vec![false; labels.len()];
    let mut points = Vec::with_capacity(sorted.len());
    for (n, p) in sorted.iter().enumerate() {
        for (pred, clip) in predicted.iter_mut().zip(eval_set.clips()) {
            if !*pred {
                *pred = discrete_match(p, clip, padding).is_some();
            }
        }
        let c = Confusion::from_predictions(&predicted, &labels);
        points.push((n + 1, kappa(&c)));
    }
    KappaCurve { sorted, points }
}

/// Number of patterns maximizing the curve (smallest on ties), or 0 when the
/// curve has no defined point.
pub fn best_prefix(points: &[(usize, Option<f64>)]) -> usize {
    let mut best: Option<(usize, f64)> = None;
    for &(n, k) in points {
        if let Some(k) = k {
            if best.is_none_or(|(_, b)| k > b) {
                best = Some((n, k));
            }
        }
    }
    best.map_or(0, |(n, _)| n)
}

/// Selects the kappa-maximizing prefix of the ranking, or the first
/// `override_n` patterns when given.
pub fn select_bank(
    curve: &KappaCurve,
    vocabulary: &FeatureVocabulary,
    padding: usize,
    override_n: Option<usize>,
) -> Result<PatternBank> {
    let n = override_n
        .unwrap_or_else(|| best_prefix(&curve.points))
        .min(curve.sorted.len());
    PatternBank::new(vocabulary.clone(), curve.sorted[..n].to_vec(), padding)
}

/// A filter saved at an era boundary whose precision cleared the harvest bar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarvestedFilter {
    pub era: usize,
    pub filter_index: usize,
    pub precision: f64,
    /// Row-major k × d source weights.
    pub weights: Vec<f64>,
}

impl HarvestedFilter {
    pub fn pattern_id(&self) -> String {
        format!("e{:03}-f{:04}", self.era, self.filter_index)
    }
}

/// Sizes at each stage of the curation funnel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Funnel {
    pub harvested: usize,
    pub binarized: usize,
    pub unique: usize,
    pub non_redundant: usize,
    pub selected: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurationSettings {
    pub binarize_tolerance: f64,
    pub rule: SubsumptionRule,
    /// Forces the bank size instead of the kappa argmax.
    pub select_n: Option<usize>,
}

impl Default for CurationSettings {
    fn default() -> Self {
        CurationSettings {
            binarize_tolerance: DEFAULT_BINARIZE_TOLERANCE,
            rule: SubsumptionRule::default(),
            select_n: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CurationOutcome {
    pub bank: PatternBank,
    pub curve: KappaCurve,
    pub funnel: Funnel,
    pub rejections: Vec<(String, Rejection)>,
}

/// Full funnel: binarize → dedup → prune → rank on `train` → pick the best
/// prefix by kappa on `val`.
pub fn curate(
    harvested: &[HarvestedFilter],
    k: usize,
    train: &Dataset,
    val: &Dataset,
    settings: &CurationSettings,
) -> Result<CurationOutcome> {
    let vocab = train.vocabulary();
    let mut rejections = Vec::new();
    let mut patterns = Vec::new();
    for h in harvested {
        match binarize(&h.weights, k, vocab, settings.binarize_tolerance, h.pattern_id()) {
            Ok(mut p) => {
                p.source_era = Some(h.era);
                p.precision_train = Some(h.precision);
                patterns.push(p);
            }
            Err(r) => rejections.push((h.pattern_id(), r)),
        }
    }
    let binarized = patterns.len();
    let unique = dedup(patterns);
    let n_unique = unique.len();
    let pruned = prune_subsumed(unique, &settings.rule);
    let n_pruned = pruned.len();
    let curve = cumulative_kappa_curve(pruned, train, val, settings.rule.padding);
    let bank = select_bank(&curve, vocab, settings.rule.padding, settings.select_n)?;
    Ok(CurationOutcome {
        funnel: Funnel {
            harvested: harvested.len(),
            binarized,
            unique: n_unique,
            non_redundant: n_pruned,
            selected: bank.len(),
        },
        bank,
        curve,
        rejections,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Submission;

    fn vocab() -> FeatureVocabulary {
        FeatureVocabulary::default_fixture()
    }

    fn pat(id: &str, cells: &[(usize, usize)]) -> Pattern {
        let mut m = vec![vec![0u8; 13]; 3];
        for &(n, j) in cells {
            m[n][j] = 1;
        }
        Pattern::new(id, m, &vocab()).unwrap()
    }

    fn clip(steps: &[(Submission, &[usize])]) -> Clip {
        let v = vocab();
        Clip {
            clip_id: "c".into(),
            label: false,
            steps: steps
                .iter()
                .map(|(s, extra)| {
                    let mut row = vec![0u8; 13];
                    row[v.submission_index(*s)] = 1;
                    for &j in *extra {
                        row[j] = 1;
                    }
                    row
                })
                .collect(),
        }
    }

    const H: usize = 10;
    const C: usize = 11;
    const I: usize = 12;

    fn five_step() -> Clip {
        clip(&[
            (Submission::Help, &[0]),
            (Submission::Incorrect, &[]),
            (Submission::Incorrect, &[5]),
            (Submission::Correct, &[7]),
            (Submission::Help, &[1]),
        ])
    }

    #[test]
    fn binarize_accepts_near_binary() {
        let mut w = vec![0.01; 39];
        w[H] = 0.98;
        w[13 + I] = 0.98;
        let p = binarize(&w, 3, &vocab(), 0.05, "p").unwrap();
        assert_eq!(p.positives(), &[(0, H), (1, I)]);
    }

    #[test]
    fn binarize_rejections() {
        let mut w = vec![0.0; 39];
        w[3] = 0.4;
        assert!(binarize(&w, 3, &vocab(), 0.05, "p")
            .unwrap_err()
            .to_string()
            .starts_with("non-binary cell"));
        let mut w = vec![0.0; 39];
        w[H] = 1.0;
        w[I] = 1.0;
        assert!(binarize(&w, 3, &vocab(), 0.05, "p")
            .unwrap_err()
            .to_string()
            .starts_with("submission invariant"));
        assert_eq!(binarize(&vec![0.0; 39], 3, &vocab(), 0.05, "p"), Err(Rejection::Empty));
    }

    #[test]
    fn match_sub_window() {
        let p = pat("p", &[(0, H), (0, 0), (1, I), (2, I), (2, 5)]);
        // window starting at step 0 is padded position 1
        assert_eq!(discrete_match(&p, &five_step(), 1), Some(1));
    }

    #[test]
    fn help_feature_never_matches_attempt_step() {
        let p = pat("p", &[(1, 0)]);
        let c = clip(&[
            (Submission::Correct, &[5]),
            (Submission::Incorrect, &[]),
            (Submission::Correct, &[7]),
            (Submission::Incorrect, &[]),
            (Submission::Correct, &[]),
        ]);
        assert_eq!(discrete_match(&p, &c, 1), None);
    }

    #[test]
    fn edge_window_realizes_shorter_pattern() {
        // Blank first row, rows 2-3 equal to the clip's first two steps.
        let p = pat("p", &[(1, H), (1, 0), (2, I)]);
        assert_eq!(discrete_match(&p, &five_step(), 1), Some(0));
        // Without padding the only alignments start at step 0..=2 and none fits.
        assert_eq!(discrete_match(&p, &five_step(), 0), None);
    }

    #[test]
    fn bank_prediction_or() {
        let empty = PatternBank::empty(vocab(), 1);
        assert!(!bank_predict(&empty, &five_step()).positive);
        let bank = PatternBank::new(vocab(), vec![pat("a", &[(0, H), (1, I)])], 1).unwrap();
        let pred = bank_predict(&bank, &five_step());
        assert!(pred.positive);
        assert_eq!(pred.matches, vec![(0, 1)]);
    }

    #[test]
    fn bank_rejects_subsumed_and_duplicates() {
        let a = pat("a", &[(0, H)]);
        let b = pat("b", &[(0, H), (1, I)]);
        assert!(PatternBank::new(vocab(), vec![a.clone(), b], 1).is_err());
        let a2 = pat("a2", &[(0, H)]);
        assert!(PatternBank::new(vocab(), vec![a, a2], 1).is_err());
    }

    #[test]
    fn dedup_keeps_first_in_order() {
        let ps: Vec<Pattern> = (0..30)
            .map(|i| {
                let which = [C, I, H][i % 3];
                pat(&format!("p{i}"), &[(1, which)])
            })
            .collect();
        let out = dedup(ps);
        let ids: Vec<_> = out.iter().map(|p| p.pattern_id.as_str()).collect();
        assert_eq!(ids, ["p0", "p1", "p2"]);
        assert_eq!(dedup(out.clone()), out);
    }

    #[test]
    fn prune_keeps_more_general() {
        let rule = SubsumptionRule::default();
        let a = pat("a", &[(0, H)]);
        let b = pat("b", &[(0, H), (1, I)]);
        let c = pat("c", &[(0, H), (1, I), (2, C)]);
        let out = prune_subsumed(vec![c.clone(), b.clone(), a.clone()], &rule);
        assert_eq!(out, vec![a.clone()]);
        let d = pat("d", &[(2, 7)]);
        assert_eq!(prune_subsumed(vec![a.clone(), d.clone()], &rule).len(), 2);
    }

    #[test]
    fn shifted_containment() {
        let rule = SubsumptionRule::default();
        // single help in the middle row can be placed on any real step
        let general = pat("g", &[(1, H)]);
        let specific = pat("s", &[(0, H), (0, 0), (1, I)]);
        assert!(subsumes(&general, &specific, &rule));
        let aligned = SubsumptionRule {
            allow_shift: false,
            ..rule
        };
        assert!(!subsumes(&general, &specific, &aligned));
        // Row-0 pattern cannot reach the last step; row-2 pattern can.
        let first_row = pat("f", &[(0, I)]);
        let last_row = pat("l", &[(2, I)]);
        assert!(!subsumes(&first_row, &last_row, &rule));
        assert!(!subsumes(&last_row, &first_row, &rule));
    }

    #[test]
    fn equivalent_shifts_keep_earliest() {
        let rule = SubsumptionRule::default();
        let a = pat("a", &[(0, H), (1, I)]);
        let b = pat("b", &[(1, H), (2, I)]);
        assert!(subsumes(&a, &b, &rule) && subsumes(&b, &a, &rule));
        assert_eq!(prune_subsumed(vec![b.clone(), a.clone()], &rule), vec![b]);
    }

    #[test]
    fn ranking_tie_rules() {
        let mut a = pat("b-id", &[(0, H)]);
        let mut b = pat("a-id", &[(0, C)]);
        let mut c = pat("c-id", &[(0, I)]);
        for p in [&mut a, &mut b, &mut c] {
            p.precision_train = Some(1.0);
            p.support = 10;
        }
        b.support = 1;
        c.precision_train = Some(0.5);
        let mut v = [c.clone(), b.clone(), a.clone()];
        v.sort_by(ranking_order);
        let ids: Vec<_> = v.iter().map(|p| p.pattern_id.as_str()).collect();
        assert_eq!(ids, ["b-id", "a-id", "c-id"]);
    }

    #[test]
    fn best_prefix_rules() {
        assert_eq!(best_prefix(&[(1, Some(0.1)), (2, Some(0.2)), (3, Some(0.3))]), 3);
        assert_eq!(best_prefix(&[(1, Some(0.1)), (2, Some(0.2)), (3, Some(0.6)), (4, Some(0.4))]), 3);
        let plateau: Vec<_> = (1..=8)
            .map(|n| (n, Some(if n == 4 || n == 7 { 0.5 } else { 0.1 })))
            .collect();
        assert_eq!(best_prefix(&plateau), 4);
        assert_eq!(best_prefix(&[(1, None)]), 0);
    }

    #[test]
    fn bank_json_round_trip() {
        let mut a = pat("a", &[(0, H), (1, I)]);
        a.precision_train = Some(0.75);
        a.support = 8;
        a.source_era = Some(2);
        let bank = PatternBank::new(vocab(), vec![a], 1).unwrap().with_config_hash("abc");
        let back = PatternBank::from_json(&bank.to_json()).unwrap();
        assert_eq!(back, bank);
    }
}
