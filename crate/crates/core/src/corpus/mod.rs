//! Binary sequential data model: feature vocabulary, labeled clips, datasets,
//! the line-delimited clip interchange format and stratified splitting.

mod synth;

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use synth::{benchmark_patterns, synth_generate, SynthParams, BENCHMARK_PATTERNS};

/// Default number of action steps per clip.
pub const DEFAULT_CLIP_LEN: usize = 5;

const FORMAT_TAG: &str = "gamedet-clips";
const FORMAT_VERSION: u32 = 1;

/// The three submission types every action step carries exactly one of.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Submission {
    Help,
    Correct,
    Incorrect,
}

impl Submission {
    pub const ALL: [Submission; 3] = [Submission::Help, Submission::Correct, Submission::Incorrect];
}

/// What a feature index means.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureRole {
    Submission(Submission),
    HelpRelated,
    AttemptRelated,
}

/// Names and index partitions of the binary feature space.
///
/// The submission indices, the help-related set and the attempt-related set
/// are pairwise disjoint and together cover `0..d`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawVocabulary", into = "RawVocabulary")]
pub struct FeatureVocabulary {
    feature_names: Vec<String>,
    /// help, correct, incorrect
    submission: [usize; 3],
    help_related: Vec<usize>,
    attempt_related: Vec<usize>,
    roles: Vec<FeatureRole>,
}

#[derive(Serialize, Deserialize)]
struct RawVocabulary {
    feature_names: Vec<String>,
    submission: [usize; 3],
    help_related: Vec<usize>,
    attempt_related: Vec<usize>,
}

impl TryFrom<RawVocabulary> for FeatureVocabulary {
    type Error = Error;

    fn try_from(raw: RawVocabulary) -> Result<Self> {
        FeatureVocabulary::new(
            raw.feature_names,
            raw.submission,
            raw.help_related,
            raw.attempt_related,
        )
    }
}

impl From<FeatureVocabulary> for RawVocabulary {
    fn from(v: FeatureVocabulary) -> Self {
        RawVocabulary {
            feature_names: v.feature_names,
            submission: v.submission,
            help_related: v.help_related,
            attempt_related: v.attempt_related,
        }
    }
}

impl FeatureVocabulary {
    pub fn new(
        feature_names: Vec<String>,
        submission: [usize; 3],
        help_related: Vec<usize>,
        attempt_related: Vec<usize>,
    ) -> Result<Self> {
        let d = feature_names.len();
        if d < 4 {
            return Err(Error::Vocabulary(format!("need at least 4 features, got {d}")));
        }
        let mut roles: Vec<Option<FeatureRole>> = vec![None; d];
        let mut assign = |idx: usize, role: FeatureRole| -> Result<()> {
            let slot = roles
                .get_mut(idx)
                .ok_or_else(|| Error::Vocabulary(format!("index {idx} out of range 0..{d}")))?;
            if slot.is_some() {
                return Err(Error::Vocabulary(format!("index {idx} assigned to more than one set")));
            }
            *slot = Some(role);
            Ok(())
        };
        for (idx, kind) in submission.iter().zip(Submission::ALL) {
            assign(*idx, FeatureRole::Submission(kind))?;
        }
        for &idx in &help_related {
            assign(idx, FeatureRole::HelpRelated)?;
        }
        for &idx in &attempt_related {
            assign(idx, FeatureRole::AttemptRelated)?;
        }
        let roles = roles
            .into_iter()
            .enumerate()
            .map(|(i, r)| r.ok_or_else(|| Error::Vocabulary(format!("index {i} belongs to no set"))))
            .collect::<Result<Vec<_>>>()?;
        if help_related.is_empty() || attempt_related.is_empty() {
            return Err(Error::Vocabulary("help- and attempt-related sets must be non-empty".into()));
        }
        let unique: BTreeSet<&str> = feature_names.iter().map(String::as_str).collect();
        if unique.len() != d {
            return Err(Error::Vocabulary("feature names must be unique".into()));
        }
        Ok(FeatureVocabulary {
            feature_names,
            submission,
            help_related,
            attempt_related,
            roles,
        })
    }

    /// The 13-feature layout used by fixtures and the synthetic benchmark:
    /// five help-related features, five attempt-related features, then the
    /// three submission types.
    pub fn default_fixture() -> Self {
        let names = [
            "searching_bottom_out_hint",
            "fast_help_request",
            "help_after_long_pause",
            "help_skipped_quickly",
            "repeated_help_request",
            "similar_answer",
            "same_answer_other_context",
            "fast_attempt",
            "answer_in_wrong_place",
            "sequential_guess",
            "help",
            "correct",
            "incorrect",
        ];
        FeatureVocabulary::new(
            names.iter().map(|s| s.to_string()).collect(),
            [10, 11, 12],
            vec![0, 1, 2, 3, 4],
            vec![5, 6, 7, 8, 9],
        )
        .expect("fixture vocabulary is valid")
    }

    pub fn d(&self) -> usize {
        self.feature_names.len()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.feature_names[idx]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|n| n == name)
    }

    pub fn submission_indices(&self) -> &[usize; 3] {
        &self.submission
    }

    pub fn submission_index(&self, kind: Submission) -> usize {
        match kind {
            Submission::Help => self.submission[0],
            Submission::Correct => self.submission[1],
            Submission::Incorrect => self.submission[2],
        }
    }

    pub fn help_related(&self) -> &[usize] {
        &self.help_related
    }

    pub fn attempt_related(&self) -> &[usize] {
        &self.attempt_related
    }

    pub fn role(&self, idx: usize) -> FeatureRole {
        self.roles[idx]
    }

    /// Checks one action step against the per-step rules. Returns the
    /// violated rule on failure.
    pub fn check_step(&self, step: &[u8]) -> std::result::Result<(), &'static str> {
        if step.len() != self.d() {
            return Err("feature count does not match vocabulary");
        }
        let mut submissions = 0;
        let mut help_on = false;
        let mut help_related = false;
        let mut attempt_related = false;
        for (j, &v) in step.iter().enumerate() {
            match v {
                0 => continue,
                1 => {}
                _ => return Err("feature value is not 0/1"),
            }
            match self.roles[j] {
                FeatureRole::Submission(kind) => {
                    submissions += 1;
                    help_on |= kind == Submission::Help;
                }
                FeatureRole::HelpRelated => help_related = true,
                FeatureRole::AttemptRelated => attempt_related = true,
            }
        }
        if submissions == 0 {
            return Err("missing submission type");
        }
        if submissions > 1 {
            return Err("multiple submission types");
        }
        if help_related && attempt_related {
            return Err("help-related and attempt-related features in the same step");
        }
        if help_related && !help_on {
            return Err("help-related feature without a help submission");
        }
        if attempt_related && help_on {
            return Err("attempt-related feature on a help submission");
        }
        Ok(())
    }
}

/// A labeled sequence of binary action-step vectors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Clip {
    pub clip_id: String,
    #[serde(with = "label_as_int")]
    pub label: bool,
    pub steps: Vec<Vec<u8>>,
}

mod label_as_int {
    use serde::{de::Error as _, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &bool, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(u8::from(*v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
        match u8::deserialize(d)? {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(D::Error::custom(format!("label must be 0 or 1, got {other}"))),
        }
    }
}

impl Clip {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn width(&self) -> usize {
        self.steps.first().map_or(0, Vec::len)
    }

    pub fn validate(&self, vocab: &FeatureVocabulary) -> Result<()> {
        if self.steps.is_empty() {
            return Err(Error::clip(&self.clip_id, "clip has no action steps"));
        }
        for (t, step) in self.steps.iter().enumerate() {
            vocab
                .check_step(step)
                .map_err(|rule| Error::clip(&self.clip_id, format!("step {t}: {rule}")))?;
        }
        Ok(())
    }

    /// Indices of the features set to 1 in step `t`.
    pub fn active(&self, t: usize) -> impl Iterator<Item = usize> + '_ {
        self.steps[t]
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0)
            .map(|(j, _)| j)
    }
}

/// An immutable collection of clips over one vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    vocabulary: FeatureVocabulary,
    clips: Vec<Clip>,
    config_hash: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    #[serde(flatten)]
    vocabulary: FeatureVocabulary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config_hash: Option<String>,
}

impl Dataset {
    /// Builds a dataset, validating every clip.
    pub fn new(vocabulary: FeatureVocabulary, clips: Vec<Clip>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for clip in &clips {
            clip.validate(&vocabulary)?;
            if !seen.insert(clip.clip_id.as_str()) {
                return Err(Error::clip(&clip.clip_id, "duplicate clip_id"));
            }
        }
        Ok(Dataset {
            vocabulary,
            clips,
            config_hash: None,
        })
    }

    pub fn with_config_hash(mut self, hash: impl Into<String>) -> Self {
        self.config_hash = Some(hash.into());
        self
    }

    pub fn vocabulary(&self) -> &FeatureVocabulary {
        &self.vocabulary
    }

    pub fn clips(&self) -> &[Clip] {
        &self.clips
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn config_hash(&self) -> Option<&str> {
        self.config_hash.as_deref()
    }

    pub fn positives(&self) -> usize {
        self.clips.iter().filter(|c| c.label).count()
    }

    /// Fraction of clips labeled positive; 0 for an empty dataset.
    pub fn positive_rate(&self) -> f64 {
        if self.clips.is_empty() {
            0.0
        } else {
            self.positives() as f64 / self.clips.len() as f64
        }
    }

    pub fn labels(&self) -> Vec<bool> {
        self.clips.iter().map(|c| c.label).collect()
    }

    pub fn get(&self, clip_id: &str) -> Option<&Clip> {
        self.clips.iter().find(|c| c.clip_id == clip_id)
    }

    fn subset(&self, mut idx: Vec<usize>) -> Dataset {
        idx.sort_unstable();
        Dataset {
            vocabulary: self.vocabulary.clone(),
            clips: idx.into_iter().map(|i| self.clips[i].clone()).collect(),
            config_hash: self.config_hash.clone(),
        }
    }

    /// Parses the line-delimited clip format. The first non-empty line is the
    /// header; when `expected` is given the header vocabulary must equal it.
    pub fn from_jsonl(text: &str, expected: Option<&FeatureVocabulary>) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (hline, htext) = lines.next().ok_or(Error::Malformed {
            line: 1,
            reason: "missing header record".into(),
        })?;
        let header: Header = serde_json::from_str(htext).map_err(|e| Error::Malformed {
            line: hline + 1,
            reason: format!("header: {e}"),
        })?;
        if header.format != FORMAT_TAG || header.version != FORMAT_VERSION {
            return Err(Error::Malformed {
                line: hline + 1,
                reason: format!(
                    "unsupported format {}/{} (expected {FORMAT_TAG}/{FORMAT_VERSION})",
                    header.format, header.version
                ),
            });
        }
        if let Some(v) = expected {
            if v.d() != header.vocabulary.d() {
                return Err(Error::Vocabulary(format!(
                    "file declares {} features, expected {}",
                    header.vocabulary.d(),
                    v.d()
                )));
            }
            if *v != header.vocabulary {
                return Err(Error::Vocabulary("file vocabulary differs from the expected one".into()));
            }
        }
        let d = header.vocabulary.d();
        let mut clips = Vec::new();
        for (lineno, line) in lines {
            let clip: Clip = serde_json::from_str(line).map_err(|e| Error::Malformed {
                line: lineno + 1,
                reason: e.to_string(),
            })?;
            if let Some(step) = clip.steps.iter().find(|s| s.len() != d) {
                return Err(Error::clip(
                    &clip.clip_id,
                    format!("feature count {} does not match vocabulary ({d})", step.len()),
                ));
            }
            clips.push(clip);
        }
        let mut ds = Dataset::new(header.vocabulary, clips)?;
        ds.config_hash = header.config_hash;
        Ok(ds)
    }

    /// Canonical serialization: header line then one compact record per clip.
    pub fn to_jsonl(&self) -> String {
        let header = Header {
            format: FORMAT_TAG.into(),
            version: FORMAT_VERSION,
            vocabulary: self.vocabulary.clone(),
            config_hash: self.config_hash.clone(),
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for clip in &self.clips {
            // Clip serialization cannot fail: plain strings and integers.
            let _ = writeln!(out, "{}", serde_json::to_string(clip).expect("clip serializes"));
        }
        out
    }
}

/// Loads a clip file, rejecting the whole file on the first violation.
pub fn load_dataset(path: &Path, vocabulary: Option<&FeatureVocabulary>) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Dataset::from_jsonl(&text, vocabulary)
}

pub fn write_dataset(path: &Path, dataset: &Dataset) -> Result<()> {
    std::fs::write(path, dataset.to_jsonl()).map_err(|e| Error::io(path, e))
}

fn round_count(n: usize, fraction: f64) -> usize {
    ((n as f64 * fraction).round() as usize).min(n)
}

/// Splits into (train, validation, test), stratified by label.
///
/// The test split takes `test_fraction` of all clips; validation takes
/// `val_fraction_of_remainder` of what is left. Split sizes are rounded from
/// the totals and each split's positive count is rounded from its share of
/// the positives, so every split's positive rate stays within one clip of
/// the parent rate.
pub fn stratified_split(
    dataset: &Dataset,
    test_fraction: f64,
    val_fraction_of_remainder: f64,
    seed: u64,
) -> Result<(Dataset, Dataset, Dataset)> {
    for (name, f) in [("test_fraction", test_fraction), ("val_fraction", val_fraction_of_remainder)] {
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::Config(format!("{name} must lie in (0, 1), got {f}")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut pos, mut neg): (Vec<usize>, Vec<usize>) =
        (0..dataset.len()).partition(|&i| dataset.clips[i].label);
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Config("stratified split needs both positive and negative clips".into()));
    }
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);

    let n = dataset.len();
    let n_test = round_count(n, test_fraction);
    let n_rest = n - n_test;
    let n_val = round_count(n_rest, val_fraction_of_remainder);
    let n_train = n_rest - n_val;
    if n_test == 0 || n_val == 0 || n_train == 0 {
        return Err(Error::Config(format!(
            "split fractions leave an empty split (train {n_train}, val {n_val}, test {n_test})"
        )));
    }

    let take = |pool: &mut Vec<usize>, k: usize| -> Vec<usize> { pool.split_off(pool.len() - k.min(pool.len())) };
    let pick = |size: usize, pos_share: usize, pos: &mut Vec<usize>, neg: &mut Vec<usize>| {
        let p = pos_share.min(pos.len()).min(size);
        let q = (size - p).min(neg.len());
        // Fall back on positives if negatives run out.
        let p = p + (size - p - q).min(pos.len() - p);
        let mut out = take(pos, p);
        out.extend(take(neg, q));
        out
    };

    let pos_total = pos.len();
    let test_pos = round_count(pos_total, test_fraction);
    let test = pick(n_test, test_pos, &mut pos, &mut neg);
    let val_pos = round_count(pos.len(), val_fraction_of_remainder);
    let val = pick(n_val, val_pos, &mut pos, &mut neg);
    let mut train = pos;
    train.extend(neg);

    Ok((dataset.subset(train), dataset.subset(val), dataset.subset(test)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> FeatureVocabulary {
        FeatureVocabulary::default_fixture()
    }

    pub(crate) fn step(v: &FeatureVocabulary, sub: Submission, extra: &[usize]) -> Vec<u8> {
        let mut s = vec![0u8; v.d()];
        s[v.submission_index(sub)] = 1;
        for &j in extra {
            s[j] = 1;
        }
        s
    }

    fn clip(id: &str, label: bool) -> Clip {
        let v = vocab();
        Clip {
            clip_id: id.into(),
            label,
            steps: vec![
                step(&v, Submission::Help, &[0]),
                step(&v, Submission::Incorrect, &[]),
                step(&v, Submission::Incorrect, &[5]),
                step(&v, Submission::Correct, &[7, 8]),
                step(&v, Submission::Help, &[]),
            ],
        }
    }

    #[test]
    fn vocabulary_rejects_overlap_and_gaps() {
        let names: Vec<String> = (0..5).map(|i| format!("f{i}")).collect();
        assert!(FeatureVocabulary::new(names.clone(), [0, 1, 2], vec![3], vec![4]).is_ok());
        assert!(FeatureVocabulary::new(names.clone(), [0, 1, 2], vec![3], vec![3]).is_err());
        assert!(FeatureVocabulary::new(names.clone(), [0, 1, 2], vec![3], vec![]).is_err());
        assert!(FeatureVocabulary::new(names[..4].to_vec(), [0, 1, 2], vec![3], vec![]).is_err());
        assert!(FeatureVocabulary::new(names, [0, 1, 2], vec![3, 9], vec![4]).is_err());
    }

    #[test]
    fn step_rules() {
        let v = vocab();
        assert!(v.check_step(&step(&v, Submission::Help, &[0, 1])).is_ok());
        let mut two = step(&v, Submission::Help, &[]);
        two[v.submission_index(Submission::Correct)] = 1;
        assert_eq!(v.check_step(&two), Err("multiple submission types"));
        assert_eq!(
            v.check_step(&step(&v, Submission::Help, &[0, 5])),
            Err("help-related and attempt-related features in the same step")
        );
        assert_eq!(
            v.check_step(&step(&v, Submission::Correct, &[0])),
            Err("help-related feature without a help submission")
        );
        assert_eq!(
            v.check_step(&step(&v, Submission::Help, &[6])),
            Err("attempt-related feature on a help submission")
        );
        assert_eq!(v.check_step(&[0; 13]), Err("missing submission type"));
    }

    #[test]
    fn single_clip_file_loads() {
        let ds = Dataset::new(vocab(), vec![clip("a", true)]).unwrap();
        let text = ds.to_jsonl();
        let back = Dataset::from_jsonl(&text, Some(&vocab())).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back.to_jsonl(), text);
    }

    #[test]
    fn third_clip_with_two_submissions_is_named() {
        let v = vocab();
        let mut bad = clip("third", false);
        bad.steps[1][v.submission_index(Submission::Correct)] = 1;
        let clips = vec![clip("first", false), clip("second", true), bad];
        let header = Dataset::new(v.clone(), vec![]).unwrap().to_jsonl();
        let mut text = header;
        for c in &clips {
            text.push_str(&serde_json::to_string(c).unwrap());
            text.push('\n');
        }
        let err = Dataset::from_jsonl(&text, Some(&v)).unwrap_err().to_string();
        assert!(err.contains("third"), "{err}");
        assert!(err.contains("multiple submission types"), "{err}");
    }

    #[test]
    fn positive_rate_of_twenty_clip_fixture() {
        let clips = (0..20).map(|i| clip(&format!("c{i}"), i == 3 || i == 11)).collect();
        let ds = Dataset::new(vocab(), clips).unwrap();
        assert_eq!(ds.positives(), 2);
        assert!((ds.positive_rate() - 0.10).abs() < 1e-12);
    }

    #[test]
    fn feature_count_mismatch_rejected() {
        let v = vocab();
        let header = Dataset::new(v.clone(), vec![]).unwrap().to_jsonl();
        let text = format!("{header}{{\"clip_id\":\"x\",\"label\":0,\"steps\":[[1,0,0]]}}\n");
        let err = Dataset::from_jsonl(&text, Some(&v)).unwrap_err();
        assert!(matches!(err, Error::InvalidClip { .. }), "{err}");
        let other = FeatureVocabulary::new(
            (0..4).map(|i| format!("g{i}")).collect(),
            [0, 1, 2],
            vec![3],
            vec![],
        );
        assert!(other.is_err());
    }

    #[test]
    fn malformed_records() {
        let v = vocab();
        assert!(Dataset::from_jsonl("", Some(&v)).is_err());
        assert!(Dataset::from_jsonl("{not json", Some(&v)).is_err());
        let header = Dataset::new(v.clone(), vec![]).unwrap().to_jsonl();
        let text = format!("{header}{{\"clip_id\":\"x\",\"label\":2,\"steps\":[]}}\n");
        assert!(matches!(
            Dataset::from_jsonl(&text, Some(&v)),
            Err(Error::Malformed { line: 2, .. })
        ));
    }

    #[test]
    fn split_hundred_clips() {
        let clips = (0..100).map(|i| clip(&format!("c{i:03}"), i % 17 == 0)).collect();
        let ds = Dataset::new(vocab(), clips).unwrap();
        assert_eq!(ds.positives(), 6);
        let (tr, va, te) = stratified_split(&ds, 0.25, 0.20, 7).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (60, 15, 25));
        let pos = (tr.positives(), va.positives(), te.positives());
        assert!(pos == (4, 1, 1) || pos == (3, 1, 2), "{pos:?}");
        for split in [&tr, &va, &te] {
            let expected = ds.positive_rate() * split.len() as f64;
            assert!((split.positives() as f64 - expected).abs() <= 1.0);
        }
        let (tr2, va2, te2) = stratified_split(&ds, 0.25, 0.20, 7).unwrap();
        assert_eq!((tr, va, te), (tr2, va2, te2));
    }

    #[test]
    fn degenerate_split_fraction() {
        let clips = (0..10).map(|i| clip(&format!("c{i}"), i < 2)).collect();
        let ds = Dataset::new(vocab(), clips).unwrap();
        assert!(stratified_split(&ds, 0.99, 0.2, 1).is_err());
        assert!(stratified_split(&ds, 0.0, 0.2, 1).is_err());
    }
}
