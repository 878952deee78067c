//! Synthetic planted-pattern datasets.
//!
//! Clips are random legal action sequences. A clip becomes positive by having
//! one of the planted patterns stamped onto a random window; negatives are
//! resampled until no planted pattern matches them, so with zero noise the
//! label is exactly "some planted pattern matches".

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Clip, Dataset, FeatureRole, FeatureVocabulary, Submission};
use crate::curator::{discrete_match, window_count, Pattern};
use crate::error::{Error, Result};

const MAX_NEGATIVE_DRAWS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthParams {
    pub n_clips: usize,
    pub clip_len: usize,
    /// Probability that a clip receives a planted pattern.
    pub p_plant: f64,
    pub label_noise: f64,
    pub feature_noise: f64,
    /// Relative frequencies of help, correct and incorrect submissions.
    pub submission_weights: [f64; 3],
    /// Probability of each compatible context feature being present.
    pub context_density: f64,
    /// Padding of the matcher the planted windows are placed for.
    pub padding: usize,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            n_clips: 2000,
            clip_len: super::DEFAULT_CLIP_LEN,
            p_plant: 0.06,
            label_noise: 0.0,
            feature_noise: 0.0,
            submission_weights: [0.3, 0.4, 0.3],
            context_density: 0.25,
            padding: 1,
            seed: 0,
        }
    }
}

impl SynthParams {
    fn validate(&self) -> Result<()> {
        let frac_ok = |f: f64| (0.0..0.5).contains(&f);
        if !frac_ok(self.label_noise) || !frac_ok(self.feature_noise) {
            return Err(Error::Config("noise fractions must lie in [0, 0.5)".into()));
        }
        if !(0.0..=1.0).contains(&self.p_plant) || !(0.0..=1.0).contains(&self.context_density) {
            return Err(Error::Config("p_plant and context_density must lie in [0, 1]".into()));
        }
        if self.clip_len == 0 {
            return Err(Error::Config("clip_len must be positive".into()));
        }
        if self.submission_weights.iter().any(|w| !(*w >= 0.0)) || self.submission_weights.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config("submission weights must be non-negative with a positive sum".into()));
        }
        Ok(())
    }
}

struct Sampler<'a> {
    vocab: &'a FeatureVocabulary,
    subs: WeightedIndex<f64>,
    density: f64,
}

impl Sampler<'_> {
    fn fill_context(&self, row: &mut [u8], help: bool, rng: &mut impl Rng) {
        let set = if help {
            self.vocab.help_related()
        } else {
            self.vocab.attempt_related()
        };
        for &j in set {
            row[j] = u8::from(rng.gen_bool(self.density));
        }
    }

    fn step(&self, rng: &mut impl Rng) -> Vec<u8> {
        let mut row = vec![0u8; self.vocab.d()];
        let kind = Submission::ALL[self.subs.sample(rng)];
        row[self.vocab.submission_index(kind)] = 1;
        self.fill_context(&mut row, kind == Submission::Help, rng);
        row
    }

    fn clip(&self, len: usize, rng: &mut impl Rng) -> Vec<Vec<u8>> {
        (0..len).map(|_| self.step(rng)).collect()
    }

    fn set_submission(&self, row: &mut [u8], kind: Submission) {
        for s in Submission::ALL {
            row[self.vocab.submission_index(s)] = 0;
        }
        row[self.vocab.submission_index(kind)] = 1;
        let clear = if kind == Submission::Help {
            self.vocab.attempt_related()
        } else {
            self.vocab.help_related()
        };
        for &j in clear {
            row[j] = 0;
        }
    }
}

/// Requirements a pattern row places on one clip step.
struct RowNeeds {
    submission: Option<Submission>,
    help_related: bool,
    attempt_related: bool,
}

fn row_needs(pattern: &Pattern, n: usize, vocab: &FeatureVocabulary) -> RowNeeds {
    let mut needs = RowNeeds {
        submission: None,
        help_related: false,
        attempt_related: false,
    };
    for (j, &v) in pattern.cells()[n].iter().enumerate() {
        if v == 0 {
            continue;
        }
        match vocab.role(j) {
            FeatureRole::Submission(s) => needs.submission = Some(s),
            FeatureRole::HelpRelated => needs.help_related = true,
            FeatureRole::AttemptRelated => needs.attempt_related = true,
        }
    }
    needs
}

fn check_stampable(pattern: &Pattern, vocab: &FeatureVocabulary, params: &SynthParams) -> Result<Vec<usize>> {
    pattern.validate(vocab)?;
    let fail = |reason: String| Error::Pattern {
        name: pattern.pattern_id.clone(),
        reason,
    };
    for n in 0..pattern.k() {
        let needs = row_needs(pattern, n, vocab);
        match needs.submission {
            Some(Submission::Help) if needs.attempt_related => {
                return Err(fail(format!("step {n} requires attempt features on a help submission")))
            }
            Some(Submission::Correct | Submission::Incorrect) if needs.help_related => {
                return Err(fail(format!("step {n} requires help features on an attempt submission")))
            }
            _ => {}
        }
    }
    let len = params.clip_len;
    let windows: Vec<usize> = (0..window_count(len, pattern.k(), params.padding))
        .filter(|&c| {
            pattern
                .positives()
                .iter()
                .all(|&(n, _)| (c + n).checked_sub(params.padding).is_some_and(|t| t < len))
        })
        .collect();
    if windows.is_empty() {
        return Err(fail(format!("pattern is wider than a clip of {len} steps")));
    }
    Ok(windows)
}

fn stamp(sampler: &Sampler, steps: &mut [Vec<u8>], pattern: &Pattern, window: usize, padding: usize, rng: &mut impl Rng) {
    let vocab = sampler.vocab;
    for n in 0..pattern.k() {
        let Some(t) = (window + n).checked_sub(padding).filter(|&t| t < steps.len()) else {
            continue;
        };
        let needs = row_needs(pattern, n, vocab);
        let row = &mut steps[t];
        let help_now = row[vocab.submission_index(Submission::Help)] == 1;
        let target = match needs.submission {
            Some(s) => Some(s),
            None if needs.help_related && !help_now => Some(Submission::Help),
            None if needs.attempt_related && help_now => Some(if rng.gen_bool(0.5) {
                Submission::Correct
            } else {
                Submission::Incorrect
            }),
            None => None,
        };
        if let Some(s) = target {
            let was = help_now;
            sampler.set_submission(row, s);
            if (s == Submission::Help) != was {
                sampler.fill_context(row, s == Submission::Help, rng);
            }
        }
        for j in 0..vocab.d() {
            if pattern.cell(n, j) && !matches!(vocab.role(j), FeatureRole::Submission(_)) {
                row[j] = 1;
            }
        }
    }
}

/// Step templates of the default three-pattern benchmark, by feature name.
pub const BENCHMARK_PATTERNS: [(&str, [&[&str]; 3]); 3] = [
    (
        "planted-1",
        [
            &["help", "searching_bottom_out_hint"],
            &["incorrect"],
            &["incorrect", "similar_answer"],
        ],
    ),
    (
        "planted-2",
        [
            &["incorrect", "fast_attempt"],
            &["incorrect", "sequential_guess"],
            &["incorrect", "fast_attempt"],
        ],
    ),
    (
        "planted-3",
        [
            &["help", "fast_help_request"],
            &["help", "help_skipped_quickly"],
            &["correct", "same_answer_other_context"],
        ],
    ),
];

/// Resolves [`BENCHMARK_PATTERNS`] against `vocab`.
pub fn benchmark_patterns(vocab: &FeatureVocabulary) -> Result<Vec<Pattern>> {
    BENCHMARK_PATTERNS
        .iter()
        .map(|(id, rows)| {
            let mut cells = vec![vec![0u8; vocab.d()]; rows.len()];
            for (n, names) in rows.iter().enumerate() {
                for name in names.iter() {
                    let j = vocab.index_of(name).ok_or_else(|| Error::Pattern {
                        name: id.to_string(),
                        reason: format!("unknown feature `{name}`"),
                    })?;
                    cells[n][j] = 1;
                }
            }
            Pattern::new(*id, cells, vocab)
        })
        .collect()
}

/// Generates a planted-pattern dataset. Planted patterns must satisfy the
/// pattern invariants, be stampable onto a legal step, and fit in a clip.
pub fn synth_generate(vocab: &FeatureVocabulary, planted: &[Pattern], params: &SynthParams) -> Result<Dataset> {
    params.validate()?;
    let windows = planted
        .iter()
        .map(|p| check_stampable(p, vocab, params))
        .collect::<Result<Vec<_>>>()?;
    let sampler = Sampler {
        vocab,
        subs: WeightedIndex::new(params.submission_weights)
            .map_err(|e| Error::Config(format!("submission weights: {e}")))?,
        density: params.context_density,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut clips = Vec::with_capacity(params.n_clips);
    for i in 0..params.n_clips {
        let plant = !planted.is_empty() && rng.gen_bool(params.p_plant);
        let mut steps = sampler.clip(params.clip_len, &mut rng);
        if plant {
            let which = rng.gen_range(0..planted.len());
            let window = windows[which][rng.gen_range(0..windows[which].len())];
            stamp(&sampler, &mut steps, &planted[which], window, params.padding, &mut rng);
        } else {
            let mut draws = 0;
            while planted.iter().any(|p| {
                let probe = Clip {
                    clip_id: String::new(),
                    label: false,
                    steps: steps.clone(),
                };
                discrete_match(p, &probe, params.padding).is_some()
            }) {
                draws += 1;
                if draws >= MAX_NEGATIVE_DRAWS {
                    return Err(Error::Config(
                        "planted patterns match almost every random clip; cannot sample negatives".into(),
                    ));
                }
                steps = sampler.clip(params.clip_len, &mut rng);
            }
        }
        if params.feature_noise > 0.0 {
            for row in steps.iter_mut() {
                let help = row[vocab.submission_index(Submission::Help)] == 1;
                let set = if help { vocab.help_related() } else { vocab.attempt_related() };
                for &j in set {
                    if rng.gen_bool(params.feature_noise) {
                        row[j] ^= 1;
                    }
                }
            }
        }
        let label = plant ^ (params.label_noise > 0.0 && rng.gen_bool(params.label_noise));
        clips.push(Clip {
            clip_id: format!("c{i:06}"),
            label,
            steps,
        });
    }
    Dataset::new(vocab.clone(), clips)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> FeatureVocabulary {
        FeatureVocabulary::default_fixture()
    }

    fn fig1(v: &FeatureVocabulary) -> Pattern {
        let mut cells = vec![vec![0u8; 13]; 3];
        cells[0][10] = 1;
        cells[0][0] = 1;
        cells[1][12] = 1;
        cells[2][5] = 1;
        cells[2][12] = 1;
        Pattern::new("fig1", cells, v).unwrap()
    }

    #[test]
    fn zero_noise_labels_equal_matches() {
        let v = vocab();
        let p = fig1(&v);
        let params = SynthParams {
            n_clips: 1000,
            seed: 1,
            ..SynthParams::default()
        };
        let ds = synth_generate(&v, std::slice::from_ref(&p), &params).unwrap();
        assert!(ds.positives() > 0);
        for clip in ds.clips() {
            assert_eq!(discrete_match(&p, clip, 1).is_some(), clip.label, "{}", clip.clip_id);
        }
    }

    #[test]
    fn empty_request() {
        let v = vocab();
        let params = SynthParams {
            n_clips: 0,
            ..SynthParams::default()
        };
        assert!(synth_generate(&v, &[fig1(&v)], &params).unwrap().is_empty());
    }

    #[test]
    fn label_noise_rate() {
        let v = vocab();
        let p = fig1(&v);
        let params = SynthParams {
            n_clips: 10_000,
            label_noise: 0.1,
            seed: 2,
            ..SynthParams::default()
        };
        let ds = synth_generate(&v, std::slice::from_ref(&p), &params).unwrap();
        let disagree = ds
            .clips()
            .iter()
            .filter(|c| discrete_match(&p, c, 1).is_some() != c.label)
            .count() as f64
            / ds.len() as f64;
        assert!((disagree - 0.10).abs() <= 0.01, "{disagree}");
    }

    #[test]
    fn deterministic_and_legal_under_feature_noise() {
        let v = vocab();
        let params = SynthParams {
            n_clips: 300,
            feature_noise: 0.2,
            seed: 5,
            ..SynthParams::default()
        };
        let a = synth_generate(&v, &[fig1(&v)], &params).unwrap();
        let b = synth_generate(&v, &[fig1(&v)], &params).unwrap();
        assert_eq!(a, b);
        for c in a.clips() {
            c.validate(&v).unwrap();
        }
    }

    #[test]
    fn unstampable_and_oversized_patterns() {
        let v = vocab();
        let mut cells = vec![vec![0u8; 13]; 3];
        cells[0][12] = 1;
        cells[0][0] = 1; // help feature on an incorrect attempt
        let bad = Pattern::new("bad", cells, &v).unwrap();
        assert!(synth_generate(&v, &[bad], &SynthParams::default()).is_err());
        let wide = fig1(&v);
        let short = SynthParams {
            clip_len: 2,
            ..SynthParams::default()
        };
        assert!(synth_generate(&v, &[wide], &short).is_err());
    }
}
