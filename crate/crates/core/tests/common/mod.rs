//! Generators and brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;

use gamedet::corpus::{Clip, FeatureVocabulary, Submission};
use gamedet::curator::Pattern;
use rand::Rng;

/// A random legal step: one submission, context features only from the
/// matching set.
pub fn random_step(vocab: &FeatureVocabulary, density: f64, rng: &mut impl Rng) -> Vec<u8> {
    let mut row = vec![0u8; vocab.d()];
    let kind = Submission::ALL[rng.gen_range(0..3)];
    row[vocab.submission_index(kind)] = 1;
    let set = if kind == Submission::Help {
        vocab.help_related()
    } else {
        vocab.attempt_related()
    };
    for &j in set {
        if rng.gen_bool(density) {
            row[j] = 1;
        }
    }
    row
}

pub fn random_clip(vocab: &FeatureVocabulary, len: usize, density: f64, id: String, rng: &mut impl Rng) -> Clip {
    Clip {
        clip_id: id,
        label: rng.gen_bool(0.5),
        steps: (0..len).map(|_| random_step(vocab, density, rng)).collect(),
    }
}

/// A random pattern row that a legal step can satisfy.
pub fn random_pattern_row(vocab: &FeatureVocabulary, density: f64, rng: &mut impl Rng) -> Vec<u8> {
    let mut row = vec![0u8; vocab.d()];
    let help = rng.gen_bool(0.5);
    if rng.gen_bool(0.6) {
        let kind = if help {
            Submission::Help
        } else if rng.gen_bool(0.5) {
            Submission::Correct
        } else {
            Submission::Incorrect
        };
        row[vocab.submission_index(kind)] = 1;
    }
    let set = if help { vocab.help_related() } else { vocab.attempt_related() };
    for &j in set {
        if rng.gen_bool(density) {
            row[j] = 1;
        }
    }
    row
}

pub fn random_legal_pattern(vocab: &FeatureVocabulary, k: usize, density: f64, id: String, rng: &mut impl Rng) -> Pattern {
    loop {
        let cells: Vec<Vec<u8>> = (0..k).map(|_| random_pattern_row(vocab, density, rng)).collect();
        if let Ok(p) = Pattern::new(id.clone(), cells, vocab) {
            return p;
        }
    }
}

/// Absolute (padded row, feature) cells of `p` placed at window `c`.
pub fn placed(p: &Pattern, c: usize) -> BTreeSet<(usize, usize)> {
    let mut out = BTreeSet::new();
    for (n, row) in p.cells().iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if v == 1 {
                out.insert((c + n, j));
            }
        }
    }
    out
}

/// Brute-force discrete match: some window where every required cell is 1
/// in the zero-padded clip.
pub fn brute_match(p: &Pattern, clip: &Clip, padding: usize) -> bool {
    let rows = clip.len() + 2 * padding;
    if p.k() > rows {
        return false;
    }
    (0..=rows - p.k()).any(|c| {
        placed(p, c).iter().all(|&(r, j)| {
            r >= padding && r - padding < clip.len() && clip.steps[r - padding][j] == 1
        })
    })
}

/// Placement-set subsumption: for every window where all of `specific`'s
/// cells land on real steps, some window of `general` has its cells inside
/// that placement.
pub fn brute_subsumes(general: &Pattern, specific: &Pattern, clip_len: usize, padding: usize, allow_shift: bool) -> bool {
    if general.k() != specific.k() || general.d() != specific.d() {
        return false;
    }
    let rows = clip_len + 2 * padding;
    let windows = rows + 1 - specific.k();
    let real = |r: usize| r >= padding && r < padding + clip_len;
    (0..windows)
        .filter(|&c| placed(specific, c).iter().all(|&(r, _)| real(r)))
        .all(|c| {
            let target = placed(specific, c);
            let candidates: Vec<usize> = if allow_shift { (0..windows).collect() } else { vec![c] };
            candidates.into_iter().any(|c2| placed(general, c2).is_subset(&target))
        })
}

/// Cohen's kappa from raw predictions, written out longhand.
pub fn brute_kappa(pred: &[bool], labels: &[bool]) -> Option<f64> {
    let n = pred.len() as f64;
    if n == 0.0 {
        return None;
    }
    let agree = pred.iter().zip(labels).filter(|(a, b)| a == b).count() as f64 / n;
    let pp = pred.iter().filter(|&&x| x).count() as f64 / n;
    let lp = labels.iter().filter(|&&x| x).count() as f64 / n;
    let chance = pp * lp + (1.0 - pp) * (1.0 - lp);
    if chance == 1.0 {
        None
    } else {
        Some((agree - chance) / (1.0 - chance))
    }
}

/// A vocabulary with `help` help-related and `attempt` attempt-related
/// features followed by the three submissions.
pub fn small_vocab(help: usize, attempt: usize) -> FeatureVocabulary {
    let d = help + attempt + 3;
    let names = (0..d).map(|i| format!("f{i}")).collect();
    FeatureVocabulary::new(
        names,
        [d - 3, d - 2, d - 1],
        (0..help).collect(),
        (help..help + attempt).collect(),
    )
    .unwrap()
}
