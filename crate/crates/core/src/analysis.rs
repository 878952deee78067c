//! Pattern-space analytics and explanations.
//!
//! Distances are substitution-only (Hamming) over the flattened k × d
//! matrices. Expert patterns of 2 to 4 steps are brought to the 3-step
//! window the model uses before comparison. Standard deviations are
//! population deviations.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Clip, FeatureRole, FeatureVocabulary, Submission};
use crate::curator::{bank_predict, Pattern, PatternBank};
use crate::error::{Error, Result};

/// Number of cells in which two equally shaped patterns differ.
pub fn edit_distance(p1: &Pattern, p2: &Pattern) -> Result<usize> {
    if p1.k() != p2.k() || p1.d() != p2.d() {
        return Err(Error::Shape(format!(
            "{} is {}x{}, {} is {}x{}",
            p1.pattern_id,
            p1.k(),
            p1.d(),
            p2.pattern_id,
            p2.k(),
            p2.d()
        )));
    }
    Ok(p1
        .cells()
        .iter()
        .flatten()
        .zip(p2.cells().iter().flatten())
        .filter(|(a, b)| a != b)
        .count())
}

/// A hand-written pattern: per step, the names of required features.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpertPattern {
    pub name: String,
    pub steps: Vec<Vec<String>>,
}

impl ExpertPattern {
    /// Resolves feature names into a `steps × d` cell matrix, enforcing the
    /// per-step rules a clip would satisfy.
    pub fn cells(&self, vocab: &FeatureVocabulary) -> Result<Vec<Vec<u8>>> {
        let fail = |reason: String| Error::Pattern {
            name: self.name.clone(),
            reason,
        };
        if !(2..=4).contains(&self.steps.len()) {
            return Err(fail(format!("{} steps; expert patterns have 2 to 4", self.steps.len())));
        }
        let mut cells = vec![vec![0u8; vocab.d()]; self.steps.len()];
        for (n, names) in self.steps.iter().enumerate() {
            let mut submission = None;
            let (mut help, mut attempt) = (false, false);
            for name in names {
                let j = vocab
                    .index_of(name)
                    .ok_or_else(|| fail(format!("step {n}: unknown feature `{name}`")))?;
                match vocab.role(j) {
                    FeatureRole::Submission(s) => {
                        if submission.replace(s).is_some_and(|prev| prev != s) {
                            return Err(fail(format!("step {n}: multiple submission types")));
                        }
                    }
                    FeatureRole::HelpRelated => help = true,
                    FeatureRole::AttemptRelated => attempt = true,
                }
                cells[n][j] = 1;
            }
            let rule = match submission {
                _ if help && attempt => Some("help-related and attempt-related features in the same step"),
                Some(s) if help && s != Submission::Help => Some("help-related feature without a help submission"),
                Some(Submission::Help) if attempt => Some("attempt-related feature on a help submission"),
                _ => None,
            };
            if let Some(rule) = rule {
                return Err(fail(format!("step {n}: {rule}")));
            }
        }
        Ok(cells)
    }
}

/// Parses the line-delimited expert-pattern format. Blank lines and lines
/// starting with `#` are skipped.
pub fn parse_expert_file(text: &str) -> Result<Vec<ExpertPattern>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let p: ExpertPattern = serde_json::from_str(line).map_err(|e| Error::Malformed {
            line: i + 1,
            reason: e.to_string(),
        })?;
        if !(2..=4).contains(&p.steps.len()) {
            return Err(Error::Malformed {
                line: i + 1,
                reason: format!("pattern `{}` has {} steps; expected 2 to 4", p.name, p.steps.len()),
            });
        }
        out.push(p);
    }
    Ok(out)
}

pub fn write_expert_file(patterns: &[ExpertPattern]) -> String {
    patterns
        .iter()
        .map(|p| serde_json::to_string(p).expect("expert pattern serializes") + "\n")
        .collect()
}

pub fn load_expert_file(path: &Path) -> Result<Vec<ExpertPattern>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_expert_file(&text)
}

/// Brings an expert pattern to `k` = 3 steps: unchanged for 3 steps; a blank
/// leading and a blank trailing variant for 2 steps; the first and last
/// three steps for 4 steps.
pub fn expand_expert(p: &ExpertPattern, vocab: &FeatureVocabulary, k: usize) -> Result<Vec<Pattern>> {
    if k != 3 {
        return Err(Error::Config(format!("expert expansion supports k = 3, got {k}")));
    }
    let cells = p.cells(vocab)?;
    let blank = vec![0u8; vocab.d()];
    let variants: Vec<(String, Vec<Vec<u8>>)> = match cells.len() {
        3 => vec![(p.name.clone(), cells)],
        2 => vec![
            (format!("{}/blank-first", p.name), vec![blank.clone(), cells[0].clone(), cells[1].clone()]),
            (format!("{}/blank-last", p.name), vec![cells[0].clone(), cells[1].clone(), blank]),
        ],
        4 => vec![
            (format!("{}/steps-0-2", p.name), cells[0..3].to_vec()),
            (format!("{}/steps-1-3", p.name), cells[1..4].to_vec()),
        ],
        n => {
            return Err(Error::Pattern {
                name: p.name.clone(),
                reason: format!("unsupported length {n}"),
            })
        }
    };
    variants
        .into_iter()
        .map(|(id, cells)| Pattern::new(id, cells, vocab))
        .collect()
}

/// Mean, population standard deviation and range of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
    pub min: usize,
    pub max: usize,
}

impl Summary {
    pub fn of(values: &[usize]) -> Option<Summary> {
        let n = values.len() as f64;
        let mean = values.iter().sum::<usize>() as f64 / n;
        let var = values.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        Some(Summary {
            mean,
            sd: var.sqrt(),
            min: *values.iter().min()?,
            max: *values.iter().max()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternStats {
    pub positive_counts: Vec<usize>,
    pub positives: Option<Summary>,
    pub pairwise: Option<Summary>,
    /// The two smallest pairwise distances with how often each occurs.
    pub smallest_distances: Vec<(usize, usize)>,
}

impl PatternStats {
    pub fn render(&self) -> String {
        let mut s = String::new();
        let fmt = |o: &Option<Summary>| match o {
            Some(x) => format!("mean {:.2}, sd {:.2} (population), range {}..{}", x.mean, x.sd, x.min, x.max),
            None => "n/a".to_string(),
        };
        let _ = writeln!(s, "patterns: {}", self.positive_counts.len());
        let _ = writeln!(s, "positive cells: {}", fmt(&self.positives));
        let _ = writeln!(s, "pairwise edit distance: {}", fmt(&self.pairwise));
        for (d, count) in &self.smallest_distances {
            let _ = writeln!(s, "  distance {d}: {count} pairs");
        }
        s
    }
}

pub fn pattern_stats(bank: &PatternBank) -> Result<PatternStats> {
    let pats = bank.patterns();
    let positive_counts: Vec<usize> = pats.iter().map(Pattern::positive_count).collect();
    let mut dists = Vec::new();
    for (i, a) in pats.iter().enumerate() {
        for b in &pats[i + 1..] {
            dists.push(edit_distance(a, b)?);
        }
    }
    let mut distinct: Vec<usize> = dists.clone();
    distinct.sort_unstable();
    distinct.dedup();
    let smallest_distances = distinct
        .iter()
        .take(2)
        .map(|&d| (d, dists.iter().filter(|&&x| x == d).count()))
        .collect();
    Ok(PatternStats {
        positives: Summary::of(&positive_counts),
        positive_counts,
        pairwise: Summary::of(&dists),
        smallest_distances,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NearestPair {
    pub learned: String,
    pub expert: String,
    pub distance: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub learned_ids: Vec<String>,
    /// Expanded expert variants, in file order.
    pub expert_ids: Vec<String>,
    /// `matrix[i][e]` is the distance from learned `i` to expert variant `e`.
    pub matrix: Vec<Vec<usize>>,
    pub nearest_expert: Vec<NearestPair>,
    pub nearest_learned: Vec<NearestPair>,
    /// Over each learned pattern's nearest distance.
    pub nearest_summary: Option<Summary>,
    /// Over the full matrix.
    pub all_pairs: Option<Summary>,
    /// Pairs at the smallest distances, ascending (ties by matrix order).
    pub closest_pairs: Vec<NearestPair>,
}

const CLOSEST_PAIRS: usize = 10;

impl Comparison {
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{} learned patterns vs {} expert variants",
            self.learned_ids.len(),
            self.expert_ids.len()
        );
        if let Some(n) = &self.nearest_summary {
            let _ = writeln!(
                s,
                "nearest-expert distance: mean {:.2}, sd {:.2} (population), range {}..{}",
                n.mean, n.sd, n.min, n.max
            );
        }
        if let Some(a) = &self.all_pairs {
            let _ = writeln!(s, "all pairs: mean {:.2}, sd {:.2}", a.mean, a.sd);
        }
        let _ = writeln!(s, "nearest learned pattern per expert:");
        for p in &self.nearest_learned {
            let _ = writeln!(s, "  {:<32} {:<16} {}", p.expert, p.learned, p.distance);
        }
        let _ = writeln!(s, "closest pairs:");
        for p in &self.closest_pairs {
            let _ = writeln!(s, "  {:<16} {:<32} {}", p.learned, p.expert, p.distance);
        }
        s
    }
}

pub fn compare_banks(learned: &PatternBank, experts: &[ExpertPattern]) -> Result<Comparison> {
    let k = learned.patterns().first().map_or(3, Pattern::k);
    let mut expanded = Vec::new();
    for e in experts {
        expanded.extend(expand_expert(e, learned.vocabulary(), k)?);
    }
    let pats = learned.patterns();
    let matrix = pats
        .iter()
        .map(|l| expanded.iter().map(|e| edit_distance(l, e)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    let pair = |i: usize, e: usize| NearestPair {
        learned: pats[i].pattern_id.clone(),
        expert: expanded[e].pattern_id.clone(),
        distance: matrix[i][e],
    };
    let argmin = |it: &mut dyn Iterator<Item = (usize, usize)>| it.min_by_key(|&(_, d)| d).map(|(i, _)| i);
    let nearest_expert: Vec<NearestPair> = (0..pats.len())
        .filter_map(|i| argmin(&mut matrix[i].iter().copied().enumerate()).map(|e| pair(i, e)))
        .collect();
    let nearest_learned: Vec<NearestPair> = (0..expanded.len())
        .filter_map(|e| argmin(&mut (0..pats.len()).map(|i| (i, matrix[i][e]))).map(|i| pair(i, e)))
        .collect();
    let mut all: Vec<(usize, usize, usize)> = Vec::new();
    for (i, row) in matrix.iter().enumerate() {
        for (e, &d) in row.iter().enumerate() {
            all.push((d, i, e));
        }
    }
    all.sort();
    let closest_pairs = all.iter().take(CLOSEST_PAIRS).map(|&(_, i, e)| pair(i, e)).collect();
    let nearest: Vec<usize> = nearest_expert.iter().map(|p| p.distance).collect();
    let flat: Vec<usize> = all.iter().map(|t| t.0).collect();
    Ok(Comparison {
        learned_ids: pats.iter().map(|p| p.pattern_id.clone()).collect(),
        expert_ids: expanded.iter().map(|p| p.pattern_id.clone()).collect(),
        nearest_summary: Summary::of(&nearest),
        all_pairs: Summary::of(&flat),
        matrix,
        nearest_expert,
        nearest_learned,
        closest_pairs,
    })
}

/// One required feature found in the clip.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Requirement {
    /// Row of the pattern.
    pub offset: usize,
    /// Step of the clip (unpadded).
    pub clip_step: usize,
    pub feature: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationBlock {
    pub pattern_id: String,
    pub precision: Option<f64>,
    /// Window start in padded coordinates.
    pub window: usize,
    pub requirements: Vec<Requirement>,
    pub cells: Vec<Vec<u8>>,
    /// Clip rows under the window; `None` where the window covers padding.
    pub clip_rows: Vec<Option<Vec<u8>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub clip_id: String,
    pub positive: bool,
    pub blocks: Vec<ExplanationBlock>,
    pub feature_names: Vec<String>,
}

impl Explanation {
    pub fn matched_pattern_ids(&self) -> Vec<&str> {
        self.blocks.iter().map(|b| b.pattern_id.as_str()).collect()
    }

    pub fn bullet_text(&self) -> String {
        let mut s = String::new();
        if self.blocks.is_empty() {
            let _ = writeln!(s, "Clip {}: no pattern matched, so it is predicted negative.", self.clip_id);
            return s;
        }
        let _ = writeln!(
            s,
            "Clip {} is predicted positive because {} pattern(s) matched:",
            self.clip_id,
            self.blocks.len()
        );
        for b in &self.blocks {
            let prec = b.precision.map_or("n/a".into(), |p| format!("{p:.2}"));
            let _ = writeln!(s, "- {} (precision {prec}) at window {}:", b.pattern_id, b.window);
            for r in &b.requirements {
                let _ = writeln!(s, "  - step {} (pattern row {}): {} present", r.clip_step, r.offset, r.feature);
            }
        }
        s
    }

    /// Per block, one line per feature with a column per window row:
    /// `#` required and present, `.` present but not required, blank absent,
    /// `-` padding.
    pub fn matrix_text(&self) -> String {
        let mut s = String::new();
        if self.blocks.is_empty() {
            let _ = writeln!(s, "Clip {}: no pattern matched.", self.clip_id);
            return s;
        }
        let width = self.feature_names.iter().map(String::len).max().unwrap_or(0);
        for b in &self.blocks {
            let _ = writeln!(s, "{} @ window {}", b.pattern_id, b.window);
            for (j, name) in self.feature_names.iter().enumerate() {
                let mut line = format!("  {name:>width$} |");
                for (n, row) in b.cells.iter().enumerate() {
                    let c = match (&b.clip_rows[n], row[j]) {
                        (None, _) => '-',
                        (Some(r), 1) if r[j] == 1 => '#',
                        (Some(r), _) if r[j] == 1 => '.',
                        _ => ' ',
                    };
                    line.push(' ');
                    line.push(c);
                }
                let _ = writeln!(s, "{line}");
            }
        }
        s
    }

    /// Image-free SVG grid for one block.
    pub fn block_svg(&self, block: usize) -> Option<String> {
        let b = self.blocks.get(block)?;
        let (cell, label) = (18usize, 200usize);
        let w = label + cell * b.cells.len();
        let h = cell * (self.feature_names.len() + 1);
        let mut s = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"monospace\" font-size=\"11\">\n"
        );
        let _ = writeln!(s, "<text x=\"2\" y=\"12\">{}</text>", xml_escape(&b.pattern_id));
        for (j, name) in self.feature_names.iter().enumerate() {
            let y = cell * (j + 1);
            let _ = writeln!(s, "<text x=\"2\" y=\"{}\">{}</text>", y + 13, xml_escape(name));
            for (n, row) in b.cells.iter().enumerate() {
                let present = b.clip_rows[n].as_ref().is_some_and(|r| r[j] == 1);
                let fill = match (row[j] == 1, present) {
                    (true, true) => "#1f77b4",
                    (false, true) => "#c6dbef",
                    _ => "#ffffff",
                };
                let _ = writeln!(
                    s,
                    "<rect x=\"{}\" y=\"{y}\" width=\"{cell}\" height=\"{cell}\" fill=\"{fill}\" stroke=\"#999\"/>",
                    label + n * cell
                );
            }
        }
        s.push_str("</svg>\n");
        Some(s)
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Explains the bank's decision on `clip`: one block per matching pattern,
/// by training precision (highest first, unknown last, then bank order).
pub fn explain(clip: &Clip, bank: &PatternBank, vocab: &FeatureVocabulary) -> Result<Explanation> {
    if bank.vocabulary() != vocab {
        return Err(Error::Vocabulary("bank and clip vocabularies differ".into()));
    }
    clip.validate(vocab)?;
    let prediction = bank_predict(bank, clip);
    let padding = bank.padding();
    let mut blocks: Vec<ExplanationBlock> = prediction
        .matches
        .iter()
        .map(|&(i, window)| {
            let p = &bank.patterns()[i];
            let clip_rows = (0..p.k())
                .map(|n| {
                    (window + n)
                        .checked_sub(padding)
                        .and_then(|t| clip.steps.get(t))
                        .cloned()
                })
                .collect();
            let requirements = p
                .positives()
                .iter()
                .map(|&(n, j)| Requirement {
                    offset: n,
                    clip_step: window + n - padding,
                    feature: vocab.name(j).to_string(),
                })
                .collect();
            ExplanationBlock {
                pattern_id: p.pattern_id.clone(),
                precision: p.precision_train,
                window,
                requirements,
                cells: p.cells().to_vec(),
                clip_rows,
            }
        })
        .collect();
    blocks.sort_by(|a, b| match (a.precision, b.precision) {
        (Some(x), Some(y)) => y.total_cmp(&x),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => std::cmp::Ordering::Equal,
    });
    Ok(Explanation {
        clip_id: clip.clip_id.clone(),
        positive: prediction.positive,
        blocks,
        feature_names: vocab.feature_names().to_vec(),
    })
}

/// The pattern of the introductory example and the two three-incorrect
/// variants with a similar answer between steps, in expert-file form.
pub fn reference_expert_patterns() -> Vec<ExpertPattern> {
    let steps = |rows: &[&[&str]]| {
        rows.iter()
            .map(|r| r.iter().map(|s| s.to_string()).collect())
            .collect()
    };
    vec![
        ExpertPattern {
            name: "help-bottom-out-then-similar-incorrect".into(),
            steps: steps(&[
                &["help", "searching_bottom_out_hint"],
                &["incorrect"],
                &["similar_answer", "incorrect"],
            ]),
        },
        ExpertPattern {
            name: "help-then-incorrects-similar-at-2".into(),
            steps: steps(&[&["help"], &["incorrect"], &["similar_answer", "incorrect"], &["incorrect"]]),
        },
        ExpertPattern {
            name: "help-then-incorrects-similar-at-3".into(),
            steps: steps(&[&["help"], &["incorrect"], &["incorrect"], &["similar_answer", "incorrect"]]),
        },
    ]
}
