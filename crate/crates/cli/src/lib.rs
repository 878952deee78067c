//! Subcommands of the `gamedet` binary. Each one reads the run config and
//! previous artifacts from the output directory and writes its own, every
//! file stamped with the config hash.

use std::fs;
use std::path::{Path, PathBuf};

use gamedet::analysis::{compare_banks, explain, load_expert_file, pattern_stats};
use gamedet::config::RunConfig;
use gamedet::corpus::{benchmark_patterns, load_dataset, stratified_split, synth_generate, write_dataset, Dataset, FeatureVocabulary};
use gamedet::curator::{curate, HarvestedFilter, PatternBank};
use gamedet::evalmetrics::{evaluate, MetricsReport, MetricsTable, Predictor};
use gamedet::netcore::ModelState;
use gamedet::trainer::{train_full, EraSnapshot};
use serde_json::{json, Value};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Engine(#[from] gamedet::Error),
}

impl CliError {
    /// 0 success, 1 usage or configuration, 2 data, 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Engine(gamedet::Error::Config(_)) => 1,
            CliError::Engine(gamedet::Error::NonFinite { .. }) => 3,
            CliError::Engine(_) => 2,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Artifact locations inside the output directory.
pub mod layout {
    pub const CLIPS: &str = "clips.jsonl";
    pub const PLANTED: &str = "planted.bank.json";
    pub const SPLITS: &str = "splits";
    pub const SNAPSHOTS: &str = "snapshots";
    pub const HARVESTED: &str = "harvested.json";
    pub const TRAIN_LOG: &str = "train_log.jsonl";
    pub const MODEL: &str = "model.json";
    pub const MANIFEST: &str = "manifest.json";
    pub const BANK: &str = "bank.json";
    pub const CURVE: &str = "curve.json";
    pub const CURATION: &str = "curation.json";
    pub const METRICS: &str = "metrics.json";
    pub const COMPARISON: &str = "comparison.json";
    pub const STATS: &str = "stats.json";
    pub const EXPLANATIONS: &str = "explanations";
}

/// A loaded config with its hash and output directory.
#[derive(Debug, Clone)]
pub struct Context {
    pub config: RunConfig,
    pub hash: String,
    pub out: PathBuf,
}

impl Context {
    /// Applies flag overrides before hashing, so the hash describes the run
    /// that actually happens.
    pub fn new(mut config: RunConfig, seed: Option<u64>, out: Option<PathBuf>) -> CliResult<Self> {
        if let Some(s) = seed {
            config.seed = s;
        }
        if let Some(o) = out {
            config.out_dir = o;
        }
        config.validate()?;
        Ok(Context {
            hash: config.hash(),
            out: config.out_dir.clone(),
            config,
        })
    }

    pub fn from_file(path: Option<&Path>, seed: Option<u64>, out: Option<PathBuf>) -> CliResult<Self> {
        let config = match path {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
                RunConfig::from_toml(&text)?
            }
            None => RunConfig::default(),
        };
        Context::new(config, seed, out)
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn split_path(&self, name: &str) -> PathBuf {
        self.out.join(layout::SPLITS).join(format!("{name}.jsonl"))
    }

    fn ensure_dir(&self, dir: &Path) -> CliResult<()> {
        fs::create_dir_all(dir).map_err(|e| gamedet::Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
        Ok(())
    }

    fn write(&self, path: &Path, text: &str) -> CliResult<()> {
        if let Some(parent) = path.parent() {
            self.ensure_dir(parent)?;
        }
        fs::write(path, text).map_err(|e| gamedet::Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Ok(())
    }

    fn write_json(&self, path: &Path, mut value: Value) -> CliResult<()> {
        if let Value::Object(map) = &mut value {
            map.insert("config_hash".into(), Value::String(self.hash.clone()));
        }
        let text = serde_json::to_string_pretty(&value).map_err(gamedet::Error::from)?;
        self.write(path, &(text + "\n"))
    }

    fn vocabulary(&self) -> FeatureVocabulary {
        FeatureVocabulary::default_fixture()
    }

    fn load_splits(&self) -> CliResult<(Dataset, Dataset, Dataset)> {
        let load = |name: &str| -> CliResult<Dataset> {
            let p = self.split_path(name);
            if !p.exists() {
                return Err(CliError::Engine(gamedet::Error::Malformed {
                    line: 0,
                    reason: format!("{} is missing; run `train` first", p.display()),
                }));
            }
            Ok(load_dataset(&p, None)?)
        };
        Ok((load("train")?, load("val")?, load("test")?))
    }

    fn default_bank(&self, bank: Option<&Path>) -> CliResult<PatternBank> {
        let p = bank.map_or_else(|| self.path(layout::BANK), Path::to_path_buf);
        Ok(PatternBank::load(&p)?)
    }
}

/// Writes a synthetic clip file and the planted patterns as a bank.
pub fn cmd_synth(ctx: &Context) -> CliResult<String> {
    let vocab = ctx.vocabulary();
    let planted_bank = match &ctx.config.data.planted_bank {
        Some(p) => PatternBank::load(p)?,
        None => PatternBank::new(vocab.clone(), benchmark_patterns(&vocab)?, ctx.config.model.padding)?,
    };
    let data = synth_generate(planted_bank.vocabulary(), planted_bank.patterns(), &ctx.config.synth_params())?
        .with_config_hash(ctx.hash.clone());
    ctx.ensure_dir(&ctx.out)?;
    write_dataset(&ctx.path(layout::CLIPS), &data)?;
    planted_bank
        .with_config_hash(ctx.hash.clone())
        .save(&ctx.path(layout::PLANTED))?;
    Ok(format!(
        "wrote {} clips ({} positive, rate {:.4}) to {}\nconfig {}\n",
        data.len(),
        data.positives(),
        data.positive_rate(),
        ctx.path(layout::CLIPS).display(),
        ctx.hash
    ))
}

/// Splits the clips, trains every era, and writes snapshots, the harvested
/// filters, the training log, the final model and a run manifest.
pub fn cmd_train(ctx: &Context) -> CliResult<String> {
    let clips = ctx.config.data.clips.clone().unwrap_or_else(|| ctx.path(layout::CLIPS));
    if !clips.exists() {
        return Err(CliError::Engine(gamedet::Error::Malformed {
            line: 0,
            reason: format!("{} is missing; run `synth` first or set data.clips", clips.display()),
        }));
    }
    let data = load_dataset(&clips, None)?;
    let d = &ctx.config.data;
    let (train, val, test) = stratified_split(&data, d.test_fraction, d.val_fraction, ctx.config.seed)?;
    for (name, set) in [("train", &train), ("val", &val), ("test", &test)] {
        let p = ctx.split_path(name);
        ctx.ensure_dir(p.parent().expect("split files live in a directory"))?;
        write_dataset(&p, &set.clone().with_config_hash(ctx.hash.clone()))?;
    }

    let mut log_text = String::new();
    let outcome = train_full(&ctx.config.train_config(), &train, &val, ctx.config.model, |r| {
        let mut v = serde_json::to_value(r).expect("epoch record serializes");
        v["config_hash"] = Value::String(ctx.hash.clone());
        log_text.push_str(&v.to_string());
        log_text.push('\n');
    })?;
    ctx.write(&ctx.path(layout::TRAIN_LOG), &log_text)?;

    let snap_dir = ctx.path(layout::SNAPSHOTS);
    if snap_dir.exists() {
        for entry in fs::read_dir(&snap_dir).map_err(|e| gamedet::Error::Io {
            path: snap_dir.clone(),
            source: e,
        })? {
            let p = entry.map_err(|e| gamedet::Error::Io {
                path: snap_dir.clone(),
                source: e,
            })?;
            if p.path().extension().is_some_and(|x| x == "json") {
                let _ = fs::remove_file(p.path());
            }
        }
    }
    ctx.ensure_dir(&snap_dir)?;
    for snap in &outcome.snapshots {
        let mut s = snap.clone();
        s.config_hash = Some(ctx.hash.clone());
        s.save(&snap_dir.join(format!("era-{:04}.json", snap.era)))?;
    }
    ctx.write_json(&ctx.path(layout::HARVESTED), json!({ "filters": outcome.harvested }))?;
    outcome.state.save(&ctx.path(layout::MODEL), Some(&ctx.hash))?;
    ctx.write_json(
        &ctx.path(layout::MANIFEST),
        json!({
            "config": ctx.config,
            "clips": clips,
            "split_sizes": [train.len(), val.len(), test.len()],
            "eras": outcome.snapshots.len(),
            "harvested": outcome.harvested.len(),
        }),
    )?;
    let last = outcome.log.last();
    Ok(format!(
        "trained {} eras x {} epochs on {} clips; harvested {} filters\nfinal bce {:.4}, val kappa {}\nconfig {}\n",
        outcome.snapshots.len(),
        ctx.config.schedule.epochs_per_era,
        train.len(),
        outcome.harvested.len(),
        last.map_or(f64::NAN, |r| r.bce),
        last.and_then(|r| r.val_kappa).map_or("n/a".into(), |k| format!("{k:.3}")),
        ctx.hash
    ))
}

/// Loads every era snapshot in `dir`, ordered by era.
pub fn load_snapshots(dir: &Path) -> CliResult<Vec<EraSnapshot>> {
    let entries = fs::read_dir(dir).map_err(|e| gamedet::Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let mut snaps = paths
        .iter()
        .map(|p| EraSnapshot::load(p))
        .collect::<gamedet::Result<Vec<_>>>()?;
    if snaps.is_empty() {
        return Err(CliError::Engine(gamedet::Error::Malformed {
            line: 0,
            reason: format!("no era snapshots in {}", dir.display()),
        }));
    }
    snaps.sort_by_key(|s| s.era);
    Ok(snaps)
}

/// Harvests from the era snapshots and runs the curation funnel.
pub fn cmd_curate(ctx: &Context, snapshots: Option<&Path>) -> CliResult<String> {
    let dir = snapshots.map_or_else(|| ctx.path(layout::SNAPSHOTS), Path::to_path_buf);
    let snaps = load_snapshots(&dir)?;
    let threshold = ctx.config.train.harvest_precision_threshold;
    let harvested: Vec<HarvestedFilter> = snaps.iter().flat_map(|s| s.harvest(threshold)).collect();
    let k = snaps[0].filters.shape.k;
    let (train, val, _) = ctx.load_splits()?;
    let out = curate(&harvested, k, &train, &val, &ctx.config.curation_settings())?;
    out.bank.clone().with_config_hash(ctx.hash.clone()).save(&ctx.path(layout::BANK))?;
    ctx.write_json(
        &ctx.path(layout::CURVE),
        json!({
            "ranking": out.curve.sorted.iter().map(|p| &p.pattern_id).collect::<Vec<_>>(),
            "points": out.curve.points,
        }),
    )?;
    let rejections: Vec<Value> = out
        .rejections
        .iter()
        .map(|(id, r)| json!({ "filter": id, "reason": r.to_string() }))
        .collect();
    ctx.write_json(
        &ctx.path(layout::CURATION),
        json!({ "funnel": out.funnel, "rejections": rejections }),
    )?;
    let f = out.funnel;
    Ok(format!(
        "harvested {} -> binarized {} -> unique {} -> non-redundant {} -> selected {}\nbank written to {}\nconfig {}\n",
        f.harvested,
        f.binarized,
        f.unique,
        f.non_redundant,
        f.selected,
        ctx.path(layout::BANK).display(),
        ctx.hash
    ))
}

/// What to evaluate.
#[derive(Debug, Clone)]
pub enum EvalTarget {
    Bank(Option<PathBuf>),
    Model(PathBuf),
}

/// Metrics table over one dataset, or over the train/val/test splits.
pub fn cmd_eval(ctx: &Context, target: &EvalTarget, dataset: Option<&Path>) -> CliResult<String> {
    let sets: Vec<(String, Dataset)> = match dataset {
        Some(p) => vec![(
            p.file_stem().map_or("data".into(), |s| s.to_string_lossy().into_owned()),
            load_dataset(p, None)?,
        )],
        None => {
            let (a, b, c) = ctx.load_splits()?;
            vec![("Train".into(), a), ("Val".into(), b), ("Test".into(), c)]
        }
    };
    let bank;
    let model;
    let predictor = match target {
        EvalTarget::Bank(p) => {
            bank = ctx.default_bank(p.as_deref())?;
            Predictor::Bank(&bank)
        }
        EvalTarget::Model(p) => {
            model = ModelState::load(p)?;
            Predictor::Model(&model)
        }
    };
    let rows: Vec<(String, MetricsReport)> = sets
        .iter()
        .map(|(name, d)| (name.clone(), evaluate(&predictor, d)))
        .collect();
    ctx.write_json(
        &ctx.path(layout::METRICS),
        json!({ "sets": rows.iter().map(|(n, r)| json!({ "name": n, "metrics": r })).collect::<Vec<_>>() }),
    )?;
    Ok(format!("{}config {}\n", MetricsTable(&rows), ctx.hash))
}

/// Learned bank against an expert-pattern file, plus bank statistics.
pub fn cmd_compare(ctx: &Context, bank: Option<&Path>, experts: &Path) -> CliResult<String> {
    let bank = ctx.default_bank(bank)?;
    let experts = load_expert_file(experts)?;
    let cmp = compare_banks(&bank, &experts)?;
    let stats = pattern_stats(&bank)?;
    ctx.write_json(&ctx.path(layout::COMPARISON), serde_json::to_value(&cmp).map_err(gamedet::Error::from)?)?;
    ctx.write_json(&ctx.path(layout::STATS), serde_json::to_value(&stats).map_err(gamedet::Error::from)?)?;
    Ok(format!("{}\n{}config {}\n", stats.render(), cmp.render(), ctx.hash))
}

/// Explains the bank's decision on one clip; writes text, JSON and, when
/// asked, one SVG per matching pattern.
pub fn cmd_explain(ctx: &Context, bank: Option<&Path>, clips: &Path, clip_id: &str, svg: bool) -> CliResult<String> {
    let bank = ctx.default_bank(bank)?;
    let data = load_dataset(clips, Some(bank.vocabulary()))?;
    let clip = data
        .get(clip_id)
        .ok_or_else(|| CliError::Usage(format!("no clip `{clip_id}` in {}", clips.display())))?;
    let e = explain(clip, &bank, bank.vocabulary())?;
    let dir = ctx.path(layout::EXPLANATIONS);
    let safe: String = clip_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    let text = format!("# config {}\n{}\n{}", ctx.hash, e.bullet_text(), e.matrix_text());
    ctx.write(&dir.join(format!("{safe}.txt")), &text)?;
    ctx.write_json(&dir.join(format!("{safe}.json")), serde_json::to_value(&e).map_err(gamedet::Error::from)?)?;
    if svg {
        for i in 0..e.blocks.len() {
            let body = e.block_svg(i).expect("block index in range");
            let body = body.replacen('\n', &format!("\n<!-- config {} -->\n", ctx.hash), 1);
            ctx.write(&dir.join(format!("{safe}-{i}.svg")), &body)?;
        }
    }
    Ok(format!("{}\n{}", e.bullet_text(), e.matrix_text()))
}

/// synth, train, curate and eval in sequence.
pub fn cmd_pipeline(ctx: &Context) -> CliResult<String> {
    let mut out = String::new();
    if ctx.config.data.clips.is_none() {
        out += &cmd_synth(ctx)?;
    }
    out += &cmd_train(ctx)?;
    out += &cmd_curate(ctx, None)?;
    out += &cmd_eval(ctx, &EvalTarget::Bank(None), None)?;
    Ok(out)
}
