//! Trains on the planted benchmark and reports how well curation recovers
//! the planted patterns. Usage: `planted_run [seed]`.

use std::time::Instant;

use gamedet::corpus::{benchmark_patterns, stratified_split, synth_generate, FeatureVocabulary, SynthParams};
use gamedet::curator::{curate, CurationSettings};
use gamedet::evalmetrics::{evaluate, Predictor};
use gamedet::schedule::ConstraintSchedule;
use gamedet::trainer::{train_full, ModelShape, TrainConfig};

fn main() -> gamedet::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let vocab = FeatureVocabulary::default_fixture();
    let planted = benchmark_patterns(&vocab)?;
    let data = synth_generate(&vocab, &planted, &SynthParams { seed, ..SynthParams::default() })?;
    let (train, val, test) = stratified_split(&data, 0.25, 0.15, seed)?;
    let config = TrainConfig {
        schedule: ConstraintSchedule::scaled(50, 5),
        seed,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let out = train_full(&config, &train, &val, ModelShape::default(), |r| {
        if r.epoch % 10 == 9 {
            println!(
                "era {} epoch {:>2} bce {:.4} bin {:.3} min {:.3} sub {:.3} poss {:.3} alpha {:.2} kappa {:?}/{:?}",
                r.era, r.epoch, r.bce, r.terms.bin, r.terms.min, r.terms.sub, r.terms.poss, r.alpha, r.train_kappa, r.val_kappa
            );
        }
    })?;
    println!("trained in {:.1?}; harvested {}", start.elapsed(), out.harvested.len());
    let near: usize = out
        .harvested
        .iter()
        .flat_map(|h| &h.weights)
        .filter(|w| w.min(1.0 - **w) <= 0.05)
        .count();
    let total: usize = out.harvested.iter().map(|h| h.weights.len()).sum();
    println!("near-binary cells {near}/{total}");
    let cur = curate(&out.harvested, 3, &train, &val, &CurationSettings::default())?;
    println!("funnel {:?}", cur.funnel);
    for p in cur.bank.patterns() {
        let hit = planted.iter().find(|q| q.cells() == p.cells()).map(|q| q.pattern_id.clone());
        println!("  {} prec {:?} support {} planted {:?} cells {:?}", p.pattern_id, p.precision_train, p.support, hit, p.positives());
    }
    let report = evaluate(&Predictor::Bank(&cur.bank), &test);
    println!("test kappa {:?}", report.kappa);
    Ok(())
}
