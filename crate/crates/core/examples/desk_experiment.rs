//! Synthetic corpus -> queries -> hash embeddings -> lexical baselines, the
//! untrained dense scorer and the five training ablations, scored on the
//! test split under the official protocol. Prints per-seed R@1 and medians.
//!
//! ```text
//! cargo run --release --example desk_experiment -- [seed...]
//! ```

use std::collections::BTreeMap;
use std::time::Instant;

use chronokey::ctd::{CtdParams, ScoreConfig};
use chronokey::embed::encode_all;
use chronokey::eval::{official_r1, Bm25Scorer, DenseScorer};
use chronokey::lexical::{Bm25Params, TimeKdeParams};
use chronokey::querygen::{default_templates, instantiate_queries, QueryConfig};
use chronokey::synth::{generate_corpus, SynthSpec};
use chronokey::trainer::{train, TrainConfig, TrainData};
use chronokey::Split;

const DIM: usize = 64;

fn main() -> chronokey::Result<()> {
    env_logger::init();
    let seeds: Vec<u64> = std::env::args().skip(1).filter_map(|s| s.parse().ok()).collect();
    let seeds = if seeds.is_empty() { vec![0, 1, 2] } else { seeds };
    let spec = SynthSpec::default();
    let t0 = Instant::now();
    let mut table: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for &seed in &seeds {
        let (gallery, _, ledger) = generate_corpus(&spec, seed)?;
        let queries = instantiate_queries(&gallery, &default_templates(), &QueryConfig::default())?.queries;
        let test: Vec<_> = queries.iter().filter(|q| q.split == Some(Split::Test)).cloned().collect();
        println!(
            "seed {seed}: {} records ({} events, {} distractors), {} queries ({} test)",
            gallery.len(),
            ledger.events,
            ledger.distractors,
            queries.len(),
            test.len()
        );
        let mut record = |name: &'static str, r1: f64, note: String| {
            println!("  {name:<14} R@1 {r1:.4}  {note}");
            table.entry(name).or_default().push(r1);
        };

        let bm25 = Bm25Scorer { params: Bm25Params::default(), kde: None };
        record("bm25", official_r1(&bm25, &gallery, &test)?, String::new());
        let kde = Bm25Scorer { params: Bm25Params::default(), kde: Some(TimeKdeParams::default()) };
        record("bm25+timekde", official_r1(&kde, &gallery, &test)?, String::new());

        let records = encode_all(gallery.records().iter().map(|r| (r.id.as_str(), r.text.as_str())), DIM, 0)?;
        let qemb = encode_all(queries.iter().map(|q| (q.id.as_str(), q.text.as_str())), DIM, 0)?;
        let untrained = DenseScorer {
            params: CtdParams::for_manifest(DIM, gallery.manifest(), seed)?,
            score: ScoreConfig::SEM,
            records: &records,
            queries: &qemb,
        };
        record("sem (untrained)", official_r1(&untrained, &gallery, &test)?, String::new());

        let data = TrainData { gallery: &gallery, queries: &queries, record_emb: &records, query_emb: &qemb };
        for name in ["ft", "multi", "bias", "ctx", "full"] {
            let t = Instant::now();
            let config = TrainConfig { seed, ..TrainConfig::ablation(name)? };
            let out = train(&config, &data, None)?;
            let scorer = DenseScorer { params: out.best.params, score: config.score(), records: &records, queries: &qemb };
            let note = format!("best epoch {}, {:.1}s", out.best_epoch, t.elapsed().as_secs_f64());
            record(name, official_r1(&scorer, &gallery, &test)?, note);
        }
    }
    println!("\nmedian R@1 over seeds {seeds:?}");
    for (name, mut v) in table {
        v.sort_by(f64::total_cmp);
        println!("  {name:<14} {:.4}", v[v.len() / 2]);
    }
    println!("total {:.1}s", t0.elapsed().as_secs_f64());
    Ok(())
}
