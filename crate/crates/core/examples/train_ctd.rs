//! Trains the full calendar-aware scorer on one synthetic corpus and compares
//! test R@1 against the untrained dense scorer.
//!
//! ```text
//! cargo run --release --example train_ctd -- [ablation] [run_dir]
//! ```

use std::path::PathBuf;

use chronokey::ctd::{CtdParams, ScoreConfig};
use chronokey::embed::encode_all;
use chronokey::eval::{official_r1, DenseScorer};
use chronokey::querygen::{default_templates, instantiate_queries, QueryConfig};
use chronokey::synth::{generate_corpus, SynthSpec};
use chronokey::trainer::{train, TrainConfig, TrainData};
use chronokey::Split;

fn main() -> chronokey::Result<()> {
    env_logger::init();
    let mut args = std::env::args().skip(1);
    let ablation = args.next().unwrap_or_else(|| "full".into());
    let run_dir = args.next().map(PathBuf::from);
    if let Some(dir) = &run_dir {
        std::fs::create_dir_all(dir).expect("run dir");
    }

    let (gallery, _, _) = generate_corpus(&SynthSpec::default(), 0)?;
    let queries = instantiate_queries(&gallery, &default_templates(), &QueryConfig::default())?.queries;
    let test: Vec<_> = queries.iter().filter(|q| q.split == Some(Split::Test)).cloned().collect();
    let records = encode_all(gallery.records().iter().map(|r| (r.id.as_str(), r.text.as_str())), 64, 0)?;
    let qemb = encode_all(queries.iter().map(|q| (q.id.as_str(), q.text.as_str())), 64, 0)?;

    let config = TrainConfig::ablation(&ablation)?;
    let data = TrainData { gallery: &gallery, queries: &queries, record_emb: &records, query_emb: &qemb };
    let out = train(&config, &data, run_dir.as_deref())?;
    for e in &out.curve {
        println!("epoch {:>2}  loss {:.4}  val R@1 {:.4}", e.epoch, e.loss, e.val_r1);
    }
    let trained = DenseScorer { params: out.best.params, score: config.score(), records: &records, queries: &qemb };
    let fresh = DenseScorer {
        params: CtdParams::for_manifest(64, gallery.manifest(), config.seed)?,
        score: ScoreConfig::SEM,
        records: &records,
        queries: &qemb,
    };
    println!("best epoch {}", out.best_epoch);
    println!("test R@1 untrained sem {:.4}", official_r1(&fresh, &gallery, &test)?);
    println!("test R@1 {ablation:<13} {:.4}", official_r1(&trained, &gallery, &test)?);
    Ok(())
}
