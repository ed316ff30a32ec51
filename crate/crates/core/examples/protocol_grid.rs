//! Scores BM25 under all six gallery/query protocol modes, per stratum.

use chronokey::eval::{evaluate, Bm25Scorer, EvalOptions, ProtocolMode};
use chronokey::lexical::Bm25Params;
use chronokey::querygen::{default_templates, instantiate_queries, QueryConfig};
use chronokey::synth::{generate_corpus, SynthSpec};
use chronokey::Split;

fn main() -> chronokey::Result<()> {
    let (gallery, _, _) = generate_corpus(&SynthSpec::default(), 0)?;
    let queries = instantiate_queries(&gallery, &default_templates(), &QueryConfig::default())?.queries;
    let test: Vec<_> = queries.into_iter().filter(|q| q.split == Some(Split::Test)).collect();
    let scorer = Bm25Scorer { params: Bm25Params::default(), kde: None };
    let report = evaluate(&scorer, &gallery, &test, &ProtocolMode::grid(), EvalOptions::default(), serde_json::Value::Null)?;
    println!("{:<14} {:>7} {:>7} {:>6} {:>6} {:>6}", "mode", "gallery", "queries", "R@1", "R@10", "nDCG");
    for (mode, m) in &report.modes {
        let all = &m.strata["all/all"];
        println!(
            "{mode:<14} {:>7} {:>7} {:>6.3} {:>6.3} {:>6.3}",
            m.counts.gallery, m.counts.queries, all.r1, all.r10, all.ndcg10
        );
    }
    let official = report.modes[&ProtocolMode::OFFICIAL.to_string()].strata.iter();
    println!("\nofficial mode by stratum");
    for (stratum, m) in official {
        println!("  {stratum:<16} n {:>4}  R@1 {:.3}", m.queries, m.r1);
    }
    Ok(())
}
