//! BM25 over character n-grams, then the temporal density re-rank.
//!
//! ```text
//! cargo run --example lexical_search -- 鲁桓公二年三月
//! ```

use chronokey::lexical::{bm25_search, timekde_rerank, Bm25Params, InvertedIndex, TimeKdeParams};
use chronokey::synth::{generate_corpus, SynthSpec};

fn main() -> chronokey::Result<()> {
    let query = std::env::args().nth(1).unwrap_or_else(|| "鲁桓公二年三月".into());
    let (gallery, manifest, _) = generate_corpus(&SynthSpec::default(), 0)?;
    let index = InvertedIndex::from_gallery(&gallery);
    println!("{} docs, avgdl {:.2}", index.num_docs(), index.avgdl());
    let hits = bm25_search(&index, &query, Bm25Params::default(), 100)?;
    let reranked = timekde_rerank(&hits, &gallery, TimeKdeParams::default())?;
    for (label, list) in [("bm25", &hits), ("bm25+timekde", &reranked)] {
        println!("{label}");
        for (id, score) in list.iter().take(5) {
            let r = gallery.get(id).expect("ranked id is in the gallery");
            println!("  {score:>8.4}  {:<16} {}", manifest.render_key(&r.key), r.text);
        }
    }
    Ok(())
}
