//! Instantiates the built-in temporal query templates over a synthetic gallery
//! and shows one query per family.

use std::collections::BTreeMap;

use chronokey::querygen::{default_templates, instantiate_queries, QueryConfig};
use chronokey::synth::{generate_corpus, SynthSpec};

fn main() -> chronokey::Result<()> {
    let (gallery, _, _) = generate_corpus(&SynthSpec::default(), 0)?;
    let set = instantiate_queries(&gallery, &default_templates(), &QueryConfig::default())?;
    println!("{} queries, {} skipped {:?}", set.queries.len(), set.skipped.skipped, set.skipped.by_reason);
    let mut seen = BTreeMap::new();
    for q in &set.queries {
        seen.entry(format!("{:?}", q.family)).or_insert(q);
    }
    for (family, q) in seen {
        println!("{family:<12} {:<20} span {:>2}  gt {}", q.text, q.span_months, q.gt_ids.len());
    }
    Ok(())
}
