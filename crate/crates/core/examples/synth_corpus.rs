//! Generates a synthetic corpus and prints its ledger and a few shadowed
//! event/distractor pairs.

use chronokey::synth::{generate_corpus, SynthSpec};

fn main() -> chronokey::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let (gallery, manifest, ledger) = generate_corpus(&SynthSpec::default(), seed)?;
    println!(
        "{} months, {} events, {} no_event, {} distractors",
        ledger.months, ledger.events, ledger.no_event, ledger.distractors
    );
    for s in ledger.shadows.iter().take(4) {
        let e = gallery.get(&s.event).expect("event");
        let d = gallery.get(&s.distractor).expect("distractor");
        println!("{:<16} {}", manifest.render_key(&e.key), e.text);
        println!("{:<16} {}  ({:+})", manifest.render_key(&d.key), d.text, s.offset);
    }
    Ok(())
}
