//! Seeded synthetic annal corpora with chrono-near commentary distractors.
//!
//! Event texts are `key phrase + topical tokens`. Topical tokens come from a
//! private alphabet (CJK Extension A) so they never collide with calendar
//! characters; each event draws most tokens from one of a few topics. A
//! distractor is filed one month before or after an event, carries its own
//! month's key phrase behind a commentary marker, and paraphrases the event's
//! topical tokens.

use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::calendar::{CalendarManifest, TimeKey};
use crate::corpus::{Gallery, Record, RecordType, SplitRatios};
use crate::error::{Error, Result};

/// Dukes of Lu in reign order.
pub const LU_GONGS: [&str; 12] = [
    "隐公", "桓公", "庄公", "闵公", "僖公", "文公", "宣公", "成公", "襄公", "昭公", "定公", "哀公",
];

const ALPHABET_START: u32 = 0x3400;
const ALPHABET_LEN: u32 = 256;
const COMMENTARY_MARKER: &str = "传曰";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub gongs: u32,
    pub years_per_gong: u32,
    pub months_per_year: u32,
    /// Probability that a month holds an event.
    pub event_rate: f64,
    /// Probability that an event is shadowed by an adjacent-month distractor.
    pub distractor_rate: f64,
    /// Probability that a paraphrased token is replaced by a random one.
    pub paraphrase_noise: f64,
    /// Seed of the topic vocabularies (independent of the corpus seed).
    pub vocab_seed: u64,
    pub topics: usize,
    pub topic_words: usize,
    /// Inclusive range of topical tokens per event.
    pub text_len: (usize, usize),
    pub ratios: SplitRatios,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            gongs: 4,
            years_per_gong: 8,
            months_per_year: 12,
            event_rate: 0.6,
            distractor_rate: 0.5,
            paraphrase_noise: 0.3,
            vocab_seed: 0,
            topics: 12,
            topic_words: 10,
            text_len: (4, 8),
            ratios: SplitRatios::default(),
        }
    }
}

impl SynthSpec {
    pub fn check(&self) -> Result<()> {
        if self.gongs < 1 || self.years_per_gong < 1 || self.topics < 1 || self.topic_words < 1 {
            return Err(Error::Config("synthetic corpus counts must be at least 1".into()));
        }
        if !(12..=13).contains(&self.months_per_year) {
            return Err(Error::Config(format!(
                "months_per_year must be 12 or 13, got {}",
                self.months_per_year
            )));
        }
        for (name, v) in [
            ("event_rate", self.event_rate),
            ("distractor_rate", self.distractor_rate),
            ("paraphrase_noise", self.paraphrase_noise),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} = {v} outside [0, 1]")));
            }
        }
        if self.text_len.0 < 1 || self.text_len.0 > self.text_len.1 {
            return Err(Error::Config(format!("bad text length range {:?}", self.text_len)));
        }
        self.ratios.check()
    }

    pub fn manifest(&self) -> Result<CalendarManifest> {
        let gongs = (0..self.gongs as usize)
            .map(|i| match LU_GONGS.get(i) {
                Some(name) => name.to_string(),
                None => format!("后{}公", crate::calendar::render_numeral(i as u32 + 1)),
            })
            .collect();
        CalendarManifest::with_reigns(gongs, vec![self.years_per_gong; self.gongs as usize], self.months_per_year)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shadow {
    pub distractor: String,
    pub event: String,
    /// Distractor ordinal minus event ordinal (±1).
    pub offset: i64,
}

/// What the generator did, for tests and provenance of the synthetic data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthLedger {
    pub seed: u64,
    pub spec: SynthSpec,
    pub months: usize,
    pub events: usize,
    pub no_event: usize,
    pub distractors: usize,
    pub shadows: Vec<Shadow>,
    pub split_warnings: Vec<String>,
}

impl SynthLedger {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        std::fs::write(path, s).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }
}

fn token(i: u32) -> char {
    char::from_u32(ALPHABET_START + i).expect("CJK Extension A code point")
}

/// Generates a corpus; pure function of `(spec, seed)`.
pub fn generate_corpus(spec: &SynthSpec, seed: u64) -> Result<(Gallery, CalendarManifest, SynthLedger)> {
    spec.check()?;
    let manifest = spec.manifest()?;
    let mut vocab_rng = ChaCha8Rng::seed_from_u64(spec.vocab_seed);
    let topics: Vec<Vec<char>> = (0..spec.topics)
        .map(|_| {
            (0..spec.topic_words)
                .map(|_| token(vocab_rng.random_range(0..ALPHABET_LEN)))
                .collect()
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let months = manifest.calendar_months();
    let mut records = Vec::new();
    let mut events: Vec<(usize, Vec<char>)> = Vec::new();
    for (pos, key) in months.iter().enumerate() {
        if !rng.random_bool(spec.event_rate) {
            continue;
        }
        let topic = &topics[rng.random_range(0..topics.len())];
        let n = rng.random_range(spec.text_len.0..=spec.text_len.1);
        let words: Vec<char> = (0..n)
            .map(|_| {
                if rng.random_bool(0.75) {
                    *topic.choose(&mut rng).expect("topic is non-empty")
                } else {
                    token(rng.random_range(0..ALPHABET_LEN))
                }
            })
            .collect();
        let text: String = format!("{}，{}。", manifest.render_key(key), words.iter().collect::<String>());
        records.push(Record {
            id: format!("ev-{}-{}-{}", key.gong, key.year, key.month),
            text,
            key: *key,
            rtype: RecordType::Event,
            source: "synthetic-annals".into(),
            split: None,
        });
        events.push((pos, words));
    }
    if events.is_empty() {
        return Err(Error::Config("specification produced no events".into()));
    }

    let mut shadows = Vec::new();
    let mut per_month = vec![0usize; months.len()];
    for (pos, words) in &events {
        if !rng.random_bool(spec.distractor_rate) {
            continue;
        }
        let event_key = months[*pos];
        let event_ord = manifest.key_to_ordinal(&event_key)? as i64;
        let candidates: Vec<(usize, TimeKey)> = [pos.checked_sub(1), Some(pos + 1)]
            .into_iter()
            .flatten()
            .filter_map(|p| months.get(p).map(|k| (p, *k)))
            .filter(|(_, k)| (manifest.key_to_ordinal(k).expect("calendar month") as i64 - event_ord).abs() == 1)
            .collect();
        let Some(&(p, key)) = candidates.choose(&mut rng) else {
            continue;
        };
        let paraphrase: String = words
            .iter()
            .map(|&w| {
                if rng.random_bool(spec.paraphrase_noise) {
                    token(rng.random_range(0..ALPHABET_LEN))
                } else {
                    w
                }
            })
            .collect();
        per_month[p] += 1;
        let id = format!("neg-{}-{}-{}-{}", key.gong, key.year, key.month, per_month[p]);
        records.push(Record {
            id: id.clone(),
            text: format!("{COMMENTARY_MARKER}{}，{paraphrase}。", manifest.render_key(&key)),
            key,
            rtype: RecordType::NegComment,
            source: "synthetic-commentary".into(),
            split: None,
        });
        shadows.push(Shadow {
            distractor: id,
            event: format!("ev-{}-{}-{}", event_key.gong, event_key.year, event_key.month),
            offset: manifest.key_to_ordinal(&key)? as i64 - event_ord,
        });
    }

    let gallery = Gallery::new(manifest.clone(), records)?;
    let (gallery, no_event) = gallery.synthesize_no_event(&manifest.full_timeline())?;
    let (gallery, split_warnings) = gallery.assign_splits(spec.ratios, seed)?;
    let ledger = SynthLedger {
        seed,
        spec: spec.clone(),
        months: months.len(),
        events: events.len(),
        no_event,
        distractors: shadows.len(),
        shadows,
        split_warnings,
    };
    Ok((gallery, manifest, ledger))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_scale_corpus_shape() {
        let spec = SynthSpec::default();
        let (g, m, ledger) = generate_corpus(&spec, 1).unwrap();
        assert_eq!(ledger.months, 384);
        assert_eq!(m.calendar_months().len(), 384);
        let count = |t: RecordType| g.records().iter().filter(|r| r.rtype == t).count();
        assert_eq!(count(RecordType::Event), ledger.events);
        assert_eq!(count(RecordType::NoEvent), ledger.no_event);
        assert_eq!(count(RecordType::NegComment), ledger.distractors);
        assert_eq!(ledger.events + ledger.no_event, 384);
        assert!((200..=260).contains(&ledger.events), "{}", ledger.events);
        assert!(g.validate().is_clean(), "{:?}", g.validate().violations);
    }

    #[test]
    fn distractors_are_chrono_near() {
        let (g, m, ledger) = generate_corpus(&SynthSpec::default(), 3).unwrap();
        assert!(!ledger.shadows.is_empty());
        for s in &ledger.shadows {
            let d = g.get(&s.distractor).unwrap();
            let e = g.get(&s.event).unwrap();
            let diff = m.key_to_ordinal(&d.key).unwrap() as i64 - m.key_to_ordinal(&e.key).unwrap() as i64;
            assert_eq!(diff.abs(), 1);
            assert_eq!(diff, s.offset);
            assert_eq!(d.rtype, RecordType::NegComment);
        }
    }

    #[test]
    fn deterministic_and_distractor_free_when_disabled() {
        let spec = SynthSpec::default();
        let (a, _, la) = generate_corpus(&spec, 7).unwrap();
        let (b, _, lb) = generate_corpus(&spec, 7).unwrap();
        assert_eq!(a.to_jsonl(), b.to_jsonl());
        assert_eq!(la, lb);
        let none = SynthSpec {
            distractor_rate: 0.0,
            ..spec
        };
        let (g, _, l) = generate_corpus(&none, 7).unwrap();
        assert_eq!(l.distractors, 0);
        assert!(g.records().iter().all(|r| r.rtype != RecordType::NegComment));
    }

    #[test]
    fn rejects_bad_specs() {
        let zero = SynthSpec {
            event_rate: 0.0,
            ..SynthSpec::default()
        };
        assert!(generate_corpus(&zero, 0).is_err());
        let bad = SynthSpec {
            distractor_rate: 1.5,
            ..SynthSpec::default()
        };
        assert!(generate_corpus(&bad, 0).is_err());
    }
}
