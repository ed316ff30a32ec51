//! Time-keyed gallery of retrieval records.
//!
//! Records are stored as JSONL with the canonical key order
//! `{id, text, gong, year, month, rtype, source, split}`; the calendar
//! manifest lives in a sidecar `manifest.json` next to the gallery file.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::calendar::{CalendarManifest, Interval, TimeKey, DEFAULT_MIN_MONTHS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordType {
    Event,
    NoEvent,
    NegComment,
}

impl RecordType {
    pub fn as_str(self) -> &'static str {
        match self {
            RecordType::Event => "event",
            RecordType::NoEvent => "no_event",
            RecordType::NegComment => "neg_comment",
        }
    }

    /// Whether records of this type can be ground truth for a query.
    pub fn is_retrievable(self) -> bool {
        !matches!(self, RecordType::NegComment)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "val" | "dev" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

pub const NO_EVENT_SOURCE: &str = "synthesized";
const NO_EVENT_SUFFIX: &str = "：《春秋》经文及三传于此月无事可书。";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub id: String,
    pub text: String,
    #[serde(flatten)]
    pub key: TimeKey,
    pub rtype: RecordType,
    pub source: String,
    pub split: Option<Split>,
}

impl Record {
    pub fn key(&self) -> TimeKey {
        self.key
    }
}

/// Immutable gallery with an ordinal → record index.
#[derive(Debug, Clone)]
pub struct Gallery {
    manifest: CalendarManifest,
    records: Vec<Record>,
    by_key: BTreeMap<u64, Vec<usize>>,
    by_id: HashMap<String, usize>,
}

impl Gallery {
    pub fn new(manifest: CalendarManifest, records: Vec<Record>) -> Result<Self> {
        manifest.validate()?;
        let mut by_key: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
        let mut by_id = HashMap::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if by_id.insert(r.id.clone(), i).is_some() {
                return Err(Error::DuplicateId(r.id.clone()));
            }
            if r.text.trim().is_empty() {
                return Err(Error::Consistency(format!("record {:?} has empty text", r.id)));
            }
            by_key.entry(manifest.key_to_ordinal(&r.key)?).or_default().push(i);
        }
        Ok(Self {
            manifest,
            records,
            by_key,
            by_id,
        })
    }

    pub fn manifest(&self) -> &CalendarManifest {
        &self.manifest
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Record> {
        self.by_id.get(id).map(|&i| &self.records[i])
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn by_key(&self) -> &BTreeMap<u64, Vec<usize>> {
        &self.by_key
    }

    pub fn ordinal(&self, record: &Record) -> u64 {
        self.manifest
            .key_to_ordinal(&record.key)
            .expect("gallery keys are validated")
    }

    /// Record indices whose key lies in `interval`.
    pub fn records_in(&self, interval: &Interval) -> impl Iterator<Item = usize> + '_ {
        let lo = self.manifest.key_to_ordinal(&interval.start).unwrap_or(0);
        let hi = self.manifest.key_to_ordinal(&interval.end).unwrap_or(0);
        self.by_key.range(lo..=hi).flat_map(|(_, v)| v.iter().copied())
    }

    /// Calendar months inside `interval`: the manifest's regular months plus
    /// any other month that already holds a record.
    pub fn timeline_months(&self, interval: &Interval) -> Vec<TimeKey> {
        let mut months: BTreeSet<TimeKey> = self
            .manifest
            .calendar_months()
            .into_iter()
            .filter(|k| interval.contains(k))
            .collect();
        months.extend(self.records_in(interval).map(|i| self.records[i].key));
        months.into_iter().collect()
    }

    /// Distinct months holding at least one record, in calendar order.
    pub fn observed_months(&self) -> Vec<TimeKey> {
        self.by_key
            .values()
            .map(|v| self.records[v[0]].key)
            .collect()
    }

    /// Split of a month (all records of a month share it after `assign_splits`).
    pub fn month_split(&self, key: &TimeKey) -> Option<Split> {
        let ord = self.manifest.key_to_ordinal(key).ok()?;
        self.by_key.get(&ord).and_then(|v| self.records[v[0]].split)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    /// Writes the gallery JSONL and its sidecar manifest.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        }
        std::fs::write(path, self.to_jsonl()).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
        self.manifest.save(&sidecar_manifest_path(path))
    }

    /// Adds one standardized `no_event` record for every timeline month that
    /// holds no event and no placeholder yet. Returns the augmented gallery
    /// and the number of records added.
    pub fn synthesize_no_event(&self, timeline: &Interval) -> Result<(Gallery, usize)> {
        self.manifest.check_key(&timeline.start)?;
        self.manifest.check_key(&timeline.end)?;
        let mut records = self.records.clone();
        let mut added = 0;
        for key in self.timeline_months(timeline) {
            let ord = self.manifest.key_to_ordinal(&key)?;
            let here = self.by_key.get(&ord).map(Vec::as_slice).unwrap_or(&[]);
            let events = here.iter().filter(|&&i| self.records[i].rtype == RecordType::Event).count();
            let placeholders = here.iter().filter(|&&i| self.records[i].rtype == RecordType::NoEvent).count();
            if events > 0 && placeholders > 0 {
                return Err(Error::Consistency(format!(
                    "month {} holds both events and a no_event record",
                    self.manifest.render_key(&key)
                )));
            }
            if events == 0 && placeholders == 0 {
                records.push(no_event_record(&self.manifest, key));
                added += 1;
            }
        }
        Ok((Gallery::new(self.manifest.clone(), records)?, added))
    }

    /// Allocates three disjoint contiguous month blocks per reign, in a
    /// seeded random block order. Block sizes follow the ratios with
    /// largest-remainder rounding carried across reigns, so the gallery-wide
    /// shares stay within one month of the targets. Reigns with fewer than
    /// three months go entirely to train.
    pub fn assign_splits(&self, ratios: SplitRatios, seed: u64) -> Result<(Gallery, Vec<String>)> {
        ratios.check()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut warnings = Vec::new();
        let mut month_split: HashMap<u64, Split> = HashMap::new();
        let mut per_gong: BTreeMap<u32, Vec<u64>> = BTreeMap::new();
        for (&ord, v) in &self.by_key {
            per_gong.entry(self.records[v[0]].key.gong).or_default().push(ord);
        }
        let mut allocated = [0usize; 3];
        let mut seen = 0usize;
        for (gong, months) in &per_gong {
            let Some(sizes) = ratios.next_blocks(months.len(), seen, allocated) else {
                warnings.push(format!(
                    "reign {} has {} months; assigned entirely to train",
                    self.manifest.gongs[*gong as usize],
                    months.len()
                ));
                months.iter().for_each(|&o| {
                    month_split.insert(o, Split::Train);
                });
                seen += months.len();
                allocated[Split::Train as usize] += months.len();
                continue;
            };
            seen += months.len();
            for s in 0..3 {
                allocated[s] += sizes[s];
            }
            let mut order = Split::ALL;
            order.shuffle(&mut rng);
            let mut cursor = 0;
            for split in order {
                let n = sizes[split as usize];
                for &o in &months[cursor..cursor + n] {
                    month_split.insert(o, split);
                }
                cursor += n;
            }
        }
        let records = self
            .records
            .iter()
            .map(|r| {
                let mut r = r.clone();
                r.split = Some(month_split[&self.ordinal(&r)]);
                r
            })
            .collect();
        Ok((Gallery::new(self.manifest.clone(), records)?, warnings))
    }

    pub fn validate(&self) -> ValidationReport {
        validate_records(&self.manifest, &self.records)
    }
}

fn no_event_record(manifest: &CalendarManifest, key: TimeKey) -> Record {
    Record {
        id: format!("noevent-{}-{}-{}", key.gong, key.year, key.month),
        text: format!("{}{NO_EVENT_SUFFIX}", manifest.render_key(&key)),
        key,
        rtype: RecordType::NoEvent,
        source: NO_EVENT_SOURCE.to_string(),
        split: None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.8,
            validation: 0.1,
            test: 0.1,
        }
    }
}

impl SplitRatios {
    pub fn check(&self) -> Result<()> {
        let all = [self.train, self.validation, self.test];
        if all.iter().any(|&r| !(r > 0.0)) || ((all.iter().sum::<f64>()) - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split ratios must be positive and sum to 1, got {all:?}"
            )));
        }
        Ok(())
    }

    fn as_array(&self) -> [f64; 3] {
        [self.train, self.validation, self.test]
    }

    /// Largest-remainder apportionment of `months` (indexed by `Split as usize`).
    pub fn apportion(&self, months: usize) -> [usize; 3] {
        let quotas = self.as_array().map(|r| r * months as f64);
        let mut out = quotas.map(|q| q.floor() as usize);
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| {
            let (ra, rb) = (quotas[a] - quotas[a].floor(), quotas[b] - quotas[b].floor());
            rb.total_cmp(&ra).then(a.cmp(&b))
        });
        let short = months - out.iter().sum::<usize>();
        for &i in order.iter().take(short) {
            out[i] += 1;
        }
        out
    }

    /// Block sizes for a single reign of `months` months.
    pub fn block_sizes(&self, months: usize) -> Option<[usize; 3]> {
        self.next_blocks(months, 0, [0; 3])
    }

    /// Block sizes for the next reign, given how many months earlier reigns
    /// held (`seen`) and how they were allocated. Every block gets at least
    /// one month; `None` when the reign is too short for three blocks.
    fn next_blocks(&self, months: usize, seen: usize, allocated: [usize; 3]) -> Option<[usize; 3]> {
        if months < 3 {
            return None;
        }
        let target = self.apportion(seen + months);
        let mut sizes = [0usize; 3];
        for s in [Split::Validation as usize, Split::Test as usize] {
            sizes[s] = target[s].saturating_sub(allocated[s]).max(1);
        }
        let train = months.checked_sub(sizes[1] + sizes[2]).filter(|&t| t >= 1)?;
        sizes[0] = train;
        Some(sizes)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    pub counts: BTreeMap<String, BTreeMap<String, usize>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn count(&self, kind: &str) -> usize {
        self.violations.iter().filter(|v| v.kind == kind).count()
    }
}

/// Audits raw records without requiring them to form a valid gallery.
pub fn validate_records(manifest: &CalendarManifest, records: &[Record]) -> ValidationReport {
    let mut violations = Vec::new();
    let mut push = |kind: &str, detail: String| violations.push(Violation { kind: kind.into(), detail });

    let mut seen = HashSet::new();
    for r in records {
        if !seen.insert(r.id.as_str()) {
            push("duplicate_id", format!("id {:?} appears more than once", r.id));
        }
        if r.text.trim().is_empty() {
            push("empty_text", format!("record {:?} has empty text", r.id));
        }
    }

    let mut months: BTreeMap<u64, Vec<&Record>> = BTreeMap::new();
    for r in records {
        match manifest.key_to_ordinal(&r.key) {
            Ok(o) => months.entry(o).or_default().push(r),
            Err(e) => push("key_range", format!("record {:?}: {e}", r.id)),
        }
    }

    let mut reign_months: BTreeMap<u32, usize> = BTreeMap::new();
    for (ord, recs) in &months {
        let key = recs[0].key;
        *reign_months.entry(key.gong).or_default() += 1;
        let splits: BTreeSet<Option<Split>> = recs.iter().map(|r| r.split).collect();
        if splits.len() > 1 {
            let names: Vec<String> = splits
                .iter()
                .map(|s| s.map_or("unassigned".to_string(), |s| s.to_string()))
                .collect();
            push(
                "split_leakage",
                format!("month {} (ordinal {ord}) spans splits {}", manifest.render_key(&key), names.join("/")),
            );
        }
        let has_event = recs.iter().any(|r| r.rtype == RecordType::Event);
        let has_placeholder = recs.iter().any(|r| r.rtype == RecordType::NoEvent);
        if has_event && has_placeholder {
            push(
                "no_event_conflict",
                format!("month {} holds events and a no_event record", manifest.render_key(&key)),
            );
        }
    }

    let mut counts: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    for r in records {
        let split = r.split.map_or("unassigned", Split::as_str).to_string();
        *counts
            .entry(split)
            .or_default()
            .entry(r.rtype.as_str().to_string())
            .or_default() += 1;
    }

    let warnings = reign_months
        .iter()
        .filter(|&(_, &n)| n < 3)
        .map(|(g, n)| {
            let name = manifest.gongs.get(*g as usize).map_or("?", String::as_str);
            format!("reign {name} has only {n} months; too short for three split blocks")
        })
        .collect();

    ValidationReport {
        violations,
        counts,
        warnings,
    }
}

/// `manifest.json` in the gallery's directory.
pub fn sidecar_manifest_path(gallery: &Path) -> PathBuf {
    gallery.with_file_name("manifest.json")
}

/// Parses gallery JSONL, reporting the first malformed line by number.
pub fn read_records(path: &Path) -> Result<Vec<Record>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(&line).map_err(|e| Error::Malformed {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

/// Manifest covering `records`, with `G`, `Y`, `M` rounded up to the minimums.
pub fn derive_manifest(records: &[Record], min_years: u32, min_months: u32) -> Result<CalendarManifest> {
    let gongs = records.iter().map(|r| r.key.gong).max().map_or(1, |g| g + 1);
    let years = records.iter().map(|r| r.key.year).max().unwrap_or(1).max(min_years);
    let months = records.iter().map(|r| r.key.month).max().unwrap_or(12).max(min_months);
    CalendarManifest::new((0..gongs).map(|g| format!("gong{g}")).collect(), gongs, years, months)
}

/// Loads a gallery from JSONL. The manifest is read from `manifest`, else
/// from the sidecar file, else derived from the records.
pub fn load_gallery(path: &Path, manifest: Option<&Path>) -> Result<Gallery> {
    let records = read_records(path)?;
    let sidecar = sidecar_manifest_path(path);
    let manifest = match manifest {
        Some(p) => CalendarManifest::load(p)?,
        None if sidecar.exists() => CalendarManifest::load(&sidecar)?,
        None => derive_manifest(&records, 1, DEFAULT_MIN_MONTHS)?,
    };
    Gallery::new(manifest, records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn manifest(reigns: &[u32]) -> CalendarManifest {
        let gongs = (0..reigns.len()).map(|i| format!("公{i}")).collect();
        CalendarManifest::with_reigns(gongs, reigns.to_vec(), 13).unwrap()
    }

    fn event(id: &str, g: u32, y: u32, m: u32) -> Record {
        Record {
            id: id.into(),
            text: format!("事{id}"),
            key: TimeKey::new(g, y, m),
            rtype: RecordType::Event,
            source: "annals".into(),
            split: None,
        }
    }

    #[test]
    fn canonical_json_order() {
        let line = serde_json::to_string(&event("a", 0, 1, 2)).unwrap();
        assert_eq!(
            line,
            r#"{"id":"a","text":"事a","gong":0,"year":1,"month":2,"rtype":"event","source":"annals","split":null}"#
        );
    }

    #[test]
    fn load_three_records_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.jsonl");
        let lines: String = ["a", "b", "c"]
            .iter()
            .enumerate()
            .map(|(i, id)| serde_json::to_string(&event(id, 0, 1, i as u32 + 1)).unwrap() + "\n")
            .collect();
        std::fs::write(&path, &lines).unwrap();
        let g = load_gallery(&path, None).unwrap();
        assert_eq!(g.len(), 3);
        assert_eq!(g.manifest().months_per_year, 13);

        std::fs::write(&path, format!("{lines}{}\n", serde_json::to_string(&event("b", 0, 1, 5)).unwrap())).unwrap();
        match load_gallery(&path, None).unwrap_err() {
            Error::DuplicateId(id) => assert_eq!(id, "b"),
            e => panic!("{e}"),
        }

        manifest(&[2]).save(&sidecar_manifest_path(&path)).unwrap();
        std::fs::write(&path, serde_json::to_string(&event("x", 0, 1, 14)).unwrap() + "\n").unwrap();
        assert!(matches!(load_gallery(&path, None).unwrap_err(), Error::Bounds { field: "month", .. }));

        std::fs::write(&path, format!("{lines}{{\"id\":\"z\",\"text\":\"t\",\"gong\":0,\"year\":1,\"month\":1,\"rtype\":\"rumor\",\"source\":\"s\",\"split\":null}}\n")).unwrap();
        match load_gallery(&path, None).unwrap_err() {
            Error::Malformed { line, message, .. } => {
                assert_eq!(line, 4);
                assert!(message.contains("rumor"), "{message}");
            }
            e => panic!("{e}"),
        }
        std::fs::write(&path, "{not json\n").unwrap();
        assert!(matches!(load_gallery(&path, None).unwrap_err(), Error::Malformed { line: 1, .. }));
    }

    #[test]
    fn save_load_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.jsonl");
        let g = Gallery::new(manifest(&[1]), vec![event("a", 0, 1, 1), event("b", 0, 1, 7)]).unwrap();
        let (g, _) = g.synthesize_no_event(&g.manifest().full_timeline()).unwrap();
        g.save(&path).unwrap();
        let first = std::fs::read(&path).unwrap();
        let back = load_gallery(&path, None).unwrap();
        assert_eq!(back.manifest(), g.manifest());
        back.save(&path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), first);
    }

    #[test]
    fn no_event_synthesis_counts() {
        let m = manifest(&[1]);
        let events: Vec<Record> = [1, 2, 4, 5, 8, 9, 12]
            .iter()
            .map(|&mo| event(&format!("e{mo}"), 0, 1, mo))
            .collect();
        let g = Gallery::new(m.clone(), events).unwrap();
        let (aug, added) = g.synthesize_no_event(&m.full_timeline()).unwrap();
        assert_eq!(added, 5);
        for key in aug.timeline_months(&m.full_timeline()) {
            let ord = m.key_to_ordinal(&key).unwrap();
            assert!(aug.by_key()[&ord].iter().any(|&i| aug.records()[i].rtype.is_retrievable()));
        }
        let placeholder = aug.get("noevent-0-1-3").unwrap();
        assert_eq!(placeholder.text, "鲁公0元年三月：《春秋》经文及三传于此月无事可书。");
        assert_eq!(placeholder.source, NO_EVENT_SOURCE);

        let (again, added) = aug.synthesize_no_event(&m.full_timeline()).unwrap();
        assert_eq!(added, 0);
        assert_eq!(again.len(), aug.len());

        let empty = Gallery::new(m.clone(), vec![]).unwrap();
        let three = Interval::new(TimeKey::new(0, 1, 1), TimeKey::new(0, 1, 3)).unwrap();
        assert_eq!(empty.synthesize_no_event(&three).unwrap().1, 3);
    }

    #[test]
    fn no_event_conflict_is_an_error() {
        let m = manifest(&[1]);
        let mut ne = no_event_record(&m, TimeKey::new(0, 1, 1));
        ne.id = "ne".into();
        let g = Gallery::new(m.clone(), vec![event("a", 0, 1, 1), ne]).unwrap();
        assert!(matches!(g.synthesize_no_event(&m.full_timeline()), Err(Error::Consistency(_))));
        assert_eq!(g.validate().count("no_event_conflict"), 1);
    }

    #[test]
    fn intercalary_months_join_the_timeline_only_when_observed() {
        let m = manifest(&[1]);
        let g = Gallery::new(m.clone(), vec![event("leap", 0, 1, 13)]).unwrap();
        let (aug, added) = g.synthesize_no_event(&m.full_timeline()).unwrap();
        assert_eq!(added, 12);
        assert_eq!(aug.len(), 13);
    }

    #[test]
    fn split_block_sizes() {
        let r = SplitRatios::default();
        assert_eq!(r.block_sizes(100), Some([80, 10, 10]));
        assert_eq!(r.block_sizes(10), Some([8, 1, 1]));
        assert_eq!(r.block_sizes(3), Some([1, 1, 1]));
        assert_eq!(r.block_sizes(25), Some([20, 3, 2]));
        assert_eq!(r.block_sizes(2), None);
        assert_eq!(r.apportion(45), [36, 5, 4]);
    }

    #[test]
    fn splits_are_contiguous_per_reign() {
        let m = manifest(&[5, 3]);
        let g = Gallery::new(m.clone(), vec![]).unwrap();
        let (g, _) = g.synthesize_no_event(&m.full_timeline()).unwrap();
        let (split, warnings) = g.assign_splits(SplitRatios::default(), 3).unwrap();
        assert!(warnings.is_empty());
        assert_eq!(split.validate().count("split_leakage"), 0);
        for gong in 0..2 {
            let seq: Vec<Split> = split
                .observed_months()
                .iter()
                .filter(|k| k.gong == gong)
                .map(|k| split.month_split(k).unwrap())
                .collect();
            let changes = seq.windows(2).filter(|w| w[0] != w[1]).count();
            assert_eq!(changes, 2, "three contiguous blocks in reign {gong}");
        }
        let (again, _) = g.assign_splits(SplitRatios::default(), 3).unwrap();
        assert_eq!(again.to_jsonl(), split.to_jsonl());
    }

    #[test]
    fn short_reign_falls_back_to_train() {
        let m = CalendarManifest::new(vec!["甲".into(), "乙".into()], 2, 1, 13).unwrap();
        let g = Gallery::new(m, vec![event("a", 0, 1, 1), event("b", 0, 1, 2), event("c", 1, 1, 1)]).unwrap();
        let (s, warnings) = g.assign_splits(SplitRatios::default(), 0).unwrap();
        assert_eq!(warnings.len(), 2);
        assert!(s.records().iter().all(|r| r.split == Some(Split::Train)));
        assert_eq!(s.validate().warnings.len(), 2);
        assert!(g
            .assign_splits(SplitRatios { train: 0.5, validation: 0.5, test: 0.5 }, 0)
            .is_err());
    }

    #[test]
    fn validation_findings() {
        let m = manifest(&[1]);
        let mut a = event("a", 0, 1, 1);
        a.split = Some(Split::Train);
        let mut b = event("b", 0, 1, 1);
        b.split = Some(Split::Test);
        let c = event("a", 0, 1, 2);
        let d = event("d", 0, 2, 1);
        let report = validate_records(&m, &[a, b, c, d]);
        assert_eq!(report.count("split_leakage"), 1);
        assert_eq!(report.count("duplicate_id"), 1);
        assert_eq!(report.count("key_range"), 1);
        let total: usize = report.counts.values().flat_map(|m| m.values()).sum();
        assert_eq!(total, 4);

        let clean = Gallery::new(m, vec![event("x", 0, 1, 1)]).unwrap();
        assert!(clean.validate().is_clean());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(50))]
        #[test]
        fn split_fractions_track_ratios(reigns in prop::collection::vec(2u32..12, 3..8), seed in any::<u64>()) {
            let m = manifest(&reigns);
            let g = Gallery::new(m.clone(), vec![]).unwrap();
            let (g, _) = g.synthesize_no_event(&m.full_timeline()).unwrap();
            let (s, _) = g.assign_splits(SplitRatios::default(), seed).unwrap();
            prop_assert_eq!(s.validate().count("split_leakage"), 0);
            let n = s.len() as f64;
            for (split, target) in [(Split::Train, 0.8), (Split::Validation, 0.1), (Split::Test, 0.1)] {
                let share = s.records().iter().filter(|r| r.split == Some(split)).count() as f64 / n;
                prop_assert!((share - target).abs() <= 0.02 + 1e-12, "{split}: {share}");
            }
        }
    }
}
