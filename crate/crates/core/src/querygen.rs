//! Templated temporal queries over month keys.
//!
//! Every anchor month is combined with every enabled template. The template
//! group decides the target interval (the anchor itself, a short window
//! before/after/around it, an explicit range, or a whole regnal year) and the
//! ground truth is every `event` / `no_event` record whose key falls inside.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::calendar::{render_numeral, Interval, TimeKey};
use crate::corpus::{Gallery, RecordType, Split};
use crate::error::{Error, Result};

const TEMPLATES_JSON: &str = include_str!("../data/templates.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TemplateGroup {
    BaseContent,
    BaseExistence,
    MonthPast,
    MonthFuture,
    MonthAround,
    MonthRange,
    YearCurrent,
    YearPast,
    YearFuture,
}

impl TemplateGroup {
    /// Template-id range reserved for the group.
    pub fn id_range(self) -> std::ops::RangeInclusive<u32> {
        match self {
            TemplateGroup::BaseContent => 1..=12,
            TemplateGroup::BaseExistence => 13..=20,
            TemplateGroup::MonthPast => 21..=26,
            TemplateGroup::MonthFuture => 27..=31,
            TemplateGroup::MonthAround => 32..=36,
            TemplateGroup::MonthRange => 37..=41,
            TemplateGroup::YearCurrent => 42..=46,
            TemplateGroup::YearPast => 47..=49,
            TemplateGroup::YearFuture => 50..=52,
        }
    }

    pub fn of_template(id: u32) -> Option<Self> {
        use TemplateGroup::*;
        [
            BaseContent,
            BaseExistence,
            MonthPast,
            MonthFuture,
            MonthAround,
            MonthRange,
            YearCurrent,
            YearPast,
            YearFuture,
        ]
        .into_iter()
        .find(|g| g.id_range().contains(&id))
    }

    pub fn is_point(self) -> bool {
        matches!(self, TemplateGroup::BaseContent | TemplateGroup::BaseExistence)
    }

    fn needs_window(self) -> bool {
        matches!(
            self,
            TemplateGroup::MonthPast | TemplateGroup::MonthFuture | TemplateGroup::MonthAround | TemplateGroup::MonthRange
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryTemplate {
    pub template_id: u32,
    pub group: TemplateGroup,
    /// Text with `{key}`, `{key2}` and `{span}` placeholders.
    pub pattern: String,
    /// Window size `k` in months for the MONTH_* groups.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<u32>,
}

impl QueryTemplate {
    fn check(&self) -> Result<()> {
        if !self.group.id_range().contains(&self.template_id) {
            return Err(Error::Config(format!(
                "template {} lies outside the id range of {:?}",
                self.template_id, self.group
            )));
        }
        if self.group.needs_window() && !matches!(self.window, Some(k) if k >= 1) {
            return Err(Error::Config(format!("template {} needs a window size", self.template_id)));
        }
        Ok(())
    }
}

/// The 52 bundled templates.
pub fn default_templates() -> Vec<QueryTemplate> {
    let templates: Vec<QueryTemplate> = serde_json::from_str(TEMPLATES_JSON).expect("bundled templates parse");
    templates.iter().for_each(|t| t.check().expect("bundled templates are valid"));
    templates
}

pub fn load_templates(path: &Path) -> Result<Vec<QueryTemplate>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let templates: Vec<QueryTemplate> = serde_json::from_str(&text)?;
    for t in &templates {
        t.check()?;
    }
    Ok(templates)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Family {
    /// Point query on one month.
    P,
    /// Gap query: existence probe on a month with no recorded event.
    G,
    /// Window query over a multi-month span.
    W,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    pub text: String,
    pub start: TimeKey,
    pub end: TimeKey,
    pub family: Family,
    pub template_id: u32,
    pub span_months: u32,
    pub is_pure_no_event: bool,
    pub split: Option<Split>,
    pub gt_ids: Vec<String>,
}

impl Query {
    pub fn interval(&self) -> Interval {
        Interval {
            start: self.start,
            end: self.end,
        }
    }

    pub fn group(&self) -> Option<TemplateGroup> {
        TemplateGroup::of_template(self.template_id)
    }
}

#[derive(Debug, Clone)]
pub struct QueryConfig {
    /// Template ids to instantiate; `None` enables all.
    pub templates: Option<BTreeSet<u32>>,
    /// Let YEAR_PAST / YEAR_FUTURE reach into the neighbouring reign.
    pub cross_reign_years: bool,
    /// Clip every window to the contiguous split block of its anchor month.
    pub clip_to_split: bool,
    /// Anchor splits to generate for; `None` generates for every split.
    pub splits: Option<BTreeSet<Split>>,
}

impl Default for QueryConfig {
    fn default() -> Self {
        Self {
            templates: None,
            cross_reign_years: false,
            clip_to_split: true,
            splits: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipReport {
    pub skipped: usize,
    pub by_reason: BTreeMap<String, usize>,
}

impl SkipReport {
    fn add(&mut self, reason: &str) {
        self.skipped += 1;
        *self.by_reason.entry(reason.to_string()).or_default() += 1;
    }
}

#[derive(Debug, Clone)]
pub struct QuerySet {
    pub queries: Vec<Query>,
    pub skipped: SkipReport,
}

/// Ids of every `event` / `no_event` record whose key lies in `interval`,
/// sorted, plus whether they are all `no_event`.
pub fn ground_truth(interval: &Interval, gallery: &Gallery) -> (Vec<String>, bool) {
    let mut ids = Vec::new();
    let mut pure = true;
    for i in gallery.records_in(interval) {
        let r = &gallery.records()[i];
        if !r.rtype.is_retrievable() {
            continue;
        }
        pure &= r.rtype == RecordType::NoEvent;
        ids.push(r.id.clone());
    }
    ids.sort();
    let pure = pure && !ids.is_empty();
    (ids, pure)
}

/// Instantiates every enabled template at every anchor month.
///
/// Output order is canonical: anchor month, then template id.
pub fn instantiate_queries(gallery: &Gallery, templates: &[QueryTemplate], config: &QueryConfig) -> Result<QuerySet> {
    for t in templates {
        t.check()?;
    }
    let mut templates: Vec<&QueryTemplate> = templates
        .iter()
        .filter(|t| config.templates.as_ref().is_none_or(|set| set.contains(&t.template_id)))
        .collect();
    templates.sort_by_key(|t| t.template_id);

    let manifest = gallery.manifest();
    let timeline: Vec<TimeKey> = gallery
        .observed_months()
        .into_iter()
        .filter(|k| {
            let ord = manifest.key_to_ordinal(k).expect("observed keys are valid");
            gallery.by_key()[&ord]
                .iter()
                .any(|&i| gallery.records()[i].rtype.is_retrievable())
        })
        .collect();
    if timeline.is_empty() {
        return Ok(QuerySet {
            queries: Vec::new(),
            skipped: SkipReport::default(),
        });
    }
    let splits: Vec<Option<Split>> = timeline.iter().map(|k| gallery.month_split(k)).collect();

    // Contiguous block [lo, hi] of timeline positions each anchor may reach.
    let mut block = vec![(0usize, timeline.len() - 1); timeline.len()];
    if config.clip_to_split {
        let mut start = 0;
        for i in 1..=timeline.len() {
            if i == timeline.len() || splits[i] != splits[start] {
                for b in &mut block[start..i] {
                    *b = (start, i - 1);
                }
                start = i;
            }
        }
    }

    let mut queries = Vec::new();
    let mut skipped = SkipReport::default();
    for (a, anchor) in timeline.iter().enumerate() {
        let split = splits[a];
        if let Some(wanted) = &config.splits {
            if !split.is_some_and(|s| wanted.contains(&s)) {
                continue;
            }
        }
        let (lo, hi) = block[a];
        for t in &templates {
            let k = t.window.unwrap_or(1) as usize;
            let clip = |from: isize, to: isize| -> Option<(usize, usize)> {
                let from = from.max(lo as isize);
                let to = to.min(hi as isize);
                (from <= to).then_some((from as usize, to as usize))
            };
            let year_span = |gong: u32, year: u32| -> Option<(usize, usize)> {
                let months: Vec<usize> = timeline
                    .iter()
                    .enumerate()
                    .filter(|(_, k)| k.gong == gong && k.year == year)
                    .map(|(i, _)| i)
                    .collect();
                clip(*months.first()? as isize, *months.last()? as isize)
            };
            let ai = a as isize;
            let ki = k as isize;
            let span = match t.group {
                TemplateGroup::BaseContent | TemplateGroup::BaseExistence => Some((a, a)),
                TemplateGroup::MonthPast => clip(ai - ki, ai - 1),
                TemplateGroup::MonthFuture => clip(ai + 1, ai + ki),
                TemplateGroup::MonthAround => clip(ai - ki, ai + ki),
                TemplateGroup::MonthRange => clip(ai, ai + ki).filter(|&(_, e)| e > a),
                TemplateGroup::YearCurrent => year_span(anchor.gong, anchor.year),
                TemplateGroup::YearPast => {
                    if anchor.year > 1 {
                        year_span(anchor.gong, anchor.year - 1)
                    } else if config.cross_reign_years && anchor.gong > 0 {
                        let prev = anchor.gong - 1;
                        year_span(prev, manifest.reign_length(prev))
                    } else {
                        skipped.add("cross_reign");
                        continue;
                    }
                }
                TemplateGroup::YearFuture => {
                    if anchor.year < manifest.reign_length(anchor.gong) {
                        year_span(anchor.gong, anchor.year + 1)
                    } else if config.cross_reign_years && (anchor.gong as usize + 1) < manifest.gongs.len() {
                        year_span(anchor.gong + 1, 1)
                    } else {
                        skipped.add("cross_reign");
                        continue;
                    }
                }
            };
            let Some((s, e)) = span else {
                skipped.add("window_outside_timeline");
                continue;
            };
            let interval = Interval::new(timeline[s], timeline[e])?;
            let (gt_ids, is_pure_no_event) = ground_truth(&interval, gallery);
            if gt_ids.is_empty() {
                skipped.add("empty_ground_truth");
                continue;
            }
            let family = match t.group {
                TemplateGroup::BaseContent => Family::P,
                TemplateGroup::BaseExistence if is_pure_no_event => Family::G,
                TemplateGroup::BaseExistence => Family::P,
                _ => Family::W,
            };
            let span_months =
                (manifest.key_to_ordinal(&interval.end)? - manifest.key_to_ordinal(&interval.start)? + 1) as u32;
            let text = t
                .pattern
                .replace("{key2}", &manifest.render_key(&interval.end))
                .replace("{key}", &manifest.render_key(anchor))
                .replace("{span}", &render_numeral(k as u32));
            queries.push(Query {
                id: format!("q-{}-{}-{}-t{:02}", anchor.gong, anchor.year, anchor.month, t.template_id),
                text,
                start: interval.start,
                end: interval.end,
                family,
                template_id: t.template_id,
                span_months,
                is_pure_no_event,
                split,
                gt_ids,
            });
        }
    }
    Ok(QuerySet { queries, skipped })
}

pub fn queries_to_jsonl(queries: &[Query]) -> String {
    let mut out = String::new();
    for q in queries {
        out.push_str(&serde_json::to_string(q).expect("query serializes"));
        out.push('\n');
    }
    out
}

pub fn save_queries(path: &Path, queries: &[Query]) -> Result<()> {
    std::fs::write(path, queries_to_jsonl(queries)).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn load_queries(path: &Path) -> Result<Vec<Query>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let q: Query = serde_json::from_str(&line).map_err(|e| Error::Malformed {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(q);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calendar::CalendarManifest;
    use crate::corpus::{Record, SplitRatios};

    fn gallery(reigns: &[u32], events: &[(u32, u32, u32)]) -> Gallery {
        let gongs = ["隐公", "桓公", "庄公"][..reigns.len()].iter().map(|s| s.to_string()).collect();
        let m = CalendarManifest::with_reigns(gongs, reigns.to_vec(), 13).unwrap();
        let mut records = Vec::new();
        for (n, &(g, y, mo)) in events.iter().enumerate() {
            records.push(Record {
                id: format!("ev{n:03}"),
                text: format!("事{n}"),
                key: TimeKey::new(g, y, mo),
                rtype: RecordType::Event,
                source: "annals".into(),
                split: None,
            });
        }
        let g = Gallery::new(m.clone(), records).unwrap();
        g.synthesize_no_event(&m.full_timeline()).unwrap().0
    }

    fn only(ids: &[u32]) -> QueryConfig {
        QueryConfig {
            templates: Some(ids.iter().copied().collect()),
            clip_to_split: false,
            ..Default::default()
        }
    }

    fn find<'a>(qs: &'a QuerySet, anchor: TimeKey, template: u32) -> Option<&'a Query> {
        let id = format!("q-{}-{}-{}-t{template:02}", anchor.gong, anchor.year, anchor.month);
        qs.queries.iter().find(|q| q.id == id)
    }

    #[test]
    fn bundled_templates_match_group_ranges() {
        let t = default_templates();
        assert_eq!(t.len(), 52);
        for (i, tpl) in t.iter().enumerate() {
            assert_eq!(tpl.template_id, i as u32 + 1);
            assert_eq!(TemplateGroup::of_template(tpl.template_id), Some(tpl.group));
        }
        let bad = QueryTemplate {
            template_id: 30,
            group: TemplateGroup::MonthPast,
            pattern: "{key}".into(),
            window: Some(1),
        };
        assert!(bad.check().is_err());
    }

    #[test]
    fn point_query_on_event_month() {
        let g = gallery(&[2], &[(0, 1, 2), (0, 1, 2)]);
        let qs = instantiate_queries(&g, &default_templates(), &only(&[1])).unwrap();
        let q = find(&qs, TimeKey::new(0, 1, 2), 1).unwrap();
        assert_eq!(q.interval(), Interval::point(TimeKey::new(0, 1, 2)));
        assert_eq!(q.family, Family::P);
        assert_eq!(q.span_months, 1);
        assert_eq!(q.gt_ids, vec!["ev000", "ev001"]);
        assert!(!q.is_pure_no_event);
        assert_eq!(q.text, "鲁隐公元年二月发生了什么事？");
    }

    #[test]
    fn existence_query_on_empty_month_is_a_gap_query() {
        let g = gallery(&[1], &[(0, 1, 2)]);
        let qs = instantiate_queries(&g, &default_templates(), &only(&[13])).unwrap();
        let q = find(&qs, TimeKey::new(0, 1, 3), 13).unwrap();
        assert_eq!(q.family, Family::G);
        assert!(q.is_pure_no_event);
        assert_eq!(q.gt_ids, vec!["noevent-0-1-3"]);
        assert_eq!(find(&qs, TimeKey::new(0, 1, 2), 13).unwrap().family, Family::P);
    }

    #[test]
    fn around_window_is_left_clipped_at_timeline_start() {
        let g = gallery(&[1], &[]);
        // template 32 is MONTH_AROUND with k = 1
        let qs = instantiate_queries(&g, &default_templates(), &only(&[32])).unwrap();
        let q = find(&qs, TimeKey::new(0, 1, 1), 32).unwrap();
        assert_eq!(q.interval(), Interval::new(TimeKey::new(0, 1, 1), TimeKey::new(0, 1, 2)).unwrap());
        assert_eq!(q.family, Family::W);
    }

    #[test]
    fn past_window_at_start_is_skipped() {
        let g = gallery(&[1], &[]);
        let qs = instantiate_queries(&g, &default_templates(), &only(&[21])).unwrap();
        assert!(find(&qs, TimeKey::new(0, 1, 1), 21).is_none());
        assert_eq!(qs.skipped.by_reason["window_outside_timeline"], 1);
        let q = find(&qs, TimeKey::new(0, 1, 5), 21).unwrap();
        assert_eq!(q.interval(), Interval::point(TimeKey::new(0, 1, 4)));
    }

    #[test]
    fn year_past_across_reign_boundary() {
        let g = gallery(&[2, 2], &[]);
        let qs = instantiate_queries(&g, &default_templates(), &only(&[47])).unwrap();
        assert!(find(&qs, TimeKey::new(1, 1, 4), 47).is_none());
        assert_eq!(qs.skipped.by_reason["cross_reign"], 24);
        let q = find(&qs, TimeKey::new(1, 2, 4), 47).unwrap();
        assert_eq!(q.interval(), Interval::new(TimeKey::new(1, 1, 1), TimeKey::new(1, 1, 12)).unwrap());

        let cross = QueryConfig {
            cross_reign_years: true,
            ..only(&[47])
        };
        let qs = instantiate_queries(&g, &default_templates(), &cross).unwrap();
        let q = find(&qs, TimeKey::new(1, 1, 4), 47).unwrap();
        assert_eq!(q.interval(), Interval::new(TimeKey::new(0, 2, 1), TimeKey::new(0, 2, 12)).unwrap());
    }

    #[test]
    fn window_ground_truth_matches_scan() {
        let g = gallery(&[1], &[(0, 1, 4), (0, 1, 4), (0, 1, 6)]);
        // template 33 is MONTH_AROUND with k = 2 → months 3..7
        let qs = instantiate_queries(&g, &default_templates(), &only(&[33])).unwrap();
        let q = find(&qs, TimeKey::new(0, 1, 5), 33).unwrap();
        let brute: Vec<String> = g
            .records()
            .iter()
            .filter(|r| r.rtype.is_retrievable() && q.interval().contains(&r.key))
            .map(|r| r.id.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        assert_eq!(q.gt_ids, brute);
        // three events plus no_event records for months 3, 5 and 7
        assert_eq!(q.gt_ids.len(), 3 + 3);
    }

    #[test]
    fn windows_stay_inside_the_anchor_split_block() {
        let g = gallery(&[3], &[]);
        let (g, _) = g.assign_splits(SplitRatios::default(), 9).unwrap();
        let qs = instantiate_queries(&g, &default_templates(), &QueryConfig::default()).unwrap();
        assert!(!qs.queries.is_empty());
        for q in &qs.queries {
            for id in &q.gt_ids {
                assert_eq!(g.get(id).unwrap().split, q.split, "{}", q.id);
            }
        }
    }

    #[test]
    fn canonical_order_and_jsonl_round_trip() {
        let g = gallery(&[1], &[(0, 1, 1)]);
        let qs = instantiate_queries(&g, &default_templates(), &QueryConfig::default()).unwrap();
        let keys: Vec<(TimeKey, u32)> = qs
            .queries
            .iter()
            .map(|q| {
                let parts: Vec<u32> = q.id[2..q.id.len() - 4].split('-').map(|x| x.parse().unwrap()).collect();
                (TimeKey::new(parts[0], parts[1], parts[2]), q.template_id)
            })
            .collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
        let line = queries_to_jsonl(&qs.queries[..1]);
        assert!(line.starts_with(r#"{"id":"q-0-1-1-t01","text":"#), "{line}");
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("q.jsonl");
        save_queries(&path, &qs.queries).unwrap();
        assert_eq!(load_queries(&path).unwrap(), qs.queries);
    }
}
