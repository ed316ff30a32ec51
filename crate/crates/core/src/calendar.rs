//! Reign-based month keys.
//!
//! A [`TimeKey`] is a `(gong, year, month)` triple: the ruler index into the
//! manifest's reign list, the 1-based regnal year and the 1-based month. The
//! [`CalendarManifest`] fixes the padded index space `G × Y × M` that every
//! downstream computation linearizes over, so two keys compare the same way
//! whether you look at the triple or at its month ordinal.
//!
//! The [`Scanner`] turns a stream of raw annal lines into keys by tracking the
//! current triple and applying reign, year and month cues in order of
//! specificity.

use std::fmt;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Month-level time key. Ordering is lexicographic on `(gong, year, month)`,
/// which is also calendar order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TimeKey {
    pub gong: u32,
    pub year: u32,
    pub month: u32,
}

impl TimeKey {
    pub const fn new(gong: u32, year: u32, month: u32) -> Self {
        Self { gong, year, month }
    }
}

impl fmt::Display for TimeKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{})", self.gong, self.year, self.month)
    }
}

/// Closed range of month keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Interval {
    pub start: TimeKey,
    pub end: TimeKey,
}

impl Interval {
    pub fn new(start: TimeKey, end: TimeKey) -> Result<Self> {
        if start > end {
            return Err(Error::Domain(format!(
                "interval start {start} is after end {end}"
            )));
        }
        Ok(Self { start, end })
    }

    pub fn point(key: TimeKey) -> Self {
        Self {
            start: key,
            end: key,
        }
    }

    pub fn contains(&self, key: &TimeKey) -> bool {
        self.start <= *key && *key <= self.end
    }

    pub fn overlaps(&self, other: &Interval) -> bool {
        self.start <= other.end && other.start <= self.end
    }
}

/// True iff the month-ordinal ranges of `q` and `i` intersect.
pub fn interval_overlap(q: &Interval, i: &Interval, manifest: &CalendarManifest) -> Result<bool> {
    let (qs, qe) = (manifest.key_to_ordinal(&q.start)?, manifest.key_to_ordinal(&q.end)?);
    let (is, ie) = (manifest.key_to_ordinal(&i.start)?, manifest.key_to_ordinal(&i.end)?);
    Ok(qs <= ie && is <= qe)
}

/// Surface vocabulary the scanner and the key renderer work with.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lexicon {
    /// State name prepended to rendered keys, e.g. `鲁`.
    pub state_prefix: String,
    /// Suffix shared by ruler names, used to spot rulers missing from the manifest.
    pub ruler_suffix: String,
    pub accession_markers: Vec<String>,
    /// Character naming the first month (`正` in `正月`).
    pub first_month: String,
    /// Marker of an intercalary month (`闰` in `闰三月`).
    pub intercalary_marker: String,
}

impl Default for Lexicon {
    fn default() -> Self {
        Self {
            state_prefix: "鲁".to_string(),
            ruler_suffix: "公".to_string(),
            accession_markers: vec!["即位".to_string()],
            first_month: "正".to_string(),
            intercalary_marker: "闰".to_string(),
        }
    }
}

pub const DEFAULT_MIN_MONTHS: u32 = 13;
pub const DEFAULT_REGULAR_MONTHS: u32 = 12;

fn default_regular_months() -> u32 {
    DEFAULT_REGULAR_MONTHS
}

/// The padded calendar index space.
///
/// `reign_years` (optional) lists the actual number of regnal years per gong
/// and `regular_months` the ordinary months per year; together they define
/// which grid cells are real calendar months. Slot `regular_months + 1` is
/// reserved for intercalary months.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CalendarManifest {
    pub gongs: Vec<String>,
    #[serde(rename = "G")]
    pub num_gongs: u32,
    #[serde(rename = "Y")]
    pub max_years: u32,
    #[serde(rename = "M")]
    pub months_per_year: u32,
    #[serde(default)]
    pub reign_years: Vec<u32>,
    #[serde(default = "default_regular_months")]
    pub regular_months: u32,
    #[serde(default)]
    pub lexicon: Lexicon,
}

impl CalendarManifest {
    pub fn new(gongs: Vec<String>, num_gongs: u32, max_years: u32, months_per_year: u32) -> Result<Self> {
        let manifest = Self {
            gongs,
            num_gongs,
            max_years,
            months_per_year,
            reign_years: Vec::new(),
            regular_months: DEFAULT_REGULAR_MONTHS.min(months_per_year),
            lexicon: Lexicon::default(),
        };
        manifest.validate()?;
        Ok(manifest)
    }

    /// Manifest whose padded sizes equal the reign structure, with the
    /// intercalary slot reserved when `months_per_year` is at least 13.
    pub fn with_reigns(gongs: Vec<String>, reign_years: Vec<u32>, months_per_year: u32) -> Result<Self> {
        let max_years = reign_years.iter().copied().max().unwrap_or(1);
        let mut manifest = Self {
            num_gongs: gongs.len() as u32,
            gongs,
            max_years,
            months_per_year,
            reign_years,
            regular_months: DEFAULT_REGULAR_MONTHS.min(months_per_year),
            lexicon: Lexicon::default(),
        };
        manifest.validate()?;
        manifest.reign_years.shrink_to_fit();
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<()> {
        if self.gongs.is_empty() {
            return Err(Error::Manifest("gong list is empty".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for g in &self.gongs {
            if !seen.insert(g.as_str()) {
                return Err(Error::Manifest(format!("duplicate gong {g:?}")));
            }
        }
        if (self.num_gongs as usize) < self.gongs.len() {
            return Err(Error::Manifest(format!(
                "G = {} is smaller than the {} listed gongs",
                self.num_gongs,
                self.gongs.len()
            )));
        }
        if self.max_years < 1 {
            return Err(Error::Manifest("Y must be at least 1".into()));
        }
        if self.months_per_year < 12 {
            return Err(Error::Manifest(format!("M = {} is below 12", self.months_per_year)));
        }
        if self.regular_months < 1 || self.regular_months > self.months_per_year {
            return Err(Error::Manifest(format!(
                "regular_months = {} outside 1..=M",
                self.regular_months
            )));
        }
        if self.grid_size() < 2 {
            return Err(Error::Manifest("G·Y·M must be at least 2".into()));
        }
        if !self.reign_years.is_empty() {
            if self.reign_years.len() != self.gongs.len() {
                return Err(Error::Manifest("reign_years must list one entry per gong".into()));
            }
            if let Some(&y) = self.reign_years.iter().find(|&&y| y < 1 || y > self.max_years) {
                return Err(Error::Manifest(format!("reign length {y} outside 1..=Y")));
            }
        }
        Ok(())
    }

    pub fn grid_size(&self) -> u64 {
        self.num_gongs as u64 * self.max_years as u64 * self.months_per_year as u64
    }

    /// Slot used for intercalary months, if the manifest reserves one.
    pub fn intercalary_month(&self) -> Option<u32> {
        (self.regular_months < self.months_per_year).then_some(self.regular_months + 1)
    }

    pub fn gong_index(&self, name: &str) -> Option<u32> {
        self.gongs.iter().position(|g| g == name).map(|i| i as u32)
    }

    /// Number of regnal years of `gong` that are real calendar years.
    pub fn reign_length(&self, gong: u32) -> u32 {
        self.reign_years
            .get(gong as usize)
            .copied()
            .unwrap_or(self.max_years)
    }

    pub fn check_key(&self, key: &TimeKey) -> Result<()> {
        if key.gong as usize >= self.gongs.len() {
            return Err(Error::Bounds {
                field: "gong",
                value: key.gong as i64,
                min: 0,
                max: self.gongs.len() as i64 - 1,
            });
        }
        if key.year < 1 || key.year > self.max_years {
            return Err(Error::Bounds {
                field: "year",
                value: key.year as i64,
                min: 1,
                max: self.max_years as i64,
            });
        }
        if key.month < 1 || key.month > self.months_per_year {
            return Err(Error::Bounds {
                field: "month",
                value: key.month as i64,
                min: 1,
                max: self.months_per_year as i64,
            });
        }
        Ok(())
    }

    /// `gong·(Y·M) + (year−1)·M + (month−1)`.
    pub fn key_to_ordinal(&self, key: &TimeKey) -> Result<u64> {
        self.check_key(key)?;
        let (y, m) = (self.max_years as u64, self.months_per_year as u64);
        Ok(key.gong as u64 * y * m + (key.year as u64 - 1) * m + (key.month as u64 - 1))
    }

    pub fn ordinal_to_key(&self, ordinal: u64) -> Result<TimeKey> {
        let (y, m) = (self.max_years as u64, self.months_per_year as u64);
        let key = TimeKey {
            gong: (ordinal / (y * m)) as u32,
            year: ((ordinal / m) % y) as u32 + 1,
            month: (ordinal % m) as u32 + 1,
        };
        self.check_key(&key)?;
        Ok(key)
    }

    /// Normalized position of soft 0-based coordinates on the linearized grid.
    pub fn linearize_soft(&self, g: f64, y: f64, m: f64) -> Result<f64> {
        let check = |name: &str, v: f64, hi: u32| {
            if !v.is_finite() || v < 0.0 || v > (hi - 1) as f64 {
                Err(Error::Domain(format!("{name} = {v} outside [0, {}]", hi - 1)))
            } else {
                Ok(())
            }
        };
        check("g", g, self.num_gongs)?;
        check("y", y, self.max_years)?;
        check("m", m, self.months_per_year)?;
        Ok(self.linearize_unchecked(g, y, m))
    }

    pub(crate) fn linearize_unchecked(&self, g: f64, y: f64, m: f64) -> f64 {
        let (yf, mf) = (self.max_years as f64, self.months_per_year as f64);
        (g * (yf * mf) + y * mf + m) / (self.grid_size() as f64 - 1.0)
    }

    /// Regular calendar months of every reign, in calendar order.
    pub fn calendar_months(&self) -> Vec<TimeKey> {
        let mut out = Vec::new();
        for gong in 0..self.gongs.len() as u32 {
            for year in 1..=self.reign_length(gong) {
                for month in 1..=self.regular_months {
                    out.push(TimeKey { gong, year, month });
                }
            }
        }
        out
    }

    /// First and last regular months of the whole calendar.
    pub fn full_timeline(&self) -> Interval {
        let last = self.gongs.len() as u32 - 1;
        Interval {
            start: TimeKey::new(0, 1, 1),
            end: TimeKey::new(last, self.reign_length(last), self.regular_months),
        }
    }

    /// Traditional key phrase, e.g. `鲁隐公元年二月`.
    pub fn render_key(&self, key: &TimeKey) -> String {
        let gong = self
            .gongs
            .get(key.gong as usize)
            .map(String::as_str)
            .unwrap_or("?");
        let year = if key.year == 1 {
            "元".to_string()
        } else {
            render_numeral(key.year)
        };
        let month = if Some(key.month) == self.intercalary_month() {
            self.lexicon.intercalary_marker.clone()
        } else if key.month == 1 {
            self.lexicon.first_month.clone()
        } else {
            render_numeral(key.month)
        };
        format!("{}{gong}{year}年{month}月", self.lexicon.state_prefix)
    }

    /// Canonical JSON used for persistence and hashing.
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string(self).expect("manifest serializes")
    }

    pub fn fingerprint(&self) -> u64 {
        crate::embed::fnv1a64(self.to_canonical_json().as_bytes())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading manifest {}", path.display()), e))?;
        let manifest: Self = serde_json::from_str(&text)?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)
            .map_err(|e| Error::io(format!("writing manifest {}", path.display()), e))
    }
}

const DIGITS: [char; 9] = ['一', '二', '三', '四', '五', '六', '七', '八', '九'];

/// Renders 1..=99 as a Chinese numeral (`十`, `十一`, `二十`, `二十一`).
pub fn render_numeral(n: u32) -> String {
    assert!((1..100).contains(&n), "numeral {n} outside 1..=99");
    let (tens, ones) = (n / 10, n % 10);
    let mut s = String::new();
    if tens > 1 {
        s.push(DIGITS[tens as usize - 1]);
    }
    if tens > 0 {
        s.push('十');
    }
    if ones > 0 {
        s.push(DIGITS[ones as usize - 1]);
    }
    s
}

/// Parses Chinese numerals as used in annal dates, including `元`, `正`,
/// `廿`, `卅` and the classical connector `有` (`十有二`).
pub fn parse_numeral(s: &str) -> Option<u32> {
    if s == "元" || s == "正" {
        return Some(1);
    }
    let mut total = 0u32;
    let mut current = 0u32;
    let mut any = false;
    for c in s.chars() {
        any = true;
        match c {
            '有' => {}
            '十' => {
                total += if current == 0 { 1 } else { current } * 10;
                current = 0;
            }
            '廿' => total += 20,
            '卅' => total += 30,
            _ => {
                let d = DIGITS.iter().position(|&x| x == c)? as u32 + 1;
                if current != 0 {
                    return None;
                }
                current = d;
            }
        }
    }
    let value = total + current;
    (any && value > 0).then_some(value)
}

/// The scanner's running `(gong, year, month)` triple.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ScannerState {
    pub current_gong: Option<u32>,
    pub current_year: Option<u32>,
    pub current_month: Option<u32>,
}

impl ScannerState {
    fn key(&self) -> Option<TimeKey> {
        Some(TimeKey {
            gong: self.current_gong?,
            year: self.current_year?,
            month: self.current_month?,
        })
    }
}

/// Which rule fired on a line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cue {
    FullReign,
    Accession,
    Year,
    Month,
    Inherit,
}

/// Streaming normalizer from annal lines to month keys.
#[derive(Debug)]
pub struct Scanner<'m> {
    manifest: &'m CalendarManifest,
    state: ScannerState,
    line_no: usize,
    year_re: Regex,
    month_re: Regex,
}

const NUMERAL_CLASS: &str = "元正一二三四五六七八九十廿卅有";

impl<'m> Scanner<'m> {
    pub fn new(manifest: &'m CalendarManifest) -> Self {
        let lex = &manifest.lexicon;
        let year_re = Regex::new(&format!(
            r"^(?:{prefix})?(?P<ruler>\p{{Han}}{{1,2}}?{suffix})?(?P<year>[{NUMERAL_CLASS}]+)年",
            prefix = regex::escape(&lex.state_prefix),
            suffix = regex::escape(&lex.ruler_suffix),
        ))
        .expect("year regex");
        let month_re = Regex::new(&format!(
            r"{leap}[{NUMERAL_CLASS}]*月|(?P<num>[{first}一二三四五六七八九十有]+)月",
            leap = regex::escape(&lex.intercalary_marker),
            first = regex::escape(&lex.first_month),
        ))
        .expect("month regex");
        Self {
            manifest,
            state: ScannerState::default(),
            line_no: 0,
            year_re,
            month_re,
        }
    }

    /// Scanner whose state before the first line is `seed`.
    pub fn with_seed(manifest: &'m CalendarManifest, seed: TimeKey) -> Result<Self> {
        manifest.check_key(&seed)?;
        let mut scanner = Self::new(manifest);
        scanner.state = ScannerState {
            current_gong: Some(seed.gong),
            current_year: Some(seed.year),
            current_month: Some(seed.month),
        };
        Ok(scanner)
    }

    pub fn state(&self) -> ScannerState {
        self.state
    }

    fn parse_month(&self, line: &str) -> Result<Option<u32>> {
        let Some(caps) = self.month_re.captures(line) else {
            return Ok(None);
        };
        let month = match caps.name("num") {
            Some(num) => {
                let text = num.as_str();
                let value = if text == self.manifest.lexicon.first_month {
                    Some(1)
                } else {
                    parse_numeral(text)
                };
                match value {
                    Some(v) => v,
                    None => return Ok(None),
                }
            }
            None => self.manifest.intercalary_month().ok_or_else(|| {
                Error::Domain(format!(
                    "line {}: intercalary month but the manifest reserves no slot",
                    self.line_no
                ))
            })?,
        };
        if month > self.manifest.months_per_year {
            return Err(Error::Bounds {
                field: "month",
                value: month as i64,
                min: 1,
                max: self.manifest.months_per_year as i64,
            });
        }
        Ok(Some(month))
    }

    /// Consumes one line and returns its key together with the rule applied.
    pub fn feed(&mut self, line: &str) -> Result<(TimeKey, Cue)> {
        self.line_no += 1;
        let line_no = self.line_no;
        let month = self.parse_month(line)?;
        let accession = self
            .manifest
            .lexicon
            .accession_markers
            .iter()
            .any(|m| line.contains(m.as_str()));

        let mut ruler = None;
        let mut year = None;
        if let Some(caps) = self.year_re.captures(line) {
            year = parse_numeral(&caps["year"]);
            if let Some(r) = caps.name("ruler") {
                let name = r.as_str();
                ruler = Some(self.manifest.gong_index(name).ok_or_else(|| Error::UnknownGong {
                    name: name.to_string(),
                    line: line_no,
                })?);
            }
        }
        if let Some(y) = year {
            if y > self.manifest.max_years {
                return Err(Error::Bounds {
                    field: "year",
                    value: y as i64,
                    min: 1,
                    max: self.manifest.max_years as i64,
                });
            }
        }

        let cue = match (ruler, year) {
            (Some(g), Some(y)) => {
                self.set(g, y, month.unwrap_or(1));
                Cue::FullReign
            }
            (None, Some(1)) if self.state.current_gong.is_none() => {
                self.set(0, 1, month.unwrap_or(1));
                Cue::FullReign
            }
            (None, Some(1)) => {
                let next = self.next_gong(line_no)?;
                self.set(next, 1, month.unwrap_or(1));
                Cue::Accession
            }
            (None, None) if accession => {
                let next = self.next_gong(line_no)?;
                self.set(next, 1, month.unwrap_or(1));
                Cue::Accession
            }
            (None, Some(y)) => {
                let g = self
                    .state
                    .current_gong
                    .ok_or(Error::UnanchoredStream { line: line_no })?;
                self.set(g, y, month.unwrap_or(1));
                Cue::Year
            }
            (Some(_), None) => unreachable!("year regex requires a year"),
            (None, None) => match month {
                Some(m) => {
                    if self.state.key().is_none() {
                        return Err(Error::UnanchoredStream { line: line_no });
                    }
                    self.state.current_month = Some(m);
                    Cue::Month
                }
                None => Cue::Inherit,
            },
        };
        let key = self
            .state
            .key()
            .ok_or(Error::UnanchoredStream { line: line_no })?;
        Ok((key, cue))
    }

    fn next_gong(&self, line: usize) -> Result<u32> {
        let next = self.state.current_gong.map_or(0, |g| g + 1);
        if next as usize >= self.manifest.gongs.len() {
            return Err(Error::UnknownGong {
                name: format!("<accession #{next} beyond manifest>"),
                line,
            });
        }
        Ok(next)
    }

    fn set(&mut self, gong: u32, year: u32, month: u32) {
        self.state = ScannerState {
            current_gong: Some(gong),
            current_year: Some(year),
            current_month: Some(month),
        };
    }
}

/// Scans an ordered stream, returning each line paired with its key.
pub fn scan_annal_stream<S: AsRef<str>>(
    lines: &[S],
    manifest: &CalendarManifest,
    seed: Option<TimeKey>,
) -> Result<Vec<(String, TimeKey)>> {
    let mut scanner = match seed {
        Some(seed) => Scanner::with_seed(manifest, seed)?,
        None => Scanner::new(manifest),
    };
    lines
        .iter()
        .map(|line| {
            let (key, _) = scanner.feed(line.as_ref())?;
            Ok((line.as_ref().to_string(), key))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lu() -> CalendarManifest {
        CalendarManifest::new(
            vec!["隐公".into(), "桓公".into(), "庄公".into()],
            12,
            33,
            13,
        )
        .unwrap()
    }

    fn grid(g: u32, y: u32, m: u32) -> CalendarManifest {
        let gongs = (0..g).map(|i| format!("g{i}")).collect();
        CalendarManifest::new(gongs, g, y, m).unwrap()
    }

    #[test]
    fn ordinal_examples() {
        let m = lu();
        assert_eq!(m.key_to_ordinal(&TimeKey::new(0, 1, 1)).unwrap(), 0);
        assert_eq!(m.key_to_ordinal(&TimeKey::new(0, 1, 3)).unwrap(), 2);
        let m = grid(4, 8, 12);
        assert_eq!(m.key_to_ordinal(&TimeKey::new(1, 2, 5)).unwrap(), 112);
    }

    #[test]
    fn ordinal_bounds_name_field() {
        let m = grid(4, 8, 12);
        let err = m.key_to_ordinal(&TimeKey::new(0, 1, 13)).unwrap_err();
        assert!(matches!(err, Error::Bounds { field: "month", .. }), "{err}");
        let err = m.key_to_ordinal(&TimeKey::new(0, 9, 1)).unwrap_err();
        assert!(matches!(err, Error::Bounds { field: "year", .. }));
        let err = m.key_to_ordinal(&TimeKey::new(4, 1, 1)).unwrap_err();
        assert!(matches!(err, Error::Bounds { field: "gong", .. }));
    }

    #[test]
    fn linearize_examples() {
        let m = grid(4, 8, 12);
        assert_eq!(m.linearize_soft(0.0, 0.0, 0.0).unwrap(), 0.0);
        assert_eq!(m.linearize_soft(3.0, 7.0, 11.0).unwrap(), 1.0);
        // 1·96 + 2·12 + 4 = 124
        let u = m.linearize_soft(1.0, 2.0, 4.0).unwrap();
        assert!((u - 124.0 / 383.0).abs() < 1e-15);
        assert!(m.linearize_soft(-0.1, 0.0, 0.0).is_err());
        assert!(m.linearize_soft(0.0, 8.0, 0.0).is_err());
        assert!(m.linearize_soft(0.0, 0.0, f64::NAN).is_err());
    }

    #[test]
    fn numerals() {
        for n in 1..100 {
            assert_eq!(parse_numeral(&render_numeral(n)), Some(n), "{n}");
        }
        assert_eq!(parse_numeral("元"), Some(1));
        assert_eq!(parse_numeral("十有二"), Some(12));
        assert_eq!(parse_numeral("廿三"), Some(23));
        assert_eq!(parse_numeral("卅"), Some(30));
        assert_eq!(parse_numeral("二三"), None);
        assert_eq!(parse_numeral(""), None);
    }

    #[test]
    fn render_keys() {
        let m = lu();
        assert_eq!(m.render_key(&TimeKey::new(0, 1, 2)), "鲁隐公元年二月");
        assert_eq!(m.render_key(&TimeKey::new(1, 12, 1)), "鲁桓公十二年正月");
        assert_eq!(m.render_key(&TimeKey::new(1, 3, 13)), "鲁桓公三年闰月");
    }

    #[test]
    fn scanner_table_cases() {
        let m = lu();
        let lines = [
            "元年，春，王正月。",
            "三月，公及邾仪父盟于蔑。",
            "二年，春，公会戎于潜。",
            "元年，春，王正月，公即位。",
        ];
        let keys: Vec<_> = scan_annal_stream(&lines, &m, None)
            .unwrap()
            .into_iter()
            .map(|(_, k)| k)
            .collect();
        assert_eq!(
            keys,
            vec![
                TimeKey::new(0, 1, 1),
                TimeKey::new(0, 1, 3),
                TimeKey::new(0, 2, 1),
                TimeKey::new(1, 1, 1),
            ]
        );
    }

    #[test]
    fn scanner_cues_and_inheritance() {
        let m = lu();
        let mut s = Scanner::new(&m);
        assert_eq!(s.feed("元年，春，王正月。").unwrap().1, Cue::FullReign);
        assert_eq!(s.feed("公子益师卒。").unwrap(), (TimeKey::new(0, 1, 1), Cue::Inherit));
        assert_eq!(s.feed("冬，十有二月，祭伯来。").unwrap(), (TimeKey::new(0, 1, 12), Cue::Month));
        assert_eq!(s.feed("三年，春，王二月。").unwrap(), (TimeKey::new(0, 3, 2), Cue::Year));
        assert_eq!(s.feed("闰月，不告月。").unwrap(), (TimeKey::new(0, 3, 13), Cue::Month));
        assert_eq!(s.feed("庄公元年，春，王正月。").unwrap(), (TimeKey::new(2, 1, 1), Cue::FullReign));
    }

    #[test]
    fn scanner_errors() {
        let m = lu();
        let err = scan_annal_stream(&["三月，公及邾仪父盟于蔑。"], &m, None).unwrap_err();
        assert!(matches!(err, Error::UnanchoredStream { line: 1 }));
        let err = scan_annal_stream(&["二年，春。"], &m, None).unwrap_err();
        assert!(matches!(err, Error::UnanchoredStream { line: 1 }));
        let err = scan_annal_stream(&["元年，春。", "文公元年，春，王正月。"], &m, None).unwrap_err();
        assert!(matches!(err, Error::UnknownGong { line: 2, .. }), "{err}");
        let err = scan_annal_stream(
            &["元年。", "元年，公即位。", "元年，公即位。", "元年，公即位。"],
            &m,
            None,
        )
        .unwrap_err();
        assert!(matches!(err, Error::UnknownGong { line: 4, .. }));
    }

    #[test]
    fn seeded_stream() {
        let m = lu();
        let out = scan_annal_stream(&["五月，郑伯克段于鄢。"], &m, Some(TimeKey::new(0, 1, 1))).unwrap();
        assert_eq!(out[0].1, TimeKey::new(0, 1, 5));
    }

    #[test]
    fn overlap_examples() {
        let m = lu();
        let q = Interval::new(TimeKey::new(0, 1, 1), TimeKey::new(0, 1, 3)).unwrap();
        let inside = Interval::point(TimeKey::new(0, 1, 2));
        let outside = Interval::point(TimeKey::new(0, 1, 4));
        assert!(interval_overlap(&q, &inside, &m).unwrap());
        assert!(!interval_overlap(&q, &outside, &m).unwrap());
        assert!(interval_overlap(&inside, &inside, &m).unwrap());
        assert!(Interval::new(TimeKey::new(0, 2, 1), TimeKey::new(0, 1, 1)).is_err());
    }

    #[test]
    fn manifest_validation() {
        assert!(CalendarManifest::new(vec![], 1, 1, 12).is_err());
        assert!(CalendarManifest::new(vec!["a".into(), "a".into()], 2, 1, 12).is_err());
        assert!(CalendarManifest::new(vec!["a".into(), "b".into()], 1, 1, 12).is_err());
        assert!(CalendarManifest::new(vec!["a".into()], 1, 1, 11).is_err());
    }

    #[test]
    fn manifest_json_round_trip() {
        let m = CalendarManifest::with_reigns(vec!["隐公".into(), "桓公".into()], vec![11, 18], 13).unwrap();
        let json = m.to_canonical_json();
        assert!(json.starts_with(r#"{"gongs":["隐公","桓公"],"G":2,"Y":18,"M":13"#), "{json}");
        let back: CalendarManifest = serde_json::from_str(&json).unwrap();
        assert_eq!(back, m);
        assert_eq!(m.calendar_months().len(), (11 + 18) * 12);
        assert_eq!(m.full_timeline().end, TimeKey::new(1, 18, 12));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn key_in(g: u32, y: u32, m: u32) -> impl Strategy<Value = TimeKey> {
            (0..g, 1..=y, 1..=m).prop_map(|(g, y, m)| TimeKey::new(g, y, m))
        }

        proptest! {
            #[test]
            fn ordinal_is_order_isomorphism(a in key_in(4, 8, 13), b in key_in(4, 8, 13)) {
                let m = grid(4, 8, 13);
                let (oa, ob) = (m.key_to_ordinal(&a).unwrap(), m.key_to_ordinal(&b).unwrap());
                prop_assert_eq!(oa.cmp(&ob), a.cmp(&b));
                prop_assert!(oa < m.grid_size());
                prop_assert_eq!(m.ordinal_to_key(oa).unwrap(), a);
            }

            #[test]
            fn overlap_matches_enumeration(
                s1 in 0u64..40, l1 in 0u64..6, s2 in 0u64..40, l2 in 0u64..6
            ) {
                let m = grid(1, 4, 12);
                let k = |o: u64| m.ordinal_to_key(o.min(47)).unwrap();
                let q = Interval::new(k(s1), k(s1 + l1)).unwrap();
                let i = Interval::new(k(s2), k(s2 + l2)).unwrap();
                let months = |iv: &Interval| {
                    let (a, b) = (m.key_to_ordinal(&iv.start).unwrap(), m.key_to_ordinal(&iv.end).unwrap());
                    (a..=b).collect::<Vec<_>>()
                };
                let brute = months(&q).iter().any(|x| months(&i).contains(x));
                prop_assert_eq!(interval_overlap(&q, &i, &m).unwrap(), brute);
                prop_assert_eq!(interval_overlap(&i, &q, &m).unwrap(), brute);
            }

            #[test]
            fn scanning_is_prefix_stable(cut in 0usize..8) {
                let m = lu();
                let lines = [
                    "元年，春，王正月。", "三月，盟于蔑。", "夏，五月，郑伯克段于鄢。", "秋，七月。",
                    "二年，春，公会戎于潜。", "十有二月，乙卯。", "元年，春，王正月，公即位。", "三月。",
                ];
                let full = scan_annal_stream(&lines, &m, None).unwrap();
                let prefix = scan_annal_stream(&lines[..cut], &m, None).unwrap();
                prop_assert_eq!(&full[..cut], &prefix[..]);
            }
        }
    }
}
