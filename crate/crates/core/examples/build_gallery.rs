//! Builds a gallery from dated records: validation, no_event placeholders for
//! empty months, and contiguous per-reign train/validation/test blocks.

use chronokey::corpus::{validate_records, SplitRatios};
use chronokey::{CalendarManifest, Gallery, Record, RecordType, TimeKey};

fn main() -> chronokey::Result<()> {
    let manifest = CalendarManifest::with_reigns(vec!["隐公".into(), "桓公".into()], vec![3, 2], 12)?;
    let records: Vec<Record> = [(0, 1, 1, "公即位"), (0, 1, 5, "郑伯克段于鄢"), (0, 3, 2, "日有食之"), (1, 2, 7, "宋督弑其君")]
        .iter()
        .enumerate()
        .map(|(i, &(g, y, m, text))| Record {
            id: format!("r{i}"),
            text: text.to_string(),
            key: TimeKey::new(g, y, m),
            rtype: RecordType::Event,
            source: "annals".into(),
            split: None,
        })
        .collect();
    let report = validate_records(&manifest, &records);
    println!("violations: {}", report.violations.len());

    let gallery = Gallery::new(manifest.clone(), records)?;
    let (gallery, added) = gallery.synthesize_no_event(&manifest.full_timeline())?;
    let (gallery, warnings) = gallery.assign_splits(SplitRatios::default(), 0)?;
    println!("{added} no_event placeholders, {} records", gallery.len());
    for w in warnings {
        println!("warning: {w}");
    }
    for key in manifest.calendar_months() {
        let split = gallery.month_split(&key).map_or("-", |s| s.as_str());
        print!("{}", &split[..1]);
        if key.month == 12 {
            print!(" ");
        }
    }
    println!();
    Ok(())
}
