//! Assigns month keys to an ordered stream of annal lines. Lines without a
//! date cue inherit the running key.

use chronokey::calendar::scan_annal_stream;
use chronokey::CalendarManifest;

const ANNALS: &[&str] = &[
    "元年，春，王正月。",
    "三月，公及邾仪父盟于蔑。",
    "夏五月，郑伯克段于鄢。",
    "秋七月，天王使宰咺来归惠公、仲子之赗。",
    "九月，及宋人盟于宿。",
    "二年，春，公会戎于潜。",
    "夏五月，莒人入向。",
    "元年，春，王正月，公即位。",
];

fn main() -> chronokey::Result<()> {
    let manifest = CalendarManifest::new(vec!["隐公".into(), "桓公".into()], 2, 11, 13)?;
    for (line, key) in scan_annal_stream(ANNALS, &manifest, None)? {
        println!("{:<14} {line}", manifest.render_key(&key));
    }
    Ok(())
}
