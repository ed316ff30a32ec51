//! Time keys, ordinals, linearized positions and rendered names on the Lu
//! reign calendar.

use chronokey::synth::LU_GONGS;
use chronokey::{CalendarManifest, TimeKey};

fn main() -> chronokey::Result<()> {
    let gongs: Vec<String> = LU_GONGS.iter().map(|g| g.to_string()).collect();
    let manifest = CalendarManifest::new(gongs, 12, 33, 13)?;
    println!("grid: {} month slots", manifest.grid_size());
    for key in [TimeKey::new(0, 1, 1), TimeKey::new(1, 3, 13), TimeKey::new(11, 33, 13)] {
        let ord = manifest.key_to_ordinal(&key)?;
        let u = manifest.linearize_soft(key.gong as f64, (key.year - 1) as f64, (key.month - 1) as f64)?;
        println!("{:<18} ordinal {ord:>4}  u {u:.6}", manifest.render_key(&key));
        assert_eq!(manifest.ordinal_to_key(ord)?, key);
    }
    Ok(())
}
