//! Month-level temporal retrieval over annalistic chronicles.

pub mod calendar;
pub mod corpus;
pub mod cli;
pub mod ctd;
pub mod embed;
pub mod error;
pub mod eval;
pub mod lexical;
pub mod querygen;
pub mod synth;
pub mod trainer;

pub use calendar::{CalendarManifest, Interval, TimeKey};
pub use corpus::{Gallery, Record, RecordType, Split};
pub use error::{Error, Result};
