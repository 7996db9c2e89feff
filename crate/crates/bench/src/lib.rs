//! Synthetic corpora shared by the benchmarks.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

const VOCABULARY: &[&str] = &[
    "synchronization", "signal", "block", "primary", "secondary", "timing", "recovery",
    "modulation", "carrier", "subcarrier", "symbol", "frame", "slot", "beam", "measurement",
    "configuration", "resource", "channel", "physical", "broadcast", "downlink", "uplink",
    "procedure", "report", "periodicity", "offset", "index", "cell", "detection", "reference",
];

/// `words` space-separated words drawn from a fixed technical vocabulary.
pub fn synthetic_text(seed: u64, words: usize) -> String {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut out = String::with_capacity(words * 10);
    for i in 0..words {
        if i > 0 {
            out.push(if rng.random_ratio(1, 12) { '\n' } else { ' ' });
        }
        out.push_str(VOCABULARY[rng.random_range(0..VOCABULARY.len())]);
    }
    out
}
