//! Groups per-node anomaly-probability shifts by unseen-neighbor
//! fraction.
//!
//! Aggregation mixes unseen-normal representations into their
//! neighbors, so a frozen detector drifts most where unseen nodes
//! dominate a neighborhood. The bin means expose that dose-response
//! relationship; the zero bin isolates nodes whose neighborhoods the
//! shift never touched.

use shiftguard::benchmark::{contamination_study, remove_unseen, synth_graph, SynthConfig};
use shiftguard::gadmodel::{pretrain, PretrainConfig};
use shiftguard::Result;

fn main() -> Result<()> {
    let shifted = synth_graph(&SynthConfig::default())?;
    let clean = remove_unseen(&shifted)?;
    let model = pretrain(&clean, &PretrainConfig::default())?;

    let bins = contamination_study(&clean, &shifted, &model)?;
    println!("unseen-neighbor fraction   nodes   mean probability shift");
    for bin in &bins {
        let range = if bin.hi == bin.lo {
            format!("exactly {:.2}", bin.lo)
        } else {
            format!("({:.2}, {:.2}]", bin.lo, bin.hi)
        };
        match bin.mean_delta {
            Some(delta) => println!("  {range:<22} {:>5}   {delta:+.4}", bin.count),
            None => println!("  {range:<22} {:>5}", bin.count),
        }
    }
    Ok(())
}
