//! Derives a normality shift from feature clusters instead of
//! generator metadata.
//!
//! On a real dataset there is no ground-truth unseen group, so one is
//! constructed: k-means over normal-node features, smallest cluster
//! held out. Held-out nodes lose their train and validation membership
//! and become test-only, which keeps any later pretraining blind to
//! them.

use shiftguard::benchmark::{construct_shift_kmeans, remove_unseen, synth_graph, ShiftSpec, SynthConfig};
use shiftguard::Result;

fn count(flags: &[bool]) -> usize {
    flags.iter().filter(|&&f| f).count()
}

fn main() -> Result<()> {
    // A labeled graph with no unseen metadata stands in for raw data.
    let base = remove_unseen(&synth_graph(&SynthConfig::default())?)?;
    println!(
        "base graph: {} nodes, train {} / val {} / test {}",
        base.n(),
        count(&base.masks().train),
        count(&base.masks().val),
        count(&base.masks().test)
    );

    let spec = ShiftSpec { num_clusters: 4, ..ShiftSpec::default() };
    let shifted = construct_shift_kmeans(&base, &spec, 0)?;

    let unseen = count(shifted.unseen_flags());
    println!(
        "after k-means holdout ({} clusters): {} nodes marked unseen",
        spec.num_clusters, unseen
    );
    println!(
        "shifted masks: train {} / val {} / test {}",
        count(&shifted.masks().train),
        count(&shifted.masks().val),
        count(&shifted.masks().test)
    );

    let in_test = shifted
        .unseen_flags()
        .iter()
        .zip(&shifted.masks().test)
        .filter(|&(&u, &t)| u && t)
        .count();
    println!("unseen nodes routed to test: {in_test} of {unseen}");
    Ok(())
}
