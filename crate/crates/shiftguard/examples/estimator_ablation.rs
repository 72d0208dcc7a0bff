//! Compares adaptation with and without the dual-branch estimator
//! across several benchmark seeds.
//!
//! With the estimator off, the dual branch is the frozen ego encoding
//! and agreement pulls the aligner all the way toward it. The
//! estimator, refit each round on confidently normal nodes, lets the
//! dual branch meet the main branch partway instead.

use shiftguard::benchmark::{evaluate_scores, remove_unseen, synth_graph, SynthConfig};
use shiftguard::gadmodel::{detect, encode, pretrain, GadModel, PretrainConfig};
use shiftguard::graph::{sym_normalize, Graph};
use shiftguard::tune::{adapt, align, AdaptConfig};
use shiftguard::Result;

fn adapted_auroc(g: &Graph, m: &GadModel, cfg: &AdaptConfig) -> Result<f64> {
    let (aligner, _, _) = adapt(g, m, cfg)?;
    let aligned = align(g.features(), &aligner)?;
    let h = encode(&sym_normalize(g), &aligned, m)?;
    Ok(evaluate_scores(g, &detect(&h, m)?)?.auroc)
}

fn main() -> Result<()> {
    let seeds: Vec<u64> = (0..5).collect();
    let mut on_sum = 0.0;
    let mut off_sum = 0.0;

    println!("seed   estimator on   estimator off");
    for &seed in &seeds {
        let shifted = synth_graph(&SynthConfig { seed, ..SynthConfig::default() })?;
        let clean = remove_unseen(&shifted)?;
        let model = pretrain(&clean, &PretrainConfig { seed, ..PretrainConfig::default() })?;

        let base = AdaptConfig { seed, ..AdaptConfig::default() };
        let on = adapted_auroc(&shifted, &model, &base)?;
        let off = adapted_auroc(
            &shifted,
            &model,
            &AdaptConfig { estimator_enabled: false, ..base },
        )?;
        on_sum += on;
        off_sum += off;
        println!("{seed:>4}   {on:>12.4}   {off:>13.4}");
    }

    let n = seeds.len() as f64;
    println!("mean   {:>12.4}   {:>13.4}", on_sum / n, off_sum / n);
    Ok(())
}
