//! Round-trips every persisted artifact through its on-disk format:
//! graph bundle, frozen model, aligner, and estimator. Serialization
//! is canonical, so load followed by save reproduces identical files
//! and equal values.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use shiftguard::benchmark::{synth_graph, SynthConfig};
use shiftguard::gadmodel::{load_model, pretrain, save_model, PretrainConfig};
use shiftguard::graph::{load_bundle, save_bundle};
use shiftguard::tune::{load_aligner, load_estimator, save_aligner, save_estimator};
use shiftguard::tune::{AlignerParams, EstimatorParams};
use shiftguard::Result;

fn main() -> Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    let root = dir.path();

    let g = synth_graph(&SynthConfig {
        cluster_sizes: vec![30, 30],
        unseen_size: 20,
        anomaly_size: 10,
        feat_dim: 8,
        ..SynthConfig::default()
    })?;
    save_bundle(&g, &root.join("bundle"))?;
    let g2 = load_bundle(&root.join("bundle"))?;
    assert!(g2 == g, "bundle roundtrip changed the graph");
    println!("bundle: {} nodes, {} arcs, values preserved", g2.n(), g2.arc_count());

    let model = pretrain(&g, &PretrainConfig { epochs: 30, hidden_dim: 8, repr_dim: 6, ..PretrainConfig::default() })?;
    save_model(&model, &root.join("model.json"))?;
    assert!(load_model(&root.join("model.json"))?.bits_eq(&model), "model roundtrip drifted");
    println!("model: weights bit-identical after reload");

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let aligner = AlignerParams::init(8, &mut rng);
    save_aligner(&aligner, &root.join("aligner.json"))?;
    assert!(load_aligner(&root.join("aligner.json"))? == aligner);

    let estimator = EstimatorParams::identity(6);
    save_estimator(&estimator, &root.join("estimator.json"))?;
    assert!(load_estimator(&root.join("estimator.json"))? == estimator);
    println!("aligner and estimator: parameters equal after reload");
    Ok(())
}
