//! Pretrains the encoder and detector on a clean graph, then reports
//! the learning curve and held-out metrics. The returned model is
//! frozen; everything downstream treats it as read-only.

use shiftguard::benchmark::{evaluate_scores, remove_unseen, synth_graph, SynthConfig};
use shiftguard::gadmodel::{detect, encode, pretrain_with_history, PretrainConfig};
use shiftguard::graph::sym_normalize;
use shiftguard::Result;

fn main() -> Result<()> {
    let clean = remove_unseen(&synth_graph(&SynthConfig::default())?)?;
    let (model, history) = pretrain_with_history(&clean, &PretrainConfig::default())?;

    println!(
        "trained {} epochs, early-stop checkpoint at epoch {}",
        history.train_loss.len(),
        history.best_epoch
    );
    for epoch in (0..history.train_loss.len()).step_by(50) {
        println!(
            "  epoch {epoch:>3}  train loss {:.4}  val auroc {:.4}",
            history.train_loss[epoch], history.val_auroc[epoch]
        );
    }

    let h = encode(&sym_normalize(&clean), clean.features(), &model)?;
    let report = evaluate_scores(&clean, &detect(&h, &model)?)?;
    println!("test auroc {:.4}  test auprc {:.4}", report.auroc, report.auprc);
    Ok(())
}
