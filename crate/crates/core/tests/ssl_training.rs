use porc_core::ssl::{pretrain, SslHyper, SslState};
use porc_core::synth::two_cluster_patches;

// Teacher entropy climbs as centering kicks in and the teacher temperature
// warms, so raw cross-entropy rises; the distillation gap (cross-entropy
// minus teacher entropy) is what training shrinks.
#[test]
fn two_cluster_pretraining_closes_the_distillation_gap_without_collapse() {
    let mut st = SslState::new(SslHyper { epochs: 20, steps_per_epoch: 10, ..SslHyper::default() }).unwrap();
    let log = pretrain(&mut st, &two_cluster_patches(32, 96, 3), 200).unwrap();
    let gap = |i: usize| log[i].dino_loss - log[i].teacher_entropy;
    assert!(gap(199) < gap(0), "gap {} -> {}", gap(0), gap(199));
    let floor = 0.1 * (st.hyper.model.prototypes as f64).ln();
    // Step 0 runs before the first center update.
    for m in &log[1..] {
        assert!(m.teacher_entropy > floor, "step {} entropy {}", m.step, m.teacher_entropy);
    }
    assert!(log.iter().all(|m| m.total_loss.is_finite()));
}
