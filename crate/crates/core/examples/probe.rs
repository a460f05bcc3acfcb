//! Scratch diagnostics for the reference experiment.
use ordet_core::anchors::{assign, generate_anchors, AnchorLabel};
use ordet_core::losses::{combined_loss, DistillConfig, FocalParams};
use ordet_core::orchestrate::*;
use ordet_core::toynet::{DetectorParams, FEATURE_STRIDE};

fn main() {
    let cfg = ExperimentConfig::reference();
    let (train, _) = build_dataset(&cfg.dataset);
    let anchors = generate_anchors(64, &[FEATURE_STRIDE], &cfg.anchors.scales, &cfg.anchors.ratios).unwrap();
    let scene = &train[0];
    let boxes: Vec<_> = scene.annotations.iter().map(|a| a.rect).collect();
    let classes: Vec<_> = scene.annotations.iter().map(|a| a.class).collect();
    let assignment = assign(&anchors, &boxes, &classes, 0.5, 0.4).unwrap();
    let n_pos = assignment.num_positive();
    println!("objects {} positances {}", boxes.len(), n_pos);
    for (a, l) in assignment.labels.iter().enumerate() {
        if let AnchorLabel::Positive { gt, .. } = l {
            let an = &anchors[a].rect;
            let g = &boxes[*gt];
            println!("  anchor ({:.0},{:.0},{:.1},{:.1}) -> gt ({:.1},{:.1},{:.1},{:.1},{:.2})",
                an.cx, an.cy, an.w, an.h, g.cx, g.cy, g.w, g.h, g.theta);
        }
    }
    let params = DetectorParams::init(16, 3, 4, 7, 0.01);
    let (out, _) = params.forward(&scene.image).unwrap();
    let hard = DistillConfig { lambda3: 0.0, lambda4: 0.0, ..cfg.distill };
    let lb = combined_loss(&out, None, &anchors, &assignment, &boxes, &hard, &cfg.focal).unwrap();
    let gmax_log = lb.d_logits.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let gmax_reg = lb.d_deltas.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let gsum_log: f64 = lb.d_logits.iter().map(|g| g*g).sum::<f64>().sqrt();
    let gsum_reg: f64 = lb.d_deltas.iter().map(|g| g*g).sum::<f64>().sqrt();
    println!("l_cls {:.4} l_reg {:.4}", lb.l_cls, lb.l_reg);
    println!("d_logits max {gmax_log:.5} norm {gsum_log:.5}");
    println!("d_deltas max {gmax_reg:.5} norm {gsum_reg:.5}");
}
