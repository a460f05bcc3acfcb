//! Detection and distillation losses, each returning its value together
//! with the analytic gradient with respect to the student outputs.
//!
//! The combined objective is
//! `l_all = lambda1*l_cls + lambda2*l_reg + lambda3*l_kd_cls + lambda4*l_kd_reg`
//! with hard losses (focal classification, Gaussian-KLD regression)
//! against ground truth and soft losses (tempered KL on class scores,
//! softened smooth-L1 on box deltas) against a frozen teacher.

use serde::{Deserialize, Serialize};

use crate::anchors::{Anchor, AnchorLabel, AssignmentResult};
use crate::error::{Error, Result};
use crate::geometry::{
    box_to_gaussian, decode_deltas_parts, decode_jacobian, gaussian_from_parts, Deltas,
    Gaussian2D, RotatedBox,
};

/// Probability clamp for log terms.
const PROB_EPS: f64 = 1e-12;

/// Focal-loss shape parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FocalParams {
    pub gamma: f64,
    pub alpha: f64,
}

impl Default for FocalParams {
    fn default() -> Self {
        Self { gamma: 2.0, alpha: 0.25 }
    }
}

impl FocalParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidConfig(format!("focal gamma {} < 0", self.gamma)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "focal alpha {} outside (0, 1)",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Direction of the classification distillation KL term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KdDirection {
    /// `KL(student || teacher)`, the printed form.
    #[serde(rename = "as-printed")]
    AsPrinted,
    /// `KL(teacher || student)`, the conventional distillation order.
    #[serde(rename = "classic")]
    Classic,
}

/// Weights and temperatures of the combined objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistillConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
    /// Classification distillation temperature.
    pub t_cls: f64,
    /// Regression distillation temperature; divides the teacher-student
    /// delta difference before the piecewise smooth-L1.
    pub t_reg: f64,
    pub kd_direction: KdDirection,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 1.0,
            lambda3: 1.0,
            lambda4: 1.0,
            t_cls: 8.0,
            t_reg: 10.0,
            kd_direction: KdDirection::AsPrinted,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, l) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
            ("lambda4", self.lambda4),
        ] {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} = {l} must be >= 0")));
            }
        }
        if !(self.t_cls >= 1.0) || !(self.t_reg >= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "temperatures must be >= 1 (t_cls={}, t_reg={})",
                self.t_cls, self.t_reg
            )));
        }
        Ok(())
    }
}

/// Softmax of `logits / t` with max-subtraction for stability.
pub fn tempered_softmax(logits: &[f64], t: f64) -> Vec<f64> {
    assert!(t >= 1.0, "temperature must be >= 1, got {t}");
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = logits.iter().map(|z| ((z - m) / t).exp()).collect();
    let sum: f64 = p.iter().sum();
    for v in &mut p {
        *v /= sum;
    }
    p
}

/// Classification distillation loss between student and teacher logits.
///
/// Both logit sets pass through the tempered softmax; the KL value is
/// scaled by `t^2` so its gradient magnitude stays comparable across
/// temperatures. The teacher is a constant: no gradient flows to `z_t`.
/// Returns `(value, d value / d z_s)`.
pub fn kd_cls_loss(
    z_s: &[f64],
    z_t: &[f64],
    t: f64,
    direction: KdDirection,
) -> Result<(f64, Vec<f64>)> {
    if z_s.len() != z_t.len() {
        return Err(Error::ShapeMismatch(format!(
            "student has {} logits, teacher {}",
            z_s.len(),
            z_t.len()
        )));
    }
    let p = tempered_softmax(z_s, t);
    let q = tempered_softmax(z_t, t);
    let mut kl = 0.0;
    let mut log_ratio = vec![0.0; p.len()];
    match direction {
        KdDirection::AsPrinted => {
            // KL(p_s || p_t) = sum p_s (log p_s - log p_t)
            for i in 0..p.len() {
                let lr = (p[i].max(PROB_EPS)).ln() - (q[i].max(PROB_EPS)).ln();
                log_ratio[i] = lr;
                kl += p[i] * lr;
            }
            let value = t * t * kl;
            // d/dz_k = t * p_k * (log_ratio_k - kl)
            let grad = (0..p.len()).map(|k| t * p[k] * (log_ratio[k] - kl)).collect();
            Ok((value, grad))
        }
        KdDirection::Classic => {
            for i in 0..p.len() {
                let lr = (q[i].max(PROB_EPS)).ln() - (p[i].max(PROB_EPS)).ln();
                kl += q[i] * lr;
            }
            let value = t * t * kl;
            let grad = (0..p.len()).map(|k| t * (p[k] - q[k])).collect();
            Ok((value, grad))
        }
    }
}

/// Piecewise smooth-L1: quadratic inside the unit interval, linear
/// outside. Returns `(value, derivative)`.
pub fn smooth_l1(d: f64) -> (f64, f64) {
    if d.abs() <= 1.0 {
        (0.5 * d * d, d)
    } else {
        (d.abs() - 0.5, d.signum())
    }
}

/// Regression distillation loss between student and teacher deltas.
///
/// Per component the teacher-student difference is divided by `t_reg`
/// before the smooth-L1; the result is the mean over the five
/// components. Returns `(value, d value / d x_s)`.
pub fn kd_reg_loss(x_s: &Deltas, x_t: &Deltas, t_reg: f64) -> (f64, Deltas) {
    let n = x_s.len() as f64;
    let mut value = 0.0;
    let mut grad = [0.0; 5];
    for i in 0..x_s.len() {
        let d = (x_t[i] - x_s[i]) / t_reg;
        let (v, dv) = smooth_l1(d);
        value += v / n;
        grad[i] = -dv / (t_reg * n);
    }
    (value, grad)
}

/// Per-class sigmoid focal loss against a hard target.
///
/// `target` is the positive category, or `None` for background. Every
/// class contributes a binary term; positives weigh `alpha`, negatives
/// `1 - alpha`. Returns `(value, d value / d logits)`.
pub fn focal_loss(logits: &[f64], target: Option<usize>, params: &FocalParams) -> (f64, Vec<f64>) {
    if let Some(t) = target {
        assert!(t < logits.len(), "target class {t} out of range {}", logits.len());
    }
    let mut value = 0.0;
    let mut grad = vec![0.0; logits.len()];
    for (c, &z) in logits.iter().enumerate() {
        let positive = target == Some(c);
        let p = sigmoid(z);
        let clamped = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
        let p_t = if positive { clamped } else { 1.0 - clamped };
        let alpha_t = if positive { params.alpha } else { 1.0 - params.alpha };
        let one_m = 1.0 - p_t;
        value += -alpha_t * one_m.powf(params.gamma) * p_t.ln();

        // d/dp_t of -alpha (1-p)^g ln p, then chain through the sigmoid.
        let dfl_dpt = if params.gamma == 0.0 {
            -alpha_t / p_t
        } else {
            alpha_t * params.gamma * one_m.powf(params.gamma - 1.0) * p_t.ln()
                - alpha_t * one_m.powf(params.gamma) / p_t
        };
        let sig_prime = if p == clamped { p * (1.0 - p) } else { 0.0 };
        let dpt_dz = if positive { sig_prime } else { -sig_prime };
        grad[c] = dfl_dpt * dpt_dz;
    }
    (value, grad)
}

#[inline]
pub(crate) fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Kullback-Leibler divergence `KL(g_t || g_s)` between two 2-D
/// Gaussians:
/// `0.5 (tr(S_s^-1 S_t) + (mu_s-mu_t)^T S_s^-1 (mu_s-mu_t) - 2 + ln(|S_s|/|S_t|))`.
pub fn gaussian_kld(g_t: &Gaussian2D, g_s: &Gaussian2D) -> Result<f64> {
    g_t.validate()?;
    g_s.validate()?;
    let inv = g_s.inverse_sigma();
    let st = &g_t.sigma;
    let tr = inv[0][0] * st[0][0] + 2.0 * inv[0][1] * st[0][1] + inv[1][1] * st[1][1];
    let d = [g_s.mu[0] - g_t.mu[0], g_s.mu[1] - g_t.mu[1]];
    let quad = d[0] * (inv[0][0] * d[0] + inv[0][1] * d[1])
        + d[1] * (inv[1][0] * d[0] + inv[1][1] * d[1]);
    let log_det = g_s.det().ln() - g_t.det().ln();
    Ok((0.5 * (tr + quad - 2.0 + log_det)).max(0.0))
}

/// Gaussian-KLD box regression loss:
/// `1 - 1/(1 + ln(1 + KL(gaussian(gt) || gaussian(pred))))`, in `[0, 1)`.
/// Returns `(value, d value / d (cx, cy, w, h, theta) of pred)`.
pub fn gaussian_kld_reg_loss(pred: &RotatedBox, gt: &RotatedBox) -> (f64, [f64; 5]) {
    gaussian_kld_reg_loss_parts(
        [pred.cx, pred.cy, pred.w, pred.h, pred.theta],
        &box_to_gaussian(gt),
    )
}

/// Same loss on raw box fields; the training path chains through this
/// without long-edge re-normalization (the Gaussian form is invariant to
/// the representation choice).
pub(crate) fn gaussian_kld_reg_loss_parts(pred: [f64; 5], gt: &Gaussian2D) -> (f64, [f64; 5]) {
    let [cx, cy, w, h, theta] = pred;
    let g_s = gaussian_from_parts(cx, cy, w, h, theta);
    let inv = g_s.inverse_sigma();
    let st = &gt.sigma;

    let tr = inv[0][0] * st[0][0] + 2.0 * inv[0][1] * st[0][1] + inv[1][1] * st[1][1];
    let d = [cx - gt.mu[0], cy - gt.mu[1]];
    let inv_d = [inv[0][0] * d[0] + inv[0][1] * d[1], inv[1][0] * d[0] + inv[1][1] * d[1]];
    let quad = d[0] * inv_d[0] + d[1] * inv_d[1];
    let log_det = g_s.det().ln() - gt.det().ln();
    let kld = (0.5 * (tr + quad - 2.0 + log_det)).max(0.0);

    let value = 1.0 - 1.0 / (1.0 + kld.ln_1p());

    // dL/dD through the saturating transform.
    let denom = 1.0 + kld.ln_1p();
    let dl_dd = 1.0 / (denom * denom * (1.0 + kld));

    // Entrywise dD/dSigma_s = 0.5 (inv - inv*St*inv - inv*d*d^T*inv).
    let inv_st_inv = sym_sandwich(&inv, st);
    let inv_ddt_inv = [
        [inv_d[0] * inv_d[0], inv_d[0] * inv_d[1]],
        [inv_d[1] * inv_d[0], inv_d[1] * inv_d[1]],
    ];
    let g = [
        [
            0.5 * (inv[0][0] - inv_st_inv[0][0] - inv_ddt_inv[0][0]),
            0.5 * (inv[0][1] - inv_st_inv[0][1] - inv_ddt_inv[0][1]),
        ],
        [
            0.5 * (inv[1][0] - inv_st_inv[1][0] - inv_ddt_inv[1][0]),
            0.5 * (inv[1][1] - inv_st_inv[1][1] - inv_ddt_inv[1][1]),
        ],
    ];

    // Sigma = R diag(w^2/4, h^2/4) R^T differentiated in each box field.
    let (s, c) = theta.sin_cos();
    let (a, b) = (w * w * 0.25, h * h * 0.25);
    let ds_dw = [[0.5 * w * c * c, 0.5 * w * s * c], [0.5 * w * s * c, 0.5 * w * s * s]];
    let ds_dh = [[0.5 * h * s * s, -0.5 * h * s * c], [-0.5 * h * s * c, 0.5 * h * c * c]];
    let dtheta_off = (a - b) * (c * c - s * s);
    let ds_dtheta = [
        [-2.0 * (a - b) * s * c, dtheta_off],
        [dtheta_off, 2.0 * (a - b) * s * c],
    ];

    let grad = [
        dl_dd * inv_d[0],
        dl_dd * inv_d[1],
        dl_dd * frob(&g, &ds_dw),
        dl_dd * frob(&g, &ds_dh),
        dl_dd * frob(&g, &ds_dtheta),
    ];
    (value, grad)
}

#[inline]
fn sym_sandwich(a: &[[f64; 2]; 2], m: &[[f64; 2]; 2]) -> [[f64; 2]; 2] {
    // a * m * a for symmetric 2x2 inputs.
    let am = [
        [a[0][0] * m[0][0] + a[0][1] * m[1][0], a[0][0] * m[0][1] + a[0][1] * m[1][1]],
        [a[1][0] * m[0][0] + a[1][1] * m[1][0], a[1][0] * m[0][1] + a[1][1] * m[1][1]],
    ];
    [
        [
            am[0][0] * a[0][0] + am[0][1] * a[1][0],
            am[0][0] * a[0][1] + am[0][1] * a[1][1],
        ],
        [
            am[1][0] * a[0][0] + am[1][1] * a[1][0],
            am[1][0] * a[0][1] + am[1][1] * a[1][1],
        ],
    ]
}

#[inline]
fn frob(a: &[[f64; 2]; 2], b: &[[f64; 2]; 2]) -> f64 {
    a[0][0] * b[0][0] + a[0][1] * b[0][1] + a[1][0] * b[1][0] + a[1][1] * b[1][1]
}

/// Flat per-anchor head outputs: `num_anchors * num_classes` logits and
/// `num_anchors * 5` box deltas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadOutputs {
    pub num_anchors: usize,
    pub num_classes: usize,
    pub logits: Vec<f64>,
    pub deltas: Vec<f64>,
}

impl HeadOutputs {
    pub fn zeros(num_anchors: usize, num_classes: usize) -> Self {
        Self {
            num_anchors,
            num_classes,
            logits: vec![0.0; num_anchors * num_classes],
            deltas: vec![0.0; num_anchors * 5],
        }
    }

    pub fn logits_of(&self, anchor: usize) -> &[f64] {
        let c = self.num_classes;
        &self.logits[anchor * c..(anchor + 1) * c]
    }

    pub fn deltas_of(&self, anchor: usize) -> Deltas {
        let d = &self.deltas[anchor * 5..anchor * 5 + 5];
        [d[0], d[1], d[2], d[3], d[4]]
    }

    pub fn validate_shape(&self) -> Result<()> {
        if self.logits.len() != self.num_anchors * self.num_classes
            || self.deltas.len() != self.num_anchors * 5
        {
            return Err(Error::ShapeMismatch(format!(
                "head outputs: {} logits / {} deltas for {} anchors x {} classes",
                self.logits.len(),
                self.deltas.len(),
                self.num_anchors,
                self.num_classes
            )));
        }
        Ok(())
    }
}

/// Values and student-output gradients of the combined objective.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_cls: f64,
    pub l_reg: f64,
    pub l_kd_cls: f64,
    pub l_kd_reg: f64,
    pub l_all: f64,
    pub num_positive: usize,
    /// `d l_all / d logits`, aligned with [`HeadOutputs::logits`].
    #[serde(skip)]
    pub d_logits: Vec<f64>,
    /// `d l_all / d deltas`, aligned with [`HeadOutputs::deltas`].
    #[serde(skip)]
    pub d_deltas: Vec<f64>,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        self.l_all.is_finite()
            && self.d_logits.iter().all(|g| g.is_finite())
            && self.d_deltas.iter().all(|g| g.is_finite())
    }
}

/// Combined per-image objective over an anchor set.
///
/// Reductions follow the dense-detector convention: focal classification
/// is summed over non-ignored anchors and normalized by the positive
/// count, both regression terms average over positive anchors, and the
/// classification distillation term averages over every anchor. All
/// reductions run in anchor-index order so results are bitwise
/// deterministic. With no positive anchors both regression terms are
/// zero with zero gradients. When `lambda3 = lambda4 = 0` (or no teacher
/// is supplied) the distillation terms are skipped entirely, which keeps
/// such a run bitwise identical to a hard-loss-only run.
pub fn combined_loss(
    student: &HeadOutputs,
    teacher: Option<&HeadOutputs>,
    anchors: &[Anchor],
    assignment: &AssignmentResult,
    gt_boxes: &[RotatedBox],
    cfg: &DistillConfig,
    focal: &FocalParams,
) -> Result<LossBreakdown> {
    cfg.validate()?;
    focal.validate()?;
    student.validate_shape()?;
    let n = anchors.len();
    if student.num_anchors != n || assignment.labels.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{} anchors vs {} student outputs vs {} labels",
            n,
            student.num_anchors,
            assignment.labels.len()
        )));
    }
    let distill_active = (cfg.lambda3 > 0.0 || cfg.lambda4 > 0.0) && teacher.is_some();
    if (cfg.lambda3 > 0.0 || cfg.lambda4 > 0.0) && teacher.is_none() {
        return Err(Error::InvalidConfig(
            "distillation weights are nonzero but no teacher outputs were supplied".into(),
        ));
    }
    if let Some(t) = teacher {
        t.validate_shape()?;
        if t.num_anchors != n || t.num_classes != student.num_classes {
            return Err(Error::ShapeMismatch(format!(
                "teacher outputs {}x{} do not match student {}x{}",
                t.num_anchors, t.num_classes, n, student.num_classes
            )));
        }
    }

    let num_positive = assignment.num_positive();
    let focal_norm = num_positive.max(1) as f64;
    let c = student.num_classes;

    let mut d_logits = vec![0.0; student.logits.len()];
    let mut d_deltas = vec![0.0; student.deltas.len()];

    // Hard classification: focal over non-ignored anchors.
    let mut l_cls = 0.0;
    for a in 0..n {
        let target = match assignment.labels[a] {
            AnchorLabel::Positive { class, .. } => Some(class),
            AnchorLabel::Negative => None,
            AnchorLabel::Ignore => continue,
        };
        let (v, g) = focal_loss(student.logits_of(a), target, focal);
        l_cls += v;
        for (k, gk) in g.iter().enumerate() {
            d_logits[a * c + k] += cfg.lambda1 * gk / focal_norm;
        }
    }
    l_cls /= focal_norm;

    // Hard regression: Gaussian-KLD between the decoded prediction and
    // the matched ground truth, averaged over positives.
    let mut l_reg = 0.0;
    if num_positive > 0 {
        let pos_norm = num_positive as f64;
        for a in 0..n {
            let AnchorLabel::Positive { gt, .. } = assignment.labels[a] else {
                continue;
            };
            let deltas = student.deltas_of(a);
            let parts = decode_deltas_parts(&anchors[a].rect, &deltas);
            let gt_gaussian = box_to_gaussian(&gt_boxes[gt]);
            let (v, g_parts) = gaussian_kld_reg_loss_parts(parts, &gt_gaussian);
            let jac = decode_jacobian(&anchors[a].rect, &deltas, &parts);
            l_reg += v / pos_norm;
            for i in 0..5 {
                d_deltas[a * 5 + i] += cfg.lambda2 * g_parts[i] * jac[i] / pos_norm;
            }
        }
    }

    // Soft targets from the frozen teacher.
    let mut l_kd_cls = 0.0;
    let mut l_kd_reg = 0.0;
    if distill_active {
        let teacher = teacher.expect("checked above");
        let anchor_norm = n as f64;
        for a in 0..n {
            let (v, g) = kd_cls_loss(
                student.logits_of(a),
                teacher.logits_of(a),
                cfg.t_cls,
                cfg.kd_direction,
            )?;
            l_kd_cls += v / anchor_norm;
            for (k, gk) in g.iter().enumerate() {
                d_logits[a * c + k] += cfg.lambda3 * gk / anchor_norm;
            }
        }
        if num_positive > 0 {
            let pos_norm = num_positive as f64;
            for a in 0..n {
                if !matches!(assignment.labels[a], AnchorLabel::Positive { .. }) {
                    continue;
                }
                let (v, g) =
                    kd_reg_loss(&student.deltas_of(a), &teacher.deltas_of(a), cfg.t_reg);
                l_kd_reg += v / pos_norm;
                for i in 0..5 {
                    d_deltas[a * 5 + i] += cfg.lambda4 * g[i] / pos_norm;
                }
            }
        }
    }

    let l_all =
        cfg.lambda1 * l_cls + cfg.lambda2 * l_reg + cfg.lambda3 * l_kd_cls + cfg.lambda4 * l_kd_reg;
    Ok(LossBreakdown {
        l_cls,
        l_reg,
        l_kd_cls,
        l_kd_reg,
        l_all,
        num_positive,
        d_logits,
        d_deltas,
    })
}
