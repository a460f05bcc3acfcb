//! Rotated-rectangle geometry: Gaussian conversion, exact polygon IoU,
//! box/delta coding, and the DOTA quad carrier.
//!
//! Angle convention is long-edge: after normalization `w >= h` and
//! `theta` lies in `[-pi/2, pi/2)`. Square boxes break the remaining
//! 90-degree ambiguity toward `theta >= 0`.

use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI};

use crate::error::{Error, Result};

/// Log-delta clamp applied by [`decode_deltas`]; prevents overflow from
/// untrained regression heads.
pub const LOG_DELTA_CLAMP: f64 = 4.0;

/// Oriented rectangle `(cx, cy, w, h, theta)` in pixel units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotatedBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub theta: f64,
}

impl RotatedBox {
    /// Builds a box and normalizes it to the long-edge convention.
    ///
    /// Panics if `w` or `h` is not a strictly positive finite number;
    /// validated ingestion paths go through [`quad_to_box`].
    pub fn new(cx: f64, cy: f64, w: f64, h: f64, theta: f64) -> Self {
        assert!(
            w.is_finite() && h.is_finite() && w > 0.0 && h > 0.0,
            "box dimensions must be positive and finite (w={w}, h={h})"
        );
        let (w, h, theta) = normalize_long_edge(w, h, theta);
        Self { cx, cy, w, h, theta }
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// True if `p` lies inside the rectangle (boundary inclusive).
    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.theta.sin_cos();
        let dx = x - self.cx;
        let dy = y - self.cy;
        // Rotate into the box frame.
        let lx = c * dx + s * dy;
        let ly = -s * dx + c * dy;
        lx.abs() <= self.w * 0.5 && ly.abs() <= self.h * 0.5
    }

    /// Axis-aligned bounding box `(min_x, min_y, max_x, max_y)`.
    pub fn aabb(&self) -> (f64, f64, f64, f64) {
        let (s, c) = self.theta.sin_cos();
        let ex = (c * self.w * 0.5).abs() + (s * self.h * 0.5).abs();
        let ey = (s * self.w * 0.5).abs() + (c * self.h * 0.5).abs();
        (self.cx - ex, self.cy - ey, self.cx + ex, self.cy + ey)
    }

    /// Translates the box by `(dx, dy)`.
    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self { cx: self.cx + dx, cy: self.cy + dy, ..*self }
    }
}

/// Wraps an angle to `[-pi/2, pi/2)`; rectangles repeat with period pi.
pub fn wrap_half_turn(theta: f64) -> f64 {
    let t = theta - PI * ((theta + FRAC_PI_2) / PI).floor();
    // Guard the half-open upper bound against rounding.
    if t >= FRAC_PI_2 {
        -FRAC_PI_2
    } else {
        t
    }
}

fn normalize_long_edge(w: f64, h: f64, theta: f64) -> (f64, f64, f64) {
    let (w, h, theta) = if w < h { (h, w, theta + FRAC_PI_2) } else { (w, h, theta) };
    let mut t = wrap_half_turn(theta);
    if w == h && t < 0.0 {
        // Square: representation is 90-degree ambiguous; pick theta >= 0.
        t += FRAC_PI_2;
    }
    (w, h, t)
}

/// 2-D Gaussian `(mu, sigma)` with a symmetric positive-definite covariance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaussian2D {
    pub mu: [f64; 2],
    /// Row-major 2x2 covariance in pixels^2.
    pub sigma: [[f64; 2]; 2],
}

impl Gaussian2D {
    pub fn new(mu: [f64; 2], sigma: [[f64; 2]; 2]) -> Result<Self> {
        let g = Self { mu, sigma };
        g.validate()?;
        Ok(g)
    }

    /// Symmetry within 1e-12 and positive eigenvalues.
    pub fn validate(&self) -> Result<()> {
        let s = &self.sigma;
        let scale = s[0][0].abs().max(s[1][1].abs()).max(1.0);
        if (s[0][1] - s[1][0]).abs() > 1e-12 * scale {
            return Err(Error::NonSpd(format!(
                "asymmetric covariance: {:?}",
                self.sigma
            )));
        }
        let det = s[0][0] * s[1][1] - s[0][1] * s[1][0];
        if !(det > 0.0 && s[0][0] + s[1][1] > 0.0) {
            return Err(Error::NonSpd(format!(
                "non-positive-definite covariance: {:?}",
                self.sigma
            )));
        }
        Ok(())
    }

    pub fn det(&self) -> f64 {
        self.sigma[0][0] * self.sigma[1][1] - self.sigma[0][1] * self.sigma[1][0]
    }

    /// Inverse covariance; requires a valid (SPD) sigma.
    pub fn inverse_sigma(&self) -> [[f64; 2]; 2] {
        let s = &self.sigma;
        let det = self.det();
        [
            [s[1][1] / det, -s[0][1] / det],
            [-s[1][0] / det, s[0][0] / det],
        ]
    }
}

/// Converts a rotated box to its Gaussian representation:
/// `mu = (cx, cy)`, `sigma = R(theta) diag(w^2/4, h^2/4) R(theta)^T`.
///
/// The result is independent of the `(w, h, theta)` vs
/// `(h, w, theta + pi/2)` representation choice.
pub fn box_to_gaussian(b: &RotatedBox) -> Gaussian2D {
    gaussian_from_parts(b.cx, b.cy, b.w, b.h, b.theta)
}

pub(crate) fn gaussian_from_parts(cx: f64, cy: f64, w: f64, h: f64, theta: f64) -> Gaussian2D {
    let (s, c) = theta.sin_cos();
    let a = w * w * 0.25;
    let b = h * h * 0.25;
    let s00 = a * c * c + b * s * s;
    let s01 = (a - b) * s * c;
    let s11 = a * s * s + b * c * c;
    Gaussian2D { mu: [cx, cy], sigma: [[s00, s01], [s01, s11]] }
}

/// Four corner points in counter-clockwise winding order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quad {
    pub points: [[f64; 2]; 4],
}

impl Quad {
    /// Wraps four points, reversing the order if they wind clockwise.
    pub fn new(points: [[f64; 2]; 4]) -> Self {
        let q = Self { points };
        if q.signed_area() < 0.0 {
            Self { points: [points[0], points[3], points[2], points[1]] }
        } else {
            q
        }
    }

    /// Shoelace signed area; positive for counter-clockwise winding.
    pub fn signed_area(&self) -> f64 {
        shoelace(&self.points)
    }
}

fn shoelace(pts: &[[f64; 2]]) -> f64 {
    let n = pts.len();
    let mut acc = 0.0;
    for i in 0..n {
        let j = (i + 1) % n;
        acc += pts[i][0] * pts[j][1] - pts[j][0] * pts[i][1];
    }
    acc * 0.5
}

/// Corner polygon of a rotated box, counter-clockwise.
pub fn box_to_quad(b: &RotatedBox) -> Quad {
    let (s, c) = b.theta.sin_cos();
    let hw = b.w * 0.5;
    let hh = b.h * 0.5;
    // Local CCW corners, rotated then translated.
    let local = [[hw, hh], [-hw, hh], [-hw, -hh], [hw, -hh]];
    let mut points = [[0.0; 2]; 4];
    for (out, p) in points.iter_mut().zip(local) {
        out[0] = b.cx + c * p[0] - s * p[1];
        out[1] = b.cy + s * p[0] + c * p[1];
    }
    Quad { points }
}

/// Minimum-area enclosing rotated rectangle of a (near-)rectangular quad.
///
/// Exact round-trip for true rectangles up to the angle convention.
/// Degenerate (zero-area) quads are rejected.
pub fn quad_to_box(q: &Quad) -> Result<RotatedBox> {
    let area = q.signed_area().abs();
    let span = quad_span(q);
    if area <= 1e-12 * span * span.max(1.0) {
        return Err(Error::DegenerateQuad(format!(
            "collinear or zero-area corners: {:?}",
            q.points
        )));
    }
    // The minimum-area enclosing rectangle of a convex polygon has one side
    // collinear with a polygon edge; try each quad edge as the orientation.
    let mut best: Option<(f64, RotatedBox)> = None;
    for i in 0..4 {
        let j = (i + 1) % 4;
        let ex = q.points[j][0] - q.points[i][0];
        let ey = q.points[j][1] - q.points[i][1];
        let len = (ex * ex + ey * ey).sqrt();
        if len < 1e-12 * span {
            continue;
        }
        let (ux, uy) = (ex / len, ey / len);
        // Project all corners onto (u, v) with v = u rotated by 90 degrees.
        let (mut lo_u, mut hi_u) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut lo_v, mut hi_v) = (f64::INFINITY, f64::NEG_INFINITY);
        for p in &q.points {
            let pu = p[0] * ux + p[1] * uy;
            let pv = -p[0] * uy + p[1] * ux;
            lo_u = lo_u.min(pu);
            hi_u = hi_u.max(pu);
            lo_v = lo_v.min(pv);
            hi_v = hi_v.max(pv);
        }
        let w = hi_u - lo_u;
        let h = hi_v - lo_v;
        if w <= 0.0 || h <= 0.0 {
            continue;
        }
        let mu = (lo_u + hi_u) * 0.5;
        let mv = (lo_v + hi_v) * 0.5;
        let cx = mu * ux - mv * uy;
        let cy = mu * uy + mv * ux;
        let cand = RotatedBox::new(cx, cy, w, h, uy.atan2(ux));
        if best.as_ref().is_none_or(|(a, _)| cand.area() < *a) {
            best = Some((cand.area(), cand));
        }
    }
    best.map(|(_, b)| b)
        .ok_or_else(|| Error::DegenerateQuad(format!("no valid edge direction: {:?}", q.points)))
}

fn quad_span(q: &Quad) -> f64 {
    let xs = q.points.iter().map(|p| p[0]);
    let ys = q.points.iter().map(|p| p[1]);
    let (mut lo_x, mut hi_x, mut lo_y, mut hi_y) =
        (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (x, y) in xs.zip(ys) {
        lo_x = lo_x.min(x);
        hi_x = hi_x.max(x);
        lo_y = lo_y.min(y);
        hi_y = hi_y.max(y);
    }
    (hi_x - lo_x).max(hi_y - lo_y)
}

/// Intersection-over-union of two rotated boxes via Sutherland-Hodgman
/// convex clipping and the shoelace formula. Symmetric, in `[0, 1]`.
pub fn rotated_iou(a: &RotatedBox, b: &RotatedBox) -> f64 {
    let (ax0, ay0, ax1, ay1) = a.aabb();
    let (bx0, by0, bx1, by1) = b.aabb();
    if ax1 < bx0 || bx1 < ax0 || ay1 < by0 || by1 < ay0 {
        return 0.0;
    }
    let inter = intersection_area(&box_to_quad(a), &box_to_quad(b));
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Area of the intersection of two convex CCW quads.
pub(crate) fn intersection_area(subject: &Quad, clip: &Quad) -> f64 {
    // Clip `subject` against each edge of `clip`; both are convex and CCW,
    // so "inside" is the left side of every clip edge.
    let mut poly: Vec<[f64; 2]> = subject.points.to_vec();
    let mut next: Vec<[f64; 2]> = Vec::with_capacity(8);
    for i in 0..4 {
        if poly.is_empty() {
            return 0.0;
        }
        let e0 = clip.points[i];
        let e1 = clip.points[(i + 1) % 4];
        next.clear();
        for k in 0..poly.len() {
            let cur = poly[k];
            let prev = poly[(k + poly.len() - 1) % poly.len()];
            let cur_in = edge_side(e0, e1, cur) >= 0.0;
            let prev_in = edge_side(e0, e1, prev) >= 0.0;
            if cur_in {
                if !prev_in {
                    next.push(line_segment_intersection(e0, e1, prev, cur));
                }
                next.push(cur);
            } else if prev_in {
                next.push(line_segment_intersection(e0, e1, prev, cur));
            }
        }
        std::mem::swap(&mut poly, &mut next);
    }
    shoelace(&poly).max(0.0)
}

#[inline]
fn edge_side(e0: [f64; 2], e1: [f64; 2], p: [f64; 2]) -> f64 {
    (e1[0] - e0[0]) * (p[1] - e0[1]) - (e1[1] - e0[1]) * (p[0] - e0[0])
}

#[inline]
fn line_segment_intersection(e0: [f64; 2], e1: [f64; 2], a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    // Intersection of segment a-b with the infinite line through e0-e1.
    // Callers only invoke this when a and b straddle the line, so the
    // denominator is bounded away from zero.
    let da = edge_side(e0, e1, a);
    let db = edge_side(e0, e1, b);
    let t = da / (da - db);
    [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
}

/// Five-parameter box deltas `(dx, dy, dw, dh, dtheta)`.
pub type Deltas = [f64; 5];

/// Encodes `target` relative to `anchor`:
/// `((tx-ax)/aw, (ty-ay)/ah, ln(tw/aw), ln(th/ah), wrap(ttheta-atheta))`.
pub fn encode_deltas(anchor: &RotatedBox, target: &RotatedBox) -> Deltas {
    [
        (target.cx - anchor.cx) / anchor.w,
        (target.cy - anchor.cy) / anchor.h,
        (target.w / anchor.w).ln(),
        (target.h / anchor.h).ln(),
        wrap_half_turn(target.theta - anchor.theta),
    ]
}

/// Inverse of [`encode_deltas`], with log-deltas clamped to
/// `[-LOG_DELTA_CLAMP, LOG_DELTA_CLAMP]`.
pub fn decode_deltas(anchor: &RotatedBox, deltas: &Deltas) -> RotatedBox {
    let [cx, cy, w, h, theta] = decode_deltas_parts(anchor, deltas);
    RotatedBox::new(cx, cy, w, h, theta)
}

/// Raw decoded fields without long-edge re-normalization; the training
/// path differentiates through these.
pub(crate) fn decode_deltas_parts(anchor: &RotatedBox, deltas: &Deltas) -> [f64; 5] {
    let dw = deltas[2].clamp(-LOG_DELTA_CLAMP, LOG_DELTA_CLAMP);
    let dh = deltas[3].clamp(-LOG_DELTA_CLAMP, LOG_DELTA_CLAMP);
    [
        anchor.cx + deltas[0] * anchor.w,
        anchor.cy + deltas[1] * anchor.h,
        anchor.w * dw.exp(),
        anchor.h * dh.exp(),
        anchor.theta + deltas[4],
    ]
}

/// Diagonal Jacobian d(field)/d(delta) of [`decode_deltas_parts`];
/// zero in the clamped log-delta region.
pub(crate) fn decode_jacobian(anchor: &RotatedBox, deltas: &Deltas, parts: &[f64; 5]) -> [f64; 5] {
    let in_w = deltas[2].abs() < LOG_DELTA_CLAMP;
    let in_h = deltas[3].abs() < LOG_DELTA_CLAMP;
    [
        anchor.w,
        anchor.h,
        if in_w { parts[2] } else { 0.0 },
        if in_h { parts[3] } else { 0.0 },
        1.0,
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_box(rng: &mut ChaCha8Rng) -> RotatedBox {
        RotatedBox::new(
            rng.random_range(-4.0..4.0),
            rng.random_range(-4.0..4.0),
            rng.random_range(1.0..6.0),
            rng.random_range(1.0..6.0),
            rng.random_range(-2.0..2.0),
        )
    }

    /// Monte-Carlo IoU estimate by point sampling over the joint AABB.
    pub(crate) fn monte_carlo_iou(
        a: &RotatedBox,
        b: &RotatedBox,
        samples: usize,
        rng: &mut ChaCha8Rng,
    ) -> f64 {
        let (ax0, ay0, ax1, ay1) = a.aabb();
        let (bx0, by0, bx1, by1) = b.aabb();
        let (x0, y0) = (ax0.min(bx0), ay0.min(by0));
        let (x1, y1) = (ax1.max(bx1), ay1.max(by1));
        let mut inter = 0usize;
        let mut union = 0usize;
        for _ in 0..samples {
            let x = rng.random_range(x0..x1);
            let y = rng.random_range(y0..y1);
            let in_a = a.contains_point(x, y);
            let in_b = b.contains_point(x, y);
            if in_a && in_b {
                inter += 1;
            }
            if in_a || in_b {
                union += 1;
            }
        }
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }

    fn assert_box_close(a: &RotatedBox, b: &RotatedBox, tol: f64) {
        assert!((a.cx - b.cx).abs() < tol, "cx {} vs {}", a.cx, b.cx);
        assert!((a.cy - b.cy).abs() < tol, "cy {} vs {}", a.cy, b.cy);
        assert!((a.w - b.w).abs() < tol, "w {} vs {}", a.w, b.w);
        assert!((a.h - b.h).abs() < tol, "h {} vs {}", a.h, b.h);
        let dt = wrap_half_turn(a.theta - b.theta).abs();
        assert!(dt.min((dt - PI).abs()) < tol, "theta {} vs {}", a.theta, b.theta);
    }

    #[test]
    fn long_edge_normalization() {
        let b = RotatedBox::new(0.0, 0.0, 1.0, 2.0, 0.0);
        assert!(b.w >= b.h);
        assert!((b.w - 2.0).abs() < 1e-12 && (b.h - 1.0).abs() < 1e-12);
        assert!((-FRAC_PI_2..FRAC_PI_2).contains(&b.theta));

        // Square ties break toward theta >= 0.
        let sq = RotatedBox::new(0.0, 0.0, 2.0, 2.0, -0.3);
        assert!(sq.theta >= 0.0 && sq.theta < FRAC_PI_2);

        // Corner polygon area matches w*h.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let b = random_box(&mut rng);
            let q = box_to_quad(&b);
            let rel = (q.signed_area() - b.area()).abs() / b.area();
            assert!(rel < 1e-9);
            assert!(q.signed_area() > 0.0);
        }
    }

    #[test]
    fn gaussian_conversion_matches_closed_form() {
        // Square box is rotation-invariant: sigma = identity.
        for theta in [0.0, 0.4, -1.2, 1.5] {
            let g = box_to_gaussian(&RotatedBox::new(0.0, 0.0, 2.0, 2.0, theta));
            assert!((g.sigma[0][0] - 1.0).abs() < 1e-12);
            assert!((g.sigma[1][1] - 1.0).abs() < 1e-12);
            assert!(g.sigma[0][1].abs() < 1e-12);
        }
        let g = box_to_gaussian(&RotatedBox::new(0.0, 0.0, 4.0, 2.0, 0.0));
        assert!((g.sigma[0][0] - 4.0).abs() < 1e-12 && (g.sigma[1][1] - 1.0).abs() < 1e-12);
        let g = box_to_gaussian(&RotatedBox::new(0.0, 0.0, 4.0, 2.0, FRAC_PI_2));
        assert!((g.sigma[0][0] - 1.0).abs() < 1e-9 && (g.sigma[1][1] - 4.0).abs() < 1e-9);
    }

    #[test]
    fn gaussian_eigenvalues_are_rotation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let b = random_box(&mut rng);
            let g = box_to_gaussian(&b);
            let tr = g.sigma[0][0] + g.sigma[1][1];
            let det = g.det();
            let disc = (tr * tr - 4.0 * det).max(0.0).sqrt();
            let (l1, l2) = ((tr + disc) * 0.5, (tr - disc) * 0.5);
            let (e1, e2) = (b.w * b.w * 0.25, b.h * b.h * 0.25);
            assert!((l1 - e1.max(e2)).abs() < 1e-9 * e1.max(e2));
            assert!((l2 - e1.min(e2)).abs() < 1e-9 * e1.max(e2));
            g.validate().unwrap();
        }
    }

    #[test]
    fn quad_round_trip() {
        let b = RotatedBox::new(0.0, 0.0, 2.0, 2.0, 0.0);
        let rt = quad_to_box(&box_to_quad(&b)).unwrap();
        assert_box_close(&b, &rt, 1e-9);

        let b = RotatedBox::new(5.0, 5.0, 4.0, 2.0, 0.3);
        let rt = quad_to_box(&box_to_quad(&b)).unwrap();
        assert_box_close(&b, &rt, 1e-9);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let b = random_box(&mut rng);
            let rt = quad_to_box(&box_to_quad(&b)).unwrap();
            assert_box_close(&b, &rt, 1e-9);
        }
    }

    #[test]
    fn quad_to_box_rejects_collinear_points() {
        let q = Quad::new([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0]]);
        assert!(matches!(quad_to_box(&q), Err(Error::DegenerateQuad(_))));
    }

    #[test]
    fn quad_to_box_accepts_clockwise_input() {
        let b = RotatedBox::new(1.0, 2.0, 3.0, 1.5, 0.7);
        let ccw = box_to_quad(&b);
        let cw = Quad::new([ccw.points[0], ccw.points[3], ccw.points[2], ccw.points[1]]);
        assert!(cw.signed_area() > 0.0);
        assert_box_close(&b, &quad_to_box(&cw).unwrap(), 1e-9);
    }

    #[test]
    fn iou_worked_examples() {
        let a = RotatedBox::new(0.0, 0.0, 1.0, 1.0, 0.0);
        assert!((rotated_iou(&a, &a) - 1.0).abs() < 1e-9);

        // Unit squares offset by 0.5: inter 0.5, union 1.5.
        let b = RotatedBox::new(0.5, 0.0, 1.0, 1.0, 0.0);
        assert!((rotated_iou(&a, &b) - 1.0 / 3.0).abs() < 1e-9);

        // Cross configuration: inter 1, union 3.
        let c = RotatedBox::new(0.0, 0.0, 2.0, 1.0, 0.0);
        let d = RotatedBox::new(0.0, 0.0, 2.0, 1.0, FRAC_PI_2);
        assert!((rotated_iou(&c, &d) - 1.0 / 3.0).abs() < 1e-9);

        let far = RotatedBox::new(100.0, 0.0, 1.0, 1.0, 0.0);
        assert_eq!(rotated_iou(&a, &far), 0.0);
    }

    #[test]
    fn iou_matches_axis_aligned_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..500 {
            let a = RotatedBox::new(
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(3.0..6.0),
                rng.random_range(1.0..2.9),
                0.0,
            );
            let b = RotatedBox::new(
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(3.0..6.0),
                rng.random_range(1.0..2.9),
                0.0,
            );
            let ix = (a.cx + a.w * 0.5).min(b.cx + b.w * 0.5)
                - (a.cx - a.w * 0.5).max(b.cx - b.w * 0.5);
            let iy = (a.cy + a.h * 0.5).min(b.cy + b.h * 0.5)
                - (a.cy - a.h * 0.5).max(b.cy - b.h * 0.5);
            let inter = ix.max(0.0) * iy.max(0.0);
            let expected = inter / (a.area() + b.area() - inter);
            assert!((rotated_iou(&a, &b) - expected).abs() < 1e-9);
        }
    }

    #[test]
    fn iou_is_symmetric_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..500 {
            let a = random_box(&mut rng);
            let b = random_box(&mut rng);
            let ab = rotated_iou(&a, &b);
            let ba = rotated_iou(&b, &a);
            assert!((ab - ba).abs() < 1e-12);
            assert!((0.0..=1.0).contains(&ab));
        }
    }

    #[test]
    fn iou_against_small_monte_carlo() {
        // The acceptance suite runs the full 1e6-sample oracle; this is a
        // quick sanity pass.
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..20 {
            let a = random_box(&mut rng);
            let b = random_box(&mut rng);
            let exact = rotated_iou(&a, &b);
            let mc = monte_carlo_iou(&a, &b, 200_000, &mut rng);
            assert!((exact - mc).abs() < 2e-2, "exact {exact} vs mc {mc}");
        }
    }

    #[test]
    fn delta_coding_round_trip() {
        let anchor = RotatedBox::new(0.0, 0.0, 2.0, 2.0, 0.0);
        let same = encode_deltas(&anchor, &anchor);
        assert!(same.iter().all(|d| d.abs() < 1e-12));

        let target = RotatedBox::new(1.0, 0.0, 4.0, 2.0, 0.0);
        let d = encode_deltas(&anchor, &target);
        assert!((d[0] - 0.5).abs() < 1e-12);
        assert!(d[1].abs() < 1e-12);
        assert!((d[2] - 2.0f64.ln()).abs() < 1e-12);
        assert!(d[3].abs() < 1e-12);
        assert!(d[4].abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..500 {
            let anchor = random_box(&mut rng);
            let target = random_box(&mut rng);
            let rt = decode_deltas(&anchor, &encode_deltas(&anchor, &target));
            assert_box_close(&target, &rt, 1e-9);
        }
    }

    #[test]
    fn decode_clamps_log_deltas() {
        let anchor = RotatedBox::new(0.0, 0.0, 2.0, 1.0, 0.0);
        let b = decode_deltas(&anchor, &[0.0, 0.0, 80.0, -80.0, 0.0]);
        assert!(b.w <= 2.0 * LOG_DELTA_CLAMP.exp() + 1e-9);
        assert!(b.h >= 1.0 * (-LOG_DELTA_CLAMP).exp() - 1e-12);
    }

    #[test]
    fn wrap_half_turn_range() {
        for t in [-7.0, -FRAC_PI_2, 0.0, 1.2, FRAC_PI_2, 9.9] {
            let w = wrap_half_turn(t);
            assert!((-FRAC_PI_2..FRAC_PI_2).contains(&w), "{t} -> {w}");
            // Same angle modulo pi.
            let k = (t - w) / PI;
            assert!((k - k.round()).abs() < 1e-9);
        }
    }
}
