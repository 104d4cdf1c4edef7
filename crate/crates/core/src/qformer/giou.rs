//! Generalized IoU for center-format boxes, with its gradient.

use crate::types::{BBox, BoxError};

/// `IoU − |C \ (A ∪ B)| / |C|`, with `C` the tightest box enclosing both.
/// Lies in `(−1, 1]`; equals 1 only for identical boxes.
pub fn giou(a: &BBox, b: &BBox) -> Result<f64, BoxError> {
    a.check()?;
    b.check()?;
    Ok(giou_with_grad(a, b).0)
}

/// GIoU of `(target, pred)` and its gradient with respect to
/// `pred = (cx, cy, w, h)`. At kinks the target's edge wins.
pub(crate) fn giou_with_grad(target: &BBox, pred: &BBox) -> (f64, [f64; 4]) {
    let [gx1, gy1, gx2, gy2] = target.corners();
    let [px1, py1, px2, py2] = pred.corners();

    let (ix1, ix2) = (gx1.max(px1), gx2.min(px2));
    let (iy1, iy2) = (gy1.max(py1), gy2.min(py2));
    let iw = (ix2 - ix1).max(0.0);
    let ih = (iy2 - iy1).max(0.0);
    let inter = iw * ih;
    let union = target.area() + pred.area() - inter;
    let cw = gx2.max(px2) - gx1.min(px1);
    let ch = gy2.max(py2) - gy1.min(py1);
    let enclosing = cw * ch;
    let value = inter / union - 1.0 + union / enclosing;

    // Partials with respect to the predicted corners (x1, x2, y1, y2).
    let d_iw = [
        if iw > 0.0 && px1 > gx1 { -1.0 } else { 0.0 },
        if iw > 0.0 && px2 < gx2 { 1.0 } else { 0.0 },
    ];
    let d_ih = [
        if ih > 0.0 && py1 > gy1 { -1.0 } else { 0.0 },
        if ih > 0.0 && py2 < gy2 { 1.0 } else { 0.0 },
    ];
    let d_cw = [
        if px1 < gx1 { -1.0 } else { 0.0 },
        if px2 > gx2 { 1.0 } else { 0.0 },
    ];
    let d_ch = [
        if py1 < gy1 { -1.0 } else { 0.0 },
        if py2 > gy2 { 1.0 } else { 0.0 },
    ];
    let (pw, ph) = (px2 - px1, py2 - py1);
    // (d_inter, d_area, d_enclosing) for x1, x2, y1, y2.
    let parts = [
        (d_iw[0] * ih, -ph, d_cw[0] * ch),
        (d_iw[1] * ih, ph, d_cw[1] * ch),
        (d_ih[0] * iw, -pw, d_ch[0] * cw),
        (d_ih[1] * iw, pw, d_ch[1] * cw),
    ];
    let corner_grad = parts.map(|(di, da, dc)| {
        let du = da - di;
        (di * union - inter * du) / (union * union) + (du * enclosing - union * dc) / (enclosing * enclosing)
    });
    let [gx1_, gx2_, gy1_, gy2_] = corner_grad;
    let grad = [
        gx1_ + gx2_,
        gy1_ + gy2_,
        (gx2_ - gx1_) / 2.0,
        (gy2_ - gy1_) / 2.0,
    ];
    (value, grad)
}
