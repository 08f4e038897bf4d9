//! Positions and the heading convention shared by memory location codes and
//! waypoint bins: heading is measured in the (x, y) plane, 0 along +y,
//! increasing clockwise (so +x is π/2), reported in `[0, 2π)`.

use std::f64::consts::TAU;

pub type Vec3 = [f64; 3];

pub fn sub(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn distance(a: &Vec3, b: &Vec3) -> f64 {
    let d = sub(a, b);
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

pub fn midpoint(a: &Vec3, b: &Vec3) -> Vec3 {
    [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0, (a[2] + b[2]) / 2.0]
}

/// Heading of the displacement `to − from`.
pub fn heading(from: &Vec3, to: &Vec3) -> f64 {
    let d = sub(to, from);
    wrap_angle(d[0].atan2(d[1]))
}

pub fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(TAU);
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Point at `heading` and planar `dist` from `origin`, keeping the origin's z.
pub fn offset(origin: &Vec3, heading: f64, dist: f64) -> Vec3 {
    [origin[0] + dist * heading.sin(), origin[1] + dist * heading.cos(), origin[2]]
}

pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let aa = crate::tape::dot(a, a);
    let bb = crate::tape::dot(b, b);
    if aa == 0.0 || bb == 0.0 {
        return None;
    }
    // sqrt(x * x) == x exactly, so identical vectors give exactly 1
    Some(crate::tape::dot(a, b) / (aa * bb).sqrt())
}
