//! Small fixed-size vector helpers shared by the simulator modules.

pub type Point2 = [f64; 2];
pub type Point3 = [f64; 3];

#[inline]
pub fn dist2(a: Point2, b: Point2) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

#[inline]
pub fn dist3(a: Point3, b: Point3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

#[inline]
pub fn norm3(v: Point3) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

#[inline]
pub fn lift(p: Point2) -> Point3 {
    [p[0], p[1], 0.0]
}
