//! Spherical geometry on WGS84 coordinates (mean-radius sphere).

use crate::types::{GpsFix, Stop};

pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Great-circle distance in meters between two `(lat, lon)` pairs in degrees.
pub fn haversine_distance(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (lat1, lon1) = (a.0.to_radians(), a.1.to_radians());
    let (lat2, lon2) = (b.0.to_radians(), b.1.to_radians());
    let dlat = lat2 - lat1;
    let dlon = lon2 - lon1;
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// Boundary-inclusive radius test.
pub fn within_stop_radius(fix: &GpsFix, stop: &Stop) -> bool {
    haversine_distance((fix.lat, fix.lon), (stop.lat, stop.lon)) <= stop.radius
}

/// East/north offset in meters of `p` from `origin`, on the local tangent plane.
pub fn local_offset(origin: (f64, f64), p: (f64, f64)) -> (f64, f64) {
    let lat0 = origin.0.to_radians();
    let east = (p.1 - origin.1).to_radians() * lat0.cos() * EARTH_RADIUS_M;
    let north = (p.0 - origin.0).to_radians() * EARTH_RADIUS_M;
    (east, north)
}

/// Inverse of [`local_offset`].
pub fn displace(origin: (f64, f64), east_m: f64, north_m: f64) -> (f64, f64) {
    let lat0 = origin.0.to_radians();
    let lat = origin.0 + (north_m / EARTH_RADIUS_M).to_degrees();
    let lon = origin.1 + (east_m / (EARTH_RADIUS_M * lat0.cos())).to_degrees();
    (lat, lon)
}

/// Distance in meters from `p` to the straight chord `a`–`b`.
pub fn point_to_chord_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (bx, by) = local_offset(a, b);
    let (px, py) = local_offset(a, p);
    let len2 = bx * bx + by * by;
    let t = if len2 > 0.0 {
        ((px * bx + py * by) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (dx, dy) = (px - t * bx, py - t * by);
    (dx * dx + dy * dy).sqrt()
}

/// Linear interpolation between two coordinates; adequate over chord lengths
/// of a few kilometers.
pub fn lerp(a: (f64, f64), b: (f64, f64), frac: f64) -> (f64, f64) {
    (a.0 + (b.0 - a.0) * frac, a.1 + (b.1 - a.1) * frac)
}
