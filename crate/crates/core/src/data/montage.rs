//! Electrode positions in 2-D azimuthal-equidistant scalp coordinates.
//!
//! The built-in table is an idealized spherical 10-10 layout: each electrode
//! row (Fp, AF, F, FC, C, CP, P, PO, O) is the circular arc through its
//! midline electrode and its two equator electrodes, split into four equal
//! steps per side. Positions are projected around Cz so that the equator
//! (Fpz, T7, Oz, T8) lands on the unit circle. +x points right, +y to the nose.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAX_RADIUS: f64 = 1.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Montage {
    coords: BTreeMap<String, (f64, f64)>,
}

fn key(name: &str) -> String {
    name.trim().to_ascii_uppercase()
}

impl Montage {
    pub fn from_coords<S: AsRef<str>>(entries: impl IntoIterator<Item = (S, (f64, f64))>) -> Result<Self> {
        let mut coords = BTreeMap::new();
        for (name, (x, y)) in entries {
            let k = key(name.as_ref());
            if !(x.is_finite() && y.is_finite()) || x * x + y * y > MAX_RADIUS * MAX_RADIUS {
                return Err(Error::InvalidArgument(format!(
                    "electrode {k} at ({x}, {y}) lies outside the head disc"
                )));
            }
            if coords.insert(k.clone(), (x, y)).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate electrode {k}")));
            }
        }
        Ok(Montage { coords })
    }

    /// Idealized 10-10 positions, including the legacy T3/T4/T5/T6 names.
    pub fn standard_1010() -> Self {
        let mut coords = BTreeMap::new();
        for (prefix, row, cols) in LAYOUT {
            for &(suffix, step, side) in *cols {
                let name = format!("{prefix}{suffix}");
                coords.insert(key(&name), project(sphere_position(*row, step, side)));
            }
        }
        for (old, new) in [("T3", "T7"), ("T4", "T8"), ("T5", "P7"), ("T6", "P8")] {
            let p = coords[&key(new)];
            coords.insert(key(old), p);
        }
        Montage { coords }
    }

    pub fn get(&self, name: &str) -> Result<(f64, f64)> {
        self.coords
            .get(&key(name))
            .copied()
            .ok_or_else(|| Error::UnknownElectrode(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.coords.contains_key(&key(name))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.coords.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }
}

type Column = (&'static str, u8, i8);

// (prefix, row steps toward the nose, [(suffix, steps from midline, side)])
const LAYOUT: &[(&str, i32, &[Column])] = &[
    ("Fp", 4, &[("z", 0, 0), ("1", 4, -1), ("2", 4, 1)]),
    ("AF", 3, &[("z", 0, 0), ("3", 2, -1), ("4", 2, 1), ("7", 4, -1), ("8", 4, 1)]),
    ("F", 2, &[
        ("z", 0, 0), ("1", 1, -1), ("2", 1, 1), ("3", 2, -1), ("4", 2, 1),
        ("5", 3, -1), ("6", 3, 1), ("7", 4, -1), ("8", 4, 1),
    ]),
    ("FC", 1, &[
        ("z", 0, 0), ("1", 1, -1), ("2", 1, 1), ("3", 2, -1), ("4", 2, 1), ("5", 3, -1), ("6", 3, 1),
    ]),
    ("FT", 1, &[("7", 4, -1), ("8", 4, 1)]),
    ("C", 0, &[
        ("z", 0, 0), ("1", 1, -1), ("2", 1, 1), ("3", 2, -1), ("4", 2, 1), ("5", 3, -1), ("6", 3, 1),
    ]),
    ("T", 0, &[("7", 4, -1), ("8", 4, 1)]),
    ("CP", -1, &[
        ("z", 0, 0), ("1", 1, -1), ("2", 1, 1), ("3", 2, -1), ("4", 2, 1), ("5", 3, -1), ("6", 3, 1),
    ]),
    ("TP", -1, &[("7", 4, -1), ("8", 4, 1)]),
    ("P", -2, &[
        ("z", 0, 0), ("1", 1, -1), ("2", 1, 1), ("3", 2, -1), ("4", 2, 1),
        ("5", 3, -1), ("6", 3, 1), ("7", 4, -1), ("8", 4, 1),
    ]),
    ("PO", -3, &[("z", 0, 0), ("3", 2, -1), ("4", 2, 1), ("7", 4, -1), ("8", 4, 1)]),
    ("O", -4, &[("z", 0, 0), ("1", 4, -1), ("2", 4, 1)]),
];

type V3 = [f64; 3];

fn sub(a: V3, b: V3) -> V3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}
fn add(a: V3, b: V3) -> V3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}
fn scale(a: V3, s: f64) -> V3 {
    [a[0] * s, a[1] * s, a[2] * s]
}
fn dot(a: V3, b: V3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}
fn cross(a: V3, b: V3) -> V3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}
fn norm(a: V3) -> f64 {
    dot(a, a).sqrt()
}

fn circumcenter(a: V3, b: V3, c: V3) -> V3 {
    let ab = sub(b, a);
    let ac = sub(c, a);
    let n = cross(ab, ac);
    let denom = 2.0 * dot(n, n);
    let term = add(
        scale(cross(n, ab), dot(ac, ac)),
        scale(cross(ac, n), dot(ab, ab)),
    );
    add(a, scale(term, 1.0 / denom))
}

fn sphere_position(row: i32, step: u8, side: i8) -> V3 {
    let theta = (22.5 * row as f64).to_radians();
    let mid = [0.0, theta.sin(), theta.cos()];
    if step == 0 {
        return mid;
    }
    let az = (18.0 * row as f64).to_radians();
    let eq_left = [-az.cos(), az.sin(), 0.0];
    let eq_right = [az.cos(), az.sin(), 0.0];
    let end = if side < 0 { eq_left } else { eq_right };

    // Rows at the equator are the equator itself.
    let center = if row.abs() == 4 {
        [0.0, 0.0, 0.0]
    } else {
        circumcenter(eq_left, mid, eq_right)
    };
    let a = sub(mid, center);
    let b = sub(end, center);
    let radius = norm(a);
    let span = (dot(a, b) / (radius * norm(b))).clamp(-1.0, 1.0).acos();
    // unit vector in the arc plane, perpendicular to `a`, pointing toward `end`
    let perp = sub(b, scale(a, dot(a, b) / dot(a, a)));
    let perp = scale(perp, 1.0 / norm(perp));
    let phi = span * step as f64 / 4.0;
    add(center, add(scale(a, phi.cos()), scale(perp, radius * phi.sin())))
}

fn project(p: V3) -> (f64, f64) {
    let polar = p[2].clamp(-1.0, 1.0).acos();
    let r = polar / FRAC_PI_2;
    let planar = (p[0] * p[0] + p[1] * p[1]).sqrt();
    if planar < 1e-12 {
        return (0.0, 0.0);
    }
    let x = r * p[0] / planar;
    let y = r * p[1] / planar;
    // snap round-off so mirrored electrodes are exact negatives
    let snap = |v: f64| if v.abs() < 1e-12 { 0.0 } else { v };
    (snap(x), snap(y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn landmarks() {
        let m = Montage::standard_1010();
        assert_eq!(m.get("Cz").unwrap(), (0.0, 0.0));
        let (x, y) = m.get("T7").unwrap();
        assert_abs_diff_eq!(x, -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(y, 0.0, epsilon = 1e-12);
        let (x, y) = m.get("c3").unwrap();
        assert_abs_diff_eq!(x, -0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(y, 0.0, epsilon = 1e-12);
        let (_, y) = m.get("FPZ").unwrap();
        assert_abs_diff_eq!(y, 1.0, epsilon = 1e-12);
        assert_eq!(m.get("T3").unwrap(), m.get("T7").unwrap());
    }

    #[test]
    fn all_inside_disc_and_mirror_symmetric() {
        let m = Montage::standard_1010();
        for name in m.names() {
            let (x, y) = m.get(name).unwrap();
            assert!(x * x + y * y <= MAX_RADIUS * MAX_RADIUS, "{name}");
        }
        for (l, r) in [("FC5", "FC6"), ("CP3", "CP4"), ("F7", "F8"), ("PO7", "PO8"), ("O1", "O2")] {
            let (xl, yl) = m.get(l).unwrap();
            let (xr, yr) = m.get(r).unwrap();
            assert_abs_diff_eq!(xl, -xr, epsilon = 1e-12);
            assert_abs_diff_eq!(yl, yr, epsilon = 1e-12);
        }
    }

    #[test]
    fn rows_are_ordered_front_to_back() {
        let m = Montage::standard_1010();
        let y = |n: &str| m.get(n).unwrap().1;
        assert!(y("FC3") > y("C3") && y("C3") > y("CP3"));
        assert!(m.get("C5").unwrap().0 < m.get("C3").unwrap().0);
    }

    #[test]
    fn rejects_outside_and_duplicates() {
        assert!(Montage::from_coords([("A", (2.0, 0.0))]).is_err());
        assert!(Montage::from_coords([("A", (0.1, 0.0)), ("a", (0.2, 0.0))]).is_err());
        assert!(matches!(
            Montage::standard_1010().get("XYZ"),
            Err(Error::UnknownElectrode(_))
        ));
    }
}
