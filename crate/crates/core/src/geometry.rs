//! NV axes of a [100]-cut diamond, the lab frame, and the ten orientation-pair hypotheses.
//!
//! The lab frame has the optical axis along `z` ([001]) and measures both azimuths and
//! polarizer angles from `x`. The four NV axes are the `<111>` family:
//!
//! | label | axis            | x-y projection |
//! |-------|-----------------|----------------|
//! | a     | ( 1,  1,  1)/√3 | ( 1,  1)       |
//! | b     | (-1, -1,  1)/√3 | (-1, -1)       |
//! | c     | ( 1, -1, -1)/√3 | ( 1, -1)       |
//! | d     | (-1,  1, -1)/√3 | (-1,  1)       |

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitVector3<T> {
    x: T,
    y: T,
    z: T,
}

impl<T: Scalar> UnitVector3<T> {
    /// Normalizes `(x, y, z)`. Fails on a zero or non-finite vector.
    pub fn new(x: T, y: T, z: T) -> Result<Self> {
        let norm = (x * x + y * y + z * z).sqrt();
        if !(norm > T::zero()) || !norm.is_finite() {
            return Err(Error::domain(
                "cannot normalize a zero or non-finite vector",
            ));
        }
        Ok(Self {
            x: x / norm,
            y: y / norm,
            z: z / norm,
        })
    }

    pub fn from_array(v: [T; 3]) -> Result<Self> {
        Self::new(v[0], v[1], v[2])
    }

    pub fn x_axis() -> Self {
        Self {
            x: T::one(),
            y: T::zero(),
            z: T::zero(),
        }
    }

    pub fn z_axis() -> Self {
        Self {
            x: T::zero(),
            y: T::zero(),
            z: T::one(),
        }
    }

    pub fn x(&self) -> T {
        self.x
    }

    pub fn y(&self) -> T {
        self.y
    }

    pub fn z(&self) -> T {
        self.z
    }

    pub fn to_array(&self) -> [T; 3] {
        [self.x, self.y, self.z]
    }

    pub fn norm(&self) -> T {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn dot(&self, other: &Self) -> T {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn cross(&self, other: &Self) -> [T; 3] {
        cross(self.to_array(), other.to_array())
    }

    /// Angle between the two directions, in radians.
    pub fn angle_to(&self, other: &Self) -> T {
        self.dot(other).max(-T::one()).min(T::one()).acos()
    }

    pub fn cast<U: Scalar>(&self) -> UnitVector3<U> {
        let c = |v: T| U::lit(v.to_f64_lossy());
        UnitVector3 {
            x: c(self.x),
            y: c(self.y),
            z: c(self.z),
        }
    }
}

pub(crate) fn cross<T: Scalar>(a: [T; 3], b: [T; 3]) -> [T; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn dot<T: Scalar>(a: [T; 3], b: [T; 3]) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Crystal label of an NV axis. Serialized as a single lowercase character.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OrientationLabel {
    A,
    B,
    C,
    D,
}

impl OrientationLabel {
    pub const ALL: [OrientationLabel; 4] = [
        OrientationLabel::A,
        OrientationLabel::B,
        OrientationLabel::C,
        OrientationLabel::D,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_char(self) -> char {
        match self {
            OrientationLabel::A => 'a',
            OrientationLabel::B => 'b',
            OrientationLabel::C => 'c',
            OrientationLabel::D => 'd',
        }
    }

    /// Unnormalized integer direction of the axis.
    fn lattice_direction(self) -> [i8; 3] {
        match self {
            OrientationLabel::A => [1, 1, 1],
            OrientationLabel::B => [-1, -1, 1],
            OrientationLabel::C => [1, -1, -1],
            OrientationLabel::D => [-1, 1, -1],
        }
    }

    pub fn orientation<T: Scalar>(self) -> NvOrientation<T> {
        let [x, y, z] = self.lattice_direction().map(|v| T::lit(f64::from(v)));
        let axis = UnitVector3::new(x, y, z).expect("lattice directions are non-zero");
        NvOrientation::from_axis(self, axis)
    }
}

impl fmt::Display for OrientationLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

impl FromStr for OrientationLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "a" | "A" => Ok(OrientationLabel::A),
            "b" | "B" => Ok(OrientationLabel::B),
            "c" | "C" => Ok(OrientationLabel::C),
            "d" | "D" => Ok(OrientationLabel::D),
            other => Err(Error::InvalidInput(format!(
                "unknown NV orientation label {other:?}"
            ))),
        }
    }
}

/// An NV axis together with its angles in the lab frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NvOrientation<T> {
    pub label: OrientationLabel,
    pub axis: UnitVector3<T>,
    /// Polar angle from the optical axis.
    pub polar_angle: T,
    /// Azimuth of the x-y projection, measured from lab x.
    pub azimuth: T,
}

impl<T: Scalar> NvOrientation<T> {
    fn from_axis(label: OrientationLabel, axis: UnitVector3<T>) -> Self {
        let polar_angle = axis.z().max(-T::one()).min(T::one()).acos();
        let azimuth = axis.y().atan2(axis.x());
        Self {
            label,
            axis,
            polar_angle,
            azimuth,
        }
    }
}

/// The four NV orientations a, b, c, d.
pub fn nv_axes<T: Scalar>() -> [NvOrientation<T>; 4] {
    OrientationLabel::ALL.map(|l| l.orientation())
}

/// Unordered pair of NV labels (repetition allowed). Stored with `first <= second`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct OrientationPair {
    first: OrientationLabel,
    second: OrientationLabel,
}

impl OrientationPair {
    pub fn new(a: OrientationLabel, b: OrientationLabel) -> Self {
        if a <= b {
            Self {
                first: a,
                second: b,
            }
        } else {
            Self {
                first: b,
                second: a,
            }
        }
    }

    pub fn first(&self) -> OrientationLabel {
        self.first
    }

    pub fn second(&self) -> OrientationLabel {
        self.second
    }

    pub fn is_aligned(&self) -> bool {
        self.first == self.second
    }

    /// Index into [`enumerate_pairs`].
    pub fn index(&self) -> usize {
        enumerate_pairs()
            .iter()
            .position(|p| p == self)
            .expect("every pair is enumerated")
    }
}

impl fmt::Display for OrientationPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}&{}", self.first, self.second)
    }
}

impl FromStr for OrientationPair {
    type Err = Error;

    /// Parses `"a&c"`, `"ac"` or `"a,c"`.
    fn from_str(s: &str) -> Result<Self> {
        let chars: Vec<char> = s.chars().filter(|c| c.is_ascii_alphabetic()).collect();
        if chars.len() != 2 {
            return Err(Error::InvalidInput(format!(
                "expected two orientation labels, got {s:?}"
            )));
        }
        let a = chars[0].to_string().parse()?;
        let b = chars[1].to_string().parse()?;
        Ok(Self::new(a, b))
    }
}

impl Serialize for OrientationPair {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for OrientationPair {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// All ten unordered pairs over {a, b, c, d}, in lexicographic order.
pub fn enumerate_pairs() -> [OrientationPair; 10] {
    use OrientationLabel::*;
    let p = OrientationPair::new;
    [
        p(A, A),
        p(A, B),
        p(A, C),
        p(A, D),
        p(B, B),
        p(B, C),
        p(B, D),
        p(C, C),
        p(C, D),
        p(D, D),
    ]
}

/// Pairs whose polarization-resolved observables coincide at every angle.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DegeneracyClass {
    pub id: usize,
    pub members: Vec<OrientationPair>,
}

impl DegeneracyClass {
    pub fn contains(&self, pair: &OrientationPair) -> bool {
        self.members.contains(pair)
    }
}

/// Groups pairs whose curve bundles agree within `tol` (relative to the bundle's largest
/// magnitude). `curves` must return the same number of samples for every pair.
///
/// Class ids follow the order in which a class's first member appears in [`enumerate_pairs`].
pub fn group_by_curves<F>(curves: F, tol: f64) -> Vec<DegeneracyClass>
where
    F: Fn(OrientationPair) -> Vec<f64>,
{
    let pairs = enumerate_pairs();
    let bundles: Vec<Vec<f64>> = pairs.iter().map(|&p| curves(p)).collect();
    let mut classes: Vec<DegeneracyClass> = Vec::new();
    let mut representative: Vec<usize> = Vec::new();

    for (i, pair) in pairs.iter().enumerate() {
        let found = representative
            .iter()
            .position(|&r| curves_match(&bundles[r], &bundles[i], tol));
        match found {
            Some(c) => classes[c].members.push(*pair),
            None => {
                representative.push(i);
                classes.push(DegeneracyClass {
                    id: classes.len(),
                    members: vec![*pair],
                });
            }
        }
    }
    classes
}

fn curves_match(a: &[f64], b: &[f64], tol: f64) -> bool {
    assert_eq!(
        a.len(),
        b.len(),
        "curve bundles must be sampled identically"
    );
    let scale = a
        .iter()
        .chain(b)
        .fold(0.0_f64, |m, v| m.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * scale)
}

/// Degeneracy classes of the ten pairs under the default optics, found by comparing the
/// forward-model intensity and g² curves on the 19-angle grid over several ratio/background
/// settings. Computed once per process.
pub fn degeneracy_classes() -> &'static [DegeneracyClass] {
    static CLASSES: OnceLock<Vec<DegeneracyClass>> = OnceLock::new();
    CLASSES.get_or_init(|| {
        let optics = crate::dipole::OpticalSystem::<f64>::default();
        let responses = crate::dipole::ResponseTable::new(&optics);
        let angles: Vec<f64> = (0..19).map(|i| (10.0 * i as f64).to_radians()).collect();
        let settings = [(0.1, 0.0), (0.5, 0.0), (1.0, 0.0), (0.4, 0.05), (0.7, 0.3)];
        group_by_curves(
            |pair| {
                let mut bundle = Vec::new();
                for &(ratio, background) in &settings {
                    let (intensity, g2) =
                        responses.pair_curves(pair, ratio, background, 0.0, &angles);
                    bundle.extend(intensity);
                    bundle.extend(g2);
                }
                bundle
            },
            1e-9,
        )
    })
}

/// The class containing `pair`.
pub fn degeneracy_class(pair: OrientationPair) -> &'static DegeneracyClass {
    degeneracy_classes()
        .iter()
        .find(|c| c.contains(&pair))
        .expect("every pair belongs to a class")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use OrientationLabel::*;

    #[test]
    fn canonical_axes_are_unit_and_tetrahedral() {
        let axes = nv_axes::<f64>();
        let s = 1.0 / 3.0_f64.sqrt();
        assert_abs_diff_eq!(axes[0].axis.x(), s, epsilon = 1e-15);
        assert_abs_diff_eq!(axes[0].axis.y(), s, epsilon = 1e-15);
        assert_abs_diff_eq!(axes[0].axis.z(), s, epsilon = 1e-15);
        for a in &axes {
            assert_abs_diff_eq!(a.axis.norm(), 1.0, epsilon = 1e-12);
        }
        let tetrahedral = (-1.0_f64 / 3.0).acos();
        for i in 0..4 {
            for j in (i + 1)..4 {
                assert_abs_diff_eq!(axes[i].axis.dot(&axes[j].axis), -1.0 / 3.0, epsilon = 1e-12);
                assert_abs_diff_eq!(
                    axes[i].axis.angle_to(&axes[j].axis),
                    tetrahedral,
                    epsilon = 1e-12
                );
            }
        }
        assert_abs_diff_eq!(tetrahedral.to_degrees(), 109.47, epsilon = 0.01);
    }

    #[test]
    fn lab_angles_match_axis() {
        for o in nv_axes::<f64>() {
            assert_abs_diff_eq!(o.polar_angle.cos(), o.axis.z(), epsilon = 1e-12);
            let r = (o.axis.x().powi(2) + o.axis.y().powi(2)).sqrt();
            assert_abs_diff_eq!(o.azimuth.cos() * r, o.axis.x(), epsilon = 1e-12);
            assert_abs_diff_eq!(o.azimuth.sin() * r, o.axis.y(), epsilon = 1e-12);
        }
    }

    #[test]
    fn projections_antiparallel_and_perpendicular() {
        let [a, b, c, d] = nv_axes::<f64>();
        let proj = |o: &NvOrientation<f64>| [o.axis.x(), o.axis.y()];
        let dot2 = |u: [f64; 2], v: [f64; 2]| u[0] * v[0] + u[1] * v[1];
        let norm2 = |u: [f64; 2]| dot2(u, u).sqrt();
        let cosang = |u, v| dot2(u, v) / (norm2(u) * norm2(v));
        assert_abs_diff_eq!(cosang(proj(&a), proj(&b)), -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(cosang(proj(&c), proj(&d)), -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(cosang(proj(&a), proj(&c)), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn ten_unordered_pairs() {
        let pairs = enumerate_pairs();
        assert_eq!(pairs.len(), 10);
        let mut sorted = pairs.to_vec();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 10);
        assert!(pairs.contains(&OrientationPair::new(A, A)));
        assert_eq!(OrientationPair::new(C, A), OrientationPair::new(A, C));
        assert_eq!(
            pairs
                .iter()
                .filter(|p| **p == OrientationPair::new(C, A))
                .count(),
            1
        );
        for (i, p) in pairs.iter().enumerate() {
            assert_eq!(p.index(), i);
        }
    }

    #[test]
    fn label_and_pair_text_forms() {
        assert_eq!("c".parse::<OrientationLabel>().unwrap(), C);
        assert!("e".parse::<OrientationLabel>().is_err());
        assert_eq!(serde_json::to_string(&D).unwrap(), "\"d\"");
        let pair: OrientationPair = "c&a".parse().unwrap();
        assert_eq!(pair.to_string(), "a&c");
        assert_eq!(serde_json::to_string(&pair).unwrap(), "\"a&c\"");
        assert!("abc".parse::<OrientationPair>().is_err());
    }

    #[test]
    fn zero_vector_rejected() {
        assert!(UnitVector3::<f64>::new(0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn numerically_found_classes() {
        let classes = degeneracy_classes();
        assert_eq!(classes.len(), 3);
        let p = OrientationPair::new;
        let mixed = degeneracy_class(p(A, C));
        let mut members = mixed.members.clone();
        members.sort();
        assert_eq!(members, vec![p(A, C), p(A, D), p(B, C), p(B, D)]);
        assert_eq!(degeneracy_class(p(A, A)), degeneracy_class(p(B, B)));
        assert_eq!(degeneracy_class(p(A, A)), degeneracy_class(p(A, B)));
        assert_ne!(degeneracy_class(p(A, B)), degeneracy_class(p(A, C)));
        assert_eq!(degeneracy_class(p(C, C)), degeneracy_class(p(D, D)));
        assert_ne!(degeneracy_class(p(A, A)), degeneracy_class(p(C, C)));
    }

    #[test]
    fn grouping_with_synthetic_curves() {
        // Two classes keyed on whether the pair contains label a.
        let classes = group_by_curves(|p| vec![if p.first() == A { 1.0 } else { 2.0 }], 1e-12);
        assert_eq!(classes.len(), 2);
        assert_eq!(classes[0].members.len(), 4);
        assert_eq!(classes[1].members.len(), 6);
    }
}
