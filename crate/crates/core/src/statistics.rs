//! Zero-delay second-order correlation g²(0) for a few emitters plus an unpolarized bath.
//!
//! All formulas share one structure: with detection probabilities `P_k` for the emitters
//! and `B = N·P_γ` for a bath of many weak background emitters,
//!
//! ```text
//! g²(0) = (Σ_{j≠k} P_j P_k + 2 B Σ P_k + B²) / (Σ P_k + B)²  =  1 − Σ P_k² / (Σ P_k + B)²
//! ```
//!
//! i.e. every coincidence that does not need one emitter to fire twice.

use crate::dipole::{CapQuadrature, DipoleEmitter, OpticalSystem, PolarizationResponse};
use crate::error::{Error, Result};
use crate::geometry::NvOrientation;
use crate::scalar::Scalar;
use rayon::prelude::*;

/// One to three emitters plus an unpolarized background `N·P_γ` on the same scale as the
/// emitters' detection probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct EmitterSystem<T> {
    pub emitters: Vec<DipoleEmitter<T>>,
    pub background: T,
}

impl<T: Scalar> EmitterSystem<T> {
    pub fn new(emitters: Vec<DipoleEmitter<T>>, background: T) -> Result<Self> {
        if emitters.is_empty() || emitters.len() > 3 {
            return Err(Error::domain(format!(
                "expected 1-3 emitters, got {}",
                emitters.len()
            )));
        }
        if emitters.iter().any(|e| !(e.brightness >= T::zero())) || !(background >= T::zero()) {
            return Err(Error::domain(
                "brightness and background must be non-negative",
            ));
        }
        let total = emitters
            .iter()
            .fold(background, |acc, e| acc + e.brightness);
        if !(total > T::zero()) {
            return Err(Error::domain("system emits no light"));
        }
        Ok(Self {
            emitters,
            background,
        })
    }

    /// Builds a system whose background is `relative_background` times the peak polarized
    /// rate of the brightest emitter.
    pub fn with_relative_background(
        emitters: Vec<DipoleEmitter<T>>,
        relative_background: T,
        optics: &OpticalSystem<T>,
    ) -> Result<Self> {
        if !(relative_background >= T::zero()) {
            return Err(Error::domain("background must be non-negative"));
        }
        let quad = CapQuadrature::new(optics)?;
        let peak = emitters
            .iter()
            .map(|e| PolarizationResponse::of_emitter(e, &quad).max_rate())
            .fold(T::zero(), T::max);
        Self::new(emitters, relative_background * peak)
    }

    /// Per-emitter responses behind the polarizer.
    pub fn responses(&self, optics: &OpticalSystem<T>) -> Result<Vec<PolarizationResponse<T>>> {
        let quad = CapQuadrature::new(optics)?;
        Ok(self
            .emitters
            .iter()
            .map(|e| PolarizationResponse::of_emitter(e, &quad))
            .collect())
    }
}

/// A g²(0) value, guaranteed to lie in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct G2Value<T>(T);

impl<T: Scalar> G2Value<T> {
    fn checked(v: T) -> Self {
        let eps = T::lit(1e-12);
        debug_assert!(v >= -eps && v <= T::one() + eps, "g2 out of range: {v:?}");
        G2Value(v.max(T::zero()).min(T::one()))
    }

    pub fn value(self) -> T {
        self.0
    }
}

/// `1 − 1/n` for `n` equally bright emitters.
pub fn g2_equal<T: Scalar>(n: usize) -> Result<G2Value<T>> {
    if n == 0 {
        return Err(Error::domain("g2_equal needs at least one emitter"));
    }
    Ok(G2Value::checked(
        T::one() - T::one() / T::from_usize_lossy(n),
    ))
}

/// Two emitters with brightness ratio `alpha`: `2α / (1 + α)²`.
pub fn g2_two<T: Scalar>(alpha: T) -> Result<G2Value<T>> {
    if !(alpha >= T::zero()) {
        return Err(Error::domain("brightness ratio must be non-negative"));
    }
    if alpha.is_infinite() {
        return Ok(G2Value(T::zero()));
    }
    let two = T::lit(2.0);
    Ok(G2Value::checked(
        two * alpha / ((T::one() + alpha) * (T::one() + alpha)),
    ))
}

/// Two emitters plus a background bath:
/// `(2 P₁P₂ + 2 (P₁+P₂) NP_γ + (NP_γ)²) / (P₁ + P₂ + NP_γ)²`.
pub fn g2_two_background<T: Scalar>(p1: T, p2: T, np_gamma: T) -> Result<G2Value<T>> {
    if !(p1 >= T::zero() && p2 >= T::zero() && np_gamma >= T::zero()) {
        return Err(Error::domain(
            "detection probabilities must be non-negative",
        ));
    }
    let total = p1 + p2 + np_gamma;
    if !(total > T::zero()) {
        return Err(Error::domain("all detection probabilities are zero"));
    }
    let two = T::lit(2.0);
    let num = two * p1 * p2 + two * (p1 + p2) * np_gamma + np_gamma * np_gamma;
    Ok(G2Value::checked(num / (total * total)))
}

/// Three emitters without background: `2 (P₁P₂ + P₁P₃ + P₂P₃) / (P₁ + P₂ + P₃)²`.
pub fn g2_three<T: Scalar>(p1: T, p2: T, p3: T) -> Result<G2Value<T>> {
    if !(p1 >= T::zero() && p2 >= T::zero() && p3 >= T::zero()) {
        return Err(Error::domain(
            "detection probabilities must be non-negative",
        ));
    }
    let total = p1 + p2 + p3;
    if !(total > T::zero()) {
        return Err(Error::domain("all detection probabilities are zero"));
    }
    let num = T::lit(2.0) * (p1 * p2 + p1 * p3 + p2 * p3);
    Ok(G2Value::checked(num / (total * total)))
}

/// General form for any number of emitters plus a bath, `1 − ΣP² / (ΣP + B)²`.
/// Returns zero when nothing is detected.
pub fn g2_from_probabilities<T: Scalar>(probabilities: &[T], bath: T) -> T {
    let (sum, sum_sq) = probabilities
        .iter()
        .fold((T::zero(), T::zero()), |(s, q), &p| (s + p, q + p * p));
    let total = sum + bath;
    if !(total > T::zero()) {
        return T::zero();
    }
    (T::one() - sum_sq / (total * total)).max(T::zero())
}

/// Polarization-resolved g²(0) of two NVs: each emitter's detection probability at `theta`
/// comes from the aperture-integrated dipole model (times its scale), then the two-emitter
/// background formula applies.
pub fn g2_angular<T: Scalar>(
    theta: T,
    pair: [NvOrientation<T>; 2],
    scales: [T; 2],
    np_gamma: T,
    optics: &OpticalSystem<T>,
) -> Result<G2Value<T>> {
    let quad = CapQuadrature::new(optics)?;
    let rates: Vec<T> = pair
        .iter()
        .zip(scales)
        .map(|(o, s)| {
            let e = DipoleEmitter {
                orientation: *o,
                beta: T::zero(),
                brightness: s,
            };
            PolarizationResponse::of_emitter(&e, &quad).rate(theta)
        })
        .collect();
    g2_two_background(rates[0], rates[1], np_gamma)
}

/// The same quantity with the closed-form double-dipole weights in place of the aperture
/// integral.
pub fn g2_angular_closed_form<T: Scalar>(
    theta: T,
    pair: [NvOrientation<T>; 2],
    scales: [T; 2],
    np_gamma: T,
) -> Result<G2Value<T>> {
    let p = |o: &NvOrientation<T>, s: T| {
        s * crate::dipole::detection_probability_closed_form(theta, o.polar_angle, o.azimuth)
    };
    g2_two_background(p(&pair[0], scales[0]), p(&pair[1], scales[1]), np_gamma)
}

/// g²(0) with the polarizer removed: each emitter contributes its polarizer-averaged rate.
pub fn unpolarized_g2<T: Scalar>(
    system: &EmitterSystem<T>,
    optics: &OpticalSystem<T>,
) -> Result<G2Value<T>> {
    let means: Vec<T> = system
        .responses(optics)?
        .iter()
        .map(|r| r.mean_rate())
        .collect();
    Ok(G2Value::checked(g2_from_probabilities(
        &means,
        system.background,
    )))
}

/// A heatmap of g²(0) values. `values[i][j]` belongs to `row_values[i]`, `column_values[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct G2Map<T> {
    pub row_label: String,
    pub column_label: String,
    pub row_values: Vec<T>,
    pub column_values: Vec<T>,
    pub values: Vec<Vec<T>>,
}

impl<T: Scalar> G2Map<T> {
    pub fn get(&self, row: usize, column: usize) -> T {
        self.values[row][column]
    }

    /// Number of cells strictly below `level`.
    pub fn count_below(&self, level: T) -> usize {
        self.values.iter().flatten().filter(|&&v| v < level).count()
    }
}

fn check_grid<T: Scalar>(values: &[T], what: &str) -> Result<()> {
    if values.iter().any(|v| !(*v >= T::zero())) {
        return Err(Error::domain(format!(
            "{what} grid values must be non-negative"
        )));
    }
    Ok(())
}

/// Two-emitter map with `P₁ = 1`, `P₂ = ratio`, `NP_γ = background` (background in units of
/// the brighter emitter's detection probability). Rows are backgrounds, columns ratios.
pub fn g2_map_two<T: Scalar>(ratios: &[T], backgrounds: &[T]) -> Result<G2Map<T>> {
    check_grid(ratios, "ratio")?;
    check_grid(backgrounds, "background")?;
    let values = backgrounds
        .par_iter()
        .map(|&b| {
            ratios
                .iter()
                .map(|&r| g2_two_background(T::one(), r, b).map(G2Value::value))
                .collect::<Result<Vec<T>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(G2Map {
        row_label: "background_np_gamma_over_p1".into(),
        column_label: "ratio_p2_over_p1".into(),
        row_values: backgrounds.to_vec(),
        column_values: ratios.to_vec(),
        values,
    })
}

/// Three-emitter map without background: `P₁ = 1`, `P₂` along columns, `P₃` along rows.
pub fn g2_map_three<T: Scalar>(ratios_second: &[T], ratios_third: &[T]) -> Result<G2Map<T>> {
    check_grid(ratios_second, "ratio")?;
    check_grid(ratios_third, "ratio")?;
    let values = ratios_third
        .par_iter()
        .map(|&r3| {
            ratios_second
                .iter()
                .map(|&r2| g2_three(T::one(), r2, r3).map(G2Value::value))
                .collect::<Result<Vec<T>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(G2Map {
        row_label: "ratio_p3_over_p1".into(),
        column_label: "ratio_p2_over_p1".into(),
        row_values: ratios_third.to_vec(),
        column_values: ratios_second.to_vec(),
        values,
    })
}

/// Background `NP_γ` (units of `P₁`) at which the two-emitter g²(0) equals 0.5 for a given
/// ratio: `√(2(1 + r²)) − (1 + r)`. Zero at `r = 1`.
pub fn half_contour_background<T: Scalar>(ratio: T) -> T {
    let two = T::lit(2.0);
    ((two * (T::one() + ratio * ratio)).sqrt() - (T::one() + ratio)).max(T::zero())
}
