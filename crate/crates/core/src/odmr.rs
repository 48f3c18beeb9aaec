//! Continuous-wave ODMR spectra of one to three NV centers in a static magnetic field.
//!
//! Each center's ground-state triplet is `H = D S_z² + γ_e B·S` in its own frame (z along the
//! NV axis). The two allowed transitions out of `m_s = 0` give Lorentzian PL dips; centers
//! are weighted by their share of the total brightness.

use crate::error::{Error, Result};
use crate::synthetic::{sample_counts_with, RandomSeed};
use crate::UnitVector3;
use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen};
use std::io::Write;

pub const ZERO_FIELD_SPLITTING_GHZ: f64 = 2.857;
/// Electron gyromagnetic ratio in GHz/T.
pub const GYROMAGNETIC_RATIO_GHZ_PER_T: f64 = 28.024;
/// Above this field the spin-1 picture without level anticrossings is logged as suspect.
pub const WEAK_FIELD_LIMIT_MT: f64 = 10.0;

/// Splitting of the a-axis doublet produced by [`OdmrConfig::default`], in GHz.
pub const DEFAULT_OUTER_SPLITTING_GHZ: f64 = 0.040;

/// Field direction used for the two- and three-center examples.
pub fn default_field_direction() -> UnitVector3 {
    UnitVector3::new(1.0 / 3.0, 1.0 / 3.0, 1.0).expect("nonzero")
}

/// Field along [`default_field_direction`] whose secular a-axis splitting is
/// [`DEFAULT_OUTER_SPLITTING_GHZ`].
pub fn default_field_mt() -> [f64; 3] {
    let dir = default_field_direction();
    let a = crate::OrientationLabel::A.orientation::<f64>().axis;
    let gamma_per_mt = GYROMAGNETIC_RATIO_GHZ_PER_T * 1e-3;
    let magnitude = DEFAULT_OUTER_SPLITTING_GHZ / (2.0 * gamma_per_mt * dir.dot(&a).abs());
    dir.to_array().map(|c| c * magnitude)
}

/// Uniform grid from `start` to `stop` inclusive.
pub fn frequency_grid(start_ghz: f64, stop_ghz: f64, points: usize) -> Vec<f64> {
    if points < 2 {
        return vec![start_ghz; points];
    }
    (0..points)
        .map(|i| start_ghz + (stop_ghz - start_ghz) * i as f64 / (points - 1) as f64)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct OdmrConfig {
    pub zero_field_splitting_ghz: f64,
    pub gyromagnetic_ratio_ghz_per_t: f64,
    pub b_field_mt: [f64; 3],
    /// Lorentzian FWHM.
    pub linewidth_mhz: f64,
    /// Depth of each transition's dip for a center carrying all the brightness.
    pub contrast_per_nv: f64,
    pub frequencies_ghz: Vec<f64>,
}

impl Default for OdmrConfig {
    fn default() -> Self {
        Self {
            zero_field_splitting_ghz: ZERO_FIELD_SPLITTING_GHZ,
            gyromagnetic_ratio_ghz_per_t: GYROMAGNETIC_RATIO_GHZ_PER_T,
            b_field_mt: default_field_mt(),
            linewidth_mhz: 6.0,
            contrast_per_nv: 0.1,
            frequencies_ghz: frequency_grid(2.80, 2.92, 481),
        }
    }
}

impl OdmrConfig {
    pub fn with_field_mt(mut self, b: [f64; 3]) -> Self {
        self.b_field_mt = b;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.zero_field_splitting_ghz > 0.0) {
            return Err(Error::InvalidInput(
                "zero-field splitting must be positive".into(),
            ));
        }
        if !(self.linewidth_mhz > 0.0) {
            return Err(Error::InvalidInput("linewidth must be positive".into()));
        }
        // coincident transitions (zero field) stack two dips, so the depth per dip stays
        // below one half to keep the PL positive
        if !(self.contrast_per_nv > 0.0 && self.contrast_per_nv < 0.5) {
            return Err(Error::InvalidInput(format!(
                "contrast per center must be in (0, 0.5), got {}",
                self.contrast_per_nv
            )));
        }
        if self.b_field_mt.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidInput("magnetic field must be finite".into()));
        }
        if self.frequencies_ghz.is_empty() {
            return Err(Error::InvalidInput("empty frequency grid".into()));
        }
        Ok(())
    }

    pub fn field_magnitude_mt(&self) -> f64 {
        self.b_field_mt.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    /// γ_e·B in GHz, split into components along and across `axis`.
    fn zeeman_ghz(&self, axis: &UnitVector3) -> (f64, f64) {
        let g = self.gyromagnetic_ratio_ghz_per_t * 1e-3;
        let b = self.b_field_mt;
        let n = axis.to_array();
        let parallel = b[0] * n[0] + b[1] * n[1] + b[2] * n[2];
        let total_sq: f64 = b.iter().map(|c| c * c).sum();
        let perpendicular = (total_sq - parallel * parallel).max(0.0).sqrt();
        (g * parallel, g * perpendicular)
    }
}

/// Transition frequencies `(f−, f+)` in GHz from diagonalizing the spin-1 Hamiltonian.
pub fn resonance_frequencies(axis: &UnitVector3, config: &OdmrConfig) -> (f64, f64) {
    if config.field_magnitude_mt() > WEAK_FIELD_LIMIT_MT {
        log::warn!(
            "field of {:.2} mT exceeds {WEAK_FIELD_LIMIT_MT} mT; level ordering may change",
            config.field_magnitude_mt()
        );
    }
    let d = config.zero_field_splitting_ghz;
    let (bz, bx) = config.zeeman_ghz(axis);
    // the transverse field is rotated onto x, which makes H real
    let s = std::f64::consts::FRAC_1_SQRT_2 * bx;
    let h = Matrix3::new(d + bz, s, 0.0, s, 0.0, s, 0.0, s, d - bz);
    let mut e: Vec<f64> = SymmetricEigen::new(h).eigenvalues.iter().copied().collect();
    e.sort_by(f64::total_cmp);
    (e[1] - e[0], e[2] - e[0])
}

/// First-order transition frequencies `D ∓ γ_e |B·axis|`.
pub fn secular_resonances(axis: &UnitVector3, config: &OdmrConfig) -> (f64, f64) {
    let (bz, _) = config.zeeman_ghz(axis);
    let d = config.zero_field_splitting_ghz;
    (d - bz.abs(), d + bz.abs())
}

/// Peak-normalized Lorentzian of full width `fwhm`.
fn lorentzian(f: f64, center: f64, fwhm: f64) -> f64 {
    let h = 0.5 * fwhm;
    h * h / ((f - center).powi(2) + h * h)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OdmrSpectrum {
    pub frequencies_ghz: Vec<f64>,
    pub normalized_pl: Vec<f64>,
}

impl OdmrSpectrum {
    pub fn write_csv<W: Write>(&self, mut out: W, meta: Option<&str>) -> Result<()> {
        if let Some(m) = meta {
            writeln!(out, "# {m}")?;
        }
        writeln!(out, "frequency_ghz,normalized_pl")?;
        for (f, p) in self.frequencies_ghz.iter().zip(&self.normalized_pl) {
            writeln!(out, "{f},{p}")?;
        }
        Ok(())
    }

    /// Interior points strictly below both neighbors and at least `min_depth` below 1.
    pub fn local_minima(&self, min_depth: f64) -> Vec<usize> {
        let p = &self.normalized_pl;
        (1..p.len().saturating_sub(1))
            .filter(|&i| p[i] < p[i - 1] && p[i] < p[i + 1] && 1.0 - p[i] >= min_depth)
            .collect()
    }
}

/// Clean spectrum of `emitters`, each an (axis, brightness weight) pair.
pub fn spectrum(emitters: &[(UnitVector3, f64)], config: &OdmrConfig) -> Result<OdmrSpectrum> {
    config.validate()?;
    if emitters.is_empty() {
        return Err(Error::domain("an ODMR spectrum needs at least one center"));
    }
    if emitters.iter().any(|(_, w)| !(*w >= 0.0)) {
        return Err(Error::domain("brightness weights must be non-negative"));
    }
    let total: f64 = emitters.iter().map(|(_, w)| w).sum();
    if !(total > 0.0) {
        return Err(Error::domain("brightness weights sum to zero"));
    }
    let fwhm = config.linewidth_mhz * 1e-3;
    let lines: Vec<(f64, f64)> = emitters
        .iter()
        .flat_map(|(axis, w)| {
            let (lo, hi) = resonance_frequencies(axis, config);
            let depth = w / total * config.contrast_per_nv;
            [(lo, depth), (hi, depth)]
        })
        .collect();
    let normalized_pl = config
        .frequencies_ghz
        .iter()
        .map(|&f| {
            1.0 - lines
                .iter()
                .map(|&(c, a)| a * lorentzian(f, c, fwhm))
                .sum::<f64>()
        })
        .collect();
    Ok(OdmrSpectrum {
        frequencies_ghz: config.frequencies_ghz.clone(),
        normalized_pl,
    })
}

/// Shot-noise version of `spectrum`: each point becomes `Poisson(pl·N)/N`.
pub fn add_odmr_noise(
    spectrum: &OdmrSpectrum,
    photons_per_point: f64,
    seed: RandomSeed,
) -> Result<OdmrSpectrum> {
    if !(photons_per_point > 0.0) || !photons_per_point.is_finite() {
        return Err(Error::domain("photons per point must be positive"));
    }
    let mut rng = seed.stream(0);
    let normalized_pl = spectrum
        .normalized_pl
        .iter()
        .map(|&p| {
            sample_counts_with(p.max(0.0), photons_per_point, &mut rng)
                .map(|c| c as f64 / photons_per_point)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(OdmrSpectrum {
        frequencies_ghz: spectrum.frequencies_ghz.clone(),
        normalized_pl,
    })
}

/// Depth of a Lorentzian dip at each of `centers_ghz`, by linear least squares on `1 − pl`.
/// Robust to overlapping tails, unlike reading depths off the curve.
pub fn dip_contrasts(
    spectrum: &OdmrSpectrum,
    centers_ghz: &[f64],
    linewidth_mhz: f64,
) -> Result<Vec<f64>> {
    let n = spectrum.frequencies_ghz.len();
    if centers_ghz.is_empty() || n < centers_ghz.len() {
        return Err(Error::domain("need at least as many points as dips"));
    }
    let fwhm = linewidth_mhz * 1e-3;
    let design = DMatrix::from_fn(n, centers_ghz.len(), |i, j| {
        lorentzian(spectrum.frequencies_ghz[i], centers_ghz[j], fwhm)
    });
    let depth = DVector::from_iterator(n, spectrum.normalized_pl.iter().map(|p| 1.0 - p));
    let solution = design
        .svd(true, true)
        .solve(&depth, 1e-12)
        .map_err(|e| Error::domain(format!("least-squares solve failed: {e}")))?;
    Ok(solution.iter().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::OrientationLabel::{self, *};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn axis(l: OrientationLabel) -> UnitVector3 {
        l.orientation::<f64>().axis
    }

    fn along(l: OrientationLabel, splitting_ghz: f64) -> OdmrConfig {
        let mag = splitting_ghz / (GYROMAGNETIC_RATIO_GHZ_PER_T * 1e-3);
        OdmrConfig::default().with_field_mt(axis(l).to_array().map(|c| c * mag))
    }

    #[test]
    fn zero_field() {
        let cfg = OdmrConfig::default().with_field_mt([0.0; 3]);
        let (lo, hi) = resonance_frequencies(&axis(A), &cfg);
        assert_abs_diff_eq!(lo, 2.857, epsilon = 1e-12);
        assert_abs_diff_eq!(hi, 2.857, epsilon = 1e-12);
        let s = spectrum(&[(axis(A), 1.0)], &cfg).unwrap();
        let minima = s.local_minima(1e-3);
        assert_eq!(minima.len(), 1);
        assert_abs_diff_eq!(s.frequencies_ghz[minima[0]], 2.857, epsilon = 1e-9);
    }

    #[test]
    fn parallel_field_is_exact() {
        let cfg = along(B, 0.010);
        let (lo, hi) = resonance_frequencies(&axis(B), &cfg);
        assert_abs_diff_eq!(lo, 2.847, epsilon = 1e-12);
        assert_abs_diff_eq!(hi, 2.867, epsilon = 1e-12);
    }

    #[test]
    fn perpendicular_field_is_second_order() {
        // γ|B| = 1 MHz across the a axis
        let perp = UnitVector3::from_array(axis(A).cross(&UnitVector3::x_axis())).unwrap();
        let mag = 0.001 / (GYROMAGNETIC_RATIO_GHZ_PER_T * 1e-3);
        let cfg = OdmrConfig::default().with_field_mt(perp.to_array().map(|c| c * mag));
        let (lo, hi) = resonance_frequencies(&axis(A), &cfg);
        assert!(hi - lo < 2.0 * 0.001 * 0.1, "{}", hi - lo);
        // oracle: both levels shift up by (γB)²/D to second order
        let shift = 0.001_f64.powi(2) / 2.857;
        assert_abs_diff_eq!(0.5 * (lo + hi), 2.857 + 1.5 * shift, epsilon = 2e-6);
    }

    #[test]
    fn single_center_dips_are_symmetric() {
        let cfg = along(C, 0.015);
        let (lo, hi) = resonance_frequencies(&axis(C), &cfg);
        assert_abs_diff_eq!(0.5 * (lo + hi), 2.857, epsilon = 1e-9);
        let s = spectrum(&[(axis(C), 1.0)], &cfg).unwrap();
        assert_eq!(s.local_minima(1e-3).len(), 2);
    }

    #[test]
    fn two_orientations_give_four_dips() {
        let cfg = OdmrConfig::default();
        let s = spectrum(&[(axis(B), 1.0), (axis(D), 1.0)], &cfg).unwrap();
        assert_eq!(s.local_minima(1e-3).len(), 4);
        let (a_lo, a_hi) = resonance_frequencies(&axis(A), &cfg);
        assert_abs_diff_eq!(a_hi - a_lo, DEFAULT_OUTER_SPLITTING_GHZ, epsilon = 1e-4);
    }

    #[test]
    fn lone_orientation_has_half_contrast() {
        let cfg = OdmrConfig::default();
        let centers = [(axis(A), 1.0), (axis(A), 1.0), (axis(C), 1.0)];
        let s = spectrum(&centers, &cfg).unwrap();
        let (a_lo, a_hi) = resonance_frequencies(&axis(A), &cfg);
        let (c_lo, c_hi) = resonance_frequencies(&axis(C), &cfg);
        let depths = dip_contrasts(&s, &[a_lo, c_lo, c_hi, a_hi], cfg.linewidth_mhz).unwrap();
        assert_abs_diff_eq!(depths[1] / depths[0], 0.5, epsilon = 1e-9);
        assert_abs_diff_eq!(depths[2] / depths[3], 0.5, epsilon = 1e-9);
        assert_abs_diff_eq!(depths[0], 2.0 / 3.0 * cfg.contrast_per_nv, epsilon = 1e-9);
    }

    #[test]
    fn secular_limit_for_near_axial_fields() {
        // up to 2 mT along each axis plus a 0.4 mT transverse component
        for l in OrientationLabel::ALL {
            let n = axis(l);
            let perp = UnitVector3::from_array(n.cross(&UnitVector3::z_axis())).unwrap();
            for mag in [0.5, 1.0, 2.0] {
                let b: Vec<f64> = (0..3)
                    .map(|i| mag * n.to_array()[i] + 0.4 * perp.to_array()[i])
                    .collect();
                let cfg = OdmrConfig::default().with_field_mt([b[0], b[1], b[2]]);
                let full = resonance_frequencies(&n, &cfg);
                let sec = secular_resonances(&n, &cfg);
                assert!(
                    (full.0 - sec.0).abs() < 1e-4 && (full.1 - sec.1).abs() < 1e-4,
                    "{l} {mag}"
                );
            }
        }
    }

    #[test]
    fn oblique_fields_match_second_order_perturbation() {
        let d = ZERO_FIELD_SPLITTING_GHZ;
        for l in OrientationLabel::ALL {
            for mag in [0.5, 1.0, 2.0] {
                let dir = default_field_direction().to_array();
                let cfg = OdmrConfig::default().with_field_mt(dir.map(|c| c * mag));
                let (bz, bx) = cfg.zeeman_ghz(&axis(l));
                let bz = bz.abs();
                let e0 = -0.5 * bx * bx * (1.0 / (d + bz) + 1.0 / (d - bz));
                let lo = d - bz + 0.5 * bx * bx / (d - bz) - e0;
                let hi = d + bz + 0.5 * bx * bx / (d + bz) - e0;
                let full = resonance_frequencies(&axis(l), &cfg);
                assert!(
                    (full.0 - lo).abs() < 2e-5 && (full.1 - hi).abs() < 2e-5,
                    "{l} {mag}"
                );
            }
        }
    }

    #[test]
    fn noise_statistics() {
        let cfg = OdmrConfig::default();
        let clean = spectrum(&[(axis(A), 1.0), (axis(C), 1.0)], &cfg).unwrap();
        let rms = |n: &OdmrSpectrum| {
            let m = clean.normalized_pl.len() as f64;
            (n.normalized_pl
                .iter()
                .zip(&clean.normalized_pl)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                / m)
                .sqrt()
        };
        let big = add_odmr_noise(&clean, 1e9, RandomSeed(1)).unwrap();
        assert!(rms(&big) < 1e-4);
        let small = add_odmr_noise(&clean, 1e3, RandomSeed(1)).unwrap();
        assert!(
            (rms(&small) - 1e3_f64.sqrt().recip()).abs() < 0.2 * 1e3_f64.sqrt().recip(),
            "{}",
            rms(&small)
        );
        assert_eq!(small, add_odmr_noise(&clean, 1e3, RandomSeed(1)).unwrap());
        assert_ne!(small, add_odmr_noise(&clean, 1e3, RandomSeed(2)).unwrap());
        assert!(add_odmr_noise(&clean, 0.0, RandomSeed(1)).is_err());
    }

    #[test]
    fn invalid_inputs() {
        assert!(spectrum(&[], &OdmrConfig::default()).is_err());
        let bad = OdmrConfig {
            linewidth_mhz: 0.0,
            ..Default::default()
        };
        assert!(spectrum(&[(axis(A), 1.0)], &bad).is_err());
        let bad = OdmrConfig {
            contrast_per_nv: 0.7,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    proptest! {
        #[test]
        fn pl_stays_in_unit_interval(
            b in prop::array::uniform3(-5.0..5.0_f64),
            weights in prop::collection::vec(0.1..3.0_f64, 1..4),
            contrast in 0.01..0.49_f64,
        ) {
            let cfg = OdmrConfig { contrast_per_nv: contrast, ..OdmrConfig::default().with_field_mt(b) };
            let centers: Vec<_> = weights.iter().enumerate().map(|(i, &w)| (axis(OrientationLabel::ALL[i]), w)).collect();
            let s = spectrum(&centers, &cfg).unwrap();
            prop_assert!(s.normalized_pl.iter().all(|&p| p > 0.0 && p <= 1.0));
        }

        #[test]
        fn dip_area_scales_with_contrast(k in 0.1..4.0_f64) {
            let base = OdmrConfig { contrast_per_nv: 0.1, ..Default::default() };
            let scaled = OdmrConfig { contrast_per_nv: (0.1 * k).min(0.49), ..Default::default() };
            let centers = [(axis(A), 1.0), (axis(C), 2.0)];
            let area = |c: &OdmrConfig| spectrum(&centers, c).unwrap().normalized_pl.iter().map(|p| 1.0 - p).sum::<f64>();
            let ratio = area(&scaled) / area(&base);
            prop_assert!((ratio - scaled.contrast_per_nv / 0.1).abs() < 1e-9);
        }

        #[test]
        fn parallel_field_symmetry(splitting in 0.0..0.1_f64) {
            let cfg = along(D, splitting);
            let (lo, hi) = resonance_frequencies(&axis(D), &cfg);
            prop_assert!((0.5 * (lo + hi) - 2.857).abs() < 1e-9);
            prop_assert!((hi - lo - 2.0 * splitting).abs() < 1e-9);
        }
    }
}
