//! χ² model selection over orientation-pair hypotheses.
//!
//! Each hypothesis is a pair of NV orientations, the brightness ratio of the second emitter to
//! the first (`ratio ∈ [0, 1]`), an unpolarized background `γ_bg` in units of the first
//! emitter's peak polarized rate, an absolute intensity scale and a polarizer-origin offset.
//! The scale is profiled out in closed form at every evaluation; the remaining three
//! parameters are found by a coarse grid followed by bounded Nelder–Mead.
//!
//! The objective is a Pearson sum over angles of the intensity residual (both curves
//! normalized so that the model peaks at 1) plus a weighted g² residual:
//!
//! ```text
//! χ² = Σ (y_i − m_i)² / m_i  +  w Σ (g_i − h_i)² / h_i
//! ```
//!
//! with both denominators floored at [`DENOMINATOR_FLOOR`].

mod monte_carlo;
pub mod nelder_mead;

pub use monte_carlo::{
    confidence_monte_carlo, ConfidenceSummary, ErrorSweep, MinTimeMap, MinTimeOptions, MonteCarlo,
    TruthParameters, SIGMA1_QUANTILE_2D,
};

use crate::error::{Error, Result};
use crate::geometry::degeneracy_classes;
use crate::synthetic::PolarizationSweep;
use crate::{
    enumerate_pairs, DegeneracyClass, OpticalSystem, OrientationLabel, OrientationPair,
    ResponseTable,
};
use nelder_mead::NelderMeadOptions;
use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::PI;

pub const DEFAULT_RATIO_FLOOR: f64 = 1e-3;
pub const DEFAULT_REL_MARGIN: f64 = 0.5;
/// Floor on normalized model intensity and model g² in χ² denominators.
pub const DENOMINATOR_FLOOR: f64 = 1e-6;

pub const MIN_ANGLES: usize = 8;
pub const MIN_SPAN_DEG: f64 = 90.0;

/// Upper bound on γ_bg during refinement; well beyond anything a sweep can constrain.
const BACKGROUND_CAP: f64 = 20.0;

const GRID_RATIOS: usize = 11;
const GRID_BACKGROUNDS: [f64; 11] = [0.0, 0.025, 0.05, 0.1, 0.15, 0.2, 0.3, 0.4, 0.5, 0.75, 1.0];
const GRID_OFFSETS: usize = 18;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FitOptions {
    /// Weight of the g² term relative to the intensity term.
    pub g2_weight: f64,
    /// A best fit with a smaller ratio counts as one emitter.
    pub ratio_floor: f64,
    /// The winning class must have at most this fraction of the competing χ².
    pub rel_margin: f64,
    #[serde(skip)]
    pub nelder_mead: NelderMeadOptions,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            g2_weight: 1.0,
            ratio_floor: DEFAULT_RATIO_FLOOR,
            rel_margin: DEFAULT_REL_MARGIN,
            nelder_mead: NelderMeadOptions::default(),
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.g2_weight >= 0.0) || !self.g2_weight.is_finite() {
            return Err(Error::InvalidInput(format!(
                "g2 weight must be non-negative, got {}",
                self.g2_weight
            )));
        }
        if !(self.ratio_floor >= 0.0 && self.ratio_floor < 1.0) {
            return Err(Error::InvalidInput(format!(
                "ratio floor must be in [0, 1), got {}",
                self.ratio_floor
            )));
        }
        if !(self.rel_margin > 0.0 && self.rel_margin <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "relative margin must be in (0, 1], got {}",
                self.rel_margin
            )));
        }
        Ok(())
    }
}

/// One point of a hypothesis' parameter space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FitHypothesis {
    pub pair: OrientationPair,
    pub ratio: f64,
    /// γ_bg: background over the first emitter's peak polarized rate.
    pub background: f64,
    /// Measured intensity units per unit of peak-normalized model intensity.
    pub scale: f64,
    /// Polarizer-origin offset in radians, `[0, π)`.
    pub theta_offset: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairFit {
    pub hypothesis: FitHypothesis,
    pub chi2: f64,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    OneEmitter,
    TwoEmitters,
    Inconclusive,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::OneEmitter => "one_emitter",
            Verdict::TwoEmitters => "two_emitters",
            Verdict::Inconclusive => "inconclusive",
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassFit {
    pub class: DegeneracyClass,
    /// Smallest χ² over the class members.
    pub chi2: f64,
    pub best_pair: OrientationPair,
}

#[derive(Debug, Clone, Serialize)]
pub struct FitResult {
    /// All ten pairs, in [`enumerate_pairs`] order.
    pub per_pair: Vec<PairFit>,
    /// Classes in id order.
    pub classes: Vec<ClassFit>,
    pub best_class: DegeneracyClass,
    /// Best fit within `best_class`.
    pub best_fit: PairFit,
    /// Fit with the second emitter removed (ratio pinned to 0).
    pub single_emitter: PairFit,
    pub verdict: Verdict,
    /// Ratio and background of the hypothesis the verdict accepts: the best pair for
    /// `TwoEmitters`/`Inconclusive`, the single-emitter fit for `OneEmitter`.
    pub recovered_ratio: f64,
    pub recovered_background: f64,
    /// False if any refinement stopped at the iteration cap.
    pub converged: bool,
}

/// χ² between a measured sweep and a model sweep on the same angle grid, with the measured
/// intensities rescaled by the χ²-optimal factor (so any overall scale of either curve is
/// irrelevant).
pub fn chi_squared(
    measured: &PolarizationSweep,
    model: &PolarizationSweep,
    g2_weight: f64,
) -> Result<f64> {
    if measured.len() != model.len()
        || measured
            .angles_deg
            .iter()
            .zip(&model.angles_deg)
            .any(|(a, b)| (a - b).abs() > 1e-9)
    {
        return Err(Error::domain(
            "measured and model sweeps must share the angle grid",
        ));
    }
    if measured.intensities.iter().sum::<f64>() <= 0.0 {
        return Err(Error::domain("measured intensities are all zero"));
    }
    let value = pearson(
        &measured.intensities,
        &measured.g2_values,
        &model.intensities,
        &model.g2_values,
        g2_weight,
    )
    .0;
    if !value.is_finite() {
        return Err(Error::domain("model intensities are all zero"));
    }
    Ok(value)
}

/// Returns `(χ², u)` where `u` is the factor applied to the measured intensities.
fn pearson(y: &[f64], g: &[f64], model_i: &[f64], model_g: &[f64], w: f64) -> (f64, f64) {
    let peak = model_i.iter().copied().fold(0.0, f64::max);
    if !(peak > 0.0) {
        return (f64::INFINITY, 0.0);
    }
    let mut sy = 0.0;
    let mut syy = 0.0;
    for (&yi, &mi) in y.iter().zip(model_i) {
        let d = (mi / peak).max(DENOMINATOR_FLOOR);
        sy += yi;
        syy += yi * yi / d;
    }
    let u = if syy > 0.0 { sy / syy } else { 0.0 };
    let mut chi = 0.0;
    for i in 0..y.len() {
        let m = model_i[i] / peak;
        chi += (u * y[i] - m).powi(2) / m.max(DENOMINATOR_FLOOR);
        chi += w * (g[i] - model_g[i]).powi(2) / model_g[i].max(DENOMINATOR_FLOOR);
    }
    (chi, u)
}

/// Sweep data reduced to what the objective needs.
struct Prepared<'a> {
    angles: Vec<f64>,
    sweep: &'a PolarizationSweep,
}

/// Fits orientation-pair hypotheses under one optical configuration.
#[derive(Debug, Clone)]
pub struct Estimator {
    table: ResponseTable,
    options: FitOptions,
}

impl Estimator {
    pub fn new(optics: &OpticalSystem, options: FitOptions) -> Result<Self> {
        options.validate()?;
        Ok(Self {
            table: ResponseTable::try_new(optics)?,
            options,
        })
    }

    pub fn options(&self) -> &FitOptions {
        &self.options
    }

    pub fn responses(&self) -> &ResponseTable {
        &self.table
    }

    /// Model sweep of `hypothesis` on `angles_deg`: intensities are `scale` times the
    /// peak-normalized model.
    pub fn model_sweep(
        &self,
        hypothesis: &FitHypothesis,
        angles_deg: &[f64],
    ) -> Result<PolarizationSweep> {
        let angles: Vec<f64> = angles_deg.iter().map(|a| a.to_radians()).collect();
        let (i, g) = self.table.pair_curves(
            hypothesis.pair,
            hypothesis.ratio,
            hypothesis.background,
            hypothesis.theta_offset,
            &angles,
        );
        let peak = i.iter().copied().fold(0.0, f64::max);
        let intensities = i.iter().map(|v| hypothesis.scale * v / peak).collect();
        PolarizationSweep::new(angles_deg.to_vec(), intensities, g)
    }

    fn prepare<'a>(&self, sweep: &'a PolarizationSweep) -> Result<Prepared<'a>> {
        sweep.validate()?;
        if sweep.len() < MIN_ANGLES {
            return Err(Error::InvalidInput(format!(
                "need at least {MIN_ANGLES} angles, sweep has {}",
                sweep.len()
            )));
        }
        if sweep.span_deg() < MIN_SPAN_DEG {
            return Err(Error::InvalidInput(format!(
                "angles must span at least {MIN_SPAN_DEG} deg, sweep spans {}",
                sweep.span_deg()
            )));
        }
        if sweep.intensities.iter().sum::<f64>() <= 0.0 {
            return Err(Error::InvalidInput("sweep intensities are all zero".into()));
        }
        Ok(Prepared {
            angles: sweep.angles_rad(),
            sweep,
        })
    }

    fn objective(
        &self,
        p: &Prepared,
        pair: OrientationPair,
        ratio: f64,
        background: f64,
        offset: f64,
    ) -> (f64, f64) {
        let (i, g) = self
            .table
            .pair_curves(pair, ratio, background, offset, &p.angles);
        pearson(
            &p.sweep.intensities,
            &p.sweep.g2_values,
            &i,
            &g,
            self.options.g2_weight,
        )
    }

    /// Grid search then Nelder–Mead over (ratio, γ_bg, offset); with `pin_ratio` the ratio is
    /// held at that value and only (γ_bg, offset) are searched.
    fn optimize(&self, p: &Prepared, pair: OrientationPair, pin_ratio: Option<f64>) -> PairFit {
        let ratios: Vec<f64> = match pin_ratio {
            Some(r) => vec![r],
            None => (0..GRID_RATIOS)
                .map(|i| i as f64 / (GRID_RATIOS - 1) as f64)
                .collect(),
        };
        let mut start = (f64::INFINITY, [0.0; 3]);
        for &r in &ratios {
            for &b in &GRID_BACKGROUNDS {
                for k in 0..GRID_OFFSETS {
                    let off = PI * k as f64 / GRID_OFFSETS as f64;
                    let v = self.objective(p, pair, r, b, off).0;
                    if v < start.0 {
                        start = (v, [r, b, off]);
                    }
                }
            }
        }

        let nm = &self.options.nelder_mead;
        let inf = f64::INFINITY;
        let (x, iterations, converged) = match pin_ratio {
            None => {
                let m = nelder_mead::minimize(
                    |x| self.objective(p, pair, x[0], x[1], x[2]).0,
                    &start.1,
                    &[0.05, 0.02, 0.05],
                    &[0.0, 0.0, -inf],
                    &[1.0, BACKGROUND_CAP, inf],
                    nm,
                );
                ([m.x[0], m.x[1], m.x[2]], m.iterations, m.converged)
            }
            Some(r) => {
                let m = nelder_mead::minimize(
                    |x| self.objective(p, pair, r, x[0], x[1]).0,
                    &start.1[1..],
                    &[0.02, 0.05],
                    &[0.0, -inf],
                    &[BACKGROUND_CAP, inf],
                    nm,
                );
                ([r, m.x[0], m.x[1]], m.iterations, m.converged)
            }
        };
        if !converged {
            log::warn!("fit of {pair} stopped at the iteration cap; reporting best-so-far");
        }
        let theta_offset = x[2].rem_euclid(PI);
        let (chi2, u) = self.objective(p, pair, x[0], x[1], theta_offset);
        PairFit {
            hypothesis: FitHypothesis {
                pair,
                ratio: x[0],
                background: x[1],
                scale: if u > 0.0 { 1.0 / u } else { f64::INFINITY },
                theta_offset,
            },
            chi2,
            converged,
            iterations,
        }
    }

    pub fn fit_pair(&self, measured: &PolarizationSweep, pair: OrientationPair) -> Result<PairFit> {
        let p = self.prepare(measured)?;
        Ok(self.optimize(&p, pair, None))
    }

    /// One emitter plus background: the ratio is pinned to zero.
    pub fn fit_single(&self, measured: &PolarizationSweep) -> Result<PairFit> {
        let p = self.prepare(measured)?;
        Ok(self.single(&p))
    }

    fn single(&self, p: &Prepared) -> PairFit {
        let a = OrientationLabel::A;
        self.optimize(p, OrientationPair::new(a, a), Some(0.0))
    }

    /// True if the curves of classes `a` and `b` coincide up to a polarizer rotation, which
    /// the free offset absorbs, so the two can never be told apart.
    pub fn offset_equivalent(&self, a: &DegeneracyClass, b: &DegeneracyClass) -> bool {
        let (Some(pa), Some(pb)) = (a.members.first(), b.members.first()) else {
            return false;
        };
        let sa = self.signature(*pa);
        let sb = self.signature(*pb);
        let close = |x: f64, y: f64| (x - y).abs() <= 1e-6 * x.abs().max(y.abs()).max(1.0);
        let shape_match = (0..4).all(|i| close(sa[i], sb[i]));
        // relative peak angle only matters when both emitters are polarized
        let polarized = sa[1] > 1e-9 && sa[3] > 1e-9;
        shape_match && (!polarized || (2.0 * (sa[4] - sb[4])).cos() > 1.0 - 1e-9)
    }

    /// (mean, amplitude) of each emitter's curve and the angle between their peaks.
    fn signature(&self, pair: OrientationPair) -> [f64; 5] {
        let r1 = self.table.get(pair.first());
        let r2 = self.table.get(pair.second());
        let amp = |r: &crate::PolarizationResponse| r.max_rate() - r.mean_rate();
        [
            r1.mean_rate(),
            amp(r1),
            r2.mean_rate(),
            amp(r2),
            r2.peak_angle() - r1.peak_angle(),
        ]
    }

    pub fn fit_all(&self, measured: &PolarizationSweep) -> Result<FitResult> {
        let p = self.prepare(measured)?;
        let pairs = enumerate_pairs();
        let (per_pair, single) = rayon::join(
            || {
                pairs
                    .par_iter()
                    .map(|&pair| self.optimize(&p, pair, None))
                    .collect::<Vec<_>>()
            },
            || self.single(&p),
        );

        let classes: Vec<ClassFit> = degeneracy_classes()
            .iter()
            .map(|class| {
                let best = per_pair
                    .iter()
                    .filter(|f| class.contains(&f.hypothesis.pair))
                    .min_by(|a, b| a.chi2.total_cmp(&b.chi2))
                    .expect("every class has members");
                ClassFit {
                    class: class.clone(),
                    chi2: best.chi2,
                    best_pair: best.hypothesis.pair,
                }
            })
            .collect();
        let best_class = classes
            .iter()
            .min_by(|a, b| a.chi2.total_cmp(&b.chi2).then(a.class.id.cmp(&b.class.id)))
            .expect("at least one class");
        let best_fit = *per_pair
            .iter()
            .find(|f| f.hypothesis.pair == best_class.best_pair)
            .expect("member fit");
        let next_chi2 = classes
            .iter()
            .filter(|c| {
                c.class.id != best_class.class.id
                    && !self.offset_equivalent(&best_class.class, &c.class)
            })
            .map(|c| c.chi2)
            .fold(f64::INFINITY, f64::min);

        let margin = self.options.rel_margin;
        let verdict = if best_fit.hypothesis.ratio < self.options.ratio_floor
            || best_fit.chi2 > margin * single.chi2
        {
            Verdict::OneEmitter
        } else if best_fit.chi2 <= margin * next_chi2 {
            Verdict::TwoEmitters
        } else {
            Verdict::Inconclusive
        };
        let accepted = if verdict == Verdict::OneEmitter {
            &single
        } else {
            &best_fit
        };
        let converged = single.converged && per_pair.iter().all(|f| f.converged);

        Ok(FitResult {
            recovered_ratio: accepted.hypothesis.ratio,
            recovered_background: accepted.hypothesis.background,
            best_class: best_class.class.clone(),
            best_fit,
            single_emitter: single,
            verdict,
            converged,
            classes,
            per_pair,
        })
    }
}

/// [`Estimator::fit_pair`] with default options.
pub fn fit_pair(
    measured: &PolarizationSweep,
    pair: OrientationPair,
    optics: &OpticalSystem,
) -> Result<PairFit> {
    Estimator::new(optics, FitOptions::default())?.fit_pair(measured, pair)
}

/// [`Estimator::fit_all`] with default options.
pub fn fit_all(measured: &PolarizationSweep, optics: &OpticalSystem) -> Result<FitResult> {
    Estimator::new(optics, FitOptions::default())?.fit_all(measured)
}

#[cfg(test)]
mod tests;
