//! Monte Carlo studies: parameter spread at fixed acquisition time, the acquisition time
//! needed to reach a target precision, and fit errors across a background grid.

use super::{Estimator, FitOptions};
use crate::error::{Error, Result};
use crate::synthetic::{RandomSeed, SweepGenerator};
use crate::{DipoleEmitter, EmitterSystem, OpticalSystem, OrientationPair, ResponseTable};
use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::PI;

/// `−2 ln(1 − 0.682689)`: the 1σ (68.27%) quantile of χ² with two degrees of freedom.
pub const SIGMA1_QUANTILE_2D: f64 = 2.295_748_928_898_636;

/// Two-emitter ground truth in fit parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TruthParameters {
    /// `pair.first()` is the brighter emitter.
    pub pair: OrientationPair,
    pub ratio: f64,
    pub background: f64,
}

impl TruthParameters {
    pub fn new(pair: OrientationPair, ratio: f64, background: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&ratio) || !(background >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "ratio must be in [0, 1] and background non-negative (ratio {ratio}, background {background})"
            )));
        }
        Ok(Self {
            pair,
            ratio,
            background,
        })
    }

    /// Reads ratio and background off a one- or two-emitter system.
    pub fn from_system(system: &EmitterSystem, optics: &OpticalSystem) -> Result<Self> {
        let mut emitters = system.emitters.clone();
        emitters.sort_by(|a, b| b.brightness.total_cmp(&a.brightness));
        let (bright, dim) = match emitters.as_slice() {
            [one] => (*one, None),
            [one, two] => (*one, Some(*two)),
            _ => {
                return Err(Error::InvalidInput(
                    "fit truths have one or two emitters".into(),
                ))
            }
        };
        let table = ResponseTable::try_new(optics)?;
        let peak = bright.brightness * table.get(bright.orientation.label).max_rate();
        let second = dim.map_or(bright.orientation.label, |d| d.orientation.label);
        Self::new(
            OrientationPair::new(bright.orientation.label, second),
            dim.map_or(0.0, |d| d.brightness / bright.brightness),
            system.background / peak,
        )
    }

    /// Emitter system with the first emitter at unit brightness.
    pub fn to_system(&self, optics: &OpticalSystem) -> Result<EmitterSystem> {
        EmitterSystem::with_relative_background(
            vec![
                DipoleEmitter::new(self.pair.first(), 1.0),
                DipoleEmitter::new(self.pair.second(), self.ratio),
            ],
            self.background,
            optics,
        )
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ConfidenceSummary {
    pub n_trials: usize,
    pub mean_ratio: f64,
    pub mean_background: f64,
    /// Sample covariance of (ratio, background).
    pub covariance: [[f64; 2]; 2],
    /// Area of the 68.3% confidence ellipse.
    pub sigma1_area: f64,
    /// Fitted (ratio, background) of every trial, in trial order.
    pub samples: Vec<[f64; 2]>,
    pub non_converged: usize,
}

impl ConfidenceSummary {
    pub(crate) fn from_samples(samples: Vec<[f64; 2]>, non_converged: usize) -> Result<Self> {
        let n = samples.len();
        if n < 2 {
            return Err(Error::domain(
                "confidence summaries need at least two trials",
            ));
        }
        let nf = n as f64;
        let mean = [0, 1].map(|k| samples.iter().map(|s| s[k]).sum::<f64>() / nf);
        let mut cov = [[0.0; 2]; 2];
        for s in &samples {
            for i in 0..2 {
                for j in 0..2 {
                    cov[i][j] += (s[i] - mean[i]) * (s[j] - mean[j]) / (nf - 1.0);
                }
            }
        }
        let det = (cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0]).max(0.0);
        Ok(Self {
            n_trials: n,
            mean_ratio: mean[0],
            mean_background: mean[1],
            covariance: cov,
            sigma1_area: PI * det.sqrt() * SIGMA1_QUANTILE_2D,
            samples,
            non_converged,
        })
    }

    /// Half-extent of the 68.3% ellipse along the ratio and background axes.
    pub fn half_widths(&self) -> [f64; 2] {
        [0, 1].map(|k| (SIGMA1_QUANTILE_2D * self.covariance[k][k]).sqrt())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MinTimeOptions {
    /// Required half-width of the 68.3% ellipse along both parameter axes.
    pub target: f64,
    pub trials: usize,
    pub t_start: f64,
    pub t_cap: f64,
    pub bisection_steps: usize,
}

impl Default for MinTimeOptions {
    fn default() -> Self {
        Self {
            target: 0.01,
            trials: 50,
            t_start: 1.0,
            t_cap: 1e7,
            bisection_steps: 4,
        }
    }
}

/// `t_min[i][j]` belongs to `backgrounds[i]`, `ratios[j]`; `None` where the cap was hit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MinTimeMap {
    pub backgrounds: Vec<f64>,
    pub ratios: Vec<f64>,
    pub t_min: Vec<Vec<Option<f64>>>,
}

/// Mean absolute fit errors and mean χ² per cell; `[i][j]` belongs to `backgrounds[i]`,
/// `ratios[j]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorSweep {
    pub backgrounds: Vec<f64>,
    pub ratios: Vec<f64>,
    pub ratio_error: Vec<Vec<f64>>,
    pub background_error: Vec<Vec<f64>>,
    pub chi2: Vec<Vec<f64>>,
}

/// Repeated simulate-and-fit experiments with a fixed generator and estimator.
#[derive(Debug, Clone)]
pub struct MonteCarlo {
    pub generator: SweepGenerator,
    pub estimator: Estimator,
}

impl MonteCarlo {
    pub fn new(generator: SweepGenerator, options: FitOptions) -> Result<Self> {
        let estimator = Estimator::new(generator.optics(), options)?;
        Ok(Self {
            generator,
            estimator,
        })
    }

    /// Fits `n_trials` independent sweeps of `truth` with the true pair. Trial `k` uses the
    /// seed `seed.derive(k)`.
    pub fn confidence(
        &self,
        truth: &TruthParameters,
        t: f64,
        n_trials: usize,
        seed: RandomSeed,
    ) -> Result<ConfidenceSummary> {
        let system = truth.to_system(self.generator.optics())?;
        self.confidence_of(&system, truth.pair, t, n_trials, seed)
    }

    fn confidence_of(
        &self,
        system: &EmitterSystem,
        pair: OrientationPair,
        t: f64,
        n_trials: usize,
        seed: RandomSeed,
    ) -> Result<ConfidenceSummary> {
        if n_trials < 2 {
            return Err(Error::domain("need at least two trials"));
        }
        let fits = (0..n_trials)
            .into_par_iter()
            .map(|k| {
                let sweep = self.generator.generate(system, t, seed.derive(k as u64))?;
                self.estimator.fit_pair(&sweep, pair)
            })
            .collect::<Result<Vec<_>>>()?;
        let non_converged = fits.iter().filter(|f| !f.converged).count();
        ConfidenceSummary::from_samples(
            fits.iter()
                .map(|f| [f.hypothesis.ratio, f.hypothesis.background])
                .collect(),
            non_converged,
        )
    }

    /// Smallest acquisition time whose Monte Carlo ellipse meets `opts.target` along both
    /// axes: doubling from `t_start`, then bisection. Every probe reuses `seed`, so
    /// neighboring probes and cells see correlated noise.
    pub fn min_acquisition_time(
        &self,
        truth: &TruthParameters,
        opts: &MinTimeOptions,
        seed: RandomSeed,
    ) -> Result<Option<f64>> {
        if !(opts.target > 0.0) || !(opts.t_start > 0.0) || opts.t_cap < opts.t_start {
            return Err(Error::InvalidInput(
                "min-time search needs target > 0 and 0 < t_start <= t_cap".into(),
            ));
        }
        let meets = |t: f64| -> Result<bool> {
            let s = self.confidence(truth, t, opts.trials, seed)?;
            Ok(s.half_widths().iter().all(|&w| w <= opts.target))
        };
        let mut hi = opts.t_start;
        if meets(hi)? {
            return Ok(Some(hi));
        }
        let mut lo;
        loop {
            lo = hi;
            hi *= 2.0;
            if hi > opts.t_cap {
                log::info!(
                    "min-time search hit the cap at ratio {} background {}",
                    truth.ratio,
                    truth.background
                );
                return Ok(None);
            }
            if meets(hi)? {
                break;
            }
        }
        for _ in 0..opts.bisection_steps {
            let mid = 0.5 * (lo + hi);
            if meets(mid)? {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(Some(hi))
    }

    pub fn min_acquisition_time_map(
        &self,
        pair: OrientationPair,
        ratios: &[f64],
        backgrounds: &[f64],
        opts: &MinTimeOptions,
        seed: RandomSeed,
    ) -> Result<MinTimeMap> {
        check_grid(ratios, backgrounds)?;
        let cells = grid_cells(backgrounds.len(), ratios.len())
            .into_par_iter()
            .map(|(i, j)| {
                let truth = TruthParameters::new(pair, ratios[j], backgrounds[i])?;
                self.min_acquisition_time(&truth, opts, seed)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MinTimeMap {
            backgrounds: backgrounds.to_vec(),
            ratios: ratios.to_vec(),
            t_min: cells.chunks(ratios.len()).map(<[_]>::to_vec).collect(),
        })
    }

    /// Fits `trials` sweeps per grid cell with the true pair and averages the absolute
    /// parameter errors and χ².
    pub fn background_error_sweep(
        &self,
        pair: OrientationPair,
        backgrounds: &[f64],
        ratios: &[f64],
        t: f64,
        trials: usize,
        seed: RandomSeed,
    ) -> Result<ErrorSweep> {
        check_grid(ratios, backgrounds)?;
        if trials == 0 {
            return Err(Error::InvalidInput(
                "need at least one trial per cell".into(),
            ));
        }
        let cells = grid_cells(backgrounds.len(), ratios.len())
            .into_par_iter()
            .map(|(i, j)| {
                let truth = TruthParameters::new(pair, ratios[j], backgrounds[i])?;
                let system = truth.to_system(self.generator.optics())?;
                let cell_seed = seed.derive((i * ratios.len() + j) as u64);
                let mut acc = [0.0; 3];
                for k in 0..trials {
                    let sweep = self
                        .generator
                        .generate(&system, t, cell_seed.derive(k as u64))?;
                    let fit = self.estimator.fit_pair(&sweep, pair)?;
                    acc[0] += (fit.hypothesis.ratio - truth.ratio).abs();
                    acc[1] += (fit.hypothesis.background - truth.background).abs();
                    acc[2] += fit.chi2;
                }
                Ok(acc.map(|v| v / trials as f64))
            })
            .collect::<Result<Vec<_>>>()?;
        let matrix = |k: usize| {
            cells
                .chunks(ratios.len())
                .map(|row| row.iter().map(|c| c[k]).collect())
                .collect()
        };
        Ok(ErrorSweep {
            backgrounds: backgrounds.to_vec(),
            ratios: ratios.to_vec(),
            ratio_error: matrix(0),
            background_error: matrix(1),
            chi2: matrix(2),
        })
    }
}

fn grid_cells(rows: usize, cols: usize) -> Vec<(usize, usize)> {
    (0..rows)
        .flat_map(|i| (0..cols).map(move |j| (i, j)))
        .collect()
}

fn check_grid(ratios: &[f64], backgrounds: &[f64]) -> Result<()> {
    if ratios.is_empty() || backgrounds.is_empty() {
        return Err(Error::InvalidInput("empty parameter grid".into()));
    }
    if ratios.iter().any(|r| !(0.0..=1.0).contains(r)) {
        return Err(Error::InvalidInput("grid ratios must lie in [0, 1]".into()));
    }
    if backgrounds.iter().any(|b| !(*b >= 0.0)) {
        return Err(Error::InvalidInput(
            "grid backgrounds must be non-negative".into(),
        ));
    }
    Ok(())
}

/// Default-settings Monte Carlo: `n_trials` sweeps of `truth` on the default angle grid,
/// each fitted with the true pair.
pub fn confidence_monte_carlo(
    truth: &EmitterSystem,
    optics: &OpticalSystem,
    t: f64,
    n_trials: usize,
    seed: RandomSeed,
) -> Result<ConfidenceSummary> {
    let params = TruthParameters::from_system(truth, optics)?;
    let mc = MonteCarlo::new(SweepGenerator::new(*optics)?, FitOptions::default())?;
    mc.confidence_of(truth, params.pair, t, n_trials, seed)
}
