//! Finite-acquisition polarization sweeps with Poisson counting noise, and the sweep CSV
//! format shared by simulated and measured data.
//!
//! Counts for each source (every emitter and the background) at each angle are drawn
//! independently, `C = Poisson(rate × t)`, from a ChaCha stream keyed on
//! `(seed, angle index, source index)`, so sweeps are reproducible regardless of evaluation
//! order. The g² value at an angle is the background formula evaluated on the sampled
//! per-source counts.

use crate::dipole::CapQuadrature;
use crate::error::{Error, Result};
use crate::statistics::g2_from_probabilities;
use crate::{EmitterSystem, OpticalSystem, PolarizationResponse};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use std::io::{Read, Write};

/// Expected detected photons per unit acquisition time for a unit detection rate.
pub const DEFAULT_PHOTON_RATE: f64 = 100.0;

pub const SWEEP_CSV_HEADER: [&str; 4] = ["angle_deg", "intensity", "g2", "g2_err"];

/// g² values above this are kept but logged as suspicious.
const G2_SANITY_LIMIT: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct RandomSeed(pub u64);

impl RandomSeed {
    /// Independent generator for one `(seed, stream)` combination.
    pub fn stream(self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.0);
        rng.set_stream(stream);
        rng
    }

    /// A new seed deterministically derived from this one and `index`.
    pub fn derive(self, index: u64) -> RandomSeed {
        RandomSeed(self.stream(index ^ 0x5eed_0000_0000_0000).random())
    }
}

impl From<u64> for RandomSeed {
    fn from(v: u64) -> Self {
        RandomSeed(v)
    }
}

/// Draws `Poisson(rate × t)` from `rng`.
pub fn sample_counts_with<R: Rng + ?Sized>(rate: f64, t: f64, rng: &mut R) -> Result<u64> {
    if !(rate >= 0.0) || !(t >= 0.0) {
        return Err(Error::domain(format!(
            "rate and time must be non-negative (rate {rate}, t {t})"
        )));
    }
    let mean = rate * t;
    if mean == 0.0 {
        return Ok(0);
    }
    let dist =
        Poisson::new(mean).map_err(|e| Error::domain(format!("poisson mean {mean}: {e}")))?;
    Ok(dist.sample(rng) as u64)
}

/// Draws `Poisson(rate × t)` from the generator seeded by `seed`.
pub fn sample_counts(rate: f64, t: f64, seed: RandomSeed) -> Result<u64> {
    sample_counts_with(rate, t, &mut seed.stream(0))
}

/// PL intensity and g²(0) against polarizer angle.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarizationSweep {
    pub angles_deg: Vec<f64>,
    pub intensities: Vec<f64>,
    pub g2_values: Vec<f64>,
    pub g2_errors: Vec<Option<f64>>,
    pub acquisition_time: Option<f64>,
}

impl PolarizationSweep {
    pub fn new(angles_deg: Vec<f64>, intensities: Vec<f64>, g2_values: Vec<f64>) -> Result<Self> {
        let n = angles_deg.len();
        let sweep = Self {
            angles_deg,
            intensities,
            g2_values,
            g2_errors: vec![None; n],
            acquisition_time: None,
        };
        sweep.validate()?;
        Ok(sweep)
    }

    pub fn len(&self) -> usize {
        self.angles_deg.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles_deg.is_empty()
    }

    pub fn angles_rad(&self) -> Vec<f64> {
        self.angles_deg.iter().map(|a| a.to_radians()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.angles_deg.len();
        if self.intensities.len() != n || self.g2_values.len() != n || self.g2_errors.len() != n {
            return Err(Error::InvalidInput(
                "sweep columns have different lengths".into(),
            ));
        }
        for (i, &a) in self.angles_deg.iter().enumerate() {
            if !(0.0..=180.0).contains(&a) {
                return Err(Error::InvalidInput(format!(
                    "angle {a} deg outside [0, 180]"
                )));
            }
            if i > 0 && a <= self.angles_deg[i - 1] {
                return Err(Error::InvalidInput(
                    "angles must be strictly increasing".into(),
                ));
            }
        }
        if let Some(v) = self.intensities.iter().find(|v| !(**v >= 0.0)) {
            return Err(Error::InvalidInput(format!(
                "intensity {v} is negative or not a number"
            )));
        }
        if let Some(v) = self.g2_values.iter().find(|v| !(**v >= 0.0)) {
            return Err(Error::InvalidInput(format!(
                "g2 value {v} is negative or not a number"
            )));
        }
        if let Some(v) = self.g2_values.iter().find(|v| **v > G2_SANITY_LIMIT) {
            log::warn!("g2 value {v} exceeds {G2_SANITY_LIMIT}");
        }
        Ok(())
    }

    /// Angular span in degrees.
    pub fn span_deg(&self) -> f64 {
        match (self.angles_deg.first(), self.angles_deg.last()) {
            (Some(a), Some(b)) => b - a,
            _ => 0.0,
        }
    }

    /// Same sweep with every intensity multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut s = self.clone();
        s.intensities.iter_mut().for_each(|v| *v *= factor);
        s
    }

    /// Same sweep with angle labels shifted by `delta_deg`, wrapped into `[0, 180)` and
    /// re-sorted.
    pub fn rotated(&self, delta_deg: f64) -> Self {
        let mut rows: Vec<(f64, f64, f64, Option<f64>)> = (0..self.len())
            .map(|i| {
                let a = (self.angles_deg[i] + delta_deg).rem_euclid(180.0);
                (a, self.intensities[i], self.g2_values[i], self.g2_errors[i])
            })
            .collect();
        rows.sort_by(|a, b| a.0.total_cmp(&b.0));
        rows.dedup_by(|a, b| (a.0 - b.0).abs() < 1e-9);
        Self {
            angles_deg: rows.iter().map(|r| r.0).collect(),
            intensities: rows.iter().map(|r| r.1).collect(),
            g2_values: rows.iter().map(|r| r.2).collect(),
            g2_errors: rows.iter().map(|r| r.3).collect(),
            acquisition_time: self.acquisition_time,
        }
    }

    /// Writes the sweep as CSV. `meta`, if given, is emitted first as a `#` comment line.
    pub fn write_csv<W: Write>(&self, mut out: W, meta: Option<&str>) -> Result<()> {
        if let Some(m) = meta {
            writeln!(out, "# {m}")?;
        }
        writeln!(out, "{}", SWEEP_CSV_HEADER.join(","))?;
        for i in 0..self.len() {
            let err = self.g2_errors[i]
                .map(|e| format!("{e}"))
                .unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{}",
                self.angles_deg[i], self.intensities[i], self.g2_values[i], err
            )?;
        }
        Ok(())
    }

    /// Parses the sweep CSV format. Leading `#` lines are skipped; errors carry the 1-based
    /// line number of the offending record.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .flexible(true)
            .from_reader(input);
        let header_line = reader.position().line().max(1) as usize;
        let headers = reader
            .headers()
            .map_err(|e| Error::Parse {
                line: header_line,
                message: e.to_string(),
            })?
            .clone();
        let found: Vec<&str> = headers.iter().collect();
        if found != SWEEP_CSV_HEADER {
            let line = headers.position().map_or(1, |p| p.line() as usize);
            return Err(Error::Parse {
                line,
                message: format!(
                    "expected header {:?}, found {:?}",
                    SWEEP_CSV_HEADER.join(","),
                    found.join(",")
                ),
            });
        }

        let mut sweep = Self {
            angles_deg: Vec::new(),
            intensities: Vec::new(),
            g2_values: Vec::new(),
            g2_errors: Vec::new(),
            acquisition_time: None,
        };
        for record in reader.records() {
            let record = record.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line() as usize);
                Error::Parse {
                    line,
                    message: e.to_string(),
                }
            })?;
            let line = record.position().map_or(0, |p| p.line() as usize);
            let err = |message: String| Error::Parse { line, message };
            if record.len() != 4 && record.len() != 3 {
                return Err(err(format!("expected 4 fields, found {}", record.len())));
            }
            let num = |idx: usize, name: &str| -> Result<f64> {
                let cell = &record[idx];
                cell.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| err(format!("{name}: {cell:?} is not a number")))
            };
            let angle = num(0, "angle_deg")?;
            if !(0.0..=180.0).contains(&angle) {
                return Err(err(format!("angle {angle} deg outside [0, 180]")));
            }
            if sweep.angles_deg.last().is_some_and(|&prev| angle <= prev) {
                return Err(err("angles must be strictly increasing".into()));
            }
            let intensity = num(1, "intensity")?;
            if intensity < 0.0 {
                return Err(err(format!("negative intensity {intensity}")));
            }
            let g2 = num(2, "g2")?;
            if g2 < 0.0 {
                return Err(err(format!("negative g2 {g2}")));
            }
            let g2_err = match record.get(3) {
                None | Some("") => None,
                Some(_) => Some(num(3, "g2_err")?)
                    .filter(|v| *v >= 0.0)
                    .map(Some)
                    .ok_or_else(|| err("negative g2_err".into()))?,
            };
            sweep.angles_deg.push(angle);
            sweep.intensities.push(intensity);
            sweep.g2_values.push(g2);
            sweep.g2_errors.push(g2_err);
        }
        if sweep.is_empty() {
            return Err(Error::InvalidInput("sweep has no data rows".into()));
        }
        sweep.validate()?;
        Ok(sweep)
    }
}

/// Default polarizer angles: 0° to 180° in 10° steps.
pub fn default_angles_deg() -> Vec<f64> {
    (0..=18).map(|i| 10.0 * i as f64).collect()
}

/// Delta-method standard error of `1 − ΣC_k² / S²` under Poisson counts.
fn g2_count_error(counts: &[f64], background: f64) -> f64 {
    let sum: f64 = counts.iter().sum();
    let total = sum + background;
    if total <= 0.0 {
        return 0.0;
    }
    let sum_sq: f64 = counts.iter().map(|c| c * c).sum();
    let s2 = total * total;
    let s3 = s2 * total;
    // ∂g/∂C_k = −2 C_k / S² + 2 ΣC² / S³, ∂g/∂B = 2 ΣC² / S³, Var(C) = C
    let common = 2.0 * sum_sq / s3;
    let var: f64 = counts
        .iter()
        .map(|&c| (common - 2.0 * c / s2).powi(2) * c)
        .sum::<f64>()
        + common * common * background;
    var.sqrt()
}

/// Produces sweeps from a ground-truth [`EmitterSystem`].
#[derive(Debug, Clone)]
pub struct SweepGenerator {
    optics: OpticalSystem,
    angles_deg: Vec<f64>,
    photon_rate: f64,
}

impl SweepGenerator {
    pub fn new(optics: OpticalSystem) -> Result<Self> {
        optics.validate()?;
        Ok(Self {
            optics,
            angles_deg: default_angles_deg(),
            photon_rate: DEFAULT_PHOTON_RATE,
        })
    }

    pub fn with_angles_deg(mut self, angles_deg: Vec<f64>) -> Self {
        self.angles_deg = angles_deg;
        self
    }

    pub fn with_photon_rate(mut self, photon_rate: f64) -> Self {
        self.photon_rate = photon_rate;
        self
    }

    pub fn optics(&self) -> &OpticalSystem {
        &self.optics
    }

    pub fn angles_deg(&self) -> &[f64] {
        &self.angles_deg
    }

    pub fn photon_rate(&self) -> f64 {
        self.photon_rate
    }

    fn source_rates(&self, truth: &EmitterSystem) -> Result<(Vec<PolarizationResponse>, f64)> {
        if !(self.photon_rate > 0.0) {
            return Err(Error::domain("photon rate must be positive"));
        }
        let quad = CapQuadrature::new(&self.optics)?;
        let responses = truth
            .emitters
            .iter()
            .map(|e| PolarizationResponse::of_emitter(e, &quad).scaled(self.photon_rate))
            .collect();
        Ok((responses, truth.background * self.photon_rate))
    }

    /// Noise-free sweep: expected counts and the exact g² at each angle.
    pub fn expected(&self, truth: &EmitterSystem, t: f64) -> Result<PolarizationSweep> {
        if !(t > 0.0) {
            return Err(Error::domain("acquisition time must be positive"));
        }
        let (responses, bath) = self.source_rates(truth)?;
        let mut intensities = Vec::with_capacity(self.angles_deg.len());
        let mut g2_values = Vec::with_capacity(self.angles_deg.len());
        for a in &self.angles_deg {
            let rates: Vec<f64> = responses
                .iter()
                .map(|r| r.rate(a.to_radians()) * t)
                .collect();
            intensities.push(rates.iter().sum::<f64>() + bath * t);
            g2_values.push(g2_from_probabilities(&rates, bath * t));
        }
        let mut sweep = PolarizationSweep::new(self.angles_deg.clone(), intensities, g2_values)?;
        sweep.acquisition_time = Some(t);
        Ok(sweep)
    }

    /// Poisson-noise sweep. Deterministic in `(truth, optics, t, seed)`.
    pub fn generate(
        &self,
        truth: &EmitterSystem,
        t: f64,
        seed: RandomSeed,
    ) -> Result<PolarizationSweep> {
        if !(t > 0.0) {
            return Err(Error::domain("acquisition time must be positive"));
        }
        let (responses, bath) = self.source_rates(truth)?;
        let bath_stream = responses.len() as u64;
        let rows = self
            .angles_deg
            .par_iter()
            .enumerate()
            .map(|(i, a)| {
                let theta = a.to_radians();
                let stream = |source: u64| seed.stream(((i as u64) << 8) | source);
                let counts = responses
                    .iter()
                    .enumerate()
                    .map(|(k, r)| {
                        sample_counts_with(r.rate(theta), t, &mut stream(k as u64))
                            .map(|c| c as f64)
                    })
                    .collect::<Result<Vec<f64>>>()?;
                let bg = sample_counts_with(bath, t, &mut stream(bath_stream))? as f64;
                let intensity = counts.iter().sum::<f64>() + bg;
                Ok((
                    intensity,
                    g2_from_probabilities(&counts, bg),
                    g2_count_error(&counts, bg),
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PolarizationSweep {
            angles_deg: self.angles_deg.clone(),
            intensities: rows.iter().map(|r| r.0).collect(),
            g2_values: rows.iter().map(|r| r.1).collect(),
            g2_errors: rows.iter().map(|r| Some(r.2)).collect(),
            acquisition_time: Some(t),
        })
    }
}
