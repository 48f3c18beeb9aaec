//! JSON scenario files shared by the command-line front end and the reproduction configs.
//!
//! Every key is optional; missing keys take the defaults of [`ScenarioConfig::default`].
//! Unknown keys are rejected.
//!
//! ```json
//! { "orientations": ["a", "c"], "ratio": 0.4, "background": 0.05,
//!   "acquisition_time": 1000, "seed": 7, "na": 1.98, "refractive_index": 2.4 }
//! ```

use crate::error::{Error, Result};
use crate::estimator::nelder_mead::NelderMeadOptions;
use crate::estimator::{FitOptions, MinTimeOptions, TruthParameters};
use crate::odmr::{default_field_direction, default_field_mt, frequency_grid, OdmrConfig};
use crate::synthetic::{default_angles_deg, SweepGenerator, DEFAULT_PHOTON_RATE};
use crate::{
    DipoleEmitter, EmitterSystem, OpticalSystem, OrientationLabel, OrientationPair, UnitVector3,
};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// A field given either as a magnitude along the default direction or as a vector, in mT.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FieldSpec {
    Magnitude(f64),
    Vector([f64; 3]),
}

impl FieldSpec {
    pub fn to_vector(self) -> [f64; 3] {
        match self {
            FieldSpec::Vector(v) => v,
            FieldSpec::Magnitude(m) => default_field_direction().to_array().map(|c| c * m),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    /// One to three NV orientations; the first is the reference (unit brightness).
    pub orientations: Vec<OrientationLabel>,
    /// Brightness of the second center over the first.
    pub ratio: f64,
    /// Brightness of the third center over the first.
    pub ratio_third: Option<f64>,
    /// Background over the first center's peak polarized rate.
    pub background: f64,
    pub acquisition_time: f64,
    pub seed: u64,
    pub na: f64,
    pub refractive_index: f64,
    pub photon_rate: f64,
    pub angles_deg: Option<Vec<f64>>,

    pub g2_weight: f64,
    pub ratio_floor: f64,
    pub rel_margin: f64,
    /// Nelder–Mead iteration cap per refinement run.
    pub max_iterations: usize,

    pub trials: usize,
    pub ratio_grid: Option<Vec<f64>>,
    pub background_grid: Option<Vec<f64>>,
    pub target: f64,
    pub t_cap: f64,

    pub d_ghz: f64,
    pub b_field_mt: FieldSpec,
    pub linewidth_mhz: f64,
    pub contrast: f64,
    pub photons_per_point: Option<f64>,
    /// Per-center ODMR weights; equal weights when absent.
    pub odmr_weights: Option<Vec<f64>>,
    pub frequency_start_ghz: f64,
    pub frequency_stop_ghz: f64,
    pub frequency_points: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let optics = OpticalSystem::default();
        let odmr = OdmrConfig::default();
        let mt = MinTimeOptions::default();
        let fit = FitOptions::default();
        Self {
            orientations: vec![OrientationLabel::A, OrientationLabel::C],
            ratio: 0.4,
            ratio_third: None,
            background: 0.05,
            acquisition_time: 1000.0,
            seed: 0,
            na: optics.numerical_aperture,
            refractive_index: optics.refractive_index(),
            photon_rate: DEFAULT_PHOTON_RATE,
            angles_deg: None,
            g2_weight: fit.g2_weight,
            ratio_floor: fit.ratio_floor,
            rel_margin: fit.rel_margin,
            max_iterations: fit.nelder_mead.max_iterations,
            trials: 100,
            ratio_grid: None,
            background_grid: None,
            target: mt.target,
            t_cap: mt.t_cap,
            d_ghz: odmr.zero_field_splitting_ghz,
            b_field_mt: FieldSpec::Vector(default_field_mt()),
            linewidth_mhz: odmr.linewidth_mhz,
            contrast: odmr.contrast_per_nv,
            photons_per_point: None,
            odmr_weights: None,
            frequency_start_ghz: 2.80,
            frequency_stop_ghz: 2.92,
            frequency_points: odmr.frequencies_ghz.len(),
        }
    }
}

impl ScenarioConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    /// Applies `key=value` overrides. Values are parsed as JSON, falling back to a plain
    /// string, so `ratio=0.3`, `orientations=["a","d"]` and `b_field_mt=1.5` all work.
    pub fn with_overrides<S: AsRef<str>>(self, overrides: &[S]) -> Result<Self> {
        if overrides.is_empty() {
            return Ok(self);
        }
        let mut value = serde_json::to_value(&self)?;
        let obj = value
            .as_object_mut()
            .expect("config serializes to an object");
        for item in overrides {
            let item = item.as_ref();
            let (key, raw) = item.split_once('=').ok_or_else(|| {
                Error::InvalidInput(format!("override {item:?} is not key=value"))
            })?;
            let key = key.trim();
            if !obj.contains_key(key) {
                return Err(Error::InvalidInput(format!("unknown config key `{key}`")));
            }
            let parsed = serde_json::from_str(raw.trim())
                .unwrap_or_else(|_| serde_json::Value::String(raw.trim().to_string()));
            obj.insert(key.to_string(), parsed);
        }
        let cfg: Self = serde_json::from_value(value)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if self.orientations.is_empty() || self.orientations.len() > 3 {
            return bad(format!(
                "orientations must list 1 to 3 labels, got {}",
                self.orientations.len()
            ));
        }
        if !(0.0..=1.0).contains(&self.ratio) {
            return bad(format!("ratio must be in [0, 1], got {}", self.ratio));
        }
        if let Some(r) = self.ratio_third {
            if !(0.0..=1.0).contains(&r) {
                return bad(format!("ratio_third must be in [0, 1], got {r}"));
            }
        }
        if !(self.background >= 0.0) {
            return bad(format!(
                "background must be non-negative, got {}",
                self.background
            ));
        }
        if !(self.acquisition_time > 0.0) {
            return bad(format!(
                "acquisition_time must be positive, got {}",
                self.acquisition_time
            ));
        }
        if !(self.photon_rate > 0.0) {
            return bad(format!(
                "photon_rate must be positive, got {}",
                self.photon_rate
            ));
        }
        if self.trials < 2 {
            return bad("trials must be at least 2".into());
        }
        if !(self.target > 0.0) || !(self.t_cap >= 1.0) {
            return bad("target must be positive and t_cap at least 1".into());
        }
        if let Some(p) = self.photons_per_point {
            if !(p > 0.0) {
                return bad(format!("photons_per_point must be positive, got {p}"));
            }
        }
        if let Some(w) = &self.odmr_weights {
            if w.len() != self.orientations.len() {
                return bad("odmr_weights must have one entry per orientation".into());
            }
        }
        if self.frequency_points < 2 || !(self.frequency_stop_ghz > self.frequency_start_ghz) {
            return bad("frequency grid needs at least 2 points and stop > start".into());
        }
        self.optics().validate()?;
        self.fit_options().validate()?;
        self.odmr_config().validate()
    }

    pub fn optics(&self) -> OpticalSystem {
        OpticalSystem::default()
            .with_numerical_aperture(self.na)
            .with_refractive_index(self.refractive_index)
    }

    pub fn angles(&self) -> Vec<f64> {
        self.angles_deg.clone().unwrap_or_else(default_angles_deg)
    }

    pub fn generator(&self) -> Result<SweepGenerator> {
        Ok(SweepGenerator::new(self.optics())?
            .with_angles_deg(self.angles())
            .with_photon_rate(self.photon_rate))
    }

    /// Brightness of each listed center relative to the first.
    pub fn brightnesses(&self) -> Vec<f64> {
        let all = [1.0, self.ratio, self.ratio_third.unwrap_or(1.0)];
        all[..self.orientations.len()].to_vec()
    }

    /// Ground-truth emitters with the background scaled to the first center's peak rate.
    pub fn emitter_system(&self) -> Result<EmitterSystem> {
        let emitters: Vec<DipoleEmitter> = self
            .orientations
            .iter()
            .zip(self.brightnesses())
            .map(|(&l, b)| DipoleEmitter::new(l, b))
            .collect();
        let table = crate::ResponseTable::try_new(&self.optics())?;
        let peak = table.get(self.orientations[0]).max_rate();
        EmitterSystem::new(emitters, self.background * peak)
    }

    /// The scenario as fit parameters; needs one or two orientations.
    pub fn truth(&self) -> Result<TruthParameters> {
        match self.orientations.as_slice() {
            [a] => TruthParameters::new(OrientationPair::new(*a, *a), 0.0, self.background),
            [a, b] => {
                TruthParameters::new(OrientationPair::new(*a, *b), self.ratio, self.background)
            }
            _ => Err(Error::InvalidInput(
                "fits use one or two orientations".into(),
            )),
        }
    }

    pub fn fit_options(&self) -> FitOptions {
        FitOptions {
            g2_weight: self.g2_weight,
            ratio_floor: self.ratio_floor,
            rel_margin: self.rel_margin,
            nelder_mead: NelderMeadOptions {
                max_iterations: self.max_iterations,
                ..NelderMeadOptions::default()
            },
        }
    }

    pub fn min_time_options(&self) -> MinTimeOptions {
        MinTimeOptions {
            target: self.target,
            t_cap: self.t_cap,
            ..MinTimeOptions::default()
        }
    }

    pub fn odmr_config(&self) -> OdmrConfig {
        OdmrConfig {
            zero_field_splitting_ghz: self.d_ghz,
            b_field_mt: self.b_field_mt.to_vector(),
            linewidth_mhz: self.linewidth_mhz,
            contrast_per_nv: self.contrast,
            frequencies_ghz: frequency_grid(
                self.frequency_start_ghz,
                self.frequency_stop_ghz,
                self.frequency_points,
            ),
            ..OdmrConfig::default()
        }
    }

    pub fn odmr_centers(&self) -> Vec<(UnitVector3, f64)> {
        let weights = self
            .odmr_weights
            .clone()
            .unwrap_or_else(|| vec![1.0; self.orientations.len()]);
        self.orientations
            .iter()
            .zip(weights)
            .map(|(l, w)| (l.orientation::<f64>().axis, w))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::OrientationLabel::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = ScenarioConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(ScenarioConfig::from_json_str(&text).unwrap(), cfg);
        assert_eq!(ScenarioConfig::from_json_str("{}").unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = ScenarioConfig::from_json_str(r#"{"ratio": 0.3, "ratoi": 1}"#).unwrap_err();
        assert!(err.to_string().contains("ratoi"), "{err}");
        let err = ScenarioConfig::default()
            .with_overrides(&["bogus=1"])
            .unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
    }

    #[test]
    fn overrides() {
        let cfg = ScenarioConfig::default()
            .with_overrides(&[
                "ratio=0.25",
                r#"orientations=["b","d"]"#,
                "b_field_mt=1.5",
                "seed=9",
            ])
            .unwrap();
        assert_eq!(cfg.ratio, 0.25);
        assert_eq!(cfg.orientations, vec![B, D]);
        assert_eq!(cfg.b_field_mt, FieldSpec::Magnitude(1.5));
        assert!((cfg.odmr_config().field_magnitude_mt() - 1.5).abs() < 1e-12);
        assert_eq!(cfg.seed, 9);
        assert!(ScenarioConfig::default()
            .with_overrides(&["ratio=2"])
            .is_err());
        assert!(ScenarioConfig::default()
            .with_overrides(&["ratio"])
            .is_err());
    }

    #[test]
    fn system_and_truth_agree() {
        let cfg = ScenarioConfig::default();
        let sys = cfg.emitter_system().unwrap();
        let t = TruthParameters::from_system(&sys, &cfg.optics()).unwrap();
        assert_eq!(t, cfg.truth().unwrap());
        let single = ScenarioConfig {
            orientations: vec![C],
            ..ScenarioConfig::default()
        };
        assert_eq!(single.truth().unwrap().ratio, 0.0);
        assert_eq!(single.emitter_system().unwrap().emitters.len(), 1);
        let three = ScenarioConfig {
            orientations: vec![A, A, C],
            ..ScenarioConfig::default()
        };
        assert!(three.truth().is_err());
        assert_eq!(three.brightnesses(), vec![1.0, 0.4, 1.0]);
    }
}
