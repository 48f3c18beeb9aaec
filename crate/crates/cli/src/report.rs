//! The `fit` report. Field meanings are documented in `docs/report_schema.md`; bump
//! `SCHEMA_VERSION` on any incompatible change.

use nvpol::estimator::{FitOptions, FitResult, PairFit, Verdict};
use nvpol::geometry::degeneracy_class;
use nvpol::{OpticalSystem, OrientationPair};
use serde::Serialize;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Serialize)]
pub struct Report {
    pub schema_version: u32,
    pub meta: Option<String>,
    pub input: String,
    pub n_angles: usize,
    pub optics: OpticsReport,
    pub options: FitOptions,
    pub verdict: Verdict,
    pub best_class: ClassReport,
    pub best_pair: OrientationPair,
    pub recovered_ratio: f64,
    pub recovered_background: f64,
    pub converged: bool,
    pub single_emitter: PairReport,
    pub pairs: Vec<PairReport>,
    pub classes: Vec<ClassReport>,
}

#[derive(Serialize)]
pub struct OpticsReport {
    pub na: f64,
    pub refractive_index: f64,
}

#[derive(Serialize)]
pub struct PairReport {
    pub pair: OrientationPair,
    pub class_id: usize,
    pub chi2: f64,
    pub ratio: f64,
    pub background: f64,
    pub scale: f64,
    pub theta_offset_deg: f64,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Serialize)]
pub struct ClassReport {
    pub id: usize,
    pub members: Vec<OrientationPair>,
    pub chi2: f64,
}

impl From<&PairFit> for PairReport {
    fn from(f: &PairFit) -> Self {
        let h = &f.hypothesis;
        Self {
            pair: h.pair,
            class_id: degeneracy_class(h.pair).id,
            chi2: f.chi2,
            ratio: h.ratio,
            background: h.background,
            scale: h.scale,
            theta_offset_deg: h.theta_offset.to_degrees(),
            converged: f.converged,
            iterations: f.iterations,
        }
    }
}

impl Report {
    pub fn new(
        result: &FitResult,
        input: String,
        n_angles: usize,
        optics: &OpticalSystem,
        options: FitOptions,
        meta: Option<String>,
    ) -> Self {
        let classes: Vec<ClassReport> = result
            .classes
            .iter()
            .map(|c| ClassReport {
                id: c.class.id,
                members: c.class.members.clone(),
                chi2: c.chi2,
            })
            .collect();
        let best_class = result
            .classes
            .iter()
            .find(|c| c.class.id == result.best_class.id)
            .map(|c| ClassReport {
                id: c.class.id,
                members: c.class.members.clone(),
                chi2: c.chi2,
            })
            .expect("best class is listed");
        Self {
            schema_version: SCHEMA_VERSION,
            meta,
            input,
            n_angles,
            optics: OpticsReport {
                na: optics.numerical_aperture,
                refractive_index: optics.refractive_index(),
            },
            options,
            verdict: result.verdict,
            best_class,
            best_pair: result.best_fit.hypothesis.pair,
            recovered_ratio: result.recovered_ratio,
            recovered_background: result.recovered_background,
            converged: result.converged,
            single_emitter: (&result.single_emitter).into(),
            pairs: result.per_pair.iter().map(PairReport::from).collect(),
            classes,
        }
    }
}
