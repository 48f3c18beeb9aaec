//! Polarizer-resolved detection rate of an NV center modelled as two orthogonal dipoles.
//!
//! Each NV emits through one of two dipoles perpendicular to its axis. The rate seen
//! through a linear polarizer at angle θ is the surface integral of
//! `|E_x cos θ + E_y sin θ|²` over the spherical cap collected by the objective, summed
//! incoherently over the two dipoles. Because the integrand is a quadratic form in
//! `(cos θ, sin θ)`, the integral collapses into a symmetric 2×2 [`PolarizationResponse`]
//! that is computed once per emitter and then evaluated at any angle.

use crate::error::{Error, Result};
use crate::geometry::{cross, dot, NvOrientation, OrientationLabel, OrientationPair, UnitVector3};
use crate::scalar::Scalar;
use crate::statistics::{self, EmitterSystem};
use num_complex::Complex;

/// Collection optics. Positions are measured in units of `1/k`, so the wavelength only
/// matters for reporting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpticalSystem<T> {
    pub numerical_aperture: T,
    pub relative_permittivity: T,
    pub wavelength_nm: T,
    /// Nodes per angular dimension of the cap quadrature.
    pub quadrature_points: usize,
    /// Radius of the collection sphere, `k·r`.
    pub far_field_radius_kr: T,
}

impl<T: Scalar> Default for OpticalSystem<T> {
    fn default() -> Self {
        Self {
            numerical_aperture: T::lit(1.98),
            relative_permittivity: T::lit(2.4 * 2.4),
            wavelength_nm: T::lit(700.0),
            quadrature_points: 64,
            far_field_radius_kr: T::lit(1e4),
        }
    }
}

impl<T: Scalar> OpticalSystem<T> {
    pub fn with_numerical_aperture(mut self, na: T) -> Self {
        self.numerical_aperture = na;
        self
    }

    pub fn with_refractive_index(mut self, n: T) -> Self {
        self.relative_permittivity = n * n;
        self
    }

    pub fn with_quadrature_points(mut self, n: usize) -> Self {
        self.quadrature_points = n;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.numerical_aperture > T::zero()) {
            return Err(Error::domain("numerical aperture must be positive"));
        }
        if !(self.relative_permittivity > T::zero()) {
            return Err(Error::domain("relative permittivity must be positive"));
        }
        if self.quadrature_points < 16 {
            return Err(Error::domain("quadrature_points must be at least 16"));
        }
        if !(self.far_field_radius_kr >= T::lit(100.0)) {
            return Err(Error::domain("far_field_radius_kr must be at least 100"));
        }
        Ok(())
    }

    pub fn refractive_index(&self) -> T {
        self.relative_permittivity.sqrt()
    }

    /// Collection half-angle inside the diamond, `asin(NA / n)`. Values of `NA / n` above one
    /// are clamped to a full hemisphere.
    pub fn aperture_half_angle(&self) -> T {
        let s = self.numerical_aperture / self.refractive_index();
        if s > T::one() {
            log::warn!(
                "NA/n = {:.4} exceeds 1, clamping the collection cone to a hemisphere",
                s.to_f64_lossy()
            );
            return T::FRAC_PI_2();
        }
        s.asin()
    }
}

/// One NV center: its axis, the rotation `beta` of its dipole pair about that axis, and a
/// relative brightness (detection-probability scale).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DipoleEmitter<T> {
    pub orientation: NvOrientation<T>,
    pub beta: T,
    pub brightness: T,
}

impl<T: Scalar> DipoleEmitter<T> {
    pub fn new(label: OrientationLabel, brightness: T) -> Self {
        Self {
            orientation: label.orientation(),
            beta: T::zero(),
            brightness,
        }
    }

    pub fn with_beta(mut self, beta: T) -> Self {
        self.beta = beta;
        self
    }

    /// The two emission dipoles: orthonormal, both perpendicular to the NV axis.
    pub fn dipole_moments(&self) -> [UnitVector3<T>; 2] {
        let n = self.orientation.axis;
        let mut u = n.cross(&UnitVector3::z_axis());
        if dot(u, u) < T::lit(1e-20) {
            u = n.cross(&UnitVector3::x_axis());
        }
        let u = UnitVector3::from_array(u).expect("non-degenerate perpendicular");
        let v = UnitVector3::from_array(cross(n.to_array(), u.to_array())).expect("unit");
        let (s, c) = self.beta.sin_cos();
        let p1 = UnitVector3::new(
            c * u.x() + s * v.x(),
            c * u.y() + s * v.y(),
            c * u.z() + s * v.z(),
        );
        let p2 = UnitVector3::new(
            -s * u.x() + c * v.x(),
            -s * u.y() + c * v.y(),
            -s * u.z() + c * v.z(),
        );
        [
            p1.expect("rotation keeps unit norm"),
            p2.expect("rotation keeps unit norm"),
        ]
    }
}

/// Ideal linear polarizer (unit parallel transmittance).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolarizerSetting<T> {
    pub theta: T,
}

impl<T: Scalar> PolarizerSetting<T> {
    pub fn new(theta: T) -> Self {
        Self { theta }
    }

    /// Transmission axis in the lab x-y plane. Depends on θ modulo π only through sign.
    pub fn axis(&self) -> (T, T) {
        let (s, c) = self.theta.sin_cos();
        (c, s)
    }
}

/// Electric field of a unit dipole `moment` at the origin, observed at `point` (in units of
/// `1/k`). Includes the far-field and both near-field terms; the `1/(4π ε₀ ε_r)` prefactor is
/// dropped.
pub fn dipole_field<T: Scalar>(moment: &UnitVector3<T>, point: [T; 3]) -> Result<[Complex<T>; 3]> {
    let r2 = dot(point, point);
    let r = r2.sqrt();
    if !(r > T::zero()) || !r.is_finite() {
        return Err(Error::domain(
            "observation point must be at non-zero finite radius",
        ));
    }
    let p = moment.to_array();
    let rp = dot(point, p);
    let r3 = r2 * r;
    let r4 = r2 * r2;
    let r5 = r4 * r;
    let three = T::lit(3.0);
    let phase = Complex::from_polar(T::one(), r);
    let near = Complex::new(T::one() / r5, -T::one() / r4);
    let mut field = [Complex::new(T::zero(), T::zero()); 3];
    for i in 0..3 {
        // (r × p) × r = r² p − (r·p) r
        let far = (r2 * p[i] - rp * point[i]) / r3;
        let near_vec = three * point[i] * rp - r2 * p[i];
        field[i] = (Complex::new(far, T::zero()) + near * near_vec) * phase;
    }
    Ok(field)
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Tensor-product quadrature over the collection cap around `+z`: Gauss–Legendre in
/// `cos(polar)`, uniform in azimuth. Weights are solid angle times `(k r)²`, so
/// `Σ w |E|²` approximates `∫ |E|² dS`.
#[derive(Debug, Clone)]
pub struct CapQuadrature<T> {
    radius: T,
    points: Vec<([T; 3], T)>,
}

impl<T: Scalar> CapQuadrature<T> {
    pub fn new(optics: &OpticalSystem<T>) -> Result<Self> {
        optics.validate()?;
        let n = optics.quadrature_points;
        let cos_max = optics.aperture_half_angle().to_f64_lossy().cos();
        let (gl_x, gl_w) = gauss_legendre(n);
        let radius = optics.far_field_radius_kr;
        let r2 = radius.to_f64_lossy().powi(2);
        let dphi = 2.0 * std::f64::consts::PI / n as f64;
        let half = 0.5 * (1.0 - cos_max);
        let mid = 0.5 * (1.0 + cos_max);
        let mut points = Vec::with_capacity(n * n);
        for (x, w) in gl_x.iter().zip(&gl_w) {
            let u = mid + half * x;
            let s = (1.0 - u * u).max(0.0).sqrt();
            for j in 0..n {
                let (sp, cp) = (j as f64 * dphi).sin_cos();
                let dir = [s * cp, s * sp, u].map(T::lit);
                points.push((dir, T::lit(w * half * dphi * r2)));
            }
        }
        Ok(Self { radius, points })
    }

    /// Unit directions and weights.
    pub fn points(&self) -> &[([T; 3], T)] {
        &self.points
    }

    pub fn radius(&self) -> T {
        self.radius
    }

    fn field_samples<'a>(
        &'a self,
        moment: &'a UnitVector3<T>,
    ) -> impl Iterator<Item = ([Complex<T>; 3], T)> + 'a {
        self.points.iter().map(move |(dir, w)| {
            let point = dir.map(|c| c * self.radius);
            (
                dipole_field(moment, point).expect("cap points have radius > 0"),
                *w,
            )
        })
    }
}

/// `D(θ) = xx cos²θ + 2 xy sinθ cosθ + yy sin²θ`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PolarizationResponse<T> {
    pub xx: T,
    pub xy: T,
    pub yy: T,
}

impl<T: Scalar> PolarizationResponse<T> {
    /// Response of a single dipole.
    pub fn of_dipole(moment: &UnitVector3<T>, quad: &CapQuadrature<T>) -> Self {
        let mut acc = Self::default();
        for (e, w) in quad.field_samples(moment) {
            acc.xx = acc.xx + w * e[0].norm_sqr();
            acc.yy = acc.yy + w * e[1].norm_sqr();
            acc.xy = acc.xy + w * (e[0] * e[1].conj()).re;
        }
        acc
    }

    /// Incoherent sum over both dipoles, scaled by the emitter brightness.
    pub fn of_emitter(emitter: &DipoleEmitter<T>, quad: &CapQuadrature<T>) -> Self {
        let [p1, p2] = emitter.dipole_moments();
        (Self::of_dipole(&p1, quad) + Self::of_dipole(&p2, quad)).scaled(emitter.brightness)
    }

    pub fn rate(&self, theta: T) -> T {
        let (s, c) = theta.sin_cos();
        self.xx * c * c + T::lit(2.0) * self.xy * s * c + self.yy * s * s
    }

    /// Maximum of `rate` over θ (largest eigenvalue of the 2×2 form).
    pub fn max_rate(&self) -> T {
        let mean = T::lit(0.5) * (self.xx + self.yy);
        let half_diff = T::lit(0.5) * (self.xx - self.yy);
        mean + (half_diff * half_diff + self.xy * self.xy).sqrt()
    }

    pub fn min_rate(&self) -> T {
        let mean = T::lit(0.5) * (self.xx + self.yy);
        let half_diff = T::lit(0.5) * (self.xx - self.yy);
        mean - (half_diff * half_diff + self.xy * self.xy).sqrt()
    }

    /// Average of `rate` over a polarizer turn; the unpolarized detection weight.
    pub fn mean_rate(&self) -> T {
        T::lit(0.5) * (self.xx + self.yy)
    }

    /// Polarizer angle in `[0, π)` of maximum transmission.
    pub fn peak_angle(&self) -> T {
        let a = T::lit(0.5) * (T::lit(2.0) * self.xy).atan2(self.xx - self.yy);
        if a < T::zero() {
            a + T::PI()
        } else {
            a
        }
    }

    pub fn scaled(&self, k: T) -> Self {
        Self {
            xx: self.xx * k,
            xy: self.xy * k,
            yy: self.yy * k,
        }
    }
}

impl<T: Scalar> std::ops::Add for PolarizationResponse<T> {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            xx: self.xx + o.xx,
            xy: self.xy + o.xy,
            yy: self.yy + o.yy,
        }
    }
}

/// Photon detection rate of `emitter` behind the polarizer, in the relative units of the
/// cap integral.
pub fn detection_rate<T: Scalar>(
    emitter: &DipoleEmitter<T>,
    optics: &OpticalSystem<T>,
    polarizer: &PolarizerSetting<T>,
) -> Result<T> {
    let quad = CapQuadrature::new(optics)?;
    Ok(PolarizationResponse::of_emitter(emitter, &quad).rate(polarizer.theta))
}

/// Closed-form double-dipole detection weight
/// `cos²θ (sin²φ + cos²γ cos²φ) + sin²θ (cos²φ + cos²γ sin²φ)` for polar angle `γ` and azimuth
/// `φ` of the NV axis. This form carries no `sinθ cosθ` term, so it tracks the aperture
/// integral only for axes whose projection lies along lab x or y.
pub fn detection_probability_closed_form<T: Scalar>(theta: T, polar: T, azimuth: T) -> T {
    let c2t = theta.cos().powi(2);
    let s2t = theta.sin().powi(2);
    let c2g = polar.cos().powi(2);
    let c2p = azimuth.cos().powi(2);
    let s2p = azimuth.sin().powi(2);
    c2t * (s2p + c2g * c2p) + s2t * (c2p + c2g * s2p)
}

/// Total PL intensity at each polarizer angle: the emitters' detection rates plus the
/// system's angle-independent background.
pub fn pl_curve<T: Scalar>(
    system: &EmitterSystem<T>,
    optics: &OpticalSystem<T>,
    angles: &[T],
) -> Result<Vec<T>> {
    if system.emitters.is_empty() {
        return Err(Error::domain("pl_curve needs at least one emitter"));
    }
    let quad = CapQuadrature::new(optics)?;
    let responses: Vec<_> = system
        .emitters
        .iter()
        .map(|e| PolarizationResponse::of_emitter(e, &quad))
        .collect();
    Ok(angles
        .iter()
        .map(|&t| {
            responses
                .iter()
                .fold(system.background, |acc, r| acc + r.rate(t))
        })
        .collect())
}

/// Unit-brightness responses of the four orientations under one set of optics.
#[derive(Debug, Clone)]
pub struct ResponseTable<T> {
    responses: [PolarizationResponse<T>; 4],
}

impl<T: Scalar> ResponseTable<T> {
    /// Panics if `optics` is invalid; use [`ResponseTable::try_new`] for user input.
    pub fn new(optics: &OpticalSystem<T>) -> Self {
        Self::try_new(optics).expect("valid optical system")
    }

    pub fn try_new(optics: &OpticalSystem<T>) -> Result<Self> {
        let quad = CapQuadrature::new(optics)?;
        let responses = OrientationLabel::ALL
            .map(|l| PolarizationResponse::of_emitter(&DipoleEmitter::new(l, T::one()), &quad));
        Ok(Self { responses })
    }

    pub fn get(&self, label: OrientationLabel) -> &PolarizationResponse<T> {
        &self.responses[label.index()]
    }

    /// Intensity and g² curves of a two-emitter hypothesis: `pair.first()` at unit brightness,
    /// `pair.second()` at `ratio`, and a background equal to `background` times the first
    /// emitter's peak rate. The polarizer origin is shifted by `offset` (the model is evaluated
    /// at `θ − offset`).
    pub fn pair_curves(
        &self,
        pair: OrientationPair,
        ratio: T,
        background: T,
        offset: T,
        angles: &[T],
    ) -> (Vec<T>, Vec<T>) {
        let r1 = self.get(pair.first());
        let r2 = self.get(pair.second());
        let bath = background * r1.max_rate();
        angles
            .iter()
            .map(|&t| {
                let p1 = r1.rate(t - offset);
                let p2 = ratio * r2.rate(t - offset);
                (
                    p1 + p2 + bath,
                    statistics::g2_from_probabilities(&[p1, p2], bath),
                )
            })
            .unzip()
    }
}
