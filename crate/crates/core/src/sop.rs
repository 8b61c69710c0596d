//! Jones/Stokes calculus and Poincaré-sphere geometry.
//!
//! Conventions (fixed, asserted in tests):
//! * Stokes components of a field `e = (e_x, e_y)`:
//!   `s0 = |e_x|^2 + |e_y|^2`, `s1 = |e_x|^2 - |e_y|^2`,
//!   `s2 = 2 Re(e_x conj(e_y))`, `s3 = 2 Im(conj(e_x) e_y)`
//!   (right-circular positive).
//! * A Poincaré rotation about unit axis `n` by angle `theta` is the Jones
//!   matrix `U = cos(theta/2) I - i sin(theta/2) (n . sigma)` with the Pauli
//!   triple `sigma_1 = [[1,0],[0,-1]]`, `sigma_2 = [[0,1],[1,0]]`,
//!   `sigma_3 = [[0,-i],[i,0]]`. With these signs a rotation about the S3
//!   axis by `theta` maps (1,0,0) to (cos theta, sin theta, 0).
//! * The pipeline launch state is x-linear, `(1, 0)`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Two-component complex field vector.
pub type JonesVector = [Complex64; 2];

/// The x-linear launch polarization used throughout the pipeline.
pub const LAUNCH_X: JonesVector = [Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)];

/// 2x2 complex field transfer matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JonesMatrix {
    pub xx: Complex64,
    pub xy: Complex64,
    pub yx: Complex64,
    pub yy: Complex64,
}

impl JonesMatrix {
    pub const IDENTITY: JonesMatrix = JonesMatrix {
        xx: Complex64::new(1.0, 0.0),
        xy: Complex64::new(0.0, 0.0),
        yx: Complex64::new(0.0, 0.0),
        yy: Complex64::new(1.0, 0.0),
    };

    pub fn new(xx: Complex64, xy: Complex64, yx: Complex64, yy: Complex64) -> Self {
        Self { xx, xy, yx, yy }
    }

    /// Poincaré-sphere rotation about `axis` (need not be normalized) by
    /// `angle_rad`. A zero axis yields the identity.
    pub fn rotation(axis: [f64; 3], angle_rad: f64) -> Self {
        let norm = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        if norm == 0.0 || angle_rad == 0.0 {
            return Self::IDENTITY;
        }
        let (n1, n2, n3) = (axis[0] / norm, axis[1] / norm, axis[2] / norm);
        let half = 0.5 * angle_rad;
        let c = half.cos();
        let s = half.sin();
        // cos I - i sin (n . sigma)
        Self {
            xx: Complex64::new(c, -s * n1),
            xy: Complex64::new(-s * n3, -s * n2),
            yx: Complex64::new(s * n3, -s * n2),
            yy: Complex64::new(c, s * n1),
        }
    }

    /// Rotation through angle `|r|` about axis `r`.
    pub fn from_rotation_vector(r: [f64; 3]) -> Self {
        let angle = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
        Self::rotation(r, angle)
    }

    pub fn apply(&self, v: JonesVector) -> JonesVector {
        [
            self.xx * v[0] + self.xy * v[1],
            self.yx * v[0] + self.yy * v[1],
        ]
    }

    pub fn mul(&self, rhs: &JonesMatrix) -> JonesMatrix {
        JonesMatrix {
            xx: self.xx * rhs.xx + self.xy * rhs.yx,
            xy: self.xx * rhs.xy + self.xy * rhs.yy,
            yx: self.yx * rhs.xx + self.yy * rhs.yx,
            yy: self.yx * rhs.xy + self.yy * rhs.yy,
        }
    }

    pub fn scale(&self, g: f64) -> JonesMatrix {
        JonesMatrix {
            xx: self.xx * g,
            xy: self.xy * g,
            yx: self.yx * g,
            yy: self.yy * g,
        }
    }

    pub fn det(&self) -> Complex64 {
        self.xx * self.yy - self.xy * self.yx
    }

    pub fn inverse(&self) -> Result<JonesMatrix> {
        let d = self.det();
        if d.norm() < 1e-300 {
            return Err(Error::Sop("singular Jones matrix".into()));
        }
        Ok(JonesMatrix {
            xx: self.yy / d,
            xy: -self.xy / d,
            yx: -self.yx / d,
            yy: self.xx / d,
        })
    }

    /// Scales the matrix so its determinant has unit magnitude.
    pub fn normalized_unit_det(&self) -> Result<JonesMatrix> {
        let d = self.det().norm();
        if d < 1e-300 {
            return Err(Error::Sop("singular Jones matrix".into()));
        }
        Ok(self.scale(1.0 / d.sqrt()))
    }

    pub fn frobenius_norm(&self) -> f64 {
        (self.xx.norm_sqr() + self.xy.norm_sqr() + self.yx.norm_sqr() + self.yy.norm_sqr()).sqrt()
    }

    /// Max absolute entry of `J J^H - I`.
    pub fn unitarity_error(&self) -> f64 {
        let a = self.xx * self.xx.conj() + self.xy * self.xy.conj();
        let b = self.xx * self.yx.conj() + self.xy * self.yy.conj();
        let c = self.yx * self.xx.conj() + self.yy * self.xy.conj();
        let d = self.yx * self.yx.conj() + self.yy * self.yy.conj();
        let one = Complex64::new(1.0, 0.0);
        [(a - one).norm(), b.norm(), c.norm(), (d - one).norm()]
            .into_iter()
            .fold(0.0, f64::max)
    }

    /// Singular values (larger first), from the eigenvalues of `J^H J`.
    pub fn singular_values(&self) -> (f64, f64) {
        let fro2 = self.frobenius_norm().powi(2);
        let det = self.det().norm();
        // s_max^2 + s_min^2 = fro2, s_max * s_min = |det|
        let disc = (fro2 * fro2 - 4.0 * det * det).max(0.0).sqrt();
        let s_max2 = 0.5 * (fro2 + disc);
        let s_min2 = 0.5 * (fro2 - disc).max(0.0);
        (s_max2.sqrt(), s_min2.sqrt())
    }

    pub fn condition_number(&self) -> f64 {
        let (s_max, s_min) = self.singular_values();
        if s_min == 0.0 {
            f64::INFINITY
        } else {
            s_max / s_min
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.xx, self.xy, self.yx, self.yy]
            .iter()
            .all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

/// Stokes description of a polarization state. `s0` is total power.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StokesVector {
    pub s0: f64,
    pub s1: f64,
    pub s2: f64,
    pub s3: f64,
}

impl StokesVector {
    pub fn new(s0: f64, s1: f64, s2: f64, s3: f64) -> Self {
        Self { s0, s1, s2, s3 }
    }

    /// Normalized 3-vector on (or inside) the Poincaré sphere.
    pub fn normalized(&self) -> Result<[f64; 3]> {
        let n = (self.s1 * self.s1 + self.s2 * self.s2 + self.s3 * self.s3).sqrt();
        if n == 0.0 {
            return Err(Error::Sop("zero-norm Stokes vector".into()));
        }
        Ok([self.s1 / n, self.s2 / n, self.s3 / n])
    }
}

/// Stokes image of the field `e`.
pub fn stokes_from_field(e: JonesVector) -> StokesVector {
    let px = e[0].norm_sqr();
    let py = e[1].norm_sqr();
    let cross = e[0].conj() * e[1];
    StokesVector {
        s0: px + py,
        s1: px - py,
        s2: 2.0 * cross.re,
        s3: 2.0 * cross.im,
    }
}

/// Stokes image of `J . launch`.
pub fn stokes_from_jones(j: &JonesMatrix, launch: JonesVector) -> Result<StokesVector> {
    if !j.is_finite() {
        return Err(Error::Sop("non-finite Jones entries".into()));
    }
    Ok(stokes_from_field(j.apply(launch)))
}

/// Angle in `[0, pi]` between two states on the Poincaré sphere.
pub fn great_circle_angle(a: &StokesVector, b: &StokesVector) -> Result<f64> {
    let na = a.normalized()?;
    let nb = b.normalized()?;
    let dot = na[0] * nb[0] + na[1] * nb[1] + na[2] * nb[2];
    Ok(dot.clamp(-1.0, 1.0).acos())
}

/// One entry of a Jones stream extracted from the channel or equalizer.
#[derive(Debug, Clone, Copy)]
pub struct JonesEntry {
    pub t_s: f64,
    pub matrix: JonesMatrix,
    pub valid: bool,
}

/// Regularly sampled Jones stream at the SOP sampling period.
#[derive(Debug, Clone)]
pub struct JonesSeries {
    pub sample_period_s: f64,
    pub entries: Vec<JonesEntry>,
}

/// One SOP sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SopSample {
    pub s: StokesVector,
    pub valid: bool,
}

/// Regularly sampled Stokes stream.
#[derive(Debug, Clone)]
pub struct SopSeries {
    pub sample_period_s: f64,
    pub start_t_s: f64,
    pub samples: Vec<SopSample>,
}

impl SopSeries {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn time_at(&self, k: usize) -> f64 {
        self.start_t_s + k as f64 * self.sample_period_s
    }

    /// Normalized component traces (s1, s2, s3) over the leading run of valid
    /// samples. Post-break samples never return to valid, so the leading run
    /// is the full sensing record.
    pub fn valid_prefix_traces(&self) -> [Vec<f64>; 3] {
        let n = self
            .samples
            .iter()
            .position(|s| !s.valid)
            .unwrap_or(self.samples.len());
        let mut out = [
            Vec::with_capacity(n),
            Vec::with_capacity(n),
            Vec::with_capacity(n),
        ];
        for sample in &self.samples[..n] {
            let s = sample.s;
            let s0 = if s.s0 > 0.0 { s.s0 } else { 1.0 };
            out[0].push(s.s1 / s0);
            out[1].push(s.s2 / s0);
            out[2].push(s.s3 / s0);
        }
        out
    }
}

/// Element-wise Stokes conversion of a Jones stream. Invalid entries keep
/// their residual power in `s0` with zeroed components.
pub fn series_from_jones(js: &JonesSeries, launch: JonesVector) -> Result<SopSeries> {
    if js.entries.is_empty() {
        return Err(Error::Sop("empty Jones series".into()));
    }
    let start = js.entries[0].t_s;
    let samples = js
        .entries
        .iter()
        .map(|e| {
            let s = stokes_from_field(e.matrix.apply(launch));
            if e.valid {
                SopSample { s, valid: true }
            } else {
                SopSample {
                    s: StokesVector::new(s.s0, 0.0, 0.0, 0.0),
                    valid: false,
                }
            }
        })
        .collect();
    Ok(SopSeries {
        sample_period_s: js.sample_period_s,
        start_t_s: start,
        samples,
    })
}

/// Per-component deviation traces from an initial reference window, as
/// plotted in break post-analysis. Gaps (invalid samples) are NaN.
#[derive(Debug, Clone)]
pub struct DeviationTraces {
    pub sample_period_s: f64,
    pub start_t_s: f64,
    pub reference: [f64; 3],
    pub d: [Vec<f64>; 3],
}

/// Subtracts the mean normalized SOP over the first `ref_window_s` of valid
/// samples from each normalized component.
pub fn deviation_from_reference(series: &SopSeries, ref_window_s: f64) -> Result<DeviationTraces> {
    let win = (ref_window_s / series.sample_period_s).floor() as usize;
    let win = win.max(1);
    let lead: Vec<&SopSample> = series.samples.iter().take(win).filter(|s| s.valid).collect();
    if lead.len() < win || win > series.samples.len() {
        return Err(Error::Sop(format!(
            "no full valid reference window ({} samples needed)",
            win
        )));
    }
    let mut reference = [0.0f64; 3];
    for s in &lead {
        let s0 = if s.s.s0 > 0.0 { s.s.s0 } else { 1.0 };
        reference[0] += s.s.s1 / s0;
        reference[1] += s.s.s2 / s0;
        reference[2] += s.s.s3 / s0;
    }
    for r in &mut reference {
        *r /= lead.len() as f64;
    }
    let mut d = [
        Vec::with_capacity(series.len()),
        Vec::with_capacity(series.len()),
        Vec::with_capacity(series.len()),
    ];
    for s in &series.samples {
        if s.valid {
            let s0 = if s.s.s0 > 0.0 { s.s.s0 } else { 1.0 };
            d[0].push(s.s.s1 / s0 - reference[0]);
            d[1].push(s.s.s2 / s0 - reference[1]);
            d[2].push(s.s.s3 / s0 - reference[2]);
        } else {
            d[0].push(f64::NAN);
            d[1].push(f64::NAN);
            d[2].push(f64::NAN);
        }
    }
    Ok(DeviationTraces {
        sample_period_s: series.sample_period_s,
        start_t_s: series.start_t_s,
        reference,
        d,
    })
}

/// Haar-uniform random unitary Jones matrix (unit quaternion times no global
/// phase). Used by tests and the acceptance suite.
pub fn random_unitary<R: rand::Rng>(rng: &mut R) -> JonesMatrix {
    let q: [f64; 4] = [
        sample_standard_normal(rng),
        sample_standard_normal(rng),
        sample_standard_normal(rng),
        sample_standard_normal(rng),
    ];
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    // w I - i (x s1 + y s2 + z s3)
    JonesMatrix {
        xx: Complex64::new(w, -x),
        xy: Complex64::new(-z, -y),
        yx: Complex64::new(z, -y),
        yy: Complex64::new(w, x),
    }
}

/// Standard-normal draw via the Marsaglia polar method; avoids pulling in
/// rand_distr for one distribution.
pub(crate) fn sample_standard_normal<R: rand::Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.gen_range(-1.0..1.0);
        let v: f64 = rng.gen_range(-1.0..1.0);
        let s = u * u + v * v;
        if s > 0.0 && s < 1.0 {
            return u * (-2.0 * s.ln() / s).sqrt();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn identity_x_launch() {
        let s = stokes_from_jones(&JonesMatrix::IDENTITY, LAUNCH_X).unwrap();
        assert_eq!((s.s0, s.s1, s.s2, s.s3), (1.0, 1.0, 0.0, 0.0));
    }

    #[test]
    fn s3_rotation_by_45_degrees_moves_s1_to_diagonal() {
        // 45-degree rotator in Stokes space: (1,0,0) -> (cos45, sin45, 0);
        // a 90-degree rotation maps x-launch to (1, 0, 1, 0).
        let j = JonesMatrix::rotation([0.0, 0.0, 1.0], std::f64::consts::FRAC_PI_2);
        let s = stokes_from_jones(&j, LAUNCH_X).unwrap();
        assert!((s.s0 - 1.0).abs() < 1e-12);
        assert!(s.s1.abs() < 1e-12);
        assert!((s.s2 - 1.0).abs() < 1e-12);
        assert!(s.s3.abs() < 1e-12);
    }

    #[test]
    fn quarter_wave_on_diagonal_launch_gives_circular() {
        let j = JonesMatrix::new(c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 1.0));
        let r = 1.0 / 2.0f64.sqrt();
        let s = stokes_from_jones(&j, [c(r, 0.0), c(r, 0.0)]).unwrap();
        assert!((s.s0 - 1.0).abs() < 1e-12);
        assert!(s.s1.abs() < 1e-12);
        assert!(s.s2.abs() < 1e-12);
        assert!((s.s3 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unitary_preserves_sphere_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let j = random_unitary(&mut rng);
            assert!(j.unitarity_error() < 1e-12);
            let s = stokes_from_jones(&j, LAUNCH_X).unwrap();
            let lhs = s.s1 * s.s1 + s.s2 * s.s2 + s.s3 * s.s3;
            assert!((lhs - s.s0 * s.s0).abs() < 1e-9);
        }
    }

    #[test]
    fn global_phase_leaves_stokes_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let j = random_unitary(&mut rng);
            let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let p = Complex64::from_polar(1.0, phi);
            let jp = JonesMatrix::new(j.xx * p, j.xy * p, j.yx * p, j.yy * p);
            let a = stokes_from_jones(&j, LAUNCH_X).unwrap();
            let b = stokes_from_jones(&jp, LAUNCH_X).unwrap();
            assert!((a.s1 - b.s1).abs() < 1e-12);
            assert!((a.s2 - b.s2).abs() < 1e-12);
            assert!((a.s3 - b.s3).abs() < 1e-12);
        }
        // Exact at quadrant phases, where the multiplier is +/-1 or +/-i.
        let j = JonesMatrix::rotation([0.3, -0.5, 0.8], 1.1);
        for p in [c(1.0, 0.0), c(-1.0, 0.0), c(0.0, 1.0), c(0.0, -1.0)] {
            let jp = JonesMatrix::new(j.xx * p, j.xy * p, j.yx * p, j.yy * p);
            let a = stokes_from_jones(&j, LAUNCH_X).unwrap();
            let b = stokes_from_jones(&jp, LAUNCH_X).unwrap();
            assert_eq!((a.s1, a.s2, a.s3), (b.s1, b.s2, b.s3));
        }
    }

    #[test]
    fn great_circle_basics() {
        let a = StokesVector::new(1.0, 1.0, 0.0, 0.0);
        let b = StokesVector::new(1.0, 0.0, 1.0, 0.0);
        let anti = StokesVector::new(1.0, -1.0, 0.0, 0.0);
        assert_eq!(great_circle_angle(&a, &a).unwrap(), 0.0);
        assert!((great_circle_angle(&a, &b).unwrap() - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        assert!((great_circle_angle(&a, &anti).unwrap() - std::f64::consts::PI).abs() < 1e-12);
        let zero = StokesVector::new(0.0, 0.0, 0.0, 0.0);
        assert!(great_circle_angle(&a, &zero).is_err());
    }

    #[test]
    fn deviation_of_constant_series_is_zero() {
        let series = SopSeries {
            sample_period_s: 0.01,
            start_t_s: 0.0,
            samples: vec![
                SopSample {
                    s: StokesVector::new(1.0, 1.0, 0.0, 0.0),
                    valid: true
                };
                500
            ],
        };
        let dev = deviation_from_reference(&series, 1.0).unwrap();
        for i in 0..3 {
            assert!(dev.d[i].iter().all(|v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn deviation_step_to_orthogonal_state() {
        let mut samples = vec![
            SopSample {
                s: StokesVector::new(1.0, 1.0, 0.0, 0.0),
                valid: true
            };
            200
        ];
        samples.extend(vec![
            SopSample {
                s: StokesVector::new(1.0, -1.0, 0.0, 0.0),
                valid: true
            };
            200
        ]);
        let series = SopSeries {
            sample_period_s: 0.01,
            start_t_s: 0.0,
            samples,
        };
        let dev = deviation_from_reference(&series, 1.0).unwrap();
        assert!(dev.d[0][0].abs() < 1e-12);
        assert!((dev.d[0][300] - (-2.0)).abs() < 1e-12);
    }

    #[test]
    fn deviation_requires_valid_window() {
        let series = SopSeries {
            sample_period_s: 0.01,
            start_t_s: 0.0,
            samples: vec![
                SopSample {
                    s: StokesVector::new(1.0, 0.0, 0.0, 0.0),
                    valid: false
                };
                100
            ],
        };
        assert!(deviation_from_reference(&series, 0.5).is_err());
    }

    #[test]
    fn series_from_jones_identity_and_empty() {
        let js = JonesSeries {
            sample_period_s: 1e-4,
            entries: (0..10)
                .map(|k| JonesEntry {
                    t_s: k as f64 * 1e-4,
                    matrix: JonesMatrix::IDENTITY,
                    valid: true,
                })
                .collect(),
        };
        let s = series_from_jones(&js, LAUNCH_X).unwrap();
        assert_eq!(s.len(), 10);
        for sample in &s.samples {
            assert_eq!((sample.s.s0, sample.s.s1), (1.0, 1.0));
        }
        let empty = JonesSeries {
            sample_period_s: 1e-4,
            entries: vec![],
        };
        assert!(series_from_jones(&empty, LAUNCH_X).is_err());
    }

    #[test]
    fn singular_values_and_condition() {
        let j = JonesMatrix::new(c(2.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.5, 0.0));
        let (smax, smin) = j.singular_values();
        assert!((smax - 2.0).abs() < 1e-12);
        assert!((smin - 0.5).abs() < 1e-12);
        assert!((j.condition_number() - 4.0).abs() < 1e-12);
    }
}
