//! Normal forms for one-parameter subgroups of the space-time symmetry group
//! of Curve Shortening (rotations, translations, parabolic dilations and time
//! translations).
//!
//! A generator `(theta, v, w, M)` acts by
//! `d/de (x, t) = (theta x + M x + v, 2 theta t + w)`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::skewlin::{skew_normal_form, SkewSpectrum};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeneratorRaw {
    pub theta: f64,
    pub v: DVector<f64>,
    pub w: f64,
    pub m: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Category {
    /// Static symmetry: shrinking helices.
    A,
    /// Translating and rotating solitons.
    B,
    /// Dilating and rotating solitons.
    C,
}

impl std::fmt::Display for Category {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Category::A => "A",
            Category::B => "B",
            Category::C => "C",
        };
        f.write_str(s)
    }
}

/// Coordinate change `(x, t) = (lambda S x_hat + p, lambda^2 t_hat + vartheta)`
/// together with the factor relating the generators:
/// `raw = conjugated(canonical) / rescale`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Conjugation {
    pub rotation: DMatrix<f64>,
    pub shift: DVector<f64>,
    pub time_shift: f64,
    pub dilation: f64,
    pub rescale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CanonicalGenerator {
    pub category: Category,
    pub theta: f64,
    pub w: f64,
    /// Translation part, lies in the null space of the normalized rotation.
    pub v_hat: DVector<f64>,
    /// Spectrum of the normalized (block diagonal) rotation generator.
    pub spectrum: SkewSpectrum,
    pub conjugation: Conjugation,
}

impl GeneratorRaw {
    pub fn new(theta: f64, v: DVector<f64>, w: f64, m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != v.len() {
            return Err(Error::Dimension { expected: m.nrows(), got: v.len() });
        }
        Ok(Self { theta, v, w, m })
    }

    pub fn dim(&self) -> usize {
        self.v.len()
    }

    fn scaled(&self, c: f64) -> Self {
        Self {
            theta: self.theta * c,
            v: &self.v * c,
            w: self.w * c,
            m: &self.m * c,
        }
    }

    /// Largest componentwise deviation from `other` after scaling it by `c`.
    pub fn distance_to(&self, other: &GeneratorRaw) -> f64 {
        let dm = (&self.m - &other.m).amax();
        let dv = (&self.v - &other.v).amax();
        dm.max(dv).max((self.theta - other.theta).abs()).max((self.w - other.w).abs())
    }
}

const ZERO_TOL: f64 = 1e-14;

/// Bring a generator into the normal form of its category.
pub fn classify(raw: &GeneratorRaw) -> Result<CanonicalGenerator> {
    let n = raw.dim();
    if raw.m.shape() != (n, n) {
        return Err(Error::Dimension { expected: n, got: raw.m.nrows() });
    }
    let size = raw.theta.abs() + raw.v.amax() + raw.w.abs() + raw.m.amax();
    if size <= ZERO_TOL {
        return Err(Error::TrivialGenerator);
    }

    let theta_nonzero = raw.theta.abs() > ZERO_TOL * size;
    // Time runs forward (w >= 0), then a dilating generator is rescaled to
    // theta = 1. The two factors are combined into one.
    let rescale = if theta_nonzero {
        1.0 / raw.theta
    } else if raw.w < 0.0 {
        -1.0
    } else {
        1.0
    };
    let g = raw.scaled(rescale);
    let theta = if theta_nonzero { 1.0 } else { 0.0 };

    let original = skew_normal_form(&g.m)?;
    let s = original.basis();

    let (shift, v_rest) = if theta_nonzero {
        let p = -(original.shifted_inverse(1.0)? * &g.v);
        (p, DVector::zeros(n))
    } else {
        let p = -(original.pseudoinverse() * &g.v);
        (p, original.null_projector() * &g.v)
    };
    let time_shift = if theta_nonzero { -g.w / 2.0 } else { 0.0 };
    let w_rest = if theta_nonzero { 0.0 } else { g.w };

    let dilation = if !theta_nonzero && w_rest > ZERO_TOL * size {
        w_rest.sqrt()
    } else {
        1.0
    };
    let w_hat = if dilation != 1.0 { 1.0 } else if theta_nonzero { 0.0 } else { w_rest };
    let w_hat = if w_hat.abs() <= ZERO_TOL * size { 0.0 } else { w_hat };
    let mut v_hat = s.transpose() * &v_rest / dilation;
    v_hat.iter_mut().for_each(|x| {
        if x.abs() <= ZERO_TOL * size {
            *x = 0.0
        }
    });

    let category = match (theta_nonzero, w_hat > 0.0) {
        (true, _) => Category::C,
        (false, true) => Category::B,
        (false, false) => Category::A,
    };
    if category == Category::A && original.is_zero() && v_hat.amax() == 0.0 {
        return Err(Error::TrivialGenerator);
    }

    let spectrum = skew_normal_form(&original.normal_form())?;
    Ok(CanonicalGenerator {
        category,
        theta,
        w: w_hat,
        v_hat,
        spectrum,
        conjugation: Conjugation {
            rotation: s,
            shift,
            time_shift,
            dilation,
            rescale,
        },
    })
}

impl CanonicalGenerator {
    pub fn dim(&self) -> usize {
        self.v_hat.len()
    }

    /// The canonical generator as a raw quadruple in its own coordinates.
    pub fn as_raw(&self) -> GeneratorRaw {
        GeneratorRaw {
            theta: self.theta,
            v: self.v_hat.clone(),
            w: self.w,
            m: self.spectrum.matrix().clone(),
        }
    }

    /// Push the canonical generator through the recorded coordinate change and
    /// undo the rescale; the result equals the raw input.
    pub fn reconstruct_raw(&self) -> GeneratorRaw {
        let c = &self.conjugation;
        let n = self.dim();
        let m = &c.rotation * self.spectrum.matrix() * c.rotation.transpose();
        let shifted = DMatrix::identity(n, n) * self.theta + &m;
        let v = -(shifted * &c.shift) + &c.rotation * &self.v_hat * c.dilation;
        let w = -2.0 * self.theta * c.time_shift + c.dilation * c.dilation * self.w;
        GeneratorRaw { theta: self.theta, v, w, m }.scaled(1.0 / c.rescale)
    }

    /// Group orbit through `(x0, t0)` in canonical coordinates.
    pub fn orbit(&self, eps: f64, x0: &DVector<f64>, t0: f64) -> (DVector<f64>, f64) {
        let rot = self.spectrum.rotation_exp(eps) * x0;
        match self.category {
            Category::A | Category::B => (rot + &self.v_hat * eps, t0 + self.w * eps),
            Category::C => (rot * eps.exp(), t0 * (2.0 * eps).exp()),
        }
    }

    /// Map canonical coordinates to the raw coordinates.
    pub fn to_raw_coordinates(&self, x_hat: &DVector<f64>, t_hat: f64) -> (DVector<f64>, f64) {
        let c = &self.conjugation;
        (
            &c.rotation * x_hat * c.dilation + &c.shift,
            c.dilation * c.dilation * t_hat + c.time_shift,
        )
    }
}
