//! Strain kernels: 2x2 spectral decomposition, regularized tensile/compressive split, energy
//! densities, degraded stress and the history field.
//!
//! Units: strains are dimensionless, Lamé constants and stresses in kN/mm², `g_c` in kN/mm,
//! lengths in mm.

use std::f64::consts::SQRT_2;

use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MaterialError {
    #[error("material parameter `{name}` = {value} is out of range ({rule})")]
    OutOfRange { name: &'static str, value: f64, rule: &'static str },
    #[error("regularization `{0}` requires alpha > 0")]
    MissingAlpha(Method),
    #[error("fields have {0} and {1} values")]
    SizeMismatch(usize, usize),
}

/// Symmetric 2x2 tensor stored by its three independent entries.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SymTensor2 {
    pub xx: f64,
    pub yy: f64,
    pub xy: f64,
}

impl SymTensor2 {
    pub const ZERO: Self = Self { xx: 0.0, yy: 0.0, xy: 0.0 };
    pub const IDENTITY: Self = Self { xx: 1.0, yy: 1.0, xy: 0.0 };

    pub fn new(xx: f64, yy: f64, xy: f64) -> Self {
        Self { xx, yy, xy }
    }

    pub fn diag(a: f64, b: f64) -> Self {
        Self::new(a, b, 0.0)
    }

    pub fn trace(&self) -> f64 {
        self.xx + self.yy
    }

    pub fn det(&self) -> f64 {
        self.xx * self.yy - self.xy * self.xy
    }

    /// Double contraction `A : B`.
    pub fn ddot(&self, other: &Self) -> f64 {
        self.xx * other.xx + self.yy * other.yy + 2.0 * self.xy * other.xy
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::new(self.xx * s, self.yy * s, self.xy * s)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        (self.xx - other.xx).abs().max((self.yy - other.yy).abs()).max((self.xy - other.xy).abs())
    }

    /// Inverse, `None` when singular.
    pub fn inverse(&self) -> Option<Self> {
        let det = self.det();
        (det != 0.0 && det.is_finite()).then(|| Self::new(self.yy / det, self.xx / det, -self.xy / det))
    }

    pub fn to_matrix(&self) -> Matrix2<f64> {
        Matrix2::new(self.xx, self.xy, self.xy, self.yy)
    }

    /// Symmetric part of a general 2x2 matrix.
    pub fn from_matrix_sym(m: &Matrix2<f64>) -> Self {
        Self::new(m[(0, 0)], m[(1, 1)], 0.5 * (m[(0, 1)] + m[(1, 0)]))
    }

    /// `f` applied to the eigenvalues: `Q diag(f(l1), f(l2)) Q^T`.
    pub fn map_eigen(&self, f: impl Fn(f64) -> f64) -> Self {
        let eig = eig_sym2(self);
        eig.compose(f(eig.values[0]), f(eig.values[1]))
    }
}

impl std::ops::Add for SymTensor2 {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.xx + o.xx, self.yy + o.yy, self.xy + o.xy)
    }
}

impl std::ops::Sub for SymTensor2 {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.xx - o.xx, self.yy - o.yy, self.xy - o.xy)
    }
}

/// Eigenvalues `l1 >= l2` and orthonormal eigenvectors (columns of `vectors`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EigenPair2 {
    pub values: [f64; 2],
    pub vectors: Matrix2<f64>,
}

impl EigenPair2 {
    /// `Q diag(a, b) Q^T`.
    pub fn compose(&self, a: f64, b: f64) -> SymTensor2 {
        let (c, s) = (self.vectors[(0, 0)], self.vectors[(1, 0)]);
        SymTensor2::new(a * c * c + b * s * s, a * s * s + b * c * c, (a - b) * c * s)
    }
}

/// Closed-form eigen-decomposition of a symmetric 2x2 tensor.
pub fn eig_sym2(t: &SymTensor2) -> EigenPair2 {
    let mean = 0.5 * (t.xx + t.yy);
    let half_diff = 0.5 * (t.xx - t.yy);
    let radius = half_diff.hypot(t.xy);
    let values = [mean + radius, mean - radius];
    if 2.0 * radius <= 1e-14 {
        return EigenPair2 { values, vectors: Matrix2::identity() };
    }
    let angle = 0.5 * t.xy.atan2(half_diff);
    let (s, c) = angle.sin_cos();
    EigenPair2 { values, vectors: Matrix2::new(c, -s, s, c) }
}

/// Smoothing applied to the positive/negative-part functions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    None,
    SonicPoint,
    ExpConvolution,
    Smoothed2Point,
}

impl Method {
    pub const ALL: [Method; 4] =
        [Method::None, Method::SonicPoint, Method::ExpConvolution, Method::Smoothed2Point];
    pub const REGULARIZED: [Method; 3] =
        [Method::SonicPoint, Method::ExpConvolution, Method::Smoothed2Point];

    pub fn name(self) -> &'static str {
        match self {
            Method::None => "none",
            Method::SonicPoint => "sonic_point",
            Method::ExpConvolution => "exp_convolution",
            Method::Smoothed2Point => "smoothed_2point",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown regularization `{s}` (none, sonic_point, exp_convolution, smoothed_2point)"))
    }
}

/// A regularized positive/negative-part pair `(lambda+_alpha, lambda-_alpha)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Regularization {
    pub method: Method,
    pub alpha: f64,
}

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

// Smoothed 2-point pieces of lambda+ / alpha as polynomials in t = lambda / alpha
// (ascending coefficients), on [-1.5, -0.5], [-0.5, 0.5], [0.5, 1.5].
const TWO_POINT_PLUS: [[f64; 5]; 3] = [
    [27.0 / 128.0, 9.0 / 16.0, 9.0 / 16.0, 1.0 / 4.0, 1.0 / 24.0],
    [13.0 / 64.0, 1.0 / 2.0, 3.0 / 8.0, 0.0, -1.0 / 12.0],
    [27.0 / 128.0, 7.0 / 16.0, 9.0 / 16.0, -1.0 / 4.0, 1.0 / 24.0],
];
const TWO_POINT_MINUS: [[f64; 5]; 3] = [
    [-27.0 / 128.0, 7.0 / 16.0, -9.0 / 16.0, -1.0 / 4.0, -1.0 / 24.0],
    [-13.0 / 64.0, 1.0 / 2.0, -3.0 / 8.0, 0.0, 1.0 / 12.0],
    [-27.0 / 128.0, 9.0 / 16.0, -9.0 / 16.0, 1.0 / 4.0, -1.0 / 24.0],
];
const TWO_POINT_BREAKS: [f64; 4] = [-1.5, -0.5, 0.5, 1.5];

fn horner(c: &[f64], t: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &a| acc * t + a)
}

/// Antiderivative of the polynomial with coefficients `c`, vanishing at 0.
fn horner_integral(c: &[f64; 5], t: f64) -> f64 {
    c.iter().enumerate().rev().fold(0.0, |acc, (i, &a)| acc * t + a / (i + 1) as f64) * t
}

fn two_point_piece(t: f64) -> Option<usize> {
    (0..3).find(|&i| t <= TWO_POINT_BREAKS[i + 1]).filter(|_| t >= TWO_POINT_BREAKS[0])
}

/// Standard normal density and distribution function.
fn normal_pdf(z: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / SQRT_2)
}

impl Regularization {
    pub const NONE: Self = Self { method: Method::None, alpha: 0.0 };

    pub fn new(method: Method, alpha: f64) -> Self {
        Self { method, alpha }
    }

    pub fn validate(&self) -> Result<(), MaterialError> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(MaterialError::OutOfRange { name: "alpha", value: self.alpha, rule: ">= 0" });
        }
        if self.method != Method::None && self.alpha == 0.0 {
            return Err(MaterialError::MissingAlpha(self.method));
        }
        Ok(())
    }

    /// Regularized positive part `lambda+_alpha`.
    pub fn plus(&self, x: f64) -> f64 {
        let a = self.alpha;
        match self.method {
            Method::None => 0.5 * (x + x.abs()),
            Method::SonicPoint => 0.5 * (x + x.hypot(a)),
            Method::ExpConvolution => {
                0.5 * x * (1.0 + libm::erf(x / (SQRT_2 * a)))
                    + a * INV_SQRT_2PI * (-x * x / (2.0 * a * a)).exp()
            }
            Method::Smoothed2Point => {
                let t = x / a;
                if t <= -1.5 {
                    0.0
                } else if t >= 1.5 {
                    x
                } else {
                    a * horner(&TWO_POINT_PLUS[two_point_piece(t).unwrap()], t)
                }
            }
        }
    }

    /// Regularized negative part `lambda-_alpha`.
    pub fn minus(&self, x: f64) -> f64 {
        let a = self.alpha;
        match self.method {
            Method::None => 0.5 * (x - x.abs()),
            Method::SonicPoint => 0.5 * (x - x.hypot(a)),
            Method::ExpConvolution => {
                0.5 * x * (1.0 + libm::erf(-x / (SQRT_2 * a)))
                    - a * INV_SQRT_2PI * (-x * x / (2.0 * a * a)).exp()
            }
            Method::Smoothed2Point => {
                let t = x / a;
                if t <= -1.5 {
                    x
                } else if t >= 1.5 {
                    0.0
                } else {
                    a * horner(&TWO_POINT_MINUS[two_point_piece(t).unwrap()], t)
                }
            }
        }
    }

    /// Slope of `lambda+_alpha` (one-sided value 1/2 at the kink when unregularized).
    pub fn plus_slope(&self, x: f64) -> f64 {
        let a = self.alpha;
        match self.method {
            Method::None => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    0.0
                } else {
                    0.5
                }
            }
            Method::SonicPoint => 0.5 * (1.0 + x / x.hypot(a)),
            Method::ExpConvolution => normal_cdf(x / a),
            Method::Smoothed2Point => {
                let t = x / a;
                if t <= -1.5 {
                    0.0
                } else if t >= 1.5 {
                    1.0
                } else {
                    let c = &TWO_POINT_PLUS[two_point_piece(t).unwrap()];
                    let dc = [c[1], 2.0 * c[2], 3.0 * c[3], 4.0 * c[4]];
                    horner(&dc, t)
                }
            }
        }
    }

    /// Antiderivative `F+` of `lambda+_alpha` (`F+' = lambda+_alpha`), up to a constant.
    ///
    /// For the unregularized split `F+(x) = (x+)^2 / 2`.
    pub fn plus_potential(&self, x: f64) -> f64 {
        let a = self.alpha;
        match self.method {
            Method::None => {
                let p = x.max(0.0);
                0.5 * p * p
            }
            Method::SonicPoint => 0.25 * (x * x + x * x.hypot(a) + a * a * (x / a).asinh()),
            Method::ExpConvolution => {
                let z = x / a;
                0.5 * ((x * x + a * a) * normal_cdf(z) + x * a * normal_pdf(z))
            }
            Method::Smoothed2Point => {
                let t = x / a;
                if t <= -1.5 {
                    return 0.0;
                }
                let mut acc = 0.0;
                for i in 0..3 {
                    let (lo, hi) = (TWO_POINT_BREAKS[i], TWO_POINT_BREAKS[i + 1]);
                    let c = &TWO_POINT_PLUS[i];
                    let upper = t.min(hi);
                    acc += horner_integral(c, upper) - horner_integral(c, lo);
                    if t <= hi {
                        return a * a * acc;
                    }
                }
                a * a * (acc + 0.5 * (t * t - 1.5 * 1.5))
            }
        }
    }

    /// Antiderivative `F-` of `lambda-_alpha`, up to a constant.
    pub fn minus_potential(&self, x: f64) -> f64 {
        match self.method {
            Method::None => {
                let m = x.min(0.0);
                0.5 * m * m
            }
            _ => 0.5 * x * x - self.plus_potential(x),
        }
    }
}

/// Isotropic material with phase-field and regularization parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaterialModel {
    /// Lamé's first parameter (kN/mm²).
    pub lambda: f64,
    /// Shear modulus (kN/mm²).
    pub mu: f64,
    /// Fracture toughness (kN/mm).
    pub g_c: f64,
    /// Phase-field length scale (mm).
    pub l: f64,
    /// Residual stiffness.
    pub k_l: f64,
    pub regularization: Regularization,
}

impl MaterialModel {
    pub fn validate(&self) -> Result<(), MaterialError> {
        let positive = [("lambda", self.lambda), ("mu", self.mu), ("g_c", self.g_c), ("l", self.l)];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(MaterialError::OutOfRange { name, value, rule: "> 0" });
            }
        }
        if !(self.k_l >= 0.0 && self.k_l.is_finite()) {
            return Err(MaterialError::OutOfRange { name: "k_l", value: self.k_l, rule: ">= 0" });
        }
        self.regularization.validate()
    }

    /// `(d^2 + k_l)`.
    pub fn degradation(&self, d: f64) -> f64 {
        d * d + self.k_l
    }
}

/// Regularized split `eps = eps+ + eps-`.
pub fn strain_split(eps: &SymTensor2, reg: &Regularization) -> (SymTensor2, SymTensor2) {
    let eig = eig_sym2(eps);
    let [l1, l2] = eig.values;
    (eig.compose(reg.plus(l1), reg.plus(l2)), eig.compose(reg.minus(l1), reg.minus(l2)))
}

/// Tensile energy density `lambda/2 ((tr eps)+)^2 + mu tr((eps+)^2)` with the regularized parts.
pub fn psi_plus(eps: &SymTensor2, mat: &MaterialModel) -> f64 {
    let reg = &mat.regularization;
    let [l1, l2] = eig_sym2(eps).values;
    let (tp, p1, p2) = (reg.plus(eps.trace()), reg.plus(l1), reg.plus(l2));
    0.5 * mat.lambda * tp * tp + mat.mu * (p1 * p1 + p2 * p2)
}

/// Compressive energy density, the counterpart of [`psi_plus`].
pub fn psi_minus(eps: &SymTensor2, mat: &MaterialModel) -> f64 {
    let reg = &mat.regularization;
    let [l1, l2] = eig_sym2(eps).values;
    let (tm, m1, m2) = (reg.minus(eps.trace()), reg.minus(l1), reg.minus(l2));
    0.5 * mat.lambda * tm * tm + mat.mu * (m1 * m1 + m2 * m2)
}

/// Degraded stress `(d^2 + k_l)(lambda tr+ I + 2 mu eps+) + (lambda tr- I + 2 mu eps-)`.
pub fn stress(eps: &SymTensor2, d: f64, mat: &MaterialModel) -> SymTensor2 {
    let reg = &mat.regularization;
    let tr = eps.trace();
    let (ep, em) = strain_split(eps, reg);
    let g = mat.degradation(d);
    let plus = SymTensor2::IDENTITY.scale(mat.lambda * reg.plus(tr)) + ep.scale(2.0 * mat.mu);
    let minus = SymTensor2::IDENTITY.scale(mat.lambda * reg.minus(tr)) + em.scale(2.0 * mat.mu);
    plus.scale(g) + minus
}

/// Strain energy density whose strain gradient is exactly [`stress`].
///
/// `(d^2 + k_l) Phi+ + Phi-` with `Phi± = lambda F±(tr eps) + 2 mu (F±(l1) + F±(l2))`, where
/// `F±` are the antiderivatives of the regularized parts. Without regularization `Phi±`
/// coincides with [`psi_plus`]/[`psi_minus`].
pub fn elastic_energy_density(eps: &SymTensor2, d: f64, mat: &MaterialModel) -> f64 {
    let reg = &mat.regularization;
    let tr = eps.trace();
    let [l1, l2] = eig_sym2(eps).values;
    let phi_plus = mat.lambda * reg.plus_potential(tr)
        + 2.0 * mat.mu * (reg.plus_potential(l1) + reg.plus_potential(l2));
    let phi_minus = mat.lambda * reg.minus_potential(tr)
        + 2.0 * mat.mu * (reg.minus_potential(l1) + reg.minus_potential(l2));
    mat.degradation(d) * phi_plus + phi_minus
}

/// Nodewise `max(psi_now, h_old)`.
pub fn history_update(psi_now: &[f64], h_old: &[f64]) -> Result<Vec<f64>, MaterialError> {
    if psi_now.len() != h_old.len() {
        return Err(MaterialError::SizeMismatch(psi_now.len(), h_old.len()));
    }
    Ok(psi_now.iter().zip(h_old).map(|(&p, &h)| p.max(h)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn material(method: Method, alpha: f64) -> MaterialModel {
        MaterialModel {
            lambda: 121.15,
            mu: 80.77,
            g_c: 2.7e-3,
            l: 0.0075,
            k_l: 0.0,
            regularization: Regularization::new(method, alpha),
        }
    }

    fn reconstruct(e: &EigenPair2) -> SymTensor2 {
        e.compose(e.values[0], e.values[1])
    }

    #[test]
    fn eig_examples() {
        let e = eig_sym2(&SymTensor2::diag(2.0, -1.0));
        assert_eq!(e.values, [2.0, -1.0]);
        assert_abs_diff_eq!(e.vectors, Matrix2::identity(), epsilon = 1e-15);

        let e = eig_sym2(&SymTensor2::new(0.0, 0.0, 1.0));
        assert_abs_diff_eq!(e.values[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(e.values[1], -1.0, epsilon = 1e-15);
        let r = 0.5f64.sqrt();
        assert_abs_diff_eq!(e.vectors[(0, 0)].abs(), r, epsilon = 1e-15);
        assert_abs_diff_eq!(e.vectors[(1, 0)], e.vectors[(0, 0)], epsilon = 1e-15);

        let iso = SymTensor2::diag(0.3, 0.3);
        let e = eig_sym2(&iso);
        assert_eq!(e.values, [0.3, 0.3]);
        assert!(reconstruct(&e).max_abs_diff(&iso) < 1e-15);
    }

    #[test]
    fn regularized_parts_at_zero() {
        let a = 1e-3;
        assert_abs_diff_eq!(Regularization::new(Method::SonicPoint, a).plus(0.0), 5e-4, epsilon = 1e-18);
        assert_abs_diff_eq!(
            Regularization::new(Method::ExpConvolution, a).plus(0.0),
            a / (2.0 * std::f64::consts::PI).sqrt(),
            epsilon = 1e-18
        );
        assert_abs_diff_eq!(Regularization::new(Method::ExpConvolution, a).plus(0.0), 3.98942e-4, epsilon = 1e-9);
        assert_abs_diff_eq!(
            Regularization::new(Method::Smoothed2Point, a).plus(0.0),
            13.0 * a / 64.0,
            epsilon = 1e-18
        );
        assert_abs_diff_eq!(Regularization::new(Method::Smoothed2Point, a).plus(0.0), 2.03125e-4, epsilon = 1e-18);
    }

    #[test]
    fn two_point_is_exact_outside_the_support() {
        let reg = Regularization::new(Method::Smoothed2Point, 1e-3);
        assert_eq!(reg.plus(2e-3), 2e-3);
        assert_eq!(reg.minus(2e-3), 0.0);
        assert_eq!(reg.plus(-2e-3), 0.0);
        assert_eq!(reg.minus(-2e-3), -2e-3);
    }

    #[test]
    fn two_point_pieces_join_continuously() {
        let reg = Regularization::new(Method::Smoothed2Point, 1.0);
        for b in TWO_POINT_BREAKS {
            for f in [
                &(|x| reg.plus(x)) as &dyn Fn(f64) -> f64,
                &|x| reg.minus(x),
                &|x| reg.plus_slope(x),
                &|x| reg.plus_potential(x),
            ] {
                assert_abs_diff_eq!(f(b - 1e-12), f(b + 1e-12), epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn slopes_at_zero_are_one_half() {
        let h = 1e-7;
        for method in Method::REGULARIZED {
            let reg = Regularization::new(method, 1e-2);
            let fd = (reg.plus(h) - reg.plus(-h)) / (2.0 * h);
            assert_abs_diff_eq!(fd, 0.5, epsilon = 1e-7);
            assert_abs_diff_eq!(reg.plus_slope(0.0), 0.5, epsilon = 1e-15);
        }
    }

    #[test]
    fn potentials_differentiate_to_the_parts() {
        for method in Method::REGULARIZED {
            let reg = Regularization::new(method, 0.7);
            for i in 0..41 {
                let x = -2.0 + 0.1 * i as f64 + 0.013;
                let h = 1e-5;
                let fd_p = (reg.plus_potential(x + h) - reg.plus_potential(x - h)) / (2.0 * h);
                let fd_m = (reg.minus_potential(x + h) - reg.minus_potential(x - h)) / (2.0 * h);
                assert_abs_diff_eq!(fd_p, reg.plus(x), epsilon = 1e-8);
                assert_abs_diff_eq!(fd_m, reg.minus(x), epsilon = 1e-8);
                let fd_s = (reg.plus(x + h) - reg.plus(x - h)) / (2.0 * h);
                assert_abs_diff_eq!(fd_s, reg.plus_slope(x), epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn split_examples() {
        let e = 5e-3;
        for method in Method::REGULARIZED {
            let reg = Regularization::new(method, 1e-4);
            let eps = SymTensor2::diag(e, 0.0);
            let (p, m) = strain_split(&eps, &reg);
            assert!((p + m).max_abs_diff(&eps) < 1e-15);
            assert!(p.xx > e - 1e-4 && p.xx <= e + 1e-4);
            assert!(m.xx.abs() < 1e-4);
        }
        let none = Regularization::NONE;
        let (p, m) = strain_split(&SymTensor2::diag(e, 0.0), &none);
        assert_eq!(p, SymTensor2::diag(e, 0.0));
        assert_eq!(m, SymTensor2::ZERO);
        let comp = SymTensor2::diag(-e, -e);
        let (p, m) = strain_split(&comp, &none);
        assert_eq!(p, SymTensor2::ZERO);
        assert_eq!(m, comp);
    }

    #[test]
    fn energy_density_examples() {
        let mat = material(Method::None, 0.0);
        let g = 2e-3;
        let shear = SymTensor2::new(0.0, 0.0, g / 2.0);
        assert_abs_diff_eq!(psi_plus(&shear, &mat), mat.mu * g * g / 4.0, epsilon = 1e-15);
        assert_abs_diff_eq!(psi_minus(&shear, &mat), mat.mu * g * g / 4.0, epsilon = 1e-15);
        let e = 1e-3;
        let uni = SymTensor2::diag(e, 0.0);
        assert_abs_diff_eq!(psi_plus(&uni, &mat), 0.5 * mat.lambda * e * e + mat.mu * e * e, epsilon = 1e-15);
        assert_eq!(psi_minus(&uni, &mat), 0.0);
        assert_eq!(psi_plus(&SymTensor2::ZERO, &mat), 0.0);
        assert_eq!(psi_minus(&SymTensor2::ZERO, &mat), 0.0);
        // unregularized potential coincides with the energy densities
        let eps = SymTensor2::new(2e-3, -1e-3, 7e-4);
        let d = 0.6;
        let w = mat.degradation(d) * psi_plus(&eps, &mat) + psi_minus(&eps, &mat);
        assert_abs_diff_eq!(elastic_energy_density(&eps, d, &mat), w, epsilon = 1e-15);
    }

    #[test]
    fn stress_examples() {
        let mat = material(Method::None, 0.0);
        let e = 1e-3;
        let s = stress(&SymTensor2::diag(e, e), 1.0, &mat);
        let expect = (2.0 * mat.lambda + 2.0 * mat.mu) * e;
        assert_abs_diff_eq!(s.xx, expect, epsilon = 1e-14);
        assert_abs_diff_eq!(s.yy, expect, epsilon = 1e-14);
        assert_eq!(s.xy, 0.0);

        let pd = SymTensor2::new(2e-3, 1e-3, 5e-4);
        assert_eq!(stress(&pd, 0.0, &mat), SymTensor2::ZERO);

        let comp = SymTensor2::diag(-e, -e);
        let s = stress(&comp, 0.0, &mat);
        let lin = SymTensor2::IDENTITY.scale(mat.lambda * comp.trace()) + comp.scale(2.0 * mat.mu);
        assert!(s.max_abs_diff(&lin) < 1e-14);
    }

    #[test]
    fn stress_reduces_to_linear_elasticity_for_tensile_strain() {
        let mat = material(Method::None, 0.0);
        let eps = SymTensor2::new(3e-3, 1e-3, 1.2e-3);
        assert!(eig_sym2(&eps).values[1] > 0.0);
        let lin = SymTensor2::IDENTITY.scale(mat.lambda * eps.trace()) + eps.scale(2.0 * mat.mu);
        assert!(stress(&eps, 1.0, &mat).max_abs_diff(&lin) < 1e-12);
    }

    #[test]
    fn energy_gradient_converges_quadratically() {
        // direction derivative sigma : deps against central differences of the potential
        for method in Method::REGULARIZED {
            let mat = MaterialModel { k_l: 1e-3, ..material(method, 2e-3) };
            let eps = SymTensor2::new(1.3e-3, -0.4e-3, 0.9e-3);
            let dir = SymTensor2::new(0.37, -0.81, 0.44);
            let d = 0.4;
            let exact = stress(&eps, d, &mat).ddot(&dir);
            let err = |h: f64| {
                let fp = elastic_energy_density(&(eps + dir.scale(h)), d, &mat);
                let fm = elastic_energy_density(&(eps - dir.scale(h)), d, &mat);
                ((fp - fm) / (2.0 * h) - exact).abs()
            };
            let (e4, e5, e6) = (err(1e-4), err(1e-5), err(1e-6));
            assert!(e5 < e4 / 50.0 && e6 < e5 / 50.0, "{method}: {e4:e} -> {e5:e} -> {e6:e}");
            assert!(e6 < 1e-6 * exact.abs(), "{method}: {e6:e} vs {exact:e}");
        }
    }

    #[test]
    fn history_examples() {
        assert_eq!(history_update(&[0.0, 0.0], &[2.0, 3.0]).unwrap(), vec![2.0, 3.0]);
        assert_eq!(history_update(&[1.5, 0.5], &[0.0, 0.0]).unwrap(), vec![1.5, 0.5]);
        assert_eq!(history_update(&[1.0, 5.0], &[3.0, 2.0]).unwrap(), vec![3.0, 5.0]);
        assert!(history_update(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn material_validation() {
        assert!(material(Method::SonicPoint, 1e-3).validate().is_ok());
        assert_eq!(
            material(Method::SonicPoint, 0.0).validate(),
            Err(MaterialError::MissingAlpha(Method::SonicPoint))
        );
        assert!(material(Method::None, -1.0).validate().is_err());
        assert!(MaterialModel { mu: 0.0, ..material(Method::None, 0.0) }.validate().is_err());
    }

    proptest! {
        #[test]
        fn eig_reconstructs(xx in -10.0..10.0f64, yy in -10.0..10.0f64, xy in -10.0..10.0f64) {
            let t = SymTensor2::new(xx, yy, xy);
            let e = eig_sym2(&t);
            prop_assert!(e.values[0] >= e.values[1]);
            prop_assert!(reconstruct(&e).max_abs_diff(&t) < 1e-12);
            let qtq = e.vectors.transpose() * e.vectors;
            prop_assert!((qtq - Matrix2::identity()).abs().max() < 1e-12);
        }

        #[test]
        fn parts_sum_to_argument(x in -10.0..10.0f64, k in 0usize..3, ai in 0usize..3) {
            let reg = Regularization::new(Method::REGULARIZED[k], [1e-4, 1e-3, 1e-2][ai]);
            prop_assert!((reg.plus(x) + reg.minus(x) - x).abs() <= 1e-12);
        }

        #[test]
        fn alpha_convergence_bound(x in -1.0..1.0f64, k in 0usize..3, alpha in 1e-4..1e-1f64) {
            prop_assume!(x != 0.0);
            let method = Method::REGULARIZED[k];
            let reg = Regularization::new(method, alpha);
            let gap = (reg.plus(x) - x.max(0.0)).abs();
            prop_assert!(gap <= alpha);
            match method {
                Method::SonicPoint => prop_assert!(gap <= alpha / 2.0 + 1e-15),
                Method::Smoothed2Point if x.abs() >= 1.5 * alpha => prop_assert_eq!(gap, 0.0),
                _ => {}
            }
        }
    }
}
