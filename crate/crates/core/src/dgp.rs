//! Simulation designs: Gaussian controls with Toeplitz covariance
//! Σ_kj = 0.5^|j-k|, R²-calibrated coefficient scales, and the 26 coefficient /
//! error / treatment patterns addressed by labels such as "1", "22", "7a".

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Bernoulli, Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::regression::{Dataset, Truth};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BaseDesign {
    D1,
    D2,
    D22,
    D3,
    D4,
    D44,
    D5,
    D6,
    D7,
    D72,
    D722,
    D8,
    D1001,
}

const BASES: [BaseDesign; 13] = [
    BaseDesign::D1,
    BaseDesign::D2,
    BaseDesign::D22,
    BaseDesign::D3,
    BaseDesign::D4,
    BaseDesign::D44,
    BaseDesign::D5,
    BaseDesign::D6,
    BaseDesign::D7,
    BaseDesign::D72,
    BaseDesign::D722,
    BaseDesign::D8,
    BaseDesign::D1001,
];

impl BaseDesign {
    fn label(self) -> &'static str {
        match self {
            BaseDesign::D1 => "1",
            BaseDesign::D2 => "2",
            BaseDesign::D22 => "22",
            BaseDesign::D3 => "3",
            BaseDesign::D4 => "4",
            BaseDesign::D44 => "44",
            BaseDesign::D5 => "5",
            BaseDesign::D6 => "6",
            BaseDesign::D7 => "7",
            BaseDesign::D72 => "72",
            BaseDesign::D722 => "722",
            BaseDesign::D8 => "8",
            BaseDesign::D1001 => "1001",
        }
    }

    /// Fixed coefficient shape shared by the base and "a" variants.
    fn shape(self) -> Shape {
        use BaseDesign::*;
        match self {
            D1 | D3 | D5 | D7 => Shape::Harmonic,
            D2 | D4 | D72 => Shape::Squared,
            D22 | D44 | D722 => Shape::InverseSquare,
            D6 => Shape::Gaussian,
            D8 => Shape::Mixture,
            D1001 => Shape::EvenOnes,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Shape {
    /// (1, 1/2, .., 1/5, 0×5, 1, 1/2, .., 1/5, 0, ...)
    Harmonic,
    /// (1, 1/4, .., 1/25, 0×5, 1, 1/4, .., 1/25, 0, ...)
    Squared,
    /// 1/j² for every j
    InverseSquare,
    Gaussian,
    Mixture,
    EvenOnes,
}

/// A simulation design label: one of 13 base designs, optionally the "a"
/// variant with distinct treatment-equation coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DesignId {
    pub base: BaseDesign,
    pub alt: bool,
}

impl DesignId {
    pub fn new(base: BaseDesign, alt: bool) -> Self {
        DesignId { base, alt }
    }

    /// Every valid label, first-13 designs then their "a" variants.
    pub fn catalog() -> Vec<String> {
        let mut v: Vec<String> = BASES.iter().map(|b| b.label().to_string()).collect();
        v.extend(BASES.iter().map(|b| format!("{}a", b.label())));
        v
    }

    pub fn all() -> Vec<DesignId> {
        let mut v: Vec<DesignId> = BASES.iter().map(|&b| DesignId::new(b, false)).collect();
        v.extend(BASES.iter().map(|&b| DesignId::new(b, true)));
        v
    }

    pub fn label(&self) -> String {
        format!("{}{}", self.base.label(), if self.alt { "a" } else { "" })
    }

    pub fn heteroscedastic(&self) -> bool {
        matches!(self.base, BaseDesign::D3 | BaseDesign::D4 | BaseDesign::D44)
    }

    pub fn binary_treatment(&self) -> bool {
        self.base == BaseDesign::D5
    }

    /// Coefficients are redrawn at every replication.
    pub fn random_coefficients(&self) -> bool {
        matches!(
            self.base,
            BaseDesign::D6 | BaseDesign::D7 | BaseDesign::D72 | BaseDesign::D722 | BaseDesign::D8
        )
    }
}

impl fmt::Display for DesignId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for DesignId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (stem, alt) = match s.strip_suffix('a') {
            Some(stem) => (stem, true),
            None => (s, false),
        };
        BASES
            .iter()
            .find(|b| b.label() == stem)
            .map(|&base| DesignId { base, alt })
            .ok_or_else(|| Error::UnknownDesign(s.to_string()))
    }
}

/// One simulation cell.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignSpec {
    pub design: DesignId,
    pub n: usize,
    pub p: usize,
    pub r2_y: f64,
    pub r2_d: f64,
    pub alpha0: f64,
    pub seed: u64,
    /// Use the c_y formula for the "a" designs exactly as printed in the
    /// source tables, with R²_d in place of R²_y.
    pub literal_cy: bool,
}

impl DesignSpec {
    pub fn new(design: DesignId) -> Self {
        DesignSpec {
            design,
            n: 100,
            p: 200,
            r2_y: 0.0,
            r2_d: 0.0,
            alpha0: 0.5,
            seed: 0,
            literal_cy: false,
        }
    }

    pub fn with_r2(mut self, r2_y: f64, r2_d: f64) -> Self {
        self.r2_y = r2_y;
        self.r2_d = r2_d;
        self
    }

    pub fn with_size(mut self, n: usize, p: usize) -> Self {
        self.n = n;
        self.p = p;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, r2) in [("r2_y", self.r2_y), ("r2_d", self.r2_d)] {
            if !(0.0..1.0).contains(&r2) {
                return Err(Error::InvalidArgument(format!("{name} must lie in [0,1), got {r2}")));
            }
        }
        if self.n < 2 {
            return Err(Error::InvalidArgument(format!("n must be at least 2, got {}", self.n)));
        }
        if self.p < 1 {
            return Err(Error::InvalidArgument("p must be at least 1".into()));
        }
        if !self.alpha0.is_finite() {
            return Err(Error::InvalidArgument("alpha0 must be finite".into()));
        }
        Ok(())
    }
}

/// Σ_kj = 0.5^|j-k| together with its lower Cholesky factor.
#[derive(Debug, Clone)]
pub struct ToeplitzCovariance {
    pub sigma: DMatrix<f64>,
    pub factor: DMatrix<f64>,
}

pub fn toeplitz_sigma(p: usize) -> Result<ToeplitzCovariance> {
    if p < 1 {
        return Err(Error::InvalidArgument("p must be at least 1".into()));
    }
    let sigma = DMatrix::from_fn(p, p, |k, j| 0.5_f64.powi((j as i32 - k as i32).abs()));
    let factor = sigma
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Domain("Toeplitz covariance not positive definite".into()))?
        .l();
    Ok(ToeplitzCovariance { sigma, factor })
}

/// β'Σβ.
pub fn quad_form(beta: &DVector<f64>, sigma: &DMatrix<f64>) -> Result<f64> {
    if sigma.nrows() != beta.len() || sigma.ncols() != beta.len() {
        return Err(Error::Dimension(format!(
            "beta has {} entries, Sigma is {}x{}",
            beta.len(),
            sigma.nrows(),
            sigma.ncols()
        )));
    }
    Ok(beta.dot(&(sigma * beta)))
}

fn check_r2(r2: f64, name: &str) -> Result<()> {
    if (0.0..1.0).contains(&r2) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} must lie in [0,1), got {r2}")))
    }
}

/// √(R²/((1-R²)B)), zero when R² is zero.
fn scale_for(r2: f64, b: f64) -> Result<f64> {
    if r2 == 0.0 {
        return Ok(0.0);
    }
    if !(b > 0.0) {
        return Err(Error::Domain(format!("beta'Sigma beta must be positive, got {b}")));
    }
    Ok((r2 / ((1.0 - r2) * b)).sqrt())
}

/// Scales for the designs with β₁ = β₀. c_d targets the R² of d on x; c_y
/// solves for the reduced-form R² of y on x given α₀ and c_d.
pub fn calibrate_first13(
    r2_y: f64,
    r2_d: f64,
    alpha0: f64,
    beta0: &DVector<f64>,
    sigma: &DMatrix<f64>,
) -> Result<(f64, f64)> {
    check_r2(r2_y, "r2_y")?;
    check_r2(r2_d, "r2_d")?;
    let b = quad_form(beta0, sigma)?;
    let c_d = scale_for(r2_d, b)?;
    if r2_y == 0.0 && c_d == 0.0 {
        return Ok((0.0, 0.0));
    }
    if !(b > 0.0) {
        return Err(Error::Domain(format!("beta'Sigma beta must be positive, got {b}")));
    }
    let one_minus = 1.0 - r2_y;
    let c_y = (-one_minus * alpha0 * c_d * b
        + (one_minus * r2_y * b * (alpha0 * alpha0 + 1.0)).sqrt())
        / (one_minus * b);
    Ok((c_y, c_d))
}

/// Scales for the "a" designs: c_d = √(R²_d/((1-R²_d)β₁'Σβ₁)) and
/// c_y = √(R²_y/((1-R²_y)β₀'Σβ₀)). With `literal` set the c_y formula uses
/// R²_d in both places.
pub fn calibrate_last13(
    r2_y: f64,
    r2_d: f64,
    beta0: &DVector<f64>,
    beta1: &DVector<f64>,
    sigma: &DMatrix<f64>,
    literal: bool,
) -> Result<(f64, f64)> {
    check_r2(r2_y, "r2_y")?;
    check_r2(r2_d, "r2_d")?;
    let c_d = scale_for(r2_d, quad_form(beta1, sigma)?)?;
    let r2_for_y = if literal { r2_d } else { r2_y };
    let c_y = scale_for(r2_for_y, quad_form(beta0, sigma)?)?;
    Ok((c_y, c_d))
}

/// Population R² c²B/(c²B + 1) of a unit-noise equation with scale c.
pub fn population_r2(c: f64, beta: &DVector<f64>, sigma: &DMatrix<f64>) -> Result<f64> {
    let s = c * c * quad_form(beta, sigma)?;
    Ok(s / (s + 1.0))
}

fn fixed_pattern(shape: Shape, p: usize) -> DVector<f64> {
    DVector::from_fn(p, |i, _| {
        let j = i + 1;
        match shape {
            Shape::Harmonic | Shape::Squared => {
                let k = if (1..=5).contains(&j) {
                    j
                } else if (11..=15).contains(&j) {
                    j - 10
                } else {
                    return 0.0;
                };
                if shape == Shape::Harmonic {
                    1.0 / k as f64
                } else {
                    1.0 / (k * k) as f64
                }
            }
            Shape::InverseSquare => 1.0 / (j * j) as f64,
            Shape::EvenOnes => {
                if j % 2 == 0 && j <= 40 {
                    1.0
                } else {
                    0.0
                }
            }
            Shape::Gaussian | Shape::Mixture => 0.0,
        }
    })
}

/// Treatment-equation pattern for the "a" variants with fixed shapes.
fn alt_pattern(shape: Shape, p: usize) -> DVector<f64> {
    DVector::from_fn(p, |i, _| {
        let j = i + 1;
        match shape {
            Shape::Harmonic => {
                if j <= 10 {
                    1.0 / j as f64
                } else {
                    0.0
                }
            }
            Shape::Squared => {
                if j <= 10 {
                    1.0 / (j * j) as f64
                } else {
                    0.0
                }
            }
            Shape::InverseSquare => 1.0 / (j * j) as f64,
            Shape::EvenOnes => {
                if j % 2 == 1 && j <= 39 {
                    1.0
                } else {
                    0.0
                }
            }
            Shape::Gaussian | Shape::Mixture => 0.0,
        }
    })
}

/// Cross-correlation of the paired Gaussian draws in the random "a" designs.
const PAIR_CORR: f64 = 0.8;

fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

fn correlated_pair<R: Rng + ?Sized>(rng: &mut R) -> (f64, f64) {
    let z0 = std_normal(rng);
    let w = std_normal(rng);
    (z0, PAIR_CORR * z0 + (1.0 - PAIR_CORR * PAIR_CORR).sqrt() * w)
}

/// Outcome (β₀) and treatment (β₁) coefficient vectors for a design. Random
/// designs draw fresh coefficients from `rng`.
pub fn make_beta<R: Rng + ?Sized>(
    design: DesignId,
    p: usize,
    rng: &mut R,
) -> Result<(DVector<f64>, DVector<f64>)> {
    if p < 1 {
        return Err(Error::InvalidArgument("p must be at least 1".into()));
    }
    use BaseDesign::*;
    let shape = design.base.shape();
    let pair = match design.base {
        D1 | D2 | D22 | D3 | D4 | D44 | D5 | D1001 => {
            let b0 = fixed_pattern(shape, p);
            let b1 = if design.alt { alt_pattern(shape, p) } else { b0.clone() };
            (b0, b1)
        }
        D6 => {
            if design.alt {
                let mut b0 = DVector::zeros(p);
                let mut b1 = DVector::zeros(p);
                for j in 0..p {
                    let (z0, z1) = correlated_pair(rng);
                    b0[j] = z0;
                    b1[j] = z1;
                }
                (b0, b1)
            } else {
                let b0 = DVector::from_fn(p, |_, _| std_normal(rng));
                (b0.clone(), b0)
            }
        }
        D7 | D72 | D722 => {
            let t0 = fixed_pattern(shape, p);
            if design.alt {
                let t1 = alt_pattern(shape, p);
                let mut b0 = DVector::zeros(p);
                let mut b1 = DVector::zeros(p);
                for j in 0..p {
                    let (z0, z1) = correlated_pair(rng);
                    b0[j] = t0[j] * z0;
                    b1[j] = t1[j] * z1;
                }
                (b0, b1)
            } else {
                let b0 = DVector::from_fn(p, |j, _| t0[j] * std_normal(rng));
                (b0.clone(), b0)
            }
        }
        D8 => {
            let coin = Bernoulli::new(0.05).expect("valid probability");
            let mut b0 = DVector::zeros(p);
            let mut b1 = DVector::zeros(p);
            for j in 0..p {
                let u = coin.sample(rng);
                let (z11, z12) = (std_normal(rng), std_normal(rng));
                b0[j] = if u { 5.0 * z11 } else { 0.05 * z12 };
                if design.alt {
                    let (z21, z22) = (std_normal(rng), std_normal(rng));
                    b1[j] = if u { 5.0 * z21 } else { 0.05 * z22 };
                } else {
                    b1[j] = b0[j];
                }
            }
            (b0, b1)
        }
    };
    Ok(pair)
}

/// One simulated sample with the realized design constants.
#[derive(Debug, Clone)]
pub struct GeneratedSample {
    pub data: Dataset,
    pub c_y: f64,
    pub c_d: f64,
    pub beta0: DVector<f64>,
    pub beta1: DVector<f64>,
    /// σ_y(d_i, x_i); all ones in homoscedastic designs.
    pub scale_y: DVector<f64>,
    /// σ_d(x_i); all ones in homoscedastic designs.
    pub scale_d: DVector<f64>,
}

/// Reusable sampler for a cell: holds the covariance factor and, for fixed
/// designs, the coefficient vectors and calibrated scales.
#[derive(Debug, Clone)]
pub struct DesignSampler {
    spec: DesignSpec,
    cov: ToeplitzCovariance,
}

impl DesignSampler {
    pub fn new(spec: &DesignSpec) -> Result<Self> {
        spec.validate()?;
        Ok(DesignSampler { spec: spec.clone(), cov: toeplitz_sigma(spec.p)? })
    }

    pub fn spec(&self) -> &DesignSpec {
        &self.spec
    }

    pub fn covariance(&self) -> &ToeplitzCovariance {
        &self.cov
    }

    pub fn calibrate(&self, beta0: &DVector<f64>, beta1: &DVector<f64>) -> Result<(f64, f64)> {
        let s = &self.spec;
        if s.design.alt {
            calibrate_last13(s.r2_y, s.r2_d, beta0, beta1, &self.cov.sigma, s.literal_cy)
        } else {
            calibrate_first13(s.r2_y, s.r2_d, s.alpha0, beta0, &self.cov.sigma)
        }
    }

    /// Draws coefficients (random designs), then X, v and ζ in that order.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<GeneratedSample> {
        let s = &self.spec;
        let (n, p) = (s.n, s.p);
        let (beta0, beta1) = make_beta(s.design, p, rng)?;
        let (c_y, c_d) = self.calibrate(&beta0, &beta1)?;

        let z = DMatrix::from_fn(n, p, |_, _| std_normal(rng));
        let x = z * self.cov.factor.transpose();
        let v = DVector::from_fn(n, |_, _| std_normal(rng));
        let zeta = DVector::from_fn(n, |_, _| std_normal(rng));

        let index0 = &x * &beta0;
        let index1 = &x * &beta1;
        let signal_y = &index0 * c_y;
        let signal_d = &index1 * c_d;

        let scale_d = if s.design.heteroscedastic() {
            normalized_scale(&index1.map(|u| 1.0 + u))
        } else {
            DVector::from_element(n, 1.0)
        };
        let d_star = &signal_d + scale_d.component_mul(&v);
        let d = if s.design.binary_treatment() {
            d_star.map(|u| if u > 0.0 { 1.0 } else { 0.0 })
        } else {
            d_star
        };
        let scale_y = if s.design.heteroscedastic() {
            normalized_scale(&DVector::from_fn(n, |i, _| 1.0 + s.alpha0 * d[i] + index0[i]))
        } else {
            DVector::from_element(n, 1.0)
        };
        let y = &d * s.alpha0 + &signal_y + scale_y.component_mul(&zeta);

        let support = |c: f64, b: &DVector<f64>| -> Vec<usize> {
            if c == 0.0 {
                Vec::new()
            } else {
                (0..p).filter(|&j| b[j] != 0.0).collect()
            }
        };
        let truth = Truth {
            alpha0: s.alpha0,
            support_y: support(c_y, &beta0),
            support_d: support(c_d, &beta1),
            signal_y,
            signal_d,
        };
        let data = Dataset::new(y, d, x)?.with_truth(truth)?;
        Ok(GeneratedSample { data, c_y, c_d, beta0, beta1, scale_y, scale_d })
    }
}

/// √(u_i² / mean(u²)): scales whose squares average to one in-sample.
fn normalized_scale(u: &DVector<f64>) -> DVector<f64> {
    let m = u.norm_squared() / u.len() as f64;
    if m == 0.0 {
        return DVector::from_element(u.len(), 1.0);
    }
    u.map(|v| (v * v / m).sqrt())
}

/// Generates one sample for `spec` from `rng`.
pub fn generate<R: Rng + ?Sized>(spec: &DesignSpec, rng: &mut R) -> Result<GeneratedSample> {
    DesignSampler::new(spec)?.sample(rng)
}
