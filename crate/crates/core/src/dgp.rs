//! Data-generating processes: the three benchmark settings, their feature
//! laws, noise calibration, and closed-form ground-truth effects.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::quad;
use crate::seed::{self, Role};

/// Dedicated seed for the pilot sample behind noise calibration.
pub const CALIBRATION_SEED: u64 = 0x5EED_CA11;
/// Pilot sample size for noise calibration.
pub const PILOT_N: usize = 1_000_000;
/// Target ratio of signal to noise standard deviation.
pub const DEFAULT_SNR: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    SimpleNormalCorrelated,
    Friedman1,
    Feynman12916,
}

impl Setting {
    pub const ALL: [Setting; 3] = [
        Setting::SimpleNormalCorrelated,
        Setting::Friedman1,
        Setting::Feynman12916,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Setting::SimpleNormalCorrelated => "simple_normal_correlated",
            Setting::Friedman1 => "friedman1",
            Setting::Feynman12916 => "feynman12916",
        }
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match key.as_str() {
            "simplenormalcorrelated" | "snc" => Ok(Setting::SimpleNormalCorrelated),
            "friedman1" => Ok(Setting::Friedman1),
            "feynman12916" | "feynmani2916" | "feynman" => Ok(Setting::Feynman12916),
            _ => Err(Error::Config(format!("unknown setting `{s}`"))),
        }
    }
}

/// Marginal law of a single feature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Marginal {
    StandardNormal,
    Uniform { lo: f64, hi: f64 },
    LogUniform { lo: f64, hi: f64 },
}

impl Marginal {
    fn standard_normal() -> &'static Normal {
        static N: OnceLock<Normal> = OnceLock::new();
        N.get_or_init(|| Normal::new(0.0, 1.0).expect("valid normal"))
    }

    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Domain(format!("probability {p} outside (0, 1)")));
        }
        Ok(match *self {
            Marginal::StandardNormal => Self::standard_normal().inverse_cdf(p),
            Marginal::Uniform { lo, hi } => lo + (hi - lo) * p,
            Marginal::LogUniform { lo, hi } => (lo.ln() + p * (hi.ln() - lo.ln())).exp(),
        })
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            Marginal::StandardNormal => Self::standard_normal().cdf(x),
            Marginal::Uniform { lo, hi } => ((x - lo) / (hi - lo)).clamp(0.0, 1.0),
            Marginal::LogUniform { lo, hi } => {
                if x <= lo {
                    0.0
                } else {
                    ((x.ln() - lo.ln()) / (hi.ln() - lo.ln())).clamp(0.0, 1.0)
                }
            }
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        match *self {
            Marginal::StandardNormal => x.is_finite(),
            Marginal::Uniform { lo, hi } | Marginal::LogUniform { lo, hi } => lo <= x && x <= hi,
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match *self {
            Marginal::StandardNormal => rng.sample(StandardNormal),
            Marginal::Uniform { lo, hi } => lo + (hi - lo) * rng.gen::<f64>(),
            Marginal::LogUniform { lo, hi } => {
                (lo.ln() + (hi.ln() - lo.ln()) * rng.gen::<f64>()).exp()
            }
        }
    }

    /// Map a standard normal draw through this marginal (Gaussian copula).
    fn transform_normal(&self, z: f64) -> f64 {
        match self {
            Marginal::StandardNormal => z,
            _ => {
                let u = Self::standard_normal().cdf(z).clamp(f64::EPSILON, 1.0 - f64::EPSILON);
                self.quantile(u).expect("u in (0, 1)")
            }
        }
    }
}

/// Full description of a data-generating process.
#[derive(Debug, Clone)]
pub struct DgpSpec {
    setting: Setting,
    marginals: Vec<Marginal>,
    correlation: DMatrix<f64>,
    cholesky: Option<DMatrix<f64>>,
    dummy_features: Vec<usize>,
}

impl DgpSpec {
    pub fn new(setting: Setting) -> Self {
        let (marginals, dummies) = match setting {
            Setting::SimpleNormalCorrelated => (vec![Marginal::StandardNormal; 4], vec![2, 3]),
            Setting::Friedman1 => (vec![Marginal::Uniform { lo: 0.0, hi: 1.0 }; 7], vec![5, 6]),
            Setting::Feynman12916 => {
                let theta = Marginal::Uniform { lo: 0.0, hi: 2.0 * PI };
                let amp = Marginal::LogUniform { lo: 0.1, hi: 10.0 };
                let dummy = Marginal::Uniform { lo: 0.0, hi: 1.0 };
                (vec![amp, amp, theta, theta, dummy, dummy], vec![4, 5])
            }
        };
        let p = marginals.len();
        let mut correlation = DMatrix::identity(p, p);
        if setting == Setting::SimpleNormalCorrelated {
            correlation[(0, 1)] = 0.9;
            correlation[(1, 0)] = 0.9;
        }
        Self::from_parts(setting, marginals, correlation, dummies)
            .expect("built-in settings are valid")
    }

    /// Assemble a spec from explicit parts. The ground-truth function is
    /// still the one belonging to `setting`.
    pub fn from_parts(
        setting: Setting,
        marginals: Vec<Marginal>,
        correlation: DMatrix<f64>,
        dummy_features: Vec<usize>,
    ) -> Result<Self> {
        let p = marginals.len();
        if correlation.nrows() != p || correlation.ncols() != p {
            return Err(Error::Config(format!(
                "correlation matrix is {}x{}, expected {p}x{p}",
                correlation.nrows(),
                correlation.ncols()
            )));
        }
        for i in 0..p {
            if (correlation[(i, i)] - 1.0).abs() > 1e-12 {
                return Err(Error::Config("correlation diagonal must be 1".into()));
            }
            for j in 0..i {
                if (correlation[(i, j)] - correlation[(j, i)]).abs() > 1e-12 {
                    return Err(Error::Config("correlation matrix is not symmetric".into()));
                }
            }
        }
        if let Some(&d) = dummy_features.iter().find(|&&d| d >= p) {
            return Err(Error::Config(format!("dummy feature {d} out of range")));
        }
        let is_identity = correlation == DMatrix::identity(p, p);
        let cholesky = if is_identity {
            None
        } else {
            let chol = correlation.clone().cholesky().ok_or_else(|| {
                Error::Config("correlation matrix is not positive definite".into())
            })?;
            Some(chol.l())
        };
        Ok(DgpSpec {
            setting,
            marginals,
            correlation,
            cholesky,
            dummy_features,
        })
    }

    pub fn setting(&self) -> Setting {
        self.setting
    }

    pub fn p(&self) -> usize {
        self.marginals.len()
    }

    pub fn marginals(&self) -> &[Marginal] {
        &self.marginals
    }

    pub fn marginal(&self, feature: usize) -> Result<Marginal> {
        self.marginals
            .get(feature)
            .copied()
            .ok_or_else(|| Error::Domain(format!("feature index {feature} out of range")))
    }

    pub fn correlation(&self) -> &DMatrix<f64> {
        &self.correlation
    }

    pub fn dummy_features(&self) -> &[usize] {
        &self.dummy_features
    }

    pub fn is_dummy(&self, feature: usize) -> bool {
        self.dummy_features.contains(&feature)
    }

    /// Whether closed-form PD/ALE curves exist for this setting.
    pub fn has_analytic_effects(&self) -> bool {
        self.setting != Setting::Feynman12916
    }

    /// Draw `n` i.i.d. feature rows.
    pub fn sample_features(&self, n: usize, seed: u64) -> Array2<f64> {
        let mut rng = seed::rng(seed);
        self.sample_features_with(n, &mut rng)
    }

    pub(crate) fn sample_features_with<R: Rng>(&self, n: usize, rng: &mut R) -> Array2<f64> {
        let p = self.p();
        let mut x = Array2::zeros((n, p));
        match &self.cholesky {
            None => {
                for mut row in x.rows_mut() {
                    for (v, m) in row.iter_mut().zip(&self.marginals) {
                        *v = m.sample(rng);
                    }
                }
            }
            Some(l) => {
                let mut z = vec![0.0; p];
                for mut row in x.rows_mut() {
                    for zi in z.iter_mut() {
                        *zi = rng.sample(StandardNormal);
                    }
                    for i in 0..p {
                        let mut acc = 0.0;
                        for (j, zj) in z.iter().enumerate().take(i + 1) {
                            acc += l[(i, j)] * zj;
                        }
                        row[i] = self.marginals[i].transform_normal(acc);
                    }
                }
            }
        }
        x
    }

    /// The noiseless target function. Dummy features are ignored.
    pub fn ground_truth(&self, x: ArrayView1<'_, f64>) -> f64 {
        match self.setting {
            Setting::SimpleNormalCorrelated => x[0] + 0.5 * x[1] * x[1] + x[0] * x[1],
            Setting::Friedman1 => {
                10.0 * (PI * x[0] * x[1]).sin()
                    + 20.0 * (x[2] - 0.5).powi(2)
                    + 10.0 * x[3]
                    + 5.0 * x[4]
            }
            Setting::Feynman12916 => {
                let (a, b) = (x[0], x[1]);
                (a * a + b * b + 2.0 * a * b * (x[2] - x[3]).cos()).max(0.0).sqrt()
            }
        }
    }

    pub fn ground_truth_rows(&self, x: &Array2<f64>) -> Array1<f64> {
        x.rows().into_iter().map(|r| self.ground_truth(r)).collect()
    }

    pub fn theoretical_quantile(&self, feature: usize, p: f64) -> Result<f64> {
        self.marginal(feature)?.quantile(p)
    }

    /// Noise scale so that sd(f(X)) / sigma_eps equals `snr`, with sd(f(X))
    /// measured on a noiseless pilot sample.
    pub fn calibrate_noise(&self, snr: f64, pilot_n: usize, seed: u64) -> Result<NoiseCalibration> {
        if snr.is_nan() || snr <= 0.0 {
            return Err(Error::Calibration(format!("snr must be positive, got {snr}")));
        }
        if pilot_n < 1000 {
            return Err(Error::Calibration(format!(
                "pilot sample of {pilot_n} rows is below the minimum of 1000"
            )));
        }
        let x = self.sample_features(pilot_n, seed::derive_seed(seed, &[Role::Calibration.into()]));
        let fx = self.ground_truth_rows(&x);
        let sd = fx.std(1.0);
        if sd.is_nan() || sd <= 0.0 {
            return Err(Error::Calibration("ground truth is constant on the pilot sample".into()));
        }
        Ok(NoiseCalibration {
            sigma_eps: sd / snr,
            snr,
            pilot_n,
        })
    }

    /// Calibration with the default pilot size and dedicated seed.
    pub fn default_calibration(&self) -> NoiseCalibration {
        self.calibrate_noise(DEFAULT_SNR, PILOT_N, CALIBRATION_SEED)
            .expect("built-in settings have non-constant ground truth")
    }

    /// Features from `sample_features(n, seed)` with `target = f(x) + eps`.
    pub fn sample_dataset(&self, n: usize, cal: &NoiseCalibration, seed: u64) -> Dataset {
        let x = self.sample_features(n, seed);
        let mut y = self.ground_truth_rows(&x);
        if cal.sigma_eps > 0.0 {
            let mut rng = seed::rng(seed::derive_seed(seed, &[Role::Noise.into()]));
            for v in y.iter_mut() {
                let e: f64 = rng.sample(StandardNormal);
                *v += cal.sigma_eps * e;
            }
        }
        let mut data = Dataset::new(x, y).expect("shapes agree");
        data.origin = Some((self.setting, seed));
        data
    }

    fn check_analytic(&self, feature: usize) -> Result<()> {
        if !self.has_analytic_effects() {
            return Err(Error::UnsupportedAnalytic(self.setting.to_string()));
        }
        self.marginal(feature).map(|_| ())
    }

    /// Closed-form partial dependence. Uncentered values include the
    /// marginal means of all other terms.
    pub fn analytic_pd(&self, feature: usize, x: f64, centered: bool) -> Result<f64> {
        self.check_analytic(feature)?;
        let (value, mean) = match self.setting {
            Setting::SimpleNormalCorrelated => match feature {
                // E[x1 + X2^2/2 + x1 X2] with E[X2] = 0, E[X2^2] = 1
                0 => (x + 0.5, 0.5),
                1 => (0.5 * x * x, 0.5),
                _ => (1.4, 1.4),
            },
            Setting::Friedman1 => {
                let c = friedman_sine_mean();
                // marginal means: 10 E[sin(pi X1 X2)] = 10c, 20 E[(X3-1/2)^2] = 5/3,
                // 10 E[X4] = 5, 5 E[X5] = 2.5
                let total = 10.0 * c + 5.0 / 3.0 + 5.0 + 2.5;
                match feature {
                    0 | 1 => (total - 10.0 * c + 10.0 * sine_section(x), total),
                    2 => (total - 5.0 / 3.0 + 20.0 * (x - 0.5).powi(2), total),
                    3 => (total - 5.0 + 10.0 * x, total),
                    4 => (total - 2.5 + 5.0 * x, total),
                    _ => (total, total),
                }
            }
            Setting::Feynman12916 => unreachable!("checked above"),
        };
        Ok(if centered { value - mean } else { value })
    }

    /// Closed-form accumulated local effect. Uncentered values are anchored
    /// at 0 for normal features and at the lower support bound otherwise.
    pub fn analytic_ale(&self, feature: usize, x: f64, centered: bool) -> Result<f64> {
        self.check_analytic(feature)?;
        match self.setting {
            Setting::SimpleNormalCorrelated => {
                // E[df/dx_s | X_s = t] integrated from 0, with E[X_other | X_s = t] = 0.9 t
                let (value, mean) = match feature {
                    0 => (x + 0.45 * x * x, 0.45),
                    1 => (0.95 * x * x, 0.95),
                    _ => (0.0, 0.0),
                };
                Ok(if centered { value - mean } else { value })
            }
            Setting::Friedman1 => {
                // independent features: ALE equals PD up to a constant
                let centered_value = self.analytic_pd(feature, x, true)?;
                if centered {
                    Ok(centered_value)
                } else {
                    let lo = self.analytic_pd(feature, 0.0, true)?;
                    Ok(centered_value - lo)
                }
            }
            Setting::Feynman12916 => unreachable!("checked above"),
        }
    }
}

/// E_{X2 ~ U(0,1)}[sin(pi x X2)] = (1 - cos(pi x)) / (pi x).
fn sine_section(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        // series: pi x / 2 - (pi x)^3 / 24
        let t = PI * x;
        t / 2.0 - t * t * t / 24.0
    } else {
        (1.0 - (PI * x).cos()) / (PI * x)
    }
}

/// E[sin(pi X1 X2)] for independent U(0,1) features; no elementary antiderivative.
fn friedman_sine_mean() -> f64 {
    static C: OnceLock<f64> = OnceLock::new();
    *C.get_or_init(|| quad::integrate(sine_section, 0.0, 1.0, 1e-12))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseCalibration {
    pub sigma_eps: f64,
    pub snr: f64,
    pub pilot_n: usize,
}

impl NoiseCalibration {
    /// A fixed noise level, bypassing calibration. `sigma_eps = 0` yields noiseless targets.
    pub fn fixed(sigma_eps: f64) -> Self {
        assert!(sigma_eps >= 0.0, "noise sd must be nonnegative");
        NoiseCalibration {
            sigma_eps,
            snr: f64::INFINITY,
            pilot_n: 0,
        }
    }
}
