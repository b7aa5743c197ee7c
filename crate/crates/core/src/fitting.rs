//! Least-squares fits used to read critical behaviour off ensemble data.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Serializes NaN as `null` and reads `null` back as NaN.
mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_nan() {
            s.serialize_none()
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

/// One `(α, F0 ± σ)` sample of the order parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawPoint {
    pub alpha: f64,
    pub f0: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PowerLawOptions {
    /// Weight points by `1/σ²`; otherwise all points count equally.
    pub weighted: bool,
    /// Points enter the fit only when `F0 > significance * σ`.
    pub significance: f64,
    /// How far below the smallest included α the search for α_c starts.
    pub search_below: f64,
    /// Width of the final α_c bracket.
    pub tolerance: f64,
}

impl Default for PowerLawOptions {
    fn default() -> Self {
        PowerLawOptions {
            weighted: true,
            significance: 2.0,
            search_below: 10.0,
            tolerance: 1e-9,
        }
    }
}

/// `F0 = G0 (α − α_c)^γ` with one-sigma uncertainties.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub g0: f64,
    #[serde(with = "nan_as_null")]
    pub g0_err: f64,
    pub alpha_c: f64,
    #[serde(with = "nan_as_null")]
    pub alpha_c_err: f64,
    pub gamma: f64,
    #[serde(with = "nan_as_null")]
    pub gamma_err: f64,
    /// Weighted sum of squared residuals in F0 units.
    pub residual: f64,
    pub n_points: usize,
    pub weighted: bool,
}

impl PowerLawFit {
    pub fn eval(&self, alpha: f64) -> f64 {
        if alpha <= self.alpha_c {
            0.0
        } else {
            self.g0 * (alpha - self.alpha_c).powf(self.gamma)
        }
    }
}

struct LogLine {
    ln_g0: f64,
    gamma: f64,
    cost: f64,
}

/// Weighted regression of `ln F0` on `ln(α − α_c)`.
fn log_regression(points: &[PowerLawPoint], weights: &[f64], alpha_c: f64) -> Option<LogLine> {
    let (mut sw, mut sx, mut sy) = (0.0, 0.0, 0.0);
    let xy: Vec<(f64, f64, f64)> = points
        .iter()
        .zip(weights)
        .map(|(p, &w)| ((p.alpha - alpha_c).ln(), p.f0.ln(), w))
        .collect();
    for &(x, y, w) in &xy {
        sw += w;
        sx += w * x;
        sy += w * y;
    }
    let (xm, ym) = (sx / sw, sy / sw);
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for &(x, y, w) in &xy {
        sxx += w * (x - xm) * (x - xm);
        sxy += w * (x - xm) * (y - ym);
    }
    if !(sxx > 0.0) {
        return None;
    }
    let gamma = sxy / sxx;
    let ln_g0 = ym - gamma * xm;
    let cost = xy
        .iter()
        .map(|&(x, y, w)| w * (y - ln_g0 - gamma * x).powi(2))
        .sum();
    Some(LogLine { ln_g0, gamma, cost })
}

/// Fits `F0 = G0 (α − α_c)^γ`.
///
/// α_c is found by golden-section search below the smallest α with a
/// significant F0; for each trial α_c the pair `(G0, γ)` comes from a
/// weighted straight-line fit in log-log space.
pub fn fit_power_law(points: &[PowerLawPoint], opts: &PowerLawOptions) -> Result<PowerLawFit> {
    let used: Vec<PowerLawPoint> = points
        .iter()
        .copied()
        .filter(|p| p.f0 > 0.0 && p.f0 > opts.significance * p.sigma && p.alpha.is_finite())
        .collect();
    if used.is_empty() {
        return Err(Error::NoPositiveRegion);
    }
    if used.len() < 4 {
        return Err(Error::InsufficientPoints {
            needed: 4,
            have: used.len(),
        });
    }
    if opts.weighted && used.iter().any(|p| !(p.sigma > 0.0)) {
        return Err(Error::Degenerate("weighted fit needs positive uncertainties"));
    }
    // Linear-space weight 1/σ² maps to (F0/σ)² in log space.
    let lin_w: Vec<f64> = used
        .iter()
        .map(|p| if opts.weighted { 1.0 / (p.sigma * p.sigma) } else { 1.0 })
        .collect();
    let log_w: Vec<f64> = used.iter().zip(&lin_w).map(|(p, w)| w * p.f0 * p.f0).collect();

    let a_min = used.iter().map(|p| p.alpha).fold(f64::INFINITY, f64::min);
    let hi = a_min - 1e-9 * a_min.abs().max(1.0);
    let lo = a_min - opts.search_below;
    let cost = |ac: f64| log_regression(&used, &log_w, ac).map_or(f64::INFINITY, |l| l.cost);

    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (cost(c), cost(d));
    let mut iterations = 0;
    while b - a > opts.tolerance && iterations < 500 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = cost(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = cost(d);
        }
        iterations += 1;
    }
    let candidates = [(lo, cost(lo)), (hi, cost(hi)), (c, fc), (d, fd)];
    let (alpha_c, _) = candidates
        .into_iter()
        .min_by(|x, y| x.1.total_cmp(&y.1))
        .expect("non-empty");
    let line = log_regression(&used, &log_w, alpha_c)
        .ok_or(Error::Degenerate("all α values coincide"))?;
    let (g0, gamma) = (line.ln_g0.exp(), line.gamma);

    let n = used.len();
    let mut jtj = Matrix3::<f64>::zeros();
    let mut residual = 0.0;
    for (p, &w) in used.iter().zip(&lin_w) {
        let dd = p.alpha - alpha_c;
        let pow = dd.powf(gamma);
        let model = g0 * pow;
        residual += w * (p.f0 - model).powi(2);
        let j = Vector3::new(pow, -g0 * gamma * dd.powf(gamma - 1.0), model * dd.ln());
        jtj += w * j * j.transpose();
    }
    let errs = if n > 3 {
        let s2 = residual / (n - 3) as f64;
        jtj.try_inverse()
            .map(|inv| [0, 1, 2].map(|k| (s2 * inv[(k, k)]).max(0.0).sqrt()))
            .unwrap_or([f64::NAN; 3])
    } else {
        [f64::NAN; 3]
    };
    Ok(PowerLawFit {
        g0,
        g0_err: errs[0],
        alpha_c,
        alpha_c_err: errs[1],
        gamma,
        gamma_err: errs[2],
        residual,
        n_points: n,
        weighted: opts.weighted,
    })
}

/// `A exp(−(p − μ)² / 2σ²)` with one-sigma uncertainties.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianFit {
    pub amplitude: f64,
    pub mean: f64,
    pub sigma: f64,
    #[serde(with = "nan_as_null")]
    pub amplitude_err: f64,
    #[serde(with = "nan_as_null")]
    pub mean_err: f64,
    #[serde(with = "nan_as_null")]
    pub sigma_err: f64,
    pub residual: f64,
    pub iterations: usize,
}

impl GaussianFit {
    pub fn eval(&self, x: f64) -> f64 {
        self.amplitude * (-(x - self.mean).powi(2) / (2.0 * self.sigma * self.sigma)).exp()
    }
}

const GAUSS_MAX_ITER: usize = 200;

fn gauss_system(pts: &[(f64, f64)], th: &Vector3<f64>) -> (Matrix3<f64>, Vector3<f64>, f64) {
    let (a, m, s) = (th[0], th[1], th[2]);
    let mut jtj = Matrix3::zeros();
    let mut jtr = Vector3::zeros();
    let mut ssr = 0.0;
    for &(x, y) in pts {
        let dx = x - m;
        let e = (-dx * dx / (2.0 * s * s)).exp();
        let r = y - a * e;
        let j = Vector3::new(e, a * e * dx / (s * s), a * e * dx * dx / (s * s * s));
        jtj += j * j.transpose();
        jtr += j * r;
        ssr += r * r;
    }
    (jtj, jtr, ssr)
}

fn gauss_ssr(pts: &[(f64, f64)], th: &Vector3<f64>) -> f64 {
    pts.iter()
        .map(|&(x, y)| {
            let e = (-(x - th[1]).powi(2) / (2.0 * th[2] * th[2])).exp();
            (y - th[0] * e).powi(2)
        })
        .sum()
}

/// Levenberg-Marquardt fit of a gaussian to `(x, y)` samples.
///
/// Starts from the largest sample, the centroid and the second moment.
pub fn fit_gaussian(points: &[(f64, f64)]) -> Result<GaussianFit> {
    if points.len() < 5 {
        return Err(Error::InsufficientPoints {
            needed: 5,
            have: points.len(),
        });
    }
    let mass: f64 = points.iter().map(|p| p.1).sum();
    if !(mass > 0.0) {
        return Err(Error::Degenerate("gaussian fit needs positive mass"));
    }
    let centroid = points.iter().map(|p| p.0 * p.1).sum::<f64>() / mass;
    // Work in coordinates centred on the centroid.
    let pts: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x - centroid, y)).collect();
    let var = pts.iter().map(|&(x, y)| y * x * x).sum::<f64>() / mass;
    let amp = points.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let span = pts.iter().map(|p| p.0.abs()).fold(0.0, f64::max).max(1.0);
    if !(var.sqrt() > 1e-6 * span) {
        return Err(Error::NotConverged("width collapsed to zero".into()));
    }
    let mut th = Vector3::new(amp, 0.0, var.sqrt());
    let (mut jtj, mut jtr, mut ssr) = gauss_system(&pts, &th);
    let scale = pts.iter().map(|p| p.1 * p.1).sum::<f64>();
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < GAUSS_MAX_ITER {
        iterations += 1;
        if ssr <= 1e-28 * scale {
            converged = true;
            break;
        }
        let mut a = jtj;
        for k in 0..3 {
            a[(k, k)] += lambda * jtj[(k, k)].max(1e-300);
        }
        let Some(step) = a.lu().solve(&jtr) else {
            lambda *= 10.0;
            continue;
        };
        let trial = th + step;
        let trial_ssr = if trial[2] > 0.0 { gauss_ssr(&pts, &trial) } else { f64::INFINITY };
        if trial_ssr < ssr {
            let drop = ssr - trial_ssr;
            th = trial;
            (jtj, jtr, ssr) = gauss_system(&pts, &th);
            lambda = (lambda / 10.0).max(1e-12);
            if drop <= 1e-8 * ssr {
                converged = true;
                break;
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e12 {
                // No direction lowers the residual: numerically at a minimum.
                converged = true;
                break;
            }
        }
    }
    if !converged {
        return Err(Error::NotConverged(format!("{GAUSS_MAX_ITER} iterations")));
    }
    let sigma = th[2].abs();
    if !(sigma > 1e-6 * span) || !th.iter().all(|v| v.is_finite()) {
        return Err(Error::NotConverged("width collapsed to zero".into()));
    }
    let n = pts.len();
    let errs = if n > 3 {
        let s2 = ssr / (n - 3) as f64;
        jtj.try_inverse()
            .map(|inv| [0, 1, 2].map(|k| (s2 * inv[(k, k)]).max(0.0).sqrt()))
            .unwrap_or([f64::NAN; 3])
    } else {
        [f64::NAN; 3]
    };
    Ok(GaussianFit {
        amplitude: th[0],
        mean: th[1] + centroid,
        sigma,
        amplitude_err: errs[0],
        mean_err: errs[1],
        sigma_err: errs[2],
        residual: ssr,
        iterations,
    })
}

/// Mean and spread of an estimator over independent sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchStats {
    pub mean: f64,
    /// Sample standard deviation across surviving sets.
    pub std: f64,
    pub n_sets: usize,
    /// `(set index, error)` for sets whose estimator failed.
    pub failures: Vec<(usize, String)>,
}

/// Applies `estimator` to each set and summarises the values.
pub fn batch_error<T, F>(sets: &[Vec<T>], estimator: F) -> Result<BatchStats>
where
    F: Fn(&[T]) -> Result<f64>,
{
    if let Some(first) = sets.first() {
        if sets.iter().any(|s| s.len() != first.len()) {
            return Err(Error::UnequalSets);
        }
    }
    let mut values = Vec::with_capacity(sets.len());
    let mut failures = Vec::new();
    for (k, s) in sets.iter().enumerate() {
        match estimator(s) {
            Ok(v) if v.is_finite() => values.push(v),
            Ok(v) => failures.push((k, format!("non-finite estimate {v}"))),
            Err(e) => failures.push((k, e.to_string())),
        }
    }
    if values.len() < 2 {
        return Err(Error::InsufficientPoints {
            needed: 2,
            have: values.len(),
        });
    }
    let n = values.len() as f64;
    // Shifted by the first value so identical estimates give exactly zero spread.
    let pivot = values[0];
    let shift = values.iter().map(|v| v - pivot).sum::<f64>() / n;
    let mean = pivot + shift;
    let var = values.iter().map(|v| (v - pivot - shift).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(BatchStats {
        mean,
        std: var.sqrt(),
        n_sets: values.len(),
        failures,
    })
}

/// A boundary point `(α_c ± σ, β)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinePoint {
    pub alpha_c: f64,
    pub beta: f64,
    pub sigma: f64,
}

/// `β = m α + c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_err: f64,
    pub intercept_err: f64,
    pub point_errors: Vec<f64>,
    pub n_points: usize,
}

/// Weighted straight line through boundary points.
///
/// Weights are `1/σ²` when every σ is positive, otherwise uniform.
pub fn fit_line(points: &[LinePoint]) -> Result<BoundaryFit> {
    if points.len() < 2 {
        return Err(Error::InsufficientPoints {
            needed: 2,
            have: points.len(),
        });
    }
    let weighted = points.iter().all(|p| p.sigma > 0.0);
    let w: Vec<f64> = points
        .iter()
        .map(|p| if weighted { 1.0 / (p.sigma * p.sigma) } else { 1.0 })
        .collect();
    let sw: f64 = w.iter().sum();
    let xm = points.iter().zip(&w).map(|(p, w)| w * p.alpha_c).sum::<f64>() / sw;
    let ym = points.iter().zip(&w).map(|(p, w)| w * p.beta).sum::<f64>() / sw;
    let sxx: f64 = points.iter().zip(&w).map(|(p, w)| w * (p.alpha_c - xm).powi(2)).sum();
    let sxy: f64 = points
        .iter()
        .zip(&w)
        .map(|(p, w)| w * (p.alpha_c - xm) * (p.beta - ym))
        .sum();
    if !(sxx > 1e-12 * sw * (xm.abs() + 1.0).powi(2)) {
        return Err(Error::Degenerate("all boundary points share one α"));
    }
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let n = points.len();
    let (slope_err, intercept_err) = if n > 2 {
        let ssr: f64 = points
            .iter()
            .zip(&w)
            .map(|(p, w)| w * (p.beta - slope * p.alpha_c - intercept).powi(2))
            .sum();
        let s2 = ssr / (n - 2) as f64;
        ((s2 / sxx).sqrt(), (s2 * (1.0 / sw + xm * xm / sxx)).sqrt())
    } else {
        (0.0, 0.0)
    };
    Ok(BoundaryFit {
        slope,
        intercept,
        slope_err,
        intercept_err,
        point_errors: points.iter().map(|p| p.sigma).collect(),
        n_points: n,
    })
}

/// Polynomial in ascending powers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolynomialFit {
    pub coefficients: Vec<f64>,
    pub residual: f64,
}

impl PolynomialFit {
    pub fn eval(&self, x: f64) -> f64 {
        self.coefficients.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }
}

/// Least-squares polynomial of the given degree.
pub fn fit_polynomial(points: &[(f64, f64)], degree: usize) -> Result<PolynomialFit> {
    if points.len() < degree + 1 {
        return Err(Error::InsufficientPoints {
            needed: degree + 1,
            have: points.len(),
        });
    }
    let a = DMatrix::from_fn(points.len(), degree + 1, |i, j| points[i].0.powi(j as i32));
    let b = DVector::from_iterator(points.len(), points.iter().map(|p| p.1));
    let svd = a.clone().svd(true, true);
    let max_sv = svd.singular_values.max();
    let coef = svd
        .solve(&b, 1e-12 * max_sv)
        .map_err(|_| Error::Degenerate("polynomial design matrix"))?;
    if svd.rank(1e-12 * max_sv) < degree + 1 {
        return Err(Error::Degenerate("too few distinct abscissae"));
    }
    let residual = (a * &coef - b).norm_squared();
    Ok(PolynomialFit {
        coefficients: coef.iter().copied().collect(),
        residual,
    })
}

/// Smallest α at which the peak position stops rising: the forward
/// slope stays below `threshold` for `run` consecutive grid intervals.
pub fn detect_crossover(alphas: &[f64], means: &[f64], threshold: f64, run: usize) -> Option<f64> {
    let n = alphas.len().min(means.len());
    if run == 0 || n < run + 1 {
        return None;
    }
    let slopes: Vec<f64> = (0..n - 1)
        .map(|i| (means[i + 1] - means[i]) / (alphas[i + 1] - alphas[i]))
        .collect();
    (0..=slopes.len() - run)
        .find(|&i| slopes[i..i + run].iter().all(|&s| s < threshold))
        .map(|i| alphas[i])
}

/// A located feature of a χ(α) curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveFeature {
    pub alpha: f64,
    /// Size of the feature in χ units.
    pub size: f64,
    /// Typical point-to-point variation of the curve.
    pub noise: f64,
}

impl CurveFeature {
    pub fn is_pronounced(&self, factor: f64) -> bool {
        self.size > factor * self.noise
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn point_noise(values: &[f64]) -> f64 {
    median(values.windows(2).map(|w| (w[1] - w[0]).abs()).collect())
}

/// Deepest local minimum of `chi` with α in `[center − half, center + half]`,
/// sized against the curve median.
pub fn find_dip(alphas: &[f64], chi: &[f64], center: f64, half: f64) -> Option<CurveFeature> {
    let n = alphas.len().min(chi.len());
    if n < 3 {
        return None;
    }
    let noise = point_noise(&chi[..n]);
    let level = median(chi[..n].to_vec());
    (1..n - 1)
        .filter(|&i| (alphas[i] - center).abs() <= half)
        .filter(|&i| chi[i] <= chi[i - 1] && chi[i] <= chi[i + 1])
        .min_by(|&i, &j| chi[i].total_cmp(&chi[j]))
        .map(|i| CurveFeature {
            alpha: alphas[i],
            size: level - chi[i],
            noise,
        })
}

/// Largest step of `chi` between neighbouring grid points whose midpoint
/// lies in `[center − half, center + half]`.
pub fn find_jump(alphas: &[f64], chi: &[f64], center: f64, half: f64) -> Option<CurveFeature> {
    let n = alphas.len().min(chi.len());
    if n < 2 {
        return None;
    }
    let noise = point_noise(&chi[..n]);
    (0..n - 1)
        .filter(|&i| ((alphas[i] + alphas[i + 1]) / 2.0 - center).abs() <= half)
        .max_by(|&i, &j| (chi[i + 1] - chi[i]).abs().total_cmp(&(chi[j + 1] - chi[j]).abs()))
        .map(|i| CurveFeature {
            alpha: (alphas[i] + alphas[i + 1]) / 2.0,
            size: (chi[i + 1] - chi[i]).abs(),
            noise,
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn planted(g0: f64, ac: f64, gamma: f64) -> Vec<PowerLawPoint> {
        (0..20)
            .map(|k| {
                let alpha = ac + 0.7 + 2.0 * k as f64;
                PowerLawPoint {
                    alpha,
                    f0: g0 * (alpha - ac).powf(gamma),
                    sigma: 1e-6,
                }
            })
            .collect()
    }

    #[test]
    fn recovers_planted_power_law() {
        let f = fit_power_law(&planted(2.0, 50.0, 0.5), &PowerLawOptions::default()).unwrap();
        assert!((f.g0 - 2.0).abs() < 1e-3);
        assert!((f.alpha_c - 50.0).abs() < 1e-3);
        assert!((f.gamma - 0.5).abs() < 1e-3);
    }

    #[test]
    fn power_law_ignores_zero_points() {
        let mut pts = planted(3.0, 45.0, 0.8);
        pts.insert(0, PowerLawPoint { alpha: 40.0, f0: 0.0, sigma: 0.1 });
        let f = fit_power_law(&pts, &PowerLawOptions::default()).unwrap();
        assert_eq!(f.n_points, 20);
        assert!((f.alpha_c - 45.0).abs() < 1e-3);
    }

    #[test]
    fn power_law_errors() {
        let zero: Vec<_> = (0..6)
            .map(|k| PowerLawPoint { alpha: k as f64, f0: 0.0, sigma: 1.0 })
            .collect();
        assert!(matches!(
            fit_power_law(&zero, &PowerLawOptions::default()),
            Err(Error::NoPositiveRegion)
        ));
        let few = &planted(1.0, 30.0, 1.0)[..3];
        assert!(matches!(
            fit_power_law(few, &PowerLawOptions::default()),
            Err(Error::InsufficientPoints { needed: 4, have: 3 })
        ));
    }

    #[test]
    fn unweighted_fit() {
        let opts = PowerLawOptions { weighted: false, ..Default::default() };
        let f = fit_power_law(&planted(150.0, 49.0, 0.5), &opts).unwrap();
        assert!(!f.weighted);
        assert!((f.alpha_c - 49.0).abs() < 1e-3);
    }

    fn gauss_points(a: f64, mu: f64, s: f64) -> Vec<(f64, f64)> {
        (50..=110)
            .map(|p| (p as f64, a * (-((p as f64 - mu).powi(2)) / (2.0 * s * s)).exp()))
            .collect()
    }

    #[test]
    fn recovers_planted_gaussian() {
        let g = fit_gaussian(&gauss_points(100.0, 80.0, 5.0)).unwrap();
        assert!((g.amplitude - 100.0).abs() < 1e-6);
        assert!((g.mean - 80.0).abs() < 1e-6);
        assert!((g.sigma - 5.0).abs() < 1e-6);
    }

    #[test]
    fn gaussian_from_one_sided_data() {
        let pts: Vec<_> = gauss_points(40.0, 70.0, 12.0)
            .into_iter()
            .filter(|p| p.0 > 72.0)
            .collect();
        let g = fit_gaussian(&pts).unwrap();
        assert!((g.mean - 70.0).abs() < 1e-6);
    }

    #[test]
    fn spike_is_rejected() {
        let pts = [(1.0, 0.0), (2.0, 0.0), (3.0, 10.0), (4.0, 0.0), (5.0, 0.0)];
        assert!(matches!(fit_gaussian(&pts), Err(Error::NotConverged(_))));
        assert!(fit_gaussian(&pts[..4]).is_err());
    }

    #[test]
    fn batch_examples() {
        let sets = vec![vec![1, 2], vec![3, 4], vec![5, 6]];
        let b = batch_error(&sets, |_| Ok(5.0)).unwrap();
        assert_eq!((b.mean, b.std), (5.0, 0.0));
        let b = batch_error(&sets, |s| Ok(s[0] as f64)).unwrap();
        assert_eq!(b.mean, 3.0);
        assert_eq!(b.std, 2.0);
        let bad = vec![vec![1], vec![2, 3]];
        assert!(matches!(batch_error(&bad, |_| Ok(0.0)), Err(Error::UnequalSets)));
        let fails = batch_error(&sets, |s| {
            if s[0] == 1 { Ok(1.0) } else { Err(Error::NoPositiveRegion) }
        });
        assert!(matches!(fails, Err(Error::InsufficientPoints { needed: 2, have: 1 })));
    }

    #[test]
    fn line_examples() {
        let pts: Vec<_> = [(1.0, 2.0), (2.0, 4.0), (3.0, 6.0)]
            .iter()
            .map(|&(a, b)| LinePoint { alpha_c: a, beta: b, sigma: 0.1 })
            .collect();
        let f = fit_line(&pts).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-12);
        assert!(f.intercept.abs() < 1e-12);
        assert!(fit_line(&pts[..1]).is_err());
        let same: Vec<_> = (0..3)
            .map(|k| LinePoint { alpha_c: 5.0, beta: k as f64, sigma: 1.0 })
            .collect();
        assert!(matches!(fit_line(&same), Err(Error::Degenerate(_))));
    }

    #[test]
    fn cubic_fit_is_exact_on_cubic() {
        let pts: Vec<_> = (0..8)
            .map(|k| {
                let x = k as f64;
                (x, 1.0 - 2.0 * x + 0.5 * x * x + 0.1 * x * x * x)
            })
            .collect();
        let f = fit_polynomial(&pts, 3).unwrap();
        for (c, want) in f.coefficients.iter().zip([1.0, -2.0, 0.5, 0.1]) {
            assert!((c - want).abs() < 1e-9);
        }
        assert!(fit_polynomial(&pts[..3], 3).is_err());
    }

    #[test]
    fn crossover_detection() {
        let alphas: Vec<f64> = (0..14).map(|k| 60.0 + 2.0 * k as f64).collect();
        let means: Vec<f64> = alphas.iter().map(|&a| if a < 76.0 { a } else { 76.0 }).collect();
        assert_eq!(detect_crossover(&alphas, &means, 0.05, 3), Some(76.0));
        let rising: Vec<f64> = alphas.clone();
        assert_eq!(detect_crossover(&alphas, &rising, 0.05, 3), None);
    }

    #[test]
    fn dip_and_jump() {
        let alphas: Vec<f64> = (0..30).map(|k| 30.0 + 2.0 * k as f64).collect();
        let chi: Vec<f64> = alphas
            .iter()
            .map(|&a| {
                let base = 1.0 + 0.01 * (a * 7.0).sin();
                let dip = if (a - 50.0).abs() < 3.0 { -0.5 } else { 0.0 };
                let jump = if a > 78.0 { 0.4 } else { 0.0 };
                base + dip + jump
            })
            .collect();
        let d = find_dip(&alphas, &chi, 50.0, 6.0).unwrap();
        assert_eq!(d.alpha, 50.0);
        assert!(d.is_pronounced(3.0));
        let j = find_jump(&alphas, &chi, 78.0, 6.0).unwrap();
        assert_eq!(j.alpha, 79.0);
        assert!(j.is_pronounced(3.0));
    }
}
