//! Error measures, analytic convergence envelopes and decay-rate fits.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Floor used by the relative error when `|θ|` is tiny.
pub const DEFAULT_FLOOR: f64 = 1e-3;

/// Default relative tolerance of envelope comparisons.
pub const DEFAULT_TOLERANCE: f64 = 1e-3;

/// Minimum number of Simpson panels over `[0, t]`.
pub const MIN_PANELS: usize = 10_000;

/// `|θ - θ̂| / max(|θ|, floor)`.
pub fn relative_abs_error<T: Real>(theta: T, theta_hat: T, floor: T) -> T {
    (theta - theta_hat).abs() / theta.abs().max(floor)
}

/// Spatial minimum, mean and maximum of one quantity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aggregates<T> {
    pub min: T,
    pub mean: T,
    pub max: T,
}

impl<T: Real> Aggregates<T> {
    /// Returns `None` for an empty slice.
    pub fn of(values: &[T]) -> Option<Self> {
        let first = *values.first()?;
        let (min, max, sum) = values
            .iter()
            .fold((first, first, T::zero()), |(lo, hi, sum), &x| (lo.min(x), hi.max(x), sum + x));
        Some(Self {
            min,
            mean: sum / T::lit(values.len() as f64),
            max,
        })
    }

    pub fn constant(value: T) -> Self {
        Self {
            min: value,
            mean: value,
            max: value,
        }
    }
}

/// Estimation errors sampled along a run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ErrorSeries<T> {
    pub times: Vec<T>,
    pub abs_error: Vec<T>,
    pub rel_error: Vec<T>,
    /// Spatial statistics of `abs_error`; empty for within-host runs.
    pub abs_spatial: Vec<Aggregates<T>>,
    pub rel_spatial: Vec<Aggregates<T>>,
}

impl<T: Real> ErrorSeries<T> {
    /// Errors of a within-host run.
    pub fn from_pairs(times: &[T], theta: &[T], theta_hat: &[T], floor: T) -> Result<Self> {
        if theta.len() != times.len() || theta_hat.len() != times.len() {
            return Err(Error::ShapeMismatch {
                expected: times.len(),
                got: theta.len().min(theta_hat.len()),
            });
        }
        let abs_error = theta.iter().zip(theta_hat).map(|(&a, &b)| (a - b).abs()).collect();
        let rel_error = theta
            .iter()
            .zip(theta_hat)
            .map(|(&a, &b)| relative_abs_error(a, b, floor))
            .collect();
        Ok(Self {
            times: times.to_vec(),
            abs_error,
            rel_error,
            abs_spatial: Vec::new(),
            rel_spatial: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn is_spatial(&self) -> bool {
        !self.abs_spatial.is_empty()
    }

    /// Final relative error: spatial mean for spatial runs.
    pub fn final_rel_error(&self) -> Option<T> {
        match self.rel_spatial.last() {
            Some(agg) => Some(agg.mean),
            None => self.rel_error.last().copied(),
        }
    }
}

fn simpson<T: Real, F: FnMut(T) -> T>(a: T, b: T, panels: usize, f: &mut F) -> T {
    let panels = panels.max(2) + panels % 2;
    let h = (b - a) / T::lit(panels as f64);
    let mut odd = T::zero();
    let mut even = T::zero();
    for i in 1..panels {
        let x = a + h * T::lit(i as f64);
        if i % 2 == 1 {
            odd = odd + f(x);
        } else {
            even = even + f(x);
        }
    }
    h / T::lit(3.0) * (f(a) + f(b) + T::lit(4.0) * odd + T::lit(2.0) * even)
}

/// `∫₀ᵗ α(s) w(s) ds` by composite Simpson with at least [`MIN_PANELS`] panels.
pub fn decay_exponent<T: Real, A, W>(t: T, mut alpha: A, mut w: W) -> T
where
    A: FnMut(T) -> T,
    W: FnMut(T) -> T,
{
    if t <= T::zero() {
        return T::zero();
    }
    simpson(T::zero(), t, MIN_PANELS, &mut |s| alpha(s) * w(s))
}

/// Error of the natural observer, `e0 exp(-∫₀ᵗ α w ds)`.
pub fn analytic_envelope<T: Real, A, W>(t: T, alpha: A, w: W, e0: T) -> T
where
    A: FnMut(T) -> T,
    W: FnMut(T) -> T,
{
    e0 * (-decay_exponent(t, alpha, w)).exp()
}

/// Cumulative `∫_{t₀}^{tᵢ} α w ds` at every time of a nondecreasing grid.
///
/// The panels are spread over the intervals so that the whole span uses
/// at least [`MIN_PANELS`] of them.
pub fn cumulative_exponent<T: Real, A, W>(times: &[T], mut alpha: A, mut w: W) -> Vec<T>
where
    A: FnMut(T) -> T,
    W: FnMut(T) -> T,
{
    let mut out = Vec::with_capacity(times.len());
    let intervals = times.len().saturating_sub(1).max(1);
    let per_interval = MIN_PANELS.div_ceil(intervals).max(2);
    let mut acc = T::zero();
    let mut f = |s: T| alpha(s) * w(s);
    for (i, &t) in times.iter().enumerate() {
        if i > 0 && t > times[i - 1] {
            acc = acc + simpson(times[i - 1], t, per_interval, &mut f);
        }
        out.push(acc);
    }
    out
}

/// [`analytic_envelope`] along a time grid.
pub fn envelope_series<T: Real, A, W>(times: &[T], alpha: A, w: W, e0: T) -> Vec<T>
where
    A: FnMut(T) -> T,
    W: FnMut(T) -> T,
{
    cumulative_exponent(times, alpha, w).into_iter().map(|q| e0 * (-q).exp()).collect()
}

/// Squared L² bound `‖ê(0)‖² exp(-2 t inf α)`.
pub fn l2_envelope<T: Real>(t: T, inf_alpha: T, e0_norm: T) -> T {
    e0_norm * e0_norm * (-T::lit(2.0) * t * inf_alpha).exp()
}

/// Result of a log-linear decay fit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecayFit<T> {
    /// Decay rate `r` in `e ≈ C exp(-r t)`.
    pub rate: T,
    /// `ln C`.
    pub intercept: T,
    pub residual_rms: T,
    pub max_residual: T,
    pub samples: usize,
    /// The series hit zero inside the window and was cut there.
    pub truncated: bool,
}

/// Least-squares slope of `ln e` against `t` over `window`.
///
/// The fit stops at the first exact zero inside the window.
pub fn fit_decay_rate<T: Real>(times: &[T], values: &[T], window: (T, T)) -> Result<DecayFit<T>> {
    if times.len() != values.len() {
        return Err(Error::ShapeMismatch {
            expected: times.len(),
            got: values.len(),
        });
    }
    let mut points = Vec::new();
    let mut truncated = false;
    for (&t, &e) in times.iter().zip(values) {
        if t < window.0 || t > window.1 {
            continue;
        }
        if e <= T::zero() {
            truncated = true;
            break;
        }
        points.push((t, e.ln()));
    }
    if points.len() < 10 {
        return Err(Error::InsufficientData {
            needed: 10,
            got: points.len(),
        });
    }
    let n = T::lit(points.len() as f64);
    let mean_t = points.iter().map(|p| p.0).sum::<T>() / n;
    let mean_y = points.iter().map(|p| p.1).sum::<T>() / n;
    let (mut sxy, mut sxx) = (T::zero(), T::zero());
    for &(t, y) in &points {
        sxy = sxy + (t - mean_t) * (y - mean_y);
        sxx = sxx + (t - mean_t) * (t - mean_t);
    }
    if sxx == T::zero() {
        return Err(Error::InsufficientData {
            needed: 2,
            got: 1,
        });
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_t;
    let (mut sq, mut worst) = (T::zero(), T::zero());
    for &(t, y) in &points {
        let r = (y - intercept - slope * t).abs();
        sq = sq + r * r;
        worst = worst.max(r);
    }
    Ok(DecayFit {
        rate: -slope,
        intercept,
        residual_rms: (sq / n).sqrt(),
        max_residual: worst,
        samples: points.len(),
        truncated,
    })
}

/// Outcome of a pointwise `series ≤ envelope (1 + tol)` test.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnvelopeCheck<T> {
    pub passed: bool,
    /// Largest `series[i] - envelope[i] (1 + tol)`; positive on failure.
    pub worst_margin: T,
    pub worst_index: usize,
    pub first_violation: Option<usize>,
}

pub fn envelope_check<T: Real>(series: &[T], envelope: &[T], tol: T) -> Result<EnvelopeCheck<T>> {
    if series.len() != envelope.len() {
        return Err(Error::ShapeMismatch {
            expected: envelope.len(),
            got: series.len(),
        });
    }
    let mut check = EnvelopeCheck {
        passed: true,
        worst_margin: T::neg_infinity(),
        worst_index: 0,
        first_violation: None,
    };
    for (i, (&s, &e)) in series.iter().zip(envelope).enumerate() {
        let margin = s - e * (T::one() + tol);
        if margin > check.worst_margin || margin.is_nan() {
            check.worst_margin = margin;
            check.worst_index = i;
        }
        if !(margin <= T::zero()) {
            check.passed = false;
            check.first_violation.get_or_insert(i);
        }
    }
    Ok(check)
}

/// Largest `|series[i] - reference[i]|`, with its index.
pub fn max_abs_deviation<T: Real>(series: &[T], reference: &[T]) -> Option<(T, usize)> {
    series
        .iter()
        .zip(reference)
        .map(|(&a, &b)| (a - b).abs())
        .enumerate()
        .fold(None, |best, (i, d)| match best {
            Some((m, _)) if m >= d => best,
            _ => Some((d, i)),
        })
}
