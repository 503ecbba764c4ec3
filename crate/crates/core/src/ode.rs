//! Within-host berry model and its Luenberger-like observer.
//!
//! The true system evolves the inhibition rate `θ`, the berry volume `v`
//! and the rot proportion `ρ`:
//!
//! ```text
//! θ' = α (1 - w θ)
//! v' = β(t, θ) (1 - v / (η v_max (1 + ε - θ)))
//! ρ' = γ̄(t, θ, v, ρ) (1 - ρ)
//! ```
//!
//! The observer only sees `v`, `ρ` and `ρ'` and reconstructs `θ`:
//!
//! ```text
//! θ̂' = α (1 - w θ̂) + k1 φ1(θ̂, v̂) + k2 φ2(θ̂)
//! v̂' = β(t, θ̂) φ3(θ̂, v̂)
//! ```
//!
//! The pointwise kernels in this module are shared with the spatial model.

use crate::error::{Error, Result};
use crate::forcing::{ParameterSet, PointForcing};
use crate::integrate::{simulate, OdeSystem, SimulationOptions, Trajectory};
use crate::scalar::Real;

/// True state of one berry. Also used for its time derivative.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct ModelState<T> {
    pub theta: T,
    pub v: T,
    pub rho: T,
}

impl<T: Real> ModelState<T> {
    pub fn new(theta: T, v: T, rho: T) -> Self {
        Self { theta, v, rho }
    }

    /// Rot volume `v_r = ρ v`.
    pub fn rot_volume(&self) -> T {
        self.rho * self.v
    }
}

/// Observer state `(θ̂, v̂)`. Also used for its time derivative.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct ObserverState<T> {
    pub theta_hat: T,
    pub v_hat: T,
}

impl<T: Real> ObserverState<T> {
    pub fn new(theta_hat: T, v_hat: T) -> Self {
        Self { theta_hat, v_hat }
    }
}

/// What the observer is fed at one instant.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Measurement<T> {
    pub v: T,
    pub rho: T,
    pub drho_dt: T,
}

/// How `ρ'` is obtained from the true trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum MeasurementMode {
    /// From the true right-hand side.
    #[default]
    Exact,
    /// Backward difference of the sampled `ρ`.
    FiniteDifference,
}

/// `1` on the open interval `(0, 1)`, `0` elsewhere.
#[inline]
pub fn delta_indicator<T: Real>(x: T) -> T {
    if x > T::zero() && x < T::one() {
        T::one()
    } else {
        T::zero()
    }
}

/// Right-hand side of the true system for given local coefficients.
#[inline]
pub fn model_rates<T: Real>(f: &PointForcing<T>, s: &ModelState<T>) -> Result<ModelState<T>> {
    let capacity = f.capacity(s.theta)?;
    Ok(ModelState {
        theta: f.alpha * (T::one() - f.w * s.theta),
        v: f.beta(s.theta) * (T::one() - s.v / capacity),
        rho: f.gamma_bar(s.theta, s.v, s.rho) * (T::one() - s.rho),
    })
}

/// Volume-mismatch correction `φ1 = (1 - v/v̂)(1 + ε - θ̂)` when `v ≤ v̂`,
/// `θ̂ ∈ (0, 1)` and `v̂ > 0`; zero otherwise.
#[inline]
pub fn volume_correction<T: Real>(epsilon: T, theta_hat: T, v_hat: T, v: T) -> T {
    if v <= v_hat && theta_hat > T::zero() && theta_hat < T::one() && v_hat > T::zero() {
        (T::one() - v / v_hat) * (T::one() + epsilon - theta_hat)
    } else {
        T::zero()
    }
}

/// Rot-rate innovation `φ2 = ρ' - γ̄(t, θ̂, v, ρ)(1 - ρ)` when `θ̂ ∈ (0, 1)`.
#[inline]
pub fn rot_innovation<T: Real>(f: &PointForcing<T>, theta_hat: T, m: &Measurement<T>) -> T {
    if theta_hat > T::zero() && theta_hat < T::one() {
        m.drho_dt - f.gamma_bar(theta_hat, m.v, m.rho) * (T::one() - m.rho)
    } else {
        T::zero()
    }
}

/// Logistic saturation `φ3 = 1 - v̂ / ((1 + ε - θ̂) η v_max)`.
#[inline]
pub fn volume_saturation<T: Real>(f: &PointForcing<T>, theta_hat: T, v_hat: T) -> Result<T> {
    Ok(T::one() - v_hat / f.capacity(theta_hat)?)
}

/// Observer right-hand side for given local coefficients and gains.
#[inline]
pub fn observer_rates<T: Real>(
    f: &PointForcing<T>,
    o: &ObserverState<T>,
    m: &Measurement<T>,
    k1: T,
    k2: T,
) -> Result<ObserverState<T>> {
    let mut theta_rate = f.alpha * (T::one() - f.w * o.theta_hat);
    // skip the corrections entirely for zero gains so a natural observer
    // reproduces the model arithmetic exactly
    if k1 != T::zero() {
        theta_rate = theta_rate + k1 * volume_correction(f.epsilon, o.theta_hat, o.v_hat, m.v);
    }
    if k2 != T::zero() {
        theta_rate = theta_rate + k2 * rot_innovation(f, o.theta_hat, m);
    }
    Ok(ObserverState {
        theta_hat: theta_rate,
        v_hat: f.beta(o.theta_hat) * volume_saturation(f, o.theta_hat, o.v_hat)?,
    })
}

/// `(θ', v', ρ')` of the within-host model at time `t`.
pub fn model_rhs<T: Real>(t: T, s: &ModelState<T>, p: &ParameterSet<T>) -> Result<ModelState<T>> {
    model_rates(&p.forcing_at(t)?, s)
}

pub fn phi1<T: Real>(_t: T, theta_hat: T, v_hat: T, m: &Measurement<T>, p: &ParameterSet<T>) -> T {
    volume_correction(p.epsilon, theta_hat, v_hat, m.v)
}

pub fn phi2<T: Real>(t: T, theta_hat: T, m: &Measurement<T>, p: &ParameterSet<T>) -> Result<T> {
    Ok(rot_innovation(&p.forcing_at(t)?, theta_hat, m))
}

pub fn phi3<T: Real>(t: T, theta_hat: T, v_hat: T, p: &ParameterSet<T>) -> Result<T> {
    volume_saturation(&p.forcing_at(t)?, theta_hat, v_hat)
}

/// `(θ̂', v̂')` of the observer at time `t` with the gains of `p`.
pub fn observer_rhs<T: Real>(
    t: T,
    o: &ObserverState<T>,
    m: &Measurement<T>,
    p: &ParameterSet<T>,
) -> Result<ObserverState<T>> {
    observer_rates(&p.forcing_at(t)?, o, m, p.k1, p.k2)
}

/// Builds the observer input from the true state.
///
/// `prev` is the previous `(state, time)` sample and is required by
/// [`MeasurementMode::FiniteDifference`].
pub fn make_measurement<T: Real>(
    t: T,
    s: &ModelState<T>,
    mode: MeasurementMode,
    prev: Option<(&ModelState<T>, T)>,
    p: &ParameterSet<T>,
) -> Result<Measurement<T>> {
    let drho_dt = match mode {
        MeasurementMode::Exact => p.gamma_bar(t, s.theta, s.v, s.rho) * (T::one() - s.rho),
        MeasurementMode::FiniteDifference => {
            let (prev_state, prev_t) = prev.ok_or(Error::MissingHistory)?;
            (s.rho - prev_state.rho) / (t - prev_t)
        }
    };
    Ok(Measurement {
        v: s.v,
        rho: s.rho,
        drho_dt,
    })
}

/// Flat-vector layout of the coupled truth + observer system.
pub mod layout {
    pub const THETA: usize = 0;
    pub const V: usize = 1;
    pub const RHO: usize = 2;
    pub const THETA_HAT: usize = 3;
    pub const V_HAT: usize = 4;
    pub const DIM: usize = 5;
    pub const NAMES: [&str; DIM] = ["theta", "v", "rho", "theta_hat", "v_hat"];
}

/// True model and observer advanced in lockstep.
///
/// At every step the measurement is synthesized from the current true
/// state and both subsystems are advanced from that same instant, so the
/// observer never sees truth data from a later step.
#[derive(Clone, Debug)]
pub struct CoupledSystem<'a, T> {
    params: &'a ParameterSet<T>,
    mode: MeasurementMode,
    history: Option<(T, T)>,
    /// `ρ'` held fixed over the current step in finite-difference mode.
    held_rate: Option<T>,
}

impl<'a, T: Real> CoupledSystem<'a, T> {
    pub fn new(params: &'a ParameterSet<T>, mode: MeasurementMode) -> Self {
        Self {
            params,
            mode,
            history: None,
            held_rate: None,
        }
    }

    pub fn pack(state: &ModelState<T>, observer: &ObserverState<T>) -> [T; layout::DIM] {
        [state.theta, state.v, state.rho, observer.theta_hat, observer.v_hat]
    }

    pub fn unpack(y: &[T]) -> (ModelState<T>, ObserverState<T>) {
        (
            ModelState::new(y[layout::THETA], y[layout::V], y[layout::RHO]),
            ObserverState::new(y[layout::THETA_HAT], y[layout::V_HAT]),
        )
    }

    fn measurement(&self, f: &PointForcing<T>, s: &ModelState<T>) -> Measurement<T> {
        let drho_dt = match self.held_rate {
            Some(rate) => rate,
            None => f.gamma_bar(s.theta, s.v, s.rho) * (T::one() - s.rho),
        };
        Measurement {
            v: s.v,
            rho: s.rho,
            drho_dt,
        }
    }
}

impl<T: Real> OdeSystem<T> for CoupledSystem<'_, T> {
    fn dim(&self) -> usize {
        layout::DIM
    }

    fn rhs(&mut self, t: T, y: &[T], dy: &mut [T]) -> Result<()> {
        let f = self.params.forcing_at(t)?;
        let (s, o) = Self::unpack(y);
        let m = self.measurement(&f, &s);
        let ds = model_rates(&f, &s)?;
        let d_obs = observer_rates(&f, &o, &m, self.params.k1, self.params.k2)?;
        dy.copy_from_slice(&Self::pack(&ds, &d_obs));
        Ok(())
    }

    fn bounds(&self, i: usize) -> Option<(T, T)> {
        match i {
            layout::V | layout::V_HAT => Some((T::zero(), self.params.v_max)),
            _ => Some((T::zero(), T::one())),
        }
    }

    fn component_name(&self, i: usize) -> String {
        layout::NAMES[i].to_string()
    }

    fn check_step(&self, dt: T) -> Result<()> {
        self.params.check_gain_cap(dt)
    }

    fn begin_step(&mut self, t: T, y: &[T]) -> Result<()> {
        if self.mode == MeasurementMode::FiniteDifference {
            let rho = y[layout::RHO];
            // the first step has no history and falls back to the exact rate
            self.held_rate = self.history.map(|(prev_t, prev_rho)| (rho - prev_rho) / (t - prev_t));
            self.history = Some((t, rho));
        }
        Ok(())
    }

    fn auxiliary(&self, t: T, y: &[T]) -> Vec<T> {
        let (s, _) = Self::unpack(y);
        let rate = match self.held_rate {
            Some(rate) => rate,
            None => self.params.gamma_bar(t, s.theta, s.v, s.rho) * (T::one() - s.rho),
        };
        vec![rate]
    }
}

/// One recorded instant of a within-host observer run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OdeSample<T> {
    pub t: T,
    pub state: ModelState<T>,
    pub observer: ObserverState<T>,
    pub measurement: Measurement<T>,
}

impl<T: Real> OdeSample<T> {
    /// Estimation error `ê = θ - θ̂`.
    pub fn error(&self) -> T {
        self.state.theta - self.observer.theta_hat
    }
}

/// Typed view of a coupled run.
#[derive(Clone, Debug, PartialEq)]
pub struct OdeTrajectory<T> {
    pub samples: Vec<OdeSample<T>>,
    pub raw: Trajectory<T>,
}

impl<T: Real> OdeTrajectory<T> {
    pub fn from_raw(raw: Trajectory<T>) -> Self {
        let samples = raw
            .times
            .iter()
            .zip(&raw.states)
            .zip(&raw.auxiliary)
            .map(|((&t, y), aux)| {
                let (state, observer) = CoupledSystem::<T>::unpack(y);
                OdeSample {
                    t,
                    state,
                    observer,
                    measurement: Measurement {
                        v: state.v,
                        rho: state.rho,
                        drho_dt: aux[0],
                    },
                }
            })
            .collect();
        Self { samples, raw }
    }

    pub fn times(&self) -> Vec<T> {
        self.samples.iter().map(|s| s.t).collect()
    }

    pub fn errors(&self) -> Vec<T> {
        self.samples.iter().map(OdeSample::error).collect()
    }
}

/// Integrates truth and observer together from the given initial states.
pub fn run_observer<T: Real>(
    p: &ParameterSet<T>,
    state: ModelState<T>,
    observer: ObserverState<T>,
    mode: MeasurementMode,
    opts: &SimulationOptions<T>,
) -> Result<OdeTrajectory<T>> {
    let mut system = CoupledSystem::new(p, mode);
    let y0 = CoupledSystem::pack(&state, &observer);
    Ok(OdeTrajectory::from_raw(simulate(&mut system, &y0, opts)?))
}

/// Samples closer than this to a singular point of the stability
/// expressions are excluded from the infima.
pub const SINGULAR_TOLERANCE: f64 = 1e-9;

/// Inputs of the convergence conditions at one site and instant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SiteSample<T> {
    pub forcing: PointForcing<T>,
    pub state: ModelState<T>,
    pub observer: ObserverState<T>,
    pub measurement: Measurement<T>,
    pub k1: T,
    pub k2: T,
    /// Sensitivity `∂v/∂θ(0)` estimate, when available.
    pub dv_dtheta: Option<T>,
}

/// Sampled infima of the quantities entering the observer convergence
/// conditions.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionReport<T> {
    pub times: usize,
    pub sites: usize,
    /// Condition (i): `inf α`.
    pub inf_alpha: T,
    pub argmin_alpha: T,
    /// One representative time per run of consecutive samples where
    /// `α ≤ 10⁻⁹ sup α`.
    pub alpha_zero_times: Vec<T>,
    /// Empirical coercivity `inf |γ̄(θ) - γ̄(θ̂)| / |θ - θ̂|`.
    pub coercivity: Option<T>,
    pub coercivity_samples: usize,
    /// Left-hand side of the `k2 ≡ 0` local stability condition.
    pub stability_k1: Option<T>,
    /// Left-hand side of the two-gain local stability condition.
    pub stability_k1k2: Option<T>,
    /// Sensitivity form of the `k2 ≡ 0` condition (needs `∂v/∂θ`).
    pub sensitivity_k1: Option<T>,
    /// Sensitivity form of the two-gain condition.
    pub sensitivity_k1k2: Option<T>,
    /// Samples excluded from the stability infima.
    pub singular_samples: usize,
    /// `inf (k2 |φ2| - k1 φ1)`.
    pub dominance_margin: Option<T>,
}

impl<T: Real> ConditionReport<T> {
    pub fn has_informative_coercivity(&self) -> bool {
        self.coercivity_samples > 0
    }
}

/// Incremental builder of a [`ConditionReport`], fed time by time.
#[derive(Clone, Debug)]
pub struct ConditionAccumulator<T> {
    report: ConditionReport<T>,
    sup_alpha: T,
    alpha_by_time: Vec<(T, T)>,
    current: Option<(T, T)>,
}

impl<T: Real> Default for ConditionAccumulator<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn fold_min<T: Real>(slot: &mut Option<T>, value: T) {
    *slot = Some(match *slot {
        Some(current) => current.min(value),
        None => value,
    });
}

impl<T: Real> ConditionAccumulator<T> {
    pub fn new() -> Self {
        Self {
            report: ConditionReport {
                times: 0,
                sites: 0,
                inf_alpha: T::infinity(),
                argmin_alpha: T::zero(),
                alpha_zero_times: Vec::new(),
                coercivity: None,
                coercivity_samples: 0,
                stability_k1: None,
                stability_k1k2: None,
                sensitivity_k1: None,
                sensitivity_k1k2: None,
                singular_samples: 0,
                dominance_margin: None,
            },
            sup_alpha: T::zero(),
            alpha_by_time: Vec::new(),
            current: None,
        }
    }

    pub fn begin_time(&mut self, t: T) {
        self.finish_time();
        self.current = Some((t, T::infinity()));
    }

    fn finish_time(&mut self) {
        if let Some(entry) = self.current.take() {
            self.alpha_by_time.push(entry);
            self.report.times += 1;
        }
    }

    pub fn push_site(&mut self, s: &SiteSample<T>) {
        let r = &mut self.report;
        r.sites += 1;
        let f = &s.forcing;
        let alpha = f.alpha;
        let time = self.current.as_mut().expect("begin_time must precede push_site");
        time.1 = time.1.min(alpha);
        if alpha < r.inf_alpha {
            r.inf_alpha = alpha;
            r.argmin_alpha = time.0;
        }
        self.sup_alpha = self.sup_alpha.max(alpha);

        let theta = s.state.theta;
        let theta_hat = s.observer.theta_hat;
        let m = &s.measurement;
        let gap = theta - theta_hat;
        if gap.abs() > T::lit(1e-12) {
            let ratio = (f.gamma_bar(theta, m.v, m.rho) - f.gamma_bar(theta_hat, m.v, m.rho)).abs() / gap.abs();
            fold_min(&mut r.coercivity, ratio);
            r.coercivity_samples += 1;
        }

        let phi1 = volume_correction(f.epsilon, theta_hat, s.observer.v_hat, m.v);
        let phi2 = rot_innovation(f, theta_hat, m);
        fold_min(&mut r.dominance_margin, s.k2 * phi2.abs() - s.k1 * phi1);

        let tol = T::lit(SINGULAR_TOLERANCE);
        let k1_delta = s.k1 * delta_indicator(theta_hat);
        let alpha_w = alpha * f.w;
        let one_minus_theta_w = T::one() - theta * f.w;
        let v = s.state.v;
        let singular = v < tol
            || one_minus_theta_w.abs() < tol
            || (k1_delta != T::zero() && alpha.abs() < T::lit(1e-300).max(T::min_positive_value()));
        if singular {
            r.singular_samples += 1;
        } else {
            // the fraction carries k1 δ(θ̂) as a factor, so it vanishes with it
            let fraction = if k1_delta == T::zero() {
                T::zero()
            } else {
                let numerator = k1_delta * f.beta(theta) * (f.eta * f.v_max * (T::one() + f.epsilon - theta) - v);
                numerator / (alpha * f.eta * v * f.v_max * one_minus_theta_w)
            };
            let base = alpha_w + k1_delta + fraction;
            fold_min(&mut r.stability_k1, base);
            fold_min(&mut r.stability_k1k2, base + s.k2 * phi2);
        }

        if let Some(dv) = s.dv_dtheta {
            if v >= tol && dv.is_finite() {
                let lead = (v + (T::one() + f.epsilon - theta) * dv) / v * k1_delta + alpha_w;
                fold_min(&mut r.sensitivity_k1, lead);
                fold_min(&mut r.sensitivity_k1k2, lead + s.k2 * phi2);
            }
        }
    }

    pub fn finish(mut self) -> ConditionReport<T> {
        self.finish_time();
        let threshold = T::lit(1e-9) * self.sup_alpha;
        let mut run: Option<(T, T)> = None;
        for &(t, alpha) in &self.alpha_by_time {
            if alpha <= threshold {
                run = Some(match run {
                    Some((best_t, best)) if best <= alpha => (best_t, best),
                    _ => (t, alpha),
                });
            } else if let Some((best_t, _)) = run.take() {
                self.report.alpha_zero_times.push(best_t);
            }
        }
        if let Some((best_t, _)) = run {
            self.report.alpha_zero_times.push(best_t);
        }
        self.report
    }
}

/// Condition diagnostics of a within-host observer run.
pub fn check_conditions<T: Real>(samples: &[OdeSample<T>], p: &ParameterSet<T>) -> Result<ConditionReport<T>> {
    let mut acc = ConditionAccumulator::new();
    for sample in samples {
        acc.begin_time(sample.t);
        acc.push_site(&SiteSample {
            forcing: p.forcing_at(sample.t)?,
            state: sample.state,
            observer: sample.observer,
            measurement: sample.measurement,
            k1: p.k1,
            k2: p.k2,
            dv_dtheta: None,
        });
    }
    Ok(acc.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn table1() -> ParameterSet<f64> {
        ParameterSet::table1()
    }

    fn exact(t: f64, s: &ModelState<f64>, p: &ParameterSet<f64>) -> Measurement<f64> {
        make_measurement(t, s, MeasurementMode::Exact, None, p).unwrap()
    }

    #[test]
    fn model_rates_vanish_with_forcing() {
        let s = ModelState::new(0.4, 0.3, 0.2);
        assert_eq!(model_rhs(0.75, &s, &table1()).unwrap(), ModelState::default());
    }

    #[test]
    fn volume_equilibrium_and_full_rot() {
        let p = table1();
        let theta = 0.3;
        let v_eq = p.eta(0.1) * p.v_max * (1.0 + p.epsilon - theta);
        let rates = model_rhs(0.1, &ModelState::new(theta, v_eq, 1.0), &p).unwrap();
        assert!(rates.v.abs() < 1e-15);
        assert_eq!(rates.rho, 0.0);
    }

    #[test]
    fn no_rot_without_berry() {
        let rates = model_rhs(0.1, &ModelState::new(0.6, 0.0, 0.3), &table1()).unwrap();
        assert_eq!(rates.rho, 0.0);
    }

    #[test]
    fn capacity_collapse_is_reported() {
        let mut p = table1();
        p.epsilon = 0.0;
        assert!(matches!(
            model_rhs(0.1, &ModelState::new(1.0, 0.2, 0.1), &p),
            Err(Error::CapacityCollapse { .. })
        ));
    }

    #[test]
    fn phi1_values() {
        let p = table1();
        let m = Measurement {
            v: 0.3,
            rho: 0.1,
            drho_dt: 0.0,
        };
        assert_relative_eq!(phi1(0.1, 0.5, 0.6, &m, &p), 0.25005, max_relative = 1e-12);
        let bigger = Measurement { v: 0.7, ..m };
        assert_eq!(phi1(0.1, 0.5, 0.6, &bigger, &p), 0.0);
        assert_eq!(phi1(0.1, 1.0, 0.6, &m, &p), 0.0);
        assert_eq!(phi1(0.1, 0.5, 0.0, &m, &p), 0.0);
    }

    #[test]
    fn phi2_values() {
        let p = table1();
        let s = ModelState::new(0.75, 0.5, 0.25);
        let m = exact(0.05, &s, &p);
        assert!(phi2(0.05, 0.75, &m, &p).unwrap().abs() < 1e-15);
        assert_eq!(phi2(0.05, 0.0, &m, &p).unwrap(), 0.0);
        // independent route: difference of γ̄ evaluated directly
        let expected = (1.0 - 0.25) * (p.gamma_bar(0.05, 0.75, 0.5, 0.25) - p.gamma_bar(0.05, 0.5, 0.5, 0.25));
        assert_relative_eq!(phi2(0.05, 0.5, &m, &p).unwrap(), expected, max_relative = 1e-12);
        // γ̄ is linear in θ: (1 - ρ) b3 s3 v (θ - θ̂)
        let linear = 0.75 * p.b3 * 0.49 * 0.5 * 0.25;
        assert_relative_eq!(phi2(0.05, 0.5, &m, &p).unwrap(), linear, max_relative = 1e-12);
    }

    #[test]
    fn phi3_values() {
        let p = table1();
        assert_eq!(phi3(0.3, 0.5, 0.0, &p).unwrap(), 1.0);
        let eq = (1.0 + p.epsilon - 0.5) * p.eta(0.3) * p.v_max;
        assert!(phi3(0.3, 0.5, eq, &p).unwrap().abs() < 1e-15);
        // capacity (1.0001 - 0.5) / 1.0001
        assert_relative_eq!(phi3(0.3, 0.5, 0.5, &p).unwrap(), 1.0 - 0.5 * 1.0001 / 0.5001, max_relative = 1e-9);
        assert_relative_eq!(phi3(0.3, 0.5, 0.5, &p).unwrap(), 9.998e-5, max_relative = 1e-4);
    }

    #[test]
    fn natural_observer_at_truth_copies_model() {
        let p = table1();
        let s = ModelState::new(0.4, 0.3, 0.2);
        let m = exact(0.33, &s, &p);
        let model = model_rhs(0.33, &s, &p).unwrap();
        let obs = observer_rhs(0.33, &ObserverState::new(0.4, 0.3), &m, &p).unwrap();
        assert_eq!(obs.theta_hat, model.theta);
        assert_eq!(obs.v_hat, model.v);
        let zero = observer_rhs(0.75, &ObserverState::new(0.4, 0.3), &m, &p).unwrap();
        assert_eq!(zero, ObserverState::default());
    }

    #[test]
    fn rot_gain_adds_gamma_difference() {
        let natural = table1();
        let p = natural.with_gains(0.0, 1e3);
        let s = ModelState::new(0.6, 0.4, 0.2);
        let o = ObserverState::new(0.3, 0.4);
        let t = 0.12;
        let m = exact(t, &s, &p);
        let base = observer_rhs(t, &o, &m, &natural).unwrap().theta_hat;
        let corrected = observer_rhs(t, &o, &m, &p).unwrap().theta_hat;
        let expected = 1e3 * (1.0 - s.rho) * (p.gamma_bar(t, s.theta, s.v, s.rho) - p.gamma_bar(t, o.theta_hat, s.v, s.rho));
        assert_relative_eq!(corrected - base, expected, max_relative = 1e-9);
    }

    #[test]
    fn measurement_modes() {
        let p = table1();
        let full = ModelState::new(0.5, 0.4, 1.0);
        assert_eq!(exact(0.1, &full, &p).drho_dt, 0.0);
        let s = ModelState::new(0.5, 0.4, 0.3);
        let fd = make_measurement(0.2, &s, MeasurementMode::FiniteDifference, Some((&s, 0.1)), &p).unwrap();
        assert_eq!(fd.drho_dt, 0.0);
        assert_eq!(
            make_measurement(0.2, &s, MeasurementMode::FiniteDifference, None, &p),
            Err(Error::MissingHistory)
        );
    }

    #[test]
    fn finite_difference_tracks_exact_rate() {
        let p = table1();
        let opts = SimulationOptions {
            record_stride: 1,
            t1: 0.3,
            ..SimulationOptions::default()
        };
        let traj = run_observer(
            &p,
            ModelState::new(0.5, 0.5, 0.25),
            ObserverState::new(0.0, 0.5),
            MeasurementMode::Exact,
            &opts,
        )
        .unwrap();
        let mut worst: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for pair in traj.samples.windows(2) {
            let fd = make_measurement(
                pair[1].t,
                &pair[1].state,
                MeasurementMode::FiniteDifference,
                Some((&pair[0].state, pair[0].t)),
                &p,
            )
            .unwrap();
            worst = worst.max((fd.drho_dt - pair[1].measurement.drho_dt).abs());
            scale = scale.max(pair[1].measurement.drho_dt.abs());
        }
        // backward difference error is dt/2 · |ρ''|; allow a generous O(dt) constant
        assert!(worst <= 1e-4 * (1.0 + 100.0 * scale), "worst = {worst}, scale = {scale}");
    }

    #[test]
    fn delta_indicator_values() {
        assert_eq!(delta_indicator(0.5), 1.0);
        assert_eq!(delta_indicator(0.0), 0.0);
        assert_eq!(delta_indicator(1.0), 0.0);
        assert_eq!(delta_indicator(-0.2), 0.0);
    }

    #[test]
    fn natural_observer_is_identical_without_error() {
        let p = table1();
        let traj = run_observer(
            &p,
            ModelState::new(0.3, 0.2, 0.1),
            ObserverState::new(0.3, 0.2),
            MeasurementMode::Exact,
            &SimulationOptions::default(),
        )
        .unwrap();
        assert!(traj.errors().iter().all(|&e| e == 0.0));
        let report = check_conditions(&traj.samples, &p).unwrap();
        assert_eq!(report.coercivity_samples, 0);
        assert!(!report.has_informative_coercivity());
    }

    #[test]
    fn dominance_margin_without_volume_gain() {
        let p = table1().with_gains(0.0, 1e3);
        let traj = run_observer(
            &p,
            ModelState::new(0.75, 0.5, 0.25),
            ObserverState::new(0.0, 0.5),
            MeasurementMode::Exact,
            &SimulationOptions::default(),
        )
        .unwrap();
        let report = check_conditions(&traj.samples, &p).unwrap();
        assert!(report.dominance_margin.unwrap() >= 0.0);
    }

    #[test]
    fn singular_samples_are_counted() {
        let p = table1().with_gains(1e3, 0.0);
        let samples = [OdeSample {
            t: 0.1,
            state: ModelState::new(0.4, 0.0, 0.0),
            observer: ObserverState::new(0.2, 0.0),
            measurement: Measurement::default(),
        }];
        let report = check_conditions(&samples, &p).unwrap();
        assert_eq!(report.singular_samples, 1);
        assert_eq!(report.stability_k1, None);
    }
}
