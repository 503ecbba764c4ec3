//! Fixed-step explicit time integration shared by the within-host and the
//! spatial systems.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// A first-order system `y' = f(t, y)` on a flat state vector.
pub trait OdeSystem<T: Real> {
    fn dim(&self) -> usize;

    fn rhs(&mut self, t: T, y: &[T], dy: &mut [T]) -> Result<()>;

    /// Invariant box of component `i`, if any.
    fn bounds(&self, _i: usize) -> Option<(T, T)> {
        None
    }

    fn component_name(&self, i: usize) -> String {
        format!("y[{i}]")
    }

    /// Rejects step sizes the system cannot be integrated with.
    fn check_step(&self, _dt: T) -> Result<()> {
        Ok(())
    }

    /// Called with the accepted state at the start of every step (and once
    /// more at the final time) before anything is recorded.
    fn begin_step(&mut self, _t: T, _y: &[T]) -> Result<()> {
        Ok(())
    }

    /// Extra per-sample quantities recorded next to the state.
    fn auxiliary(&self, _t: T, _y: &[T]) -> Vec<T> {
        Vec::new()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Scheme {
    #[default]
    Euler,
    Rk4,
}

impl Scheme {
    pub fn order(self) -> u32 {
        match self {
            Scheme::Euler => 1,
            Scheme::Rk4 => 4,
        }
    }
}

/// Reusable stage buffers.
#[derive(Clone, Debug, Default)]
pub struct Stepper<T> {
    k1: Vec<T>,
    k2: Vec<T>,
    k3: Vec<T>,
    k4: Vec<T>,
    stage: Vec<T>,
}

impl<T: Real> Stepper<T> {
    pub fn new(dim: usize) -> Self {
        Self {
            k1: vec![T::zero(); dim],
            k2: vec![T::zero(); dim],
            k3: vec![T::zero(); dim],
            k4: vec![T::zero(); dim],
            stage: vec![T::zero(); dim],
        }
    }

    fn resize(&mut self, dim: usize) {
        for buf in [&mut self.k1, &mut self.k2, &mut self.k3, &mut self.k4, &mut self.stage] {
            buf.resize(dim, T::zero());
        }
    }

    pub fn step<S: OdeSystem<T> + ?Sized>(&mut self, scheme: Scheme, sys: &mut S, t: T, y: &mut [T], dt: T) -> Result<()> {
        match scheme {
            Scheme::Euler => self.euler(sys, t, y, dt),
            Scheme::Rk4 => self.rk4(sys, t, y, dt),
        }
    }

    /// `y ← y + dt f(t, y)`
    pub fn euler<S: OdeSystem<T> + ?Sized>(&mut self, sys: &mut S, t: T, y: &mut [T], dt: T) -> Result<()> {
        self.resize(y.len());
        eval(sys, t, y, &mut self.k1)?;
        for (yi, ki) in y.iter_mut().zip(&self.k1) {
            *yi = *yi + dt * *ki;
        }
        Ok(())
    }

    /// Classical four-stage Runge-Kutta update.
    pub fn rk4<S: OdeSystem<T> + ?Sized>(&mut self, sys: &mut S, t: T, y: &mut [T], dt: T) -> Result<()> {
        self.resize(y.len());
        let half = dt / T::lit(2.0);

        eval(sys, t, y, &mut self.k1)?;
        for ((s, &y), &k) in self.stage.iter_mut().zip(y.iter()).zip(&self.k1) {
            *s = y + half * k;
        }
        eval(sys, t + half, &self.stage, &mut self.k2)?;
        for ((s, &y), &k) in self.stage.iter_mut().zip(y.iter()).zip(&self.k2) {
            *s = y + half * k;
        }
        eval(sys, t + half, &self.stage, &mut self.k3)?;
        for ((s, &y), &k) in self.stage.iter_mut().zip(y.iter()).zip(&self.k3) {
            *s = y + dt * k;
        }
        eval(sys, t + dt, &self.stage, &mut self.k4)?;

        let sixth = dt / T::lit(6.0);
        let two = T::lit(2.0);
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = *yi + sixth * (self.k1[i] + two * self.k2[i] + two * self.k3[i] + self.k4[i]);
        }
        Ok(())
    }
}

fn eval<T: Real, S: OdeSystem<T> + ?Sized>(sys: &mut S, t: T, y: &[T], dy: &mut [T]) -> Result<()> {
    sys.rhs(t, y, dy)?;
    if let Some(i) = dy.iter().position(|d| !d.is_finite()) {
        return Err(Error::NonFinite {
            component: sys.component_name(i),
            t: t.as_f64(),
        });
    }
    Ok(())
}

/// One explicit Euler step, returning the new state.
pub fn step_euler<T: Real, S: OdeSystem<T> + ?Sized>(sys: &mut S, t: T, y: &[T], dt: T) -> Result<Vec<T>> {
    let mut out = y.to_vec();
    Stepper::new(y.len()).euler(sys, t, &mut out, dt)?;
    Ok(out)
}

/// One classical Runge-Kutta step, returning the new state.
pub fn step_rk4<T: Real, S: OdeSystem<T> + ?Sized>(sys: &mut S, t: T, y: &[T], dt: T) -> Result<Vec<T>> {
    let mut out = y.to_vec();
    Stepper::new(y.len()).rk4(sys, t, &mut out, dt)?;
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimulationOptions<T> {
    pub t0: T,
    pub t1: T,
    pub dt: T,
    pub scheme: Scheme,
    /// Record every `record_stride`-th step.
    pub record_stride: usize,
    /// Project each accepted state back onto the component boxes.
    pub clamp: bool,
    /// Largest tolerated excursion outside a box before clamping.
    pub overshoot_limit: Option<T>,
}

impl<T: Real> Default for SimulationOptions<T> {
    fn default() -> Self {
        Self {
            t0: T::zero(),
            t1: T::one(),
            dt: T::lit(1e-4),
            scheme: Scheme::Euler,
            record_stride: 10,
            clamp: true,
            overshoot_limit: Some(T::lit(1e-6)),
        }
    }
}

impl<T: Real> SimulationOptions<T> {
    /// Number of steps; the span must be a whole number of steps.
    pub fn steps(&self) -> Result<usize> {
        let span = self.t1 - self.t0;
        let bad = || Error::InvalidSpan {
            t0: self.t0.as_f64(),
            t1: self.t1.as_f64(),
            dt: self.dt.as_f64(),
        };
        if !(self.dt > T::zero()) || !(span >= T::zero()) || !span.is_finite() {
            return Err(bad());
        }
        let n = (span / self.dt).round();
        if (n * self.dt - span).abs() > T::lit(1e-6) * self.dt {
            return Err(bad());
        }
        n.to_usize().ok_or_else(bad)
    }

    /// `t0 + k dt`, computed without accumulating rounding.
    #[inline]
    pub fn time(&self, k: usize) -> T {
        self.t0 + T::lit(k as f64) * self.dt
    }

    pub fn sample_count(&self) -> Result<usize> {
        Ok(self.steps()? / self.record_stride.max(1) + 1)
    }
}

/// Summary of a finished integration.
#[derive(Clone, Debug, PartialEq)]
pub struct RunStats<T> {
    pub steps: usize,
    pub samples: usize,
    /// Largest pre-clamp excursion of each component outside its box.
    pub overshoot: Vec<T>,
}

impl<T: Real> RunStats<T> {
    pub fn max_overshoot(&self) -> T {
        self.overshoot.iter().copied().fold(T::zero(), T::max)
    }
}

/// Recorded samples of a run.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<T> {
    pub times: Vec<T>,
    pub states: Vec<Vec<T>>,
    pub auxiliary: Vec<Vec<T>>,
    pub stats: RunStats<T>,
}

impl<T: Real> Trajectory<T> {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Time series of one component.
    pub fn component(&self, i: usize) -> Vec<T> {
        self.states.iter().map(|s| s[i]).collect()
    }

    pub fn last_state(&self) -> Option<&[T]> {
        self.states.last().map(Vec::as_slice)
    }
}

/// Integrates from `y0` and records every `record_stride`-th state.
pub fn simulate<T: Real, S: OdeSystem<T> + ?Sized>(sys: &mut S, y0: &[T], opts: &SimulationOptions<T>) -> Result<Trajectory<T>> {
    let capacity = opts.sample_count()?;
    let mut times = Vec::with_capacity(capacity);
    let mut states = Vec::with_capacity(capacity);
    let mut auxiliary = Vec::with_capacity(capacity);
    let stats = simulate_with(sys, y0, opts, |t, y, aux| {
        times.push(t);
        states.push(y.to_vec());
        auxiliary.push(aux.to_vec());
        Ok(())
    })?;
    Ok(Trajectory {
        times,
        states,
        auxiliary,
        stats,
    })
}

/// Streaming variant of [`simulate`]: recorded samples are handed to `sink`
/// as `(t, state, auxiliary)` instead of being stored.
pub fn simulate_with<T, S, F>(sys: &mut S, y0: &[T], opts: &SimulationOptions<T>, mut sink: F) -> Result<RunStats<T>>
where
    T: Real,
    S: OdeSystem<T> + ?Sized,
    F: FnMut(T, &[T], &[T]) -> Result<()>,
{
    let dim = sys.dim();
    if y0.len() != dim {
        return Err(Error::ShapeMismatch {
            expected: dim,
            got: y0.len(),
        });
    }
    let steps = opts.steps()?;
    sys.check_step(opts.dt)?;
    let stride = opts.record_stride.max(1);

    let mut y = y0.to_vec();
    let mut stepper = Stepper::new(dim);
    let mut overshoot = vec![T::zero(); dim];
    let mut samples = 0;

    for k in 0..=steps {
        let t = opts.time(k);
        sys.begin_step(t, &y)?;
        if k % stride == 0 {
            let aux = sys.auxiliary(t, &y);
            sink(t, &y, &aux)?;
            samples += 1;
        }
        if k == steps {
            break;
        }
        stepper.step(opts.scheme, sys, t, &mut y, opts.dt)?;
        let t_next = opts.time(k + 1);
        for (i, yi) in y.iter_mut().enumerate() {
            if !yi.is_finite() {
                return Err(Error::NonFinite {
                    component: sys.component_name(i),
                    t: t_next.as_f64(),
                });
            }
            let Some((lo, hi)) = sys.bounds(i) else {
                continue;
            };
            let excess = (lo - *yi).max(*yi - hi).max(T::zero());
            if excess > overshoot[i] {
                overshoot[i] = excess;
            }
            if let Some(limit) = opts.overshoot_limit {
                if excess > limit {
                    return Err(Error::Overshoot {
                        component: sys.component_name(i),
                        t: t_next.as_f64(),
                        amount: excess.as_f64(),
                        limit: limit.as_f64(),
                    });
                }
            }
            if opts.clamp {
                *yi = yi.max(lo).min(hi);
            }
        }
    }

    Ok(RunStats {
        steps,
        samples,
        overshoot,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    struct Decay;

    impl OdeSystem<f64> for Decay {
        fn dim(&self) -> usize {
            1
        }
        fn rhs(&mut self, _t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
            dy[0] = -y[0];
            Ok(())
        }
    }

    struct Frozen;

    impl OdeSystem<f64> for Frozen {
        fn dim(&self) -> usize {
            2
        }
        fn rhs(&mut self, _t: f64, _y: &[f64], dy: &mut [f64]) -> Result<()> {
            dy.fill(0.0);
            Ok(())
        }
    }

    struct Blowup;

    impl OdeSystem<f64> for Blowup {
        fn dim(&self) -> usize {
            2
        }
        fn rhs(&mut self, _t: f64, _y: &[f64], dy: &mut [f64]) -> Result<()> {
            dy[0] = 0.0;
            dy[1] = f64::NAN;
            Ok(())
        }
        fn component_name(&self, i: usize) -> String {
            ["calm", "wild"][i].to_string()
        }
    }

    struct Ramp;

    impl OdeSystem<f64> for Ramp {
        fn dim(&self) -> usize {
            1
        }
        fn rhs(&mut self, _t: f64, _y: &[f64], dy: &mut [f64]) -> Result<()> {
            dy[0] = 1.0;
            Ok(())
        }
        fn bounds(&self, _i: usize) -> Option<(f64, f64)> {
            Some((0.0, 0.5))
        }
    }

    #[test]
    fn zero_rhs_keeps_state() {
        let y = [0.3, -2.0];
        assert_eq!(step_euler(&mut Frozen, 0.0, &y, 0.1).unwrap(), y);
        assert_eq!(step_rk4(&mut Frozen, 0.0, &y, 0.1).unwrap(), y);
    }

    #[test]
    fn single_euler_decay_step() {
        let y = step_euler(&mut Decay, 0.0, &[1.0], 1e-4).unwrap();
        assert_eq!(y[0], 1.0 - 1e-4);
        assert_relative_eq!(y[0], 0.9999, max_relative = 1e-15);
    }

    #[test]
    fn euler_decay_over_a_year() {
        let opts = SimulationOptions {
            record_stride: 1000,
            overshoot_limit: None,
            ..SimulationOptions::default()
        };
        let traj = simulate(&mut Decay, &[1.0], &opts).unwrap();
        let last = traj.last_state().unwrap()[0];
        // global error of Euler on y' = -y is about dt/2 · e^{-1}
        assert!((last - (-1f64).exp()).abs() / (-1f64).exp() < 1e-4);
        assert_eq!(traj.len(), 11);
    }

    #[test]
    fn rk4_decay_over_a_year() {
        let opts = SimulationOptions {
            dt: 1e-2,
            scheme: Scheme::Rk4,
            record_stride: 1,
            overshoot_limit: None,
            ..SimulationOptions::default()
        };
        let traj = simulate(&mut Decay, &[1.0], &opts).unwrap();
        let last = traj.last_state().unwrap()[0];
        assert!((last - (-1f64).exp()).abs() < 1e-8);
    }

    #[test]
    fn rk4_and_euler_agree_to_second_order() {
        for dt in [1e-2, 5e-3] {
            let e = step_euler(&mut Decay, 0.0, &[1.0], dt).unwrap()[0];
            let r = step_rk4(&mut Decay, 0.0, &[1.0], dt).unwrap()[0];
            // the local difference is the dt²/2 Taylor term
            assert_relative_eq!(r - e, dt * dt / 2.0, max_relative = dt);
        }
    }

    #[test]
    fn non_finite_derivative_names_component() {
        let err = step_euler(&mut Blowup, 0.0, &[0.0, 0.0], 0.1).unwrap_err();
        assert_eq!(
            err,
            Error::NonFinite {
                component: "wild".into(),
                t: 0.0
            }
        );
    }

    #[test]
    fn zero_span_gives_single_sample() {
        let opts = SimulationOptions {
            t1: 0.0,
            ..SimulationOptions::default()
        };
        let traj = simulate(&mut Decay, &[1.0], &opts).unwrap();
        assert_eq!(traj.times, vec![0.0]);
        assert_eq!(traj.states, vec![vec![1.0]]);
    }

    #[test]
    fn sample_count_matches_stride() {
        let opts = SimulationOptions::<f64> {
            record_stride: 7,
            overshoot_limit: None,
            ..SimulationOptions::default()
        };
        let traj = simulate(&mut Decay, &[1.0], &opts).unwrap();
        assert_eq!(traj.len(), 10_000 / 7 + 1);
        assert_eq!(traj.len(), opts.sample_count().unwrap());
        assert!(traj.times.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(traj.times[0], 0.0);
    }

    #[test]
    fn non_integral_span_is_rejected() {
        let opts = SimulationOptions::<f64> {
            dt: 0.3,
            ..SimulationOptions::default()
        };
        assert!(matches!(opts.steps(), Err(Error::InvalidSpan { .. })));
    }

    #[test]
    fn overshoot_is_recorded_and_clamped() {
        let opts = SimulationOptions {
            dt: 0.1,
            record_stride: 1,
            overshoot_limit: None,
            ..SimulationOptions::default()
        };
        let traj = simulate(&mut Ramp, &[0.45], &opts).unwrap();
        assert!(traj.component(0).iter().all(|&y| y <= 0.5));
        assert_relative_eq!(traj.stats.overshoot[0], 0.1, max_relative = 1e-9);
    }

    #[test]
    fn overshoot_beyond_limit_fails() {
        let opts = SimulationOptions {
            dt: 0.1,
            ..SimulationOptions::default()
        };
        assert!(matches!(
            simulate(&mut Ramp, &[0.45], &opts),
            Err(Error::Overshoot { .. })
        ));
    }
}
