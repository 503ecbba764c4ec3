//! Seasonal forcing coefficients, the fungicide control signal and the
//! admissibility checks run on a parameter set.
//!
//! Time is normalized so that one cultivation year is `t ∈ [0, 1]`. Every
//! seasonal coefficient has the shape
//!
//! ```text
//! s_i(t) = (1 - cos(c_i t)) (t - d_i)^2
//! α(t)          = p1(t) + b1 s1(t)
//! β(t, θ)       = b2 s2(t) p2(θ)
//! γ̄(t, θ, v, ρ) = b3 s3(t) (θ - κ ρ) v
//! u(t)          = sin²(ω1 (t - φ1)²) exp(-ω2 (t - φ2)²)
//! w(t)          = 1 / (1 - σ u(t))
//! ```
//!
//! The spatial variants multiply `b_i` by radial weights `q_i(x)` and the
//! control by `sin²(‖M (x - x0)‖²)`.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::{sq, Real};

/// Selector for the volume-growth weight `p2(θ)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum VolumeWeight {
    /// `2 - θ`
    #[default]
    Linear,
    /// `(2 - θ)²`
    Quadratic,
}

impl VolumeWeight {
    #[inline]
    pub fn eval<T: Real>(self, theta: T) -> T {
        let y = T::lit(2.0) - theta;
        match self {
            VolumeWeight::Linear => y,
            VolumeWeight::Quadratic => y * y,
        }
    }
}

/// Baseline inhibition growth `p1(t)`.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub enum BaseRate<T> {
    #[default]
    Zero,
    Constant(T),
}

impl<T: Real> BaseRate<T> {
    #[inline]
    pub fn eval(self, _t: T) -> T {
        match self {
            BaseRate::Zero => T::zero(),
            BaseRate::Constant(c) => c,
        }
    }
}

/// Functional form of the maximal-volume modulation `η(t)`.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub enum EtaMode<T> {
    /// `1 / (1 + ε)`, the largest value the volume equation admits.
    #[default]
    Regularized,
    Constant(T),
}

/// All non-spatial model, control and observer constants.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterSet<T> {
    pub b1: T,
    pub b2: T,
    pub b3: T,
    pub c1: T,
    pub c2: T,
    pub c3: T,
    pub d1: T,
    pub d2: T,
    pub d3: T,
    pub omega1: T,
    pub omega2: T,
    pub phase1: T,
    pub phase2: T,
    /// Penetration-inhibition bound, `w` is finite iff `σ u < 1`.
    pub sigma: T,
    /// Volume regularizer.
    pub epsilon: T,
    /// Lower bound of `η(t)`.
    pub eta_star: T,
    pub eta_mode: EtaMode<T>,
    pub v_max: T,
    /// Rot feedback constant.
    pub kappa: T,
    pub k1: T,
    pub k2: T,
    pub p1: BaseRate<T>,
    pub p2: VolumeWeight,
    pub dt: T,
    /// Seed for the anisotropy matrices of spatial runs.
    pub seed: u64,
}

/// `v_max ln(10⁵ v_max (1 - ε η*)) / 2`
pub fn default_b2<T: Real>(v_max: T, epsilon: T, eta_star: T) -> T {
    v_max * (T::lit(1e5) * v_max * (T::one() - epsilon * eta_star)).ln() / T::lit(2.0)
}

/// `v_max ln(10⁵ v_max)`
pub fn default_b3<T: Real>(v_max: T) -> T {
    v_max * (T::lit(1e5) * v_max).ln()
}

impl<T: Real> Default for ParameterSet<T> {
    fn default() -> Self {
        Self::table1()
    }
}

impl<T: Real> ParameterSet<T> {
    /// Reference parameterization of the within-host simulations.
    pub fn table1() -> Self {
        let epsilon = T::lit(1e-4);
        let v_max = T::one();
        let eta_star = T::one() / (T::one() + epsilon);
        let ten_pi = T::lit(10.0) * T::PI();
        Self {
            b1: T::lit(5.0) * T::LN_10(),
            b2: default_b2(v_max, epsilon, eta_star),
            b3: default_b3(v_max),
            c1: ten_pi,
            c2: ten_pi,
            c3: ten_pi,
            d1: T::lit(0.75),
            d2: T::lit(0.75),
            d3: T::lit(0.75),
            omega1: T::lit(25.0) * T::PI(),
            omega2: T::lit(10.0),
            phase1: T::lit(0.6),
            phase2: T::lit(0.4),
            sigma: T::lit(0.9),
            epsilon,
            eta_star,
            eta_mode: EtaMode::Regularized,
            v_max,
            kappa: T::one(),
            k1: T::zero(),
            k2: T::zero(),
            p1: BaseRate::Zero,
            p2: VolumeWeight::Linear,
            dt: T::lit(1e-4),
            seed: 42,
        }
    }

    /// Copy with observer gains replaced.
    pub fn with_gains(&self, k1: T, k2: T) -> Self {
        Self {
            k1,
            k2,
            ..self.clone()
        }
    }

    /// Largest gain an explicit step of size `dt` tolerates: `1 / (10 dt)`.
    pub fn gain_cap(&self, dt: T) -> T {
        T::one() / (T::lit(10.0) * dt)
    }

    /// Fails when a gain exceeds `1/(10 dt)`. Gains sitting on the cap are
    /// accepted up to a relative rounding slack of `1e-9`.
    pub fn check_gain_cap(&self, dt: T) -> Result<()> {
        let cap = self.gain_cap(dt);
        let gain = self.k1.max(self.k2);
        if gain > cap * (T::one() + T::lit(1e-9)) {
            return Err(Error::GainCap {
                gain: gain.as_f64(),
                cap: cap.as_f64(),
            });
        }
        Ok(())
    }

    /// Control effort `u(t) ∈ [0, 1]`.
    pub fn control(&self, t: T) -> T {
        let phase = sq(t - self.phase1);
        let envelope = (-self.omega2 * sq(t - self.phase2)).exp();
        sq((self.omega1 * phase).sin()) * envelope
    }

    /// `1 / (1 - σ u)` for a given control value.
    pub fn w_of_control(&self, t: T, u: T) -> Result<T> {
        let sigma_u = self.sigma * u;
        if !(sigma_u < T::one()) {
            return Err(Error::SingularControlWeight {
                t: t.as_f64(),
                sigma_u: sigma_u.as_f64(),
            });
        }
        Ok(T::one() / (T::one() - sigma_u))
    }

    pub fn w(&self, t: T) -> Result<T> {
        self.w_of_control(t, self.control(t))
    }

    /// Inhibition growth rate `α(t)`.
    pub fn alpha(&self, t: T) -> T {
        self.p1.eval(t) + self.b1 * seasonal_factor(self.c1, self.d1, t)
    }

    /// Volume growth rate `β(t, θ)`; nonincreasing in `θ` on `[0, 1]`.
    pub fn beta(&self, t: T, theta: T) -> T {
        self.b2 * seasonal_factor(self.c2, self.d2, t) * self.p2.eval(theta)
    }

    /// Rot rate `γ̄(t, θ, v, ρ)`.
    pub fn gamma_bar(&self, t: T, theta: T, v: T, rho: T) -> T {
        self.b3 * seasonal_factor(self.c3, self.d3, t) * (theta - self.kappa * rho) * v
    }

    pub fn eta(&self, _t: T) -> T {
        match self.eta_mode {
            EtaMode::Regularized => T::one() / (T::one() + self.epsilon),
            EtaMode::Constant(c) => c,
        }
    }

    /// Time-only parts of every coefficient.
    pub fn seasonal(&self, t: T) -> Seasonal<T> {
        Seasonal {
            t,
            control: self.control(t),
            base_rate: self.p1.eval(t),
            s1: seasonal_factor(self.c1, self.d1, t),
            s2: seasonal_factor(self.c2, self.d2, t),
            s3: seasonal_factor(self.c3, self.d3, t),
            eta: self.eta(t),
        }
    }

    /// Coefficients at a site with the given spatial weights.
    pub fn local_forcing(&self, seasonal: &Seasonal<T>, weights: &SiteWeights<T>) -> Result<PointForcing<T>> {
        let u = weights.control * seasonal.control;
        let w = self.w_of_control(seasonal.t, u)?;
        Ok(PointForcing {
            alpha: seasonal.base_rate + self.b1 * weights.q1 * seasonal.s1,
            w,
            beta_amp: self.b2 * weights.q2 * seasonal.s2,
            gamma_amp: self.b3 * weights.q3 * seasonal.s3,
            eta: seasonal.eta,
            epsilon: self.epsilon,
            v_max: self.v_max,
            kappa: self.kappa,
            p2: self.p2,
        })
    }

    /// Coefficients of the within-host model at time `t`.
    pub fn forcing_at(&self, t: T) -> Result<PointForcing<T>> {
        self.local_forcing(&self.seasonal(t), &SiteWeights::unit())
    }

    /// Checks every hypothesis the models and observers rely on.
    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        self.validate_into(&mut report);
        report
    }

    fn validate_into(&self, report: &mut ValidationReport) {
        let named = [
            ("b1", self.b1),
            ("b2", self.b2),
            ("b3", self.b3),
            ("c1", self.c1),
            ("c2", self.c2),
            ("c3", self.c3),
            ("d1", self.d1),
            ("d2", self.d2),
            ("d3", self.d3),
            ("omega1", self.omega1),
            ("omega2", self.omega2),
            ("phase1", self.phase1),
            ("phase2", self.phase2),
            ("sigma", self.sigma),
            ("epsilon", self.epsilon),
            ("eta_star", self.eta_star),
            ("v_max", self.v_max),
            ("kappa", self.kappa),
            ("k1", self.k1),
            ("k2", self.k2),
            ("dt", self.dt),
        ];
        let mut all_finite = true;
        for (name, value) in named {
            if !value.is_finite() {
                all_finite = false;
                report.error(Hypothesis::Admissibility, format!("{name} = {value} is not finite"));
            }
        }
        if !all_finite {
            return;
        }

        for (name, value) in [("b1", self.b1), ("b2", self.b2), ("b3", self.b3)] {
            if !(value > T::zero()) {
                report.error(Hypothesis::Admissibility, format!("amplitude {name} = {value} must be > 0"));
            }
        }
        for (name, value) in [("c1", self.c1), ("c2", self.c2), ("c3", self.c3), ("omega1", self.omega1)] {
            if !(value > T::zero()) {
                report.error(Hypothesis::Admissibility, format!("pulsation {name} = {value} must be > 0"));
            }
        }
        if self.omega2 < T::zero() {
            report.error(
                Hypothesis::Admissibility,
                format!("omega2 = {} must be >= 0", self.omega2),
            );
        }
        let unit = |x: T| x >= T::zero() && x <= T::one();
        for (name, value) in [
            ("d1", self.d1),
            ("d2", self.d2),
            ("d3", self.d3),
            ("phase1", self.phase1),
            ("phase2", self.phase2),
        ] {
            if !unit(value) {
                report.error(Hypothesis::Admissibility, format!("{name} = {value} must lie in [0, 1]"));
            }
        }
        if !(self.v_max > T::zero()) {
            report.error(Hypothesis::Admissibility, format!("v_max = {} must be > 0", self.v_max));
        }
        if !(self.dt > T::zero()) {
            report.error(Hypothesis::Admissibility, format!("dt = {} must be > 0", self.dt));
        }

        if self.sigma >= T::one() {
            report.error(
                Hypothesis::ControlWeight,
                format!("sigma = {} makes w = 1/(1 - sigma u) singular at u = 1", self.sigma),
            );
        } else if !(self.sigma > T::zero()) {
            report.error(Hypothesis::Admissibility, format!("sigma = {} must lie in (0, 1)", self.sigma));
        }

        if self.epsilon < T::zero() {
            report.error(Hypothesis::Admissibility, format!("epsilon = {} must be >= 0", self.epsilon));
        } else if self.epsilon > T::lit(0.1) {
            report.warning(
                Hypothesis::Admissibility,
                format!("epsilon = {} is not small compared to 1", self.epsilon),
            );
        }

        // α is nonnegative and bounded.
        if let BaseRate::Constant(c) = self.p1 {
            if !c.is_finite() || c < T::zero() {
                report.error(Hypothesis::BaseRate, format!("p1 = {c} must be finite and >= 0"));
            }
        }

        // η* ∈ (0, 1) and η(t) ∈ [η*, 1/(1+ε)].
        if !(self.eta_star > T::zero() && self.eta_star < T::one()) {
            report.error(
                Hypothesis::VolumeCapacity,
                format!("eta_star = {} must lie in (0, 1)", self.eta_star),
            );
        }
        let eta_hi = T::one() / (T::one() + self.epsilon.max(T::zero()));
        let slack = T::lit(1e-12);
        if let Some(t) = sample_times::<T>(101).find(|&t| {
            let eta = self.eta(t);
            !(eta >= self.eta_star - slack && eta <= eta_hi + slack)
        }) {
            report.error(
                Hypothesis::VolumeCapacity,
                format!(
                    "eta({t}) = {} leaves [eta_star, 1/(1+epsilon)] = [{}, {eta_hi}]",
                    self.eta(t),
                    self.eta_star
                ),
            );
        }

        // β ≥ 0 and nonincreasing in θ.
        let thetas: Vec<T> = (0..=20).map(|i| T::lit(i as f64 / 20.0)).collect();
        'beta: for t in sample_times::<T>(101) {
            let mut previous: Option<T> = None;
            for &theta in &thetas {
                let b = self.beta(t, theta);
                if b < T::zero() {
                    report.error(Hypothesis::VolumeRate, format!("beta({t}, {theta}) = {b} < 0"));
                    break 'beta;
                }
                if let Some(prev) = previous {
                    if b > prev + prev.abs() * T::lit(1e-12) {
                        report.error(
                            Hypothesis::VolumeRate,
                            format!("beta({t}, .) increases in theta near {theta}"),
                        );
                        break 'beta;
                    }
                }
                previous = Some(b);
            }
        }

        // γ̄ vanishes without disease or berry, grows with θ,
        // and decreases with ρ when θ = 0.
        if self.kappa < T::zero() {
            report.error(
                Hypothesis::RotMonotonicity,
                format!("kappa = {} must be >= 0 so that rot slows as rho grows", self.kappa),
            );
        }
        'gamma: for t in sample_times::<T>(101) {
            for &v in &[T::zero(), T::lit(0.5) * self.v_max, self.v_max] {
                if self.gamma_bar(t, T::zero(), v, T::zero()) != T::zero() {
                    report.error(Hypothesis::RotVanishing, format!("gamma_bar({t}, 0, {v}, 0) != 0"));
                    break 'gamma;
                }
                for &rho in &thetas {
                    if self.gamma_bar(t, T::lit(0.5), T::zero(), rho) != T::zero() {
                        report.error(Hypothesis::RotVanishing, format!("gamma_bar({t}, ., 0, {rho}) != 0"));
                        break 'gamma;
                    }
                    let low = self.gamma_bar(t, T::lit(0.25), v, rho);
                    let high = self.gamma_bar(t, T::lit(0.75), v, rho);
                    if high < low {
                        report.error(Hypothesis::RotMonotonicity, format!("gamma_bar({t}, ., {v}, {rho}) decreases in theta"));
                        break 'gamma;
                    }
                }
            }
        }

        // Nonnegative gains.
        for (name, k) in [("k1", self.k1), ("k2", self.k2)] {
            if k < T::zero() {
                report.error(Hypothesis::GainSign, format!("{name} = {k} must be >= 0"));
            }
        }
        if self.dt > T::zero() {
            if let Err(Error::GainCap { gain, cap }) = self.check_gain_cap(self.dt) {
                report.error(
                    Hypothesis::GainCap,
                    format!("max(k1, k2) = {gain} exceeds 1/(10 dt) = {cap}"),
                );
            }
        }
    }
}

/// `(1 - cos(c t)) (t - d)²`
#[inline]
pub fn seasonal_factor<T: Real>(c: T, d: T, t: T) -> T {
    (T::one() - (c * t).cos()) * sq(t - d)
}

fn sample_times<T: Real>(n: usize) -> impl Iterator<Item = T> {
    (0..n).map(move |i| T::lit(i as f64 / (n - 1) as f64))
}

/// Time-only factors of the coefficients, evaluated once per step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Seasonal<T> {
    pub t: T,
    pub control: T,
    pub base_rate: T,
    pub s1: T,
    pub s2: T,
    pub s3: T,
    pub eta: T,
}

/// Space-only multipliers of a site: `q1..q3` and the control's radial factor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SiteWeights<T> {
    pub q1: T,
    pub q2: T,
    pub q3: T,
    pub control: T,
}

impl<T: Real> SiteWeights<T> {
    pub fn unit() -> Self {
        Self {
            q1: T::one(),
            q2: T::one(),
            q3: T::one(),
            control: T::one(),
        }
    }
}

/// Coefficients of the reaction terms at one `(t, x)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointForcing<T> {
    pub alpha: T,
    pub w: T,
    /// `β = beta_amp · p2(θ)`
    pub beta_amp: T,
    /// `γ̄ = gamma_amp · (θ - κ ρ) · v`
    pub gamma_amp: T,
    pub eta: T,
    pub epsilon: T,
    pub v_max: T,
    pub kappa: T,
    pub p2: VolumeWeight,
}

impl<T: Real> PointForcing<T> {
    #[inline]
    pub fn beta(&self, theta: T) -> T {
        self.beta_amp * self.p2.eval(theta)
    }

    #[inline]
    pub fn gamma_bar(&self, theta: T, v: T, rho: T) -> T {
        self.gamma_amp * (theta - self.kappa * rho) * v
    }

    /// Logistic capacity `η v_max (1 + ε - θ)` of the volume equation.
    #[inline]
    pub fn capacity(&self, theta: T) -> Result<T> {
        let gap = T::one() + self.epsilon - theta;
        if !(gap > T::zero()) {
            return Err(Error::CapacityCollapse {
                theta: theta.as_f64(),
                gap: gap.as_f64(),
            });
        }
        Ok(self.eta * self.v_max * gap)
    }
}

/// Which hypothesis a violation refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Hypothesis {
    /// `γ̄ = 0` without disease or without berry.
    RotVanishing,
    /// `γ̄` nondecreasing in `θ`, rot slowing as `ρ` grows.
    RotMonotonicity,
    /// `α ≥ 0` and bounded.
    BaseRate,
    /// `η(t) ∈ [η*, 1/(1+ε)]` with `η* ∈ (0, 1)`.
    VolumeCapacity,
    /// `β ≥ 0` and nonincreasing in `θ`.
    VolumeRate,
    /// Nonnegative diffusivity.
    Diffusion,
    /// Nonnegative observer gains.
    GainSign,
    /// `max(k1, k2) ≤ 1/(10 dt)`.
    GainCap,
    /// `σ sup u < 1`.
    ControlWeight,
    /// Range and finiteness of individual constants.
    Admissibility,
}

impl fmt::Display for Hypothesis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Hypothesis::RotVanishing => f.write_str("rot vanishing"),
            Hypothesis::RotMonotonicity => f.write_str("rot monotonicity"),
            Hypothesis::BaseRate => f.write_str("base rate"),
            Hypothesis::VolumeCapacity => f.write_str("volume capacity"),
            Hypothesis::VolumeRate => f.write_str("volume rate"),
            Hypothesis::Diffusion => f.write_str("diffusion"),
            Hypothesis::GainSign => f.write_str("gain sign"),
            Hypothesis::GainCap => f.write_str("gain cap"),
            Hypothesis::ControlWeight => f.write_str("w singularity"),
            Hypothesis::Admissibility => f.write_str("admissibility"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub hypothesis: Hypothesis,
    pub severity: Severity,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let level = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{level} [{}]: {}", self.hypothesis, self.message)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    fn error(&mut self, hypothesis: Hypothesis, message: String) {
        self.violations.push(Violation {
            hypothesis,
            severity: Severity::Error,
            message,
        });
    }

    fn warning(&mut self, hypothesis: Hypothesis, message: String) {
        self.violations.push(Violation {
            hypothesis,
            severity: Severity::Warning,
            message,
        });
    }

    pub fn errors(&self) -> impl Iterator<Item = &Violation> {
        self.violations.iter().filter(|v| v.severity == Severity::Error)
    }

    pub fn is_valid(&self) -> bool {
        self.errors().next().is_none()
    }

    pub fn has(&self, hypothesis: Hypothesis) -> bool {
        self.violations.iter().any(|v| v.hypothesis == hypothesis)
    }

    /// Converts hard errors into [`Error::InvalidParameters`].
    pub fn into_result(self) -> Result<()> {
        if self.is_valid() {
            return Ok(());
        }
        let joined = self.errors().map(|v| v.to_string()).collect::<Vec<_>>().join("; ");
        Err(Error::InvalidParameters(joined))
    }
}

/// Dense square matrix, row major.
#[derive(Clone, Debug, PartialEq)]
pub struct SquareMatrix<T> {
    pub dim: usize,
    pub entries: Vec<T>,
}

impl<T: Real> SquareMatrix<T> {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            entries: vec![T::zero(); dim * dim],
        }
    }

    pub fn get(&self, row: usize, col: usize) -> T {
        self.entries[row * self.dim + col]
    }

    /// `‖M x‖²`
    pub fn image_norm_sq(&self, x: &[T]) -> T {
        debug_assert_eq!(x.len(), self.dim);
        (0..self.dim)
            .map(|row| {
                let y: T = (0..self.dim).map(|col| self.get(row, col) * x[col]).sum();
                y * y
            })
            .sum()
    }
}

/// Matrix with entries i.i.d. uniform on `[0, scale)`, a pure function of
/// `(seed, dim, scale)`.
pub fn gen_anisotropy<T: Real>(seed: u64, dim: usize, scale: T) -> SquareMatrix<T> {
    gen_anisotropy_stream(seed, 0, dim, scale)
}

/// Independent draw for matrix number `stream` under the same seed.
pub fn gen_anisotropy_stream<T: Real>(seed: u64, stream: u64, dim: usize, scale: T) -> SquareMatrix<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let entries = (0..dim * dim)
        .map(|_| {
            let x = T::lit(rng.gen::<f64>()) * scale;
            // rounding in the product or the cast can land on `scale` itself
            if scale > T::zero() && x >= scale {
                scale * (T::one() - T::epsilon())
            } else {
                x
            }
        })
        .collect();
    SquareMatrix { dim, entries }
}

/// Spatial extension: diffusion, anisotropic radial weights and gain fields.
#[derive(Clone, Debug, PartialEq)]
pub struct SpatialParameterSet<T> {
    pub base: ParameterSet<T>,
    /// `A = D I`
    pub diffusivity: T,
    /// Entries of `M`, `M_i` are drawn uniformly from `[0, anisotropy_scale)`.
    pub anisotropy_scale: T,
    /// Control center `x0` (only the first `dim` coordinates are used).
    pub control_center: [T; 2],
    /// Centers `x_1..x_3` of the radial weights.
    pub q_centers: [[T; 2]; 3],
    /// Per-cell `K1`; `None` means uniformly `base.k1`.
    pub k1_field: Option<Vec<T>>,
    /// Per-cell `K2`; `None` means uniformly `base.k2`.
    pub k2_field: Option<Vec<T>>,
    /// Forces `q_i ≡ 1` and the radial control factor to 1.
    pub unit_factors: bool,
}

impl<T: Real> SpatialParameterSet<T> {
    /// Reference parameterization of the spatial simulations.
    pub fn table2(base: ParameterSet<T>) -> Self {
        Self {
            base,
            diffusivity: T::lit(1e-2),
            anisotropy_scale: T::lit(5.0),
            control_center: [T::zero(); 2],
            q_centers: [[T::zero(); 2]; 3],
            k1_field: None,
            k2_field: None,
            unit_factors: false,
        }
    }

    /// Matrix `M` (index 0) or `M_i` (index `i` in `1..=3`) for a `dim`-dimensional domain.
    pub fn anisotropy(&self, index: usize, dim: usize) -> SquareMatrix<T> {
        gen_anisotropy_stream(self.base.seed, index as u64, dim, self.anisotropy_scale)
    }

    /// Radial weight `q_i(x) = (sin²(‖M_i (x - x_i)‖²) + 1) / 2 ∈ [1/2, 1]`.
    pub fn q(&self, x: &[T], index: usize) -> T {
        assert!((1..=3).contains(&index), "q index must be 1, 2 or 3");
        let matrix = self.anisotropy(index, x.len());
        let r = radial_norm_sq(&matrix, x, &self.q_centers[index - 1]);
        (sq(r.sin()) + T::one()) / T::lit(2.0)
    }

    /// Radial factor `sin²(‖M (x - x0)‖²)` of the spatial control.
    pub fn control_factor(&self, x: &[T]) -> T {
        let matrix = self.anisotropy(0, x.len());
        sq(radial_norm_sq(&matrix, x, &self.control_center).sin())
    }

    /// `u(t, x)`
    pub fn control(&self, t: T, x: &[T]) -> T {
        self.control_factor(x) * self.base.control(t)
    }

    /// Weights of the site at `x`, honoring `unit_factors`.
    pub fn site_weights(&self, x: &[T]) -> SiteWeights<T> {
        if self.unit_factors {
            return SiteWeights::unit();
        }
        SiteWeights {
            q1: self.q(x, 1),
            q2: self.q(x, 2),
            q3: self.q(x, 3),
            control: self.control_factor(x),
        }
    }

    pub fn validate(&self) -> ValidationReport {
        let mut report = self.base.validate();
        if !self.diffusivity.is_finite() || self.diffusivity < T::zero() {
            report.error(
                Hypothesis::Diffusion,
                format!("diffusivity = {} must be finite and >= 0", self.diffusivity),
            );
        }
        if !self.anisotropy_scale.is_finite() || self.anisotropy_scale < T::zero() {
            report.error(
                Hypothesis::Admissibility,
                format!("anisotropy_scale = {} must be finite and >= 0", self.anisotropy_scale),
            );
        }
        for (name, field) in [("K1", &self.k1_field), ("K2", &self.k2_field)] {
            if let Some(values) = field {
                if values.iter().any(|k| !k.is_finite() || *k < T::zero()) {
                    report.error(Hypothesis::GainSign, format!("{name} must be finite and >= 0 everywhere"));
                }
                if let Some(max) = values.iter().copied().reduce(T::max) {
                    if max > self.base.gain_cap(self.base.dt) * (T::one() + T::lit(1e-9)) {
                        report.error(
                            Hypothesis::GainCap,
                            format!("max {name} = {max} exceeds 1/(10 dt)"),
                        );
                    }
                }
            }
        }
        report
    }
}

fn radial_norm_sq<T: Real>(matrix: &SquareMatrix<T>, x: &[T], center: &[T; 2]) -> T {
    let shifted: Vec<T> = x.iter().zip(center.iter()).map(|(&xi, &ci)| xi - ci).collect();
    matrix.image_norm_sq(&shifted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn table1() -> ParameterSet<f64> {
        ParameterSet::table1()
    }

    #[test]
    fn control_vanishes_at_phase() {
        assert_eq!(table1().control(0.6), 0.0);
    }

    #[test]
    fn control_hand_values() {
        let p = table1();
        // sin²(25π · 0.01) = sin²(π/4) = 1/2, exp(-10 · 0.01)
        assert_relative_eq!(p.control(0.5), 0.5 * (-0.1f64).exp(), max_relative = 1e-12);
        assert_relative_eq!(p.control(0.5), 0.452419, epsilon = 1e-6);
        // sin²(25π · 0.04) = sin²(π)
        assert!(p.control(0.4).abs() < 1e-28);
    }

    #[test]
    fn control_weight_values() {
        let p = table1();
        assert_eq!(p.w_of_control(0.0, 0.0).unwrap(), 1.0);
        assert_relative_eq!(p.w_of_control(0.0, 1.0).unwrap(), 10.0, max_relative = 1e-12);
        assert_relative_eq!(p.w_of_control(0.0, 0.5).unwrap(), 1.0 / 0.55, max_relative = 1e-12);
        assert_relative_eq!(p.w_of_control(0.0, 0.5).unwrap(), 1.818182, epsilon = 1e-6);
    }

    #[test]
    fn control_weight_singular() {
        let mut p = table1();
        p.sigma = 1.0;
        assert!(matches!(
            p.w_of_control(0.3, 1.0),
            Err(Error::SingularControlWeight { .. })
        ));
    }

    #[test]
    fn alpha_hand_values() {
        let p = table1();
        assert_eq!(p.alpha(0.75), 0.0);
        // cos(10π · 0.2) = cos(2π)
        assert!(p.alpha(0.2).abs() < 1e-12);
        // cos(0.5π) = 0, (0.05 - 0.75)² = 0.49
        let expected = 5.0 * 10f64.ln() * 0.49;
        assert_relative_eq!(p.alpha(0.05), expected, max_relative = 1e-12);
        assert_relative_eq!(p.alpha(0.05), 5.641334, epsilon = 1e-5);
    }

    #[test]
    fn beta_hand_values() {
        let p = table1();
        assert_eq!(p.beta(0.75, 0.3), 0.0);
        assert_eq!(p.beta(0.3, 2.0), 0.0);
        let b2 = (1e5_f64 * (1.0 - 1e-4 / (1.0 + 1e-4))).ln() / 2.0;
        assert_relative_eq!(p.b2, b2, max_relative = 1e-14);
        assert_relative_eq!(p.beta(0.05, 0.5), b2 * 0.49 * 1.5, max_relative = 1e-12);
    }

    #[test]
    fn gamma_bar_hand_values() {
        let p = table1();
        assert_eq!(p.gamma_bar(0.3, 0.5, 0.0, 0.2), 0.0);
        assert_eq!(p.gamma_bar(0.3, 0.4, 0.6, 0.4), 0.0);
        let expected = 1e5_f64.ln() * 0.49 * 0.75 * 0.5;
        assert_relative_eq!(p.gamma_bar(0.05, 0.75, 0.5, 0.0), expected, max_relative = 1e-12);
        assert_relative_eq!(p.gamma_bar(0.05, 0.75, 0.5, 0.0), 2.115496, epsilon = 1e-5);
    }

    #[test]
    fn eta_modes() {
        let mut p = table1();
        p.epsilon = 0.0;
        assert_eq!(p.eta(0.3), 1.0);
        p.epsilon = 1e-4;
        assert_relative_eq!(p.eta(0.1), 0.99990, epsilon = 1e-5);
        assert_eq!(p.eta(0.1), p.eta(0.9));
    }

    #[test]
    fn table1_is_valid() {
        let report = table1().validate();
        assert!(report.violations.is_empty(), "{:?}", report.violations);
    }

    #[test]
    fn gain_cap_violation() {
        let p = table1().with_gains(1e4, 0.0);
        let report = p.validate();
        assert!(!report.is_valid());
        assert!(report.has(Hypothesis::GainCap));
    }

    #[test]
    fn gains_on_the_cap_are_accepted() {
        assert!(table1().with_gains(1e3, 1e3).validate().is_valid());
    }

    #[test]
    fn sigma_one_is_singular() {
        let mut p = table1();
        p.sigma = 1.0;
        let report = p.validate();
        assert!(report.has(Hypothesis::ControlWeight));
    }

    #[test]
    fn violations_name_their_hypothesis() {
        let mut p = table1();
        p.kappa = -1.0;
        p.k2 = -3.0;
        p.eta_mode = EtaMode::Constant(1.5);
        let report = p.validate();
        assert!(report.has(Hypothesis::RotMonotonicity));
        assert!(report.has(Hypothesis::GainSign));
        assert!(report.has(Hypothesis::VolumeCapacity));
        assert!(report.into_result().is_err());
    }

    #[test]
    fn anisotropy_is_seeded() {
        let a = gen_anisotropy::<f64>(42, 2, 5.0);
        let b = gen_anisotropy::<f64>(42, 2, 5.0);
        assert_eq!(a, b);
        assert!(a.entries.iter().all(|&x| (0.0..5.0).contains(&x)));
        assert_ne!(a, gen_anisotropy::<f64>(43, 2, 5.0));
        assert!(gen_anisotropy::<f64>(7, 3, 0.0).entries.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn radial_weight_values() {
        let sp = SpatialParameterSet::table2(table1());
        assert_eq!(sp.q(&[0.0, 0.0], 1), 0.5);
        let x = [0.3, 0.7];
        for i in 1..=3 {
            let q = sp.q(&x, i);
            assert!((0.5..=1.0).contains(&q));
        }
        // a matrix that maps x to a vector of squared norm π/2
        let m = SquareMatrix {
            dim: 1,
            entries: vec![1.0],
        };
        let r = radial_norm_sq(&m, &[(std::f64::consts::FRAC_PI_2).sqrt()], &[0.0, 0.0]);
        assert_relative_eq!((r.sin().powi(2) + 1.0) / 2.0, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn spatial_control_values() {
        let sp = SpatialParameterSet::table2(table1());
        assert_eq!(sp.control(0.5, &[0.0, 0.0]), 0.0);
        assert_eq!(sp.control(0.6, &[0.4, 0.2]), 0.0);
        let unit = SpatialParameterSet {
            unit_factors: true,
            ..sp
        };
        let w = unit.site_weights(&[0.4, 0.2]);
        assert_relative_eq!(w.control * unit.base.control(0.5), 0.5 * (-0.1f64).exp(), max_relative = 1e-14);
    }

    #[test]
    fn works_in_single_precision() {
        let p = ParameterSet::<f32>::table1();
        assert!((p.control(0.5) - 0.452_419).abs() < 1e-5);
        assert!(p.validate().is_valid());
    }
}
