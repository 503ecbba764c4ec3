//! Method-of-lines discretization of the spatial model and observer on the
//! unit interval or unit square.
//!
//! Cells are centered, `h = 1/n`, and the zero-flux boundary is realized by
//! reflecting each boundary cell into its ghost neighbor. Diffusion acts on
//! `θ` and `θ̂` only; every other term is the pointwise within-host kernel
//! evaluated with site-dependent coefficients.

use crate::error::{Error, Result};
use crate::forcing::{SiteWeights, SpatialParameterSet};
use crate::integrate::{simulate_with, OdeSystem, RunStats, SimulationOptions};
use crate::metrics::{relative_abs_error, Aggregates};
use crate::ode::{
    model_rates, observer_rates, ConditionAccumulator, ConditionReport, Measurement, MeasurementMode, ModelState,
    ObserverState, SiteSample,
};
use crate::scalar::Real;

/// Uniform cell-centered grid on `[0, 1]^dim`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid<T> {
    pub dim: usize,
    pub n: usize,
    pub h: T,
}

impl<T: Real> Grid<T> {
    pub fn new(dim: usize, n: usize) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(Error::InvalidGrid(format!("dimension {dim} is not 1 or 2")));
        }
        if n < 2 {
            return Err(Error::InvalidGrid(format!("n = {n} must be at least 2")));
        }
        Ok(Self {
            dim,
            n,
            h: T::one() / T::lit(n as f64),
        })
    }

    pub fn cells(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    /// Cell volume `h^dim`.
    pub fn cell_volume(&self) -> T {
        self.h.powi(self.dim as i32)
    }

    /// Center of cell `j`; in 2-D `j = iy n + ix`.
    pub fn center(&self, j: usize) -> Vec<T> {
        let coord = |i: usize| (T::lit(i as f64) + T::lit(0.5)) * self.h;
        match self.dim {
            1 => vec![coord(j)],
            _ => vec![coord(j % self.n), coord(j / self.n)],
        }
    }

    pub fn centers(&self) -> Vec<Vec<T>> {
        (0..self.cells()).map(|j| self.center(j)).collect()
    }

    /// Largest explicit step accepted for diffusivity `d`.
    pub fn cfl_limit(&self, d: T) -> T {
        if d <= T::zero() {
            return T::infinity();
        }
        T::lit(0.9) * self.h * self.h / (T::lit(2.0 * self.dim as f64) * d)
    }

    pub fn check_cfl(&self, dt: T, d: T) -> Result<()> {
        let limit = self.cfl_limit(d);
        if dt > limit {
            return Err(Error::Cfl {
                dt: dt.as_f64(),
                limit: limit.as_f64(),
            });
        }
        Ok(())
    }
}

/// One value per grid cell.
#[derive(Clone, Debug, PartialEq)]
pub struct Field<T> {
    pub values: Vec<T>,
}

impl<T: Real> Field<T> {
    pub fn constant(grid: &Grid<T>, value: T) -> Self {
        Self {
            values: vec![value; grid.cells()],
        }
    }

    pub fn from_fn(grid: &Grid<T>, mut f: impl FnMut(&[T]) -> T) -> Self {
        Self {
            values: (0..grid.cells()).map(|j| f(&grid.center(j))).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn check(&self, grid: &Grid<T>) -> Result<()> {
        if self.values.len() != grid.cells() {
            return Err(Error::ShapeMismatch {
                expected: grid.cells(),
                got: self.values.len(),
            });
        }
        Ok(())
    }

    /// Discrete `‖f‖²_{L²} = h^dim Σ f_j²`.
    pub fn l2_norm_sq(&self, grid: &Grid<T>) -> T {
        grid.cell_volume() * self.values.iter().map(|&x| x * x).sum::<T>()
    }
}

/// True and estimated fields.
#[derive(Clone, Debug, PartialEq)]
pub struct SpatialSystemState<T> {
    pub theta: Field<T>,
    pub v: Field<T>,
    pub rho: Field<T>,
    pub theta_hat: Field<T>,
    pub v_hat: Field<T>,
}

impl<T: Real> SpatialSystemState<T> {
    /// Spatially constant state.
    pub fn uniform(grid: &Grid<T>, state: ModelState<T>, observer: ObserverState<T>) -> Self {
        Self {
            theta: Field::constant(grid, state.theta),
            v: Field::constant(grid, state.v),
            rho: Field::constant(grid, state.rho),
            theta_hat: Field::constant(grid, observer.theta_hat),
            v_hat: Field::constant(grid, observer.v_hat),
        }
    }

    pub fn check(&self, grid: &Grid<T>) -> Result<()> {
        for f in [&self.theta, &self.v, &self.rho, &self.theta_hat, &self.v_hat] {
            f.check(grid)?;
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.theta.len()
    }

    pub fn model_at(&self, j: usize) -> ModelState<T> {
        ModelState::new(self.theta.values[j], self.v.values[j], self.rho.values[j])
    }

    pub fn observer_at(&self, j: usize) -> ObserverState<T> {
        ObserverState::new(self.theta_hat.values[j], self.v_hat.values[j])
    }

    /// Flat layout `[θ | v | ρ | θ̂ | v̂]`.
    pub fn to_flat(&self) -> Vec<T> {
        let mut y = Vec::with_capacity(5 * self.cells());
        for f in [&self.theta, &self.v, &self.rho, &self.theta_hat, &self.v_hat] {
            y.extend_from_slice(&f.values);
        }
        y
    }

    pub fn from_flat(y: &[T], cells: usize) -> Self {
        let block = |b: usize| Field {
            values: y[b * cells..(b + 1) * cells].to_vec(),
        };
        Self {
            theta: block(0),
            v: block(1),
            rho: block(2),
            theta_hat: block(3),
            v_hat: block(4),
        }
    }

    /// Estimation error field `θ - θ̂`.
    pub fn error(&self) -> Field<T> {
        Field {
            values: self
                .theta
                .values
                .iter()
                .zip(&self.theta_hat.values)
                .map(|(&a, &b)| a - b)
                .collect(),
        }
    }
}

/// `D Δf` into `out`, with reflecting ghost cells.
pub fn laplacian_into<T: Real>(values: &[T], grid: &Grid<T>, d: T, out: &mut [T]) {
    let c = d / (grid.h * grid.h);
    let n = grid.n;
    match grid.dim {
        1 => {
            for j in 0..n {
                let f = values[j];
                let left = if j > 0 { values[j - 1] } else { f };
                let right = if j + 1 < n { values[j + 1] } else { f };
                out[j] = c * ((left - f) + (right - f));
            }
        }
        _ => {
            for iy in 0..n {
                for ix in 0..n {
                    let j = iy * n + ix;
                    let f = values[j];
                    let west = if ix > 0 { values[j - 1] } else { f };
                    let east = if ix + 1 < n { values[j + 1] } else { f };
                    let south = if iy > 0 { values[j - n] } else { f };
                    let north = if iy + 1 < n { values[j + n] } else { f };
                    out[j] = c * (((west - f) + (east - f)) + ((south - f) + (north - f)));
                }
            }
        }
    }
}

/// `D Δf` under a zero-flux boundary.
pub fn laplacian_neumann<T: Real>(f: &Field<T>, grid: &Grid<T>, d: T) -> Result<Field<T>> {
    f.check(grid)?;
    let mut values = vec![T::zero(); f.len()];
    laplacian_into(&f.values, grid, d, &mut values);
    Ok(Field { values })
}

/// Spatial minimum, mean and maximum of a field.
pub fn spatial_aggregates<T: Real>(f: &Field<T>) -> Result<Aggregates<T>> {
    Aggregates::of(&f.values).ok_or(Error::ShapeMismatch { expected: 1, got: 0 })
}

/// Site-dependent data of a spatial model on a fixed grid.
#[derive(Clone, Debug)]
pub struct SpatialModel<'a, T> {
    pub params: &'a SpatialParameterSet<T>,
    pub grid: Grid<T>,
    pub weights: Vec<SiteWeights<T>>,
    pub k1: Vec<T>,
    pub k2: Vec<T>,
}

impl<'a, T: Real> SpatialModel<'a, T> {
    pub fn new(params: &'a SpatialParameterSet<T>, grid: Grid<T>) -> Result<Self> {
        let cells = grid.cells();
        let gain = |field: &Option<Vec<T>>, uniform: T| -> Result<Vec<T>> {
            match field {
                Some(values) if values.len() != cells => Err(Error::ShapeMismatch {
                    expected: cells,
                    got: values.len(),
                }),
                Some(values) => Ok(values.clone()),
                None => Ok(vec![uniform; cells]),
            }
        };
        Ok(Self {
            params,
            grid,
            weights: (0..cells).map(|j| params.site_weights(&grid.center(j))).collect(),
            k1: gain(&params.k1_field, params.base.k1)?,
            k2: gain(&params.k2_field, params.base.k2)?,
        })
    }

    pub fn max_gain(&self) -> T {
        self.k1.iter().chain(&self.k2).copied().fold(T::zero(), T::max)
    }

    /// Rejects steps violating the CFL bound or the gain cap.
    pub fn check_step(&self, dt: T) -> Result<()> {
        self.grid.check_cfl(dt, self.params.diffusivity)?;
        let cap = self.params.base.gain_cap(dt);
        let gain = self.max_gain();
        if gain > cap * (T::one() + T::lit(1e-9)) {
            return Err(Error::GainCap {
                gain: gain.as_f64(),
                cap: cap.as_f64(),
            });
        }
        Ok(())
    }

    /// `ρ'` of the true model in every cell.
    pub fn exact_rot_rate(&self, t: T, s: &SpatialSystemState<T>) -> Result<Field<T>> {
        let seasonal = self.params.base.seasonal(t);
        let mut values = Vec::with_capacity(s.cells());
        for (j, w) in self.weights.iter().enumerate() {
            let f = self.params.base.local_forcing(&seasonal, w)?;
            let m = s.model_at(j);
            values.push(f.gamma_bar(m.theta, m.v, m.rho) * (T::one() - m.rho));
        }
        Ok(Field { values })
    }

    /// `(θ', v', ρ')` fields of the true model.
    pub fn model_rhs(&self, t: T, s: &SpatialSystemState<T>) -> Result<[Field<T>; 3]> {
        s.check(&self.grid)?;
        let seasonal = self.params.base.seasonal(t);
        let mut theta = laplacian_neumann(&s.theta, &self.grid, self.params.diffusivity)?;
        let mut v = Field::constant(&self.grid, T::zero());
        let mut rho = Field::constant(&self.grid, T::zero());
        for (j, w) in self.weights.iter().enumerate() {
            let f = self.params.base.local_forcing(&seasonal, w)?;
            let r = model_rates(&f, &s.model_at(j))?;
            theta.values[j] = r.theta + theta.values[j];
            v.values[j] = r.v;
            rho.values[j] = r.rho;
        }
        Ok([theta, v, rho])
    }

    /// `(θ̂', v̂')` fields of the observer fed with `drho_dt`.
    pub fn observer_rhs(&self, t: T, s: &SpatialSystemState<T>, drho_dt: &Field<T>) -> Result<[Field<T>; 2]> {
        s.check(&self.grid)?;
        drho_dt.check(&self.grid)?;
        let seasonal = self.params.base.seasonal(t);
        let mut theta_hat = laplacian_neumann(&s.theta_hat, &self.grid, self.params.diffusivity)?;
        let mut v_hat = Field::constant(&self.grid, T::zero());
        for (j, w) in self.weights.iter().enumerate() {
            let f = self.params.base.local_forcing(&seasonal, w)?;
            let m = Measurement {
                v: s.v.values[j],
                rho: s.rho.values[j],
                drho_dt: drho_dt.values[j],
            };
            let r = observer_rates(&f, &s.observer_at(j), &m, self.k1[j], self.k2[j])?;
            theta_hat.values[j] = r.theta_hat + theta_hat.values[j];
            v_hat.values[j] = r.v_hat;
        }
        Ok([theta_hat, v_hat])
    }
}

/// Model derivative fields at time `t`.
pub fn spatial_model_rhs<T: Real>(
    t: T,
    s: &SpatialSystemState<T>,
    grid: &Grid<T>,
    sp: &SpatialParameterSet<T>,
) -> Result<[Field<T>; 3]> {
    SpatialModel::new(sp, *grid)?.model_rhs(t, s)
}

/// Observer derivative fields at time `t`, fed with the exact rot rate.
pub fn spatial_observer_rhs<T: Real>(
    t: T,
    s: &SpatialSystemState<T>,
    grid: &Grid<T>,
    sp: &SpatialParameterSet<T>,
) -> Result<[Field<T>; 2]> {
    let model = SpatialModel::new(sp, *grid)?;
    let drho = model.exact_rot_rate(t, s)?;
    model.observer_rhs(t, s, &drho)
}

/// Spatial truth and observer advanced in lockstep on a flat vector.
#[derive(Clone, Debug)]
pub struct SpatialCoupledSystem<'a, T> {
    model: SpatialModel<'a, T>,
    mode: MeasurementMode,
    history: Option<(T, Vec<T>)>,
    held_rates: Option<Vec<T>>,
    scratch: Vec<T>,
}

impl<'a, T: Real> SpatialCoupledSystem<'a, T> {
    pub fn new(model: SpatialModel<'a, T>, mode: MeasurementMode) -> Self {
        let cells = model.grid.cells();
        Self {
            model,
            mode,
            history: None,
            held_rates: None,
            scratch: vec![T::zero(); cells],
        }
    }

    pub fn model(&self) -> &SpatialModel<'a, T> {
        &self.model
    }

    fn cells(&self) -> usize {
        self.model.grid.cells()
    }

    fn rot_rates(&self, t: T, y: &[T]) -> Result<Vec<T>> {
        if let Some(rates) = &self.held_rates {
            return Ok(rates.clone());
        }
        let n = self.cells();
        let seasonal = self.model.params.base.seasonal(t);
        let mut out = Vec::with_capacity(n);
        for (j, w) in self.model.weights.iter().enumerate() {
            let f = self.model.params.base.local_forcing(&seasonal, w)?;
            let (theta, v, rho) = (y[j], y[n + j], y[2 * n + j]);
            out.push(f.gamma_bar(theta, v, rho) * (T::one() - rho));
        }
        Ok(out)
    }
}

impl<T: Real> OdeSystem<T> for SpatialCoupledSystem<'_, T> {
    fn dim(&self) -> usize {
        5 * self.cells()
    }

    fn rhs(&mut self, t: T, y: &[T], dy: &mut [T]) -> Result<()> {
        let n = self.cells();
        let base = &self.model.params.base;
        let seasonal = base.seasonal(t);
        for (j, w) in self.model.weights.iter().enumerate() {
            let f = base.local_forcing(&seasonal, w)?;
            let s = ModelState::new(y[j], y[n + j], y[2 * n + j]);
            let o = ObserverState::new(y[3 * n + j], y[4 * n + j]);
            let drho_dt = match &self.held_rates {
                Some(rates) => rates[j],
                None => f.gamma_bar(s.theta, s.v, s.rho) * (T::one() - s.rho),
            };
            let m = Measurement {
                v: s.v,
                rho: s.rho,
                drho_dt,
            };
            let ds = model_rates(&f, &s)?;
            let d_obs = observer_rates(&f, &o, &m, self.model.k1[j], self.model.k2[j])?;
            dy[j] = ds.theta;
            dy[n + j] = ds.v;
            dy[2 * n + j] = ds.rho;
            dy[3 * n + j] = d_obs.theta_hat;
            dy[4 * n + j] = d_obs.v_hat;
        }
        let d = self.model.params.diffusivity;
        for block in [0, 3] {
            laplacian_into(&y[block * n..(block + 1) * n], &self.model.grid, d, &mut self.scratch);
            for (out, lap) in dy[block * n..(block + 1) * n].iter_mut().zip(&self.scratch) {
                *out = *out + *lap;
            }
        }
        Ok(())
    }

    fn bounds(&self, i: usize) -> Option<(T, T)> {
        match i / self.cells() {
            1 | 4 => Some((T::zero(), self.model.params.base.v_max)),
            _ => Some((T::zero(), T::one())),
        }
    }

    fn component_name(&self, i: usize) -> String {
        let n = self.cells();
        format!("{}[{}]", crate::ode::layout::NAMES[i / n], i % n)
    }

    fn check_step(&self, dt: T) -> Result<()> {
        self.model.check_step(dt)
    }

    fn begin_step(&mut self, t: T, y: &[T]) -> Result<()> {
        if self.mode == MeasurementMode::FiniteDifference {
            let n = self.cells();
            let rho = y[2 * n..3 * n].to_vec();
            self.held_rates = self.history.as_ref().map(|(prev_t, prev)| {
                rho.iter().zip(prev).map(|(&r, &p)| (r - p) / (t - *prev_t)).collect()
            });
            self.history = Some((t, rho));
        }
        Ok(())
    }

    fn auxiliary(&self, t: T, y: &[T]) -> Vec<T> {
        self.rot_rates(t, y).unwrap_or_else(|_| vec![T::nan(); self.cells()])
    }
}

/// One recorded instant of a spatial run.
#[derive(Clone, Debug, PartialEq)]
pub struct SpatialSnapshot<T> {
    pub t: T,
    pub state: SpatialSystemState<T>,
    /// Rot rate fed to the observer.
    pub drho_dt: Field<T>,
}

/// Spatial statistics of one snapshot.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpatialSummary<T> {
    pub t: T,
    pub theta: Aggregates<T>,
    pub theta_hat: Aggregates<T>,
    pub abs_err: Aggregates<T>,
    pub rel_err: Aggregates<T>,
    /// `‖θ - θ̂‖²_{L²}`
    pub l2_error_sq: T,
}

impl<T: Real> SpatialSnapshot<T> {
    pub fn summarize(&self, grid: &Grid<T>, floor: T) -> Result<SpatialSummary<T>> {
        let s = &self.state;
        let abs: Vec<T> = s.error().values.iter().map(|e| e.abs()).collect();
        let rel: Vec<T> = s
            .theta
            .values
            .iter()
            .zip(&s.theta_hat.values)
            .map(|(&a, &b)| relative_abs_error(a, b, floor))
            .collect();
        let agg = |v: &[T]| Aggregates::of(v).ok_or(Error::ShapeMismatch { expected: 1, got: 0 });
        Ok(SpatialSummary {
            t: self.t,
            theta: agg(&s.theta.values)?,
            theta_hat: agg(&s.theta_hat.values)?,
            abs_err: agg(&abs)?,
            rel_err: agg(&rel)?,
            l2_error_sq: s.error().l2_norm_sq(grid),
        })
    }
}

/// Integrates a spatial run and hands every recorded snapshot to `sink`.
pub fn run_spatial_observer<T, F>(
    model: SpatialModel<'_, T>,
    initial: &SpatialSystemState<T>,
    mode: MeasurementMode,
    opts: &SimulationOptions<T>,
    mut sink: F,
) -> Result<RunStats<T>>
where
    T: Real,
    F: FnMut(&SpatialSnapshot<T>) -> Result<()>,
{
    initial.check(&model.grid)?;
    let cells = model.grid.cells();
    let mut system = SpatialCoupledSystem::new(model, mode);
    simulate_with(&mut system, &initial.to_flat(), opts, |t, y, aux| {
        sink(&SpatialSnapshot {
            t,
            state: SpatialSystemState::from_flat(y, cells),
            drho_dt: Field { values: aux.to_vec() },
        })
    })
}

/// Paired-run estimate of `∂v/∂θ(0)` at every recorded snapshot.
///
/// Runs the spatial system twice with `θ(0)` shifted by `±delta` and
/// returns the cellwise quotient of the `v` and `θ` differences; cells
/// whose `θ` difference has collapsed below `1e-12` get `NaN`.
pub fn paired_sensitivity<T: Real>(
    model: &SpatialModel<'_, T>,
    initial: &SpatialSystemState<T>,
    mode: MeasurementMode,
    opts: &SimulationOptions<T>,
    delta: T,
) -> Result<Vec<Field<T>>> {
    let shifted = |sign: T| {
        let mut s = initial.clone();
        for x in &mut s.theta.values {
            *x = (*x + sign * delta).max(T::zero()).min(T::one());
        }
        s
    };
    let mut runs = Vec::with_capacity(2);
    for sign in [T::one(), -T::one()] {
        let mut samples = Vec::new();
        run_spatial_observer(model.clone(), &shifted(sign), mode, opts, |snap| {
            samples.push((snap.state.theta.clone(), snap.state.v.clone()));
            Ok(())
        })?;
        runs.push(samples);
    }
    let minus = runs.pop().unwrap_or_default();
    let plus = runs.pop().unwrap_or_default();
    Ok(plus
        .iter()
        .zip(&minus)
        .map(|((tp, vp), (tm, vm))| Field {
            values: (0..tp.len())
                .map(|j| {
                    let dtheta = tp.values[j] - tm.values[j];
                    if dtheta.abs() > T::lit(1e-12) {
                        (vp.values[j] - vm.values[j]) / dtheta
                    } else {
                        T::nan()
                    }
                })
                .collect(),
        })
        .collect())
}

/// Feeds one snapshot into a condition accumulator.
pub fn accumulate_snapshot<T: Real>(
    acc: &mut ConditionAccumulator<T>,
    model: &SpatialModel<'_, T>,
    snap: &SpatialSnapshot<T>,
    dv_dtheta: Option<&Field<T>>,
) -> Result<()> {
    let seasonal = model.params.base.seasonal(snap.t);
    acc.begin_time(snap.t);
    for (j, w) in model.weights.iter().enumerate() {
        let state = snap.state.model_at(j);
        acc.push_site(&SiteSample {
            forcing: model.params.base.local_forcing(&seasonal, w)?,
            state,
            observer: snap.state.observer_at(j),
            measurement: Measurement {
                v: state.v,
                rho: state.rho,
                drho_dt: snap.drho_dt.values[j],
            },
            k1: model.k1[j],
            k2: model.k2[j],
            dv_dtheta: dv_dtheta.map(|f| f.values[j]),
        });
    }
    Ok(())
}

/// Space-time condition diagnostics of a spatial run.
pub fn check_conditions_spatial<T: Real>(
    snapshots: &[SpatialSnapshot<T>],
    grid: &Grid<T>,
    sp: &SpatialParameterSet<T>,
    sensitivity: Option<&[Field<T>]>,
) -> Result<ConditionReport<T>> {
    if let Some(fields) = sensitivity {
        if fields.len() != snapshots.len() {
            return Err(Error::ShapeMismatch {
                expected: snapshots.len(),
                got: fields.len(),
            });
        }
    }
    let model = SpatialModel::new(sp, *grid)?;
    let mut acc = ConditionAccumulator::new();
    for (i, snap) in snapshots.iter().enumerate() {
        snap.state.check(grid)?;
        accumulate_snapshot(&mut acc, &model, snap, sensitivity.map(|f| &f[i]))?;
    }
    Ok(acc.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forcing::ParameterSet;
    use crate::ode::{check_conditions, model_rhs, observer_rhs, run_observer};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn table2() -> SpatialParameterSet<f64> {
        SpatialParameterSet::table2(ParameterSet::table1())
    }

    #[test]
    fn grid_validation() {
        assert!(Grid::<f64>::new(1, 1).is_err());
        assert!(Grid::<f64>::new(3, 8).is_err());
        let g = Grid::<f64>::new(2, 4).unwrap();
        assert_eq!(g.cells(), 16);
        assert_eq!(g.center(5), vec![0.375, 0.375]);
        assert_eq!(g.h * g.n as f64, 1.0);
    }

    #[test]
    fn constant_field_has_zero_laplacian() {
        for dim in [1, 2] {
            let g = Grid::new(dim, 7).unwrap();
            let lap = laplacian_neumann(&Field::constant(&g, 0.37), &g, 1e-2).unwrap();
            assert!(lap.values.iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn parabola_gives_twice_diffusivity_inside() {
        let g = Grid::new(1, 20).unwrap();
        let f = Field::from_fn(&g, |x| x[0] * x[0]);
        let lap = laplacian_neumann(&f, &g, 1e-2).unwrap();
        for &x in &lap.values[1..19] {
            assert!((x - 2e-2_f64).abs() < 1e-10, "{x}");
        }
    }

    #[test]
    fn two_equal_cells_do_not_diffuse() {
        let g = Grid::new(1, 2).unwrap();
        let lap = laplacian_neumann(&Field::constant(&g, 0.5), &g, 1.0).unwrap();
        assert_eq!(lap.values, vec![0.0, 0.0]);
    }

    #[test]
    fn random_fields_are_conserved() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for dim in [1, 2] {
            let g = Grid::new(dim, 16).unwrap();
            for _ in 0..20 {
                let f = Field::from_fn(&g, |_| rng.gen::<f64>());
                let lap = laplacian_neumann(&f, &g, 1e-2).unwrap();
                let sum: f64 = lap.values.iter().sum();
                let scale: f64 = lap.values.iter().map(|x| x.abs()).sum();
                assert!(sum.abs() <= 1e-12 * scale);
            }
        }
    }

    #[test]
    fn aggregates_of_fields() {
        let g = Grid::new(1, 4).unwrap();
        let half = Field {
            values: vec![0.0, 1.0, 0.0, 1.0],
        };
        let a = spatial_aggregates(&half).unwrap();
        assert_eq!((a.min, a.mean, a.max), (0.0, 0.5, 1.0));
        assert_eq!(spatial_aggregates(&Field::constant(&g, 0.2)).unwrap(), Aggregates::constant(0.2));
    }

    #[test]
    fn zero_forcing_gives_zero_rhs() {
        let sp = table2();
        let g = Grid::new(2, 4).unwrap();
        let s = SpatialSystemState::uniform(&g, ModelState::new(0.3, 0.4, 0.2), ObserverState::new(0.1, 0.4));
        for f in spatial_model_rhs(0.75, &s, &g, &sp).unwrap() {
            assert!(f.values.iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn constant_state_matches_ode_rhs() {
        let mut sp = table2();
        sp.unit_factors = true;
        sp.base = sp.base.with_gains(1e3, 1e3);
        let g = Grid::new(2, 5).unwrap();
        let state = ModelState::new(0.6, 0.3, 0.2);
        let obs = ObserverState::new(0.2, 0.35);
        let s = SpatialSystemState::uniform(&g, state, obs);
        let [dt, dv, dr] = spatial_model_rhs(0.13, &s, &g, &sp).unwrap();
        let ode = model_rhs(0.13, &state, &sp.base).unwrap();
        let [dth, dvh] = spatial_observer_rhs(0.13, &s, &g, &sp).unwrap();
        let m = crate::ode::make_measurement(0.13, &state, MeasurementMode::Exact, None, &sp.base).unwrap();
        let ode_obs = observer_rhs(0.13, &obs, &m, &sp.base).unwrap();
        for j in 0..g.cells() {
            assert_eq!((dt.values[j], dv.values[j], dr.values[j]), (ode.theta, ode.v, ode.rho));
            assert_eq!((dth.values[j], dvh.values[j]), (ode_obs.theta_hat, ode_obs.v_hat));
        }
    }

    #[test]
    fn natural_observer_at_truth_matches_model_fields() {
        let sp = table2();
        let g = Grid::new(2, 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let theta = Field::from_fn(&g, |_| rng.gen_range(0.1..0.9));
        let v = Field::from_fn(&g, |_| rng.gen_range(0.1..0.5));
        let s = SpatialSystemState {
            theta_hat: theta.clone(),
            v_hat: v.clone(),
            rho: Field::constant(&g, 0.05),
            theta,
            v,
        };
        let [dt, dv, _] = spatial_model_rhs(0.31, &s, &g, &sp).unwrap();
        let [dth, dvh] = spatial_observer_rhs(0.31, &s, &g, &sp).unwrap();
        assert_eq!(dt, dth);
        assert_eq!(dv, dvh);
    }

    #[test]
    fn cfl_and_gain_cap_are_enforced() {
        let sp = table2();
        let g = Grid::new(2, 64).unwrap();
        let model = SpatialModel::new(&sp, g).unwrap();
        assert!(model.check_step(1e-4).is_ok());
        assert!(matches!(model.check_step(1e-2), Err(Error::Cfl { .. })));
        let mut hot = table2();
        hot.k2_field = Some(vec![2e3; g.cells()]);
        let model = SpatialModel::new(&hot, g).unwrap();
        assert!(matches!(model.check_step(1e-4), Err(Error::GainCap { .. })));
    }

    #[test]
    fn uniform_run_reduces_to_ode() {
        let mut sp = table2();
        sp.unit_factors = true;
        sp.base = sp.base.with_gains(0.0, 1e3);
        let g = Grid::new(2, 3).unwrap();
        let opts = SimulationOptions {
            t1: 0.5,
            ..SimulationOptions::default()
        };
        let state = ModelState::new(0.75, 0.5, 0.75);
        let obs = ObserverState::new(0.0, 0.5);
        let ode = run_observer(&sp.base, state, obs, MeasurementMode::Exact, &opts).unwrap();
        let mut worst: f64 = 0.0;
        let mut k = 0;
        run_spatial_observer(
            SpatialModel::new(&sp, g).unwrap(),
            &SpatialSystemState::uniform(&g, state, obs),
            MeasurementMode::Exact,
            &opts,
            |snap| {
                let reference = &ode.samples[k];
                for j in 0..g.cells() {
                    worst = worst.max((snap.state.theta.values[j] - reference.state.theta).abs());
                    worst = worst.max((snap.state.theta_hat.values[j] - reference.observer.theta_hat).abs());
                    worst = worst.max((snap.state.v_hat.values[j] - reference.observer.v_hat).abs());
                }
                k += 1;
                Ok(())
            },
        )
        .unwrap();
        assert_eq!(k, ode.samples.len());
        assert!(worst <= 1e-12, "{worst}");
    }

    #[test]
    fn uniform_conditions_match_ode_report() {
        let mut sp = table2();
        sp.unit_factors = true;
        sp.base = sp.base.with_gains(1e3, 1e3);
        let g = Grid::new(1, 3).unwrap();
        let opts = SimulationOptions {
            t1: 0.2,
            ..SimulationOptions::default()
        };
        let state = ModelState::new(0.5, 0.5, 0.5);
        let obs = ObserverState::new(0.0, 0.5);
        let ode = run_observer(&sp.base, state, obs, MeasurementMode::Exact, &opts).unwrap();
        let expected = check_conditions(&ode.samples, &sp.base).unwrap();
        let mut snaps = Vec::new();
        run_spatial_observer(
            SpatialModel::new(&sp, g).unwrap(),
            &SpatialSystemState::uniform(&g, state, obs),
            MeasurementMode::Exact,
            &opts,
            |s| {
                snaps.push(s.clone());
                Ok(())
            },
        )
        .unwrap();
        let report = check_conditions_spatial(&snaps, &g, &sp, None).unwrap();
        assert_eq!(report.inf_alpha, expected.inf_alpha);
        assert_eq!(report.stability_k1, expected.stability_k1);
        assert_eq!(report.stability_k1k2, expected.stability_k1k2);
        assert_eq!(report.dominance_margin, expected.dominance_margin);
        assert_eq!(report.coercivity, expected.coercivity);
        assert_eq!(report.sites, 3 * expected.sites);
    }

    #[test]
    fn zero_gains_report_reduces_to_alpha() {
        let sp = table2();
        let g = Grid::new(1, 4).unwrap();
        let s = SpatialSystemState::uniform(&g, ModelState::new(0.5, 0.5, 0.5), ObserverState::new(0.0, 0.5));
        let model = SpatialModel::new(&sp, g).unwrap();
        let snap = SpatialSnapshot {
            t: 0.1,
            drho_dt: model.exact_rot_rate(0.1, &s).unwrap(),
            state: s,
        };
        let report = check_conditions_spatial(std::slice::from_ref(&snap), &g, &sp, None).unwrap();
        let inf = model
            .weights
            .iter()
            .map(|w| sp.base.local_forcing(&sp.base.seasonal(0.1), w).unwrap().alpha)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(report.inf_alpha, inf);
        assert!(report.dominance_margin.unwrap() >= 0.0);
    }

    #[test]
    fn pure_diffusion_is_dissipative() {
        let g = Grid::new(2, 16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut f = Field::from_fn(&g, |_| rng.gen::<f64>());
        let dt = g.cfl_limit(1e-2);
        let mut norm = f.l2_norm_sq(&g);
        let mut lap = vec![0.0; g.cells()];
        for _ in 0..200 {
            laplacian_into(&f.values, &g, 1e-2, &mut lap);
            for (x, l) in f.values.iter_mut().zip(&lap) {
                *x += dt * l;
            }
            let next = f.l2_norm_sq(&g);
            assert!(next <= norm * (1.0 + 1e-14));
            norm = next;
        }
    }

    #[test]
    fn sensitivity_of_uniform_run_is_finite() {
        let mut sp = table2();
        sp.unit_factors = true;
        let g = Grid::new(1, 2).unwrap();
        let opts = SimulationOptions {
            t1: 0.05,
            ..SimulationOptions::default()
        };
        let s = SpatialSystemState::uniform(&g, ModelState::new(0.5, 0.3, 0.2), ObserverState::new(0.0, 0.3));
        let model = SpatialModel::new(&sp, g).unwrap();
        let fields = paired_sensitivity(&model, &s, MeasurementMode::Exact, &opts, 1e-4).unwrap();
        assert_eq!(fields.len(), opts.sample_count().unwrap());
        // v(0) does not depend on θ(0)
        assert_eq!(fields[0].values, vec![0.0, 0.0]);
        assert!(fields.iter().all(|f| f.values.iter().all(|x| x.is_finite())));
    }
}
