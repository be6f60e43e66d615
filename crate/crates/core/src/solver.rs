//! Finite-difference integrator for the two-species Brusselator
//!
//! ```text
//! u_t = D0 Δu + a - (1 + b) u + v u²
//! v_t = D1 Δv + b u - v u²
//! ```
//!
//! on a vertex-centered grid. `dt_output` is the sampling interval of the
//! integrator, not necessarily its internal step: the explicit scheme
//! substeps to stay below the diffusion stability limit, the IMEX scheme
//! treats diffusion with backward Euler and can take the full interval.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{ModelError, SolverError};
use crate::model::{Boundary, Grid2D, ScalarField, Scheme, SolverParams, Trajectory};

/// Fraction of the explicit diffusion limit `h² / (4 D)` used per substep.
pub const EXPLICIT_SAFETY: f64 = 0.8;

/// Concentrations of both species at time `t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverState {
    pub u: ScalarField,
    pub v: ScalarField,
    pub t: f64,
}

/// Reaction terms of the Brusselator at a single node.
#[inline]
pub fn reaction(u: f64, v: f64, a: f64, b: f64) -> (f64, f64) {
    let uuv = u * u * v;
    (a - (1.0 + b) * u + uuv, b * u - uuv)
}

/// Five-point Laplacian with the given boundary treatment.
pub fn laplacian(f: &ScalarField, boundary: Boundary) -> Result<ScalarField, ModelError> {
    let g = *f.grid();
    if g.nx < 3 || g.ny < 3 {
        return Err(ModelError::GridTooSmall { nx: g.nx, ny: g.ny, min: 3 });
    }
    let mut out = vec![0.0; g.len()];
    let stencil = Stencil::new(&g, boundary);
    stencil.apply(f.values(), &mut out, 1.0);
    Ok(ScalarField::from_parts_unchecked(g, out))
}

#[derive(Clone, Copy)]
struct Stencil {
    nx: usize,
    ny: usize,
    inv_hx2: f64,
    inv_hy2: f64,
    boundary: Boundary,
}

impl Stencil {
    fn new(g: &Grid2D, boundary: Boundary) -> Self {
        Self {
            nx: g.nx,
            ny: g.ny,
            inv_hx2: 1.0 / (g.hx() * g.hx()),
            inv_hy2: 1.0 / (g.hy() * g.hy()),
            boundary,
        }
    }

    /// Neighbour indices along one axis of length `n`.
    #[inline]
    fn neighbours(&self, i: usize, n: usize) -> (usize, usize) {
        match self.boundary {
            Boundary::Neumann => {
                let lo = if i == 0 { 1 } else { i - 1 };
                let hi = if i + 1 == n { n - 2 } else { i + 1 };
                (lo, hi)
            }
            Boundary::Periodic => ((i + n - 1) % n, (i + 1) % n),
        }
    }

    /// `out = scale * Δf`.
    fn apply(&self, f: &[f64], out: &mut [f64], scale: f64) {
        let (nx, ny) = (self.nx, self.ny);
        let cx = scale * self.inv_hx2;
        let cy = scale * self.inv_hy2;
        for j in 0..ny {
            let (jd, ju) = self.neighbours(j, ny);
            let row = j * nx;
            let (rd, ru) = (jd * nx, ju * nx);
            for i in 0..nx {
                let (il, ir) = self.neighbours(i, nx);
                let c = f[row + i];
                out[row + i] = cx * (f[row + il] + f[row + ir] - 2.0 * c)
                    + cy * (f[rd + i] + f[ru + i] - 2.0 * c);
            }
        }
    }

    /// Sparse rows of `I - dt*D*Δ` as `(column, value)` pairs.
    fn implicit_row(&self, p: usize, dtd: f64) -> Vec<(usize, f64)> {
        let (i, j) = (p % self.nx, p / self.nx);
        let cx = dtd * self.inv_hx2;
        let cy = dtd * self.inv_hy2;
        let mut row = vec![(p, 1.0 + 2.0 * cx + 2.0 * cy)];
        let (il, ir) = self.neighbours(i, self.nx);
        let (jd, ju) = self.neighbours(j, self.ny);
        for (col, w) in [
            (j * self.nx + il, cx),
            (j * self.nx + ir, cx),
            (jd * self.nx + i, cy),
            (ju * self.nx + i, cy),
        ] {
            match row.iter_mut().find(|(c, _)| *c == col) {
                Some(entry) => entry.1 -= w,
                None => row.push((col, -w)),
            }
        }
        row
    }
}

/// LU factors of a banded matrix stored by diagonals, without pivoting.
/// Valid for the strictly diagonally dominant backward-Euler operator.
struct BandedLu {
    n: usize,
    bw: usize,
    // row-major, each row holds columns [i - bw, i + bw]
    band: Vec<f64>,
}

impl BandedLu {
    fn factor(n: usize, bw: usize, rows: impl Fn(usize) -> Vec<(usize, f64)>) -> Self {
        let width = 2 * bw + 1;
        let mut band = vec![0.0; n * width];
        for i in 0..n {
            for (j, v) in rows(i) {
                band[i * width + (j + bw - i)] += v;
            }
        }
        let at = |i: usize, j: usize| i * width + (j + bw - i);
        for k in 0..n {
            let pivot = band[at(k, k)];
            let end = (k + bw + 1).min(n);
            for i in k + 1..end {
                let l = band[at(i, k)] / pivot;
                band[at(i, k)] = l;
                if l != 0.0 {
                    for j in k + 1..end {
                        band[at(i, j)] -= l * band[at(k, j)];
                    }
                }
            }
        }
        Self { n, bw, band }
    }

    fn solve_in_place(&self, x: &mut [f64]) {
        let width = 2 * self.bw + 1;
        let at = |i: usize, j: usize| i * width + (j + self.bw - i);
        for i in 0..self.n {
            let start = i.saturating_sub(self.bw);
            let mut s = x[i];
            for j in start..i {
                s -= self.band[at(i, j)] * x[j];
            }
            x[i] = s;
        }
        for i in (0..self.n).rev() {
            let end = (i + self.bw + 1).min(self.n);
            let mut s = x[i];
            for j in i + 1..end {
                s -= self.band[at(i, j)] * x[j];
            }
            x[i] = s / self.band[at(i, i)];
        }
    }
}

enum ImplicitSolve {
    Banded(BandedLu),
    Dense(nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>),
}

impl ImplicitSolve {
    fn new(stencil: &Stencil, n: usize, dtd: f64) -> Self {
        match stencil.boundary {
            Boundary::Neumann => {
                Self::Banded(BandedLu::factor(n, stencil.nx, |p| stencil.implicit_row(p, dtd)))
            }
            Boundary::Periodic => {
                let mut m = DMatrix::zeros(n, n);
                for p in 0..n {
                    for (c, v) in stencil.implicit_row(p, dtd) {
                        m[(p, c)] += v;
                    }
                }
                Self::Dense(m.lu())
            }
        }
    }

    fn solve_in_place(&self, x: &mut [f64]) {
        match self {
            Self::Banded(lu) => lu.solve_in_place(x),
            Self::Dense(lu) => {
                let mut b = nalgebra::DVector::from_column_slice(x);
                lu.solve_mut(&mut b);
                x.copy_from_slice(b.as_slice());
            }
        }
    }
}

enum Stepper {
    Explicit { substeps: usize, dt: f64 },
    Imex { dt: f64, u_solve: ImplicitSolve, v_solve: ImplicitSolve },
}

/// Advances a [`SolverState`] one output interval at a time.
pub struct Integrator {
    params: SolverParams,
    grid: Grid2D,
    stencil: Stencil,
    stepper: Stepper,
    lap_u: Vec<f64>,
    lap_v: Vec<f64>,
    steps_taken: usize,
}

impl Integrator {
    pub fn new(grid: Grid2D, params: &SolverParams) -> Result<Self, ModelError> {
        params.validate()?;
        if grid.nx < 3 || grid.ny < 3 {
            return Err(ModelError::GridTooSmall { nx: grid.nx, ny: grid.ny, min: 3 });
        }
        let stencil = Stencil::new(&grid, params.boundary);
        let stepper = match params.scheme {
            Scheme::ExplicitSubstep => {
                let substeps = explicit_substeps(&grid, params);
                Stepper::Explicit { substeps, dt: params.dt_output / substeps as f64 }
            }
            Scheme::Imex => {
                let dt = params.dt_output;
                Stepper::Imex {
                    dt,
                    u_solve: ImplicitSolve::new(&stencil, grid.len(), dt * params.d0),
                    v_solve: ImplicitSolve::new(&stencil, grid.len(), dt * params.d1),
                }
            }
        };
        Ok(Self {
            params: params.clone(),
            grid,
            stencil,
            stepper,
            lap_u: vec![0.0; grid.len()],
            lap_v: vec![0.0; grid.len()],
            steps_taken: 0,
        })
    }

    /// Internal steps per output interval.
    pub fn substeps(&self) -> usize {
        match self.stepper {
            Stepper::Explicit { substeps, .. } => substeps,
            Stepper::Imex { .. } => 1,
        }
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    /// Advance `u`, `v` in place by one `dt_output`.
    pub fn advance(&mut self, u: &mut [f64], v: &mut [f64]) -> Result<(), SolverError> {
        let p = &self.params;
        let (a, b) = (p.a, p.b);
        let react = p.reaction;
        match &self.stepper {
            Stepper::Explicit { substeps, dt } => {
                let dt = *dt;
                for _ in 0..*substeps {
                    self.stencil.apply(u, &mut self.lap_u, p.d0);
                    self.stencil.apply(v, &mut self.lap_v, p.d1);
                    for k in 0..u.len() {
                        let (ru, rv) = if react { reaction(u[k], v[k], a, b) } else { (0.0, 0.0) };
                        u[k] += dt * (self.lap_u[k] + ru);
                        v[k] += dt * (self.lap_v[k] + rv);
                    }
                }
            }
            Stepper::Imex { dt, u_solve, v_solve } => {
                let dt = *dt;
                if react {
                    for k in 0..u.len() {
                        let (ru, rv) = reaction(u[k], v[k], a, b);
                        u[k] += dt * ru;
                        v[k] += dt * rv;
                    }
                }
                u_solve.solve_in_place(u);
                v_solve.solve_in_place(v);
            }
        }
        self.steps_taken += 1;
        if u.iter().chain(v.iter()).any(|x| !x.is_finite()) {
            return Err(SolverError::Diverged {
                step: self.steps_taken,
                time: self.steps_taken as f64 * p.dt_output,
            });
        }
        Ok(())
    }

    pub fn step(&mut self, state: &mut SolverState) -> Result<(), SolverError> {
        let mut u = std::mem::replace(&mut state.u, ScalarField::constant(self.grid, 0.0)).into_values();
        let mut v = std::mem::replace(&mut state.v, ScalarField::constant(self.grid, 0.0)).into_values();
        let res = self.advance(&mut u, &mut v);
        state.u = ScalarField::from_parts_unchecked(self.grid, u);
        state.v = ScalarField::from_parts_unchecked(self.grid, v);
        state.t += self.params.dt_output;
        res
    }
}

/// Substep count `m = ceil(dt_output / (safety * h² / (4 max D)))`.
pub fn explicit_substeps(grid: &Grid2D, params: &SolverParams) -> usize {
    let h = grid.hx().min(grid.hy());
    let limit = EXPLICIT_SAFETY * h * h / (4.0 * params.d0.max(params.d1));
    (params.dt_output / limit).ceil().max(1.0) as usize
}

/// Evolve `u(0) = a`, `v(0) = h2` and record `v` at the snapshot times.
pub fn simulate(h2: &ScalarField, params: &SolverParams) -> Result<Trajectory, SolverError> {
    let u0 = ScalarField::constant(*h2.grid(), params.a);
    simulate_from(&u0, h2, params)
}

/// Like [`simulate`] with an arbitrary initial `u`.
pub fn simulate_from(
    u0: &ScalarField,
    v0: &ScalarField,
    params: &SolverParams,
) -> Result<Trajectory, SolverError> {
    if u0.grid() != v0.grid() {
        return Err(ModelError::GridMismatch.into());
    }
    if v0.values().iter().any(|&x| x < 0.0) {
        log::debug!("initial v has negative entries; integrating without clipping");
    }
    let grid = *v0.grid();
    let mut integrator = Integrator::new(grid, params)?;
    let stride = params.snapshot_stride();
    let mut u = u0.values().to_vec();
    let mut v = v0.values().to_vec();
    let mut snapshots = Vec::with_capacity(params.nt);
    for step in 1..=params.output_steps() {
        integrator.advance(&mut u, &mut v)?;
        if step % stride == 0 {
            snapshots.push(ScalarField::from_parts_unchecked(grid, v.clone()));
        }
    }
    Ok(Trajectory::new(v0.clone(), snapshots, params.snapshot_times())?)
}
