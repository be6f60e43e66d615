//! Grids, fields, trajectories and datasets shared by every stage of the
//! pipeline.
//!
//! Fields are stored row-major with `y` as the outer index and `x` as the
//! inner index. A trajectory flattens to its snapshots concatenated in time
//! order, each snapshot row-major, which fixes the layout of every output
//! vector in the project.

use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::grf::KleConfig;

/// Vertex-centered rectangular grid. Boundary nodes are part of the grid, so
/// the spacing is `(max - min) / (n - 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid2D {
    pub nx: usize,
    pub ny: usize,
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Default for Grid2D {
    fn default() -> Self {
        Self::unit_square(28, 28).expect("28x28 unit grid is valid")
    }
}

impl Grid2D {
    pub fn new(
        nx: usize,
        ny: usize,
        (x_min, x_max): (f64, f64),
        (y_min, y_max): (f64, f64),
    ) -> Result<Self, ModelError> {
        if nx < 2 || ny < 2 {
            return Err(ModelError::GridTooSmall { nx, ny, min: 2 });
        }
        if !(x_max > x_min) || !(y_max > y_min) {
            return Err(ModelError::InvalidExtent);
        }
        Ok(Self { nx, ny, x_min, x_max, y_min, y_max })
    }

    pub fn unit_square(nx: usize, ny: usize) -> Result<Self, ModelError> {
        Self::new(nx, ny, (0.0, 1.0), (0.0, 1.0))
    }

    pub fn hx(&self) -> f64 {
        (self.x_max - self.x_min) / (self.nx - 1) as f64
    }

    pub fn hy(&self) -> f64 {
        (self.y_max - self.y_min) / (self.ny - 1) as f64
    }

    /// Number of nodes, `nx * ny`.
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x_min + i as f64 * self.hx()
    }

    pub fn y(&self, j: usize) -> f64 {
        self.y_min + j as f64 * self.hy()
    }

    /// Flat index of node `(i, j)` where `i` runs along x.
    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    /// Coordinates of every node in flat order.
    pub fn points(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(self.len());
        for j in 0..self.ny {
            for i in 0..self.nx {
                out.push((self.x(i), self.y(j)));
            }
        }
        out
    }

    /// Flat index of the node closest to `(x, y)`.
    pub fn nearest(&self, x: f64, y: f64) -> usize {
        let i = ((x - self.x_min) / self.hx()).round().clamp(0.0, (self.nx - 1) as f64) as usize;
        let j = ((y - self.y_min) / self.hy()).round().clamp(0.0, (self.ny - 1) as f64) as usize;
        self.index(i, j)
    }
}

/// A real-valued field sampled on every node of a grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarField {
    grid: Grid2D,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Grid2D, values: Vec<f64>) -> Result<Self, ModelError> {
        if values.len() != grid.len() {
            return Err(ModelError::LengthMismatch { expected: grid.len(), found: values.len() });
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite { index: pos });
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: Grid2D, value: f64) -> Self {
        Self { grid, values: vec![value; grid.len()] }
    }

    pub fn from_fn(grid: Grid2D, f: impl Fn(f64, f64) -> f64) -> Self {
        let values = grid.points().into_iter().map(|(x, y)| f(x, y)).collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.index(i, j)]
    }

    pub(crate) fn from_parts_unchecked(grid: Grid2D, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }
}

/// An input field paired with the output snapshots it evolves into.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    input: ScalarField,
    snapshots: Vec<ScalarField>,
    times: Vec<f64>,
}

impl Trajectory {
    pub fn new(
        input: ScalarField,
        snapshots: Vec<ScalarField>,
        times: Vec<f64>,
    ) -> Result<Self, ModelError> {
        if snapshots.is_empty() || snapshots.len() != times.len() {
            return Err(ModelError::SnapshotCount { snapshots: snapshots.len(), times: times.len() });
        }
        if snapshots.iter().any(|s| s.grid != input.grid) {
            return Err(ModelError::GridMismatch);
        }
        let increasing = times.windows(2).all(|w| w[1] > w[0]);
        let in_range = times.iter().all(|t| (0.0..=1.0).contains(t));
        if !increasing || !in_range {
            return Err(ModelError::InvalidTimes);
        }
        Ok(Self { input, snapshots, times })
    }

    pub fn input(&self) -> &ScalarField {
        &self.input
    }

    pub fn snapshots(&self) -> &[ScalarField] {
        &self.snapshots
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn grid(&self) -> &Grid2D {
        &self.input.grid
    }

    pub fn nt(&self) -> usize {
        self.snapshots.len()
    }

    /// Flattened output length, `nt * nx * ny`.
    pub fn output_len(&self) -> usize {
        self.nt() * self.grid().len()
    }

    /// Snapshots concatenated in time order, each row-major.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.output_len());
        for s in &self.snapshots {
            out.extend_from_slice(&s.values);
        }
        out
    }

    /// Inverse of [`Trajectory::flatten`].
    pub fn unflatten(
        input: ScalarField,
        flat: &[f64],
        times: Vec<f64>,
    ) -> Result<Self, ModelError> {
        let grid = *input.grid();
        let expected = grid.len() * times.len();
        if flat.len() != expected {
            return Err(ModelError::LengthMismatch { expected, found: flat.len() });
        }
        let snapshots = flat
            .chunks_exact(grid.len())
            .map(|c| ScalarField::new(grid, c.to_vec()))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(input, snapshots, times)
    }
}

/// Which data-generating regime a dataset belongs to.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseLabel {
    CaseI,
    CaseII,
    /// Out-of-distribution set; the payload names the base case.
    Ood1(Regime),
    Ood2(Regime),
    Custom(String),
}

impl CaseLabel {
    /// The dynamical regime (reaction parameter `b`, snapshot count) this
    /// label shares with its training data.
    pub fn regime(&self) -> Option<Regime> {
        match self {
            CaseLabel::CaseI => Some(Regime::I),
            CaseLabel::CaseII => Some(Regime::II),
            CaseLabel::Ood1(r) | CaseLabel::Ood2(r) => Some(*r),
            CaseLabel::Custom(_) => None,
        }
    }
}

impl std::fmt::Display for CaseLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CaseLabel::CaseI => write!(f, "case-i"),
            CaseLabel::CaseII => write!(f, "case-ii"),
            CaseLabel::Ood1(r) => write!(f, "ood1-{r}"),
            CaseLabel::Ood2(r) => write!(f, "ood2-{r}"),
            CaseLabel::Custom(s) => write!(f, "custom-{s}"),
        }
    }
}

/// Stable equilibrium (`b = 1.7`) or limit cycle (`b = 3.0`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    I,
    II,
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Regime::I => write!(f, "i"),
            Regime::II => write!(f, "ii"),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Forward Euler with enough substeps per output interval to satisfy the
    /// explicit diffusion limit.
    #[default]
    ExplicitSubstep,
    /// Backward-Euler diffusion with explicit reaction at the output interval.
    Imex,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    /// Zero flux through mirrored ghost nodes.
    #[default]
    Neumann,
    Periodic,
}

/// Brusselator coefficients and time-stepping controls.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverParams {
    pub a: f64,
    pub b: f64,
    pub d0: f64,
    pub d1: f64,
    pub dt_output: f64,
    pub t_end: f64,
    pub nt: usize,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default)]
    pub boundary: Boundary,
    /// Turning this off leaves pure diffusion; used to verify the stencil.
    #[serde(default = "default_true")]
    pub reaction: bool,
}

fn default_true() -> bool {
    true
}

impl SolverParams {
    pub fn case_i() -> Self {
        Self::with_regime(Regime::I)
    }

    pub fn case_ii() -> Self {
        Self::with_regime(Regime::II)
    }

    pub fn with_regime(regime: Regime) -> Self {
        let (b, nt) = match regime {
            Regime::I => (1.7, 20),
            Regime::II => (3.0, 10),
        };
        Self {
            a: 1.0,
            b,
            d0: 1.0,
            d1: 0.5,
            dt_output: 1e-2,
            t_end: 1.0,
            nt,
            scheme: Scheme::default(),
            boundary: Boundary::default(),
            reaction: true,
        }
    }

    /// Number of `dt_output` intervals in `[0, t_end]`.
    pub fn output_steps(&self) -> usize {
        (self.t_end / self.dt_output).round() as usize
    }

    /// Output intervals between consecutive recorded snapshots.
    pub fn snapshot_stride(&self) -> usize {
        self.output_steps() / self.nt
    }

    /// Snapshot times `t_k = k * t_end / nt`, `k = 1..=nt`.
    pub fn snapshot_times(&self) -> Vec<f64> {
        let stride = self.snapshot_stride() as f64;
        (1..=self.nt).map(|k| k as f64 * stride * self.dt_output).collect()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [("a", self.a), ("b", self.b), ("d0", self.d0), ("d1", self.d1)];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(ModelError::InvalidParam(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.dt_output > 0.0) || !(self.t_end > 0.0) {
            return Err(ModelError::InvalidParam("dt_output and t_end must be positive".into()));
        }
        let steps = self.output_steps();
        if ((steps as f64) * self.dt_output - self.t_end).abs() > 1e-9 * self.t_end {
            return Err(ModelError::InvalidParam(format!(
                "t_end {} is not a multiple of dt_output {}",
                self.t_end, self.dt_output
            )));
        }
        if self.nt == 0 || steps % self.nt != 0 {
            return Err(ModelError::InvalidParam(format!(
                "nt = {} does not divide {steps} output steps",
                self.nt
            )));
        }
        Ok(())
    }
}

/// Everything needed to regenerate a dataset bit for bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub solver: SolverParams,
    pub kle: KleConfig,
    pub seed: u64,
    /// Negative initial concentrations were clipped to zero.
    #[serde(default)]
    pub clip_negative: bool,
}

/// A set of trajectories sharing one grid and one snapshot schedule.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub case_label: CaseLabel,
    pub trajectories: Vec<Trajectory>,
    pub generation: Option<GenerationConfig>,
    /// KLE truncation count used when sampling the inputs, if known.
    pub kle_modes: Option<usize>,
}

impl Dataset {
    pub fn new(
        case_label: CaseLabel,
        trajectories: Vec<Trajectory>,
        generation: Option<GenerationConfig>,
    ) -> Result<Self, ModelError> {
        if let Some(first) = trajectories.first() {
            let ok = trajectories
                .iter()
                .all(|t| t.grid() == first.grid() && t.times() == first.times());
            if !ok {
                return Err(ModelError::GridMismatch);
            }
        }
        Ok(Self { case_label, trajectories, generation, kle_modes: None })
    }

    /// Number of trajectories (input fields).
    pub fn n_fields(&self) -> usize {
        self.trajectories.len()
    }

    /// Number of space-time samples, `n_fields * nt`.
    pub fn n_points(&self) -> usize {
        self.n_fields() * self.nt()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn grid(&self) -> Option<&Grid2D> {
        self.trajectories.first().map(Trajectory::grid)
    }

    pub fn nt(&self) -> usize {
        self.trajectories.first().map_or(0, Trajectory::nt)
    }

    pub fn times(&self) -> &[f64] {
        self.trajectories.first().map_or(&[], Trajectory::times)
    }

    /// Input fields as an `N x (nx*ny)` matrix.
    pub fn input_matrix(&self) -> nalgebra::DMatrix<f64> {
        let d = self.grid().map_or(0, Grid2D::len);
        nalgebra::DMatrix::from_fn(self.n_fields(), d, |i, j| {
            self.trajectories[i].input().values()[j]
        })
    }

    /// Flattened trajectories as an `N x D_out` matrix.
    pub fn output_matrix(&self) -> nalgebra::DMatrix<f64> {
        let n = self.n_fields();
        let d = self.trajectories.first().map_or(0, Trajectory::output_len);
        let mut m = nalgebra::DMatrix::zeros(n, d);
        for (i, t) in self.trajectories.iter().enumerate() {
            let mut col = 0;
            for s in t.snapshots() {
                for &v in s.values() {
                    m[(i, col)] = v;
                    col += 1;
                }
            }
        }
        m
    }

    /// Subset in the given order; keeps the label and generation metadata.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            case_label: self.case_label.clone(),
            trajectories: indices.iter().map(|&i| self.trajectories[i].clone()).collect(),
            generation: self.generation.clone(),
            kle_modes: self.kle_modes,
        }
    }

    /// Same trajectories with every input field replaced.
    pub fn with_inputs(&self, inputs: Vec<ScalarField>) -> Result<Dataset, ModelError> {
        if inputs.len() != self.n_fields() {
            return Err(ModelError::LengthMismatch { expected: self.n_fields(), found: inputs.len() });
        }
        let trajectories = self
            .trajectories
            .iter()
            .zip(inputs)
            .map(|(t, input)| Trajectory::new(input, t.snapshots.clone(), t.times.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Dataset { trajectories, ..self.clone() })
    }
}
