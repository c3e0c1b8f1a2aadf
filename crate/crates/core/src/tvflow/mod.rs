//! Total-variation energy, its proximal map, and the implicit TV gradient flow.

mod chain;
mod dual;

use log::warn;

use crate::error::{Result, StvError};
use crate::image::GrayImage;

use dual::{order_free_sum, DualField, Grid, Solution, Workspace};

/// Boundary handling of the finite-difference stencils.
///
/// `Periodic` (the default) makes whole-pixel translations commute exactly
/// with the flow; `Neumann` replicates edge pixels. Both conserve mass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Boundary {
    #[default]
    Periodic,
    Neumann,
}

impl Boundary {
    pub fn as_str(self) -> &'static str {
        match self {
            Boundary::Periodic => "periodic",
            Boundary::Neumann => "neumann",
        }
    }
}

impl std::str::FromStr for Boundary {
    type Err = StvError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "periodic" => Ok(Boundary::Periodic),
            "neumann" => Ok(Boundary::Neumann),
            other => Err(StvError::InvalidConfig(format!("unknown boundary {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowConfig {
    /// Time step of the implicit scheme.
    pub dt: f64,
    /// Number of spectral components; the flow performs `n_components + 1` steps.
    pub n_components: usize,
    /// Relative duality-gap tolerance of each proximal solve.
    pub inner_tol: f64,
    pub inner_max_iter: usize,
    pub boundary: Boundary,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            dt: 0.25,
            n_components: 120,
            inner_tol: 1e-6,
            inner_max_iter: 500,
            boundary: Boundary::Periodic,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(StvError::InvalidConfig(format!("dt must be positive, got {}", self.dt)));
        }
        if self.n_components < 3 {
            return Err(StvError::InvalidConfig(format!(
                "n_components must be at least 3, got {}",
                self.n_components
            )));
        }
        if !(self.inner_tol > 0.0) {
            return Err(StvError::InvalidConfig("inner_tol must be positive".into()));
        }
        if self.inner_max_iter == 0 {
            return Err(StvError::InvalidConfig("inner_max_iter must be at least 1".into()));
        }
        Ok(())
    }

    /// Number of flow steps taken: one more than the component count.
    pub fn steps(&self) -> usize {
        self.n_components + 1
    }

    /// Final time `(n_components + 1) * dt` of the evolution.
    pub fn horizon(&self) -> f64 {
        self.steps() as f64 * self.dt
    }
}

/// Discrete isotropic total variation.
///
/// The density at each pixel is `sqrt(dx^2 + dy^2)` averaged over the four
/// one-sided difference stencils, which keeps the energy invariant under the
/// symmetries of the pixel grid. On a single row it reduces to the sum of
/// absolute forward differences.
pub fn tv_energy(img: &GrayImage) -> f64 {
    tv_energy_with(img, Boundary::default())
}

pub fn tv_energy_with(img: &GrayImage, boundary: Boundary) -> f64 {
    let grid = Grid::new(img.width(), img.height(), boundary);
    let mut density = vec![0.0; grid.n];
    grid.tv_densities(img.values(), &mut density);
    order_free_sum(&density)
}

/// Result of a proximal solve.
#[derive(Debug, Clone)]
pub struct ProxOutcome {
    pub image: GrayImage,
    pub converged: bool,
    pub iterations: usize,
    /// Final duality gap (zero for the exact 1D solver).
    pub gap: f64,
}


/// Reusable solver state; keeps the dual field between consecutive flow steps.
struct ProxSolver {
    width: usize,
    height: usize,
    boundary: Boundary,
    grid: Option<Grid>,
    dual: Option<DualField>,
    ws: Option<Workspace>,
}

impl ProxSolver {
    fn new(width: usize, height: usize, boundary: Boundary) -> Self {
        let one_dimensional = width == 1 || height == 1;
        let (grid, dual, ws) = if one_dimensional {
            (None, None, None)
        } else {
            let grid = Grid::new(width, height, boundary);
            let n = grid.n;
            (Some(grid), Some(DualField::zeros(n)), Some(Workspace::new(n)))
        };
        Self {
            width,
            height,
            boundary,
            grid,
            dual,
            ws,
        }
    }

    fn step(&mut self, f: &GrayImage, tau: f64, tol: f64, max_iter: usize) -> ProxOutcome {
        debug_assert!(f.width() == self.width && f.height() == self.height);
        let mut out = vec![0.0; f.len()];
        match (&self.grid, &mut self.dual, &mut self.ws) {
            (Some(grid), Some(dual), Some(ws)) => {
                if f.oscillation() == 0.0 {
                    return ProxOutcome {
                        image: f.clone(),
                        converged: true,
                        iterations: 0,
                        gap: 0.0,
                    };
                }
                let threshold = tol * tv_energy_with(f, self.boundary);
                let mean = order_free_sum(f.values()) / f.len() as f64;
                let (stats, solution) =
                    dual::solve(grid, f.values(), mean, tau, threshold, max_iter, dual, ws, &mut out);
                if let Solution::Constant = solution {
                    out.fill(mean);
                }
                ProxOutcome {
                    image: GrayImage::from_raw(self.width, self.height, out),
                    converged: stats.converged,
                    iterations: stats.iterations,
                    gap: stats.gap,
                }
            }
            _ => {
                chain::prox_1d(f.values(), tau, self.boundary, &mut out);
                ProxOutcome {
                    image: GrayImage::from_raw(self.width, self.height, out),
                    converged: true,
                    iterations: 0,
                    gap: 0.0,
                }
            }
        }
    }
}

/// One implicit Euler step of the TV flow:
/// `argmin_u |u - f|^2 / (2 tau) + TV(u)`.
///
/// Images with a single row or column are solved exactly; all others use an
/// accelerated dual projection method stopped once the duality gap drops
/// below `tol * TV(f)`, i.e. the objective is within relative accuracy `tol`
/// of its value at `f`. If that does not happen within `max_iter`
/// iterations the best iterate is returned with `converged == false`.
pub fn rof_prox(f: &GrayImage, tau: f64, tol: f64, max_iter: usize) -> Result<ProxOutcome> {
    rof_prox_with(f, tau, tol, max_iter, Boundary::default())
}

pub fn rof_prox_with(
    f: &GrayImage,
    tau: f64,
    tol: f64,
    max_iter: usize,
    boundary: Boundary,
) -> Result<ProxOutcome> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(StvError::InvalidConfig(format!("tau must be positive, got {tau}")));
    }
    if !(tol > 0.0) || max_iter == 0 {
        return Err(StvError::InvalidConfig("tol and max_iter must be positive".into()));
    }
    let mut solver = ProxSolver::new(f.width(), f.height(), boundary);
    Ok(solver.step(f, tau, tol, max_iter))
}

/// The TV-flow trajectory `u_0 = f, u_1, ..., u_{n+1}` on the grid `t_k = k * dt`.
#[derive(Debug, Clone)]
pub struct ScaleSpace {
    pub config: FlowConfig,
    pub frames: Vec<GrayImage>,
    /// Steps (1-based frame index) whose inner solve hit the iteration cap.
    pub unconverged_steps: Vec<usize>,
}

impl ScaleSpace {
    pub fn source(&self) -> &GrayImage {
        &self.frames[0]
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.config.dt
    }

    pub fn is_converged(&self) -> bool {
        self.unconverged_steps.is_empty()
    }
}

/// Evolves the TV gradient flow from `f` with implicit steps of size `config.dt`.
///
/// Each step warm-starts the dual solver from the previous step's dual field.
pub fn tv_flow(f: &GrayImage, config: &FlowConfig) -> Result<ScaleSpace> {
    config.validate()?;
    let mut solver = ProxSolver::new(f.width(), f.height(), config.boundary);
    let mut frames = Vec::with_capacity(config.steps() + 1);
    frames.push(f.clone());
    let mut unconverged = Vec::new();
    for k in 1..=config.steps() {
        let prev = &frames[k - 1];
        let outcome = solver.step(prev, config.dt, config.inner_tol, config.inner_max_iter);
        log::debug!("step {k}: iters {} gap {:.3e}", outcome.iterations, outcome.gap);
        if !outcome.converged {
            unconverged.push(k);
        }
        frames.push(outcome.image);
    }
    if !unconverged.is_empty() {
        warn!(
            "tv_flow: {} of {} proximal steps hit the iteration cap (first at step {})",
            unconverged.len(),
            config.steps(),
            unconverged[0]
        );
    }
    Ok(ScaleSpace {
        config: *config,
        frames,
        unconverged_steps: unconverged,
    })
}
