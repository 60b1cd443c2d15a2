//! Generation and inversion integrators.
//!
//! Rectified flow runs on `t ∈ [0, 1]` (data at 0, noise at 1). DDIM runs on
//! a real diffusion time `τ ∈ [0, T]` where integer `τ` are schedule steps and
//! `τ = 0` is the clean endpoint with `ᾱ = 1`. Generation walks a
//! [`TimeGrid`] downwards and inversion walks the same grid upwards.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::LatentGrid;
use crate::model::{Condition, Guidance, MixtureModel, NoiseLevel, Target};

/// Anything that can predict `E[x₀]`, `E[ε]` or the velocity at a noise level.
pub trait Predictor: Sync {
    fn predict(&self, x: &LatentGrid, level: NoiseLevel, target: Target) -> Result<LatentGrid>;

    /// Exact directional derivative, when available.
    fn jvp(
        &self,
        _x: &LatentGrid,
        _dir: &LatentGrid,
        _level: NoiseLevel,
        _target: Target,
    ) -> Result<Option<LatentGrid>> {
        Ok(None)
    }
}

/// A mixture model under a fixed guidance setting.
#[derive(Clone, Copy, Debug)]
pub struct Guided<'m> {
    pub model: &'m MixtureModel,
    pub guidance: Guidance,
}

impl<'m> Guided<'m> {
    pub fn new(model: &'m MixtureModel, condition: Condition, scale: f64) -> Self {
        Self {
            model,
            guidance: Guidance::new(condition, scale),
        }
    }
}

impl Predictor for Guided<'_> {
    fn predict(&self, x: &LatentGrid, level: NoiseLevel, target: Target) -> Result<LatentGrid> {
        self.model.predict(x, level, self.guidance, target)
    }

    fn jvp(
        &self,
        x: &LatentGrid,
        dir: &LatentGrid,
        level: NoiseLevel,
        target: Target,
    ) -> Result<Option<LatentGrid>> {
        self.model.predict_jvp(x, dir, level, self.guidance, target).map(Some)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridKind {
    UniformRf,
    UniformDdim,
}

/// Ascending time points `t_0 < … < t_N`.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeGrid {
    kind: GridKind,
    points: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl TimeGrid {
    /// `t_j = j/N` on `[0, 1]`.
    pub fn uniform_rf(steps: usize) -> Result<Self> {
        Self::rf_window(0.0, 1.0, steps)
    }

    pub fn rf_window(start: f64, end: f64, steps: usize) -> Result<Self> {
        if !(0.0..end).contains(&start) || end > 1.0 {
            return Err(Error::invalid(format!("bad rectified-flow window [{start}, {end}]")));
        }
        let points = uniform_points(start, end, steps)?;
        Ok(Self {
            kind: GridKind::UniformRf,
            alpha_bar: Vec::new(),
            points,
        })
    }

    /// `τ_j = j·T/N` on `[0, T]`.
    pub fn uniform_ddim(model: &MixtureModel, steps: usize) -> Result<Self> {
        Self::ddim_window(model, 0.0, model.schedule().steps() as f64, steps)
    }

    pub fn ddim_window(model: &MixtureModel, start: f64, end: f64, steps: usize) -> Result<Self> {
        let t_max = model.schedule().steps() as f64;
        if !(0.0..end).contains(&start) || end > t_max {
            return Err(Error::invalid(format!("bad diffusion window [{start}, {end}]")));
        }
        let points = uniform_points(start, end, steps)?;
        let alpha_bar = points
            .iter()
            .map(|&tau| model.schedule().alpha_bar_at(tau))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            kind: GridKind::UniformDdim,
            points,
            alpha_bar,
        })
    }

    pub fn kind(&self) -> GridKind {
        self.kind
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn steps(&self) -> usize {
        self.points.len() - 1
    }

    pub fn level(&self, j: usize) -> NoiseLevel {
        match self.kind {
            GridKind::UniformRf => NoiseLevel::rectified_flow(self.points[j]),
            GridKind::UniformDdim => NoiseLevel::diffusion(self.alpha_bar[j]),
        }
    }

    /// Log-SNR `log(α/σ)`; `+∞` at a clean endpoint.
    pub fn lambda(&self, j: usize) -> f64 {
        let l = self.level(j);
        (l.alpha / l.sigma).ln()
    }

    fn expect(&self, kind: GridKind) -> Result<()> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(Error::invalid(format!("solver needs a {kind:?} grid, got {:?}", self.kind)))
        }
    }
}

fn uniform_points(start: f64, end: f64, steps: usize) -> Result<Vec<f64>> {
    if steps == 0 {
        return Err(Error::invalid("steps must be at least 1"));
    }
    let n = steps as f64;
    let mut p: Vec<f64> = (0..=steps)
        .map(|j| start + (end - start) * j as f64 / n)
        .collect();
    p[steps] = end;
    Ok(p)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradientMode {
    #[default]
    FiniteDifference,
    Analytic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub steps: usize,
    pub fp_max_iters: usize,
    pub fp_tol: f64,
    pub gd_max_iters: usize,
    pub gd_step: f64,
    pub guidance_scale: f64,
    pub gradient: GradientMode,
    pub fd_step: f64,
}

pub const RF_STEPS: usize = 28;
pub const DDIM_STEPS: usize = 50;

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            steps: RF_STEPS,
            fp_max_iters: 50,
            fp_tol: 1e-10,
            gd_max_iters: 20,
            gd_step: 0.1,
            guidance_scale: 3.5,
            gradient: GradientMode::FiniteDifference,
            fd_step: 1e-5,
        }
    }
}

impl SolverConfig {
    pub fn rf() -> Self {
        Self::default()
    }

    pub fn ddim() -> Self {
        Self {
            steps: DDIM_STEPS,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::invalid("steps must be at least 1"));
        }
        for (name, v) in [("fp_tol", self.fp_tol), ("gd_step", self.gd_step), ("fd_step", self.fd_step)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        if !self.guidance_scale.is_finite() {
            return Err(Error::invalid("guidance_scale must be finite"));
        }
        Ok(())
    }
}

/// Result of an inversion, with per-step solve diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct Inversion {
    pub latent: LatentGrid,
    /// Every inner solve met its stopping rule.
    pub converged: bool,
    pub unconverged_steps: usize,
    /// Largest exit residual over the steps (0 for explicit schemes).
    pub max_residual: f64,
}

impl Inversion {
    fn explicit(latent: LatentGrid) -> Self {
        Self {
            latent,
            converged: true,
            unconverged_steps: 0,
            max_residual: 0.0,
        }
    }
}

/// Optional sink for intermediate latents, first entry is the start point.
pub type Trace<'a> = Option<&'a mut Vec<LatentGrid>>;

fn record(trace: &mut Trace<'_>, x: &LatentGrid) {
    if let Some(t) = trace.as_deref_mut() {
        t.push(x.clone());
    }
}

fn finite(x: LatentGrid, what: &str, step: usize) -> Result<LatentGrid> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::Divergence(format!("{what}: non-finite latent at step {step}")))
    }
}

fn velocity<P: Predictor + ?Sized>(p: &P, grid: &TimeGrid, x: &LatentGrid, j: usize) -> Result<LatentGrid> {
    p.predict(x, grid.level(j), Target::Velocity)
}

/// Explicit Euler from `t = 1` down to `t = 0`.
pub fn rf_sample<P: Predictor + ?Sized>(
    p: &P,
    grid: &TimeGrid,
    x_t: &LatentGrid,
    mut trace: Trace<'_>,
) -> Result<LatentGrid> {
    grid.expect(GridKind::UniformRf)?;
    let t = grid.points();
    let mut x = x_t.clone();
    record(&mut trace, &x);
    for i in (1..t.len()).rev() {
        let v = velocity(p, grid, &x, i)?;
        x.axpy(t[i - 1] - t[i], &v);
        x = finite(x, "rf_sample", i)?;
        record(&mut trace, &x);
    }
    Ok(x)
}

/// Explicit inversion: velocity evaluated at the known lower point.
pub fn rf_invert_naive<P: Predictor + ?Sized>(
    p: &P,
    grid: &TimeGrid,
    x0: &LatentGrid,
    mut trace: Trace<'_>,
) -> Result<Inversion> {
    grid.expect(GridKind::UniformRf)?;
    let t = grid.points();
    let mut x = x0.clone();
    record(&mut trace, &x);
    for i in 1..t.len() {
        let v = velocity(p, grid, &x, i - 1)?;
        x.axpy(t[i] - t[i - 1], &v);
        x = finite(x, "rf_invert_naive", i)?;
        record(&mut trace, &x);
    }
    Ok(Inversion::explicit(x))
}

/// Implicit inversion: solves `y = x + h·v(y, t_i)` per step by fixed-point
/// iteration from the naive step. A step converges when the max-norm update
/// drops to `fp_tol`.
pub fn rf_invert_implicit<P: Predictor + ?Sized>(
    p: &P,
    grid: &TimeGrid,
    x0: &LatentGrid,
    cfg: &SolverConfig,
    mut trace: Trace<'_>,
) -> Result<Inversion> {
    grid.expect(GridKind::UniformRf)?;
    cfg.validate()?;
    let t = grid.points();
    let mut x = x0.clone();
    let mut unconverged = 0;
    let mut max_residual: f64 = 0.0;
    record(&mut trace, &x);
    for i in 1..t.len() {
        let h = t[i] - t[i - 1];
        let mut y = x.clone();
        y.axpy(h, &velocity(p, grid, &x, i - 1)?);
        let mut residual = f64::INFINITY;
        for _ in 0..cfg.fp_max_iters {
            let mut next = x.clone();
            next.axpy(h, &velocity(p, grid, &y, i)?);
            let next = finite(next, "rf_invert_implicit", i)?;
            residual = next.max_abs_diff(&y);
            y = next;
            if residual <= cfg.fp_tol {
                break;
            }
        }
        if residual > cfg.fp_tol {
            unconverged += 1;
        }
        max_residual = max_residual.max(residual);
        x = y;
        record(&mut trace, &x);
    }
    Ok(Inversion {
        latent: x,
        converged: unconverged == 0,
        unconverged_steps: unconverged,
        max_residual,
    })
}

/// `(x̂₀, ε̂)` at grid point `j` with `x̂₀ = (x − σ·ε̂)/α`.
fn x0_and_eps<P: Predictor + ?Sized>(
    p: &P,
    grid: &TimeGrid,
    x: &LatentGrid,
    j: usize,
) -> Result<(LatentGrid, LatentGrid)> {
    let level = grid.level(j);
    let eps = p.predict(x, level, Target::Noise)?;
    if level.alpha <= 0.0 {
        return Err(Error::DivisionByZero("alpha_bar is zero"));
    }
    let x0 = x.lincomb(1.0 / level.alpha, &eps, -level.sigma / level.alpha);
    Ok((x0, eps))
}

/// `x̂₀ = (x_t − √(1−ᾱ_t)·ε̂)/√ᾱ_t` at integer step `t`.
pub fn predicted_x0(model: &MixtureModel, x_t: &LatentGrid, t: usize, cond: Condition) -> Result<LatentGrid> {
    let a = model.schedule().alpha_bar(t)?;
    if a <= 0.0 {
        return Err(Error::DivisionByZero("alpha_bar is zero"));
    }
    let eps = model.ddim_eps(x_t, t, cond)?;
    Ok(x_t.lincomb(1.0 / a.sqrt(), &eps, -(1.0 - a).sqrt() / a.sqrt()))
}

/// One DDIM move from grid point `from` to `to`, in either direction.
fn ddim_move<P: Predictor + ?Sized>(
    p: &P,
    grid: &TimeGrid,
    x: &LatentGrid,
    from: usize,
    to: usize,
) -> Result<LatentGrid> {
    let (x0, eps) = x0_and_eps(p, grid, x, from)?;
    let l = grid.level(to);
    Ok(x0.lincomb(l.alpha, &eps, l.sigma))
}

pub fn ddim_sample<P: Predictor + ?Sized>(
    p: &P,
    grid: &TimeGrid,
    x_t: &LatentGrid,
    mut trace: Trace<'_>,
) -> Result<LatentGrid> {
    grid.expect(GridKind::UniformDdim)?;
    let mut x = x_t.clone();
    record(&mut trace, &x);
    for i in (1..=grid.steps()).rev() {
        x = finite(ddim_move(p, grid, &x, i, i - 1)?, "ddim_sample", i)?;
        record(&mut trace, &x);
    }
    Ok(x)
}

/// Forward-Euler inversion using the prediction at the known point.
pub fn ddim_invert_naive<P: Predictor + ?Sized>(
    p: &P,
    grid: &TimeGrid,
    x0: &LatentGrid,
    mut trace: Trace<'_>,
) -> Result<Inversion> {
    grid.expect(GridKind::UniformDdim)?;
    let mut x = x0.clone();
    record(&mut trace, &x);
    for i in 1..=grid.steps() {
        x = finite(ddim_move(p, grid, &x, i - 1, i)?, "ddim_invert_naive", i)?;
        record(&mut trace, &x);
    }
    Ok(Inversion::explicit(x))
}

/// Backward-Euler inversion: for each step, refines the naive guess `y` by
/// descent on `½‖step(y) − x_known‖²`, where `step` is the generation move.
///
/// The step Jacobian is `c₁I + c₂·∂x̂₀/∂y` with `∂x̂₀/∂y` a (guided) posterior
/// covariance, hence symmetric, so `Jᵀr = Jr` and one directional derivative
/// per iteration suffices.
pub fn ddim_invert_exact<P: Predictor + ?Sized>(
    p: &P,
    grid: &TimeGrid,
    x0: &LatentGrid,
    cfg: &SolverConfig,
    mut trace: Trace<'_>,
) -> Result<Inversion> {
    grid.expect(GridKind::UniformDdim)?;
    cfg.validate()?;
    let mut x = x0.clone();
    let mut unconverged = 0;
    let mut max_residual: f64 = 0.0;
    record(&mut trace, &x);
    for i in 1..=grid.steps() {
        let step = |y: &LatentGrid| ddim_move(p, grid, y, i, i - 1);
        let mut y = ddim_move(p, grid, &x, i - 1, i)?;
        let mut r = step(&y)?.sub(&x);
        let mut f = r.sq_norm();
        let f_init = f;
        let mut eta = cfg.gd_step;
        for _ in 0..cfg.gd_max_iters {
            if f == 0.0 {
                break;
            }
            let g = step_jvp(p, grid, i, &y, &r, cfg)?;
            let mut accepted = false;
            for _ in 0..30 {
                let cand = y.lincomb(1.0, &g, -eta);
                let rc = step(&cand)?.sub(&x);
                let fc = rc.sq_norm();
                if fc < f {
                    y = cand;
                    r = rc;
                    f = fc;
                    eta *= 2.0;
                    accepted = true;
                    break;
                }
                eta *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        let residual = f.sqrt();
        if f_init > 0.0 && f >= f_init {
            unconverged += 1;
        }
        max_residual = max_residual.max(residual);
        x = finite(y, "ddim_invert_exact", i)?;
        record(&mut trace, &x);
    }
    Ok(Inversion {
        latent: x,
        converged: unconverged == 0,
        unconverged_steps: unconverged,
        max_residual,
    })
}

/// `J·dir` for the generation move `i → i−1` at `y`.
fn step_jvp<P: Predictor + ?Sized>(
    p: &P,
    grid: &TimeGrid,
    i: usize,
    y: &LatentGrid,
    dir: &LatentGrid,
    cfg: &SolverConfig,
) -> Result<LatentGrid> {
    let norm = dir.sq_norm().sqrt();
    if norm == 0.0 {
        return Ok(dir.clone());
    }
    if cfg.gradient == GradientMode::Analytic {
        let (from, to) = (grid.level(i), grid.level(i - 1));
        if let Some(de) = p.jvp(y, dir, from, Target::Noise)? {
            // step(y) = (α'/α)·y + (σ' − α'σ/α)·ε̂(y)
            let c_y = to.alpha / from.alpha;
            let c_e = to.sigma - to.alpha * from.sigma / from.alpha;
            return Ok(dir.lincomb(c_y, &de, c_e));
        }
    }
    let h = cfg.fd_step;
    let unit = dir.map(|v| v / norm);
    let plus = ddim_move(p, grid, &y.lincomb(1.0, &unit, h), i, i - 1)?;
    let minus = ddim_move(p, grid, &y.lincomb(1.0, &unit, -h), i, i - 1)?;
    Ok(plus.lincomb(norm / (2.0 * h), &minus, -norm / (2.0 * h)))
}

/// Multistep history for DPM-Solver++(2M), owned by one trajectory.
#[derive(Clone, Debug, Default)]
pub struct DpmppContext {
    prev: Option<(LatentGrid, f64)>,
}

impl DpmppContext {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn has_history(&self) -> bool {
        self.prev.is_some()
    }
}

/// One DPM-Solver++ step from grid point `from` to `to` (either direction).
///
/// Order 1 is the exponential-integrator step with a frozen `x̂₀`, which is
/// algebraically the DDIM move. Order 2 replaces `x̂₀` by
/// `(1 + 1/(2r))·x̂₀ − 1/(2r)·x̂₀_prev` with `r = h_prev/h`. At a clean
/// endpoint the log-SNR step is infinite and the step falls back to order 1.
pub fn dpmpp_step<P: Predictor + ?Sized>(
    p: &P,
    grid: &TimeGrid,
    x: &LatentGrid,
    from: usize,
    to: usize,
    order: u8,
    ctx: &mut DpmppContext,
) -> Result<LatentGrid> {
    grid.expect(GridKind::UniformDdim)?;
    if !(order == 1 || order == 2) {
        return Err(Error::invalid(format!("order {order} not in {{1, 2}}")));
    }
    if order == 2 && ctx.prev.is_none() {
        return Err(Error::InvalidState("order-2 step needs a previous prediction".into()));
    }
    let (x0, eps) = x0_and_eps(p, grid, x, from)?;
    let l_to = grid.level(to);
    let mut next = x0.lincomb(l_to.alpha, &eps, l_to.sigma);
    let h = grid.lambda(to) - grid.lambda(from);
    if order == 2 {
        let (prev_x0, h_prev) = ctx.prev.as_ref().expect("checked above");
        if h.is_finite() && h_prev.is_finite() {
            let r = h_prev / h;
            let k = -l_to.alpha * ((-h).exp() - 1.0) / (2.0 * r);
            next.axpy(k, &x0);
            next.axpy(-k, prev_x0);
        }
    }
    ctx.prev = Some((x0, h));
    Ok(next)
}

/// Full DPM-Solver++(2M) trajectory along the grid; order 1 on the first step.
pub fn dpmpp_sample<P: Predictor + ?Sized>(
    p: &P,
    grid: &TimeGrid,
    x_t: &LatentGrid,
    mut trace: Trace<'_>,
) -> Result<LatentGrid> {
    let mut ctx = DpmppContext::new();
    let mut x = x_t.clone();
    record(&mut trace, &x);
    for i in (1..=grid.steps()).rev() {
        let order = if ctx.has_history() { 2 } else { 1 };
        x = finite(dpmpp_step(p, grid, &x, i, i - 1, order, &mut ctx)?, "dpmpp_sample", i)?;
        record(&mut trace, &x);
    }
    Ok(x)
}

/// DPM-Solver++(2M) run upwards along the grid.
pub fn dpmpp_invert<P: Predictor + ?Sized>(
    p: &P,
    grid: &TimeGrid,
    x0: &LatentGrid,
    mut trace: Trace<'_>,
) -> Result<Inversion> {
    let mut ctx = DpmppContext::new();
    let mut x = x0.clone();
    record(&mut trace, &x);
    for i in 1..=grid.steps() {
        let order = if ctx.has_history() { 2 } else { 1 };
        x = finite(dpmpp_step(p, grid, &x, i - 1, i, order, &mut ctx)?, "dpmpp_invert", i)?;
        record(&mut trace, &x);
    }
    Ok(Inversion::explicit(x))
}

/// `‖a − b‖² / ‖b‖²`.
pub fn roundtrip_nmse(recovered: &LatentGrid, truth: &LatentGrid) -> Result<f64> {
    let den = truth.sq_norm();
    if den == 0.0 {
        return Err(Error::DivisionByZero("reference latent is zero"));
    }
    Ok(recovered.sub(truth).sq_norm() / den)
}
