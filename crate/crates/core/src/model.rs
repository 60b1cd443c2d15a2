//! Closed-form generative models.
//!
//! The data distribution is an isotropic Gaussian mixture
//! `Σ p_k N(μ_k, σ_k² I)`. Under any interpolation `x = α·x₀ + σ·ε` with
//! `ε ~ N(0, I)`, component `k` gives `x | k ~ N(αμ_k, u_k I)` with
//! `u_k = α²σ_k² + σ²`, and the conditional means are affine in `x`:
//!
//! ```text
//! E[x₀ | x, k] = μ_k + ασ_k²/u_k · (x − αμ_k)
//! E[ε  | x, k] = σ/u_k · (x − αμ_k)
//! ```
//!
//! Rectified flow uses `α = 1 − t, σ = t` and velocity `E[ε − x₀ | x]`; DDIM
//! uses `α = √ᾱ_t, σ = √(1 − ᾱ_t)` and predicts `E[ε | x]`. Responsibilities
//! are computed in log space.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{self, fft2, ifft2, ComplexGrid, LatentGrid, RngStream};

/// Smallest component scale admitted for experiment use.
pub const SIGMA_MIN: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self {
            steps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
        }
    }
}

/// Linear-β diffusion schedule with `ᾱ_t = Π_{i≤t} (1 − β_i)` and `ᾱ_0 = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    spec: ScheduleSpec,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps < 2 {
            return Err(Error::invalid("schedule needs at least 2 steps"));
        }
        if !(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::invalid(format!(
                "need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
            )));
        }
        let mut alpha_bar = Vec::with_capacity(steps + 1);
        alpha_bar.push(1.0);
        let mut acc = 1.0;
        for i in 0..steps {
            let beta = beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64;
            acc *= 1.0 - beta;
            alpha_bar.push(acc);
        }
        Ok(Self {
            spec: ScheduleSpec {
                steps,
                beta_start,
                beta_end,
            },
            alpha_bar,
        })
    }

    pub fn from_spec(spec: &ScheduleSpec) -> Result<Self> {
        Self::linear(spec.steps, spec.beta_start, spec.beta_end)
    }

    pub fn spec(&self) -> &ScheduleSpec {
        &self.spec
    }

    pub fn steps(&self) -> usize {
        self.spec.steps
    }

    /// `ᾱ_t` for an integer step `1 ≤ t ≤ T`.
    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        if t == 0 || t > self.steps() {
            return Err(Error::invalid(format!(
                "step {t} outside 1..={}",
                self.steps()
            )));
        }
        Ok(self.alpha_bar[t])
    }

    /// `ᾱ` at a real time `τ ∈ [0, T]`, log-linear between integer steps.
    /// Exact at integers; `τ = 0` gives 1.
    pub fn alpha_bar_at(&self, tau: f64) -> Result<f64> {
        let t_max = self.steps() as f64;
        if !(0.0..=t_max).contains(&tau) {
            return Err(Error::invalid(format!("time {tau} outside [0, {t_max}]")));
        }
        let lo = tau.floor() as usize;
        if lo == self.steps() {
            return Ok(self.alpha_bar[lo]);
        }
        let frac = tau - lo as f64;
        if frac == 0.0 {
            return Ok(self.alpha_bar[lo]);
        }
        let (a, b) = (self.alpha_bar[lo].ln(), self.alpha_bar[lo + 1].ln());
        Ok((a + frac * (b - a)).exp())
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::from_spec(&ScheduleSpec::default()).expect("default schedule is valid")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Component {
    pub template: LatentGrid,
    pub scale: f64,
    pub prior: f64,
}

/// What the generator is asked for. `Perturbed` blends the exact label with
/// the prior; it stands in for an approximate caption of the image.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Condition {
    Exact { k: usize },
    Null,
    Perturbed { k: usize, eta: f64 },
}

/// Condition plus classifier-free guidance scale.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Guidance {
    pub condition: Condition,
    pub scale: f64,
}

impl Guidance {
    pub fn new(condition: Condition, scale: f64) -> Self {
        Self { condition, scale }
    }

    pub fn unguided(condition: Condition) -> Self {
        Self::new(condition, 1.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixtureModel {
    components: Vec<Component>,
    schedule: NoiseSchedule,
    template_sq_norms: Vec<f64>,
}

/// Interpolation level `x = α·x₀ + σ·ε`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseLevel {
    pub alpha: f64,
    pub sigma: f64,
}

impl NoiseLevel {
    pub fn rectified_flow(t: f64) -> Self {
        Self {
            alpha: 1.0 - t,
            sigma: t,
        }
    }

    pub fn diffusion(alpha_bar: f64) -> Self {
        Self {
            alpha: alpha_bar.sqrt(),
            sigma: (1.0 - alpha_bar).max(0.0).sqrt(),
        }
    }
}

/// Which conditional expectation a predictor returns.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Target {
    /// `E[x₀ | x]`
    Data,
    /// `E[ε | x]`
    Noise,
    /// `E[ε − x₀ | x]`, the rectified-flow velocity.
    Velocity,
}

/// A prediction in the form `x_coef·x + Σ_k mu_coef[k]·μ_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineForm {
    pub x_coef: f64,
    pub mu_coef: Vec<f64>,
}

impl AffineForm {
    /// `self + s·(other − self)`, i.e. guidance with `self` as the null branch.
    fn guide_towards(&self, cond: &AffineForm, s: f64) -> AffineForm {
        AffineForm {
            x_coef: self.x_coef + s * (cond.x_coef - self.x_coef),
            mu_coef: self
                .mu_coef
                .iter()
                .zip(&cond.mu_coef)
                .map(|(n, c)| n + s * (c - n))
                .collect(),
        }
    }
}

/// Responsibilities and per-component variances at one point.
#[derive(Clone, Debug)]
struct Posterior {
    level: NoiseLevel,
    resp: Vec<f64>,
    var: Vec<f64>,
}

impl MixtureModel {
    pub fn new(components: Vec<Component>, schedule: NoiseSchedule) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| Error::invalid("mixture needs at least one component"))?;
        let shape = first.template.shape();
        let mut total = 0.0;
        for (k, c) in components.iter().enumerate() {
            if c.template.shape() != shape {
                return Err(Error::invalid(format!("component {k} has a different shape")));
            }
            if !(c.prior > 0.0 && c.prior.is_finite()) {
                return Err(Error::invalid(format!("component {k} prior must be positive")));
            }
            if !(c.scale >= 0.0 && c.scale.is_finite()) {
                return Err(Error::invalid(format!("component {k} scale must be nonnegative")));
            }
            total += c.prior;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("priors sum to {total}, not 1")));
        }
        let template_sq_norms = components.iter().map(|c| c.template.sq_norm()).collect();
        Ok(Self {
            components,
            schedule,
            template_sq_norms,
        })
    }

    /// `K` components with low-pass random templates, equal scale, uniform prior.
    pub fn low_frequency(
        shape: (usize, usize, usize),
        k: usize,
        scale: f64,
        template: &TemplateSpec,
        seed: u64,
    ) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("need at least one component"));
        }
        let components = (0..k)
            .map(|i| {
                Ok(Component {
                    template: low_frequency_template(shape, template, seed, i as u64)?,
                    scale,
                    prior: 1.0 / k as f64,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(components, NoiseSchedule::default())
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.components[0].template.shape()
    }

    pub fn priors(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.prior).collect()
    }

    /// Every scale at least [`SIGMA_MIN`].
    pub fn check_experiment_ready(&self) -> Result<()> {
        match self.components.iter().position(|c| c.scale < SIGMA_MIN) {
            Some(k) => Err(Error::invalid(format!(
                "component {k} scale {} below {SIGMA_MIN}",
                self.components[k].scale
            ))),
            None => Ok(()),
        }
    }

    fn check_input(&self, x: &LatentGrid) -> Result<()> {
        x.ensure_same_shape(&self.components[0].template)
    }

    pub fn condition_weights(&self, c: Condition) -> Result<Vec<f64>> {
        let k_max = self.components.len();
        let onehot = |k: usize| -> Result<Vec<f64>> {
            if k >= k_max {
                return Err(Error::invalid(format!("component {k} out of range 0..{k_max}")));
            }
            let mut w = vec![0.0; k_max];
            w[k] = 1.0;
            Ok(w)
        };
        match c {
            Condition::Exact { k } => onehot(k),
            Condition::Null => Ok(self.priors()),
            Condition::Perturbed { k, eta } => {
                if !(0.0..=1.0).contains(&eta) {
                    return Err(Error::invalid(format!("eta {eta} outside [0, 1]")));
                }
                let hot = onehot(k)?;
                Ok(hot
                    .iter()
                    .zip(self.priors())
                    .map(|(h, p)| (1.0 - eta) * h + eta * p)
                    .collect())
            }
        }
    }

    fn posterior(&self, x: &LatentGrid, level: NoiseLevel, weights: &[f64]) -> Result<Posterior> {
        let NoiseLevel { alpha, sigma } = level;
        let d = x.len() as f64;
        let var: Vec<f64> = self
            .components
            .iter()
            .map(|c| alpha * alpha * c.scale * c.scale + sigma * sigma)
            .collect();
        let mut logp = vec![f64::NEG_INFINITY; self.components.len()];
        for (k, c) in self.components.iter().enumerate() {
            if weights[k] <= 0.0 {
                continue;
            }
            if var[k] <= 0.0 {
                return Err(Error::Singularity(format!(
                    "component {k} has zero variance at alpha={alpha}, sigma={sigma}"
                )));
            }
            let dist: f64 = x
                .data()
                .iter()
                .zip(c.template.data())
                .map(|(xi, mi)| {
                    let r = xi - alpha * mi;
                    r * r
                })
                .sum();
            logp[k] = weights[k].ln() - 0.5 * dist / var[k] - 0.5 * d * var[k].ln();
        }
        let max = logp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut resp: Vec<f64> = logp.iter().map(|&l| (l - max).exp()).collect();
        let z: f64 = resp.iter().sum();
        for r in &mut resp {
            *r /= z;
        }
        Ok(Posterior { level, resp, var })
    }

    /// Per-component coefficients `(p_k, q_k)` of `T_k(x) = p_k·x + q_k·μ_k`.
    fn component_coefs(&self, post: &Posterior, target: Target, k: usize) -> (f64, f64) {
        let NoiseLevel { alpha, sigma } = post.level;
        let u = post.var[k];
        let s2 = self.components[k].scale.powi(2);
        let data = (alpha * s2 / u, sigma * sigma / u);
        let noise = (sigma / u, -sigma * alpha / u);
        match target {
            Target::Data => data,
            Target::Noise => noise,
            Target::Velocity => (noise.0 - data.0, noise.1 - data.1),
        }
    }

    fn form(&self, post: &Posterior, target: Target) -> AffineForm {
        let mut x_coef = 0.0;
        let mut mu_coef = vec![0.0; self.components.len()];
        for (k, &r) in post.resp.iter().enumerate() {
            if r == 0.0 {
                continue;
            }
            let (p, q) = self.component_coefs(post, target, k);
            x_coef += r * p;
            mu_coef[k] = r * q;
        }
        AffineForm { x_coef, mu_coef }
    }

    /// Prediction at `x` as an affine form, with guidance applied.
    pub fn predict_form(
        &self,
        x: &LatentGrid,
        level: NoiseLevel,
        guidance: Guidance,
        target: Target,
    ) -> Result<AffineForm> {
        self.check_input(x)?;
        let null_w = self.condition_weights(Condition::Null)?;
        let null = self.form(&self.posterior(x, level, &null_w)?, target);
        if guidance.condition == Condition::Null {
            return Ok(null);
        }
        let cond_w = self.condition_weights(guidance.condition)?;
        let cond = self.form(&self.posterior(x, level, &cond_w)?, target);
        Ok(null.guide_towards(&cond, guidance.scale))
    }

    pub fn apply_form(&self, x: &LatentGrid, form: &AffineForm) -> LatentGrid {
        let mut out = x.map(|v| form.x_coef * v);
        for (k, &b) in form.mu_coef.iter().enumerate() {
            if b != 0.0 {
                out.axpy(b, &self.components[k].template);
            }
        }
        out
    }

    pub fn predict(
        &self,
        x: &LatentGrid,
        level: NoiseLevel,
        guidance: Guidance,
        target: Target,
    ) -> Result<LatentGrid> {
        let form = self.predict_form(x, level, guidance, target)?;
        Ok(self.apply_form(x, &form))
    }

    /// Directional derivative `J(x)·dir` of a (guided) prediction.
    pub fn predict_jvp(
        &self,
        x: &LatentGrid,
        dir: &LatentGrid,
        level: NoiseLevel,
        guidance: Guidance,
        target: Target,
    ) -> Result<LatentGrid> {
        self.check_input(x)?;
        self.check_input(dir)?;
        let null_w = self.condition_weights(Condition::Null)?;
        let null = self.jvp_single(x, dir, level, &null_w, target)?;
        if guidance.condition == Condition::Null {
            return Ok(null);
        }
        let cond_w = self.condition_weights(guidance.condition)?;
        let cond = self.jvp_single(x, dir, level, &cond_w, target)?;
        Ok(null.lincomb(1.0 - guidance.scale, &cond, guidance.scale))
    }

    fn jvp_single(
        &self,
        x: &LatentGrid,
        dir: &LatentGrid,
        level: NoiseLevel,
        weights: &[f64],
        target: Target,
    ) -> Result<LatentGrid> {
        let post = self.posterior(x, level, weights)?;
        let alpha = level.alpha;
        let x_dot_d = x.dot(dir);
        // γ_k = ⟨∇ log N_k, dir⟩ = −⟨x − αμ_k, dir⟩ / u_k
        let gamma: Vec<f64> = self
            .components
            .iter()
            .enumerate()
            .map(|(k, c)| {
                if post.resp[k] == 0.0 {
                    0.0
                } else {
                    -(x_dot_d - alpha * c.template.dot(dir)) / post.var[k]
                }
            })
            .collect();
        let mean_gamma: f64 = post.resp.iter().zip(&gamma).map(|(r, g)| r * g).sum();

        let mut dir_coef = 0.0;
        let mut x_coef = 0.0;
        let mut mu_coef = vec![0.0; self.components.len()];
        for (k, &r) in post.resp.iter().enumerate() {
            if r == 0.0 {
                continue;
            }
            let (p, q) = self.component_coefs(&post, target, k);
            let dr = r * (gamma[k] - mean_gamma);
            dir_coef += r * p;
            x_coef += dr * p;
            mu_coef[k] = dr * q;
        }
        let mut out = dir.lincomb(dir_coef, x, x_coef);
        for (k, &b) in mu_coef.iter().enumerate() {
            if b != 0.0 {
                out.axpy(b, &self.components[k].template);
            }
        }
        Ok(out)
    }

    /// Posterior responsibilities over components at a noise level.
    pub fn responsibilities(&self, x: &LatentGrid, level: NoiseLevel, c: Condition) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let w = self.condition_weights(c)?;
        Ok(self.posterior(x, level, &w)?.resp)
    }

    /// Rectified-flow velocity `E[x₁ − x₀ | x_t = x]` for `t ∈ [0, 1]`.
    pub fn rf_velocity(&self, x: &LatentGrid, t: f64, c: Condition) -> Result<LatentGrid> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::invalid(format!("time {t} outside [0, 1]")));
        }
        self.predict(x, NoiseLevel::rectified_flow(t), Guidance::unguided(c), Target::Velocity)
    }

    /// Exact posterior mean of the DDIM noise at integer step `1 ≤ t ≤ T`.
    pub fn ddim_eps(&self, x: &LatentGrid, t: usize, c: Condition) -> Result<LatentGrid> {
        let a = self.schedule.alpha_bar(t)?;
        self.predict(x, NoiseLevel::diffusion(a), Guidance::unguided(c), Target::Noise)
    }

    /// `√ᾱ_t·x₀ + √(1 − ᾱ_t)·ε` with fresh `ε` from `rng`.
    pub fn forward_noise(&self, x0: &LatentGrid, t: usize, rng: &mut RngStream) -> Result<LatentGrid> {
        let a = self.schedule.alpha_bar(t)?;
        let (c, h, w) = x0.shape();
        let eps = grid::sample_gaussian(rng, c, h, w)?;
        Ok(x0.lincomb(a.sqrt(), &eps, (1.0 - a).sqrt()))
    }
}

/// `v_null + scale·(v_cond − v_null)`.
pub fn cfg_combine(v_cond: &LatentGrid, v_null: &LatentGrid, scale: f64) -> Result<LatentGrid> {
    v_cond.ensure_same_shape(v_null)?;
    Ok(v_null.lincomb(1.0 - scale, v_cond, scale))
}

/// Low-pass random template: white noise filtered to frequencies within
/// `cutoff` of DC, each channel rescaled to RMS `amplitude`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemplateSpec {
    pub cutoff: f64,
    pub amplitude: f64,
}

pub fn low_frequency_template(
    shape: (usize, usize, usize),
    spec: &TemplateSpec,
    seed: u64,
    index: u64,
) -> Result<LatentGrid> {
    let (c, h, w) = shape;
    if !(spec.cutoff > 0.0) || !(spec.amplitude >= 0.0) {
        return Err(Error::invalid("template cutoff must be positive and amplitude nonnegative"));
    }
    let mut rng = RngStream::new(seed, 0x7465_6d70_0000_0000 | index);
    let noise = grid::sample_gaussian(&mut rng, c, h, w)?;
    let mut out = LatentGrid::zeros(c, h, w)?;
    for ch in 0..c {
        let spec_grid = fft2(noise.plane(ch), h, w)?;
        let mut filtered = ComplexGrid::zeros(h, w)?;
        for i in 0..h {
            for j in 0..w {
                let fi = i.min(h - i) as f64;
                let fj = j.min(w - j) as f64;
                if fi.hypot(fj) <= spec.cutoff {
                    filtered.set(i, j, spec_grid.get(i, j));
                }
            }
        }
        let plane = ifft2(&filtered)?.real_part();
        let rms = (plane.iter().map(|v| v * v).sum::<f64>() / plane.len() as f64).sqrt();
        let gain = if rms > 0.0 { spec.amplitude / rms } else { 0.0 };
        for (o, v) in out.plane_mut(ch).iter_mut().zip(&plane) {
            *o = v * gain;
        }
    }
    Ok(out)
}

/// Source of one component template in a model file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", untagged)]
pub enum TemplateSource {
    Generated {
        seed: u64,
        #[serde(flatten)]
        spec: TemplateSpec,
    },
    File {
        file: String,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentSpec {
    pub template: TemplateSource,
    pub scale: f64,
    pub prior: f64,
}

/// JSON model description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub schema: u32,
    pub components: Vec<ComponentSpec>,
    #[serde(default)]
    pub schedule: ScheduleSpec,
}

pub const MODEL_SCHEMA: u32 = 1;

/// Defaults for the experiment model.
pub const DEFAULT_COMPONENTS: usize = 8;
pub const DEFAULT_SCALE: f64 = 0.15;
/// Unit RMS so the data and noise ends have comparable scale.
pub const DEFAULT_TEMPLATE: TemplateSpec = TemplateSpec {
    cutoff: 8.0,
    amplitude: 1.0,
};

impl ModelSpec {
    pub fn default_mixture(seed: u64) -> Self {
        let k = DEFAULT_COMPONENTS;
        Self {
            schema: MODEL_SCHEMA,
            components: (0..k)
                .map(|i| ComponentSpec {
                    template: TemplateSource::Generated {
                        seed: seed.wrapping_add(i as u64),
                        spec: DEFAULT_TEMPLATE,
                    },
                    scale: DEFAULT_SCALE,
                    prior: 1.0 / k as f64,
                })
                .collect(),
            schedule: ScheduleSpec::default(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read model file {}: {e}", path.display())))?;
        let spec: ModelSpec = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("bad model file {}: {e}", path.display())))?;
        if spec.schema != MODEL_SCHEMA {
            return Err(Error::Config(format!("unsupported model schema {}", spec.schema)));
        }
        Ok(spec)
    }

    /// Builds the model at a latent shape. Relative template paths resolve
    /// against `base_dir`.
    pub fn build(&self, shape: (usize, usize, usize), base_dir: &Path) -> Result<MixtureModel> {
        let components = self
            .components
            .iter()
            .map(|c| {
                let template = match &c.template {
                    TemplateSource::Generated { seed, spec } => low_frequency_template(shape, spec, *seed, 0)?,
                    TemplateSource::File { file } => {
                        let g = grid::read_latent(base_dir.join(file))?;
                        if g.shape() != shape {
                            return Err(Error::Config(format!(
                                "template {file} has shape {:?}, expected {shape:?}",
                                g.shape()
                            )));
                        }
                        g
                    }
                };
                Ok(Component {
                    template,
                    scale: c.scale,
                    prior: c.prior,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        MixtureModel::new(components, NoiseSchedule::from_spec(&self.schedule)?)
    }
}
