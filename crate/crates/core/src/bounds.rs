//! Closed-form error bounds for the three samplers, the propagation
//! products they are built from, and log-log rate fitting.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::score::lipschitz_step;
use crate::target::TimeGrid;

/// One-step discretization bounds for the Euler, trapezoidal and
/// Euler–Maruyama approximations of the score integral.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscretizationBounds {
    pub ode: f64,
    pub heun: f64,
    pub sde: f64,
    /// `epsilon <= R^2`.
    pub precondition_ok: bool,
}

pub fn discretization_bounds(d: usize, radius: f64, epsilon: f64, h: f64) -> DiscretizationBounds {
    let d = d as f64;
    DiscretizationBounds {
        ode: d.sqrt() * radius.powi(3) / epsilon.powi(3) * h * h,
        heun: 22.0 * d * radius.powi(5) / epsilon.powi(5) * h.powi(3),
        sde: d.sqrt() * (2.0 / 3.0) * radius * radius / (epsilon * epsilon) * h.powf(1.5),
        precondition_ok: epsilon <= radius * radius,
    }
}

/// `sqrt(d epsilon)`: the W2 distance between `X` and `X_epsilon` is at most this.
pub fn early_stopping_bound(d: usize, epsilon: f64) -> f64 {
    (d as f64 * epsilon.max(0.0)).sqrt()
}

/// How the per-step Lipschitz factors combine across the grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "flavor")]
pub enum Flavor {
    /// Factors `L_{T - t_m, h/2}` (Euler ODE).
    OdeHalfStep,
    /// Factors `L_{T - t_m, h}` (Euler–Maruyama).
    SdeFullStep,
    /// Factors `(L_{T-t_m,h/2} + L_{T-t_{m+1},h/2})/2 + h^2 L^2 / 8` (Heun).
    Heun { lipschitz: f64 },
}

/// Exact products `P_n = prod_{m=n}^{N-1} factor_m` and their closed-form bounds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Propagation {
    pub flavor: Flavor,
    /// `P_n` for `n = 0..=N`, with `P_N = 1`.
    pub products: Vec<f64>,
    /// Closed-form bound on `P_n` for each `n`.
    pub closed: Vec<f64>,
    /// `h sum_{k=1}^N P_k`.
    pub sum: f64,
    pub closed_sum: f64,
    /// `h sum_{k=1}^N P_k^2` (SDE flavor only).
    pub sum_sq: Option<f64>,
    pub closed_sum_sq: Option<f64>,
    pub precondition_ok: bool,
}

pub fn propagation_product(grid: &TimeGrid, radius: f64, flavor: Flavor) -> Propagation {
    let (t_end, eps, n) = (grid.horizon, grid.epsilon, grid.steps);
    let h = grid.step();
    let r2 = radius * radius;
    let factor = |m: usize| -> f64 {
        let u = grid.forward_time(m);
        match flavor {
            Flavor::OdeHalfStep => lipschitz_step(radius, u, h / 2.0),
            Flavor::SdeFullStep => lipschitz_step(radius, u, h),
            Flavor::Heun { lipschitz } => {
                let u1 = grid.forward_time(m + 1);
                0.5 * (lipschitz_step(radius, u, h / 2.0) + lipschitz_step(radius, u1, h / 2.0))
                    + h * h * lipschitz * lipschitz / 8.0
            }
        }
    };
    let mut products = vec![1.0; n + 1];
    for m in (0..n).rev() {
        products[m] = products[m + 1] * factor(m);
    }
    let (closed, closed_sum, precondition_ok) = match flavor {
        Flavor::OdeHalfStep => {
            let g = (r2 / (2.0 * eps)).exp();
            let c = (0..=n).map(|k| (2.0 * eps / grid.forward_time(k)).sqrt() * g).collect();
            (c, (8.0 * eps).sqrt() * g * t_end.sqrt(), h <= eps)
        }
        Flavor::SdeFullStep => {
            let g = (r2 / eps).exp();
            let c = (0..=n).map(|k| 2.0 * eps / grid.forward_time(k) * g).collect();
            (c, 2.0 * eps * g * (2.0 * t_end / eps).ln(), h <= eps / 2.0)
        }
        Flavor::Heun { lipschitz } => {
            let g = (r2 / eps + h * t_end * lipschitz * lipschitz / 8.0).exp();
            let c = (0..=n).map(|k| (2.0 * eps / grid.forward_time(k)).sqrt() * g).collect();
            (c, (8.0 * eps).sqrt() * g * t_end.sqrt(), h <= eps / 2.0)
        }
    };
    let sum = h * crate::stats::compensated_sum(products[1..].iter().copied());
    let (sum_sq, closed_sum_sq) = match flavor {
        Flavor::SdeFullStep => (
            Some(h * crate::stats::compensated_sum(products[1..].iter().map(|p| p * p))),
            Some(8.0 * eps * (2.0 * r2 / eps).exp()),
        ),
        _ => (None, None),
    };
    Propagation { flavor, products, closed, sum, closed_sum, sum_sq, closed_sum_sq, precondition_ok }
}

/// Score error along the grid, indexed by forward time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum EpsScore {
    Zero,
    /// A uniform bound; the score term uses the closed-form sum bound.
    Uniform(f64),
    /// `eps_score(epsilon + h k)` for `k = 0..=N`, summed exactly.
    Series(Vec<f64>),
}

impl EpsScore {
    /// Samples `f` at the forward times `epsilon + h k`, `k = 0..=N`.
    pub fn from_fn(grid: &TimeGrid, f: impl Fn(f64) -> f64) -> Self {
        let h = grid.step();
        EpsScore::Series((0..=grid.steps).map(|k| f(grid.epsilon + h * k as f64)).collect())
    }

    fn at(&self, k: usize) -> f64 {
        match self {
            EpsScore::Zero => 0.0,
            EpsScore::Uniform(v) => *v,
            EpsScore::Series(v) => v[k],
        }
    }
}

/// Which initialization term enters the total.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitVariant {
    /// Large-T asymptotic term (needs a centred target and T past the threshold).
    #[default]
    Asymptotic,
    /// Term from `W2(X, delta_0) = ||X||_{L2}`, valid for every T.
    Crude,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub d: usize,
    #[serde(rename = "R")]
    pub radius: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
    /// Early-stopping time, or the smoothing variance for the no-early-stop variants.
    pub epsilon: f64,
    #[serde(rename = "N")]
    pub steps: usize,
    /// Lipschitz constant of the learned score (Heun only); defaults to `R^2/epsilon^2`.
    #[serde(rename = "L", default, skip_serializing_if = "Option::is_none")]
    pub lipschitz: Option<f64>,
    pub eps_score: EpsScore,
    #[serde(default)]
    pub init: InitVariant,
}

impl BoundInputs {
    pub fn new(d: usize, radius: f64, horizon: f64, epsilon: f64, steps: usize) -> Self {
        Self { d, radius, horizon, epsilon, steps, lipschitz: None, eps_score: EpsScore::Zero, init: InitVariant::Asymptotic }
    }

    pub fn with_eps_score(mut self, eps_score: EpsScore) -> Self {
        self.eps_score = eps_score;
        self
    }

    pub fn with_lipschitz(mut self, l: f64) -> Self {
        self.lipschitz = Some(l);
        self
    }

    pub fn with_init(mut self, init: InitVariant) -> Self {
        self.init = init;
        self
    }

    pub fn h(&self) -> f64 {
        (self.horizon - self.epsilon) / self.steps as f64
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.horizon, self.epsilon, self.steps)
    }

    fn lipschitz_or_default(&self) -> f64 {
        self.lipschitz.unwrap_or(self.radius * self.radius / (self.epsilon * self.epsilon))
    }

    fn validate(&self) -> Result<()> {
        if self.d == 0 || self.steps == 0 {
            return Err(invalid("need d >= 1 and N >= 1"));
        }
        if !(self.epsilon > 0.0 && self.epsilon < self.horizon) {
            return Err(invalid(format!("need 0 < epsilon < T, got epsilon = {}", self.epsilon)));
        }
        if !(self.radius >= 0.0) {
            return Err(invalid("radius must be >= 0"));
        }
        if let EpsScore::Series(v) = &self.eps_score {
            if v.len() != self.steps + 1 {
                return Err(invalid(format!("eps_score series needs N + 1 = {} values, got {}", self.steps + 1, v.len())));
            }
        }
        if let EpsScore::Uniform(v) = self.eps_score {
            if !(v >= 0.0) {
                return Err(invalid("uniform eps_score must be >= 0"));
            }
        }
        Ok(())
    }

    /// `sum_{k=0}^{N-1} eps(eps + h (k + shift)) / (eps + h k)^power`, times `h`.
    fn score_sum(&self, shift: usize, power: f64) -> f64 {
        let h = self.h();
        let e = self.epsilon;
        h * crate::stats::compensated_sum((0..self.steps).map(|k| self.eps_score.at(k + shift) / (e + h * k as f64).powf(power)))
    }
}

/// Per-term values of a full W2 bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundTerms {
    pub early_stopping: f64,
    pub init_propagated: f64,
    pub discretization_propagated: f64,
    pub score_propagated: f64,
}

impl BoundTerms {
    pub fn sum(&self) -> f64 {
        self.early_stopping + self.init_propagated + self.discretization_propagated + self.score_propagated
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub equation: String,
    pub terms: BoundTerms,
    pub total: f64,
    /// Both initialization terms; `terms.init_propagated` is the one selected by `init_variant`.
    pub init_asymptotic: f64,
    pub init_crude: f64,
    pub init_variant: InitVariant,
    pub h: f64,
    pub precondition_ok: bool,
}

fn report(
    equation: &str,
    inputs: &BoundInputs,
    early: f64,
    init_asymptotic: f64,
    init_crude: f64,
    disc: f64,
    score: f64,
    precondition_ok: bool,
) -> BoundReport {
    let init = match inputs.init {
        InitVariant::Asymptotic => init_asymptotic,
        InitVariant::Crude => init_crude,
    };
    let terms = BoundTerms { early_stopping: early, init_propagated: init, discretization_propagated: disc, score_propagated: score };
    BoundReport {
        equation: equation.to_string(),
        total: terms.sum(),
        terms,
        init_asymptotic,
        init_crude,
        init_variant: inputs.init,
        h: inputs.h(),
        precondition_ok,
    }
}

/// Euler discretization of the probability-flow ODE; requires `h <= epsilon <= R^2`.
pub fn bound_euler_ode(inputs: &BoundInputs) -> Result<BoundReport> {
    inputs.validate()?;
    let BoundInputs { d, radius: r, horizon: t, epsilon: e, .. } = *inputs;
    let d = d as f64;
    let h = inputs.h();
    let g = (r * r / (2.0 * e)).exp();
    let init_asym = (2.0 * e).sqrt() / t * g * r * r;
    let init_crude = (2.0 * e / t).sqrt() * g * r;
    let disc = d.sqrt() * 2f64.sqrt() * r.powi(3) / e.powf(2.5) * g * t.sqrt() * h;
    let score = match inputs.eps_score {
        EpsScore::Zero => 0.0,
        EpsScore::Uniform(v) => (2.0 * e).sqrt() * g * v * t.sqrt(),
        EpsScore::Series(_) => (e / 2.0).sqrt() * g * inputs.score_sum(1, 0.5),
    };
    let ok = h <= e && e <= r * r;
    Ok(report("prop5", inputs, (d * e).sqrt(), init_asym, init_crude, disc, score, ok))
}

/// Heun discretization of the probability-flow ODE; requires `epsilon <= R^2`, `h <= epsilon/2`.
pub fn bound_heun(inputs: &BoundInputs) -> Result<BoundReport> {
    inputs.validate()?;
    let BoundInputs { d, radius: r, horizon: t, epsilon: e, .. } = *inputs;
    let d = d as f64;
    let h = inputs.h();
    let l = inputs.lipschitz_or_default();
    let g = (r * r / e + h * t * l * l / 8.0).exp();
    let init_asym = (2.0 * e).sqrt() / t * g * r * r;
    let init_crude = (2.0 * e / t).sqrt() * g * r;
    let s2 = 2f64.sqrt();
    let disc = (22.0 * d * s2 * r.powi(5) / e.powf(4.5) + d.sqrt() * l * r.powi(3) / (2.0 * s2 * e.powf(2.5))) * g * t.sqrt() * h * h;
    let score = match inputs.eps_score {
        EpsScore::Zero => 0.0,
        EpsScore::Uniform(v) => (e / 2.0).sqrt() * g * (2.0 + h * l / 2.0) * v * t.sqrt(),
        EpsScore::Series(_) => {
            e.sqrt() / (2.0 * s2) * g * (inputs.score_sum(0, 0.5) + (1.0 + h * l / 2.0) * inputs.score_sum(1, 0.5))
        }
    };
    let ok = e <= r * r && h <= e / 2.0;
    Ok(report("prop6", inputs, (d * e).sqrt(), init_asym, init_crude, disc, score, ok))
}

/// Euler–Maruyama with a learned score; requires `epsilon <= R^2`, `h <= epsilon/2`.
pub fn bound_em(inputs: &BoundInputs) -> Result<BoundReport> {
    inputs.validate()?;
    let BoundInputs { d, radius: r, horizon: t, epsilon: e, .. } = *inputs;
    let d = d as f64;
    let h = inputs.h();
    let g = (r * r / e).exp();
    let log_term = (2.0 * t / e).ln();
    let init_asym = 2.0 * e / t.powf(1.5) * g * r * r;
    let init_crude = 2.0 * e / t * g * r;
    let disc = d.sqrt() * (4.0 / 3.0) * r * r / e * g * log_term * h.sqrt();
    let score = match inputs.eps_score {
        EpsScore::Zero => 0.0,
        EpsScore::Uniform(v) => 2.0 * e * g * log_term * v,
        EpsScore::Series(_) => 2.0 * e * g * inputs.score_sum(1, 1.0),
    };
    let ok = e <= r * r && h <= e / 2.0;
    Ok(report("prop7", inputs, (d * e).sqrt(), init_asym, init_crude, disc, score, ok))
}

/// Euler–Maruyama with the exact score (order one in `h`); the score term is absent.
pub fn bound_em_true_score(inputs: &BoundInputs) -> Result<BoundReport> {
    inputs.validate()?;
    let BoundInputs { d, radius: r, horizon: t, epsilon: e, .. } = *inputs;
    let d = d as f64;
    let h = inputs.h();
    let g = (r * r / e).exp();
    let init_asym = 2.0 * e / t.powf(1.5) * g * r * r;
    let init_crude = 2.0 * e / t * g * r;
    let disc = d.sqrt() * (4.0 * 2f64.sqrt() / 3.0) * r * r / e.powf(1.5) * g * h;
    let ok = e <= r * r && h <= e / 2.0;
    Ok(report("prop8", inputs, (d * e).sqrt(), init_asym, init_crude, disc, 0.0, ok))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    EulerOde,
    Heun,
    EulerMaruyama,
    EulerMaruyamaTrueScore,
}

pub fn bound(kind: BoundKind, inputs: &BoundInputs) -> Result<BoundReport> {
    match kind {
        BoundKind::EulerOde => bound_euler_ode(inputs),
        BoundKind::Heun => bound_heun(inputs),
        BoundKind::EulerMaruyama => bound_em(inputs),
        BoundKind::EulerMaruyamaTrueScore => bound_em_true_score(inputs),
    }
}

/// Bounds for a smoothed target `X = Z + N(0, tau I)` sampled without early stopping.
///
/// Here `inputs.epsilon` holds `tau` and `inputs.horizon` the horizon `T` of
/// the run on `X`. Running on `X` with horizon `T` is running on `Z` with
/// horizon `T + tau` and early stop `tau`, so the early-stopping bound is
/// evaluated on the shifted problem and its early-stopping term dropped.
/// `eps_score` series are indexed by `X`-time `h k`.
pub fn bound_no_early_stopping(kind: BoundKind, inputs: &BoundInputs) -> Result<BoundReport> {
    let tau = inputs.epsilon;
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(invalid(format!("smoothing tau must be > 0, got {tau}")));
    }
    let shifted = BoundInputs { horizon: inputs.horizon + tau, ..inputs.clone() };
    let mut rep = bound(kind, &shifted)?;
    rep.total -= rep.terms.early_stopping;
    rep.terms.early_stopping = 0.0;
    rep.total = rep.terms.sum();
    rep.equation.push_str("+no-early-stop");
    Ok(rep)
}

/// Least-squares fit of `log error = slope log h + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

pub fn fit_rate(hs: &[f64], errors: &[f64]) -> Result<RateFit> {
    if hs.len() != errors.len() {
        return Err(invalid("step and error lists differ in length"));
    }
    if hs.len() < 3 {
        return Err(invalid(format!("need at least 3 points, got {}", hs.len())));
    }
    if hs.iter().chain(errors).any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(invalid("steps and errors must be positive and finite"));
    }
    let xs: Vec<f64> = hs.iter().map(|h| h.ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(invalid("step sizes must not all be equal"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    Ok(RateFit { slope, intercept, r2 })
}
