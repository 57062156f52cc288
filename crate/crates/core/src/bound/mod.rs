//! Non-asymptotic PAC-Bayes bound for momentum-adaptive dropout.
//!
//! The bound on the true risk is
//!
//! ```text
//! R(h) ≤ R̂(h) + sqrt( [ ‖w‖²/(2σ²) + ln(1/(α(1 − E[p])))
//!                      + ln(m/δ) + c·B²·X²·exp(Σ_l κ_l·sqrt(E[p_l])) ] / (2m) )
//! ```
//!
//! with `E_Q[‖w‖²]` the posterior mean squared weight norm, `E[p]` the mean
//! applied dropout rate, `κ_l` per-layer spectral norms and `E[p_l]` per-layer
//! mean rates, `B` the loss bound, `X` the input norm bound, `σ` the prior
//! width, `α = 0.5` and `c = 2·ln 2`. All logarithms are natural.
//!
//! The prior `P` and posterior `Q` only enter through these summary
//! statistics; nothing here samples from either.

pub mod measure;
pub mod spectral;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub use measure::{measure_from_run, Measurement, RateTrace};
pub use spectral::measure_spectral_norm;

pub const DEFAULT_ALPHA: f64 = 0.5;

/// Covering constant `c = 2·ln 2`.
pub fn default_covering_constant() -> f64 {
    2.0 * std::f64::consts::LN_2
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerTerm {
    /// Spectral norm `κ_l`.
    pub kappa: f64,
    /// Time-averaged applied dropout rate `E[p_l]` at this layer's output.
    pub expected_rate: f64,
}

/// Every scalar the bound consumes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundInputs {
    pub weight_norm_sq: f64,
    pub expected_rate: f64,
    #[serde(default)]
    pub per_layer: Vec<LayerTerm>,
    /// Precomputed `Σ κ_l·sqrt(E[p_l])`, for inputs where only the sum is
    /// known. Mutually exclusive with a non-empty `per_layer`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation_sum: Option<f64>,
    pub m: u64,
    pub delta: f64,
    #[serde(rename = "B")]
    pub loss_bound: f64,
    #[serde(rename = "X_sq")]
    pub x_sq: f64,
    /// Prior width. Never defaulted: it must be given or back-solved.
    #[serde(default)]
    pub sigma: Option<f64>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_covering_constant")]
    pub c: f64,
    #[serde(default)]
    pub empirical_risk: f64,
}

impl BoundInputs {
    pub fn validate(&self) -> Result<()> {
        let d = |term, msg: String| Err(Error::domain(term, msg));
        if !(self.weight_norm_sq >= 0.0 && self.weight_norm_sq.is_finite()) {
            return d(
                "kl_term",
                format!("weight_norm_sq = {}", self.weight_norm_sq),
            );
        }
        if !(0.0..1.0).contains(&self.expected_rate) {
            return d(
                "entropy_term",
                format!("expected_rate {} not in [0,1)", self.expected_rate),
            );
        }
        if !(self.alpha > 0.0 && self.alpha * (1.0 - self.expected_rate) <= 1.0) {
            return d(
                "entropy_term",
                format!(
                    "alpha·(1 − E[p]) = {} not in (0,1]",
                    self.alpha * (1.0 - self.expected_rate)
                ),
            );
        }
        for (i, l) in self.per_layer.iter().enumerate() {
            if !(l.kappa >= 0.0 && l.kappa.is_finite()) {
                return d("covering_term", format!("layer {i} kappa = {}", l.kappa));
            }
            if !(0.0..1.0).contains(&l.expected_rate) {
                return d(
                    "covering_term",
                    format!("layer {i} rate {} not in [0,1)", l.expected_rate),
                );
            }
        }
        if self.perturbation_sum.is_some() && !self.per_layer.is_empty() {
            return d(
                "covering_term",
                "give either per_layer or perturbation_sum, not both".into(),
            );
        }
        if let Some(s) = self.perturbation_sum {
            if !(s >= 0.0) {
                return d("covering_term", format!("perturbation_sum = {s}"));
            }
        }
        if self.m == 0 {
            return d("confidence_term", "m must be >= 1".into());
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return d(
                "confidence_term",
                format!("delta {} not in (0,1)", self.delta),
            );
        }
        if !(self.loss_bound > 0.0) || !(self.x_sq >= 0.0) || !(self.c > 0.0) {
            return d(
                "covering_term",
                format!(
                    "B = {}, X_sq = {}, c = {}",
                    self.loss_bound, self.x_sq, self.c
                ),
            );
        }
        if let Some(s) = self.sigma {
            if !(s > 0.0 && s.is_finite()) {
                return d("kl_term", format!("sigma = {s}"));
            }
        }
        if !(0.0..=self.loss_bound).contains(&self.empirical_risk) {
            return d(
                "empirical_risk",
                format!(
                    "{} not in [0, B = {}]",
                    self.empirical_risk, self.loss_bound
                ),
            );
        }
        Ok(())
    }

    /// `Σ κ_l·sqrt(E[p_l])`.
    pub fn perturbation_sum(&self) -> f64 {
        self.perturbation_sum
            .unwrap_or_else(|| perturbation_sum(&self.per_layer))
    }

    fn sigma(&self) -> Result<f64> {
        self.sigma.ok_or_else(|| {
            Error::Config(
                "prior width sigma is not set; reported bound values often omit it, \
                 so pass it explicitly or back-solve it from a target bound"
                    .into(),
            )
        })
    }
}

pub fn perturbation_sum(layers: &[LayerTerm]) -> f64 {
    layers
        .iter()
        .map(|l| l.kappa * l.expected_rate.sqrt())
        .sum()
}

/// `‖w‖² / (2σ²)`.
pub fn kl_weight_term(weight_norm_sq: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::domain("kl_term", format!("sigma = {sigma}")));
    }
    Ok(weight_norm_sq / (2.0 * sigma * sigma))
}

/// `ln(1 / (α(1 − E[p])))`.
pub fn entropy_term(alpha: f64, expected_rate: f64) -> Result<f64> {
    if !(expected_rate < 1.0) {
        return Err(Error::domain(
            "entropy_term",
            format!("expected_rate {expected_rate} must be < 1"),
        ));
    }
    let inner = alpha * (1.0 - expected_rate);
    if !(inner > 0.0) {
        return Err(Error::domain(
            "entropy_term",
            format!("alpha·(1 − E[p]) = {inner}"),
        ));
    }
    Ok(-inner.ln())
}

/// KL bound: weight term plus entropy term.
pub fn kl_bound(weight_norm_sq: f64, sigma: f64, alpha: f64, expected_rate: f64) -> Result<f64> {
    Ok(kl_weight_term(weight_norm_sq, sigma)? + entropy_term(alpha, expected_rate)?)
}

/// `ln(m/δ)`.
pub fn confidence_term(m: u64, delta: f64) -> f64 {
    (m as f64 / delta).ln()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Covering {
    pub value: f64,
    pub perturbation_sum: f64,
    /// `exp` overflowed and `value` is `+∞`.
    pub overflowed: bool,
}

/// `c·B²·X²·exp(s)` for a given perturbation sum `s`.
pub fn covering_from_sum(loss_bound: f64, x_sq: f64, c: f64, sum: f64) -> Covering {
    let value = c * loss_bound * loss_bound * x_sq * sum.exp();
    Covering {
        value,
        perturbation_sum: sum,
        overflowed: !value.is_finite(),
    }
}

pub fn covering_term(loss_bound: f64, x_sq: f64, c: f64, per_layer: &[LayerTerm]) -> Covering {
    covering_from_sum(loss_bound, x_sq, c, perturbation_sum(per_layer))
}

fn ser_float<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_none()
    }
}

fn de_float<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
}

/// Term-by-term bound evaluation. Non-finite values serialise as `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub sigma: f64,
    #[serde(serialize_with = "ser_float", deserialize_with = "de_float")]
    pub kl_term: f64,
    pub entropy_term: f64,
    pub confidence_term: f64,
    #[serde(serialize_with = "ser_float", deserialize_with = "de_float")]
    pub covering_term: f64,
    pub perturbation_sum: f64,
    #[serde(serialize_with = "ser_float", deserialize_with = "de_float")]
    pub numerator: f64,
    #[serde(serialize_with = "ser_float", deserialize_with = "de_float")]
    pub bound_gap: f64,
    #[serde(serialize_with = "ser_float", deserialize_with = "de_float")]
    pub total_bound: f64,
    #[serde(default)]
    pub diagnostics: Vec<String>,
    pub inputs: BoundInputs,
}

/// Full bound `R̂ + sqrt(numerator / 2m)` with every term exposed.
pub fn magdrop_bound(inputs: &BoundInputs) -> Result<BoundReport> {
    inputs.validate()?;
    let sigma = inputs.sigma()?;
    let kl = kl_weight_term(inputs.weight_norm_sq, sigma)?;
    let entropy = entropy_term(inputs.alpha, inputs.expected_rate)?;
    let confidence = confidence_term(inputs.m, inputs.delta);
    let cover = covering_from_sum(
        inputs.loss_bound,
        inputs.x_sq,
        inputs.c,
        inputs.perturbation_sum(),
    );
    let mut diagnostics = Vec::new();
    if cover.overflowed {
        diagnostics.push(format!(
            "covering term overflowed: exp({}) is not representable; the bound is vacuous",
            cover.perturbation_sum
        ));
    }
    let numerator = kl + entropy + confidence + cover.value;
    let bound_gap = (numerator / (2.0 * inputs.m as f64)).sqrt();
    Ok(BoundReport {
        sigma,
        kl_term: kl,
        entropy_term: entropy,
        confidence_term: confidence,
        covering_term: cover.value,
        perturbation_sum: cover.perturbation_sum,
        numerator,
        bound_gap,
        total_bound: inputs.empirical_risk + bound_gap,
        diagnostics,
        inputs: inputs.clone(),
    })
}

/// Prior width that makes the bound gap equal `target_bound_gap`, holding
/// every other input fixed.
pub fn back_solve_sigma(target_bound_gap: f64, inputs: &BoundInputs) -> Result<f64> {
    let probe = BoundInputs {
        sigma: None,
        ..inputs.clone()
    };
    probe.validate()?;
    if !(target_bound_gap > 0.0) {
        return Err(Error::domain(
            "back_solve_sigma",
            format!("target {target_bound_gap}"),
        ));
    }
    if !(inputs.weight_norm_sq > 0.0) {
        return Err(Error::domain(
            "back_solve_sigma",
            "weight_norm_sq is 0, so sigma does not affect the bound".to_string(),
        ));
    }
    let entropy = entropy_term(inputs.alpha, inputs.expected_rate)?;
    let confidence = confidence_term(inputs.m, inputs.delta);
    let cover = covering_from_sum(
        inputs.loss_bound,
        inputs.x_sq,
        inputs.c,
        inputs.perturbation_sum(),
    );
    let residual = target_bound_gap * target_bound_gap * 2.0 * inputs.m as f64
        - entropy
        - confidence
        - cover.value;
    if !(residual > 0.0) {
        return Err(Error::domain(
            "back_solve_sigma",
            format!(
                "target {target_bound_gap} is infeasible: the other terms already exceed it (residual {residual})"
            ),
        ));
    }
    Ok((inputs.weight_norm_sq / (2.0 * residual)).sqrt())
}

/// Catoni form at a fixed temperature:
/// `R̂ + (KL + ln(1/δ))/λ + B·λ/(2m)`.
pub fn catoni_bound(
    empirical_risk: f64,
    kl: f64,
    m: u64,
    delta: f64,
    loss_bound: f64,
    lambda: f64,
) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::domain(
            "catoni_bound",
            format!("lambda = {lambda} must be > 0"),
        ));
    }
    if !(delta > 0.0 && delta <= 1.0) || m == 0 {
        return Err(Error::domain(
            "catoni_bound",
            format!("m = {m}, delta = {delta}"),
        ));
    }
    Ok(
        empirical_risk
            + (kl + (1.0 / delta).ln()) / lambda
            + loss_bound * lambda / (2.0 * m as f64),
    )
}

/// Temperature-optimised Catoni form, as printed:
/// `R̂ + sqrt(B²·(KL + ln(1/δ) + ln(2√m)) / (2m))`.
pub fn catoni_bound_optimized(
    empirical_risk: f64,
    kl: f64,
    m: u64,
    delta: f64,
    loss_bound: f64,
) -> Result<f64> {
    if !(delta > 0.0 && delta <= 1.0) || m == 0 {
        return Err(Error::domain(
            "catoni_bound",
            format!("m = {m}, delta = {delta}"),
        ));
    }
    let mf = m as f64;
    let inner = kl + (1.0 / delta).ln() + (2.0 * mf.sqrt()).ln();
    Ok(empirical_risk + (loss_bound * loss_bound * inner / (2.0 * mf)).sqrt())
}

/// The `ln(2√m)` term of the optimised Catoni form.
pub fn catoni_grid_slack(m: u64) -> f64 {
    (2.0 * (m as f64).sqrt()).ln()
}

/// Relative improvement of `b` over `a`, in percent: `(gap_a − gap_b)/gap_a·100`.
pub fn compare_report(a: &BoundReport, b: &BoundReport) -> Result<f64> {
    improvement_percent(a.bound_gap, b.bound_gap)
}

pub fn improvement_percent(gap_a: f64, gap_b: f64) -> Result<f64> {
    if gap_a == 0.0 {
        return Err(Error::domain(
            "compare_report",
            "baseline bound gap is 0".to_string(),
        ));
    }
    Ok((gap_a - gap_b) / gap_a * 100.0)
}

/// Plain-text table: method, E[‖w‖²], E[p_t], Σκ√p, bound.
pub fn render_table(rows: &[(String, BoundReport)]) -> String {
    let header = ["Method", "E[|w|^2]", "E[p_t]", "sum k*sqrt(p)", "Bound"];
    let body: Vec<[String; 5]> = rows
        .iter()
        .map(|(name, r)| {
            [
                name.clone(),
                format!("{:.1}", r.inputs.weight_norm_sq),
                format!("{:.3}", r.inputs.expected_rate),
                format!("{:.2}", r.perturbation_sum),
                if r.bound_gap.is_finite() {
                    format!("{:.3}", r.total_bound)
                } else {
                    "inf".to_string()
                },
            ]
        })
        .collect();
    let mut widths = header.map(str::len);
    for row in &body {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: &[String]| {
        let mut s = format!("{:<w$}", cells[0], w = widths[0]);
        for (cell, w) in cells.iter().zip(widths).skip(1) {
            s.push_str(&format!("  {cell:>w$}"));
        }
        s.push('\n');
        s
    };
    let mut out = line(&header.map(String::from));
    out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
    out.push('\n');
    for row in &body {
        out.push_str(&line(row));
    }
    out
}
