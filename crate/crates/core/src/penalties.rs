//! Physics-based penalty terms added to the multi-step cost.
//!
//! Each term contributes `λ·h(x̂_k, θ)`. State-dependent terms are charged at
//! every step `k ∈ [0, T-1]`; parameter-only terms are `k`-independent and are
//! charged once per cost evaluation.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::model::{ModelDims, Vector};

/// Default cap on barrier exponents; `e^700` is close to the largest finite f64.
pub const DEFAULT_EXPONENT_CAP: f64 = 700.0;

/// Upper clamp applied to saturated penalty values and gradients.
const SATURATED: f64 = 1e300;

/// Energy function used by the conservation penalty.
pub trait EnergyFunction: Send + Sync {
    fn energy(&self, x: &Vector, theta: &Vector) -> Result<f64>;
    fn grad_x(&self, x: &Vector, theta: &Vector) -> Result<Vector>;
    fn grad_theta(&self, x: &Vector, theta: &Vector) -> Result<Vector>;
}

#[derive(Clone)]
pub enum PenaltyKind {
    /// `h = (E(x̂) − E₀)²`
    EnergyConservation {
        energy: Arc<dyn EnergyFunction>,
        reference: f64,
    },
    /// `h = ‖e^{α(x̂ − x̄)}‖²`; `+∞` bounds are inactive.
    UpperBarrier { bounds: Vector, alpha: f64 },
    /// `h = ‖e^{α(x̲ − x̂)}‖²`; `−∞` bounds are inactive.
    LowerBarrier { bounds: Vector, alpha: f64 },
    /// `h = ‖e^{α(θ − θ̄)}‖² + ‖e^{α(θ̲ − θ)}‖²`
    ParameterBox {
        lower: Vector,
        upper: Vector,
        alpha: f64,
    },
    /// `h = Σ max(0, x̂ − x̄)`. Not differentiable on the bound; the gradient
    /// there is taken as zero. Prefer [`PenaltyKind::UpperBarrier`].
    UpperRelu { bounds: Vector },
}

impl fmt::Debug for PenaltyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::EnergyConservation { reference, .. } => f
                .debug_struct("EnergyConservation")
                .field("reference", reference)
                .finish_non_exhaustive(),
            Self::UpperBarrier { bounds, alpha } => f
                .debug_struct("UpperBarrier")
                .field("bounds", &bounds.as_slice())
                .field("alpha", alpha)
                .finish(),
            Self::LowerBarrier { bounds, alpha } => f
                .debug_struct("LowerBarrier")
                .field("bounds", &bounds.as_slice())
                .field("alpha", alpha)
                .finish(),
            Self::ParameterBox {
                lower,
                upper,
                alpha,
            } => f
                .debug_struct("ParameterBox")
                .field("lower", &lower.as_slice())
                .field("upper", &upper.as_slice())
                .field("alpha", alpha)
                .finish(),
            Self::UpperRelu { bounds } => f
                .debug_struct("UpperRelu")
                .field("bounds", &bounds.as_slice())
                .finish(),
        }
    }
}

/// A weighted penalty term.
#[derive(Debug, Clone)]
pub struct PenaltyTerm {
    kind: PenaltyKind,
    lambda: f64,
    exponent_cap: f64,
}

impl PenaltyTerm {
    pub fn new(kind: PenaltyKind, lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!("penalty weight must be >= 0, got {lambda}")));
        }
        let check_alpha = |alpha: f64| {
            if alpha > 0.0 && alpha.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("sharpness must be > 0, got {alpha}")))
            }
        };
        match &kind {
            PenaltyKind::EnergyConservation { reference, .. } => {
                if !reference.is_finite() {
                    return Err(Error::InvalidArgument("energy reference must be finite".into()));
                }
            }
            PenaltyKind::UpperBarrier { bounds, alpha } => {
                check_alpha(*alpha)?;
                if bounds.iter().any(|b| b.is_nan() || *b == f64::NEG_INFINITY) {
                    return Err(Error::InvalidArgument("upper bounds must be finite or +inf".into()));
                }
            }
            PenaltyKind::LowerBarrier { bounds, alpha } => {
                check_alpha(*alpha)?;
                if bounds.iter().any(|b| b.is_nan() || *b == f64::INFINITY) {
                    return Err(Error::InvalidArgument("lower bounds must be finite or -inf".into()));
                }
            }
            PenaltyKind::ParameterBox {
                lower,
                upper,
                alpha,
            } => {
                check_alpha(*alpha)?;
                check_box(lower, upper)?;
            }
            PenaltyKind::UpperRelu { bounds } => {
                if bounds.iter().any(|b| b.is_nan()) {
                    return Err(Error::InvalidArgument("ReLU bounds must not be NaN".into()));
                }
            }
        }
        Ok(Self {
            kind,
            lambda,
            exponent_cap: DEFAULT_EXPONENT_CAP,
        })
    }

    pub fn with_exponent_cap(mut self, cap: f64) -> Self {
        self.exponent_cap = cap;
        self
    }

    pub fn kind(&self) -> &PenaltyKind {
        &self.kind
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Whether `h` depends on the state (charged per step) or only on `θ`.
    pub fn is_state_dependent(&self) -> bool {
        !matches!(self.kind, PenaltyKind::ParameterBox { .. })
    }

    pub fn check_dims(&self, dims: &ModelDims) -> Result<()> {
        match &self.kind {
            PenaltyKind::EnergyConservation { .. } => Ok(()),
            PenaltyKind::UpperBarrier { bounds, .. }
            | PenaltyKind::LowerBarrier { bounds, .. }
            | PenaltyKind::UpperRelu { bounds } => check_len("state bounds", dims.n_x, bounds.len()),
            PenaltyKind::ParameterBox { lower, .. } => check_len("parameter bounds", dims.n_theta, lower.len()),
        }
    }

    /// Unweighted `h(x, θ)`, saturating oversized exponents.
    pub fn value(&self, x: &Vector, theta: &Vector) -> Result<f64> {
        let cap = self.exponent_cap;
        let v = match &self.kind {
            PenaltyKind::EnergyConservation { energy, reference } => {
                let d = energy.energy(x, theta)? - reference;
                d * d
            }
            PenaltyKind::UpperBarrier { bounds, alpha } => {
                check_len("state", bounds.len(), x.len())?;
                barrier_sum(x.iter().zip(bounds.iter()).map(|(&xi, &b)| xi - b), *alpha, cap)
            }
            PenaltyKind::LowerBarrier { bounds, alpha } => {
                check_len("state", bounds.len(), x.len())?;
                barrier_sum(x.iter().zip(bounds.iter()).map(|(&xi, &b)| b - xi), *alpha, cap)
            }
            PenaltyKind::ParameterBox {
                lower,
                upper,
                alpha,
            } => {
                check_len("parameters", lower.len(), theta.len())?;
                barrier_sum(theta.iter().zip(upper.iter()).map(|(&t, &b)| t - b), *alpha, cap)
                    + barrier_sum(theta.iter().zip(lower.iter()).map(|(&t, &b)| b - t), *alpha, cap)
            }
            PenaltyKind::UpperRelu { bounds } => {
                check_len("state", bounds.len(), x.len())?;
                x.iter().zip(bounds.iter()).map(|(&xi, &b)| (xi - b).max(0.0)).sum()
            }
        };
        if v.is_nan() {
            return Err(Error::NonFiniteValue { what: "penalty" });
        }
        Ok(v.min(SATURATED))
    }

    /// Like [`PenaltyTerm::value`] but fails with `Overflow` instead of saturating.
    pub fn value_checked(&self, x: &Vector, theta: &Vector) -> Result<f64> {
        let exponent = self.max_exponent(x, theta);
        if exponent > self.exponent_cap {
            return Err(Error::Overflow {
                exponent,
                cap: self.exponent_cap,
            });
        }
        self.value(x, theta)
    }

    /// Largest exponent `2α·d` appearing in a barrier, or `-inf` for other kinds.
    fn max_exponent(&self, x: &Vector, theta: &Vector) -> f64 {
        let max2 = |alpha: f64, it: &mut dyn Iterator<Item = f64>| {
            it.filter(|d| d.is_finite()).fold(f64::NEG_INFINITY, |m, d| m.max(2.0 * alpha * d))
        };
        match &self.kind {
            PenaltyKind::UpperBarrier { bounds, alpha } => {
                max2(*alpha, &mut x.iter().zip(bounds.iter()).map(|(&a, &b)| a - b))
            }
            PenaltyKind::LowerBarrier { bounds, alpha } => {
                max2(*alpha, &mut x.iter().zip(bounds.iter()).map(|(&a, &b)| b - a))
            }
            PenaltyKind::ParameterBox {
                lower,
                upper,
                alpha,
            } => max2(
                *alpha,
                &mut theta
                    .iter()
                    .zip(upper.iter())
                    .map(|(&t, &b)| t - b)
                    .chain(theta.iter().zip(lower.iter()).map(|(&t, &b)| b - t)),
            ),
            _ => f64::NEG_INFINITY,
        }
    }

    /// Unweighted `(∇_x h, ∇_θ h)`.
    pub fn gradients(&self, x: &Vector, theta: &Vector) -> Result<(Vector, Vector)> {
        let cap = self.exponent_cap;
        let mut gx = Vector::zeros(x.len());
        let mut gt = Vector::zeros(theta.len());
        match &self.kind {
            PenaltyKind::EnergyConservation { energy, reference } => {
                let d = energy.energy(x, theta)? - reference;
                gx = energy.grad_x(x, theta)? * (2.0 * d);
                gt = energy.grad_theta(x, theta)? * (2.0 * d);
            }
            PenaltyKind::UpperBarrier { bounds, alpha } => {
                check_len("state", bounds.len(), x.len())?;
                for i in 0..x.len() {
                    gx[i] = barrier_slope(x[i] - bounds[i], *alpha, cap);
                }
            }
            PenaltyKind::LowerBarrier { bounds, alpha } => {
                check_len("state", bounds.len(), x.len())?;
                for i in 0..x.len() {
                    gx[i] = -barrier_slope(bounds[i] - x[i], *alpha, cap);
                }
            }
            PenaltyKind::ParameterBox {
                lower,
                upper,
                alpha,
            } => {
                check_len("parameters", lower.len(), theta.len())?;
                for i in 0..theta.len() {
                    gt[i] = barrier_slope(theta[i] - upper[i], *alpha, cap)
                        - barrier_slope(lower[i] - theta[i], *alpha, cap);
                }
            }
            PenaltyKind::UpperRelu { bounds } => {
                check_len("state", bounds.len(), x.len())?;
                for i in 0..x.len() {
                    gx[i] = if x[i] > bounds[i] { 1.0 } else { 0.0 };
                }
            }
        }
        if gx.iter().chain(gt.iter()).any(|v| v.is_nan()) {
            return Err(Error::NonFiniteValue { what: "penalty gradient" });
        }
        Ok((gx, gt))
    }
}

/// `Σ e^{2α d_i}` over finite offsets; `d = −∞` (inactive bound) contributes 0.
fn barrier_sum(offsets: impl Iterator<Item = f64>, alpha: f64, cap: f64) -> f64 {
    offsets
        .filter(|d| *d != f64::NEG_INFINITY)
        .map(|d| (2.0 * alpha * d).min(cap).exp())
        .sum()
}

/// `∂/∂d e^{2α d} = 2α e^{2α d}`, saturated.
fn barrier_slope(d: f64, alpha: f64, cap: f64) -> f64 {
    if d == f64::NEG_INFINITY {
        return 0.0;
    }
    (2.0 * alpha * (2.0 * alpha * d).min(cap).exp()).min(SATURATED)
}

/// `h(x, θ)` for a single term, unweighted.
pub fn eval_penalty(term: &PenaltyTerm, x: &Vector, theta: &Vector) -> Result<f64> {
    term.value(x, theta)
}

/// `(∇_x h, ∇_θ h)` for a single term, unweighted.
pub fn penalty_gradients(term: &PenaltyTerm, x: &Vector, theta: &Vector) -> Result<(Vector, Vector)> {
    term.gradients(x, theta)
}

fn check_box(lower: &Vector, upper: &Vector) -> Result<()> {
    check_len("box upper bound", lower.len(), upper.len())?;
    for (i, (&lo, &hi)) in lower.iter().zip(upper.iter()).enumerate() {
        if lo.is_nan() || hi.is_nan() || lo > hi {
            return Err(Error::InvalidBox {
                index: i,
                lower: lo,
                upper: hi,
            });
        }
    }
    Ok(())
}

/// Componentwise clamp of `θ` onto `[lower, upper]`.
pub fn project_box(theta: &Vector, lower: &Vector, upper: &Vector) -> Result<Vector> {
    check_box(lower, upper)?;
    check_len("parameters", lower.len(), theta.len())?;
    Ok(Vector::from_fn(theta.len(), |i, _| theta[i].min(upper[i]).max(lower[i])))
}

/// A list of weighted penalty terms.
#[derive(Debug, Clone, Default)]
pub struct PenaltySpec {
    terms: Vec<PenaltyTerm>,
}

impl PenaltySpec {
    pub fn new(terms: Vec<PenaltyTerm>) -> Self {
        Self { terms }
    }

    pub fn terms(&self) -> &[PenaltyTerm] {
        &self.terms
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn check_dims(&self, dims: &ModelDims) -> Result<()> {
        self.terms.iter().try_for_each(|t| t.check_dims(dims))
    }

    /// `Σ λ h` over state-dependent terms at one step.
    pub fn state_value(&self, x: &Vector, theta: &Vector) -> Result<f64> {
        self.weighted(true, |t| t.value(x, theta))
    }

    /// `Σ λ h` over parameter-only terms.
    pub fn parameter_value(&self, x: &Vector, theta: &Vector) -> Result<f64> {
        self.weighted(false, |t| t.value(x, theta))
    }

    fn weighted(&self, state: bool, eval: impl Fn(&PenaltyTerm) -> Result<f64>) -> Result<f64> {
        let mut total = 0.0;
        for t in self.terms.iter().filter(|t| t.is_state_dependent() == state) {
            if t.lambda != 0.0 {
                total += t.lambda * eval(t)?;
            }
        }
        Ok(total)
    }

    /// `Σ λ (∇_x h, ∇_θ h)` over state-dependent or parameter-only terms.
    pub fn weighted_gradients(&self, state: bool, x: &Vector, theta: &Vector) -> Result<(Vector, Vector)> {
        let mut gx = Vector::zeros(x.len());
        let mut gt = Vector::zeros(theta.len());
        for t in self.terms.iter().filter(|t| t.is_state_dependent() == state) {
            if t.lambda != 0.0 {
                let (a, b) = t.gradients(x, theta)?;
                gx.axpy(t.lambda, &a, 1.0);
                gt.axpy(t.lambda, &b, 1.0);
            }
        }
        Ok((gx, gt))
    }

    pub fn has_state_terms(&self) -> bool {
        self.terms.iter().any(|t| t.is_state_dependent() && t.lambda != 0.0)
    }

    pub fn has_parameter_terms(&self) -> bool {
        self.terms.iter().any(|t| !t.is_state_dependent() && t.lambda != 0.0)
    }
}

/// Serialized penalty term, e.g.
/// `{"type":"upper_barrier","alpha":2.0,"bounds":[1.0,null],"lambda":0.1}`.
/// `null` bounds are inactive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum PenaltyConfig {
    EnergyConservation {
        reference: f64,
        lambda: f64,
    },
    UpperBarrier {
        alpha: f64,
        bounds: Vec<Option<f64>>,
        lambda: f64,
    },
    LowerBarrier {
        alpha: f64,
        bounds: Vec<Option<f64>>,
        lambda: f64,
    },
    ParameterBox {
        alpha: f64,
        lower: Vec<Option<f64>>,
        upper: Vec<Option<f64>>,
        lambda: f64,
    },
    UpperRelu {
        bounds: Vec<Option<f64>>,
        lambda: f64,
    },
}

fn bounds_vec(raw: &[Option<f64>], missing: f64) -> Vector {
    Vector::from_iterator(raw.len(), raw.iter().map(|b| b.unwrap_or(missing)))
}

impl PenaltyConfig {
    /// Builds the term. Energy conservation needs the model's energy function.
    pub fn build(&self, energy: Option<Arc<dyn EnergyFunction>>) -> Result<PenaltyTerm> {
        match self {
            Self::EnergyConservation { reference, lambda } => {
                let energy = energy.ok_or_else(|| {
                    Error::InvalidArgument("energy_conservation needs a model with an energy function".into())
                })?;
                PenaltyTerm::new(
                    PenaltyKind::EnergyConservation {
                        energy,
                        reference: *reference,
                    },
                    *lambda,
                )
            }
            Self::UpperBarrier {
                alpha,
                bounds,
                lambda,
            } => PenaltyTerm::new(
                PenaltyKind::UpperBarrier {
                    bounds: bounds_vec(bounds, f64::INFINITY),
                    alpha: *alpha,
                },
                *lambda,
            ),
            Self::LowerBarrier {
                alpha,
                bounds,
                lambda,
            } => PenaltyTerm::new(
                PenaltyKind::LowerBarrier {
                    bounds: bounds_vec(bounds, f64::NEG_INFINITY),
                    alpha: *alpha,
                },
                *lambda,
            ),
            Self::ParameterBox {
                alpha,
                lower,
                upper,
                lambda,
            } => PenaltyTerm::new(
                PenaltyKind::ParameterBox {
                    lower: bounds_vec(lower, f64::NEG_INFINITY),
                    upper: bounds_vec(upper, f64::INFINITY),
                    alpha: *alpha,
                },
                *lambda,
            ),
            Self::UpperRelu { bounds, lambda } => PenaltyTerm::new(
                PenaltyKind::UpperRelu {
                    bounds: bounds_vec(bounds, f64::INFINITY),
                },
                *lambda,
            ),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::numeric_jacobian;
    use proptest::prelude::*;

    /// `E = ½ Σ θ_i x_i²`
    struct Quadratic;

    impl EnergyFunction for Quadratic {
        fn energy(&self, x: &Vector, theta: &Vector) -> Result<f64> {
            Ok(0.5 * x.iter().zip(theta.iter()).map(|(a, t)| t * a * a).sum::<f64>())
        }
        fn grad_x(&self, x: &Vector, theta: &Vector) -> Result<Vector> {
            Ok(x.component_mul(theta))
        }
        fn grad_theta(&self, x: &Vector, _theta: &Vector) -> Result<Vector> {
            Ok(x.map(|a| 0.5 * a * a))
        }
    }

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    fn upper(bounds: &[f64], alpha: f64) -> PenaltyTerm {
        PenaltyTerm::new(
            PenaltyKind::UpperBarrier {
                bounds: v(bounds),
                alpha,
            },
            1.0,
        )
        .unwrap()
    }

    fn lower(bounds: &[f64], alpha: f64) -> PenaltyTerm {
        PenaltyTerm::new(
            PenaltyKind::LowerBarrier {
                bounds: v(bounds),
                alpha,
            },
            1.0,
        )
        .unwrap()
    }

    fn energy_term(reference: f64) -> PenaltyTerm {
        PenaltyTerm::new(
            PenaltyKind::EnergyConservation {
                energy: Arc::new(Quadratic),
                reference,
            },
            1.0,
        )
        .unwrap()
    }

    fn param_box(lo: &[f64], hi: &[f64], alpha: f64) -> PenaltyTerm {
        PenaltyTerm::new(
            PenaltyKind::ParameterBox {
                lower: v(lo),
                upper: v(hi),
                alpha,
            },
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn energy_at_reference_is_zero() {
        let x = v(&[1.0, 2.0]);
        let th = v(&[2.0, 0.5]);
        let term = energy_term(2.0);
        assert_eq!(eval_penalty(&term, &x, &th).unwrap(), 0.0);
        let (gx, gt) = penalty_gradients(&term, &x, &th).unwrap();
        assert_eq!(gx, Vector::zeros(2));
        assert_eq!(gt, Vector::zeros(2));
    }

    #[test]
    fn upper_barrier_examples() {
        let at_bound = eval_penalty(&upper(&[1.0, 2.0, 3.0], 5.0), &v(&[1.0, 2.0, 3.0]), &v(&[0.0])).unwrap();
        assert_eq!(at_bound, 3.0);

        let over = eval_penalty(&upper(&[0.5], 2.0), &v(&[1.5]), &v(&[0.0])).unwrap();
        assert!((over - 4f64.exp()).abs() < 1e-12);
        assert!((over - 54.598).abs() < 1e-3);

        let (gx, gt) = penalty_gradients(&upper(&[0.0], 1.0), &v(&[0.0]), &v(&[0.0])).unwrap();
        assert_eq!(gx[0], 2.0);
        assert_eq!(gt[0], 0.0);
    }

    #[test]
    fn inactive_bounds_contribute_nothing() {
        let term = upper(&[f64::INFINITY, 0.0], 3.0);
        assert_eq!(term.value(&v(&[1e6, 0.0]), &v(&[0.0])).unwrap(), 1.0);
        let (gx, _) = term.gradients(&v(&[1e6, 0.0]), &v(&[0.0])).unwrap();
        assert_eq!(gx[0], 0.0);
        let term = lower(&[f64::NEG_INFINITY], 3.0);
        assert_eq!(term.value(&v(&[-1e6]), &v(&[0.0])).unwrap(), 0.0);
        assert!(PenaltyTerm::new(
            PenaltyKind::UpperBarrier {
                bounds: v(&[f64::NEG_INFINITY]),
                alpha: 1.0
            },
            1.0
        )
        .is_err());
    }

    #[test]
    fn nonnegativity_special_case() {
        let term = lower(&[0.0, 0.0], 1.5);
        let x = v(&[0.2, -0.1]);
        let want = (-2.0 * 1.5 * 0.2f64).exp() + (2.0 * 1.5 * 0.1f64).exp();
        assert!((term.value(&x, &v(&[0.0])).unwrap() - want).abs() < 1e-14);
    }

    #[test]
    fn saturation_and_overflow() {
        let term = upper(&[0.0], 1000.0);
        let big = term.value(&v(&[10.0]), &v(&[0.0])).unwrap();
        assert!(big.is_finite());
        assert_eq!(big, SATURATED);
        let (gx, _) = term.gradients(&v(&[10.0]), &v(&[0.0])).unwrap();
        assert!(gx[0].is_finite() && gx[0] > 0.0);
        assert!(matches!(
            term.value_checked(&v(&[10.0]), &v(&[0.0])),
            Err(Error::Overflow { .. })
        ));
        assert!(term.value_checked(&v(&[0.0]), &v(&[0.0])).is_ok());
        let tight = upper(&[0.0], 1.0).with_exponent_cap(1.0);
        assert!(tight.value_checked(&v(&[1.0]), &v(&[0.0])).is_err());
        assert_eq!(tight.value(&v(&[1.0]), &v(&[0.0])).unwrap(), 1f64.exp());
    }

    #[test]
    fn relu_variant() {
        let term = PenaltyTerm::new(PenaltyKind::UpperRelu { bounds: v(&[1.0, 1.0]) }, 1.0).unwrap();
        assert_eq!(term.value(&v(&[3.0, 0.0]), &v(&[0.0])).unwrap(), 2.0);
        let (gx, _) = term.gradients(&v(&[3.0, 0.0]), &v(&[0.0])).unwrap();
        assert_eq!(gx, v(&[1.0, 0.0]));
    }

    #[test]
    fn parameter_box_is_parameter_only() {
        let term = param_box(&[0.0, 0.0], &[1.0, 1.0], 4.0);
        assert!(!term.is_state_dependent());
        let (gx, gt) = term.gradients(&v(&[5.0]), &v(&[0.5, 2.0])).unwrap();
        assert_eq!(gx, Vector::zeros(1));
        assert!(gt[1] > gt[0]);
        assert!(PenaltyTerm::new(
            PenaltyKind::ParameterBox {
                lower: v(&[2.0]),
                upper: v(&[1.0]),
                alpha: 1.0
            },
            1.0
        )
        .is_err());
    }

    #[test]
    fn invalid_terms_rejected() {
        assert!(PenaltyTerm::new(PenaltyKind::UpperBarrier { bounds: v(&[0.0]), alpha: 0.0 }, 1.0).is_err());
        assert!(PenaltyTerm::new(PenaltyKind::UpperBarrier { bounds: v(&[0.0]), alpha: 1.0 }, -1.0).is_err());
    }

    #[test]
    fn projection_examples() {
        let lo = v(&[0.0]);
        let hi = v(&[1.0]);
        assert_eq!(project_box(&v(&[5.0]), &lo, &hi).unwrap(), v(&[1.0]));
        assert_eq!(project_box(&v(&[0.25]), &lo, &hi).unwrap(), v(&[0.25]));
        assert_eq!(
            project_box(&v(&[-2.0, 0.5, 9.0]), &v(&[0.0; 3]), &v(&[1.0; 3])).unwrap(),
            v(&[0.0, 0.5, 1.0])
        );
        assert!(matches!(
            project_box(&v(&[0.0]), &v(&[1.0]), &v(&[0.0])),
            Err(Error::InvalidBox { index: 0, .. })
        ));
    }

    #[test]
    fn spec_charges_state_and_parameter_terms_separately() {
        let mut a = upper(&[0.0], 1.0);
        a.lambda = 0.5;
        let mut b = param_box(&[0.0], &[1.0], 1.0);
        b.lambda = 2.0;
        let spec = PenaltySpec::new(vec![a, b]);
        let x = v(&[0.0]);
        let th = v(&[0.5]);
        assert_eq!(spec.state_value(&x, &th).unwrap(), 0.5);
        let box_h = 2.0 * (-1.0f64).exp();
        assert!((spec.parameter_value(&x, &th).unwrap() - 2.0 * box_h).abs() < 1e-15);
        assert!(spec.has_state_terms() && spec.has_parameter_terms());
    }

    #[test]
    fn config_json_shape() {
        let json = r#"{"type":"upper_barrier","alpha":2.0,"bounds":[1.0,null],"lambda":0.1}"#;
        let cfg: PenaltyConfig = serde_json::from_str(json).unwrap();
        let term = cfg.build(None).unwrap();
        match term.kind() {
            PenaltyKind::UpperBarrier { bounds, alpha } => {
                assert_eq!(*alpha, 2.0);
                assert_eq!(bounds[1], f64::INFINITY);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(term.lambda(), 0.1);
        assert_eq!(serde_json::to_string(&cfg).unwrap(), json);
        let energy: PenaltyConfig =
            serde_json::from_str(r#"{"type":"energy_conservation","reference":1.0,"lambda":1.0}"#).unwrap();
        assert!(energy.build(None).is_err());
        assert!(energy.build(Some(Arc::new(Quadratic))).is_ok());
    }

    fn fd_check(term: &PenaltyTerm, x: &Vector, th: &Vector) {
        let (gx, gt) = term.gradients(x, th).unwrap();
        let nx = numeric_jacobian(|p| Ok(Vector::from_element(1, term.value(p, th)?)), x, 1e-6).unwrap();
        let nt = numeric_jacobian(|p| Ok(Vector::from_element(1, term.value(x, p)?)), th, 1e-6).unwrap();
        let scale = gx.amax().max(gt.amax()).max(1e-300);
        let err = (gx.transpose() - nx.row(0)).amax().max((gt.transpose() - nt.row(0)).amax());
        assert!(err / scale <= 1e-6, "{term:?}: rel err {}", err / scale);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn gradients_match_finite_differences(
            x in proptest::collection::vec(-1.0f64..1.0, 3),
            th in proptest::collection::vec(0.2f64..2.0, 3),
            b in proptest::collection::vec(-1.0f64..1.0, 3),
            alpha in 0.2f64..3.0,
            e0 in 0.0f64..2.0,
        ) {
            let x = v(&x);
            let th = v(&th);
            fd_check(&upper(b.as_slice(), alpha), &x, &th);
            fd_check(&lower(b.as_slice(), alpha), &x, &th);
            fd_check(&energy_term(e0), &x, &th);
            let lo: Vec<f64> = b.iter().map(|v| v + 0.5).collect();
            let hi: Vec<f64> = b.iter().map(|v| v + 1.5).collect();
            fd_check(&param_box(&lo, &hi, alpha), &x, &th);
        }

        #[test]
        fn penalties_are_nonnegative(
            x in proptest::collection::vec(-50.0f64..50.0, 2),
            th in proptest::collection::vec(0.1f64..5.0, 2),
            alpha in 0.01f64..100.0,
        ) {
            let x = v(&x);
            let th = v(&th);
            for term in [upper(&[0.0, 1.0], alpha), lower(&[0.0, 1.0], alpha), energy_term(1.0),
                         param_box(&[0.5, 0.5], &[1.0, 1.0], alpha)] {
                let h = term.value(&x, &th).unwrap();
                prop_assert!(h >= 0.0 && h.is_finite());
            }
        }

        #[test]
        fn barriers_are_monotone(
            x in proptest::collection::vec(-2.0f64..2.0, 3),
            i in 0usize..3,
            bump in 1e-3f64..1.0,
            alpha in 0.1f64..5.0,
        ) {
            let x = v(&x);
            let mut y = x.clone();
            y[i] += bump;
            let th = v(&[0.0]);
            let up = upper(&[0.0, 0.5, -0.5], alpha);
            prop_assert!(up.value(&y, &th).unwrap() > up.value(&x, &th).unwrap());
            let lo = lower(&[0.0, 0.5, -0.5], alpha);
            prop_assert!(lo.value(&y, &th).unwrap() < lo.value(&x, &th).unwrap());
        }

        #[test]
        fn projection_properties(
            th in proptest::collection::vec(-10.0f64..10.0, 4),
            other in proptest::collection::vec(-10.0f64..10.0, 4),
            lo in proptest::collection::vec(-5.0f64..0.0, 4),
            width in proptest::collection::vec(0.0f64..5.0, 4),
        ) {
            let lo = v(&lo);
            let hi = Vector::from_fn(4, |i, _| lo[i] + width[i]);
            let th = v(&th);
            let other = v(&other);
            let p = project_box(&th, &lo, &hi).unwrap();
            prop_assert_eq!(project_box(&p, &lo, &hi).unwrap(), p.clone());
            for i in 0..4 {
                prop_assert!(lo[i] <= p[i] && p[i] <= hi[i]);
                if lo[i] < th[i] && th[i] < hi[i] {
                    prop_assert_eq!(p[i], th[i]);
                }
            }
            let q = project_box(&other, &lo, &hi).unwrap();
            prop_assert!((&p - &q).amax() <= (&th - &other).amax());
        }
    }
}
