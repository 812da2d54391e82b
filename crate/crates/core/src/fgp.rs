//! Functionally generated portfolio weights.
//!
//! For a generating function `G` on the open simplex the portfolio is
//!
//! ```text
//! πᵢ(x) = (∂ᵢ log G(x) + 1 − Σⱼ xⱼ ∂ⱼ log G(x)) · xᵢ
//! ```
//!
//! which always sums to one. The neural portfolio caps each component of
//! `∇ log G` at [`GRAD_CLIP`] and then floors and renormalises the result so
//! that every weight stays strictly positive.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::icnn::{eval_on_tape, IcnnParams, ParamVars};

/// Floor applied to raw weights before renormalising.
pub const PORTFOLIO_FLOOR: f64 = 1e-6;

/// Default componentwise cap on `∇ₓ log G` for the neural portfolio.
pub const GRAD_CLIP: f64 = 10.0;

/// Long-only weights summing to one.
#[derive(Clone, Debug, PartialEq)]
pub struct PortfolioWeights(Vec<f64>);

impl PortfolioWeights {
    // every constructor funnels through here
    fn from_vec(w: Vec<f64>) -> Self {
        debug_assert!(
            (w.iter().sum::<f64>() - 1.0).abs() <= 1e-10 && w.iter().all(|&v| v > 0.0),
            "weights {w:?} are not self-financing"
        );
        PortfolioWeights(w)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl std::ops::Deref for PortfolioWeights {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Generator {
    /// `G ≡ c`: the market portfolio.
    Constant,
    /// `G = Π xᵢ^{1/n}`.
    EqualWeight,
    /// `G = (Σ xᵢ^p)^{1/p}`, `0 < p < 1`, giving `πᵢ = xᵢ^p / Σⱼ xⱼ^p`.
    ///
    /// The unscaled sum `Σ xᵢ^p` has the same level sets but its generic-map
    /// weights are `p·xᵢ^p/Σⱼ xⱼ^p + (1−p)·xᵢ`, not the diversity weights.
    Diversity {
        p: f64,
    },
    /// `G = −Σ xᵢ log xᵢ`.
    Entropy,
    Neural(Box<IcnnParams>),
}

impl Generator {
    pub fn diversity(p: f64) -> Result<Self> {
        let g = Generator::Diversity { p };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Generator::Diversity { p } if !(*p > 0.0 && *p < 1.0) => Err(Error::Config(format!(
                "diversity exponent must lie in (0, 1), got {p}"
            ))),
            Generator::Neural(theta) => theta.validate(),
            _ => Ok(()),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Generator::Constant => "market".into(),
            Generator::EqualWeight => "ewp".into(),
            Generator::Diversity { p } => format!("dwp_p{p}"),
            Generator::Entropy => "entropy".into(),
            Generator::Neural(_) => "neural_fgp".into(),
        }
    }

    /// `G(x)`; the constant generator is normalised to 1.
    pub fn value(&self, x: &[f64]) -> Result<f64> {
        self.validate()?;
        Ok(match self {
            Generator::Constant => 1.0,
            Generator::EqualWeight => {
                let n = x.len() as f64;
                (x.iter().map(|v| v.ln()).sum::<f64>() / n).exp()
            }
            Generator::Diversity { p } => x.iter().map(|v| v.powf(*p)).sum::<f64>().powf(1.0 / p),
            Generator::Entropy => -x.iter().map(|v| v * v.ln()).sum::<f64>(),
            Generator::Neural(theta) => theta.generating_function(x)?,
        })
    }

    /// Analytic `∇ log G` for the closed-form generators; the neural one goes
    /// through the network's input-gradient recursion.
    pub fn grad_log(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.validate()?;
        let n = x.len() as f64;
        Ok(match self {
            Generator::Constant => vec![0.0; x.len()],
            Generator::EqualWeight => x.iter().map(|v| 1.0 / (n * v)).collect(),
            Generator::Diversity { p } => {
                let s: f64 = x.iter().map(|v| v.powf(*p)).sum();
                x.iter().map(|v| v.powf(p - 1.0) / s).collect()
            }
            Generator::Entropy => {
                let g = self.value(x)?;
                x.iter().map(|v| (-v.ln() - 1.0) / g).collect()
            }
            Generator::Neural(theta) => theta.grad_log_g(x)?,
        })
    }

    /// Analytic Hessian `D²G` of the closed-form generators.
    pub fn hessian(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.validate()?;
        let n = x.len();
        let mut h = vec![vec![0.0; n]; n];
        match self {
            Generator::Constant => {}
            Generator::EqualWeight => {
                let g = self.value(x)?;
                let nf = n as f64;
                for i in 0..n {
                    for j in 0..n {
                        h[i][j] = g / (nf * nf * x[i] * x[j]);
                    }
                    h[i][i] -= g / (nf * x[i] * x[i]);
                }
            }
            Generator::Diversity { p } => {
                let p = *p;
                let s: f64 = x.iter().map(|v| v.powf(p)).sum();
                let outer = (1.0 - p) * s.powf(1.0 / p - 2.0);
                let diag = (1.0 - p) * s.powf(1.0 / p - 1.0);
                for i in 0..n {
                    for j in 0..n {
                        h[i][j] = outer * x[i].powf(p - 1.0) * x[j].powf(p - 1.0);
                    }
                    h[i][i] -= diag * x[i].powf(p - 2.0);
                }
            }
            Generator::Entropy => {
                for i in 0..n {
                    h[i][i] = -1.0 / x[i];
                }
            }
            Generator::Neural(_) => {
                return Err(Error::Config(
                    "the neural generator has no analytic Hessian; use the finite-difference path"
                        .into(),
                ))
            }
        }
        Ok(h)
    }
}

/// The generic map `πᵢ = (gᵢ + 1 − Σⱼ xⱼ gⱼ) xᵢ`; may contain negative entries.
pub fn raw_fgp_weights(grad_log_g: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    if grad_log_g.len() != x.len() {
        return Err(Error::dim(
            "raw_fgp_weights",
            format!(
                "gradient of length {} for point of length {}",
                grad_log_g.len(),
                x.len()
            ),
        ));
    }
    let mean: f64 = x.iter().zip(grad_log_g).map(|(xi, gi)| xi * gi).sum();
    Ok(grad_log_g
        .iter()
        .zip(x)
        .map(|(gi, xi)| (gi + 1.0 - mean) * xi)
        .collect())
}

/// Floor at [`PORTFOLIO_FLOOR`] and renormalise. All-nonpositive input
/// therefore maps to the uniform portfolio.
pub fn project_to_simplex(raw: &[f64]) -> Result<PortfolioWeights> {
    if let Some(i) = raw.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!(
            "non-finite raw weight {} at index {i}",
            raw[i]
        )));
    }
    if raw.is_empty() {
        return Err(Error::dim("project_to_simplex", "empty weight vector"));
    }
    let floored: Vec<f64> = raw.iter().map(|v| v.max(PORTFOLIO_FLOOR)).collect();
    let total: f64 = floored.iter().sum();
    Ok(PortfolioWeights::from_vec(
        floored.into_iter().map(|v| v / total).collect(),
    ))
}

fn check_simplex(x: &[f64]) -> Result<()> {
    let sum: f64 = x.iter().sum();
    if x.len() < 2 || !x.iter().all(|v| v.is_finite() && *v > 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Data(format!("{x:?} is not in the open simplex")));
    }
    Ok(())
}

/// Closed-form weights of the classical generators.
pub fn classical_weights(generator: &Generator, x: &[f64]) -> Result<PortfolioWeights> {
    generator.validate()?;
    check_simplex(x)?;
    let normalise = |v: Vec<f64>| {
        let s: f64 = v.iter().sum();
        PortfolioWeights::from_vec(v.into_iter().map(|e| e / s).collect())
    };
    Ok(match generator {
        Generator::Constant => PortfolioWeights::from_vec(x.to_vec()),
        Generator::EqualWeight => PortfolioWeights::from_vec(vec![1.0 / x.len() as f64; x.len()]),
        Generator::Diversity { p } => normalise(x.iter().map(|v| v.powf(*p)).collect()),
        Generator::Entropy => normalise(x.iter().map(|v| -v * v.ln()).collect()),
        Generator::Neural(_) => {
            return Err(Error::Config(
                "the neural generator has no closed form; use neural_weights".into(),
            ))
        }
    })
}

/// Weights of any generator: closed form for the classical ones, the clipped
/// and projected gradient map for the neural one.
pub fn generator_weights(generator: &Generator, x: &[f64]) -> Result<PortfolioWeights> {
    match generator {
        Generator::Neural(theta) => neural_weights(theta, x, GRAD_CLIP),
        other => classical_weights(other, x),
    }
}

/// Neural portfolio: cap `∇ log G` at `clip`, apply the generic map, project.
pub fn neural_weights(theta: &IcnnParams, x: &[f64], clip: f64) -> Result<PortfolioWeights> {
    let g: Vec<f64> = theta
        .grad_log_g(x)?
        .into_iter()
        .map(|v| v.clamp(-clip, clip))
        .collect();
    project_to_simplex(&raw_fgp_weights(&g, x)?)
}

/// Tape version of [`neural_weights`] over the columns of `x` (`n×T`),
/// returning the weight matrix (`n×T`) and `G` (`1×T`).
pub fn neural_weights_on_tape(
    tape: &mut Tape,
    vars: &ParamVars,
    theta: &IcnnParams,
    x: Var,
    clip: f64,
) -> Result<(Var, Var)> {
    let n = tape.value(x).rows();
    let eval = eval_on_tape(tape, vars, theta, x)?;
    let upper = tape.min_scalar(eval.grad_log_g, clip);
    let g = tape.max_scalar(upper, -clip);

    let xg = tape.mul(x, g)?;
    let mean = tape.col_sums(xg);
    let mean = tape.broadcast_rows(mean, n)?;
    let centred = tape.sub(g, mean)?;
    let scale = tape.add_scalar(centred, 1.0);
    let raw = tape.mul(scale, x)?;

    let floored = tape.max_scalar(raw, PORTFOLIO_FLOOR);
    let total = tape.col_sums(floored);
    let total = tape.broadcast_rows(total, n)?;
    let weights = tape.div(floored, total)?;
    Ok((weights, eval.g))
}
