use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Worst relative error per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub per_param: Vec<f64>,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.per_param.iter().copied().fold(0.0, f64::max)
    }
}

/// `|analytic - numeric| / max(1, |analytic|, |numeric|)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

/// Compares tape gradients of `f` against central differences with step `h`
/// for every coordinate of every tensor in `params`.
///
/// `f` receives a fresh tape and one [`Var`] per parameter and must return
/// a scalar loss.
pub fn finite_diff_check<F>(params: &[Tensor], h: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if h.is_nan() || h <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    tape.backward(loss)?;

    let evaluate = |params: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|p| tape.constant(p.clone())).collect();
        let loss = f(&mut tape, &vars)?;
        Ok(tape.value(loss).item())
    };

    let mut probe = params.to_vec();
    let mut per_param = Vec::with_capacity(params.len());
    for (which, var) in vars.iter().enumerate() {
        let analytic = tape
            .grad(*var)
            .map(|g| g.data().to_vec())
            .unwrap_or_else(|| vec![0.0; params[which].numel()]);
        let mut worst: f64 = 0.0;
        for coord in 0..params[which].numel() {
            let original = params[which].data()[coord];
            probe[which].data_mut()[coord] = original + h;
            let up = evaluate(&probe)?;
            probe[which].data_mut()[coord] = original - h;
            let down = evaluate(&probe)?;
            probe[which].data_mut()[coord] = original;
            let numeric = (up - down) / (2.0 * h);
            worst = worst.max(relative_error(analytic[coord], numeric));
        }
        per_param.push(worst);
    }
    Ok(GradCheckReport { per_param })
}
