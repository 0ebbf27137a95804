use crate::error::CoreError;
use crate::types::ProblemSpec;
use crate::DVec;

/// `phi_p(u) := phi(u, f_p(u))`: compose the cost with a (possibly
/// corrected) output map. Pure composition, no hidden state.
pub fn compose_cost<F>(spec: &ProblemSpec, corrected_f: F, u: &DVec) -> Result<f64, CoreError>
where
    F: Fn(&DVec) -> DVec,
{
    let y = corrected_f(u);
    if y.iter().any(|v| !v.is_finite()) {
        return Err(CoreError::NonFinite {
            at: u.iter().copied().collect(),
        });
    }
    CoreError::check_dim(spec.n_y, y.len(), "composed outputs vs n_y")?;
    let c = (spec.cost)(u, &y);
    if !c.is_finite() {
        return Err(CoreError::NonFinite {
            at: u.iter().copied().collect(),
        });
    }
    Ok(c)
}

/// Identical composition for the constraint block: `g(u, f(u))`.
pub fn compose_constraints<F>(
    spec: &ProblemSpec,
    corrected_f: F,
    u: &DVec,
) -> Result<DVec, CoreError>
where
    F: Fn(&DVec) -> DVec,
{
    let y = corrected_f(u);
    if y.iter().any(|v| !v.is_finite()) {
        return Err(CoreError::NonFinite {
            at: u.iter().copied().collect(),
        });
    }
    CoreError::check_dim(spec.n_y, y.len(), "composed outputs vs n_y")?;
    let g = (spec.constraints)(u, &y);
    if g.iter().any(|v| !v.is_finite()) {
        return Err(CoreError::NonFinite {
            at: u.iter().copied().collect(),
        });
    }
    Ok(g)
}
