use rto_core::DVec;

use crate::nlp::{solve_nlp, NlpFunctions, NlpOptions, NlpSolution};

/// One row of a sol-map sweep: correction point, optimizer, multipliers and
/// active set, or the per-point error if that solve failed.
#[derive(Debug, Clone)]
pub struct SolMapRow {
    pub v: DVec,
    pub solution: Option<NlpSolution>,
    pub error: Option<String>,
}

/// Sweep the correction-point-to-optimizer map `sol(v)` of a purely
/// iterative method over a grid of correction points. The solver is
/// initialized off the correction point (a saddle there can masquerade as a
/// minimum), and per-point failures are recorded without aborting the sweep.
pub fn evaluate_sol_map<'a, F>(
    family: F,
    v_grid: &[DVec],
    opts: &NlpOptions,
) -> Vec<SolMapRow>
where
    F: Fn(&DVec) -> NlpFunctions<'a>,
{
    let mut rows = Vec::with_capacity(v_grid.len());
    let mut warm: Option<DVec> = None;
    for v in v_grid {
        let funcs = family(v);
        // Start off the correction point; warm-start from the previous
        // grid point when available.
        let mut start = v.clone();
        for s in start.iter_mut() {
            *s += 0.05 * (s.abs().max(1.0));
        }
        let mut o = opts.clone();
        if let Some(w) = &warm {
            o.extra_starts.push(w.clone());
        }
        match solve_nlp(&funcs, &start, &o) {
            Ok(sol) => {
                warm = Some(sol.u_star.clone());
                rows.push(SolMapRow {
                    v: v.clone(),
                    solution: Some(sol),
                    error: None,
                });
            }
            Err(e) => rows.push(SolMapRow {
                v: v.clone(),
                solution: None,
                error: Some(e.to_string()),
            }),
        }
    }
    rows
}
