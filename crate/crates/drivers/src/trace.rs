use rto_core::DVec;

/// One iteration of a driver run. Append-only; reproducible under a fixed
/// seed.
#[derive(Debug, Clone)]
pub struct TraceRow {
    pub k: usize,
    pub u_k: DVec,
    pub u_star_next: DVec,
    pub u_next: DVec,
    pub gain: f64,
    pub nabla_est: Option<f64>,
    pub plant_cost: f64,
    pub plant_constraints: DVec,
    /// Any plant constraint (including bounds) above tolerance at the
    /// applied point.
    pub violation: bool,
    pub violation_magnitude: f64,
    /// Updated-model constraint values at the applied point.
    pub model_constraints_at_applied: DVec,
    pub active_set: Vec<usize>,
    pub solver_iterations: usize,
    pub duration_s: f64,
}

#[derive(Debug, Clone, Default)]
pub struct RtoTrace {
    pub rows: Vec<TraceRow>,
}

impl RtoTrace {
    pub fn push(&mut self, row: TraceRow) {
        self.rows.push(row);
    }

    pub fn violations(&self) -> usize {
        self.rows.iter().filter(|r| r.violation).count()
    }

    /// First iteration index whose applied point is within `tol` of
    /// `target` (max-norm), if any.
    pub fn iterations_to(&self, target: &DVec, tol: f64) -> Option<usize> {
        self.rows
            .iter()
            .find(|r| (&r.u_next - target).amax() <= tol)
            .map(|r| r.k + 1)
    }
}
