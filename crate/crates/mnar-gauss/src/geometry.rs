//! Halfspace systems for missingness patterns and Euclidean projection onto
//! their intersections (Dykstra's alternating scheme).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::missingness::{LinearThresholdModel, Observation};

/// Slack applied to strict faces when projecting; membership tests stay strict.
pub const TAU_STRICT: f64 = 1e-9;

/// Dykstra stopping tolerance on per-sweep movement.
pub const DYKSTRA_TOL: f64 = 1e-8;

/// Dykstra sweep cap.
pub const DYKSTRA_MAX_SWEEPS: usize = 500;

/// `normal . z <= offset` (closed) or `< offset` (strict). Normals are unit
/// length; `offset` is rescaled accordingly at construction.
#[derive(Debug, Clone)]
pub struct Halfspace {
    pub normal: DVector<f64>,
    pub offset: f64,
    pub strict: bool,
}

impl Halfspace {
    fn normalized(normal: DVector<f64>, offset: f64, strict: bool) -> Self {
        let n = normal.norm();
        debug_assert!(n > 0.0);
        Halfspace { normal: normal / n, offset: offset / n, strict }
    }

    fn satisfied(&self, z: &DVector<f64>) -> bool {
        let v = self.normal.dot(z);
        if self.strict {
            v < self.offset
        } else {
            v <= self.offset
        }
    }

    fn satisfied_within(&self, z: &DVector<f64>, tol: f64) -> bool {
        self.normal.dot(z) <= self.offset + tol
    }

    /// Offset of the closed set used for projections: strict faces are pulled
    /// in by `TAU_STRICT`.
    fn closed_offset(&self) -> f64 {
        if self.strict {
            self.offset - TAU_STRICT
        } else {
            self.offset
        }
    }
}

/// The linear constraint system over completions `z` of the hidden
/// coordinates consistent with an observed pattern.
#[derive(Debug, Clone)]
pub struct ConstraintSet {
    pub dim: usize,
    pub halfspaces: Vec<Halfspace>,
    /// Set when a constraint with zero normal is violated outright; the
    /// pattern is impossible for these observed values.
    pub infeasible: bool,
}

impl ConstraintSet {
    /// Strict membership test (ties on strict faces excluded).
    pub fn contains(&self, z: &DVector<f64>) -> bool {
        !self.infeasible && self.halfspaces.iter().all(|h| h.satisfied(z))
    }

    /// Closed membership with tolerance, for verifying projector outputs.
    pub fn contains_within(&self, z: &DVector<f64>, tol: f64) -> bool {
        !self.infeasible && self.halfspaces.iter().all(|h| h.satisfied_within(z, tol))
    }

    /// Euclidean projection hook onto the closed relaxation.
    pub fn project(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        project_onto_intersection(z, &self.halfspaces, None)
    }

    /// Rewrites the system for whitened coordinates `w = t_inv . z`, i.e.
    /// substitutes `z = t w` into every constraint.
    pub fn transformed(&self, t: &DMatrix<f64>) -> ConstraintSet {
        let halfspaces = self
            .halfspaces
            .iter()
            .map(|h| Halfspace::normalized(t.transpose() * &h.normal, h.offset, h.strict))
            .collect();
        ConstraintSet { dim: self.dim, halfspaces, infeasible: self.infeasible }
    }
}

/// The pattern polytope `K` for an observation under a linear-thresholding
/// model: constraints on the hidden completion `z` so that `S(x ∘ z) = A`.
pub fn membership_polytope(model: &LinearThresholdModel, obs: &Observation) -> ConstraintSet {
    let d = model.dim();
    let hidden: Vec<usize> = (0..d).filter(|i| obs.seen.binary_search(i).is_err()).collect();
    let h = hidden.len();
    let mut halfspaces = Vec::new();
    let mut infeasible = false;

    for i in 0..d {
        let seen_i = obs.seen.binary_search(&i).is_ok();
        let mut normal = DVector::zeros(h);
        for (k, &hc) in hidden.iter().enumerate() {
            normal[k] = model.v[(i, hc)];
        }
        let dot_seen: f64 = obs
            .seen
            .iter()
            .zip(&obs.values)
            .map(|(&j, &x)| model.v[(i, j)] * x)
            .sum();
        let rhs = model.b[i] - dot_seen;
        if seen_i {
            // v_i . (x ∘ z) <= b_i
            if normal.iter().all(|x| *x == 0.0) {
                if rhs < 0.0 {
                    infeasible = true;
                }
            } else {
                halfspaces.push(Halfspace::normalized(normal, rhs, false));
            }
        } else {
            // v_j . (x ∘ z) > b_j, i.e. (-v_j_hidden) . z < -rhs
            if normal.iter().all(|x| *x == 0.0) {
                if rhs >= 0.0 {
                    infeasible = true;
                }
            } else {
                halfspaces.push(Halfspace::normalized(-normal, -rhs, true));
            }
        }
    }
    ConstraintSet { dim: h, halfspaces, infeasible }
}

/// Euclidean projection of `point` onto the intersection of closed halfspaces
/// and an optional ball, via Dykstra's alternating projections.
///
/// Runs until successive sweeps move the iterate by at most `DYKSTRA_TOL` or
/// the sweep cap is hit. The output is verified to satisfy every closed
/// constraint within 1e-6.
pub fn project_onto_intersection(
    point: &DVector<f64>,
    halfspaces: &[Halfspace],
    ball: Option<(&DVector<f64>, f64)>,
) -> Result<DVector<f64>> {
    let dim = point.len();

    // fast path: already feasible
    let feasible = |z: &DVector<f64>| {
        halfspaces.iter().all(|h| h.normal.dot(z) <= h.closed_offset())
            && ball.map_or(true, |(c, r)| (z - c).norm() <= r)
    };
    if feasible(point) {
        return Ok(point.clone());
    }

    if dim == 1 {
        return project_interval_1d(point, halfspaces, ball);
    }

    let n_sets = halfspaces.len() + usize::from(ball.is_some());
    let mut y = point.clone();
    let mut increments = vec![DVector::zeros(dim); n_sets];
    let mut movement = f64::INFINITY;
    for sweep in 0..DYKSTRA_MAX_SWEEPS {
        // movement tracks the change of the full Dykstra state (iterate and
        // correction increments); the iterate alone can stall mid-run.
        let mut delta_sq = (0.0f64, y.clone());
        for (m, inc) in increments.iter_mut().enumerate() {
            let w = &y + &*inc;
            let proj = if m < halfspaces.len() {
                let h = &halfspaces[m];
                let excess = h.normal.dot(&w) - h.closed_offset();
                if excess > 0.0 {
                    &w - &h.normal * excess
                } else {
                    w.clone()
                }
            } else {
                let (c, r) = ball.unwrap();
                let delta = &w - c;
                let norm = delta.norm();
                if norm > r {
                    c + delta * (r / norm)
                } else {
                    w.clone()
                }
            };
            let new_inc = &w - &proj;
            delta_sq.0 += (&new_inc - &*inc).norm_squared();
            *inc = new_inc;
            y = proj;
        }
        movement = (delta_sq.0 + (&y - &delta_sq.1).norm_squared()).sqrt();
        if movement <= DYKSTRA_TOL {
            if halfspaces.iter().all(|h| h.normal.dot(&y) <= h.closed_offset() + 1e-6)
                && ball.map_or(true, |(c, r)| (&y - c).norm() <= r + 1e-6)
            {
                return Ok(y);
            }
            return Err(Error::NoConvergence { sweeps: sweep + 1, movement });
        }
    }
    Err(Error::NoConvergence { sweeps: DYKSTRA_MAX_SWEEPS, movement })
}

/// In one dimension the intersection is an interval; clamp exactly.
fn project_interval_1d(
    point: &DVector<f64>,
    halfspaces: &[Halfspace],
    ball: Option<(&DVector<f64>, f64)>,
) -> Result<DVector<f64>> {
    let (lo, hi) = interval_bounds_1d(halfspaces, ball);
    if lo > hi {
        return Err(Error::NoConvergence { sweeps: 0, movement: lo - hi });
    }
    Ok(DVector::from_vec(vec![point[0].clamp(lo, hi)]))
}

/// Closed interval `[lo, hi]` described by 1-d halfspaces and an optional ball.
pub fn interval_bounds_1d(
    halfspaces: &[Halfspace],
    ball: Option<(&DVector<f64>, f64)>,
) -> (f64, f64) {
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    for h in halfspaces {
        let a = h.normal[0];
        let c = h.closed_offset();
        if a > 0.0 {
            hi = hi.min(c / a);
        } else {
            lo = lo.max(c / a);
        }
    }
    if let Some((c, r)) = ball {
        lo = lo.max(c[0] - r);
        hi = hi.min(c[0] + r);
    }
    (lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::missingness::MissingnessModel;
    use crate::missingness::generate_with_truth;
    use crate::gaussian::GaussianParams;
    use crate::rng::stream_rng;
    use rand::Rng;

    fn max_observation_2d() -> LinearThresholdModel {
        LinearThresholdModel::new(
            DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0]),
            DVector::zeros(2),
        )
        .unwrap()
    }

    #[test]
    fn fully_observed_pattern_has_dimension_zero() {
        let m = max_observation_2d();
        let obs = Observation::new(vec![0, 1], vec![1.0, 1.0]).unwrap();
        let k = membership_polytope(&m, &obs);
        assert_eq!(k.dim, 0);
        assert!(k.contains(&DVector::zeros(0)));
    }

    #[test]
    fn max_observation_halfspace_algebra() {
        // A = {0}, x = 3: seeing the max at 3 forces the hidden value below it,
        // so K = {z : z < 3} (closed from coord 0, strict from hidden coord 1).
        let m = max_observation_2d();
        let obs = Observation::new(vec![0], vec![3.0]).unwrap();
        let k = membership_polytope(&m, &obs);
        assert_eq!(k.dim, 1);
        assert!(k.contains(&DVector::from_vec(vec![2.0])));
        assert!(!k.contains(&DVector::from_vec(vec![3.0]))); // tie excluded: strict face
        assert!(!k.contains(&DVector::from_vec(vec![3.5])));
    }

    #[test]
    fn polytope_contains_generating_point() {
        let p = GaussianParams::standard(2);
        let model = MissingnessModel::LinearThreshold(max_observation_2d());
        let (ys, obs) = generate_with_truth(&p, &model, 1000, &mut stream_rng(21, 0)).unwrap();
        let lt = max_observation_2d();
        for (y, o) in ys.iter().zip(&obs) {
            let k = membership_polytope(&lt, o);
            let hidden: Vec<f64> = (0..2)
                .filter(|i| o.seen.binary_search(i).is_err())
                .map(|i| y[i])
                .collect();
            assert!(k.contains(&DVector::from_vec(hidden)), "observation {o:?}");
        }
    }

    #[test]
    fn midpoints_of_members_are_members() {
        let m = LinearThresholdModel::new(
            DMatrix::from_row_slice(3, 3, &[-1.0, 1.0, 0.2, 1.0, -1.0, 0.1, 0.0, 0.0, 0.0]),
            DVector::from_vec(vec![0.3, -0.1, 0.0]),
        )
        .unwrap();
        let obs = Observation::new(vec![0, 2], vec![0.4, -0.2]).unwrap();
        let k = membership_polytope(&m, &obs);
        let mut rng = stream_rng(12, 0);
        let mut members = Vec::new();
        while members.len() < 60 {
            let z = DVector::from_fn(k.dim, |_, _| rng.random::<f64>() * 12.0 - 6.0);
            if k.contains(&z) {
                members.push(z);
            }
        }
        let mut pairs = 0;
        'outer: for i in 0..members.len() {
            for j in (i + 1)..members.len() {
                let mid = (&members[i] + &members[j]) * 0.5;
                assert!(k.contains(&mid));
                pairs += 1;
                if pairs >= 1000 {
                    break 'outer;
                }
            }
        }
    }

    #[test]
    fn feasible_point_projects_to_itself() {
        let h = vec![Halfspace::normalized(DVector::from_vec(vec![1.0, 0.0]), 0.0, false)];
        let z = DVector::from_vec(vec![-0.5, 2.0]);
        let p = project_onto_intersection(&z, &h, None).unwrap();
        assert!((p - z).norm() < 1e-12);
    }

    #[test]
    fn single_halfspace_closed_form() {
        let h = vec![Halfspace::normalized(DVector::from_vec(vec![1.0, 0.0]), 0.0, false)];
        let p = project_onto_intersection(&DVector::from_vec(vec![1.0, 0.0]), &h, None).unwrap();
        assert!((p - DVector::from_vec(vec![0.0, 0.0])).norm() < 1e-9);
    }

    #[test]
    fn projection_is_idempotent() {
        let h = vec![
            Halfspace::normalized(DVector::from_vec(vec![1.0, 0.3]), 0.4, false),
            Halfspace::normalized(DVector::from_vec(vec![-0.2, 1.0]), -0.1, true),
        ];
        let center = DVector::from_vec(vec![0.0, 0.0]);
        let mut rng = stream_rng(31, 0);
        for _ in 0..1000 {
            let z = DVector::from_fn(2, |_, _| rng.random::<f64>() * 10.0 - 5.0);
            let p1 = project_onto_intersection(&z, &h, Some((&center, 3.0))).unwrap();
            let p2 = project_onto_intersection(&p1, &h, Some((&center, 3.0))).unwrap();
            // iterative projector: reprojection may move within its own
            // convergence tolerance
            assert!((p1 - p2).norm() <= 2e-6);
        }
    }

    #[test]
    fn dykstra_matches_grid_oracle() {
        // two orthogonal halfspaces plus a ball, brute-force distance grid
        let h = vec![
            Halfspace::normalized(DVector::from_vec(vec![1.0, 0.0]), 0.5, false),
            Halfspace::normalized(DVector::from_vec(vec![0.0, 1.0]), 0.2, false),
        ];
        let center = DVector::from_vec(vec![-0.4, -0.6]);
        let radius = 1.0;
        let targets = [
            DVector::from_vec(vec![2.0, 2.0]),
            DVector::from_vec(vec![0.9, -0.4]),
            DVector::from_vec(vec![-2.5, 1.4]),
        ];
        for z in &targets {
            let p = project_onto_intersection(z, &h, Some((&center, radius))).unwrap();
            assert!(p[0] <= 0.5 + 1e-6 && p[1] <= 0.2 + 1e-6);
            assert!((&p - &center).norm() <= radius + 1e-6);
            // brute-force grid minimizer of the distance at resolution 1e-3
            let mut best = f64::INFINITY;
            let steps = 3200;
            for i in 0..=steps {
                for j in 0..=steps {
                    let x = -2.0 + 3.2 * i as f64 / steps as f64;
                    let y = -2.0 + 3.2 * j as f64 / steps as f64;
                    let cand = DVector::from_vec(vec![x, y]);
                    if x <= 0.5 && y <= 0.2 && (&cand - &center).norm() <= radius {
                        best = best.min((&cand - z).norm());
                    }
                }
            }
            let achieved = (&p - z).norm();
            assert!(
                (achieved - best).abs() <= 2e-3 && achieved <= best + 1e-9,
                "dykstra distance {achieved} vs grid minimum {best}"
            );
        }
    }

    #[test]
    fn whitening_transform_preserves_membership() {
        let m = max_observation_2d();
        let obs = Observation::new(vec![0], vec![1.0]).unwrap();
        let k = membership_polytope(&m, &obs);
        let w = DMatrix::from_row_slice(1, 1, &[2.0]);
        let kw = k.transformed(&w);
        // K = {z < 1}; z = 0.5 feasible, whitened coordinate is z/2 = 0.25
        assert!(k.contains(&DVector::from_vec(vec![0.5])));
        assert!(kw.contains(&DVector::from_vec(vec![0.25])));
        assert!(!kw.contains(&DVector::from_vec(vec![0.6])));
    }
}
