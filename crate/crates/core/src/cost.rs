//! Path-following stage cost: speed tracking, lateral offset, heading
//! alignment, input increments, and a discontinuous goal-region speed
//! penalty. Deliberately non-differentiable — the optimizers sample, they
//! never differentiate. Units mix by design; the weights absorb scale.

use serde::{Deserialize, Serialize};

use crate::dynamics::{ControlInput, State};
use crate::path::{PathQuery, Vec2};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CostWeights {
    pub w_v: f64,
    pub w_path: f64,
    pub w_align: f64,
    pub w_du: f64,
    pub w_goal: f64,
    /// Goal-region radius (m).
    pub eps_goal_pos: f64,
    /// Speed below which the goal penalty stays off (m/s).
    pub eps_goal_vel: f64,
    /// Reference speed (m/s); constant by default, swap per step for a schedule.
    pub v_ref: f64,
}

impl CostWeights {
    pub fn validate(&self) -> crate::Result<()> {
        let weights = [self.w_v, self.w_path, self.w_align, self.w_du, self.w_goal];
        if !weights.iter().all(|w| w.is_finite() && *w >= 0.0) {
            return Err(crate::Error::Config(format!("cost weights must be ≥ 0, got {weights:?}")));
        }
        if !(self.eps_goal_pos > 0.0 && self.eps_goal_vel > 0.0 && self.v_ref.is_finite()) {
            return Err(crate::Error::Config("goal thresholds must be positive".into()));
        }
        Ok(())
    }
}

/// One-step tracking cost. `q` must be the nearest-point query for `x`.
///
/// The goal term `w_goal·(V − ε_vel)²` switches on only inside the goal ball
/// and only while `V ≥ ε_vel` — discontinuous at both thresholds, which is
/// the point: it forces a hard slow-down near the goal without shaping the
/// rest of the landscape.
pub fn stage_cost(
    x: &State,
    u: &ControlInput,
    u_prev: &ControlInput,
    q: &PathQuery,
    cw: &CostWeights,
    p_goal: Vec2,
) -> f64 {
    let v = x.speed();
    let pos = Vec2::new(x.x, x.y);

    let dv = v - cw.v_ref;
    let d_path_sq = pos.dist_sq(q.point);
    let align = 1.0 - (x.c * q.tangent.x + x.s * q.tangent.y);
    let da = u.a - u_prev.a;
    let dd = u.delta - u_prev.delta;

    let l_goal = if pos.dist_sq(p_goal) <= cw.eps_goal_pos * cw.eps_goal_pos && v >= cw.eps_goal_vel
    {
        let e = v - cw.eps_goal_vel;
        e * e
    } else {
        0.0
    };

    cw.w_v * dv * dv
        + cw.w_path * d_path_sq
        + cw.w_align * align
        + cw.w_du * (da * da + dd * dd)
        + cw.w_goal * l_goal
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::path::{build_hermite_path, Pose};
    use approx::assert_relative_eq;

    fn weights() -> CostWeights {
        CostWeights {
            w_v: 50.0,
            w_path: 500.0,
            w_align: 10.0,
            w_du: 0.05,
            w_goal: 50_000.0,
            eps_goal_pos: 0.10,
            eps_goal_vel: 0.04,
            v_ref: 0.10,
        }
    }

    fn east_query() -> PathQuery {
        let p = build_hermite_path(Pose::new(0.0, 0.0, 0.0), Pose::new(8.0, 0.0, 0.0), 800)
            .unwrap();
        p.nearest_point(Vec2::new(2.0, 0.0))
    }

    #[test]
    fn zero_on_path_at_reference() {
        let q = east_query();
        let x = State::at_pose(q.point.x, q.point.y, 0.0, 0.1);
        let u = ControlInput::new(40.0, 0.0);
        assert_eq!(stage_cost(&x, &u, &u, &q, &weights(), Vec2::new(8.0, 0.0)), 0.0);
    }

    #[test]
    fn opposite_heading_costs_twice_the_alignment_weight() {
        let q = east_query();
        let cw = CostWeights { w_v: 0.0, w_path: 0.0, w_du: 0.0, w_goal: 0.0, ..weights() };
        let x = State::at_pose(q.point.x, q.point.y, std::f64::consts::PI, 0.1);
        let u = ControlInput::new(40.0, 0.0);
        let c = stage_cost(&x, &u, &u, &q, &cw, Vec2::new(8.0, 0.0));
        assert_relative_eq!(c, 2.0 * cw.w_align, epsilon = 1e-12);
    }

    #[test]
    fn lateral_offset_arithmetic() {
        // 0.1 m offset, aligned, V = V_ref, u = u_prev, far from goal:
        // only the path term fires → 500 · 0.1² = 5.0.
        let q = east_query();
        let x = State::at_pose(q.point.x, q.point.y + 0.1, 0.0, 0.1);
        let u = ControlInput::new(40.0, 0.0);
        let c = stage_cost(&x, &u, &u, &q, &weights(), Vec2::new(8.0, 0.0));
        assert_relative_eq!(c, 5.0, epsilon = 1e-9);
    }

    #[test]
    fn goal_penalty_is_discontinuous_at_both_thresholds() {
        let q = east_query();
        let cw = weights();
        let goal = q.point;
        let u = ControlInput::new(40.0, 0.0);
        // velocity threshold: approach ε_vel from above and below at the goal
        let v_hi = cw.eps_goal_vel + 1e-9;
        let x_hi = State::at_pose(goal.x, goal.y, 0.0, v_hi);
        let x_lo = State::at_pose(goal.x, goal.y, 0.0, cw.eps_goal_vel - 1e-9);
        let c_hi = stage_cost(&x_hi, &u, &u, &q, &cw, goal);
        let c_lo = stage_cost(&x_lo, &u, &u, &q, &cw, goal);
        // both sides have ~the same smooth terms; the jump is the hard test
        let smooth_gap = (c_hi - c_lo).abs();
        assert!(smooth_gap < 1e-3, "no jump at the velocity threshold: {smooth_gap}");
        // position threshold: same speed, just inside vs just outside the ball
        let v = 0.1;
        let x_in = State::at_pose(goal.x + cw.eps_goal_pos - 1e-9, goal.y, 0.0, v);
        let x_out = State::at_pose(goal.x + cw.eps_goal_pos + 1e-6, goal.y, 0.0, v);
        let c_in = stage_cost(&x_in, &u, &u, &q, &cw, goal);
        let c_out = stage_cost(&x_out, &u, &u, &q, &cw, goal);
        let jump = c_in - c_out;
        let goal_term = cw.w_goal * (v - cw.eps_goal_vel).powi(2);
        assert!(jump > 0.9 * goal_term, "expected goal-term jump {goal_term}, got {jump}");
    }

    #[test]
    fn increment_only_cost_ignores_state_and_is_quadratic() {
        let q = east_query();
        let cw = CostWeights { w_v: 0.0, w_path: 0.0, w_align: 0.0, w_goal: 0.0, ..weights() };
        let goal = Vec2::new(8.0, 0.0);
        let u_prev = ControlInput::new(40.0, 0.0);
        let u = ControlInput::new(43.0, -4.0);
        let x1 = State::at_pose(1.0, 2.0, 0.4, 0.3);
        let x2 = State::at_pose(-5.0, 0.1, -2.0, 0.0);
        let c1 = stage_cost(&x1, &u, &u_prev, &q, &cw, goal);
        let c2 = stage_cost(&x2, &u, &u_prev, &q, &cw, goal);
        assert_eq!(c1, c2);
        assert_relative_eq!(c1, 0.05 * (9.0 + 16.0), epsilon = 1e-12);
        // doubling the increment quadruples the cost
        let u2 = ControlInput::new(46.0, -8.0);
        let c4 = stage_cost(&x1, &u2, &u_prev, &q, &cw, goal);
        assert_relative_eq!(c4, 4.0 * c1, epsilon = 1e-12);
    }

    #[test]
    fn cost_is_never_negative() {
        let q = east_query();
        let cw = weights();
        let goal = Vec2::new(8.0, 0.0);
        let mut st = 5u64;
        let mut unif = || {
            st = crate::rng::splitmix64(st);
            st as f64 / u64::MAX as f64
        };
        for _ in 0..5000 {
            let x = State::at_pose(
                unif() * 20.0 - 10.0,
                unif() * 20.0 - 10.0,
                unif() * 7.0,
                unif() * 2.0,
            );
            let u = ControlInput::new(unif() * 100.0, unif() * 130.0 - 65.0);
            let up = ControlInput::new(unif() * 100.0, unif() * 130.0 - 65.0);
            assert!(stage_cost(&x, &u, &up, &q, &cw, goal) >= 0.0);
        }
    }
}
