//! Reference-path geometry: cubic-Hermite construction, discrete
//! nearest-point queries, and the three signed tracking errors the PID law
//! consumes (speed, lateral, angular).
//!
//! The path is a single Hermite segment sampled at `M` uniform parameter
//! values. Endpoint tangents point along the start/goal headings with
//! magnitude equal to the straight-line endpoint distance, which degenerates
//! to an exact straight line when the headings are collinear with the chord.
//!
//! Nearest-point lookup is the discrete argmin over the `M` sampled points
//! (ties to the smallest index) — no continuous refinement, keeping the cost
//! landscape exactly as the planners see it.

use serde::{Deserialize, Serialize};

use crate::dynamics::State;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist_sq(self, o: Vec2) -> f64 {
        let dx = self.x - o.x;
        let dy = self.y - o.y;
        dx * dx + dy * dy
    }

    pub fn sub(self, o: Vec2) -> Vec2 {
        Vec2 { x: self.x - o.x, y: self.y - o.y }
    }
}

/// Planar pose: position plus heading (radians).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub psi: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, psi: f64) -> Self {
        Pose { x, y, psi }
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }
}

/// Wrap an angle to (−π, π].
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut r = a.rem_euclid(two_pi); // [0, 2π)
    if r > std::f64::consts::PI {
        r -= two_pi;
    }
    r
}

/// Index half-width of the hinted nearest-point scan.
const HINT_WINDOW: usize = 64;
/// Minimum index margin between the window argmin and a window edge for the
/// windowed result to be provably global.
const HINT_MARGIN: usize = 32;

/// Discretized reference path with per-point unit tangents, left unit normals,
/// and tangent angles. Immutable after construction.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReferencePath {
    pub points: Vec<Vec2>,
    pub tangents: Vec<Vec2>,
    pub normals: Vec<Vec2>,
    pub psi: Vec<f64>,
    /// Minimum distance between any two points at least [`HINT_MARGIN`]
    /// indices apart; lets the windowed query certify global optimality.
    separation: f64,
}

/// Result of a nearest-point query: index, point, and its stored frame.
#[derive(Clone, Copy, Debug)]
pub struct PathQuery {
    pub k: usize,
    pub point: Vec2,
    pub tangent: Vec2,
    pub normal: Vec2,
    pub psi: f64,
}

/// Cubic Hermite basis evaluation: position and parameter-derivative at `t`.
fn hermite_eval(p0: Vec2, m0: Vec2, p1: Vec2, m1: Vec2, t: f64) -> (Vec2, Vec2) {
    let t2 = t * t;
    let t3 = t2 * t;
    let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
    let h10 = t3 - 2.0 * t2 + t;
    let h01 = -2.0 * t3 + 3.0 * t2;
    let h11 = t3 - t2;
    let d00 = 6.0 * t2 - 6.0 * t;
    let d10 = 3.0 * t2 - 4.0 * t + 1.0;
    let d01 = -6.0 * t2 + 6.0 * t;
    let d11 = 3.0 * t2 - 2.0 * t;
    let p = Vec2::new(
        h00 * p0.x + h10 * m0.x + h01 * p1.x + h11 * m1.x,
        h00 * p0.y + h10 * m0.y + h01 * p1.y + h11 * m1.y,
    );
    let d = Vec2::new(
        d00 * p0.x + d10 * m0.x + d01 * p1.x + d11 * m1.x,
        d00 * p0.y + d10 * m0.y + d01 * p1.y + d11 * m1.y,
    );
    (p, d)
}

/// Build the reference path from start to goal pose, sampled at `m` points.
pub fn build_hermite_path(start: Pose, goal: Pose, m: usize) -> Result<ReferencePath> {
    if m < 2 {
        return Err(Error::Config(format!("path needs at least 2 points, got {m}")));
    }
    let p0 = start.position();
    let p1 = goal.position();
    let chord = p1.sub(p0).norm();
    if chord == 0.0 {
        return Err(Error::Config("zero-length path: start and goal coincide".into()));
    }
    let m0 = Vec2::new(chord * start.psi.cos(), chord * start.psi.sin());
    let m1 = Vec2::new(chord * goal.psi.cos(), chord * goal.psi.sin());

    let mut points = Vec::with_capacity(m);
    let mut tangents = Vec::with_capacity(m);
    let mut normals = Vec::with_capacity(m);
    let mut psi = Vec::with_capacity(m);
    for k in 0..m {
        let t = k as f64 / (m - 1) as f64;
        let (p, d) = hermite_eval(p0, m0, p1, m1, t);
        let dn = d.norm();
        if dn == 0.0 {
            return Err(Error::Config(format!(
                "path tangent vanishes at sample {k}; start/goal headings fold the spline back"
            )));
        }
        let tau = Vec2::new(d.x / dn, d.y / dn);
        points.push(p);
        tangents.push(tau);
        normals.push(Vec2::new(-tau.y, tau.x));
        psi.push(tau.y.atan2(tau.x));
    }
    for k in 1..m {
        if points[k] == points[k - 1] {
            return Err(Error::Config(format!("path points {k} and {} coincide", k - 1)));
        }
        // A cusp between two samples reverses the travel direction even when
        // no sampled tangent lands exactly on the zero.
        if tangents[k].dot(tangents[k - 1]) <= 0.0 {
            return Err(Error::Config(format!(
                "path direction reverses between samples {} and {k}; start/goal headings fold \
                 the spline back",
                k - 1
            )));
        }
    }

    // One-time O(M²) sweep for the windowed-query separation bound.
    let mut sep_sq = f64::INFINITY;
    for i in 0..m {
        for j in (i + HINT_MARGIN)..m {
            let d = points[i].dist_sq(points[j]);
            if d < sep_sq {
                sep_sq = d;
            }
        }
    }
    let separation = if sep_sq.is_finite() { sep_sq.sqrt() } else { 0.0 };

    Ok(ReferencePath { points, tangents, normals, psi, separation })
}

impl ReferencePath {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn goal(&self) -> Vec2 {
        *self.points.last().expect("path is nonempty")
    }

    fn query_at(&self, k: usize) -> PathQuery {
        PathQuery {
            k,
            point: self.points[k],
            tangent: self.tangents[k],
            normal: self.normals[k],
            psi: self.psi[k],
        }
    }

    fn argmin_in(&self, pos: Vec2, lo: usize, hi: usize) -> (usize, f64) {
        let mut best = f64::INFINITY;
        let mut best_k = lo;
        for k in lo..=hi {
            let d = pos.dist_sq(self.points[k]);
            if d < best {
                best = d;
                best_k = k;
            }
        }
        (best_k, best)
    }

    /// Exhaustive nearest-point query; ties broken by smallest index.
    pub fn nearest_point(&self, pos: Vec2) -> PathQuery {
        let (k, _) = self.argmin_in(pos, 0, self.len() - 1);
        self.query_at(k)
    }

    /// Nearest-point query that scans only a ±64-index window around `hint`,
    /// falling back to the full scan unless the windowed result is provably
    /// the global one.
    ///
    /// Certificate: let `i*` be the window argmin at distance `d*`. If `i*`
    /// sits at least [`HINT_MARGIN`] indices from every non-boundary window
    /// edge, each point outside the window is ≥ `HINT_MARGIN` indices from
    /// `i*`, hence at least `separation − d*` from `pos` by the triangle
    /// inequality. When `2·d* < separation` every outside point is strictly
    /// farther than `d*`, so the windowed argmin — including its
    /// smallest-index tie-break — coincides with the full scan's.
    pub fn nearest_from_hint(&self, pos: Vec2, hint: usize) -> PathQuery {
        let last = self.len() - 1;
        let hint = hint.min(last);
        let lo = hint.saturating_sub(HINT_WINDOW);
        let hi = (hint + HINT_WINDOW).min(last);
        let (k, d_sq) = self.argmin_in(pos, lo, hi);
        let left_ok = lo == 0 || k - lo >= HINT_MARGIN;
        let right_ok = hi == last || hi - k >= HINT_MARGIN;
        if left_ok && right_ok && 2.0 * d_sq.sqrt() < 0.999 * self.separation {
            return self.query_at(k);
        }
        self.nearest_point(pos)
    }

    /// CSV export: `k,x,y,tx,ty,psi_star`.
    pub fn export_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "k,x,y,tx,ty,psi_star")?;
        for k in 0..self.len() {
            writeln!(
                w,
                "{k},{:?},{:?},{:?},{:?},{:?}",
                self.points[k].x, self.points[k].y, self.tangents[k].x, self.tangents[k].y,
                self.psi[k]
            )?;
        }
        Ok(())
    }
}

/// The three signed tracking errors, in the order the gain vector expects.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PathErrors {
    /// V_ref − V: positive when the vehicle is too slow.
    pub e_speed: f64,
    /// n*ᵀ(p − p*): positive when the vehicle is left of the path.
    pub e_lat: f64,
    /// wrap(ψ − ψ*): positive when the heading points left of the tangent.
    pub e_ang: f64,
}

/// Errors against an already-computed nearest-point query.
pub fn pid_errors_at(q: &PathQuery, x: &State, v_ref: f64) -> PathErrors {
    let pos = Vec2::new(x.x, x.y);
    let offset = pos.sub(q.point);
    PathErrors {
        e_speed: v_ref - x.speed(),
        e_lat: q.normal.dot(offset),
        e_ang: wrap_angle(x.yaw() - q.psi),
    }
}

/// Convenience wrapper: full nearest-point query, then the three errors.
pub fn pid_errors(path: &ReferencePath, x: &State, v_ref: f64) -> PathErrors {
    let q = path.nearest_point(Vec2::new(x.x, x.y));
    pid_errors_at(&q, x, v_ref)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::splitmix64;
    use approx::assert_relative_eq;

    fn east_path(length: f64, m: usize) -> ReferencePath {
        build_hermite_path(Pose::new(0.0, 0.0, 0.0), Pose::new(length, 0.0, 0.0), m).unwrap()
    }

    #[test]
    fn straight_path_has_identical_tangents() {
        let p = east_path(8.0, 800);
        for k in 0..p.len() {
            assert_eq!(p.tangents[k], Vec2::new(1.0, 0.0));
            assert_eq!(p.normals[k], Vec2::new(0.0, 1.0));
            assert_eq!(p.psi[k], 0.0);
        }
    }

    #[test]
    fn rotated_straight_path_tangents_match_heading() {
        let psi = 0.7_f64;
        let p = build_hermite_path(
            Pose::new(1.0, -2.0, psi),
            Pose::new(1.0 + 5.0 * psi.cos(), -2.0 + 5.0 * psi.sin(), psi),
            200,
        )
        .unwrap();
        for k in 0..p.len() {
            assert_relative_eq!(p.psi[k], psi, epsilon = 1e-12);
            assert_relative_eq!(p.tangents[k].norm(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn endpoints_interpolate_exactly() {
        let start = Pose::new(0.25, -1.5, 0.3);
        let goal = Pose::new(3.0, 3.0, std::f64::consts::FRAC_PI_2);
        let p = build_hermite_path(start, goal, 800).unwrap();
        assert_eq!(p.points[0], start.position());
        assert_eq!(*p.points.last().unwrap(), goal.position());
        assert_eq!(p.goal(), goal.position());
    }

    #[test]
    fn quarter_turn_path_is_smooth() {
        // Chords should stay nearly tangent-aligned: the normal component of
        // each chord is O(spacing²·curvature), far below the spacing itself.
        let p = build_hermite_path(
            Pose::new(0.0, 0.0, 0.0),
            Pose::new(3.0, 3.0, std::f64::consts::FRAC_PI_2),
            800,
        )
        .unwrap();
        let mut worst_ratio: f64 = 0.0;
        for k in 0..p.len() - 1 {
            let chord = p.points[k + 1].sub(p.points[k]);
            let off = p.normals[k].dot(chord).abs();
            worst_ratio = worst_ratio.max(off / chord.norm());
        }
        assert!(worst_ratio < 0.01, "normal leakage ratio {worst_ratio}");
        // unit frames everywhere
        for k in 0..p.len() {
            assert_relative_eq!(p.tangents[k].norm(), 1.0, epsilon = 1e-12);
            assert_relative_eq!(p.normals[k].norm(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn construction_rejects_degenerate_requests() {
        assert!(build_hermite_path(Pose::new(0.0, 0.0, 0.0), Pose::new(1.0, 0.0, 0.0), 1).is_err());
        assert!(build_hermite_path(Pose::new(2.0, 2.0, 0.0), Pose::new(2.0, 2.0, 1.0), 10).is_err());
        // heading folded straight back along the chord collapses the tangent
        let folded = build_hermite_path(
            Pose::new(0.0, 0.0, std::f64::consts::PI),
            Pose::new(1.0, 0.0, std::f64::consts::PI),
            50,
        );
        assert!(folded.is_err());
    }

    #[test]
    fn nearest_point_basics() {
        let p = east_path(10.0, 101); // points at exact 0.1 multiples
        let q = p.nearest_point(p.points[37]);
        assert_eq!(q.k, 37);
        assert_eq!(p.points[37].dist_sq(q.point), 0.0);
        // equidistant between indices 3 and 4 → smaller index wins
        let mid = Vec2::new((p.points[3].x + p.points[4].x) / 2.0, 0.5);
        assert_eq!(p.nearest_point(mid).k, 3);
    }

    #[test]
    fn nearest_point_never_beaten_by_any_sample() {
        let p = build_hermite_path(
            Pose::new(0.0, 0.0, 0.0),
            Pose::new(3.0, 3.0, std::f64::consts::FRAC_PI_2),
            800,
        )
        .unwrap();
        let mut st = 99u64;
        let mut unif = || {
            st = splitmix64(st);
            st as f64 / u64::MAX as f64
        };
        for _ in 0..200 {
            let pos = Vec2::new(unif() * 8.0 - 2.0, unif() * 8.0 - 2.0);
            let q = p.nearest_point(pos);
            let d = pos.dist_sq(q.point);
            for k in 0..p.len() {
                assert!(d <= pos.dist_sq(p.points[k]));
            }
        }
    }

    #[test]
    fn hinted_query_matches_full_scan() {
        let p = build_hermite_path(
            Pose::new(0.0, 0.0, 0.0),
            Pose::new(3.0, 3.0, std::f64::consts::FRAC_PI_2),
            800,
        )
        .unwrap();
        let mut st = 7u64;
        let mut unif = || {
            st = splitmix64(st);
            st as f64 / u64::MAX as f64
        };
        // near-path positions with good hints (the planner's regime), plus
        // far-off positions and garbage hints to force the fallback
        for trial in 0..2000 {
            let k_true = (unif() * 799.0) as usize;
            let spread = if trial % 3 == 0 { 3.0 } else { 0.08 };
            let pos = Vec2::new(
                p.points[k_true].x + (unif() - 0.5) * spread,
                p.points[k_true].y + (unif() - 0.5) * spread,
            );
            let hint = if trial % 5 == 0 {
                (unif() * 799.0) as usize
            } else {
                (k_true as i64 + ((unif() * 20.0) as i64 - 10)).clamp(0, 799) as usize
            };
            let full = p.nearest_point(pos);
            let fast = p.nearest_from_hint(pos, hint);
            assert_eq!(full.k, fast.k, "trial {trial} hint {hint}");
        }
    }

    #[test]
    fn errors_vanish_on_path_at_reference_speed() {
        let p = east_path(8.0, 800);
        let x = State::at_pose(2.0, 0.0, 0.0, 0.1);
        let e = pid_errors(&p, &x, 0.1);
        assert_eq!(e.e_speed, 0.0);
        assert_eq!(e.e_lat, 0.0);
        assert_eq!(e.e_ang, 0.0);
    }

    #[test]
    fn lateral_error_is_positive_left_of_travel() {
        let p = east_path(8.0, 800);
        // 0.5 m to the left (+Y) of an east-bound path
        let x = State::at_pose(3.0, 0.5, 0.0, 0.1);
        let e = pid_errors(&p, &x, 0.1);
        assert_relative_eq!(e.e_lat, 0.5, epsilon = 1e-12);
        // mirrored across the tangent line → sign flips
        let xm = State::at_pose(3.0, -0.5, 0.0, 0.1);
        let em = pid_errors(&p, &xm, 0.1);
        assert_relative_eq!(em.e_lat, -0.5, epsilon = 1e-12);
    }

    #[test]
    fn angular_error_wraps() {
        let p = east_path(8.0, 800); // ψ* = 0 everywhere
        // heading stored as (s, c): full turn maps to the same state
        let x = State::at_pose(1.0, 0.0, 2.0 * std::f64::consts::PI, 0.1);
        let e = pid_errors(&p, &x, 0.1);
        assert!(e.e_ang.abs() < 1e-12);
        // wrap-around arithmetic: ψ = −3 against ψ* = 3 → difference ≈ 0.283
        assert_relative_eq!(wrap_angle(-3.0 - 3.0), -6.0 + 2.0 * std::f64::consts::PI);
        assert_eq!(wrap_angle(std::f64::consts::PI), std::f64::consts::PI);
        assert_eq!(wrap_angle(-std::f64::consts::PI), std::f64::consts::PI);
    }

    #[test]
    fn angular_error_stays_in_half_open_interval() {
        let mut st = 11u64;
        for _ in 0..10_000 {
            st = splitmix64(st);
            let a = (st as f64 / u64::MAX as f64 - 0.5) * 40.0;
            let w = wrap_angle(a);
            assert!(w > -std::f64::consts::PI && w <= std::f64::consts::PI, "{a} -> {w}");
        }
    }
}
