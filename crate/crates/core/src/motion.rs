//! Road- and ground-coordinate linear motion models, the affine map between
//! them, and the position observation model.
//!
//! Road coordinates are `(d, v)`: distance along a path and signed speed
//! along it. Ground coordinates interleave position and velocity per axis as
//! `(l1, v1, l2, v2)`.

use nalgebra::{Matrix2, Matrix2x4, Matrix4, Matrix4x2, Vector2, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{GeoPoint, PathCandidate};
use crate::numeric::{log_normal_pdf2, symmetrize};

/// Process and observation noise for one observation interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// On-road acceleration variance.
    pub sigma2_r: f64,
    /// Off-road acceleration variance, per axis.
    pub sigma2_g: f64,
    /// Observation variance, per axis.
    pub sigma2_y: f64,
    /// Time between observations.
    pub dt: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            sigma2_r: 6.25e-4,
            sigma2_g: 6.25e-4,
            sigma2_y: 100.0,
            dt: 30.0,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("sigma2_r", self.sigma2_r),
            ("sigma2_g", self.sigma2_g),
            ("sigma2_y", self.sigma2_y),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be non-negative, got {v}"
                )));
            }
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoadState {
    pub d: f64,
    pub v: f64,
}

impl RoadState {
    pub fn new(d: f64, v: f64) -> Self {
        Self { d, v }
    }

    pub fn to_vector(self) -> Vector2<f64> {
        Vector2::new(self.d, self.v)
    }

    pub fn from_vector(x: &Vector2<f64>) -> Self {
        Self { d: x[0], v: x[1] }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundState {
    pub l1: f64,
    pub v1: f64,
    pub l2: f64,
    pub v2: f64,
}

impl GroundState {
    pub fn new(l1: f64, v1: f64, l2: f64, v2: f64) -> Self {
        Self { l1, v1, l2, v2 }
    }

    pub fn at_rest(p: GeoPoint) -> Self {
        Self::new(p.x, 0.0, p.y, 0.0)
    }

    pub fn position(&self) -> GeoPoint {
        GeoPoint::new(self.l1, self.l2)
    }

    pub fn speed(&self) -> f64 {
        self.v1.hypot(self.v2)
    }

    pub fn to_vector(self) -> Vector4<f64> {
        Vector4::new(self.l1, self.v1, self.l2, self.v2)
    }

    pub fn from_vector(x: &Vector4<f64>) -> Self {
        Self::new(x[0], x[1], x[2], x[3])
    }
}

/// Gaussian belief over road coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RoadBelief {
    pub mean: Vector2<f64>,
    pub cov: Matrix2<f64>,
}

impl RoadBelief {
    pub fn new(mean: Vector2<f64>, cov: Matrix2<f64>) -> Self {
        Self { mean, cov }
    }

    pub fn point(x: RoadState) -> Self {
        Self::new(x.to_vector(), Matrix2::zeros())
    }

    /// The same belief expressed on the reverse-direction twin of an edge of
    /// the given length: `d ↦ length − d`, `v ↦ −v`.
    pub fn reversed(&self, length: f64) -> Self {
        Self::new(Vector2::new(length - self.mean[0], -self.mean[1]), self.cov)
    }

    /// Shifts the distance origin by `offset` (`d ↦ d − offset`).
    pub fn shifted(&self, offset: f64) -> Self {
        Self::new(Vector2::new(self.mean[0] - offset, self.mean[1]), self.cov)
    }

    pub fn is_valid(&self) -> bool {
        self.mean.iter().all(|v| v.is_finite()) && crate::numeric::is_valid_covariance(&self.cov)
    }
}

/// Gaussian belief over ground coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroundBelief {
    pub mean: Vector4<f64>,
    pub cov: Matrix4<f64>,
}

impl GroundBelief {
    pub fn new(mean: Vector4<f64>, cov: Matrix4<f64>) -> Self {
        Self { mean, cov }
    }

    pub fn point(x: GroundState) -> Self {
        Self::new(x.to_vector(), Matrix4::zeros())
    }

    pub fn position(&self) -> GeoPoint {
        GeoPoint::new(self.mean[0], self.mean[2])
    }

    pub fn state(&self) -> GroundState {
        GroundState::from_vector(&self.mean)
    }

    pub fn is_valid(&self) -> bool {
        self.mean.iter().all(|v| v.is_finite()) && crate::numeric::is_valid_covariance(&self.cov)
    }
}

/// `(G_r, Γ_r)` of the constant-velocity road model.
pub fn road_transition(dt: f64) -> (Matrix2<f64>, Vector2<f64>) {
    (
        Matrix2::new(1.0, dt, 0.0, 1.0),
        Vector2::new(0.5 * dt * dt, dt),
    )
}

/// `(G_g, Γ_g)` of the planar constant-velocity model.
pub fn ground_transition(dt: f64) -> (Matrix4<f64>, Matrix4x2<f64>) {
    let g = Matrix4::new(
        1.0, dt, 0.0, 0.0, //
        0.0, 1.0, 0.0, 0.0, //
        0.0, 0.0, 1.0, dt, //
        0.0, 0.0, 0.0, 1.0,
    );
    let h = 0.5 * dt * dt;
    let gamma = Matrix4x2::new(
        h, 0.0, //
        dt, 0.0, //
        0.0, h, //
        0.0, dt,
    );
    (g, gamma)
}

pub fn road_predict(belief: &RoadBelief, cfg: &NoiseConfig) -> RoadBelief {
    let (g, gamma) = road_transition(cfg.dt);
    let cov = g * belief.cov * g.transpose() + gamma * gamma.transpose() * cfg.sigma2_r;
    RoadBelief::new(g * belief.mean, symmetrize(&cov))
}

pub fn ground_predict(belief: &GroundBelief, cfg: &NoiseConfig) -> GroundBelief {
    let (g, gamma) = ground_transition(cfg.dt);
    let cov = g * belief.cov * g.transpose() + gamma * gamma.transpose() * cfg.sigma2_g;
    GroundBelief::new(g * belief.mean, symmetrize(&cov))
}

/// Affine map `x = P·(d, v) + s` from road to ground coordinates for one
/// straight edge at a given offset along a path.
///
/// The position column of `P` is the edge's unit direction, so `PᵀP = I₂`
/// and `d_alpha ↦ start`, `d_alpha + length ↦ end`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EdgeTransform {
    pub p: Matrix4x2<f64>,
    pub s: Vector4<f64>,
}

impl EdgeTransform {
    pub fn new(start: GeoPoint, end: GeoPoint, d_alpha: f64) -> Result<Self> {
        let len = start.distance(&end);
        if !(len > 0.0) {
            return Err(Error::InvalidParameter(
                "degenerate edge has zero length".into(),
            ));
        }
        let (ux, uy) = ((end.x - start.x) / len, (end.y - start.y) / len);
        let p = Matrix4x2::new(
            ux, 0.0, //
            0.0, ux, //
            uy, 0.0, //
            0.0, uy,
        );
        let s = Vector4::new(start.x - ux * d_alpha, 0.0, start.y - uy * d_alpha, 0.0);
        Ok(Self { p, s })
    }

    pub fn direction(&self) -> (f64, f64) {
        (self.p[(0, 0)], self.p[(2, 0)])
    }

    pub fn to_ground_state(&self, x: &RoadState) -> GroundState {
        GroundState::from_vector(&(self.p * x.to_vector() + self.s))
    }

    pub fn to_road_state(&self, x: &GroundState) -> RoadState {
        RoadState::from_vector(&(self.p.transpose() * (x.to_vector() - self.s)))
    }

    pub fn to_ground(&self, b: &RoadBelief) -> GroundBelief {
        GroundBelief::new(
            self.p * b.mean + self.s,
            symmetrize(&(self.p * b.cov * self.p.transpose())),
        )
    }

    pub fn to_road(&self, b: &GroundBelief) -> RoadBelief {
        RoadBelief::new(
            self.p.transpose() * (b.mean - self.s),
            symmetrize(&(self.p.transpose() * b.cov * self.p)),
        )
    }

    /// Projects a ground point onto the edge. With `preserve_speed` the road
    /// speed keeps the ground speed's magnitude (sign from the projection);
    /// otherwise only the along-edge velocity component survives.
    pub fn enter(&self, x: &GroundState, preserve_speed: bool) -> RoadState {
        let mut r = self.to_road_state(x);
        if preserve_speed {
            r.v = if r.v < 0.0 { -x.speed() } else { x.speed() };
        }
        r
    }
}

/// Transform for the edge at `index` on `path`.
pub fn edge_transform(path: &PathCandidate, index: usize) -> Result<EdgeTransform> {
    let seg = path.segment(index)?;
    let (d_alpha, _) = path.edge_distance_bounds(index)?;
    EdgeTransform::new(seg.start, seg.end, d_alpha)
}

/// Selects the position components of a ground state.
pub fn observation_matrix() -> Matrix2x4<f64> {
    Matrix2x4::new(
        1.0, 0.0, 0.0, 0.0, //
        0.0, 0.0, 1.0, 0.0,
    )
}

/// Predictive distribution of an observation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Predictive {
    pub e: Vector2<f64>,
    pub q: Matrix2<f64>,
    pub log_density: f64,
}

impl Predictive {
    pub fn density(&self) -> f64 {
        self.log_density.exp()
    }
}

/// Mean and covariance of `y` given a ground belief, without evaluating a density.
pub fn observation_moments(
    belief: &GroundBelief,
    cfg: &NoiseConfig,
) -> (Vector2<f64>, Matrix2<f64>) {
    let o = observation_matrix();
    let q = o * belief.cov * o.transpose() + Matrix2::identity() * cfg.sigma2_y;
    (o * belief.mean, symmetrize(&q))
}

pub fn observe_likelihood(
    belief: &GroundBelief,
    y: &GeoPoint,
    cfg: &NoiseConfig,
) -> Result<Predictive> {
    let (e, q) = observation_moments(belief, cfg);
    let log_density = log_normal_pdf2(&Vector2::new(y.x, y.y), &e, &q)?;
    Ok(Predictive { e, q, log_density })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn cfg(sigma2_r: f64, sigma2_g: f64, dt: f64) -> NoiseConfig {
        NoiseConfig {
            sigma2_r,
            sigma2_g,
            sigma2_y: 100.0,
            dt,
        }
    }

    #[test]
    fn road_predict_deterministic_kinematics() {
        let b = RoadBelief::new(Vector2::new(0.0, 1.0), Matrix2::zeros());
        let p = road_predict(&b, &cfg(1e-300, 1.0, 30.0));
        assert_relative_eq!(p.mean, Vector2::new(30.0, 1.0));
        assert!(p.cov.amax() < 1e-290);

        let still = RoadBelief::new(Vector2::new(5.0, 0.0), Matrix2::zeros());
        assert_eq!(
            road_predict(&still, &cfg(1e-300, 1.0, 7.0)).mean,
            Vector2::new(5.0, 0.0)
        );
    }

    #[test]
    fn road_predict_noise_matches_direct_product() {
        // Oracle: Γ σ² Γᵀ written out entrywise.
        let (s2, dt) = (6.25e-4, 30.0f64);
        let want = Matrix2::new(
            s2 * dt.powi(4) / 4.0,
            s2 * dt.powi(3) / 2.0,
            s2 * dt.powi(3) / 2.0,
            s2 * dt * dt,
        );
        let got = road_predict(
            &RoadBelief::point(RoadState::new(0.0, 0.0)),
            &cfg(s2, 1.0, dt),
        )
        .cov;
        assert_relative_eq!(got, want, epsilon = 1e-12);
        assert_relative_eq!(got[(0, 0)], 126.5625, epsilon = 1e-9);
        assert_relative_eq!(got[(0, 1)], 8.4375, epsilon = 1e-9);
        assert_relative_eq!(got[(1, 1)], 0.5625, epsilon = 1e-12);
    }

    #[test]
    fn ground_predict_examples() {
        let c = cfg(1.0, 1e-300, 1.0);
        let still = GroundBelief::point(GroundState::new(4.0, 0.0, -2.0, 0.0));
        assert_eq!(ground_predict(&still, &c).mean, still.mean);
        let moving = GroundBelief::point(GroundState::new(0.0, 1.0, 0.0, 2.0));
        assert_eq!(
            ground_predict(&moving, &c).mean,
            Vector4::new(1.0, 1.0, 2.0, 2.0)
        );
    }

    #[test]
    fn ground_axis_blocks_equal_road_formula() {
        let (s2, dt) = (0.3, 2.5);
        let c = cfg(s2, s2, dt);
        let road = road_predict(&RoadBelief::point(RoadState::new(0.0, 0.0)), &c).cov;
        let ground = ground_predict(
            &GroundBelief::point(GroundState::new(0.0, 0.0, 0.0, 0.0)),
            &c,
        )
        .cov;
        for (i, j) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            assert_relative_eq!(ground[(i, j)], road[(i, j)], epsilon = 1e-12);
            assert_relative_eq!(ground[(i + 2, j + 2)], road[(i, j)], epsilon = 1e-12);
            assert_eq!(ground[(i, j + 2)], 0.0);
        }
    }

    #[test]
    fn transform_examples() {
        let t = EdgeTransform::new(GeoPoint::new(0.0, 0.0), GeoPoint::new(10.0, 0.0), 0.0).unwrap();
        assert_eq!(
            t.to_ground_state(&RoadState::new(5.0, 2.0)),
            GroundState::new(5.0, 2.0, 0.0, 0.0)
        );
        assert_eq!(
            t.to_ground_state(&RoadState::new(0.0, 0.0)).position(),
            GeoPoint::new(0.0, 0.0)
        );

        let shifted =
            EdgeTransform::new(GeoPoint::new(0.0, 0.0), GeoPoint::new(10.0, 0.0), 7.0).unwrap();
        assert_eq!(
            shifted
                .to_ground_state(&RoadState::new(7.0, 0.0))
                .position(),
            GeoPoint::new(0.0, 0.0)
        );
        assert_eq!(
            shifted
                .to_ground_state(&RoadState::new(17.0, 0.0))
                .position(),
            GeoPoint::new(10.0, 0.0)
        );

        let diag =
            EdgeTransform::new(GeoPoint::new(0.0, 0.0), GeoPoint::new(3.0, 4.0), 0.0).unwrap();
        assert_relative_eq!(
            diag.p.column(0).into_owned(),
            Vector4::new(0.6, 0.0, 0.8, 0.0)
        );
        let g = diag.to_ground_state(&RoadState::new(5.0, 1.0)).to_vector();
        assert_relative_eq!(g, Vector4::new(3.0, 0.6, 4.0, 0.8), epsilon = 1e-12);

        assert!(EdgeTransform::new(GeoPoint::new(1.0, 1.0), GeoPoint::new(1.0, 1.0), 0.0).is_err());
    }

    #[test]
    fn axis_aligned_cov_has_no_cross_axis_terms() {
        let t = EdgeTransform::new(GeoPoint::new(0.0, 0.0), GeoPoint::new(10.0, 0.0), 0.0).unwrap();
        let g = t.to_ground(&RoadBelief::new(Vector2::zeros(), Matrix2::identity()));
        for i in 0..4 {
            assert_eq!(g.cov[(i, 2)], 0.0);
            assert_eq!(g.cov[(2, i)], 0.0);
            assert_eq!(g.cov[(i, 3)], 0.0);
        }
        assert_eq!(g.cov[(0, 0)], 1.0);
    }

    #[test]
    fn to_road_matches_orthogonal_projection() {
        let t = EdgeTransform::new(GeoPoint::new(1.0, 1.0), GeoPoint::new(4.0, 5.0), 2.0).unwrap();
        // On the edge: halfway along a 5-unit edge at path offset 2.
        let on = GroundState::new(2.5, 0.0, 3.0, 0.0);
        assert_relative_eq!(t.to_road_state(&on).d, 4.5, epsilon = 1e-12);
        // Off the edge: project (x − start) onto the unit direction by hand.
        let p = GeoPoint::new(-3.0, 7.0);
        let along = ((p.x - 1.0) * 3.0 + (p.y - 1.0) * 4.0) / 5.0;
        let r = t.to_road_state(&GroundState::new(p.x, 6.0, p.y, -2.0));
        assert_relative_eq!(r.d, 2.0 + along, epsilon = 1e-12);
        assert_relative_eq!(r.v, (6.0 * 3.0 - 2.0 * 4.0) / 5.0, epsilon = 1e-12);
    }

    #[test]
    fn enter_preserves_speed_when_asked() {
        let t = EdgeTransform::new(GeoPoint::new(0.0, 0.0), GeoPoint::new(10.0, 0.0), 0.0).unwrap();
        let x = GroundState::new(3.0, -3.0, 1.0, 4.0);
        assert_relative_eq!(t.enter(&x, false).v, -3.0);
        assert_relative_eq!(t.enter(&x, true).v, -5.0);
        assert_relative_eq!(t.enter(&GroundState::new(3.0, 3.0, 1.0, 4.0), true).v, 5.0);
    }

    #[test]
    fn observation_examples() {
        let c = cfg(1.0, 1.0, 1.0);
        let at = GroundBelief::point(GroundState::new(3.0, 9.0, -4.0, 9.0));
        let peak = observe_likelihood(&at, &GeoPoint::new(3.0, -4.0), &c).unwrap();
        assert_relative_eq!(peak.density(), 1.0 / (2.0 * PI * 100.0), epsilon = 1e-15);
        assert_eq!(peak.e, Vector2::new(3.0, -4.0));

        let off = observe_likelihood(&at, &GeoPoint::new(13.0, -4.0), &c).unwrap();
        assert_relative_eq!(off.log_density, peak.log_density - 0.5, epsilon = 1e-12);

        let o = observation_matrix();
        assert_eq!(o * Vector4::new(1.0, 2.0, 3.0, 4.0), Vector2::new(1.0, 3.0));
    }

    #[test]
    fn corrupt_covariance_is_reported() {
        let mut b = GroundBelief::point(GroundState::new(0.0, 0.0, 0.0, 0.0));
        b.cov[(0, 0)] = -1e6;
        let c = cfg(1.0, 1.0, 1.0);
        assert!(matches!(
            observe_likelihood(&b, &GeoPoint::new(0.0, 0.0), &c),
            Err(Error::SingularCovariance(_))
        ));
    }

    #[test]
    fn projection_commutes_with_prediction_on_straight_edge() {
        let t = EdgeTransform::new(GeoPoint::new(2.0, -1.0), GeoPoint::new(8.0, 7.0), 3.0).unwrap();
        let c = cfg(1e-300, 1e-300, 4.0);
        let x = RoadBelief::point(RoadState::new(5.0, 1.5));
        let a = t.to_ground(&road_predict(&x, &c));
        let b = ground_predict(&t.to_ground(&x), &c);
        assert_relative_eq!(a.mean, b.mean, epsilon = 1e-12);
    }

    fn random_edge() -> impl Strategy<Value = (GeoPoint, GeoPoint, f64)> {
        (
            -1e3..1e3f64,
            -1e3..1e3f64,
            0.0..2.0 * PI,
            0.1..500.0f64,
            0.0..1e3f64,
        )
            .prop_map(|(x, y, theta, len, off)| {
                (
                    GeoPoint::new(x, y),
                    GeoPoint::new(x + len * theta.cos(), y + len * theta.sin()),
                    off,
                )
            })
    }

    proptest! {
        #[test]
        fn transform_round_trip((a, b, off) in random_edge(), d in -1e3..1e3f64, v in -50.0..50.0f64,
                                c00 in 0.0..100.0f64, c11 in 0.0..10.0f64, rho in -0.99..0.99f64) {
            let t = EdgeTransform::new(a, b, off).unwrap();
            let ptp = t.p.transpose() * t.p;
            prop_assert!((ptp - Matrix2::identity()).amax() < 1e-9);
            let start = t.to_ground_state(&RoadState::new(off, 0.0)).position();
            prop_assert!(start.distance(&a) < 1e-9);
            let end = t.to_ground_state(&RoadState::new(off + a.distance(&b), 0.0)).position();
            prop_assert!(end.distance(&b) < 1e-9);

            let c01 = rho * (c00 * c11).sqrt();
            let belief = RoadBelief::new(Vector2::new(d, v), Matrix2::new(c00, c01, c01, c11));
            let back = t.to_road(&t.to_ground(&belief));
            prop_assert!((back.mean - belief.mean).amax() <= 1e-10 * (1.0 + belief.mean.amax()));
            prop_assert!((back.cov - belief.cov).amax() <= 1e-10 * (1.0 + belief.cov.amax()));
        }

        #[test]
        fn predictions_preserve_psd(c00 in 0.0..100.0f64, c11 in 0.0..10.0f64, rho in -1.0..1.0f64,
                                    dt in 0.1..60.0f64, s2 in 1e-6..1.0f64) {
            let c01 = rho * (c00 * c11).sqrt();
            let b = RoadBelief::new(Vector2::zeros(), Matrix2::new(c00, c01, c01, c11));
            let c = cfg(s2, s2, dt);
            prop_assert!(road_predict(&b, &c).is_valid());
            let t = EdgeTransform::new(GeoPoint::new(0.0, 0.0), GeoPoint::new(1.0, 2.0), 0.0).unwrap();
            prop_assert!(ground_predict(&t.to_ground(&b), &c).is_valid());
        }
    }
}
