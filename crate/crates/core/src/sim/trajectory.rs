//! Continuous groundtruth trajectories with analytic derivatives.

use std::f64::consts::TAU;

use crate::error::SimError;
use crate::so3::{euler_zyx, Mat3, Quaternion, Vec3};

/// Pose and derivatives at one instant, all in the VIO frame `V` except the
/// angular rate, which is expressed in the body frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Kinematics {
    /// Body-to-`V` rotation.
    pub w: Mat3,
    pub p: Vec3,
    pub v: Vec3,
    pub a: Vec3,
    pub omega: Vec3,
}

impl Kinematics {
    /// JPL quaternion `q_VI` (maps `V` vectors into the body frame).
    pub fn q_vi(&self) -> Quaternion {
        Quaternion::from_rotation(&self.w.transpose())
    }
}

/// Elliptic horizontal loop with vertical oscillation, heading-aligned yaw
/// and small roll/pitch oscillations. Starts at the origin.
#[derive(Clone, Debug, PartialEq)]
pub struct Sinusoid3d {
    pub amplitude: Vec3,
    /// Hz per axis; `x` and `y` share a frequency so the horizontal speed
    /// never vanishes.
    pub frequency: Vec3,
    pub roll_amplitude: f64,
    pub pitch_amplitude: f64,
    pub attitude_frequency: f64,
    pub duration: f64,
}

impl Default for Sinusoid3d {
    fn default() -> Self {
        Self {
            amplitude: Vec3::new(5.0, 4.0, 1.0),
            frequency: Vec3::new(0.05, 0.05, 0.1),
            roll_amplitude: 0.1,
            pitch_amplitude: 0.08,
            attitude_frequency: 0.13,
            duration: 100.0,
        }
    }
}

impl Sinusoid3d {
    fn translation(&self, s: f64) -> (Vec3, Vec3, Vec3) {
        let a = self.amplitude;
        let w = self.frequency * TAU;
        let (sx, cx) = (w.x * s).sin_cos();
        let (sy, cy) = (w.y * s).sin_cos();
        let (sz, cz) = (w.z * s).sin_cos();
        let p = Vec3::new(a.x * sx, a.y * (1.0 - cy), a.z * sz);
        let v = Vec3::new(a.x * w.x * cx, a.y * w.y * sy, a.z * w.z * cz);
        let acc = Vec3::new(-a.x * w.x * w.x * sx, a.y * w.y * w.y * cy, -a.z * w.z * w.z * sz);
        (p, v, acc)
    }

    fn evaluate(&self, s: f64) -> Kinematics {
        let (p, v, a) = self.translation(s);
        let wa = self.attitude_frequency * TAU;
        let roll = self.roll_amplitude * (wa * s).sin();
        let roll_rate = self.roll_amplitude * wa * (wa * s).cos();
        let pitch = self.pitch_amplitude * (1.3 * wa * s).sin();
        let pitch_rate = self.pitch_amplitude * 1.3 * wa * (1.3 * wa * s).cos();
        heading_kinematics(p, v, a, roll, roll_rate, pitch, pitch_rate)
    }
}

/// Yaw follows the horizontal velocity direction.
fn heading_kinematics(p: Vec3, v: Vec3, a: Vec3, roll: f64, roll_rate: f64, pitch: f64, pitch_rate: f64) -> Kinematics {
    let h2 = v.x * v.x + v.y * v.y;
    let yaw = v.y.atan2(v.x);
    let yaw_rate = (v.x * a.y - v.y * a.x) / h2;
    Kinematics {
        w: euler_zyx(yaw, pitch, roll),
        p,
        v,
        a,
        omega: body_rate(yaw_rate, pitch, pitch_rate, roll, roll_rate),
    }
}

/// Body angular rate of `Rz(yaw) Ry(pitch) Rx(roll)`.
fn body_rate(yaw_rate: f64, pitch: f64, pitch_rate: f64, roll: f64, roll_rate: f64) -> Vec3 {
    let (sr, cr) = roll.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    Vec3::new(
        roll_rate - yaw_rate * sp,
        pitch_rate * cr + yaw_rate * cp * sr,
        yaw_rate * cp * cr - pitch_rate * sr,
    )
}

/// Natural cubic spline through timed waypoints, heading-aligned yaw, level
/// attitude.
#[derive(Clone, Debug, PartialEq)]
pub struct WaypointSpline {
    knots: Vec<f64>,
    points: Vec<Vec3>,
    /// Second derivatives at the knots.
    moments: Vec<Vec3>,
}

impl WaypointSpline {
    pub fn new(knots: Vec<f64>, points: Vec<Vec3>) -> Result<Self, SimError> {
        if knots.len() != points.len() || knots.len() < 3 {
            return Err(SimError::InvalidTrajectory(
                "need at least three timed waypoints".into(),
            ));
        }
        if knots.windows(2).any(|w| w[1] <= w[0]) || knots[0] != 0.0 {
            return Err(SimError::InvalidTrajectory(
                "knot times must start at 0 and increase".into(),
            ));
        }
        let moments = natural_moments(&knots, &points);
        let spline = Self { knots, points, moments };
        let duration = spline.duration();
        let steps = (duration * 20.0).ceil() as usize;
        for k in 0..=steps {
            let s = duration * k as f64 / steps as f64;
            let (_, v, _) = spline.translation(s);
            if v.x.hypot(v.y) < 0.1 {
                return Err(SimError::InvalidTrajectory(format!(
                    "horizontal speed vanishes near t = {s:.2}"
                )));
            }
        }
        Ok(spline)
    }

    pub fn duration(&self) -> f64 {
        *self.knots.last().expect("validated non-empty")
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    fn translation(&self, s: f64) -> (Vec3, Vec3, Vec3) {
        let n = self.knots.len();
        let i = match self.knots.partition_point(|&k| k <= s) {
            0 => 0,
            k if k >= n => n - 2,
            k => k - 1,
        };
        let (t0, t1) = (self.knots[i], self.knots[i + 1]);
        let h = t1 - t0;
        let (m0, m1) = (self.moments[i], self.moments[i + 1]);
        let (y0, y1) = (self.points[i], self.points[i + 1]);
        let a = (t1 - s) / h;
        let b = (s - t0) / h;
        let p = a * y0 + b * y1 + ((a * a * a - a) * m0 + (b * b * b - b) * m1) * (h * h / 6.0);
        let v = (y1 - y0) / h + ((1.0 - 3.0 * a * a) * m0 + (3.0 * b * b - 1.0) * m1) * (h / 6.0);
        let acc = a * m0 + b * m1;
        (p, v, acc)
    }

    fn evaluate(&self, s: f64) -> Kinematics {
        let (p, v, a) = self.translation(s);
        heading_kinematics(p, v, a, 0.0, 0.0, 0.0, 0.0)
    }

    /// Rounded loop of roughly 800 m driven at about 8 m/s.
    pub fn vehicle_loop(duration: f64) -> Self {
        let route = [
            (0.0, 0.0),
            (80.0, 0.0),
            (155.0, 12.0),
            (200.0, 60.0),
            (195.0, 140.0),
            (130.0, 175.0),
            (50.0, 160.0),
            (5.0, 105.0),
            (-10.0, 45.0),
            (20.0, 5.0),
            (100.0, 2.0),
        ];
        let dt = duration / (route.len() - 1) as f64;
        let knots = (0..route.len()).map(|i| i as f64 * dt).collect();
        let points = route.iter().map(|&(x, y)| Vec3::new(x, y, 0.0)).collect();
        Self::new(knots, points).expect("preset route is valid")
    }
}

fn natural_moments(knots: &[f64], points: &[Vec3]) -> Vec<Vec3> {
    let n = knots.len();
    let mut m = vec![Vec3::zeros(); n];
    if n < 3 {
        return m;
    }
    // Thomas algorithm on the interior equations.
    let h: Vec<f64> = knots.windows(2).map(|w| w[1] - w[0]).collect();
    let mut diag = vec![0.0; n];
    let mut rhs = vec![Vec3::zeros(); n];
    let mut upper = vec![0.0; n];
    for i in 1..n - 1 {
        diag[i] = 2.0 * (h[i - 1] + h[i]);
        upper[i] = h[i];
        rhs[i] = 6.0 * ((points[i + 1] - points[i]) / h[i] - (points[i] - points[i - 1]) / h[i - 1]);
    }
    for i in 2..n - 1 {
        let f = h[i - 1] / diag[i - 1];
        diag[i] -= f * upper[i - 1];
        let prev = rhs[i - 1];
        rhs[i] -= f * prev;
    }
    for i in (1..n - 1).rev() {
        let next = m[i + 1];
        m[i] = (rhs[i] - upper[i] * next) / diag[i];
    }
    m
}

/// Interval in which the platform is brought to rest.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hold {
    /// Start of the stationary interval (composite time).
    pub start: f64,
    pub duration: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum TrajectoryModel {
    Sinusoid3d(Sinusoid3d),
    WaypointSpline(WaypointSpline),
    /// A base trajectory slowed to rest over `ramp` seconds before each hold
    /// and brought back to speed over `ramp` seconds after it.
    StationaryComposite {
        base: Box<TrajectoryModel>,
        holds: Vec<Hold>,
        ramp: f64,
    },
}

/// Quintic smoothstep and its integral; `S'` and `S''` vanish at both ends.
fn smoothstep(u: f64) -> (f64, f64, f64) {
    let u2 = u * u;
    let u3 = u2 * u;
    let s = u3 * (10.0 - 15.0 * u + 6.0 * u2);
    let ds = 30.0 * u2 * (1.0 - u) * (1.0 - u);
    let integral = u3 * u * (2.5 - 3.0 * u + u2);
    (s, ds, integral)
}

/// Base time and its first two derivatives at composite time `t`.
fn warp(holds: &[Hold], ramp: f64, t: f64) -> (f64, f64, f64) {
    let mut lost = 0.0;
    for h in holds {
        let down = h.start - ramp;
        let up = h.start + h.duration;
        if t < down {
            break;
        }
        if t < h.start {
            let (s, ds, int) = smoothstep((t - down) / ramp);
            return (down - lost + ramp * ((t - down) / ramp - int), 1.0 - s, -ds / ramp);
        }
        let rest = down - lost + 0.5 * ramp;
        if t < up {
            return (rest, 0.0, 0.0);
        }
        if t < up + ramp {
            let (s, ds, int) = smoothstep((t - up) / ramp);
            return (rest + ramp * int, s, ds / ramp);
        }
        lost += h.duration + ramp;
    }
    (t - lost, 1.0, 0.0)
}

impl TrajectoryModel {
    pub fn sinusoid(duration: f64) -> Self {
        TrajectoryModel::Sinusoid3d(Sinusoid3d {
            duration,
            ..Sinusoid3d::default()
        })
    }

    pub fn vehicle(duration: f64) -> Self {
        TrajectoryModel::WaypointSpline(WaypointSpline::vehicle_loop(duration))
    }

    /// Base trajectory with rest intervals; total duration grows by
    /// `duration + ramp` per hold.
    pub fn with_holds(base: TrajectoryModel, holds: Vec<Hold>, ramp: f64) -> Result<Self, SimError> {
        if ramp <= 0.0 {
            return Err(SimError::InvalidTrajectory("hold ramp must be positive".into()));
        }
        let mut prev_end = 0.0;
        for h in &holds {
            if h.duration < 0.0 || h.start - ramp < prev_end {
                return Err(SimError::InvalidTrajectory(format!(
                    "hold at {} overlaps the previous segment or starts too early",
                    h.start
                )));
            }
            prev_end = h.start + h.duration + ramp;
        }
        if warp(&holds, ramp, prev_end).0 > base.duration() {
            return Err(SimError::InvalidTrajectory(
                "hold extends past the end of the trajectory".into(),
            ));
        }
        Ok(TrajectoryModel::StationaryComposite {
            base: Box::new(base),
            holds,
            ramp,
        })
    }

    pub fn duration(&self) -> f64 {
        match self {
            TrajectoryModel::Sinusoid3d(s) => s.duration,
            TrajectoryModel::WaypointSpline(s) => s.duration(),
            TrajectoryModel::StationaryComposite { base, holds, ramp } => {
                base.duration() + holds.iter().map(|h| h.duration + ramp).sum::<f64>()
            }
        }
    }

    fn evaluate(&self, t: f64) -> Kinematics {
        match self {
            TrajectoryModel::Sinusoid3d(s) => s.evaluate(t),
            TrajectoryModel::WaypointSpline(s) => s.evaluate(t),
            TrajectoryModel::StationaryComposite { base, holds, ramp } => {
                let (s, ds, dds) = warp(holds, *ramp, t);
                let k = base.evaluate(s.clamp(0.0, base.duration()));
                Kinematics {
                    w: k.w,
                    p: k.p,
                    v: k.v * ds,
                    a: k.a * ds * ds + k.v * dds,
                    omega: k.omega * ds,
                }
            }
        }
    }

    /// True if `t` lies inside a hold (exactly at rest).
    pub fn is_stationary(&self, t: f64) -> bool {
        match self {
            TrajectoryModel::StationaryComposite { holds, .. } => {
                holds.iter().any(|h| t >= h.start && t <= h.start + h.duration)
            }
            _ => false,
        }
    }
}

pub fn sample_groundtruth(model: &TrajectoryModel, t: f64) -> Result<Kinematics, SimError> {
    let duration = model.duration();
    if !(0.0..=duration).contains(&t) {
        return Err(SimError::TimeOutOfRange { t, duration });
    }
    Ok(model.evaluate(t))
}
