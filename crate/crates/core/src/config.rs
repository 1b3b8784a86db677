//! Run configuration: flat `section.key=value` text or the equivalent JSON.
//! Unknown keys are errors.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde_json::Value;

use crate::error::ConfigError;
use crate::estimator::InitMode;
use crate::experiment::{matched_filter, Scenario, SWEEP_ERRORS_DEG};
use crate::observability::DEFAULT_RANK_TOLERANCE;
use crate::sim::{Hold, SensorConfig, TrajectoryModel};
use crate::so3::{Mat3, Vec3};

/// Every accepted key with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    (
        "sim.preset",
        "euroc | kaist: sensor noise, landmark field and default trajectory",
    ),
    ("sim.trajectory", "sinusoid | vehicle"),
    ("sim.duration", "seconds of base trajectory (holds extend it)"),
    ("sim.seed", "RNG seed for every noise source"),
    ("sim.imu_rate", "Hz"),
    ("sim.cam_rate", "Hz"),
    ("sim.gps_rate", "Hz"),
    ("sim.gps_phase", "first GPS sample time, s"),
    ("sim.gps_sigma", "isotropic GPS standard deviation, m"),
    ("sim.gps_var", "diagonal GPS variances `xx,yy,zz`, m²"),
    ("sim.pixel_sigma", "feature noise, pixels"),
    ("sim.gyro_noise", "rad/s/√Hz"),
    ("sim.accel_noise", "m/s²/√Hz"),
    ("sim.gyro_walk", "rad/s²/√Hz"),
    ("sim.accel_walk", "m/s³/√Hz"),
    ("sim.noiseless", "true switches every noise source off"),
    ("sim.psi_true_deg", "true E/V yaw, degrees"),
    ("sim.p_ev", "true V origin in E `x,y,z`, m"),
    ("sim.t_g", "true GPS time offset, s"),
    ("sim.lever", "antenna position in the IMU frame `x,y,z`, m"),
    ("sim.landmarks", "number of landmarks"),
    ("sim.holds", "stationary intervals `start:duration,...`, s"),
    ("sim.hold_ramp", "speed ramp around each hold, s"),
    ("filter.max_clones", "sliding-window size N_max"),
    (
        "filter.pixel_sigma",
        "assumed feature noise, pixels (defaults to the sensor's)",
    ),
    ("filter.gate", "GPS chi-square gate probability"),
    (
        "filter.gate_widened",
        "widened gate probability after repeated rejections",
    ),
    ("filter.gate_patience", "consecutive rejections before widening"),
    ("filter.online_psi", "estimate the E/V yaw online"),
    ("filter.online_pev", "estimate the V origin in E online"),
    ("filter.online_tg", "estimate the GPS time offset online"),
    ("filter.init", "naive | least_squares"),
    ("filter.init_distance", "path length before least-squares alignment, m"),
    (
        "filter.psi_error_deg",
        "initial yaw guess relative to the truth, degrees",
    ),
    ("filter.psi_init_deg", "absolute initial yaw guess, degrees"),
    ("filter.sigma_psi0", "initial yaw standard deviation, rad"),
    ("filter.t_g_init", "initial GPS time offset, s"),
    ("filter.sigma_t_g0", "initial GPS time offset standard deviation, s"),
    (
        "filter.gps_iterations",
        "relinearizations per GPS update (1 = plain EKF)",
    ),
    (
        "filter.first_update_baseline",
        "naive-anchor baseline before the first update, GPS sigmas",
    ),
    ("output.dir", "directory for every written file"),
    ("sweep.errors_deg", "initial yaw errors, degrees"),
    ("sweep.threshold_deg", "convergence threshold, degrees"),
    ("observability.step", "seconds between analysed groundtruth samples"),
    ("observability.tolerance", "relative singular-value threshold"),
];

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub scenario: Scenario,
    pub output_dir: PathBuf,
    pub sweep_errors: Vec<f64>,
    pub sweep_threshold: f64,
    pub observability_step: f64,
    pub observability_tolerance: f64,
    entries: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::from_entries(BTreeMap::new()).expect("defaults are valid")
    }
}

impl RunConfig {
    /// Parses `key=value` lines; `#` starts a comment. Text starting with `{`
    /// is read as JSON instead.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        if text.trim_start().starts_with('{') {
            return Self::from_json(text);
        }
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            entries.insert(k.trim().to_string(), v.trim().to_string());
        }
        Self::from_entries(entries)
    }

    /// Nested objects flatten to dotted keys; arrays join with commas
    /// (inner arrays with colons).
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let value: Value = serde_json::from_str(text).map_err(|e| ConfigError::Json(e.to_string()))?;
        let mut entries = BTreeMap::new();
        flatten_json("", &value, &mut entries)?;
        Self::from_entries(entries)
    }

    /// Applies `overrides` on top of this configuration's entries.
    pub fn with_overrides<'a>(
        &self,
        overrides: impl IntoIterator<Item = (&'a str, &'a str)>,
    ) -> Result<Self, ConfigError> {
        let mut entries = self.entries.clone();
        for (k, v) in overrides {
            entries.insert(k.trim().to_string(), v.trim().to_string());
        }
        Self::from_entries(entries)
    }

    pub fn from_entries(entries: BTreeMap<String, String>) -> Result<Self, ConfigError> {
        if let Some(k) = entries.keys().find(|k| !KEYS.iter().any(|(known, _)| known == k)) {
            return Err(ConfigError::UnknownKey(k.clone()));
        }
        if entries.contains_key("filter.psi_error_deg") && entries.contains_key("filter.psi_init_deg") {
            return Err(invalid("filter.psi_init_deg", "conflicts with filter.psi_error_deg"));
        }
        let get = |k: &str| entries.get(k).map(String::as_str);

        let preset = get("sim.preset").unwrap_or("euroc");
        let (mut sensor, default_kind) = match preset {
            "euroc" => (SensorConfig::euroc_sim(), "sinusoid"),
            "kaist" => (SensorConfig::kaist_sim(), "vehicle"),
            other => return Err(invalid("sim.preset", &format!("unknown preset `{other}`"))),
        };
        if get("sim.noiseless")
            .map(|v| parse_bool("sim.noiseless", v))
            .transpose()?
            == Some(true)
        {
            sensor = sensor.noiseless();
        }
        let mut duration = 100.0;
        let mut holds = Vec::new();
        let mut ramp = 2.0;
        for (k, v) in &entries {
            let k = k.as_str();
            match k {
                "sim.duration" => duration = parse_nonneg(k, v)?,
                "sim.seed" => sensor.seed = parse(k, v)?,
                "sim.imu_rate" => sensor.imu_rate = parse_pos(k, v)?,
                "sim.cam_rate" => sensor.cam_rate = parse_pos(k, v)?,
                "sim.gps_rate" => sensor.gps_rate = parse_pos(k, v)?,
                "sim.gps_phase" => sensor.gps_phase = parse_nonneg(k, v)?,
                "sim.gps_sigma" => sensor.gps_cov = Mat3::identity() * parse_nonneg(k, v)?.powi(2),
                "sim.gps_var" => {
                    let d = parse_vec3(k, v)?;
                    if d.min() < 0.0 {
                        return Err(invalid(k, "variances must be non-negative"));
                    }
                    sensor.gps_cov = Mat3::from_diagonal(&d);
                }
                "sim.pixel_sigma" => sensor.pixel_sigma = parse_nonneg(k, v)?,
                "sim.gyro_noise" => sensor.imu_noise.gyro_noise = parse_nonneg(k, v)?,
                "sim.accel_noise" => sensor.imu_noise.accel_noise = parse_nonneg(k, v)?,
                "sim.gyro_walk" => sensor.imu_noise.gyro_walk = parse_nonneg(k, v)?,
                "sim.accel_walk" => sensor.imu_noise.accel_walk = parse_nonneg(k, v)?,
                "sim.psi_true_deg" => sensor.psi_true = parse::<f64>(k, v)?.to_radians(),
                "sim.p_ev" => sensor.p_ev_true = parse_vec3(k, v)?,
                "sim.t_g" => sensor.t_g_true = parse(k, v)?,
                "sim.lever" => sensor.p_g_in_i = parse_vec3(k, v)?,
                "sim.landmarks" => sensor.landmarks.count = parse(k, v)?,
                "sim.holds" => holds = parse_holds(k, v)?,
                "sim.hold_ramp" => ramp = parse_pos(k, v)?,
                _ => {}
            }
        }
        sensor.validate().map_err(|e| invalid("sim", &e.to_string()))?;
        let base = match get("sim.trajectory").unwrap_or(default_kind) {
            "sinusoid" => TrajectoryModel::sinusoid(duration),
            "vehicle" => {
                if duration <= 0.0 {
                    return Err(invalid("sim.duration", "vehicle routes need a positive duration"));
                }
                TrajectoryModel::vehicle(duration)
            }
            other => return Err(invalid("sim.trajectory", &format!("unknown trajectory `{other}`"))),
        };
        let trajectory = if holds.is_empty() {
            base
        } else {
            TrajectoryModel::with_holds(base, holds, ramp).map_err(|e| invalid("sim.holds", &e.to_string()))?
        };

        let mut filter = matched_filter(&sensor);
        let mut psi_error = 0.0;
        let mut psi_absolute = None;
        let mut sweep_errors: Vec<f64> = SWEEP_ERRORS_DEG.iter().map(|d| d.to_radians()).collect();
        let mut sweep_threshold = 2f64.to_radians();
        let mut observability_step = 1.0;
        let mut observability_tolerance = DEFAULT_RANK_TOLERANCE;
        let mut output_dir = PathBuf::from("out");
        for (k, v) in &entries {
            let k = k.as_str();
            match k {
                "filter.max_clones" => {
                    filter.max_clones = parse(k, v)?;
                    if filter.max_clones < 2 {
                        return Err(invalid(k, "need at least two clones"));
                    }
                }
                "filter.pixel_sigma" => filter.pixel_sigma = parse_pos(k, v)?,
                "filter.gate" => filter.gate.probability = parse_probability(k, v)?,
                "filter.gate_widened" => filter.gate.widened_probability = parse_probability(k, v)?,
                "filter.gate_patience" => filter.gate.patience = parse(k, v)?,
                "filter.online_psi" => filter.flags.psi = parse_bool(k, v)?,
                "filter.online_pev" => filter.flags.p_ev = parse_bool(k, v)?,
                "filter.online_tg" => filter.flags.t_g = parse_bool(k, v)?,
                "filter.init" => {
                    filter.init = match v.as_str() {
                        "naive" => InitMode::Naive,
                        "least_squares" => InitMode::LeastSquares { min_distance: 20.0 },
                        other => return Err(invalid(k, &format!("unknown mode `{other}`"))),
                    }
                }
                "filter.psi_error_deg" => psi_error = parse::<f64>(k, v)?.to_radians(),
                "filter.psi_init_deg" => psi_absolute = Some(parse::<f64>(k, v)?.to_radians()),
                "filter.sigma_psi0" => filter.sigma_psi0 = parse_pos(k, v)?,
                "filter.t_g_init" => filter.t_g_init = parse(k, v)?,
                "filter.sigma_t_g0" => filter.sigma_t_g0 = parse_pos(k, v)?,
                "filter.gps_iterations" => filter.gps_iterations = parse(k, v)?,
                "filter.first_update_baseline" => filter.first_update_baseline = parse_nonneg(k, v)?,
                "output.dir" => output_dir = PathBuf::from(v),
                "sweep.errors_deg" => {
                    sweep_errors = v
                        .split(',')
                        .map(|s| parse::<f64>(k, s.trim()).map(f64::to_radians))
                        .collect::<Result<_, _>>()?
                }
                "sweep.threshold_deg" => sweep_threshold = parse_pos(k, v)?.to_radians(),
                "observability.step" => observability_step = parse_pos(k, v)?,
                "observability.tolerance" => observability_tolerance = parse_pos(k, v)?,
                _ => {}
            }
        }
        if let Some(d) = get("filter.init_distance") {
            let d = parse_pos("filter.init_distance", d)?;
            match &mut filter.init {
                InitMode::LeastSquares { min_distance } => *min_distance = d,
                InitMode::Naive => {
                    return Err(invalid(
                        "filter.init_distance",
                        "only used with filter.init=least_squares",
                    ))
                }
            }
        }
        let mut scenario = Scenario {
            trajectory,
            sensor,
            filter,
        }
        .with_psi_error(psi_error);
        if let Some(psi) = psi_absolute {
            scenario.filter.psi_init = psi;
        }
        Ok(Self {
            scenario,
            output_dir,
            sweep_errors,
            sweep_threshold,
            observability_step,
            observability_tolerance,
            entries,
        })
    }

    /// Explicitly set entries, sorted by key.
    pub fn entries(&self) -> &BTreeMap<String, String> {
        &self.entries
    }

    /// Canonical text form; parsing it reproduces this configuration.
    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}

fn flatten_json(prefix: &str, value: &Value, out: &mut BTreeMap<String, String>) -> Result<(), ConfigError> {
    let key = |k: &str| {
        if prefix.is_empty() {
            k.to_string()
        } else {
            format!("{prefix}.{k}")
        }
    };
    match value {
        Value::Object(map) => {
            for (k, v) in map {
                flatten_json(&key(k), v, out)?;
            }
        }
        _ if prefix.is_empty() => return Err(ConfigError::Json("top level must be an object".into())),
        other => {
            out.insert(prefix.to_string(), json_scalar(prefix, other)?);
        }
    }
    Ok(())
}

fn json_scalar(key: &str, v: &Value) -> Result<String, ConfigError> {
    Ok(match v {
        Value::String(s) => s.clone(),
        Value::Number(n) => n.to_string(),
        Value::Bool(b) => b.to_string(),
        Value::Array(items) => {
            let parts: Vec<String> = items
                .iter()
                .map(|item| match item {
                    Value::Array(inner) => inner
                        .iter()
                        .map(|x| json_scalar(key, x))
                        .collect::<Result<Vec<_>, _>>()
                        .map(|p| p.join(":")),
                    other => json_scalar(key, other),
                })
                .collect::<Result<_, _>>()?;
            parts.join(",")
        }
        Value::Null | Value::Object(_) => return Err(invalid(key, "expected a scalar or array")),
    })
}

fn invalid(key: &str, reason: &str) -> ConfigError {
    ConfigError::InvalidValue {
        key: key.to_string(),
        reason: reason.to_string(),
    }
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, ConfigError> {
    v.parse().map_err(|_| invalid(key, &format!("cannot parse `{v}`")))
}

fn parse_nonneg(key: &str, v: &str) -> Result<f64, ConfigError> {
    let x: f64 = parse(key, v)?;
    if !(x >= 0.0 && x.is_finite()) {
        return Err(invalid(key, "must be a non-negative number"));
    }
    Ok(x)
}

fn parse_pos(key: &str, v: &str) -> Result<f64, ConfigError> {
    let x = parse_nonneg(key, v)?;
    if x == 0.0 {
        return Err(invalid(key, "must be positive"));
    }
    Ok(x)
}

fn parse_probability(key: &str, v: &str) -> Result<f64, ConfigError> {
    let p: f64 = parse(key, v)?;
    if !(p > 0.0 && p < 1.0) {
        return Err(invalid(key, "must lie in (0, 1)"));
    }
    Ok(p)
}

fn parse_bool(key: &str, v: &str) -> Result<bool, ConfigError> {
    match v {
        "true" | "1" | "on" => Ok(true),
        "false" | "0" | "off" => Ok(false),
        _ => Err(invalid(key, "expected true or false")),
    }
}

fn parse_vec3(key: &str, v: &str) -> Result<Vec3, ConfigError> {
    let parts: Vec<f64> = v.split(',').map(|s| parse(key, s.trim())).collect::<Result<_, _>>()?;
    if parts.len() != 3 || parts.iter().any(|x| !x.is_finite()) {
        return Err(invalid(key, "expected three comma-separated numbers"));
    }
    Ok(Vec3::new(parts[0], parts[1], parts[2]))
}

fn parse_holds(key: &str, v: &str) -> Result<Vec<Hold>, ConfigError> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',')
        .map(|item| {
            let (s, d) = item
                .split_once(':')
                .ok_or_else(|| invalid(key, "expected start:duration"))?;
            Ok(Hold {
                start: parse_nonneg(key, s.trim())?,
                duration: parse_nonneg(key, d.trim())?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_euroc_preset() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.scenario.sensor, SensorConfig::euroc_sim());
        assert_eq!(cfg.scenario.trajectory, TrajectoryModel::sinusoid(100.0));
        assert_eq!(cfg.sweep_errors.len(), 8);
        assert_eq!(cfg.scenario.filter.psi_init, cfg.scenario.sensor.psi_true);
    }

    #[test]
    fn flat_text_sets_values() {
        let cfg = RunConfig::parse(
            "# comment\nsim.preset=kaist\nsim.duration = 30\nsim.seed=9\nfilter.psi_error_deg=-20\nfilter.online_pev=false\nsim.holds=5:3,12:2\n",
        )
        .unwrap();
        let sc = &cfg.scenario;
        assert_eq!(sc.sensor.seed, 9);
        assert_eq!(sc.sensor.gps_cov, Mat3::from_diagonal(&Vec3::new(1.0, 1.0, 4.0)));
        assert!(!sc.filter.flags.p_ev);
        assert!((sc.filter.psi_init - (sc.sensor.psi_true - 20f64.to_radians())).abs() < 1e-12);
        assert!((sc.trajectory.duration() - (30.0 + 5.0 + 4.0)).abs() < 1e-9);
    }

    #[test]
    fn json_matches_flat_text() {
        let a =
            RunConfig::parse("sim.seed=4\nsim.lever=0.1,0,0.2\nsim.holds=20:5\nfilter.init=least_squares\n").unwrap();
        let b = RunConfig::parse(
            r#"{"sim": {"seed": 4, "lever": [0.1, 0, 0.2], "holds": [[20, 5]]}, "filter.init": "least_squares"}"#,
        )
        .unwrap();
        assert_eq!(a.scenario.sensor, b.scenario.sensor);
        assert_eq!(a.scenario.trajectory, b.scenario.trajectory);
        assert_eq!(a.scenario.filter, b.scenario.filter);
    }

    #[test]
    fn unknown_and_bad_keys_are_named() {
        let e = RunConfig::parse("sim.sed=3").unwrap_err();
        assert!(e.to_string().contains("sim.sed"));
        let e = RunConfig::parse("sim.imu_rate=-4").unwrap_err();
        assert!(e.to_string().contains("sim.imu_rate"));
        assert!(matches!(
            RunConfig::parse("just words"),
            Err(ConfigError::Syntax { line: 1 })
        ));
        assert!(RunConfig::parse("{\"sim\": 3}").is_err());
        assert!(RunConfig::parse("filter.psi_error_deg=1\nfilter.psi_init_deg=2").is_err());
    }

    #[test]
    fn text_form_round_trips() {
        let cfg = RunConfig::parse("sim.preset=kaist\nfilter.gate=0.99\noutput.dir=/tmp/x").unwrap();
        let again = RunConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(again.entries(), cfg.entries());
        assert_eq!(again.scenario.filter, cfg.scenario.filter);
    }

    #[test]
    fn every_key_is_accepted() {
        for (k, _) in KEYS {
            let r = RunConfig::parse(&format!("{k}="));
            assert!(!matches!(r, Err(ConfigError::UnknownKey(_))), "{k}");
        }
    }
}
