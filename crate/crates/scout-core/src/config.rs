//! Planner configuration: flat `key=value` text with `#` comments.
//!
//! Every parameter has a default, so an empty document is a valid config.
//! Unknown keys are rejected rather than ignored, which keeps typos from
//! silently running with defaults.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key=value`, got `{text}`")]
    Malformed { line: usize, text: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: duplicate key `{key}`")]
    DuplicateKey { line: usize, key: String },
    #[error("line {line}: cannot parse value for `{key}`: {msg}")]
    BadValue {
        line: usize,
        key: String,
        msg: String,
    },
    #[error("invalid value for `{key}`: {msg}")]
    OutOfRange { key: String, msg: String },
}

/// All tunables of the planner and simulator.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannerConfig {
    /// Voxel edge length [m].
    pub r_v: f64,
    /// Max linear speed [m/s].
    pub v_m: f64,
    /// Max linear acceleration [m/s^2].
    pub a_m: f64,
    /// Max yaw rate [rad/s].
    pub psi_dot_m: f64,
    /// Max yaw acceleration [rad/s^2].
    pub psi_ddot_m: f64,
    /// Curvature speed factor, strictly inside (0, 1).
    pub lambda_a: f64,
    /// Anchor-distance factor [s]; the arc anchor sits `lambda_arc * v_m`
    /// meters along the candidate path.
    pub lambda_arc: f64,
    /// Gain sensitivity of the viewpoint-pair score.
    pub lambda_e: f64,
    /// Corridor-violation penalty weight.
    pub lambda_p: f64,
    /// Dynamic-limit penalty weight.
    pub lambda_d: f64,
    /// Time penalty weight.
    pub lambda_t: f64,
    /// Horizontal sensor field of view [rad].
    pub sensor_fov_h: f64,
    /// Vertical sensor field of view [rad].
    pub sensor_fov_v: f64,
    /// Max sensing range [m].
    pub sensor_range: f64,

    /// Min travel distance before a new history node is dropped [m].
    pub d_node: f64,
    /// Max length of a free-sight graph edge [m].
    pub r_connect: f64,
    /// Max node-to-region distance for attaching a region to a node [m].
    pub r_attach: f64,
    /// Edge length of the cubic explorable regions [m].
    pub l_region: f64,

    /// Inner sampling-ring radius around a frontier-cluster centroid [m].
    pub vp_ring_inner: f64,
    /// Outer sampling-ring radius [m].
    pub vp_ring_outer: f64,
    /// Ring azimuth sample count.
    pub vp_azimuths: u32,
    /// Max viewpoints stored per region.
    pub vp_cap: u32,
    /// Max frontier clusters sampled per region.
    pub vp_max_clusters: u32,
    /// Max frontier voxels used when scoring one candidate's visibility.
    pub vp_score_samples: u32,
    /// Max exploring candidates evaluated per planning cycle.
    pub pair_cap: u32,

    /// Quadrature samples per trajectory segment.
    pub quad_samples: u32,
    /// Target path length per trajectory segment [m].
    pub seg_len: f64,
    /// Max segments per trajectory branch.
    pub max_segs: u32,
    /// Min duration per trajectory segment [s].
    pub t_min: f64,
    /// Max corridor-box half extent [m].
    pub corridor_max_ext: f64,
    /// Optimizer gradient-norm stop tolerance.
    pub opt_grad_tol: f64,
    /// Optimizer iteration cap.
    pub opt_max_iters: u32,
    /// Optimizer objective-evaluation cap (deterministic budget).
    pub opt_max_evals: u32,

    /// Physics step [s].
    pub sim_dt: f64,
    /// Sensor period [s].
    pub sensor_dt: f64,
    /// Simulated planner latency charged to the mission clock per plan [ms].
    pub plan_latency_ms: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            r_v: 0.1,
            v_m: 2.0,
            a_m: 3.0,
            psi_dot_m: 1.57,
            psi_ddot_m: 1.57,
            lambda_a: 0.6,
            lambda_arc: 1.0,
            lambda_e: 0.3,
            lambda_p: 4000.0,
            lambda_d: 350.0,
            lambda_t: 700.0,
            sensor_fov_h: 115f64.to_radians(),
            sensor_fov_v: 92f64.to_radians(),
            sensor_range: 5.0,
            d_node: 2.0,
            r_connect: 6.0,
            r_attach: 7.0,
            l_region: 5.0,
            vp_ring_inner: 1.0,
            vp_ring_outer: 1.8,
            vp_azimuths: 12,
            vp_cap: 20,
            vp_max_clusters: 4,
            vp_score_samples: 64,
            pair_cap: 20,
            quad_samples: 16,
            seg_len: 2.0,
            max_segs: 8,
            t_min: 0.05,
            corridor_max_ext: 4.0,
            opt_grad_tol: 1e-4,
            opt_max_iters: 100,
            opt_max_evals: 600,
            sim_dt: 0.02,
            sensor_dt: 0.1,
            plan_latency_ms: 0.0,
        }
    }
}

macro_rules! config_keys {
    ($($key:ident : $kind:ident),* $(,)?) => {
        impl PlannerConfig {
            fn set(&mut self, key: &str, value: &str, line: usize) -> Result<bool, ConfigError> {
                match key {
                    $(stringify!($key) => {
                        self.$key = parse_value!($kind, key, value, line)?;
                        Ok(true)
                    })*
                    _ => Ok(false),
                }
            }

            /// Serializes in canonical key order; `parse` of the result
            /// reproduces the config field-for-field.
            pub fn to_text(&self) -> String {
                let mut out = String::new();
                $(out.push_str(&format!("{}={}\n", stringify!($key), self.$key));)*
                out
            }
        }
    };
}

macro_rules! parse_value {
    (f64, $key:ident, $value:ident, $line:ident) => {
        $value.parse::<f64>().map_err(|e| ConfigError::BadValue {
            line: $line,
            key: $key.to_string(),
            msg: e.to_string(),
        })
    };
    (u32, $key:ident, $value:ident, $line:ident) => {
        $value.parse::<u32>().map_err(|e| ConfigError::BadValue {
            line: $line,
            key: $key.to_string(),
            msg: e.to_string(),
        })
    };
}

config_keys! {
    r_v: f64, v_m: f64, a_m: f64, psi_dot_m: f64, psi_ddot_m: f64,
    lambda_a: f64, lambda_arc: f64, lambda_e: f64,
    lambda_p: f64, lambda_d: f64, lambda_t: f64,
    sensor_fov_h: f64, sensor_fov_v: f64, sensor_range: f64,
    d_node: f64, r_connect: f64, r_attach: f64, l_region: f64,
    vp_ring_inner: f64, vp_ring_outer: f64, vp_azimuths: u32, vp_cap: u32,
    vp_max_clusters: u32, vp_score_samples: u32, pair_cap: u32,
    quad_samples: u32, seg_len: f64, max_segs: u32, t_min: f64,
    corridor_max_ext: f64, opt_grad_tol: f64, opt_max_iters: u32, opt_max_evals: u32,
    sim_dt: f64, sensor_dt: f64, plan_latency_ms: f64,
}

impl PlannerConfig {
    /// Parses a flat `key=value` document; omitted keys keep their defaults.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let mut seen: Vec<String> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let Some((key, value)) = body.split_once('=') else {
                return Err(ConfigError::Malformed {
                    line,
                    text: body.to_string(),
                });
            };
            let key = key.trim();
            let value = value.trim();
            if seen.iter().any(|k| k == key) {
                return Err(ConfigError::DuplicateKey {
                    line,
                    key: key.to_string(),
                });
            }
            if !cfg.set(key, value, line)? {
                return Err(ConfigError::UnknownKey {
                    line,
                    key: key.to_string(),
                });
            }
            seen.push(key.to_string());
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive: [(&str, f64); 24] = [
            ("r_v", self.r_v),
            ("v_m", self.v_m),
            ("a_m", self.a_m),
            ("psi_dot_m", self.psi_dot_m),
            ("psi_ddot_m", self.psi_ddot_m),
            ("lambda_arc", self.lambda_arc),
            ("lambda_e", self.lambda_e),
            ("lambda_p", self.lambda_p),
            ("lambda_d", self.lambda_d),
            ("lambda_t", self.lambda_t),
            ("sensor_fov_h", self.sensor_fov_h),
            ("sensor_fov_v", self.sensor_fov_v),
            ("sensor_range", self.sensor_range),
            ("d_node", self.d_node),
            ("r_connect", self.r_connect),
            ("r_attach", self.r_attach),
            ("l_region", self.l_region),
            ("vp_ring_inner", self.vp_ring_inner),
            ("vp_ring_outer", self.vp_ring_outer),
            ("seg_len", self.seg_len),
            ("t_min", self.t_min),
            ("corridor_max_ext", self.corridor_max_ext),
            ("sim_dt", self.sim_dt),
            ("sensor_dt", self.sensor_dt),
        ];
        for (key, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(ConfigError::OutOfRange {
                    key: key.to_string(),
                    msg: format!("must be positive and finite, got {v}"),
                });
            }
        }
        if !(self.lambda_a > 0.0 && self.lambda_a < 1.0) {
            return Err(ConfigError::OutOfRange {
                key: "lambda_a".to_string(),
                msg: format!("must lie strictly inside (0, 1), got {}", self.lambda_a),
            });
        }
        if self.sensor_range < self.r_v {
            return Err(ConfigError::OutOfRange {
                key: "sensor_range".to_string(),
                msg: format!(
                    "must be at least the voxel size r_v={}, got {}",
                    self.r_v, self.sensor_range
                ),
            });
        }
        if !(self.opt_grad_tol.is_finite() && self.opt_grad_tol > 0.0) {
            return Err(ConfigError::OutOfRange {
                key: "opt_grad_tol".to_string(),
                msg: "must be positive and finite".to_string(),
            });
        }
        if !(self.plan_latency_ms.is_finite() && self.plan_latency_ms >= 0.0) {
            return Err(ConfigError::OutOfRange {
                key: "plan_latency_ms".to_string(),
                msg: "must be non-negative and finite".to_string(),
            });
        }
        let counts: [(&str, u32); 8] = [
            ("vp_azimuths", self.vp_azimuths),
            ("vp_cap", self.vp_cap),
            ("vp_max_clusters", self.vp_max_clusters),
            ("vp_score_samples", self.vp_score_samples),
            ("pair_cap", self.pair_cap),
            ("max_segs", self.max_segs),
            ("opt_max_iters", self.opt_max_iters),
            ("opt_max_evals", self.opt_max_evals),
        ];
        for (key, v) in counts {
            if v == 0 {
                return Err(ConfigError::OutOfRange {
                    key: key.to_string(),
                    msg: "must be at least 1".to_string(),
                });
            }
        }
        if self.quad_samples < 2 {
            return Err(ConfigError::OutOfRange {
                key: "quad_samples".to_string(),
                msg: "must be at least 2".to_string(),
            });
        }
        Ok(())
    }

    /// Anchor offset along a candidate path, `lambda_arc * v_m` [m].
    pub fn anchor_distance(&self) -> f64 {
        self.lambda_arc * self.v_m
    }
}
