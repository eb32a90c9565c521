//! Robot description and parameter-set files.
//!
//! Both are TOML. The robot file carries the DH table, fixed base and tool
//! transforms, joint limits, home pose and collision spheres; a parameter
//! set carries the objective weights, horizon, solver tolerances and
//! reference settings. Default copies of `robot.toml`, `P1.toml` and
//! `P2.toml` are compiled in and can be overridden by files in a config
//! directory.

use std::path::{Path, PathBuf};

use nalgebra::{Isometry3, Translation3, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::constraints::Limits;
use crate::cost::Weights;
use crate::error::{Error, Result};
use crate::kinematics::{ArmKinematics, DhRow, DhTable, JointVector, SphereSpec};
use crate::model::JointState;
use crate::ocp::{OcpConfig, OcpProblem, SolverOptions};
use crate::reference::DEFAULT_TWIST_WINDOW;

/// Built-in robot description; also a template for custom files.
pub const ROBOT_TOML: &str = include_str!("../config/robot.toml");
/// Built-in tracking-focused parameter set.
pub const P1_TOML: &str = include_str!("../config/P1.toml");
/// Built-in anti-slosh parameter set.
pub const P2_TOML: &str = include_str!("../config/P2.toml");

/// Names of the parameter sets that ship with the crate.
pub const BUILTIN_PARAM_SETS: [&str; 2] = ["P1", "P2"];

/// Environment variable naming a directory whose `robot.toml`, `P1.toml` and
/// `P2.toml` take precedence over the built-in copies.
pub const CONFIG_DIR_ENV: &str = "TELEOP_CONFIG_DIR";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformSpec {
    #[serde(default)]
    pub translation: [f64; 3],
    /// Roll, pitch, yaw about the fixed x, y, z axes (rad).
    #[serde(default)]
    pub rpy: [f64; 3],
}

impl Default for TransformSpec {
    fn default() -> Self {
        Self {
            translation: [0.0; 3],
            rpy: [0.0; 3],
        }
    }
}

impl TransformSpec {
    pub fn to_isometry(&self) -> Isometry3<f64> {
        let [r, p, y] = self.rpy;
        Isometry3::from_parts(
            Translation3::from(Vector3::from(self.translation)),
            UnitQuaternion::from_euler_angles(r, p, y),
        )
    }

    fn is_finite(&self) -> bool {
        self.translation
            .iter()
            .chain(self.rpy.iter())
            .all(|v| v.is_finite())
    }
}

/// Joint limits as written in the robot file. Missing lower bounds mirror
/// the upper ones.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitsSpec {
    pub q_min: [f64; 6],
    pub q_max: [f64; 6],
    #[serde(default)]
    pub qd_min: Option<[f64; 6]>,
    pub qd_max: [f64; 6],
    #[serde(default)]
    pub u_min: Option<[f64; 6]>,
    pub u_max: [f64; 6],
}

impl LimitsSpec {
    pub fn to_limits(&self) -> Limits {
        let neg = |v: &[f64; 6]| Vector6::from_iterator(v.iter().map(|x| -x));
        Limits {
            q_min: Vector6::from(self.q_min),
            q_max: Vector6::from(self.q_max),
            qd_min: self
                .qd_min
                .map(Vector6::from)
                .unwrap_or_else(|| neg(&self.qd_max)),
            qd_max: Vector6::from(self.qd_max),
            u_min: self
                .u_min
                .map(Vector6::from)
                .unwrap_or_else(|| neg(&self.u_max)),
            u_max: Vector6::from(self.u_max),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HomeSpec {
    pub q: [f64; 6],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotConfig {
    #[serde(rename = "joint")]
    pub joints: Vec<DhRow>,
    #[serde(default)]
    pub base: TransformSpec,
    #[serde(default)]
    pub tool: TransformSpec,
    pub limits: LimitsSpec,
    pub home: HomeSpec,
    #[serde(rename = "sphere", default)]
    pub spheres: Vec<SphereSpec>,
}

impl RobotConfig {
    /// The built-in UR5e-like description.
    pub fn builtin() -> Self {
        Self::parse(ROBOT_TOML, "robot.toml").expect("built-in robot config is valid")
    }

    pub fn parse(text: &str, source_name: &str) -> Result<Self> {
        let cfg: RobotConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("{source_name}: {e}")))?;
        cfg.validate()
            .map_err(|e| Error::Config(format!("{source_name}: {e}")))?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn validate(&self) -> Result<()> {
        DhTable::new(&self.joints)?;
        if !self.base.is_finite() || !self.tool.is_finite() {
            return Err(Error::Config(
                "base and tool transforms must be finite".into(),
            ));
        }
        let limits = self.limits.to_limits();
        limits.validate()?;
        let home = self.home_state();
        if !home.is_finite() || limits.clamp_state(&home) != home {
            return Err(Error::Config(
                "home pose must lie within the joint limits".into(),
            ));
        }
        for s in &self.spheres {
            s.validate()?;
        }
        let mut ids: Vec<usize> = self.spheres.iter().map(|s| s.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("sphere ids must be unique".into()));
        }
        Ok(())
    }

    pub fn dh_table(&self) -> DhTable {
        DhTable::new(&self.joints).expect("validated on load")
    }

    pub fn kinematics(&self) -> ArmKinematics {
        ArmKinematics::with_transforms(
            self.dh_table(),
            self.base.to_isometry(),
            self.tool.to_isometry(),
        )
    }

    pub fn limits(&self) -> Limits {
        self.limits.to_limits()
    }

    pub fn home_state(&self) -> JointState {
        JointState::at_rest(JointVector::from(self.home.q))
    }

    /// Radius used to clip predicted targets: 95 % of the summed link extents.
    pub fn default_reach(&self) -> f64 {
        0.95 * self.dh_table().total_link_length()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HorizonSpec {
    pub dt: f64,
    pub steps: usize,
}

impl Default for HorizonSpec {
    fn default() -> Self {
        Self { dt: 0.05, steps: 8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceSpec {
    #[serde(default = "default_twist_window")]
    pub twist_window: usize,
    /// Clipping radius for predicted positions (m); derived from the DH
    /// table when absent.
    #[serde(default)]
    pub reach: Option<f64>,
}

fn default_twist_window() -> usize {
    DEFAULT_TWIST_WINDOW
}

impl Default for ReferenceSpec {
    fn default() -> Self {
        Self {
            twist_window: DEFAULT_TWIST_WINDOW,
            reach: None,
        }
    }
}

/// A named parameter set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamSet {
    pub name: String,
    pub weights: Weights,
    #[serde(default)]
    pub horizon: HorizonSpec,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub reference: ReferenceSpec,
}

impl ParamSet {
    pub fn parse(text: &str, source_name: &str) -> Result<Self> {
        let p: ParamSet =
            toml::from_str(text).map_err(|e| Error::Config(format!("{source_name}: {e}")))?;
        p.validate()
            .map_err(|e| Error::Config(format!("{source_name}: {e}")))?;
        Ok(p)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Built-in `P1` or `P2` (case-insensitive).
    pub fn builtin(name: &str) -> Option<Self> {
        let text = match name.to_ascii_uppercase().as_str() {
            "P1" => P1_TOML,
            "P2" => P2_TOML,
            _ => return None,
        };
        Some(Self::parse(text, name).expect("built-in parameter sets are valid"))
    }

    pub fn p1() -> Self {
        Self::builtin("P1").expect("P1 ships with the crate")
    }

    pub fn p2() -> Self {
        Self::builtin("P2").expect("P2 ships with the crate")
    }

    /// Resolves a parameter-set name or path: `P1`/`P2` come from
    /// `config_dir` when it holds a matching file, otherwise from the
    /// built-in copies; anything else is read as a file path.
    pub fn resolve(spec: &str, config_dir: Option<&Path>) -> Result<Self> {
        if let Some(builtin) = BUILTIN_PARAM_SETS
            .iter()
            .find(|n| n.eq_ignore_ascii_case(spec))
        {
            if let Some(dir) = config_dir {
                let path = dir.join(format!("{builtin}.toml"));
                if path.is_file() {
                    return Self::from_file(&path);
                }
            }
            return Ok(Self::builtin(builtin).expect("listed as built-in"));
        }
        let path = PathBuf::from(spec);
        if !path.is_file() {
            return Err(Error::Config(format!(
                "parameter set '{spec}' is neither P1/P2 nor a readable file"
            )));
        }
        Self::from_file(&path)
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if !(self.horizon.dt > 0.0 && self.horizon.dt.is_finite()) || self.horizon.steps == 0 {
            return Err(Error::Config(format!(
                "horizon needs dt > 0 and at least one step (got dt = {}, steps = {})",
                self.horizon.dt, self.horizon.steps
            )));
        }
        if self.reference.twist_window < 2 {
            return Err(Error::Config("twist_window must be at least 2".into()));
        }
        if let Some(r) = self.reference.reach {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::Config(format!("reach must be positive, got {r}")));
            }
        }
        Ok(())
    }

    pub fn reach(&self, robot: &RobotConfig) -> f64 {
        self.reference
            .reach
            .unwrap_or_else(|| robot.default_reach())
    }

    /// Assembles the optimal control problem for this parameter set.
    pub fn build_problem(&self, robot: &RobotConfig) -> Result<OcpProblem> {
        let mut cfg = OcpConfig::new(
            robot.kinematics(),
            self.weights.clone(),
            robot.limits(),
            self.horizon.steps,
            self.horizon.dt,
        );
        cfg.spheres = robot.spheres.clone();
        cfg.options = self.solver.clone();
        OcpProblem::build(cfg)
    }
}

/// Robot description from `dir/robot.toml` when present, else the built-in one.
pub fn load_robot(config_dir: Option<&Path>) -> Result<RobotConfig> {
    if let Some(dir) = config_dir {
        let path = dir.join("robot.toml");
        if path.is_file() {
            return RobotConfig::from_file(&path);
        }
    }
    Ok(RobotConfig::builtin())
}

/// Directory named by [`CONFIG_DIR_ENV`], if set.
pub fn config_dir_from_env() -> Option<PathBuf> {
    std::env::var_os(CONFIG_DIR_ENV).map(PathBuf::from)
}
