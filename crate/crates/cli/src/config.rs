//! Run configuration, read from TOML. See `docs/config.md`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    SquareSanity,
    LipschitzRate,
    CuspRate,
    ProjectorEnsemble,
    PropertyP,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::SquareSanity => "square_sanity",
            Experiment::LipschitzRate => "lipschitz_rate",
            Experiment::CuspRate => "cusp_rate",
            Experiment::ProjectorEnsemble => "projector_ensemble",
            Experiment::PropertyP => "property_p",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    Dirichlet,
    Neumann,
}

impl From<Boundary> for cusp_core::assembly::BoundaryCondition {
    fn from(b: Boundary) -> Self {
        match b {
            Boundary::Dirichlet => cusp_core::assembly::BoundaryCondition::Dirichlet,
            Boundary::Neumann => cusp_core::assembly::BoundaryCondition::Neumann,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    pub alpha: f64,
    pub eps0: f64,
    /// Comparison levels, strictly decreasing in `(0, eps0]`.
    pub eps_levels: Vec<f64>,
    /// Finest level, standing in for the cusp domain itself.
    pub eps_reference: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        GeometryConfig {
            alpha: 0.95,
            eps0: 0.2,
            eps_levels: vec![0.16, 0.08, 0.04, 0.02],
            eps_reference: 0.005,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscretizationConfig {
    /// Largest element diameter.
    pub h: f64,
    /// Refinement factor near the cusp cap (`h / grading` there).
    pub grading: f64,
    /// Quadrature points per triangle: 3 or 7.
    pub quad_points: usize,
}

impl Default for DiscretizationConfig {
    fn default() -> Self {
        DiscretizationConfig {
            h: 0.05,
            grading: 2.0,
            quad_points: 7,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Number of eigenpairs.
    pub count: usize,
    /// Relative residual tolerance.
    pub tol: f64,
    /// Resolvent power in the Schatten distance.
    pub k: u32,
    /// Integrability exponent; `δ_q` is taken at `q = 2 q0 / (q0 - 2)`.
    pub q0: f64,
    pub boundary: Boundary,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            count: 20,
            tol: 1e-9,
            k: 10,
            q0: f64::INFINITY,
            boundary: Boundary::Dirichlet,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LipschitzConfig {
    /// Half-widths of the bumps on the top of the unit square.
    pub radii: Vec<f64>,
    /// Bump height is `amplitude · r²`.
    pub amplitude: f64,
}

impl Default for LipschitzConfig {
    fn default() -> Self {
        LipschitzConfig {
            radii: vec![0.4, 0.3, 0.2, 0.15, 0.1],
            amplitude: 0.25,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectorConfig {
    pub samples: usize,
}

impl Default for ProjectorConfig {
    fn default() -> Self {
        ProjectorConfig { samples: 10_000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Experiment,
    #[serde(default)]
    pub seed: u64,
    /// Worker threads; all cores when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub geometry: GeometryConfig,
    #[serde(default)]
    pub discretization: DiscretizationConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub lipschitz: LipschitzConfig,
    #[serde(default)]
    pub projector: ProjectorConfig,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl RunConfig {
    pub fn new(experiment: Experiment) -> Self {
        RunConfig {
            experiment,
            seed: 0,
            workers: None,
            out: default_out(),
            geometry: GeometryConfig::default(),
            discretization: DiscretizationConfig::default(),
            solver: SolverConfig::default(),
            lipschitz: LipschitzConfig::default(),
            projector: ProjectorConfig::default(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// `2 q0 / (q0 - 2)`, or 2 for `q0 = ∞`.
    pub fn delta_exponent(&self) -> f64 {
        let q0 = self.solver.q0;
        if q0.is_infinite() {
            2.0
        } else {
            2.0 * q0 / (q0 - 2.0)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(CliError::Config(msg));
        let g = &self.geometry;
        if !(g.eps0 > 0.0) {
            return bad(format!("eps0 = {} must be positive", g.eps0));
        }
        if g.eps_levels.iter().any(|&e| !(e > 0.0 && e <= g.eps0)) {
            return bad(format!("eps_levels {:?} must lie in (0, eps0 = {}]", g.eps_levels, g.eps0));
        }
        if g.eps_levels.windows(2).any(|w| w[1] >= w[0]) {
            return bad(format!("eps_levels {:?} must be strictly decreasing", g.eps_levels));
        }
        if let Some(&finest) = g.eps_levels.last() {
            // the reference error must stay below the signal
            if !(g.eps_reference > 0.0 && 4.0 * g.eps_reference <= finest) {
                return bad(format!(
                    "eps_reference = {} must be positive and at most a quarter of the finest level {finest}",
                    g.eps_reference
                ));
            }
        }
        let d = &self.discretization;
        if !(d.h > 0.0) {
            return bad(format!("h = {} must be positive", d.h));
        }
        if !(d.grading >= 1.0) {
            return bad(format!("grading = {} must be at least 1", d.grading));
        }
        if ![3, 7].contains(&d.quad_points) {
            return bad(format!("quad_points = {} must be 3 or 7", d.quad_points));
        }
        let s = &self.solver;
        if s.k < 1 {
            return bad("k must be at least 1".into());
        }
        if s.count < 1 {
            return bad("count must be at least 1".into());
        }
        if !(s.tol > 0.0) {
            return bad(format!("tol = {} must be positive", s.tol));
        }
        if !(s.q0 > 2.0) {
            return bad(format!("q0 = {} must exceed 2", s.q0));
        }
        if self.workers == Some(0) {
            return bad("workers must be at least 1".into());
        }
        let l = &self.lipschitz;
        if l.radii.iter().any(|&r| !(r > 0.0 && r < 0.5)) || l.radii.windows(2).any(|w| w[1] >= w[0]) {
            return bad(format!("radii {:?} must be strictly decreasing in (0, 1/2)", l.radii));
        }
        if !(l.amplitude > 0.0) {
            return bad(format!("amplitude = {} must be positive", l.amplitude));
        }
        if self.projector.samples == 0 {
            return bad("samples must be at least 1".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn minimal_file_takes_defaults() {
        let cfg = RunConfig::parse("experiment = \"cusp_rate\"\n").unwrap();
        assert_eq!(cfg, RunConfig::new(Experiment::CuspRate));
        assert_eq!(cfg.delta_exponent(), 2.0);
    }

    #[test]
    fn sections_override_defaults() {
        let text = r#"
experiment = "square_sanity"
seed = 9
workers = 2

[discretization]
h = 0.01

[solver]
count = 6
q0 = 6.0
boundary = "neumann"
"#;
        let cfg = RunConfig::parse(text).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.workers, Some(2));
        assert_eq!(cfg.discretization.h, 0.01);
        assert_eq!(cfg.discretization.grading, 2.0);
        assert_eq!(cfg.solver.boundary, Boundary::Neumann);
        assert_eq!(cfg.delta_exponent(), 3.0);
    }

    #[test]
    fn invalid_values_are_rejected() {
        for text in [
            "experiment = \"nope\"",
            "experiment = \"cusp_rate\"\ncolour = 1",
            "experiment = \"cusp_rate\"\n[geometry]\neps_levels = [0.08, 0.16]",
            "experiment = \"cusp_rate\"\n[geometry]\neps_levels = [0.3]",
            "experiment = \"cusp_rate\"\n[geometry]\neps_reference = 0.01",
            "experiment = \"cusp_rate\"\n[solver]\nk = 0",
            "experiment = \"cusp_rate\"\n[discretization]\nh = -1.0",
            "experiment = \"cusp_rate\"\n[discretization]\nquad_points = 4",
        ] {
            assert!(RunConfig::parse(text).is_err(), "{text}");
        }
    }

    fn experiments() -> impl Strategy<Value = Experiment> {
        prop_oneof![
            Just(Experiment::SquareSanity),
            Just(Experiment::LipschitzRate),
            Just(Experiment::CuspRate),
            Just(Experiment::ProjectorEnsemble),
            Just(Experiment::PropertyP),
        ]
    }

    proptest! {
        #[test]
        fn toml_round_trip(
            exp in experiments(),
            seed in any::<u64>(),
            workers in proptest::option::of(1usize..64),
            h in 1e-3f64..0.5,
            levels in proptest::collection::vec(0.03f64..0.2, 1..5),
            k in 1u32..20,
            q0 in prop_oneof![Just(f64::INFINITY), 2.5f64..100.0],
        ) {
            let mut cfg = RunConfig::new(exp);
            cfg.seed = seed;
            cfg.workers = workers;
            cfg.discretization.h = h;
            let mut levels = levels;
            levels.sort_by(|a, b| b.total_cmp(a));
            levels.dedup();
            cfg.geometry.eps_levels = levels;
            cfg.solver.k = k;
            cfg.solver.q0 = q0;
            let text = cfg.to_toml().unwrap();
            prop_assert_eq!(RunConfig::parse(&text).unwrap(), cfg);
        }
    }
}
