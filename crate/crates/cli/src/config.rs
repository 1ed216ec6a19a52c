//! Declarative run configuration: a sectioned TOML file, schema-validated
//! with precise error locations (the TOML parser reports line/column; the
//! semantic checks report the offending key).

use std::path::{Path, PathBuf};

use msplit::linops::MismatchSchedule;
use msplit::solvers::Algorithm;
use msplit::stepsize::RhoPolicy;
use msplit::tomo::{CtPenalties, Geometry, PhantomKind};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemSection,
    #[serde(default)]
    pub geometry: GeometrySection,
    #[serde(default)]
    pub penalties: PenaltiesSection,
    #[serde(default)]
    pub quadratic: QuadraticSection,
    #[serde(default)]
    pub mismatch: MismatchSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    CtDesk,
    QuadraticSynthetic,
    CustomFile,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub kind: ProblemKind,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Problem description file for `custom_file`.
    #[serde(default)]
    pub path: Option<PathBuf>,
}

fn default_seed() -> u64 {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeometrySection {
    pub n_pixels_side: usize,
    pub n_angles: usize,
    pub n_bins: usize,
    pub bin_upsampling: f64,
    pub phantom: PhantomKind,
}

impl Default for GeometrySection {
    fn default() -> Self {
        let g = Geometry::desk_default();
        Self {
            n_pixels_side: g.n_pixels_side,
            n_angles: g.n_angles,
            n_bins: g.n_bins,
            bin_upsampling: g.bin_upsampling,
            phantom: PhantomKind::Disks,
        }
    }
}

impl GeometrySection {
    pub fn geometry(&self) -> Geometry {
        Geometry {
            n_pixels_side: self.n_pixels_side,
            n_angles: self.n_angles,
            n_bins: self.n_bins,
            bin_upsampling: self.bin_upsampling,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PenaltiesSection {
    pub weight: f64,
    pub delta: f64,
    pub alpha: f64,
    pub x_max: f64,
    pub sigma: f64,
    pub rho_margin: f64,
    /// Explicit ρ override for ablation runs.
    pub rho_fixed: Option<f64>,
    pub haar_levels: usize,
}

impl Default for PenaltiesSection {
    fn default() -> Self {
        let p = CtPenalties::default();
        Self {
            weight: p.weight,
            delta: p.delta,
            alpha: p.alpha,
            x_max: p.x_max,
            sigma: 200.0,
            rho_margin: 1e-3,
            rho_fixed: None,
            haar_levels: p.haar_levels,
        }
    }
}

impl PenaltiesSection {
    pub fn rho_policy(&self) -> RhoPolicy {
        match self.rho_fixed {
            Some(rho) => RhoPolicy::Fixed { rho },
            None => RhoPolicy::Recipe {
                margin: self.rho_margin,
            },
        }
    }

    pub fn ct_penalties(&self) -> CtPenalties {
        CtPenalties {
            weight: self.weight,
            delta: self.delta,
            alpha: self.alpha,
            x_max: self.x_max,
            rho_policy: self.rho_policy(),
            haar_levels: self.haar_levels,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadraticSection {
    pub dim: usize,
    pub data_dim: usize,
    pub alpha: f64,
    /// Constant mismatch `‖L* − K‖` of the surrogate adjoint itself.
    pub mismatch_strength: f64,
    pub b_scale: f64,
    pub c_scale: f64,
    pub x_max: f64,
    pub rho_margin: f64,
    pub rho_fixed: Option<f64>,
}

impl Default for QuadraticSection {
    fn default() -> Self {
        Self {
            dim: 16,
            data_dim: 24,
            alpha: 0.5,
            mismatch_strength: 0.05,
            b_scale: 0.3,
            c_scale: 1.0,
            x_max: 10.0,
            rho_margin: 0.1,
            rho_fixed: None,
        }
    }
}

impl QuadraticSection {
    pub fn rho_policy(&self) -> RhoPolicy {
        match self.rho_fixed {
            Some(rho) => RhoPolicy::Fixed { rho },
            None => RhoPolicy::Recipe {
                margin: self.rho_margin,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Constant,
    Geometric,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MismatchSection {
    pub schedule: ScheduleKind,
    pub omega0: f64,
    pub eta_bar: f64,
}

impl Default for MismatchSection {
    fn default() -> Self {
        Self {
            schedule: ScheduleKind::Constant,
            omega0: 0.0,
            eta_bar: 0.0,
        }
    }
}

impl MismatchSection {
    pub fn schedule(&self) -> MismatchSchedule {
        match self.schedule {
            ScheduleKind::Constant => MismatchSchedule::Constant,
            ScheduleKind::Geometric => MismatchSchedule::Geometric {
                omega0: self.omega0,
                eta_bar: self.eta_bar,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[clap(rename_all = "snake_case")]
pub enum AlgorithmChoice {
    Mmfbhf,
    Mmfdrf,
    Both,
}

impl AlgorithmChoice {
    pub fn algorithms(self) -> Vec<Algorithm> {
        match self {
            AlgorithmChoice::Mmfbhf => vec![Algorithm::Mmfbhf],
            AlgorithmChoice::Mmfdrf => vec![Algorithm::Mmfdrf],
            AlgorithmChoice::Both => vec![Algorithm::Mmfbhf, Algorithm::Mmfdrf],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub algorithm: AlgorithmChoice,
    pub max_iter: usize,
    pub tol: f64,
    pub record_every: usize,
    pub safety_fbhf: f64,
    pub safety_fdrf: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        Self {
            algorithm: AlgorithmChoice::Mmfbhf,
            max_iter: 5000,
            tol: 1e-6,
            record_every: 10,
            safety_fbhf: 0.9975,
            safety_fdrf: 0.999,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub write_iterates: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            write_iterates: false,
        }
    }
}

/// CLI flag overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub algorithm: Option<AlgorithmChoice>,
    pub max_iter: Option<usize>,
}

impl RunConfig {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        let mut config: RunConfig = toml::from_str(&text).map_err(|e| {
            CliError::Config(format!("config {}: {e}", path.display()))
        })?;
        if let Some(seed) = overrides.seed {
            config.problem.seed = seed;
        }
        if let Some(out) = &overrides.out {
            config.output.dir = out.clone();
        }
        if let Some(alg) = overrides.algorithm {
            config.solver.algorithm = alg;
        }
        if let Some(max_iter) = overrides.max_iter {
            config.solver.max_iter = max_iter;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let mut problems = Vec::new();
        if self.problem.kind == ProblemKind::CustomFile && self.problem.path.is_none() {
            problems.push("problem.path: required for kind = \"custom_file\"".to_string());
        }
        if self.mismatch.schedule == ScheduleKind::Geometric {
            if !(0.0..1.0).contains(&self.mismatch.eta_bar) {
                problems.push(format!(
                    "mismatch.eta_bar: must lie in [0, 1), got {}",
                    self.mismatch.eta_bar
                ));
            }
            if self.mismatch.omega0 < 0.0 {
                problems.push(format!(
                    "mismatch.omega0: must be nonnegative, got {}",
                    self.mismatch.omega0
                ));
            }
        }
        if self.solver.max_iter == 0 {
            problems.push("solver.max_iter: must be at least 1".to_string());
        }
        if self.solver.record_every == 0 {
            problems.push("solver.record_every: must be at least 1".to_string());
        }
        if self.solver.tol < 0.0 || self.solver.tol.is_nan() {
            problems.push(format!(
                "solver.tol: must be nonnegative, got {}",
                self.solver.tol
            ));
        }
        for (name, v) in [
            ("solver.safety_fbhf", self.solver.safety_fbhf),
            ("solver.safety_fdrf", self.solver.safety_fdrf),
        ] {
            if !(v > 0.0 && v < 1.0) {
                problems.push(format!("{name}: must lie in (0, 1), got {v}"));
            }
        }
        if self.problem.kind == ProblemKind::CtDesk {
            let g = &self.geometry;
            if g.n_pixels_side == 0 || g.n_angles == 0 || g.n_bins == 0 {
                problems.push("geometry: all counts must be positive".to_string());
            }
            if self.penalties.sigma < 0.0 {
                problems.push(format!(
                    "penalties.sigma: must be nonnegative, got {}",
                    self.penalties.sigma
                ));
            }
            for (name, v) in [
                ("penalties.weight", self.penalties.weight),
                ("penalties.delta", self.penalties.delta),
                ("penalties.x_max", self.penalties.x_max),
            ] {
                if v <= 0.0 || v.is_nan() {
                    problems.push(format!("{name}: must be positive, got {v}"));
                }
            }
            if self.penalties.alpha < 0.0 {
                problems.push(format!(
                    "penalties.alpha: must be nonnegative, got {}",
                    self.penalties.alpha
                ));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(CliError::Config(problems.join("\n")))
        }
    }

    /// Hash of the matched-problem definition: geometry, data seed, and
    /// penalties, but not the surrogate-adjoint strength, the perturbation
    /// schedule, or any solver setting. Runs are comparable when they solve
    /// perturbations of the same underlying problem.
    pub fn problem_hash(&self) -> Result<String, CliError> {
        #[derive(Serialize)]
        struct HashView<'a> {
            kind: &'a ProblemKind,
            seed: u64,
            geometry: Option<&'a GeometrySection>,
            penalties: Option<&'a PenaltiesSection>,
            quadratic_core: Option<(usize, usize, String, String, String, String)>,
            custom_digest: Option<String>,
        }
        let view = match self.problem.kind {
            ProblemKind::CtDesk => HashView {
                kind: &self.problem.kind,
                seed: self.problem.seed,
                geometry: Some(&self.geometry),
                penalties: Some(&self.penalties),
                quadratic_core: None,
                custom_digest: None,
            },
            ProblemKind::QuadraticSynthetic => {
                let q = &self.quadratic;
                HashView {
                    kind: &self.problem.kind,
                    seed: self.problem.seed,
                    geometry: None,
                    penalties: None,
                    quadratic_core: Some((
                        q.dim,
                        q.data_dim,
                        format!("{}", q.alpha),
                        format!("{}", q.b_scale),
                        format!("{}", q.c_scale),
                        format!("{}", q.x_max),
                    )),
                    custom_digest: None,
                }
            }
            ProblemKind::CustomFile => {
                let path = self.problem.path.as_ref().expect("validated");
                let bytes = std::fs::read(path).map_err(|e| {
                    CliError::Config(format!("cannot read {}: {e}", path.display()))
                })?;
                HashView {
                    kind: &self.problem.kind,
                    seed: self.problem.seed,
                    geometry: None,
                    penalties: None,
                    quadratic_core: None,
                    custom_digest: Some(hex_digest(&bytes)),
                }
            }
        };
        let canonical = serde_json::to_string(&view)
            .map_err(|e| CliError::Config(format!("hashing failed: {e}")))?;
        Ok(hex_digest(canonical.as_bytes()))
    }
}

fn hex_digest(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let out = hasher.finalize();
    let mut s = String::with_capacity(out.len() * 2);
    for b in out {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

/// Dense problem description accepted by `kind = "custom_file"`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomProblemFile {
    /// Forward operator, row-major (data_dim × dim).
    pub l: Vec<Vec<f64>>,
    /// Surrogate adjoint (dim × data_dim); defaults to the exact transpose.
    #[serde(default)]
    pub k: Option<Vec<Vec<f64>>>,
    /// SPD cocoercive block (dim × dim).
    pub c: Vec<Vec<f64>>,
    /// Monotone data-space block (data_dim × data_dim); defaults to zero.
    #[serde(default)]
    pub b: Option<Vec<Vec<f64>>>,
    pub offset: Vec<f64>,
    pub alpha: f64,
    pub x_max: f64,
    /// Explicit ρ; omit to use the recipe with `rho_margin`.
    #[serde(default)]
    pub rho: Option<f64>,
    #[serde(default = "default_margin")]
    pub rho_margin: f64,
}

fn default_margin() -> f64 {
    1e-3
}

impl CustomProblemFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Config(format!("cannot read problem file {}: {e}", path.display()))
        })?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("problem file {}: {e}", path.display())))
    }

    pub fn rho_policy(&self) -> RhoPolicy {
        match self.rho {
            Some(rho) => RhoPolicy::Fixed { rho },
            None => RhoPolicy::Recipe {
                margin: self.rho_margin,
            },
        }
    }
}
