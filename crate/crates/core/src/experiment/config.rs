//! Experiment description, read from TOML. Unknown keys are rejected.
//!
//! ```toml
//! [problem]
//! kind = "deblur"            # deblur | sisr | denoise | custom
//! noise_sigma = 0.01
//! seed = 7
//! kernel = { size = 25, std = 1.6 }
//! synthetic = { kind = "checkerboard", size = 64, cell = 8 }   # or image = "x.png"
//!
//! [prior]
//! kind = "gaussian"          # or "external" with command / address
//! mean = 0.5
//! variance = 0.05
//! length_scale = 3.0
//! nugget = 1e-3
//! noise_std = 0.02
//! stages = [{ q = 4, iters = 30 }, { q = 2, iters = 30 }, { q = 1, iters = 440 }]
//!
//! [solver]
//! gamma = 3.0
//! tau = 1.0
//! stop_tol = 1e-5
//! cg = { max_iters = 3 }
//!
//! [output]
//! dir = "out"
//! ```

use super::synth::SyntheticImage;
use crate::sprox::CgConfig;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemConfig,
    pub prior: PriorConfig,
    pub solver: SolverSection,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    Deblur,
    Sisr,
    Denoise,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub size: usize,
    pub std: f64,
}

/// One factor of a custom measurement operator; factors apply in order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase", deny_unknown_fields)]
pub enum OperatorSpec {
    Identity,
    Blur { size: usize, std: f64 },
    Decimate { factor: usize },
    Bicubic { factor: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub kind: ProblemKind,
    /// Ground-truth image, relative to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticImage>,
    /// Convert color inputs to luminance.
    #[serde(default = "default_true")]
    pub grayscale: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<KernelSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sr_factor: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub operators: Vec<OperatorSpec>,
    pub noise_sigma: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSpec {
    /// Bicubic factor of the prior's degradation; 1 means identity.
    pub q: usize,
    pub iters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum PriorConfig {
    /// Stationary squared-exponential Gaussian prior on the pixel grid.
    Gaussian {
        mean: f64,
        variance: f64,
        length_scale: f64,
        #[serde(default = "default_nugget")]
        nugget: f64,
        noise_std: f64,
        stages: Vec<StageSpec>,
    },
    /// Restorer in a peer process speaking the binary frame protocol.
    External {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        command: Option<Vec<String>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        address: Option<String>,
        #[serde(default = "default_timeout_ms")]
        timeout_ms: u64,
        /// Noise level the peer was trained for; recorded, not used.
        noise_std: f64,
        stages: Vec<StageSpec>,
    },
}

impl PriorConfig {
    pub fn stages(&self) -> &[StageSpec] {
        match self {
            PriorConfig::Gaussian { stages, .. } | PriorConfig::External { stages, .. } => stages,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub gamma: f64,
    pub tau: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub stop_tol: f64,
    #[serde(default)]
    pub cg: CgConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Run directory, relative to the config file.
    #[serde(default = "default_out_dir")]
    pub dir: PathBuf,
    /// Also write `theory.json` (analytic prior only).
    #[serde(default)]
    pub theory: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: default_out_dir(),
            theory: false,
        }
    }
}

fn default_true() -> bool {
    true
}

fn default_nugget() -> f64 {
    1e-3
}

fn default_timeout_ms() -> u64 {
    30_000
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        let cfg: Self = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn total_iters(&self) -> usize {
        self.prior.stages().iter().map(|s| s.iters).sum()
    }

    pub fn validate(&self) -> Result<(), String> {
        let p = &self.problem;
        match (&p.image, &p.synthetic) {
            (Some(_), Some(_)) => return Err("problem: give either image or synthetic, not both".into()),
            (None, None) => return Err("problem: one of image or synthetic is required".into()),
            _ => {}
        }
        if let Some(s) = &p.synthetic {
            s.validate()?;
        }
        if !(p.noise_sigma >= 0.0) || !p.noise_sigma.is_finite() {
            return Err(format!("problem.noise_sigma must be nonnegative, got {}", p.noise_sigma));
        }
        let needs_kernel = matches!(p.kind, ProblemKind::Deblur | ProblemKind::Sisr);
        if needs_kernel && p.kernel.is_none() {
            return Err(format!("problem.kernel is required for {:?}", p.kind).to_lowercase());
        }
        if let Some(k) = p.kernel {
            if k.size % 2 == 0 || !(k.std > 0.0) {
                return Err("problem.kernel needs odd size and positive std".into());
            }
        }
        match p.kind {
            ProblemKind::Sisr => match p.sr_factor {
                Some(d) if d >= 2 => {}
                _ => return Err("problem.sr_factor >= 2 is required for sisr".into()),
            },
            ProblemKind::Custom if p.operators.is_empty() => {
                return Err("problem.operators must list at least one factor for custom".into())
            }
            _ => {}
        }
        if p.kind != ProblemKind::Custom && !p.operators.is_empty() {
            return Err("problem.operators only applies to kind = \"custom\"".into());
        }

        let stages = self.prior.stages();
        if stages.is_empty() {
            return Err("prior.stages must list at least one stage".into());
        }
        if stages.iter().any(|s| s.q == 0) {
            return Err("prior.stages: q must be at least 1".into());
        }
        match &self.prior {
            PriorConfig::Gaussian {
                variance,
                length_scale,
                nugget,
                noise_std,
                mean,
                ..
            } => {
                if !mean.is_finite() || !(*variance > 0.0) || !(*length_scale > 0.0) {
                    return Err("prior: mean must be finite, variance and length_scale positive".into());
                }
                if !(*nugget > 0.0) || !(*noise_std > 0.0) {
                    return Err("prior: nugget and noise_std must be positive".into());
                }
            }
            PriorConfig::External {
                command,
                address,
                timeout_ms,
                ..
            } => {
                match (command, address) {
                    (Some(c), None) if !c.is_empty() => {}
                    (None, Some(_)) => {}
                    _ => return Err("prior: external needs exactly one of a nonempty command or an address".into()),
                }
                if *timeout_ms == 0 {
                    return Err("prior.timeout_ms must be positive".into());
                }
            }
        }

        let s = &self.solver;
        if !(s.gamma > 0.0) || !(s.tau > 0.0) || !s.gamma.is_finite() || !s.tau.is_finite() {
            return Err("solver: gamma and tau must be positive".into());
        }
        if let Some(a) = s.alpha {
            if !(a > 1.0) {
                return Err(format!("solver.alpha must exceed 1, got {a}"));
            }
        }
        if !(s.stop_tol >= 0.0) {
            return Err("solver.stop_tol must be nonnegative".into());
        }
        s.cg.validate().map_err(|e| e.to_string())?;
        Ok(())
    }
}
