//! Experiment configuration: a TOML file with a `[model]` section, optional
//! `[scf]`, `[solver]` and `[ed]` override sections and a handful of
//! top-level keys.
//!
//! ```toml
//! methods = ["ED", "LP", "SDP2"]
//! seed = 7
//! out_dir = "results/chain"
//!
//! [model]
//! family = "spinless_chain"   # or "spinful_lattice"
//! sites = 14                  # or `l_grid = [6, 8, 10]`; lattices use `grid = [lx, ly]`
//! profile = "nnnn"            # nn | nnn | nnnn, chains only
//! u_grid = [1.0, 5.0, 10.0]   # or `u = 5.0`
//! v_ratio = 0.05              # lattices only, V = v_ratio * U
//! n = 9                       # or `filling = 0.667`, rounded to the nearest integer
//! ```

use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use sce_core::conic::SolverConfig;
use sce_core::kssce::{Backend, MixingScheme, ScfConfig};
use sce_core::model::{
    build_spinful_lattice, build_spinless_chain, EdOptions, HamiltonianSpec, InteractionProfile,
};

/// Sector dimension above which ED is skipped unless configured otherwise.
pub const DEFAULT_ED_CAP: u64 = 5_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
pub enum Method {
    #[serde(alias = "ed")]
    ED,
    #[serde(alias = "lp")]
    LP,
    #[serde(alias = "sdp2")]
    SDP2,
    #[serde(alias = "sdp3")]
    SDP3,
}

impl Method {
    pub fn backend(self) -> Option<Backend> {
        match self {
            Method::ED => None,
            Method::LP => Some(Backend::Lp),
            Method::SDP2 => Some(Backend::Sdp2),
            Method::SDP3 => Some(Backend::Sdp3),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Method::ED => "ED",
            Method::LP => "LP",
            Method::SDP2 => "SDP2",
            Method::SDP3 => "SDP3",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    SpinlessChain,
    SpinfulLattice,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::SpinlessChain => "spinless_chain",
            Family::SpinfulLattice => "spinful_lattice",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Nn,
    Nnn,
    Nnnn,
}

impl From<Profile> for InteractionProfile {
    fn from(p: Profile) -> Self {
        match p {
            Profile::Nn => InteractionProfile::Nn,
            Profile::Nnn => InteractionProfile::Nnn,
            Profile::Nnnn => InteractionProfile::Nnnn,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub family: Family,
    pub sites: Option<usize>,
    pub l_grid: Option<Vec<usize>>,
    pub grid: Option<[usize; 2]>,
    pub profile: Option<Profile>,
    pub u: Option<f64>,
    pub u_grid: Option<Vec<f64>>,
    pub v_ratio: Option<f64>,
    pub n: Option<usize>,
    pub filling: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScfSection {
    pub mixing: Option<String>,
    pub alpha: Option<f64>,
    pub anderson_depth: Option<usize>,
    pub tolerance: Option<f64>,
    pub max_iterations: Option<usize>,
    pub stall_window: Option<usize>,
    pub clamp: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub tolerance: Option<f64>,
    pub max_iterations: Option<usize>,
    pub penalty: Option<f64>,
    pub adaptive_penalty: Option<bool>,
    pub relaxation: Option<f64>,
    pub acceleration_memory: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdSection {
    /// Largest particle-number sector ED is attempted on.
    pub max_dimension: Option<u64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub methods: Vec<Method>,
    #[serde(default)]
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    pub model: ModelSection,
    #[serde(default)]
    pub scf: ScfSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub ed: EdSection,
}

/// One model instance of the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub family: Family,
    /// Number of sites (spin orbitals for lattices).
    pub sites: usize,
    pub n: usize,
    pub u: f64,
    /// Nearest-neighbour repulsion, lattices only.
    pub v: Option<f64>,
    profile: Option<Profile>,
    geometry: Option<[usize; 2]>,
}

impl GridPoint {
    pub fn hamiltonian(&self) -> sce_core::Result<HamiltonianSpec> {
        match self.family {
            Family::SpinlessChain => {
                build_spinless_chain(self.sites, self.u, self.profile.expect("chains carry a profile").into())
            }
            Family::SpinfulLattice => {
                let [lx, ly] = self.geometry.expect("lattices carry a geometry");
                build_spinful_lattice(lx, ly, self.u, self.v.unwrap_or(0.0))
            }
        }
    }
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            bail!("`methods` must list at least one of ED, LP, SDP2, SDP3");
        }
        let mut seen = Vec::new();
        for m in &self.methods {
            if seen.contains(m) {
                bail!("method {m} listed twice");
            }
            seen.push(*m);
        }
        let m = &self.model;
        match (m.n, m.filling) {
            (None, None) => bail!("model.n is missing (give `n` or `filling`)"),
            (Some(_), Some(_)) => bail!("model.n and model.filling are mutually exclusive"),
            (None, Some(f)) if !(f > 0.0 && f < 1.0) => bail!("model.filling = {f} must lie in (0, 1)"),
            _ => {}
        }
        match (m.u, &m.u_grid) {
            (None, None) => bail!("model.u is missing (give `u` or `u_grid`)"),
            (Some(_), Some(_)) => bail!("model.u and model.u_grid are mutually exclusive"),
            (_, Some(g)) if g.is_empty() => bail!("model.u_grid is empty"),
            _ => {}
        }
        if self.u_values().iter().any(|u| !u.is_finite()) {
            bail!("model.u values must be finite");
        }
        match m.family {
            Family::SpinlessChain => {
                if m.grid.is_some() || m.v_ratio.is_some() {
                    bail!("model.grid and model.v_ratio apply to spinful_lattice only");
                }
                if m.profile.is_none() {
                    bail!("model.profile is missing (nn, nnn or nnnn)");
                }
                match (m.sites, &m.l_grid) {
                    (None, None) => bail!("model.sites is missing (give `sites` or `l_grid`)"),
                    (Some(_), Some(_)) => bail!("model.sites and model.l_grid are mutually exclusive"),
                    (_, Some(g)) if g.is_empty() => bail!("model.l_grid is empty"),
                    _ => {}
                }
            }
            Family::SpinfulLattice => {
                if m.sites.is_some() || m.l_grid.is_some() || m.profile.is_some() {
                    bail!("spinful_lattice takes `grid = [lx, ly]` instead of sites, l_grid or profile");
                }
                match m.grid {
                    None => bail!("model.grid is missing"),
                    Some([lx, ly]) if lx == 0 || ly == 0 => bail!("model.grid = [{lx}, {ly}] must be positive"),
                    _ => {}
                }
                if let Some(r) = m.v_ratio {
                    if !r.is_finite() {
                        bail!("model.v_ratio must be finite");
                    }
                }
            }
        }
        for p in self.grid_points() {
            if p.n == 0 || p.n >= p.sites {
                bail!("N = {} is outside 1..{} for {} sites", p.n, p.sites, p.sites);
            }
        }
        self.scf_config(Backend::Lp).validate()?;
        if let Some(mix) = &self.scf.mixing {
            mix.parse::<MixingScheme>()?;
        }
        Ok(())
    }

    fn u_values(&self) -> Vec<f64> {
        match (&self.model.u_grid, self.model.u) {
            (Some(g), _) => g.clone(),
            (None, Some(u)) => vec![u],
            (None, None) => Vec::new(),
        }
    }

    fn site_values(&self) -> Vec<usize> {
        let m = &self.model;
        match m.family {
            Family::SpinlessChain => m.l_grid.clone().or(m.sites.map(|l| vec![l])).unwrap_or_default(),
            Family::SpinfulLattice => m.grid.map(|[lx, ly]| vec![2 * lx * ly]).unwrap_or_default(),
        }
    }

    /// Particle number for `sites` sites: either the configured `n` or
    /// `round(filling · sites)`.
    pub fn particles(&self, sites: usize) -> usize {
        match (self.model.n, self.model.filling) {
            (Some(n), _) => n,
            (None, Some(f)) => (f * sites as f64).round() as usize,
            (None, None) => 0,
        }
    }

    /// All grid points, site count outermost and `U` innermost.
    pub fn grid_points(&self) -> Vec<GridPoint> {
        let m = &self.model;
        let mut out = Vec::new();
        for sites in self.site_values() {
            for u in self.u_values() {
                out.push(GridPoint {
                    family: m.family,
                    sites,
                    n: self.particles(sites),
                    u,
                    v: (m.family == Family::SpinfulLattice).then(|| m.v_ratio.unwrap_or(0.0) * u),
                    profile: m.profile,
                    geometry: m.grid,
                });
            }
        }
        out
    }

    pub fn ed_cap(&self) -> u64 {
        self.ed.max_dimension.unwrap_or(DEFAULT_ED_CAP)
    }

    pub fn ed_options(&self) -> EdOptions {
        EdOptions { seed: self.seed, ..Default::default() }
    }

    pub fn solver_config(&self) -> SolverConfig {
        let s = &self.solver;
        let d = ScfConfig::default().solver;
        SolverConfig {
            tolerance: s.tolerance.unwrap_or(d.tolerance),
            max_iterations: s.max_iterations.unwrap_or(d.max_iterations),
            penalty: s.penalty.unwrap_or(d.penalty),
            adaptive_penalty: s.adaptive_penalty.unwrap_or(d.adaptive_penalty),
            relaxation: s.relaxation.unwrap_or(d.relaxation),
            acceleration_memory: s.acceleration_memory.unwrap_or(d.acceleration_memory),
            ..d
        }
    }

    pub fn scf_config(&self, backend: Backend) -> ScfConfig {
        let s = &self.scf;
        let d = ScfConfig::with_backend(backend);
        ScfConfig {
            mixing: s.mixing.as_deref().and_then(|m| m.parse().ok()).unwrap_or(d.mixing),
            alpha: s.alpha.unwrap_or(d.alpha),
            anderson_depth: s.anderson_depth.unwrap_or(d.anderson_depth),
            tolerance: s.tolerance.unwrap_or(d.tolerance),
            max_iterations: s.max_iterations.unwrap_or(d.max_iterations),
            stall_window: s.stall_window.unwrap_or(d.stall_window),
            clamp: s.clamp.unwrap_or(d.clamp),
            solver: self.solver_config(),
            ..d
        }
    }
}
