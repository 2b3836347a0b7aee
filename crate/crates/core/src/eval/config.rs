use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::FilterConfig;
use crate::graph::{read_edge_list, RoadGraph};
use crate::motion::NoiseConfig;
use crate::search::SearchConfig;
use crate::sim::{SimConfig, Start};
use crate::transition::{TransitionParams, TransitionPrior};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FilterKind {
    #[serde(rename = "PL")]
    Pl,
    #[serde(rename = "BS")]
    Bs,
}

impl FilterKind {
    pub fn label(self) -> &'static str {
        match self {
            FilterKind::Pl => "PL",
            FilterKind::Bs => "BS",
        }
    }
}

impl fmt::Display for FilterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for FilterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "PL" => Ok(FilterKind::Pl),
            "BS" => Ok(FilterKind::Bs),
            _ => Err(Error::Config(format!(
                "unknown filter {s:?}; expected PL or BS"
            ))),
        }
    }
}

/// Road network used by a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GraphSource {
    Grid {
        rows: usize,
        cols: usize,
        spacing: f64,
    },
    /// Edge list file; relative paths resolve against the config file.
    File { path: PathBuf },
}

impl Default for GraphSource {
    fn default() -> Self {
        GraphSource::Grid {
            rows: 20,
            cols: 20,
            spacing: 200.0,
        }
    }
}

impl GraphSource {
    pub fn load(&self) -> Result<RoadGraph> {
        match self {
            GraphSource::Grid {
                rows,
                cols,
                spacing,
            } => RoadGraph::grid(*rows, *cols, *spacing),
            GraphSource::File { path } => read_edge_list(path),
        }
    }
}

/// Filter settings that are not shared with the simulation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterOptions {
    pub init_radius: f64,
    pub init_speed_var: f64,
    pub resample_threshold: f64,
    pub parallel: bool,
}

impl Default for FilterOptions {
    fn default() -> Self {
        let d = FilterConfig::default();
        Self {
            init_radius: d.init_radius,
            init_speed_var: d.init_speed_var,
            resample_threshold: d.resample_threshold,
            parallel: d.parallel,
        }
    }
}

/// Everything needed to reproduce an experiment, read from a TOML file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Independent simulated trajectories, seeded `seed, seed + 1, …`.
    pub replicates: usize,
    /// Observations per trajectory.
    pub steps: usize,
    pub filters: Vec<FilterKind>,
    pub particles: Vec<usize>,
    pub output: PathBuf,
    /// Threads for independent (trajectory, filter, size) cells; 0 uses all
    /// cores. Outputs do not depend on this setting.
    pub workers: usize,
    pub graph: GraphSource,
    pub noise: NoiseConfig,
    /// Transition parameters of the simulation (and of the bootstrap filter).
    pub truth: TransitionParams,
    pub start: Start,
    pub preserve_speed: bool,
    pub prior: TransitionPrior,
    pub search: SearchConfig,
    pub filter: FilterOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            replicates: 1,
            steps: 1000,
            filters: vec![FilterKind::Pl, FilterKind::Bs],
            particles: vec![25],
            output: PathBuf::from("results"),
            workers: 0,
            graph: GraphSource::default(),
            noise: NoiseConfig::default(),
            truth: TransitionParams::default(),
            start: Start::Random,
            preserve_speed: false,
            prior: TransitionPrior::default(),
            search: SearchConfig::default(),
            filter: FilterOptions::default(),
        }
    }
}

impl RunConfig {
    /// Parses TOML, reporting the line of the first problem.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start].matches('\n').count() + 1)
                .unwrap_or(0);
            Error::Parse {
                line,
                message: e.message().to_string(),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; a relative graph path is taken relative to it.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg = Self::from_toml(&std::fs::read_to_string(path)?)?;
        if let GraphSource::File { path: graph } = &mut cfg.graph {
            if graph.is_relative() {
                if let Some(dir) = path.parent() {
                    *graph = dir.join(&*graph);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 || self.steps == 0 {
            return Err(Error::Config(
                "replicates and steps must be at least 1".into(),
            ));
        }
        if self.filters.is_empty() {
            return Err(Error::Config("no filters selected".into()));
        }
        if self.particles.is_empty() || self.particles.contains(&0) {
            return Err(Error::Config(
                "particle counts must be a non-empty list of positive integers".into(),
            ));
        }
        if let GraphSource::Grid {
            rows,
            cols,
            spacing,
        } = self.graph
        {
            if rows < 2 || cols < 2 || !(spacing > 0.0 && spacing.is_finite()) {
                return Err(Error::Config(
                    "grid needs at least 2×2 nodes and a positive spacing".into(),
                ));
            }
        }
        self.sim_config(self.seed).validate()?;
        self.filter_config(1, self.seed).validate()
    }

    pub fn sim_config(&self, seed: u64) -> SimConfig {
        SimConfig {
            noise: self.noise,
            params: self.truth,
            steps: self.steps,
            seed,
            start: self.start,
            preserve_speed: self.preserve_speed,
        }
    }

    pub fn filter_config(&self, particles: usize, seed: u64) -> FilterConfig {
        FilterConfig {
            particles,
            noise: self.noise,
            search: self.search,
            prior: self.prior,
            init_radius: self.filter.init_radius,
            init_speed_var: self.filter.init_speed_var,
            resample_threshold: self.filter.resample_threshold,
            preserve_speed: self.preserve_speed,
            parallel: self.filter.parallel,
            seed,
        }
    }

    /// Seeds of the simulated trajectories.
    pub fn replicate_seeds(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.replicates as u64).map(move |r| self.seed.wrapping_add(r))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_config_fills_defaults() {
        let cfg = RunConfig::from_toml(
            r#"
seed = 7
filters = ["PL"]
particles = [10, 20]

[graph]
kind = "grid"
rows = 5
cols = 6
spacing = 50.0

[truth]
pi_g = 0.5
pi_r = 0.9

[noise]
sigma2_g = 6.25e-3
"#,
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.filters, vec![FilterKind::Pl]);
        assert_eq!(cfg.truth, TransitionParams::new(0.5, 0.9).unwrap());
        assert_eq!(cfg.noise.sigma2_g, 6.25e-3);
        assert_eq!(cfg.noise.dt, 30.0);
        assert_eq!(cfg.prior, TransitionPrior::default());
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = RunConfig::from_toml("seed = 1\nparticles = [10]\nbogus = 3\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err:?}");
        let err =
            RunConfig::from_toml("seed = 1\n\n[truth]\npi_g = 1.5\npi_r = 0.9\n").unwrap_err();
        assert!(matches!(err, Error::Parse { .. }), "{err:?}");
        assert!(RunConfig::from_toml("particles = [0]").is_err());
        assert!(RunConfig::from_toml("filters = [\"XX\"]").is_err());
    }

    #[test]
    fn filter_names_parse() {
        assert_eq!("pl".parse::<FilterKind>().unwrap(), FilterKind::Pl);
        assert_eq!("BS".parse::<FilterKind>().unwrap(), FilterKind::Bs);
        assert!("kf".parse::<FilterKind>().is_err());
    }
}
