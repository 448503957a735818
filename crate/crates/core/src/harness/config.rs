//! TOML experiment configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::assembly::ExteriorDatum;
use crate::coeffrec::{AdmmOptions, MethodParams};
use crate::error::{Error, Result};
use crate::forward::{ForwardOptions, InverseCrime};
use crate::geometry::DomainSpec;
use crate::staterec::{PowerRule, StateSolver};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub domain: DomainSpec,
    /// Fractional order.
    pub s: f64,
    pub potential: PotentialPreset,
    #[serde(default)]
    pub datum: DatumConfig,
    pub noise: NoiseConfig,
    #[serde(default)]
    pub alpha: PowerRule,
    #[serde(default)]
    pub solver: StateSolver,
    pub alpha_q: AlphaQScheme,
    #[serde(default = "default_method")]
    pub method: String,
    #[serde(default)]
    pub tv: TvConfig,
    #[serde(default)]
    pub forward: ForwardConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    /// Noise level shown in single-level figures; defaults to the ladder entry closest to `1e-8`.
    #[serde(default)]
    pub representative_delta: Option<f64>,
    /// Directory for cached operators; no caching when absent.
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
}

fn default_method() -> String {
    "quadratic".into()
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Ground-truth potential, supported inside the domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialPreset {
    /// `a (r² - x²)_+`.
    Bump1d { a: f64, r: f64 },
    /// Indicator of `(-c, c)`.
    Indicator1d { c: f64 },
    /// `a (r² - x²)_+³ (r² - y²)_+³`.
    Bump2d { a: f64, r: f64 },
    /// Piecewise linear in 1D (`y` absent) or bilinear on a tensor grid in 2D;
    /// zero outside the table. `values` is x-major.
    Table {
        x: Vec<f64>,
        #[serde(default)]
        y: Option<Vec<f64>>,
        values: Vec<f64>,
    },
}

impl PotentialPreset {
    pub fn eval(&self, p: &[f64; 2]) -> f64 {
        match self {
            PotentialPreset::Bump1d { a, r } => a * (r * r - p[0] * p[0]).max(0.0),
            PotentialPreset::Indicator1d { c } => {
                if p[0].abs() < *c {
                    1.0
                } else {
                    0.0
                }
            }
            PotentialPreset::Bump2d { a, r } => {
                let r2 = r * r;
                a * (r2 - p[0] * p[0]).max(0.0).powi(3) * (r2 - p[1] * p[1]).max(0.0).powi(3)
            }
            PotentialPreset::Table { x, y, values } => match y {
                None => match bracket(x, p[0]) {
                    Some((i, t)) => (1.0 - t) * values[i] + t * values[i + 1],
                    None => 0.0,
                },
                Some(y) => match (bracket(x, p[0]), bracket(y, p[1])) {
                    (Some((i, tx)), Some((j, ty))) => {
                        let ny = y.len();
                        let v = |a: usize, b: usize| values[a * ny + b];
                        (1.0 - tx) * ((1.0 - ty) * v(i, j) + ty * v(i, j + 1))
                            + tx * ((1.0 - ty) * v(i + 1, j) + ty * v(i + 1, j + 1))
                    }
                    _ => 0.0,
                },
            },
        }
    }

    /// `‖q‖_∞`.
    pub fn sup_norm(&self) -> f64 {
        match self {
            PotentialPreset::Bump1d { a, r } => (a * r * r).abs(),
            PotentialPreset::Indicator1d { .. } => 1.0,
            PotentialPreset::Bump2d { a, r } => (a * r.powi(12)).abs(),
            PotentialPreset::Table { values, .. } => values.iter().map(|v| v.abs()).fold(0.0, f64::max),
        }
    }

    pub fn validate(&self, spec: &DomainSpec) -> Result<()> {
        let a = spec.omega_half;
        let want_dim = |d: usize| {
            if spec.dim == d {
                Ok(())
            } else {
                Err(Error::Config(format!(
                    "potential preset needs dim = {d}, domain has dim = {}",
                    spec.dim
                )))
            }
        };
        let inside = |half: f64| {
            if half > 0.0 && half < a {
                Ok(())
            } else {
                Err(Error::Config(format!(
                    "potential support half-width {half} must lie in (0, {a})"
                )))
            }
        };
        match self {
            PotentialPreset::Bump1d { r, .. } => {
                want_dim(1)?;
                inside(*r)
            }
            PotentialPreset::Indicator1d { c } => {
                want_dim(1)?;
                inside(*c)
            }
            PotentialPreset::Bump2d { r, .. } => {
                want_dim(2)?;
                inside(*r)
            }
            PotentialPreset::Table { x, y, values } => {
                let axes: Vec<&Vec<f64>> = match y {
                    None => {
                        want_dim(1)?;
                        vec![x]
                    }
                    Some(y) => {
                        want_dim(2)?;
                        vec![x, y]
                    }
                };
                for ax in &axes {
                    if ax.len() < 2 || ax.windows(2).any(|w| w[1] <= w[0]) {
                        return Err(Error::Config("table axes need at least two increasing entries".into()));
                    }
                    if ax[0] <= -a || ax[ax.len() - 1] >= a {
                        return Err(Error::Config(
                            "table potential must be supported inside the domain".into(),
                        ));
                    }
                }
                let n: usize = axes.iter().map(|ax| ax.len()).product();
                if values.len() != n {
                    return Err(Error::Config(format!(
                        "table has {} values, expected {n}",
                        values.len()
                    )));
                }
                Ok(())
            }
        }
    }
}

fn bracket(axis: &[f64], x: f64) -> Option<(usize, f64)> {
    let n = axis.len();
    if x < axis[0] || x > axis[n - 1] {
        return None;
    }
    let i = axis.partition_point(|&v| v <= x).clamp(1, n - 1) - 1;
    Some((i, (x - axis[i]) / (axis[i + 1] - axis[i])))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatumConfig {
    /// Width of the cutoff transition at the inner edge of the observation set.
    pub width: f64,
}

impl Default for DatumConfig {
    fn default() -> Self {
        Self { width: 0.1 }
    }
}

impl DatumConfig {
    pub fn datum(&self) -> ExteriorDatum {
        ExteriorDatum::Cutoff { width: self.width }
    }
}

/// Either an explicit list or a log-spaced ladder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    #[serde(default)]
    pub deltas: Vec<f64>,
    #[serde(default)]
    pub ladder: Option<Ladder>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ladder {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl NoiseConfig {
    /// Noise levels in increasing order.
    pub fn levels(&self) -> Result<Vec<f64>> {
        let list = match (&self.ladder, self.deltas.is_empty()) {
            (Some(_), false) => {
                return Err(Error::Config(
                    "give either noise.deltas or noise.ladder, not both".into(),
                ))
            }
            (None, true) => return Err(Error::Config("noise.deltas is empty".into())),
            (None, false) => self.deltas.clone(),
            (Some(l), true) => {
                if !(l.min > 0.0 && l.max > l.min) || l.count < 2 {
                    return Err(Error::Config("noise ladder needs 0 < min < max and count >= 2".into()));
                }
                let (a, b) = (l.min.log10(), l.max.log10());
                (0..l.count)
                    .map(|i| 10f64.powf(a + (b - a) * i as f64 / (l.count - 1) as f64))
                    .collect()
            }
        };
        if list.iter().any(|&d| !(d > 0.0 && d.is_finite())) {
            return Err(Error::Config("noise levels must be positive".into()));
        }
        if list.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("noise levels must be strictly increasing".into()));
        }
        Ok(list)
    }
}

/// Rule for the coefficient stabilisation weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AlphaQScheme {
    /// `c δ`.
    Linear { c: f64 },
    /// `max(c δ^p, floor)`.
    Power {
        c: f64,
        #[serde(default = "default_p")]
        p: f64,
        #[serde(default = "default_floor")]
        floor: f64,
    },
}

fn default_p() -> f64 {
    1.5
}

fn default_floor() -> f64 {
    1e-14
}

impl AlphaQScheme {
    pub fn value(&self, delta: f64) -> Result<f64> {
        let v = match *self {
            AlphaQScheme::Linear { c } => c * delta,
            AlphaQScheme::Power { c, p, floor } => (c * delta.powf(p)).max(floor),
        };
        if v > 0.0 && v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Parameter(format!("alpha_q rule gives {v} at delta = {delta}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TvConfig {
    /// Fixed weight; selected adaptively when absent.
    #[serde(default)]
    pub alpha_tv: Option<f64>,
    pub tol: f64,
    pub max_iter: usize,
    pub balance_every: usize,
    pub debias: bool,
}

impl Default for TvConfig {
    fn default() -> Self {
        let a = AdmmOptions::default();
        Self {
            alpha_tv: None,
            tol: a.tol,
            max_iter: a.max_iter,
            balance_every: a.balance_every,
            debias: true,
        }
    }
}

impl TvConfig {
    pub fn params(&self, alpha_q: f64) -> MethodParams {
        MethodParams {
            alpha_q,
            alpha_tv: self.alpha_tv,
            admm: AdmmOptions {
                tol: self.tol,
                max_iter: self.max_iter,
                rho: None,
                balance_every: self.balance_every,
            },
            debias: self.debias,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForwardConfig {
    /// Ratio `h / h_fine` of the data mesh.
    pub refinement: usize,
    pub inverse_crime: InverseCrime,
}

impl Default for ForwardConfig {
    fn default() -> Self {
        let f = ForwardOptions::default();
        Self {
            refinement: f.refinement,
            inverse_crime: f.inverse_crime,
        }
    }
}

impl ForwardConfig {
    pub fn options(&self) -> ForwardOptions {
        ForwardOptions {
            refinement: self.refinement,
            inverse_crime: self.inverse_crime,
            ..ForwardOptions::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsConfig {
    /// Truncation radii for the tail term.
    pub r_list: Vec<f64>,
    /// Number of mesh levels `h, h/2, ...` in the table.
    pub h_levels: usize,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            r_list: Vec::new(),
            h_levels: 2,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            e => e,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.domain.validate()?;
        crate::kernel::FracOrder::new(self.s, self.domain.dim).map_err(|e| Error::Config(e.to_string()))?;
        self.potential.validate(&self.domain)?;
        if !(self.datum.width > 0.0) {
            return Err(Error::Config("datum.width must be positive".into()));
        }
        let levels = self.noise.levels()?;
        for &d in &levels {
            crate::staterec::alpha_rule(d, &self.alpha).map_err(|e| Error::Config(e.to_string()))?;
            self.alpha_q.value(d).map_err(|e| Error::Config(e.to_string()))?;
        }
        crate::coeffrec::MethodRegistry::default().get(&self.method)?;
        if self.forward.refinement == 0 {
            return Err(Error::Config("forward.refinement must be at least 1".into()));
        }
        if self.diagnostics.r_list.iter().any(|&r| r < self.domain.r) {
            return Err(Error::Config(
                "diagnostics.r_list entries must be at least domain.r".into(),
            ));
        }
        Ok(())
    }

    /// Replaces the noise ladder by a single level.
    pub fn with_delta(mut self, delta: f64) -> Self {
        self.noise = NoiseConfig {
            deltas: vec![delta],
            ladder: None,
        };
        self
    }

    /// Ladder level shown in single-level figures.
    pub fn representative(&self, levels: &[f64]) -> f64 {
        let target = self.representative_delta.unwrap_or(1e-8).log10();
        levels
            .iter()
            .copied()
            .min_by(|a, b| (a.log10() - target).abs().total_cmp(&(b.log10() - target).abs()))
            .unwrap_or(target)
    }

    /// Seed of the noise draw for ladder entry `i`.
    pub fn seed_for(&self, i: usize) -> u64 {
        self.seed.wrapping_add(i as u64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EX41: &str = r#"
name = "t"
s = 0.6
method = "quadratic"
[domain]
dim = 1
r = 3.0
omega_half = 1.0
eps_gap = 0.05
h = 0.05
omega_prime = { lo = [-0.75, 0.0], hi = [0.75, 0.0] }
[potential]
kind = "bump1d"
a = 10.0
r = 0.8660254037844386
[noise]
deltas = [1e-7, 1e-5]
[alpha_q]
kind = "linear"
c = 0.01
"#;

    #[test]
    fn parses_and_applies_defaults() {
        let cfg = ExperimentConfig::from_toml(EX41).unwrap();
        assert_eq!(cfg.alpha, PowerRule::default());
        assert_eq!(cfg.forward.refinement, 2);
        assert_eq!(cfg.noise.levels().unwrap(), vec![1e-7, 1e-5]);
        assert!((cfg.potential.eval(&[0.0, 0.0]) - 7.5).abs() < 1e-12);
        let again = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn rejects_bad_ladders() {
        let unsorted = EX41.replace("[1e-7, 1e-5]", "[1e-5, 1e-7]");
        assert!(ExperimentConfig::from_toml(&unsorted).unwrap_err().is_config());
        let method = EX41.replace("\"quadratic\"", "\"lasso\"");
        assert!(ExperimentConfig::from_toml(&method).unwrap_err().is_config());
    }

    #[test]
    fn ladder_is_log_spaced() {
        let n = NoiseConfig {
            deltas: vec![],
            ladder: Some(Ladder {
                min: 1e-10,
                max: 1e-6,
                count: 5,
            }),
        };
        let l = n.levels().unwrap();
        for (i, d) in l.iter().enumerate() {
            assert!((d.log10() - (-10.0 + i as f64)).abs() < 1e-12);
        }
    }

    #[test]
    fn alpha_q_schemes() {
        assert!((AlphaQScheme::Linear { c: 0.01 }.value(1e-7).unwrap() - 1e-9).abs() < 1e-24);
        let p = AlphaQScheme::Power {
            c: 1e6,
            p: 1.5,
            floor: 1e-14,
        };
        assert!((p.value(1e-8).unwrap() - 1e-6).abs() < 1e-18);
        assert_eq!(p.value(1e-30).unwrap(), 1e-14);
    }

    #[test]
    fn table_potential_interpolates() {
        let t = PotentialPreset::Table {
            x: vec![-0.5, 0.0, 0.5],
            y: None,
            values: vec![0.0, 2.0, 0.0],
        };
        assert!((t.eval(&[0.25, 0.0]) - 1.0).abs() < 1e-15);
        assert_eq!(t.eval(&[0.75, 0.0]), 0.0);
        let b = PotentialPreset::Bump2d { a: 100.0, r: 0.75 };
        assert!((b.eval(&[0.0, 0.0]) - 100.0 * 0.5625f64.powi(6)).abs() < 1e-12);
        assert!((b.sup_norm() - b.eval(&[0.0, 0.0])).abs() < 1e-12);
    }
}
