//! Layered run configuration: defaults, then a `key=value` config file,
//! then command-line flags (flags win). Every run writes a manifest of the
//! resolved values so artifacts can be reproduced exactly.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};

use turbo_godec::csp::{CspParams, NoiseEstimation};
use turbo_godec::godec::{GodecParams, ResidualExponent};
use turbo_godec::synth::{AnomalyLayout, ClusterSpec, SceneSpec};

/// Detection method selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Grx,
    Lsmad,
    Turbo,
}

impl Method {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "grx" => Ok(Method::Grx),
            "lsmad" => Ok(Method::Lsmad),
            "turbo" => Ok(Method::Turbo),
            other => bail!("unknown method {other:?} (expected grx, lsmad or turbo)"),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Method::Grx => "grx",
            Method::Lsmad => "lsmad",
            Method::Turbo => "turbo",
        }
    }
}

/// Flag values as given on the command line (all optional).
#[derive(Debug, Clone, Default)]
pub struct ParamOverrides {
    pub method: Option<String>,
    pub rank: Option<usize>,
    pub card: Option<usize>,
    pub eps: Option<f64>,
    pub outer_iters: Option<usize>,
    pub inner_iters: Option<usize>,
    pub psi00: Option<f64>,
    pub psi01: Option<f64>,
    pub psi10: Option<f64>,
    pub psi11: Option<f64>,
    pub sigma1_sq: Option<f64>,
    pub sigma2_sq: Option<f64>,
    pub damping: Option<f64>,
    pub alpha: Option<f64>,
    pub thresholds: Option<usize>,
    pub seed: Option<u64>,
    pub entrywise: bool,
    pub residual_exponent: Option<u8>,
}

/// Fully resolved run parameters.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub method: Method,
    /// Rank bound; estimated from the data when absent.
    pub rank: Option<usize>,
    /// Cardinality bound; estimated from the data when absent.
    pub card: Option<usize>,
    pub eps: f64,
    pub outer_iters: usize,
    pub inner_iters: usize,
    pub psi00: f64,
    pub psi01: f64,
    pub psi10: f64,
    pub psi11: f64,
    pub sigma1_sq: Option<f64>,
    pub sigma2_sq: Option<f64>,
    pub damping: f64,
    pub alpha: f64,
    pub thresholds: usize,
    pub seed: u64,
    pub entrywise: bool,
    pub residual_exponent: u8,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            method: Method::Turbo,
            rank: None,
            card: None,
            eps: 1e-4,
            outer_iters: 20,
            inner_iters: 100,
            psi00: 0.5,
            psi01: 0.3,
            psi10: 0.3,
            psi11: 0.5,
            sigma1_sq: None,
            sigma2_sq: None,
            damping: 0.5,
            alpha: 0.4,
            thresholds: 5001,
            seed: 0,
            entrywise: false,
            residual_exponent: 1,
        }
    }
}

/// Parses a `key=value` file: one pair per line, `#` starts a comment,
/// blank lines ignored. Returns pairs in file order (keys may repeat).
pub fn parse_kv_file(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read config file {}", path.display()))?;
    let mut pairs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("line {} of {}: expected key=value", i + 1, path.display()))?;
        pairs.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(pairs)
}

fn parse_as<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| anyhow!("config key {key}={value}: {e}"))
}

impl RunConfig {
    /// Defaults, overlaid by the config file (if any), overlaid by flags.
    pub fn resolve(config_file: Option<&Path>, flags: &ParamOverrides) -> Result<Self> {
        let mut cfg = RunConfig::default();

        if let Some(path) = config_file {
            for (key, value) in parse_kv_file(path)? {
                match key.as_str() {
                    "method" => cfg.method = Method::parse(&value)?,
                    "rank" => cfg.rank = Some(parse_as(&key, &value)?),
                    "card" => cfg.card = Some(parse_as(&key, &value)?),
                    "eps" => cfg.eps = parse_as(&key, &value)?,
                    "outer-iters" => cfg.outer_iters = parse_as(&key, &value)?,
                    "inner-iters" => cfg.inner_iters = parse_as(&key, &value)?,
                    "psi00" => cfg.psi00 = parse_as(&key, &value)?,
                    "psi01" => cfg.psi01 = parse_as(&key, &value)?,
                    "psi10" => cfg.psi10 = parse_as(&key, &value)?,
                    "psi11" => cfg.psi11 = parse_as(&key, &value)?,
                    "sigma1-sq" => cfg.sigma1_sq = Some(parse_as(&key, &value)?),
                    "sigma2-sq" => cfg.sigma2_sq = Some(parse_as(&key, &value)?),
                    "damping" => cfg.damping = parse_as(&key, &value)?,
                    "alpha" => cfg.alpha = parse_as(&key, &value)?,
                    "thresholds" => cfg.thresholds = parse_as(&key, &value)?,
                    "seed" => cfg.seed = parse_as(&key, &value)?,
                    "entrywise" => cfg.entrywise = parse_as(&key, &value)?,
                    "residual-exponent" => cfg.residual_exponent = parse_as(&key, &value)?,
                    // Scene keys are legal in shared config files; runs
                    // ignore them.
                    "height" | "width" | "channels" | "scene-rank" | "noise-sigma" | "cluster"
                    | "dispersed-count" | "dispersed-amplitude" => {}
                    other => bail!("unknown config key {other:?}"),
                }
            }
        }

        if let Some(m) = &flags.method {
            cfg.method = Method::parse(m)?;
        }
        if flags.rank.is_some() {
            cfg.rank = flags.rank;
        }
        if flags.card.is_some() {
            cfg.card = flags.card;
        }
        if let Some(v) = flags.eps {
            cfg.eps = v;
        }
        if let Some(v) = flags.outer_iters {
            cfg.outer_iters = v;
        }
        if let Some(v) = flags.inner_iters {
            cfg.inner_iters = v;
        }
        if let Some(v) = flags.psi00 {
            cfg.psi00 = v;
        }
        if let Some(v) = flags.psi01 {
            cfg.psi01 = v;
        }
        if let Some(v) = flags.psi10 {
            cfg.psi10 = v;
        }
        if let Some(v) = flags.psi11 {
            cfg.psi11 = v;
        }
        if flags.sigma1_sq.is_some() {
            cfg.sigma1_sq = flags.sigma1_sq;
        }
        if flags.sigma2_sq.is_some() {
            cfg.sigma2_sq = flags.sigma2_sq;
        }
        if let Some(v) = flags.damping {
            cfg.damping = v;
        }
        if let Some(v) = flags.alpha {
            cfg.alpha = v;
        }
        if let Some(v) = flags.thresholds {
            cfg.thresholds = v;
        }
        if let Some(v) = flags.seed {
            cfg.seed = v;
        }
        if flags.entrywise {
            cfg.entrywise = true;
        }
        if let Some(v) = flags.residual_exponent {
            cfg.residual_exponent = v;
        }

        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if self.sigma1_sq.is_some() != self.sigma2_sq.is_some() {
            bail!("sigma1-sq and sigma2-sq must be given together (or neither, for automatic estimation)");
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            bail!("alpha must be in [0,1], got {}", self.alpha);
        }
        if self.thresholds < 2 {
            bail!("thresholds must be at least 2");
        }
        if !matches!(self.residual_exponent, 1 | 2) {
            bail!("residual-exponent must be 1 or 2");
        }
        Ok(())
    }

    /// Decomposition parameters for a cube of the given shape; rank and
    /// cardinality fall back to their estimators.
    pub fn godec_params(&self, rank: usize, card: usize) -> GodecParams {
        GodecParams {
            rank,
            cardinality: card,
            tolerance: self.eps,
            max_outer_iters: self.outer_iters,
            seed: self.seed,
            entrywise_s_step: self.entrywise,
            residual_exponent: if self.residual_exponent == 2 {
                ResidualExponent::SquaredNumerator
            } else {
                ResidualExponent::Linear
            },
        }
    }

    pub fn csp_params(&self) -> CspParams {
        let manual = self.sigma1_sq.is_some();
        CspParams {
            psi00: self.psi00,
            psi01: self.psi01,
            psi10: self.psi10,
            psi11: self.psi11,
            sigma1_sq: self.sigma1_sq.unwrap_or(1.0),
            sigma2_sq: self.sigma2_sq.unwrap_or(10.0),
            damping: self.damping,
            inner_iters: self.inner_iters,
            noise_estimation: if manual { NoiseEstimation::Manual } else { NoiseEstimation::Auto },
        }
    }

    /// Manifest entries for the resolved configuration. `rank`/`card`
    /// report the values actually used when estimation filled them in.
    pub fn manifest_entries(
        &self,
        resolved_rank: Option<usize>,
        resolved_card: Option<usize>,
    ) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        m.insert("method".into(), self.method.name().into());
        match resolved_rank.or(self.rank) {
            Some(r) => m.insert("rank".into(), r.to_string()),
            None => m.insert("rank".into(), "auto".into()),
        };
        match resolved_card.or(self.card) {
            Some(k) => m.insert("card".into(), k.to_string()),
            None => m.insert("card".into(), "auto".into()),
        };
        m.insert("eps".into(), format!("{}", self.eps));
        m.insert("outer-iters".into(), self.outer_iters.to_string());
        m.insert("inner-iters".into(), self.inner_iters.to_string());
        m.insert("psi00".into(), format!("{}", self.psi00));
        m.insert("psi01".into(), format!("{}", self.psi01));
        m.insert("psi10".into(), format!("{}", self.psi10));
        m.insert("psi11".into(), format!("{}", self.psi11));
        m.insert(
            "sigma1-sq".into(),
            self.sigma1_sq.map_or("auto".into(), |v| format!("{v}")),
        );
        m.insert(
            "sigma2-sq".into(),
            self.sigma2_sq.map_or("auto".into(), |v| format!("{v}")),
        );
        m.insert("damping".into(), format!("{}", self.damping));
        m.insert("alpha".into(), format!("{}", self.alpha));
        m.insert("thresholds".into(), self.thresholds.to_string());
        m.insert("seed".into(), self.seed.to_string());
        m.insert("entrywise".into(), self.entrywise.to_string());
        m.insert("residual-exponent".into(), self.residual_exponent.to_string());
        m
    }
}

/// Writes `manifest.txt` in `out_dir`: sorted `key=value` lines. Paths are
/// recorded by file name only, so reruns into different directories stay
/// byte-identical.
pub fn write_manifest(
    out_dir: &Path,
    command: &str,
    inputs: &[(&str, &Path)],
    entries: &BTreeMap<String, String>,
) -> Result<()> {
    let mut lines = vec![format!("command={command}")];
    for (label, path) in inputs {
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        lines.push(format!("{label}={name}"));
    }
    for (k, v) in entries {
        lines.push(format!("{k}={v}"));
    }
    lines.push(String::new());
    fs::write(out_dir.join("manifest.txt"), lines.join("\n"))
        .with_context(|| format!("cannot write manifest in {}", out_dir.display()))?;
    Ok(())
}

/// Parses a scene description from a `key=value` file. Clustered layouts
/// list one `cluster=top,left,height,width,amplitude` line per cluster;
/// dispersed layouts give `dispersed-count` and `dispersed-amplitude`.
pub fn parse_scene_spec(path: &Path, seed_override: Option<u64>) -> Result<SceneSpec> {
    let mut height = None;
    let mut width = None;
    let mut channels = None;
    let mut rank = None;
    let mut noise_sigma = 0.0;
    let mut seed = 0u64;
    let mut clusters: Vec<ClusterSpec> = Vec::new();
    let mut dispersed_count: Option<usize> = None;
    let mut dispersed_amplitude: Option<f64> = None;

    for (key, value) in parse_kv_file(path)? {
        match key.as_str() {
            "height" => height = Some(parse_as::<usize>(&key, &value)?),
            "width" => width = Some(parse_as::<usize>(&key, &value)?),
            "channels" => channels = Some(parse_as::<usize>(&key, &value)?),
            "scene-rank" => rank = Some(parse_as::<usize>(&key, &value)?),
            "noise-sigma" => noise_sigma = parse_as(&key, &value)?,
            "seed" => seed = parse_as(&key, &value)?,
            "cluster" => {
                let parts: Vec<&str> = value.split(',').map(str::trim).collect();
                if parts.len() != 5 {
                    bail!("cluster={value}: expected top,left,height,width,amplitude");
                }
                clusters.push(ClusterSpec {
                    top: parse_as("cluster.top", parts[0])?,
                    left: parse_as("cluster.left", parts[1])?,
                    height: parse_as("cluster.height", parts[2])?,
                    width: parse_as("cluster.width", parts[3])?,
                    amplitude: parse_as("cluster.amplitude", parts[4])?,
                });
            }
            "dispersed-count" => dispersed_count = Some(parse_as(&key, &value)?),
            "dispersed-amplitude" => dispersed_amplitude = Some(parse_as(&key, &value)?),
            other => bail!("unknown scene key {other:?}"),
        }
    }

    let layout = match (dispersed_count, clusters.is_empty()) {
        (Some(count), true) => AnomalyLayout::Dispersed {
            count,
            amplitude: dispersed_amplitude
                .ok_or_else(|| anyhow!("dispersed-count needs dispersed-amplitude"))?,
        },
        (Some(_), false) => bail!("a scene is either clustered or dispersed, not both"),
        (None, _) => AnomalyLayout::Clustered(clusters),
    };

    let spec = SceneSpec {
        height: height.ok_or_else(|| anyhow!("scene config misses height"))?,
        width: width.ok_or_else(|| anyhow!("scene config misses width"))?,
        channels: channels.ok_or_else(|| anyhow!("scene config misses channels"))?,
        background_rank: rank.ok_or_else(|| anyhow!("scene config misses scene-rank"))?,
        noise_sigma,
        seed: seed_override.unwrap_or(seed),
        layout,
    };
    spec.validate().map_err(|e| anyhow!("invalid scene: {e}"))?;
    Ok(spec)
}

/// Manifest entries describing a scene spec.
pub fn scene_manifest_entries(spec: &SceneSpec) -> BTreeMap<String, String> {
    let mut m = BTreeMap::new();
    m.insert("height".into(), spec.height.to_string());
    m.insert("width".into(), spec.width.to_string());
    m.insert("channels".into(), spec.channels.to_string());
    m.insert("scene-rank".into(), spec.background_rank.to_string());
    m.insert("noise-sigma".into(), format!("{}", spec.noise_sigma));
    m.insert("seed".into(), spec.seed.to_string());
    match &spec.layout {
        AnomalyLayout::Clustered(clusters) => {
            m.insert("layout".into(), "clustered".into());
            for (i, c) in clusters.iter().enumerate() {
                m.insert(
                    format!("cluster{i}"),
                    format!("{},{},{},{},{}", c.top, c.left, c.height, c.width, c.amplitude),
                );
            }
        }
        AnomalyLayout::Dispersed { count, amplitude } => {
            m.insert("layout".into(), "dispersed".into());
            m.insert("dispersed-count".into(), count.to_string());
            m.insert("dispersed-amplitude".into(), format!("{amplitude}"));
        }
    }
    m
}
