//! Subcommand implementations. Every command resolves its configuration,
//! computes deterministically, writes its artifacts plus a manifest, and
//! never mutates its inputs.

use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{anyhow, Context, Result};

use turbo_godec::detector::{fuse, min_max_normalize, rx_background, rx_global};
use turbo_godec::godec::{self, DecompositionResult};
use turbo_godec::hsi::{
    self, flatten, load_cube, load_map, load_mask, normalize, save_cube, unflatten, HsiCube,
    MapFormat, PixelMatrix, ScoreMap,
};
use turbo_godec::metrics::{auc_report, format_table, roc_3d, AucReport, RocCurve};
use turbo_godec::synth;

use crate::config::{
    scene_manifest_entries, write_manifest, Method, RunConfig,
};

fn ensure_out_dir(out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir)
        .with_context(|| format!("cannot create output directory {}", out_dir.display()))
}

/// Generates a scene from a config file and writes `cube.hsic` + `mask.csv`.
pub fn cmd_synth(config: &Path, out_dir: &Path, seed_override: Option<u64>) -> Result<()> {
    let spec = crate::config::parse_scene_spec(config, seed_override)?;
    let scene = synth::generate(&spec)?;
    ensure_out_dir(out_dir)?;
    save_cube(&scene.cube, &out_dir.join("cube.hsic"))?;
    write_mask_csv(&scene.mask, &out_dir.join("mask.csv"))?;
    write_manifest(out_dir, "synth", &[("config", config)], &scene_manifest_entries(&spec))?;
    Ok(())
}

fn write_mask_csv(mask: &turbo_godec::hsi::GroundTruthMask, path: &Path) -> Result<()> {
    let mut out = fs::File::create(path)?;
    for row in mask.data().rows() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    Ok(())
}

/// Converts headerless raw little-endian `f64` values (band-sequential)
/// plus explicit dimensions into the cube container.
pub fn cmd_import_raw(input: &Path, dims: &str, out: &Path) -> Result<()> {
    let parts: Vec<&str> = dims.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(anyhow!("--dims expects H,W,C (got {dims:?})"));
    }
    let h: usize = parts[0].parse().context("bad height in --dims")?;
    let w: usize = parts[1].parse().context("bad width in --dims")?;
    let c: usize = parts[2].parse().context("bad channel count in --dims")?;

    let bytes = fs::read(input).with_context(|| format!("cannot read {}", input.display()))?;
    if bytes.len() != h * w * c * 8 {
        return Err(anyhow!(
            "raw file holds {} bytes, dims {h}x{w}x{c} need {}",
            bytes.len(),
            h * w * c * 8
        ));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    let cube = HsiCube::new(h, w, c, values)?;
    save_cube(&cube, out)?;
    Ok(())
}

struct PreparedCube {
    matrix: PixelMatrix,
    rank: usize,
    card: usize,
}

/// Loads, normalizes and flattens the input cube, filling in rank and
/// cardinality from their estimators when not pinned by the config.
fn prepare(input: &Path, cfg: &RunConfig) -> Result<PreparedCube> {
    let cube = load_cube(input)?;
    let cube = normalize(&cube)?;
    let matrix = flatten(&cube);
    let rank = match cfg.rank {
        Some(r) => r,
        None => godec::estimate_rank(&matrix, 0.999)?,
    };
    let card = match cfg.card {
        Some(k) => k,
        None => godec::estimate_cardinality(&matrix, 0.02)?,
    };
    Ok(PreparedCube { matrix, rank, card })
}

fn decompose(prepared: &PreparedCube, cfg: &RunConfig) -> Result<DecompositionResult> {
    let params = cfg.godec_params(prepared.rank, prepared.card);
    let result = match cfg.method {
        Method::Lsmad => godec::godec(&prepared.matrix, &params)?,
        Method::Turbo => godec::turbo_godec(&prepared.matrix, &params, &cfg.csp_params())?,
        Method::Grx => return Err(anyhow!("method grx does not decompose; use detect")),
    };
    Ok(result)
}

/// Runs the decomposition and writes `l.hsic`, `s.hsic`, `residuals.csv`
/// and (for the turbo method) `j.csv`.
pub fn cmd_decompose(input: &Path, out_dir: &Path, cfg: &RunConfig) -> Result<()> {
    if cfg.method == Method::Grx {
        return Err(anyhow!("method grx does not decompose; use detect"));
    }
    let prepared = prepare(input, cfg)?;
    let result = decompose(&prepared, cfg)?;
    ensure_out_dir(out_dir)?;

    let (h, w) = (prepared.matrix.height(), prepared.matrix.width());
    for (name, matrix) in [("l.hsic", &result.low_rank), ("s.hsic", &result.sparse)] {
        let cube = unflatten(&PixelMatrix::from_parts(h, w, matrix.clone())?);
        save_cube(&cube, &out_dir.join(name))?;
    }

    let mut residuals = String::from("iteration,relative_residual\n");
    for (i, r) in result.residual_history.iter().enumerate() {
        residuals.push_str(&format!("{},{}\n", i + 1, r));
    }
    fs::write(out_dir.join("residuals.csv"), residuals)?;

    if let Some(j) = &result.anomaly_probability {
        let map = ScoreMap::new(j.grid().clone())?;
        hsi::write_map(&map, &out_dir.join("j.csv"), MapFormat::Csv)?;
    }

    write_manifest(
        out_dir,
        "decompose",
        &[("input", input)],
        &cfg.manifest_entries(Some(prepared.rank), Some(prepared.card)),
    )?;
    Ok(())
}

fn detection_map(prepared: &PreparedCube, cfg: &RunConfig) -> Result<ScoreMap> {
    match cfg.method {
        Method::Grx => Ok(min_max_normalize(&rx_global(&prepared.matrix))),
        Method::Lsmad => {
            let result = decompose(prepared, cfg)?;
            Ok(min_max_normalize(&rx_background(&prepared.matrix, &result.low_rank)))
        }
        Method::Turbo => {
            let result = decompose(prepared, cfg)?;
            let j = result
                .anomaly_probability
                .as_ref()
                .expect("turbo decomposition always carries probabilities");
            Ok(fuse(&rx_background(&prepared.matrix, &result.low_rank), j, cfg.alpha)?)
        }
    }
}

/// Produces a detection map (`map.csv` + `map.pgm`) with the configured
/// method.
pub fn cmd_detect(input: &Path, out_dir: &Path, cfg: &RunConfig) -> Result<()> {
    let prepared = prepare(input, cfg)?;
    let map = detection_map(&prepared, cfg)?;
    ensure_out_dir(out_dir)?;
    hsi::write_map(&map, &out_dir.join("map.csv"), MapFormat::Csv)?;
    hsi::write_map(&map, &out_dir.join("map.pgm"), MapFormat::Pgm)?;
    write_manifest(
        out_dir,
        "detect",
        &[("input", input)],
        &cfg.manifest_entries(Some(prepared.rank), Some(prepared.card)),
    )?;
    Ok(())
}

fn eval_map(map: &ScoreMap, mask_path: &Path, thresholds: usize) -> Result<(RocCurve, AucReport)> {
    let mask = load_mask(mask_path)?;
    let normalized = min_max_normalize(map);
    let curve = roc_3d(&normalized, &mask, thresholds)?;
    let report = auc_report(&curve);
    Ok((curve, report))
}

fn write_roc_csv(curve: &RocCurve, path: &Path) -> Result<()> {
    let mut out = String::from("tau,pd,pf\n");
    for i in 0..curve.taus().len() {
        out.push_str(&format!("{},{},{}\n", curve.taus()[i], curve.pd()[i], curve.pf()[i]));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Evaluates a detection map against a mask: `roc.csv`, `auc.csv` and an
/// aligned `auc.txt`.
pub fn cmd_eval(input: &Path, mask: &Path, out_dir: &Path, cfg: &RunConfig) -> Result<()> {
    let map = load_map(input)?;
    let (curve, report) = eval_map(&map, mask, cfg.thresholds)?;
    ensure_out_dir(out_dir)?;
    write_roc_csv(&curve, &out_dir.join("roc.csv"))?;
    fs::write(
        out_dir.join("auc.csv"),
        format!("{}\n{}\n", AucReport::csv_header(), report.to_csv_row()),
    )?;
    fs::write(
        out_dir.join("auc.txt"),
        format_table(&[("map".to_string(), report)]),
    )?;
    write_manifest(
        out_dir,
        "eval",
        &[("input", input), ("mask", mask)],
        &cfg.manifest_entries(None, None),
    )?;
    Ok(())
}

/// Runs all three methods on one scene and writes a side-by-side report
/// (`auc_compare.csv`, `auc_compare.txt`) plus the per-method maps.
pub fn cmd_compare(input: &Path, mask: &Path, out_dir: &Path, cfg: &RunConfig) -> Result<()> {
    let prepared = prepare(input, cfg)?;
    ensure_out_dir(out_dir)?;

    let mut rows = Vec::new();
    let mut csv = String::from("method,");
    csv.push_str(AucReport::csv_header());
    csv.push('\n');
    for method in [Method::Grx, Method::Lsmad, Method::Turbo] {
        let method_cfg = RunConfig { method, ..cfg.clone() };
        let map = detection_map(&prepared, &method_cfg)?;
        hsi::write_map(
            &map,
            &out_dir.join(format!("map_{}.csv", method.name())),
            MapFormat::Csv,
        )?;
        let (_, report) = eval_map(&map, mask, cfg.thresholds)?;
        csv.push_str(&format!("{},{}\n", method.name(), report.to_csv_row()));
        rows.push((method.name().to_string(), report));
    }
    fs::write(out_dir.join("auc_compare.csv"), csv)?;
    fs::write(out_dir.join("auc_compare.txt"), format_table(&rows))?;
    write_manifest(
        out_dir,
        "compare",
        &[("input", input), ("mask", mask)],
        &cfg.manifest_entries(Some(prepared.rank), Some(prepared.card)),
    )?;
    Ok(())
}
