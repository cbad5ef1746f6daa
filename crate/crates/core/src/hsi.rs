//! Data model and I/O for hyperspectral cubes, pixel matrices, ground-truth
//! masks and detection score maps.
//!
//! Cubes are stored band-sequentially: `C` planes of `H x W` values, each
//! plane row-major. The on-disk `.hsic` container is fixed so that save/load
//! round trips are bit-exact: magic `HSIC`, version byte `0x01`, `H`, `W`,
//! `C` as little-endian `u32`, then `H*W*C` little-endian `f64` values.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

const MAGIC: [u8; 4] = *b"HSIC";
const VERSION: u8 = 0x01;

/// An `H x W x C` hyperspectral cube.
///
/// Invariants: all values finite, `H >= 2`, `W >= 2`, `C >= 1`, and the
/// value buffer holds exactly `H*W*C` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct HsiCube {
    height: usize,
    width: usize,
    channels: usize,
    values: Vec<f64>,
}

impl HsiCube {
    /// Builds a cube from band-sequential values, validating all invariants.
    pub fn new(height: usize, width: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        if height < 2 || width < 2 {
            return Err(Error::InvalidDimensions(format!(
                "grid must be at least 2x2, got {height}x{width}"
            )));
        }
        if channels == 0 {
            return Err(Error::InvalidDimensions("channel count must be >= 1".into()));
        }
        let expected = height * width * channels;
        if values.len() != expected {
            return Err(Error::Truncated { expected, found: values.len() });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("cube values"));
        }
        Ok(Self { height, width, channels, values })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn n_pixels(&self) -> usize {
        self.height * self.width
    }

    /// Band-sequential backing slice.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Value of band `band` at pixel `(row, col)`.
    pub fn value(&self, band: usize, row: usize, col: usize) -> f64 {
        self.values[band * self.height * self.width + row * self.width + col]
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Matrix view of a cube: one row per pixel (row-major pixel order), one
/// column per spectral band. Keeps the source grid shape so results can be
/// folded back into `H x W` maps.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelMatrix {
    height: usize,
    width: usize,
    data: Array2<f64>,
}

impl PixelMatrix {
    /// Wraps an `(H*W) x C` matrix, validating the shape against the grid.
    pub fn from_parts(height: usize, width: usize, data: Array2<f64>) -> Result<Self> {
        if data.nrows() != height * width {
            return Err(Error::InvalidDimensions(format!(
                "matrix has {} rows, grid {}x{} needs {}",
                data.nrows(),
                height,
                width,
                height * width
            )));
        }
        if data.ncols() == 0 {
            return Err(Error::InvalidDimensions("matrix must have at least one column".into()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("pixel matrix"));
        }
        Ok(Self { height, width, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn n_pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn channels(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }
}

/// Binary `H x W` ground-truth mask; 1 marks an anomalous pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthMask {
    data: Array2<u8>,
}

impl GroundTruthMask {
    pub fn new(data: Array2<u8>) -> Result<Self> {
        if let Some(((r, c), _)) = data.indexed_iter().find(|(_, &v)| v > 1) {
            return Err(Error::NonBinaryValue { row: r, col: c });
        }
        Ok(Self { data })
    }

    pub fn height(&self) -> usize {
        self.data.nrows()
    }

    pub fn width(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &Array2<u8> {
        &self.data
    }

    /// Number of anomalous pixels.
    pub fn n_anomalous(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    /// True when the mask holds at least one pixel of each class.
    pub fn has_both_classes(&self) -> bool {
        let n = self.n_anomalous();
        n > 0 && n < self.data.len()
    }
}

/// Real-valued `H x W` map of detection scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap {
    data: Array2<f64>,
}

impl ScoreMap {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("score map"));
        }
        Ok(Self { data })
    }

    pub fn height(&self) -> usize {
        self.data.nrows()
    }

    pub fn width(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }
}

/// Output format for score maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapFormat {
    Csv,
    Pgm,
}

/// Reads a cube from the `.hsic` container.
pub fn load_cube(path: &Path) -> Result<HsiCube> {
    let mut file = BufReader::new(File::open(path)?);

    let mut magic = [0u8; 4];
    file.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let mut version = [0u8; 1];
    file.read_exact(&mut version)?;
    if version[0] != VERSION {
        return Err(Error::BadVersion(version[0]));
    }

    let mut dim = [0u8; 4];
    let mut read_u32 = |f: &mut BufReader<File>| -> Result<usize> {
        f.read_exact(&mut dim)?;
        Ok(u32::from_le_bytes(dim) as usize)
    };
    let h = read_u32(&mut file)?;
    let w = read_u32(&mut file)?;
    let c = read_u32(&mut file)?;

    let expected = h
        .checked_mul(w)
        .and_then(|p| p.checked_mul(c))
        .ok_or_else(|| Error::InvalidDimensions("dimension product overflows".into()))?;
    let mut payload = Vec::new();
    file.read_to_end(&mut payload)?;
    if payload.len() != expected * 8 {
        return Err(Error::Truncated { expected, found: payload.len() / 8 });
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    HsiCube::new(h, w, c, values)
}

/// Writes a cube to the `.hsic` container; `load_cube` inverts it bit-exactly.
pub fn save_cube(cube: &HsiCube, path: &Path) -> Result<()> {
    let mut file = BufWriter::new(File::create(path)?);
    file.write_all(&MAGIC)?;
    file.write_all(&[VERSION])?;
    for d in [cube.height(), cube.width(), cube.channels()] {
        file.write_all(&(d as u32).to_le_bytes())?;
    }
    for v in cube.values() {
        file.write_all(&v.to_le_bytes())?;
    }
    file.flush()?;
    Ok(())
}

/// Reshapes a cube into its pixel-by-band matrix: row `p` holds the spectrum
/// of pixel `(p div W, p mod W)`.
pub fn flatten(cube: &HsiCube) -> PixelMatrix {
    let (h, w, c) = (cube.height(), cube.width(), cube.channels());
    let mut data = Array2::zeros((h * w, c));
    for band in 0..c {
        let plane = &cube.values()[band * h * w..(band + 1) * h * w];
        for (p, &v) in plane.iter().enumerate() {
            data[(p, band)] = v;
        }
    }
    PixelMatrix { height: h, width: w, data }
}

/// Inverse of [`flatten`].
pub fn unflatten(matrix: &PixelMatrix) -> HsiCube {
    let (h, w, c) = (matrix.height(), matrix.width(), matrix.channels());
    let mut values = vec![0.0; h * w * c];
    for band in 0..c {
        for p in 0..h * w {
            values[band * h * w + p] = matrix.data()[(p, band)];
        }
    }
    HsiCube { height: h, width: w, channels: c, values }
}

/// Scales all values by the global maximum so the result lies in `[0, 1]`
/// (for non-negative input). Idempotent. Fails on a cube whose maximum is
/// not positive.
pub fn normalize(cube: &HsiCube) -> Result<HsiCube> {
    let max = cube.max_value();
    if max <= 0.0 {
        return Err(Error::DegenerateInput("cube has no positive values to normalize by"));
    }
    let values = cube.values().iter().map(|v| v / max).collect();
    HsiCube::new(cube.height(), cube.width(), cube.channels(), values)
}

/// Parses a ground-truth mask from CSV (`H` rows of `W` comma-separated 0/1).
pub fn load_mask(path: &Path) -> Result<GroundTruthMask> {
    let rows = read_csv_rows(path)?;
    let h = rows.len();
    if h == 0 {
        return Err(Error::Parse { line: 1, msg: "empty mask file".into() });
    }
    let w = rows[0].len();
    let mut data = Array2::zeros((h, w));
    for (r, row) in rows.iter().enumerate() {
        if row.len() != w {
            return Err(Error::RaggedRow { row: r, expected: w, found: row.len() });
        }
        for (c, v) in row.iter().enumerate() {
            if *v == 0.0 {
                data[(r, c)] = 0u8;
            } else if *v == 1.0 {
                data[(r, c)] = 1u8;
            } else {
                return Err(Error::NonBinaryValue { row: r, col: c });
            }
        }
    }
    GroundTruthMask::new(data)
}

/// Reads a score map from CSV.
pub fn load_map(path: &Path) -> Result<ScoreMap> {
    let rows = read_csv_rows(path)?;
    let h = rows.len();
    if h == 0 {
        return Err(Error::Parse { line: 1, msg: "empty map file".into() });
    }
    let w = rows[0].len();
    let mut data = Array2::zeros((h, w));
    for (r, row) in rows.iter().enumerate() {
        if row.len() != w {
            return Err(Error::RaggedRow { row: r, expected: w, found: row.len() });
        }
        for (c, v) in row.iter().enumerate() {
            data[(r, c)] = *v;
        }
    }
    ScoreMap::new(data)
}

/// Writes a score map as CSV (shortest round-tripping decimal form) or as
/// ASCII PGM (P2, maxval 65535) after min-max scaling. A constant map scales
/// to all zeros.
pub fn write_map(map: &ScoreMap, path: &Path, format: MapFormat) -> Result<()> {
    let mut file = BufWriter::new(File::create(path)?);
    match format {
        MapFormat::Csv => {
            for row in map.data().rows() {
                let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
                writeln!(file, "{}", line.join(","))?;
            }
        }
        MapFormat::Pgm => {
            let lo = map.data().iter().copied().fold(f64::INFINITY, f64::min);
            let hi = map.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let span = hi - lo;
            writeln!(file, "P2")?;
            writeln!(file, "{} {}", map.width(), map.height())?;
            writeln!(file, "65535")?;
            for row in map.data().rows() {
                let line: Vec<String> = row
                    .iter()
                    .map(|v| {
                        let level = if span > 0.0 {
                            ((v - lo) / span * 65535.0).round() as u32
                        } else {
                            0
                        };
                        level.to_string()
                    })
                    .collect();
                writeln!(file, "{}", line.join(" "))?;
            }
        }
    }
    file.flush()?;
    Ok(())
}

fn read_csv_rows(path: &Path) -> Result<Vec<Vec<f64>>> {
    let file = BufReader::new(File::open(path)?);
    let mut rows = Vec::new();
    for (i, line) in file.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let row: Result<Vec<f64>> = trimmed
            .split(',')
            .map(|tok| {
                tok.trim().parse::<f64>().map_err(|e| Error::Parse {
                    line: i + 1,
                    msg: format!("{e}: {tok:?}"),
                })
            })
            .collect();
        rows.push(row?);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use tempfile::tempdir;

    #[test]
    fn cube_round_trip_is_bit_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("cube.hsic");
        let cube = HsiCube::new(2, 2, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        save_cube(&cube, &path).unwrap();
        let loaded = load_cube(&path).unwrap();
        assert_eq!(cube, loaded);
        // Bit patterns, not just approximate values.
        for (a, b) in cube.values().iter().zip(loaded.values()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("junk.hsic");
        std::fs::write(&path, b"XXXX\x01junkjunkjunk").unwrap();
        match load_cube(&path) {
            Err(Error::BadMagic(m)) => assert_eq!(&m, b"XXXX"),
            other => panic!("expected BadMagic, got {other:?}"),
        }
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("short.hsic");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"HSIC\x01");
        for d in [2u32, 2, 2] {
            bytes.extend_from_slice(&d.to_le_bytes());
        }
        for v in 0..7 {
            bytes.extend_from_slice(&(v as f64).to_le_bytes());
        }
        std::fs::write(&path, bytes).unwrap();
        match load_cube(&path) {
            Err(Error::Truncated { expected: 8, found: 7 }) => {}
            other => panic!("expected Truncated, got {other:?}"),
        }
    }

    #[test]
    fn invalid_cubes_are_rejected_at_construction() {
        assert!(matches!(
            HsiCube::new(1, 2, 1, vec![0.0, 0.0]),
            Err(Error::InvalidDimensions(_))
        ));
        assert!(matches!(
            HsiCube::new(2, 2, 1, vec![0.0, f64::NAN, 0.0, 0.0]),
            Err(Error::NonFinite(_))
        ));
        assert!(matches!(HsiCube::new(2, 2, 1, vec![0.0; 3]), Err(Error::Truncated { .. })));
    }

    #[test]
    fn flatten_matches_definition() {
        let cube = HsiCube::new(2, 2, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let m = flatten(&cube);
        assert_eq!(m.data().column(0).to_vec(), vec![1.0, 2.0, 3.0, 4.0]);

        // Row 0 of a C=3 cube is the spectrum of pixel (0,0).
        let c3 = HsiCube::new(2, 2, 3, (0..12).map(f64::from).collect()).unwrap();
        let m3 = flatten(&c3);
        let spectrum: Vec<f64> = m3.data().row(0).to_vec();
        assert_eq!(spectrum, vec![c3.value(0, 0, 0), c3.value(1, 0, 0), c3.value(2, 0, 0)]);
    }

    #[test]
    fn normalize_scales_by_global_max() {
        let cube = HsiCube::new(2, 2, 1, vec![0.0, 2.5, 5.0, 10.0]).unwrap();
        let n = normalize(&cube).unwrap();
        assert_eq!(n.values(), &[0.0, 0.25, 0.5, 1.0]);

        // Already normalized (max exactly 1) stays bit-identical.
        let again = normalize(&n).unwrap();
        assert_eq!(n, again);

        let zero = HsiCube::new(2, 2, 1, vec![0.0; 4]).unwrap();
        assert!(matches!(normalize(&zero), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn mask_parsing() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("mask.csv");
        std::fs::write(&path, "0,1\n1,0\n").unwrap();
        let mask = load_mask(&path).unwrap();
        assert_eq!(mask.data(), &array![[0u8, 1], [1, 0]]);
        assert!(mask.has_both_classes());

        std::fs::write(&path, "0,1\n1\n").unwrap();
        assert!(matches!(load_mask(&path), Err(Error::RaggedRow { .. })));

        std::fs::write(&path, "0,2\n1,0\n").unwrap();
        assert!(matches!(load_mask(&path), Err(Error::NonBinaryValue { .. })));
    }

    #[test]
    fn constant_map_writes_all_zero_pgm() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("flat.pgm");
        let map = ScoreMap::new(Array2::from_elem((2, 3), 0.7)).unwrap();
        write_map(&map, &path, MapFormat::Pgm).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "P2\n3 2\n65535\n0 0 0\n0 0 0\n");
    }

    #[test]
    fn map_csv_round_trip_is_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("map.csv");
        let map = ScoreMap::new(array![[0.1, 0.25], [1.0 / 3.0, 0.999999999999]]).unwrap();
        write_map(&map, &path, MapFormat::Csv).unwrap();
        let loaded = load_map(&path).unwrap();
        for (a, b) in map.data().iter().zip(loaded.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn flatten_unflatten_round_trip(h in 2usize..6, w in 2usize..6, c in 1usize..5, seed in 0u64..1000) {
            let n = h * w * c;
            // Cheap deterministic fill; values irrelevant beyond being finite.
            let values: Vec<f64> = (0..n)
                .map(|i| (((i as u64 + 1) * (seed + 7)) % 1000) as f64 / 7.0)
                .collect();
            let cube = HsiCube::new(h, w, c, values).unwrap();
            let back = unflatten(&flatten(&cube));
            prop_assert_eq!(cube, back);
        }
    }
}
