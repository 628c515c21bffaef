//! Cycling-data model: per-cell discharge curves and capacity-fade series,
//! delimited-text ingestion, and cycle-life labeling.
//!
//! File schemas (all plain delimited text, comma-separated, one header row):
//!
//! * manifest: `cell_id,group_id,nominal_capacity_Ah,cycles_path,fade_path`
//!   with paths resolved relative to the manifest's directory;
//! * cycles file: `cycle_number,voltage_V,discharge_capacity_Ah`, rows grouped
//!   by cycle in ascending cycle order;
//! * fade file: `cycle_number,discharge_capacity_Ah`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// One cycle's discharge curve: voltage strictly decreasing, cumulative
/// discharged capacity non-decreasing, equal lengths ≥ 2.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleCurve<F> {
    pub cycle_number: u32,
    pub voltage: Vec<F>,
    pub discharge_capacity: Vec<F>,
}

/// One cell: identity, protocol/batch group, per-cycle curves, and the
/// capacity-fade series `(cycle_number, discharge_capacity)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CellRecord<F> {
    pub cell_id: String,
    pub group_id: String,
    pub nominal_capacity: F,
    pub cycles: BTreeMap<u32, CycleCurve<F>>,
    pub fade_series: Vec<(u32, F)>,
}

/// Cycle life of a cell: first crossing of the end-of-life threshold, or the
/// last observed cycle when censored.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleLifeLabel<F> {
    pub cell_id: String,
    pub cycle_life: F,
    pub censored: bool,
}

/// An immutable collection of cells, ordered by `cell_id`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<F> {
    cells: Vec<CellRecord<F>>,
}

impl<F: Scalar> Dataset<F> {
    /// Builds a dataset from records, sorting by `cell_id` and rejecting
    /// duplicates.
    pub fn new(mut cells: Vec<CellRecord<F>>) -> Result<Self> {
        cells.sort_by(|a, b| a.cell_id.cmp(&b.cell_id));
        for w in cells.windows(2) {
            if w[0].cell_id == w[1].cell_id {
                return Err(Error::Dataset(format!(
                    "duplicate cell_id {}",
                    w[0].cell_id
                )));
            }
        }
        Ok(Dataset { cells })
    }

    pub fn cells(&self) -> &[CellRecord<F>] {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cell(&self, cell_id: &str) -> Option<&CellRecord<F>> {
        self.cells
            .binary_search_by(|c| c.cell_id.as_str().cmp(cell_id))
            .ok()
            .map(|i| &self.cells[i])
    }

    /// Map cell_id → group_id for grouped splitting.
    pub fn group_map(&self) -> BTreeMap<String, String> {
        self.cells
            .iter()
            .map(|c| (c.cell_id.clone(), c.group_id.clone()))
            .collect()
    }

    /// Labels every cell at the given end-of-life threshold fraction.
    pub fn labels(&self, threshold_fraction: F) -> Result<Vec<CycleLifeLabel<F>>> {
        self.cells
            .iter()
            .map(|c| compute_cycle_life(c, threshold_fraction))
            .collect()
    }
}

/// Default end-of-life threshold: 80% of nominal capacity.
pub const DEFAULT_THRESHOLD_FRACTION: f64 = 0.8;

/// First crossing of `threshold_fraction × nominal_capacity` in the fade
/// series, linearly interpolated in cycle number between the bracketing
/// points. A fade point exactly at the threshold counts as the crossing.
/// Returns a censored label at the last observed cycle when no crossing
/// occurs.
pub fn compute_cycle_life<F: Scalar>(
    cell: &CellRecord<F>,
    threshold_fraction: F,
) -> Result<CycleLifeLabel<F>> {
    if cell.fade_series.is_empty() {
        return Err(Error::Dataset(format!(
            "cell {}: empty fade series",
            cell.cell_id
        )));
    }
    if cell.nominal_capacity <= F::zero() {
        return Err(Error::Dataset(format!(
            "cell {}: nominal capacity must be positive",
            cell.cell_id
        )));
    }
    if !(threshold_fraction > F::zero() && threshold_fraction <= F::one()) {
        return Err(Error::Dataset(format!(
            "threshold fraction must lie in (0, 1], got {threshold_fraction}"
        )));
    }
    let q_star = threshold_fraction * cell.nominal_capacity;
    let (first_cycle, first_q) = cell.fade_series[0];
    if first_q < q_star {
        return Err(Error::DegradedAtStart {
            cell_id: cell.cell_id.clone(),
        });
    }
    let _ = first_cycle;
    for k in 0..cell.fade_series.len() {
        let (ck, qk) = cell.fade_series[k];
        if qk <= q_star {
            if qk == q_star || k == 0 {
                return Ok(CycleLifeLabel {
                    cell_id: cell.cell_id.clone(),
                    cycle_life: F::from_u32(ck).unwrap(),
                    censored: false,
                });
            }
            let (c0, q0) = cell.fade_series[k - 1];
            let c0 = F::from_u32(c0).unwrap();
            let c1 = F::from_u32(ck).unwrap();
            let t = (q0 - q_star) / (q0 - qk);
            return Ok(CycleLifeLabel {
                cell_id: cell.cell_id.clone(),
                cycle_life: c0 + t * (c1 - c0),
                censored: false,
            });
        }
    }
    let (last_cycle, _) = *cell.fade_series.last().unwrap();
    Ok(CycleLifeLabel {
        cell_id: cell.cell_id.clone(),
        cycle_life: F::from_u32(last_cycle).unwrap(),
        censored: true,
    })
}

/// Checks every record invariant and returns one description per violation,
/// naming the offending field and cycle. Empty means the cell is well formed.
pub fn validate_cell<F: Scalar>(cell: &CellRecord<F>) -> Vec<String> {
    let mut violations = Vec::new();
    if cell.nominal_capacity <= F::zero() {
        violations.push(format!(
            "cell {}: nominal_capacity must be positive",
            cell.cell_id
        ));
    }
    for (&key, curve) in &cell.cycles {
        if key != curve.cycle_number {
            violations.push(format!(
                "cell {}: cycles key {} does not match curve cycle_number {}",
                cell.cell_id, key, curve.cycle_number
            ));
        }
        if curve.voltage.len() != curve.discharge_capacity.len() {
            violations.push(format!(
                "cell {} cycle {}: voltage and discharge_capacity lengths differ ({} vs {})",
                cell.cell_id,
                curve.cycle_number,
                curve.voltage.len(),
                curve.discharge_capacity.len()
            ));
            continue;
        }
        if curve.voltage.len() < 2 {
            violations.push(format!(
                "cell {} cycle {}: curve needs at least 2 samples",
                cell.cell_id, curve.cycle_number
            ));
            continue;
        }
        if curve.voltage.windows(2).any(|w| w[1] >= w[0]) {
            violations.push(format!(
                "cell {} cycle {}: voltage is not strictly decreasing",
                cell.cell_id, curve.cycle_number
            ));
        }
        if curve.discharge_capacity.windows(2).any(|w| w[1] < w[0]) {
            violations.push(format!(
                "cell {} cycle {}: discharge_capacity decreases along the discharge",
                cell.cell_id, curve.cycle_number
            ));
        }
        if curve
            .voltage
            .iter()
            .chain(&curve.discharge_capacity)
            .any(|v| !v.is_finite())
        {
            violations.push(format!(
                "cell {} cycle {}: non-finite sample",
                cell.cell_id, curve.cycle_number
            ));
        }
    }
    for w in cell.fade_series.windows(2) {
        if w[1].0 <= w[0].0 {
            violations.push(format!(
                "cell {}: fade_series cycle numbers not strictly increasing at cycle {}",
                cell.cell_id, w[1].0
            ));
        }
    }
    violations
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(text.lines().map(str::to_string).collect())
}

fn parse_field<F: Scalar>(raw: &str, path: &Path, line: usize, what: &str) -> Result<F> {
    raw.trim().parse::<F>().map_err(|_| Error::Load {
        path: path.display().to_string(),
        line,
        message: format!("cannot parse {what} from {raw:?}"),
    })
}

fn parse_u32(raw: &str, path: &Path, line: usize, what: &str) -> Result<u32> {
    raw.trim().parse::<u32>().map_err(|_| Error::Load {
        path: path.display().to_string(),
        line,
        message: format!("cannot parse {what} from {raw:?}"),
    })
}

fn expect_header(lines: &[String], expected: &str, path: &Path) -> Result<()> {
    match lines.first() {
        Some(h) if h.trim() == expected => Ok(()),
        Some(h) => Err(Error::Load {
            path: path.display().to_string(),
            line: 1,
            message: format!("expected header {expected:?}, found {h:?}"),
        }),
        None => Err(Error::Load {
            path: path.display().to_string(),
            line: 1,
            message: "empty file".into(),
        }),
    }
}

pub const CYCLES_HEADER: &str = "cycle_number,voltage_V,discharge_capacity_Ah";
pub const FADE_HEADER: &str = "cycle_number,discharge_capacity_Ah";
pub const MANIFEST_HEADER: &str = "cell_id,group_id,nominal_capacity_Ah,cycles_path,fade_path";

/// Loads one cycles file. Consecutive samples with exactly equal voltage are
/// collapsed to the first occurrence; any remaining non-monotonicity is an
/// error, not a repair.
/// One parsed sample row: source line, voltage, capacity.
type Sample<F> = (usize, F, F);

fn load_cycles<F: Scalar>(path: &Path) -> Result<BTreeMap<u32, CycleCurve<F>>> {
    let lines = read_lines(path)?;
    expect_header(&lines, CYCLES_HEADER, path)?;
    let mut cycles: BTreeMap<u32, CycleCurve<F>> = BTreeMap::new();
    let mut current: Option<(u32, Vec<Sample<F>>)> = None;
    let mut last_seen_cycle: Option<u32> = None;

    let finalize = |cycle: u32, samples: Vec<Sample<F>>| -> Result<CycleCurve<F>> {
        let mut dedup: Vec<Sample<F>> = Vec::with_capacity(samples.len());
        for s in samples {
            match dedup.last() {
                Some(&(_, v_prev, _)) if v_prev == s.1 => {} // exact duplicate voltage
                _ => dedup.push(s),
            }
        }
        if dedup.len() < 2 {
            return Err(Error::Load {
                path: path.display().to_string(),
                line: dedup.first().map_or(1, |s| s.0),
                message: format!("cycle {cycle} has fewer than 2 distinct samples"),
            });
        }
        for w in dedup.windows(2) {
            if w[1].1 >= w[0].1 {
                return Err(Error::Load {
                    path: path.display().to_string(),
                    line: w[1].0,
                    message: format!("cycle {cycle}: voltage not strictly decreasing"),
                });
            }
            if w[1].2 < w[0].2 {
                return Err(Error::Load {
                    path: path.display().to_string(),
                    line: w[1].0,
                    message: format!("cycle {cycle}: discharge capacity decreases"),
                });
            }
        }
        Ok(CycleCurve {
            cycle_number: cycle,
            voltage: dedup.iter().map(|s| s.1).collect(),
            discharge_capacity: dedup.iter().map(|s| s.2).collect(),
        })
    };

    for (idx, raw) in lines.iter().enumerate().skip(1) {
        let lineno = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() != 3 {
            return Err(Error::Load {
                path: path.display().to_string(),
                line: lineno,
                message: format!("expected 3 fields, found {}", fields.len()),
            });
        }
        let cycle = parse_u32(fields[0], path, lineno, "cycle_number")?;
        let v = parse_field::<F>(fields[1], path, lineno, "voltage_V")?;
        let q = parse_field::<F>(fields[2], path, lineno, "discharge_capacity_Ah")?;
        match current.as_mut() {
            Some((open, samples)) if *open == cycle => samples.push((lineno, v, q)),
            _ => {
                if let Some((open, samples)) = current.take() {
                    let curve = finalize(open, samples)?;
                    cycles.insert(open, curve);
                }
                if let Some(prev) = last_seen_cycle {
                    if cycle <= prev {
                        return Err(Error::Load {
                            path: path.display().to_string(),
                            line: lineno,
                            message: format!(
                                "cycle {cycle} out of order (cycles must ascend, last was {prev})"
                            ),
                        });
                    }
                }
                last_seen_cycle = Some(cycle);
                current = Some((cycle, vec![(lineno, v, q)]));
            }
        }
    }
    if let Some((open, samples)) = current.take() {
        let curve = finalize(open, samples)?;
        cycles.insert(open, curve);
    }
    if cycles.is_empty() {
        return Err(Error::Load {
            path: path.display().to_string(),
            line: 1,
            message: "no cycle data rows".into(),
        });
    }
    Ok(cycles)
}

fn load_fade<F: Scalar>(path: &Path) -> Result<Vec<(u32, F)>> {
    let lines = read_lines(path)?;
    expect_header(&lines, FADE_HEADER, path)?;
    let mut fade = Vec::new();
    for (idx, raw) in lines.iter().enumerate().skip(1) {
        let lineno = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() != 2 {
            return Err(Error::Load {
                path: path.display().to_string(),
                line: lineno,
                message: format!("expected 2 fields, found {}", fields.len()),
            });
        }
        let cycle = parse_u32(fields[0], path, lineno, "cycle_number")?;
        let q = parse_field::<F>(fields[1], path, lineno, "discharge_capacity_Ah")?;
        if let Some(&(prev, _)) = fade.last() {
            if cycle <= prev {
                return Err(Error::Load {
                    path: path.display().to_string(),
                    line: lineno,
                    message: format!("fade cycle {cycle} not strictly increasing"),
                });
            }
        }
        fade.push((cycle, q));
    }
    if fade.is_empty() {
        return Err(Error::Load {
            path: path.display().to_string(),
            line: 1,
            message: "no fade rows".into(),
        });
    }
    Ok(fade)
}

/// Loads a dataset from a manifest. Deterministic: the result is ordered by
/// `cell_id` regardless of manifest row order.
pub fn load_dataset<F: Scalar>(manifest_path: impl AsRef<Path>) -> Result<Dataset<F>> {
    let manifest_path = manifest_path.as_ref();
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let lines = read_lines(manifest_path)?;
    expect_header(&lines, MANIFEST_HEADER, manifest_path)?;
    let mut cells = Vec::new();
    for (idx, raw) in lines.iter().enumerate().skip(1) {
        let lineno = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::Load {
                path: manifest_path.display().to_string(),
                line: lineno,
                message: format!("expected 5 fields, found {}", fields.len()),
            });
        }
        let cell_id = fields[0].trim().to_string();
        let group_id = fields[1].trim().to_string();
        if cell_id.is_empty() {
            return Err(Error::Load {
                path: manifest_path.display().to_string(),
                line: lineno,
                message: "empty cell_id".into(),
            });
        }
        let nominal = parse_field::<F>(fields[2], manifest_path, lineno, "nominal_capacity_Ah")?;
        let cycles_path = base.join(fields[3].trim());
        let fade_path = base.join(fields[4].trim());
        let cycles = load_cycles::<F>(&cycles_path)?;
        let fade_series = load_fade::<F>(&fade_path)?;
        cells.push(CellRecord {
            cell_id,
            group_id,
            nominal_capacity: nominal,
            cycles,
            fade_series,
        });
    }
    Dataset::new(cells)
}

/// Writes a dataset under `dir`: `manifest.csv` plus `<cell_id>_cycles.csv`
/// and `<cell_id>_fade.csv` per cell. Numeric fields use the shortest
/// representation that parses back to the identical value, so
/// `load_dataset(write_dataset(d)) == d`.
pub fn write_dataset<F: Scalar>(dataset: &Dataset<F>, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let manifest_path = dir.join("manifest.csv");
    let mut manifest = String::from(MANIFEST_HEADER);
    manifest.push('\n');
    for cell in dataset.cells() {
        let cycles_name = format!("{}_cycles.csv", cell.cell_id);
        let fade_name = format!("{}_fade.csv", cell.cell_id);

        let mut cy = String::from(CYCLES_HEADER);
        cy.push('\n');
        for curve in cell.cycles.values() {
            for (v, q) in curve.voltage.iter().zip(&curve.discharge_capacity) {
                cy.push_str(&format!("{},{},{}\n", curve.cycle_number, v, q));
            }
        }
        write_text(&dir.join(&cycles_name), &cy)?;

        let mut fa = String::from(FADE_HEADER);
        fa.push('\n');
        for (c, q) in &cell.fade_series {
            fa.push_str(&format!("{c},{q}\n"));
        }
        write_text(&dir.join(&fade_name), &fa)?;

        manifest.push_str(&format!(
            "{},{},{},{},{}\n",
            cell.cell_id, cell.group_id, cell.nominal_capacity, cycles_name, fade_name
        ));
    }
    write_text(&manifest_path, &manifest)?;
    Ok(manifest_path)
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    f.write_all(text.as_bytes())
        .map_err(|e| Error::io(path.display().to_string(), e))
}
