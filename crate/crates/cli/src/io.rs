//! Delimited text tables with a `# key: value` header.
//!
//! Written files use tabs and shortest round-trip float formatting, so a
//! write followed by a read reproduces every value bit for bit. The reader
//! also accepts commas or runs of whitespace as delimiters.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use sha2::{Digest, Sha256};
use sideband_core::coherence::VisibilityTrace;
use sideband_core::interferometry::Interferogram;
use sideband_core::spectra::{EnergyGrid, Spectrum};

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub path: PathBuf,
    pub meta: BTreeMap<String, String>,
    pub columns: Vec<String>,
    /// Row-major values.
    pub rows: Vec<Vec<f64>>,
    /// File line of the first data row, for diagnostics.
    pub first_line: usize,
}

impl Table {
    pub fn new(meta: BTreeMap<String, String>, columns: Vec<String>, rows: Vec<Vec<f64>>) -> Self {
        Self { path: PathBuf::new(), meta, columns, rows, first_line: 0 }
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.meta {
            let _ = writeln!(out, "# {k}: {v}");
        }
        let _ = writeln!(out, "{}", self.columns.join("\t"));
        for row in &self.rows {
            let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            let _ = writeln!(out, "{}", line.join("\t"));
        }
        out
    }

    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        let mut meta = BTreeMap::new();
        let mut columns: Option<Vec<String>> = None;
        let mut rows = Vec::new();
        let mut first_line = 0;
        for (i, raw) in text.lines().enumerate() {
            let lineno = i + 1;
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(c) = line.strip_prefix('#') {
                if let Some((k, v)) = c.split_once(':') {
                    meta.insert(k.trim().to_string(), v.trim().to_string());
                }
                continue;
            }
            let fields = split_fields(line);
            match &columns {
                None => {
                    if fields.iter().all(|f| f.parse::<f64>().is_ok()) {
                        bail!("{}:{lineno}: expected a line of column names before the data", path.display());
                    }
                    columns = Some(fields.into_iter().map(str::to_string).collect());
                }
                Some(cols) => {
                    if fields.len() != cols.len() {
                        bail!(
                            "{}:{lineno}: expected {} columns ({}), found {}",
                            path.display(),
                            cols.len(),
                            cols.join(", "),
                            fields.len()
                        );
                    }
                    let row = fields
                        .iter()
                        .enumerate()
                        .map(|(j, f)| {
                            f.parse::<f64>()
                                .map_err(|_| anyhow!("{}:{lineno}: column `{}` holds {f:?}, not a number", path.display(), cols[j]))
                        })
                        .collect::<Result<Vec<f64>>>()?;
                    if first_line == 0 {
                        first_line = lineno;
                    }
                    rows.push(row);
                }
            }
        }
        let columns = columns.ok_or_else(|| anyhow!("{}: no column header found", path.display()))?;
        Ok(Self { path: path.to_path_buf(), meta, columns, rows, first_line })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(path, &text)
    }

    pub fn has(&self, name: &str) -> bool {
        self.columns.iter().any(|c| c == name)
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let j = self.columns.iter().position(|c| c == name).ok_or_else(|| {
            anyhow!(
                "{}:{}: missing column `{name}` (found: {})",
                self.path.display(),
                self.first_line.saturating_sub(1).max(1),
                self.columns.join(", ")
            )
        })?;
        Ok(self.rows.iter().map(|r| r[j]).collect())
    }

    pub fn meta_f64(&self, key: &str) -> Result<Option<f64>> {
        self.meta
            .get(key)
            .map(|v| v.parse::<f64>().map_err(|_| anyhow!("{}: header `{key}` holds {v:?}, not a number", self.path.display())))
            .transpose()
    }

    /// Tag from the header, else the file stem.
    pub fn tag(&self) -> String {
        self.meta.get("tag").cloned().unwrap_or_else(|| {
            self.path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
        })
    }
}

fn split_fields(line: &str) -> Vec<&str> {
    if line.contains(',') {
        line.split(',').map(str::trim).collect()
    } else if line.contains('\t') {
        line.split('\t').map(str::trim).collect()
    } else {
        line.split_whitespace().collect()
    }
}

pub fn spectrum_table(s: &Spectrum) -> Table {
    let mut meta = BTreeMap::new();
    meta.insert("kind".into(), "spectrum".into());
    meta.insert("tag".into(), s.tag.clone());
    meta.insert("units".into(), "energy=meV intensity=arb".into());
    meta.insert("grid_start".into(), format!("{}", s.grid.start));
    meta.insert("grid_step".into(), format!("{}", s.grid.step));
    meta.insert("background".into(), format!("{}", s.background));
    meta.insert("clipped_mass".into(), format!("{}", s.clipped_mass));
    if let Some(d) = s.detuning {
        meta.insert("detuning_mev".into(), format!("{d}"));
    }
    let rows = s.energies().into_iter().zip(&s.intensity).map(|(e, v)| vec![e, *v]).collect();
    Table::new(meta, vec!["energy_mev".into(), "intensity".into()], rows)
}

pub fn spectrum_from_table(t: &Table) -> Result<Spectrum> {
    let e = t.column("energy_mev")?;
    let intensity = t.column("intensity")?;
    if e.len() < 2 {
        bail!("{}: a spectrum needs at least two rows", t.path.display());
    }
    let grid = match (t.meta_f64("grid_start")?, t.meta_f64("grid_step")?) {
        (Some(start), Some(step)) => EnergyGrid::new(start, step, e.len())?,
        _ => {
            let step = (e[e.len() - 1] - e[0]) / (e.len() - 1) as f64;
            for (i, x) in e.iter().enumerate() {
                if (x - (e[0] + step * i as f64)).abs() > 1e-6 * step.abs() {
                    bail!("{}:{}: energies are not uniformly spaced", t.path.display(), t.first_line + i);
                }
            }
            EnergyGrid::new(e[0], step, e.len())?
        }
    };
    Ok(Spectrum {
        grid,
        intensity,
        background: t.meta_f64("background")?.unwrap_or(0.0),
        detuning: t.meta_f64("detuning_mev")?,
        tag: t.tag(),
        clipped_mass: t.meta_f64("clipped_mass")?.unwrap_or(0.0),
    })
}

pub fn visibility_table(v: &VisibilityTrace, tag: &str, detuning: Option<f64>) -> Table {
    let mut meta = BTreeMap::new();
    meta.insert("kind".into(), "visibility".into());
    meta.insert("tag".into(), tag.to_string());
    meta.insert("units".into(), "time=ps visibility=1".into());
    if let Some(d) = detuning {
        meta.insert("detuning_mev".into(), format!("{d}"));
    }
    let mut columns = vec!["time_ps".to_string(), "visibility".to_string()];
    let rows = match &v.sigma {
        Some(s) => {
            columns.push("sigma".into());
            (0..v.len()).map(|i| vec![v.time[i], v.visibility[i], s[i]]).collect()
        }
        None => (0..v.len()).map(|i| vec![v.time[i], v.visibility[i]]).collect(),
    };
    Table::new(meta, columns, rows)
}

pub fn visibility_from_table(t: &Table) -> Result<VisibilityTrace> {
    let time = t.column("time_ps")?;
    let visibility = t.column("visibility")?;
    let sigma = if t.has("sigma") { Some(t.column("sigma")?) } else { None };
    Ok(VisibilityTrace { time, visibility, sigma })
}

pub fn interferogram_table(ig: &Interferogram, tag: &str, omega0: f64, detuning: Option<f64>) -> Table {
    let mut meta = BTreeMap::new();
    meta.insert("kind".into(), "interferogram".into());
    meta.insert("tag".into(), tag.to_string());
    meta.insert("units".into(), "delay=ps intensity=arb".into());
    meta.insert("omega0_mev".into(), format!("{omega0}"));
    if let Some(d) = detuning {
        meta.insert("detuning_mev".into(), format!("{d}"));
    }
    let rows = ig.delay.iter().zip(&ig.intensity).map(|(t, i)| vec![*t, *i]).collect();
    Table::new(meta, vec!["delay_ps".into(), "intensity".into()], rows)
}

pub fn interferogram_from_table(t: &Table) -> Result<Interferogram> {
    Ok(Interferogram { delay: t.column("delay_ps")?, intensity: t.column("intensity")? })
}

/// Tables of the given kind in a file or directory, sorted by path.
///
/// Files without a `kind` header are accepted when they have `columns`.
pub fn collect_tables(input: &Path, kind: &str, columns: &[&str]) -> Result<Vec<Table>> {
    let paths: Vec<PathBuf> = if input.is_dir() {
        let mut v: Vec<PathBuf> = std::fs::read_dir(input)
            .with_context(|| format!("listing {}", input.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("tsv" | "csv" | "txt" | "dat")))
            .collect();
        v.sort();
        v
    } else {
        vec![input.to_path_buf()]
    };
    let mut out = Vec::new();
    for p in paths {
        let t = Table::read(&p)?;
        let matches = match t.meta.get("kind") {
            Some(k) => k == kind,
            None => columns.iter().all(|c| t.has(c)) || !input.is_dir(),
        };
        if matches {
            out.push(t);
        }
    }
    if out.is_empty() {
        bail!("no {kind} tables found in {}", input.display());
    }
    Ok(out)
}
