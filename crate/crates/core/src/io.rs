//! Datasets and results on disk.
//!
//! A dataset directory holds `manifest.json` and one CSV per element,
//! `element_<j>.csv`:
//!
//! * dense elements: `N` rows by `G` columns, no header, columns in flat
//!   grid order (row-major for images);
//! * sparse elements: long format with header `obs_id,t1,value` (or
//!   `obs_id,t1,t2,value`), one row per observed point; `obs_id` is
//!   zero-based and coordinates are snapped to the manifest grid.
//!
//! Floats are written with 17 significant digits, which round-trips every
//! `f64` exactly.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::BandSet;
use crate::experiment::{CoverageTable, Replicate};
use crate::fundata::{Domain, ElementSample, MultiFunData};

pub const MANIFEST: &str = "manifest.json";
const FORMAT: &str = "mfpca-dataset";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub n: usize,
    pub elements: Vec<ManifestElement>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestElement {
    pub label: String,
    pub file: String,
    pub axes: Vec<Vec<f64>>,
    pub sparse: bool,
}

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn element_file(j: usize) -> String {
    format!("element_{j}.csv")
}

/// Write `data` into `dir` (created if needed).
pub fn write_dataset(dir: &Path, data: &MultiFunData) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(data.p());
    for (j, e) in data.elements().iter().enumerate() {
        let file = element_file(j);
        let path = dir.join(&file);
        if e.is_sparse() {
            write_sparse(&path, e)?;
        } else {
            write_matrix(&path, e.values())?;
        }
        entries.push(ManifestElement {
            label: data.labels()[j].clone(),
            file,
            axes: e.domain().axes().to_vec(),
            sparse: e.is_sparse(),
        });
    }
    let manifest = Manifest { format: FORMAT.into(), version: VERSION, n: data.n(), elements: entries };
    write_json(&dir.join(MANIFEST), &manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path)?;
    let m: Manifest = serde_json::from_str(&text)?;
    if m.format != FORMAT || m.version != VERSION {
        return Err(Error::Format(format!(
            "{}: expected format {FORMAT} version {VERSION}, found {} version {}",
            path.display(),
            m.format,
            m.version
        )));
    }
    Ok(m)
}

pub fn read_dataset(dir: &Path) -> Result<MultiFunData> {
    let manifest = read_manifest(dir)?;
    let mut elements = Vec::with_capacity(manifest.elements.len());
    let mut labels = Vec::with_capacity(manifest.elements.len());
    for entry in &manifest.elements {
        let domain = Domain::new(entry.axes.clone())?;
        let path = dir.join(&entry.file);
        let e = if entry.sparse {
            read_sparse(&path, domain, manifest.n)?
        } else {
            let values = read_matrix(&path)?;
            if values.nrows() != manifest.n {
                return Err(Error::Format(format!(
                    "{}: {} rows, manifest says {}",
                    path.display(),
                    values.nrows(),
                    manifest.n
                )));
            }
            ElementSample::dense(domain, values)?
        };
        elements.push(e);
        labels.push(entry.label.clone());
    }
    MultiFunData::new(elements, labels)
}

fn write_sparse(path: &Path, e: &ElementSample) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let d = e.domain();
    let mut header = vec!["obs_id".to_string()];
    header.extend((1..=d.dim()).map(|k| format!("t{k}")));
    header.push("value".into());
    w.write_record(&header)?;
    for i in 0..e.n() {
        for k in e.observed(i) {
            let mut rec = vec![i.to_string()];
            rec.extend(d.point(k).into_iter().map(fmt_f64));
            rec.push(fmt_f64(e.values()[(i, k)]));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn parse(field: &str, path: &Path, line: u64) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| Error::Format(format!("{}:{line}: cannot parse {field:?} as a number", path.display())))
}

fn read_sparse(path: &Path, domain: Domain, n: usize) -> Result<ElementSample> {
    let mut r = csv::Reader::from_path(path)?;
    let dim = domain.dim();
    let mut expected = vec!["obs_id".to_string()];
    expected.extend((1..=dim).map(|k| format!("t{k}")));
    expected.push("value".into());
    let header: Vec<String> = r.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if header != expected {
        return Err(Error::Format(format!(
            "{}: header {header:?}, expected {expected:?}",
            path.display()
        )));
    }
    let g = domain.len();
    let mut values = DMatrix::from_element(n, g, f64::NAN);
    let mut mask = DMatrix::from_element(n, g, false);
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let id: usize = rec[0]
            .trim()
            .parse()
            .map_err(|_| Error::Format(format!("{}:{line}: bad obs_id {:?}", path.display(), &rec[0])))?;
        if id >= n {
            return Err(Error::Format(format!("{}:{line}: obs_id {id} >= N = {n}", path.display())));
        }
        let coords: Vec<f64> = (1..=dim).map(|k| parse(&rec[k], path, line)).collect::<Result<_>>()?;
        let k = domain.snap(&coords).ok_or_else(|| {
            Error::Format(format!("{}:{line}: point {coords:?} is not on the grid", path.display()))
        })?;
        if mask[(id, k)] {
            return Err(Error::Format(format!(
                "{}:{line}: observation {id} repeats grid point {k}",
                path.display()
            )));
        }
        values[(id, k)] = parse(&rec[dim + 1], path, line)?;
        mask[(id, k)] = true;
    }
    ElementSample::new(domain, values, Some(mask))
}

/// Headerless CSV of a matrix, one row per line.
pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    for i in 0..m.nrows() {
        w.write_record(m.row(i).iter().map(|x| fmt_f64(*x)))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_path(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        rows.push(rec.iter().map(|f| parse(f, path, line)).collect::<Result<_>>()?);
    }
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::Format(format!("{}: rows differ in length", path.display())));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, k| rows[i][k]))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// `psi_<j>.csv` (components x grid), `mean_<j>.csv` and `scores.csv`
/// (`N x M`).
pub fn write_components(dir: &Path, eigenfunctions: &[DMatrix<f64>], means: &[DMatrix<f64>], scores: &DMatrix<f64>) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (j, (e, mu)) in eigenfunctions.iter().zip(means).enumerate() {
        write_matrix(&dir.join(format!("psi_{j}.csv")), e)?;
        write_matrix(&dir.join(format!("mean_{j}.csv")), mu)?;
    }
    write_matrix(&dir.join("scores.csv"), scores)
}

/// `band_<level%>_<j>_{lower,upper}.csv`, components x grid.
pub fn write_bands(dir: &Path, bands: &BandSet) -> Result<()> {
    fs::create_dir_all(dir)?;
    for b in &bands.bands {
        let tag = level_tag(b.level);
        for j in 0..b.lower.len() {
            write_matrix(&dir.join(format!("band_{tag}_{j}_lower.csv")), &b.lower[j])?;
            write_matrix(&dir.join(format!("band_{tag}_{j}_upper.csv")), &b.upper[j])?;
        }
    }
    Ok(())
}

fn level_tag(level: f64) -> String {
    let pct = level * 100.0;
    if (pct - pct.round()).abs() < 1e-9 {
        format!("{:.0}", pct)
    } else {
        format!("{pct}").replace('.', "p")
    }
}

/// Per-replicate metrics with a header row.
pub fn write_replicates(path: &Path, reps: &[Replicate]) -> Result<()> {
    let c = reps.iter().map(|r| r.metrics.err_eigenvalue.len()).max().unwrap_or(0);
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = ["replicate", "seed", "m", "mrse"].iter().map(|s| s.to_string()).collect();
    header.extend((1..=c).map(|k| format!("err_nu_{k}")));
    header.extend((1..=c).map(|k| format!("err_psi_{k}")));
    w.write_record(&header)?;
    for r in reps {
        let mut rec = vec![r.replicate.to_string(), r.seed.to_string(), r.metrics.m.to_string(), fmt_f64(r.metrics.mrse)];
        for v in [&r.metrics.err_eigenvalue, &r.metrics.err_eigenfunction] {
            rec.extend((0..c).map(|k| v.get(k).map_or(String::new(), |x| fmt_f64(*x))));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// `coverage_<level%>_<j>.csv` (components x grid) and `coverage.csv` with
/// the grid-averaged table.
pub fn write_coverage(dir: &Path, table: &CoverageTable) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("coverage.csv"))?;
    w.write_record(["level", "element", "component", "coverage"])?;
    for (l, level) in table.levels.iter().enumerate() {
        let tag = level_tag(*level);
        for (j, comps) in table.pointwise[l].iter().enumerate() {
            let g = comps.first().map_or(0, Vec::len);
            let m = DMatrix::from_fn(comps.len(), g, |c, k| comps[c][k]);
            write_matrix(&dir.join(format!("coverage_{tag}_{j}.csv")), &m)?;
            for (c, mean) in table.mean[l][j].iter().enumerate() {
                w.write_record([fmt_f64(*level), j.to_string(), (c + 1).to_string(), fmt_f64(*mean)])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simgen::{simulate, Decay, SimulationSpec, Sparsity};

    fn same(a: &MultiFunData, b: &MultiFunData) -> bool {
        a.labels() == b.labels()
            && a.elements().iter().zip(b.elements()).all(|(x, y)| {
                x.domain() == y.domain()
                    && x.mask() == y.mask()
                    && x.values().iter().zip(y.values().iter()).all(|(u, v)| u == v || (u.is_nan() && v.is_nan()))
            })
    }

    #[test]
    fn dense_and_sparse_round_trip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        for (k, spec) in [
            SimulationSpec::setting1(7, 13, Decay::Lin, 0.25, 1),
            SimulationSpec::setting2(9, Decay::TableExp, 0.1, Sparsity::Medium, 2),
            SimulationSpec::setting3(4, (6, 5), 9, 0.0, 3),
        ]
        .iter()
        .enumerate()
        {
            let sim = simulate(spec).unwrap();
            let path = dir.path().join(k.to_string());
            write_dataset(&path, &sim.data).unwrap();
            let back = read_dataset(&path).unwrap();
            assert!(same(&sim.data, &back), "case {k}");
        }
    }

    #[test]
    fn malformed_inputs_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let sim = simulate(&SimulationSpec::setting2(5, Decay::Lin, 0.0, Sparsity::High, 4)).unwrap();
        write_dataset(dir.path(), &sim.data).unwrap();
        let f = dir.path().join("element_1.csv");
        let text = fs::read_to_string(&f).unwrap();
        fs::write(&f, text.replacen("\n0,", "\n0,0.123456789", 1)).unwrap();
        assert!(matches!(read_dataset(dir.path()), Err(Error::Format(_))));

        fs::write(dir.path().join(MANIFEST), "{\"format\": \"other\"}").unwrap();
        assert!(read_dataset(dir.path()).is_err());
        assert!(matches!(read_dataset(&dir.path().join("missing")), Err(Error::Io(_))));
    }

    #[test]
    fn level_tags() {
        assert_eq!(level_tag(0.95), "95");
        assert_eq!(level_tag(0.9), "90");
        assert_eq!(level_tag(0.975), "97p5");
    }
}
