use std::fs;
use std::path::{Path, PathBuf};

use super::evaluate::forecast_fields;
use super::manifold::Artifacts;
use super::rom::{load_index, load_model};
use super::{read_json, unit_column, write_csv, Pipeline, Stage};
use crate::dataset::{write_atomic, write_field_csv, Split};
use crate::dmaps::EmbeddingKind;
use crate::error::{Error, Result};
use crate::fmt_f64;

const USAGE: &str = "snapshot:<run>:<k>, forecast:<model>:<run>:<k>, latent:<model>:<run>, \
                     errors:<split>:<model>, spectra, baseline";

fn parse_model(name: &str) -> Result<(EmbeddingKind, usize)> {
    let (kind, d) = if let Some(d) = name.strip_prefix("pod_d") {
        (EmbeddingKind::Pod, d)
    } else if let Some(d) = name.strip_prefix("dmaps_d") {
        (EmbeddingKind::Dmaps, d)
    } else {
        return Err(Error::Config(format!("model `{name}` should look like pod_d<d> or dmaps_d<d>")));
    };
    let d = d
        .parse()
        .map_err(|_| Error::Config(format!("bad dimension in model name `{name}`")))?;
    Ok((kind, d))
}

fn parse_num<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.parse().map_err(|_| Error::Config(format!("bad {what} `{s}`")))
}

fn field_bytes(grid: &crate::grid::Grid, values: &[f64]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_field_csv(grid, values, &mut buf).map_err(|e| Error::io("<memory>", e))?;
    Ok(buf)
}

fn copy(from: &Path, to: &Path) -> Result<()> {
    let bytes = fs::read(from).map_err(|e| Error::io(from, e))?;
    write_atomic(to, &bytes)
}

pub(super) fn run(p: &Pipeline, what: &str) -> Result<Vec<PathBuf>> {
    let out = p.root().join("export");
    let tag = &p.config().hash()[..12];
    let parts: Vec<&str> = what.split(':').collect();
    let check_k = |k: usize, t: usize| {
        if k >= t {
            Err(Error::NotFound(format!("snapshot {k} does not exist; valid indices are 0..{}", t - 1)))
        } else {
            Ok(())
        }
    };
    match parts.as_slice() {
        ["snapshot", run, k] => {
            p.require(Stage::Simulate)?;
            let (run_id, k): (u32, usize) = (parse_num(run, "run id")?, parse_num(k, "snapshot index")?);
            let x = p.load_run(run_id)?;
            check_k(k, x.ncols())?;
            let grid = p.grid()?;
            let path = out.join(format!("snapshot_run{run_id:04}_k{k:04}_{tag}.csv"));
            write_atomic(&path, &field_bytes(&grid, x.data.column(k).as_slice())?)?;
            Ok(vec![path])
        }
        ["forecast", model, run, k] => {
            p.require(Stage::Rom)?;
            let (kind, d) = parse_model(model)?;
            let (run_id, k): (u32, usize) = (parse_num(run, "run id")?, parse_num(k, "snapshot index")?);
            let art = Artifacts::load(p)?;
            let entries = load_index(p)?;
            let entry = entries.iter().find(|e| e.name == *model).ok_or_else(|| {
                let names: Vec<&str> = entries.iter().map(|e| e.name.as_str()).collect();
                Error::NotFound(format!("no model {model}; trained models: {}", names.join(", ")))
            })?;
            let truth = p.load_run(run_id)?;
            check_k(k, truth.ncols())?;
            let grid = p.grid()?;
            let enc = art.encoder(kind, d, &p.config().lifter)?;
            let mvar = load_model(p, entry, &art.index.source_hash)?;
            let (fields, _) = forecast_fields(&enc, &mvar, &truth, &grid)?;
            let path = out.join(format!("forecast_{model}_run{run_id:04}_k{k:04}_{tag}.csv"));
            write_atomic(&path, &field_bytes(&grid, fields[k].values())?)?;
            Ok(vec![path])
        }
        ["latent", model, run] => {
            p.require(Stage::Manifold)?;
            let (kind, d) = parse_model(model)?;
            let run_id: u32 = parse_num(run, "run id")?;
            let art = Artifacts::load(p)?;
            let x = p.load_run(run_id)?;
            let enc = art.encoder(kind, d, &p.config().lifter)?;
            let header = std::iter::once("t".to_string())
                .chain((1..=d).map(|i| format!("y{i}")))
                .collect::<Vec<_>>()
                .join(",");
            let rows = (0..x.ncols())
                .map(|k| {
                    let y = enc.encode(&unit_column(&x, k)?.0)?;
                    let mut row = fmt_f64(x.columns[k].time);
                    for v in y.iter() {
                        row.push(',');
                        row.push_str(&fmt_f64(*v));
                    }
                    Ok(row)
                })
                .collect::<Result<Vec<_>>>()?;
            let path = out.join(format!("latent_{model}_run{run_id:04}_{tag}.csv"));
            write_csv(&path, &header, rows)?;
            Ok(vec![path])
        }
        ["errors", split, model] => {
            p.require(Stage::Evaluate)?;
            let split = Split::parse(split).map_err(|e| Error::Config(e.to_string()))?;
            let dir = p.stage_dir(Stage::Evaluate).join(split.as_str()).join(model);
            let mut files: Vec<PathBuf> = match fs::read_dir(&dir) {
                Ok(rd) => rd.filter_map(|e| e.ok().map(|e| e.path())).collect(),
                Err(_) => {
                    return Err(Error::NotFound(format!("no error series for {model} on the {split} split")));
                }
            };
            files.sort();
            let mut rows = Vec::new();
            for f in files {
                let stem = f.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
                let Some(id) = stem.strip_prefix("run_") else { continue };
                let id: u32 = parse_num(id, "run id")?;
                let text = fs::read_to_string(&f).map_err(|e| Error::io(&f, e))?;
                for line in text.lines().skip(1) {
                    // per-snapshot rows start with a number, summary rows with a label
                    if line.starts_with(|c: char| c.is_ascii_digit() || c == '-') {
                        rows.push(format!("{id},{line}"));
                    }
                }
            }
            let path = out.join(format!("errors_{split}_{model}_{tag}.csv"));
            write_csv(&path, "run_id,t,eps2,eps2_rel,w1", rows)?;
            Ok(vec![path])
        }
        ["spectra"] => {
            p.require(Stage::Manifold)?;
            let dir = p.stage_dir(Stage::Manifold);
            let mut written = Vec::new();
            for name in ["pod_spectrum", "dmaps_spectrum"] {
                let to = out.join(format!("{name}_{tag}.csv"));
                copy(&dir.join(format!("{name}.csv")), &to)?;
                written.push(to);
            }
            Ok(written)
        }
        ["baseline"] => {
            p.require(Stage::Manifold)?;
            let dir = p.stage_dir(Stage::Manifold);
            let index: super::manifold::ManifoldIndex = read_json(&dir.join("manifold.json"))?;
            let mut written = Vec::new();
            let to = out.join(format!("baseline_summary_{tag}.csv"));
            copy(&dir.join("baseline_summary.csv"), &to)?;
            written.push(to);
            let names = index
                .pod_dims
                .iter()
                .map(|&d| format!("pod_d{d}"))
                .chain(index.baseline_dmaps_dims.iter().map(|&d| format!("dmaps_d{d}")));
            for name in names {
                let to = out.join(format!("baseline_{name}_{tag}.csv"));
                copy(&dir.join("baseline").join(format!("{name}.csv")), &to)?;
                written.push(to);
            }
            Ok(written)
        }
        _ => Err(Error::Config(format!("unknown artifact id `{what}`; expected one of {USAGE}"))),
    }
}
