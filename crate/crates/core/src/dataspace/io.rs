//! On-disk dataset layout: a directory holding `train.csv`, `test.csv` and a
//! `meta.txt` sidecar.
//!
//! CSVs carry a header `f0,...,f{d-1},label`; labels are written as `-1`/`1`
//! and floats with their shortest round-trip representation, so a written
//! dataset reads back bit-identical.
//!
//! The sidecar is line-oriented `key=value` text. `#` starts a comment line.
//! Values escape `%`, space and `=` as `%25`, `%20` and `%3D`.
//!
//! ```text
//! format=1
//! source=synthetic alpha=1.5 beta=0.2 seed=3 n_train=2000 n_test=1000
//! dim=2
//! col=0 name=f0 kind=continuous lo=-4.2 hi=3.9
//! col=1 name=f1 kind=continuous lo=-3.1 hi=3.3
//! ```
//!
//! Adult datasets use `source=adult seed=S` and categorical columns such as
//! `col=4 name=workclass%3DPrivate kind=categorical group=0 group_name=workclass category=Private`.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::{Dataset, FeatureKind, FeatureMeta, Label, Matrix, Source, SyntheticParams};
use crate::{Error, Result};

pub const DATASET_FORMAT_VERSION: u32 = 1;

fn escape(s: &str) -> String {
    s.replace('%', "%25").replace(' ', "%20").replace('=', "%3D")
}

fn unescape(s: &str) -> String {
    s.replace("%3D", "=").replace("%20", " ").replace("%25", "%")
}

fn write_split(path: &Path, x: &Matrix, y: &[Label]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (0..x.dim()).map(|j| format!("f{j}")).collect();
    header.push("label".into());
    w.write_record(&header)?;
    for (row, label) in x.rows().zip(y) {
        let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        rec.push(i8::from(*label).to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn read_split(path: &Path, dim: usize) -> Result<(Matrix, Vec<Label>)> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    if header.len() != dim + 1 || header.get(dim) != Some("label") {
        return Err(Error::Parse(format!("{}: unexpected header", path.display())));
    }
    let mut x = Matrix::new(dim);
    let mut y = Vec::new();
    let mut bad = Vec::new();
    let mut buf = vec![0.0; dim];
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let parsed = (|| {
            for (j, slot) in buf.iter_mut().enumerate() {
                *slot = rec.get(j)?.parse().ok()?;
            }
            let l: i8 = rec.get(dim)?.parse().ok()?;
            Label::try_from(l).ok()
        })();
        match parsed {
            Some(l) => {
                x.push(&buf)?;
                y.push(l);
            }
            // header is line 1
            None => bad.push(i + 2),
        }
    }
    if !bad.is_empty() {
        return Err(Error::MalformedRows { path: path.to_path_buf(), lines: bad });
    }
    Ok((x, y))
}

fn meta_text(ds: &Dataset) -> String {
    let mut out = format!("# subpop dataset metadata\nformat={DATASET_FORMAT_VERSION}\n");
    match &ds.source {
        Source::Synthetic(p) => out.push_str(&format!(
            "source=synthetic alpha={} beta={} seed={} n_train={} n_test={}\n",
            p.alpha, p.beta, p.seed, p.n_train, p.n_test
        )),
        Source::Adult { seed } => out.push_str(&format!("source=adult seed={seed}\n")),
    }
    out.push_str(&format!("dim={}\n", ds.dim()));
    for (j, m) in ds.feature_meta.iter().enumerate() {
        match &m.kind {
            FeatureKind::Continuous { lo, hi } => out.push_str(&format!(
                "col={j} name={} kind=continuous lo={lo} hi={hi}\n",
                escape(&m.name)
            )),
            FeatureKind::Categorical { group, group_name, category } => out.push_str(&format!(
                "col={j} name={} kind=categorical group={group} group_name={} category={}\n",
                escape(&m.name),
                escape(group_name),
                escape(category)
            )),
        }
    }
    out
}

fn kv(line: &str) -> Result<HashMap<&str, String>> {
    line.split_whitespace()
        .map(|tok| {
            tok.split_once('=')
                .map(|(k, v)| (k, unescape(v)))
                .ok_or_else(|| Error::Parse(format!("expected key=value, got {tok:?}")))
        })
        .collect()
}

fn field<T: std::str::FromStr>(map: &HashMap<&str, String>, key: &str) -> Result<T> {
    map.get(key)
        .ok_or_else(|| Error::Parse(format!("missing key {key}")))?
        .parse()
        .map_err(|_| Error::Parse(format!("bad value for {key}")))
}

struct Sidecar {
    source: Source,
    dim: usize,
    meta: Vec<FeatureMeta>,
}

fn parse_meta(text: &str) -> Result<Sidecar> {
    let mut source = None;
    let mut dim = None;
    let mut meta: Vec<(usize, FeatureMeta)> = Vec::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        let map = kv(line)?;
        if let Some(v) = map.get("format") {
            if v.parse::<u32>().ok() != Some(DATASET_FORMAT_VERSION) {
                return Err(Error::Parse(format!("unsupported format version {v}")));
            }
        } else if let Some(kind) = map.get("source") {
            source = Some(match kind.as_str() {
                "synthetic" => Source::Synthetic(SyntheticParams {
                    alpha: field(&map, "alpha")?,
                    beta: field(&map, "beta")?,
                    seed: field(&map, "seed")?,
                    n_train: field(&map, "n_train")?,
                    n_test: field(&map, "n_test")?,
                }),
                "adult" => Source::Adult { seed: field(&map, "seed")? },
                other => return Err(Error::Parse(format!("unknown source {other}"))),
            });
        } else if map.contains_key("dim") && !map.contains_key("col") {
            dim = Some(field(&map, "dim")?);
        } else if map.contains_key("col") {
            let col: usize = field(&map, "col")?;
            let name: String = field(&map, "name")?;
            let kind = match map.get("kind").map(String::as_str) {
                Some("continuous") => FeatureKind::Continuous {
                    lo: field(&map, "lo")?,
                    hi: field(&map, "hi")?,
                },
                Some("categorical") => FeatureKind::Categorical {
                    group: field(&map, "group")?,
                    group_name: field(&map, "group_name")?,
                    category: field(&map, "category")?,
                },
                _ => return Err(Error::Parse(format!("column {col}: bad kind"))),
            };
            meta.push((col, FeatureMeta { name, kind }));
        } else {
            return Err(Error::Parse(format!("unrecognized line {line:?}")));
        }
    }
    let dim = dim.ok_or_else(|| Error::Parse("missing dim".into()))?;
    meta.sort_by_key(|(c, _)| *c);
    if meta.iter().enumerate().any(|(i, (c, _))| i != *c) || meta.len() != dim {
        return Err(Error::Parse("column descriptors do not cover 0..dim".into()));
    }
    Ok(Sidecar {
        source: source.ok_or_else(|| Error::Parse("missing source".into()))?,
        dim,
        meta: meta.into_iter().map(|(_, m)| m).collect(),
    })
}

pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_split(&dir.join("train.csv"), &ds.train_x, &ds.train_y)?;
    write_split(&dir.join("test.csv"), &ds.test_x, &ds.test_y)?;
    fs::write(dir.join("meta.txt"), meta_text(ds))?;
    Ok(())
}

/// The source recorded in a dataset directory, without reading the splits.
pub fn read_source(dir: &Path) -> Result<Source> {
    let meta_path = dir.join("meta.txt");
    if !meta_path.exists() {
        return Err(Error::MissingFile(meta_path));
    }
    Ok(parse_meta(&fs::read_to_string(&meta_path)?)?.source)
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let meta_path = dir.join("meta.txt");
    if !meta_path.exists() {
        return Err(Error::MissingFile(meta_path));
    }
    let side = parse_meta(&fs::read_to_string(&meta_path)?)?;
    let (train_x, train_y) = read_split(&dir.join("train.csv"), side.dim)?;
    let (test_x, test_y) = read_split(&dir.join("test.csv"), side.dim)?;
    Dataset::new(train_x, train_y, test_x, test_y, side.meta, side.source)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataspace::generate_synthetic;

    #[test]
    fn synthetic_round_trip_is_bit_exact() {
        let ds = generate_synthetic(&SyntheticParams::new(2.25, 0.4, 9)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&ds, dir.path()).unwrap();
        assert_eq!(read_dataset(dir.path()).unwrap(), ds);
    }

    #[test]
    fn header_format() {
        let ds = generate_synthetic(&SyntheticParams::new(1.0, 0.0, 0)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&ds, dir.path()).unwrap();
        let text = fs::read_to_string(dir.path().join("train.csv")).unwrap();
        assert_eq!(text.lines().next(), Some("f0,f1,label"));
        let last = text.lines().nth(1).unwrap();
        assert!(last.ends_with(",-1") || last.ends_with(",1"));
    }

    #[test]
    fn categorical_names_survive_escaping() {
        let m = FeatureMeta::categorical(2, "odd group", "a=b %c");
        let mut ds = generate_synthetic(&SyntheticParams::new(1.0, 0.0, 0)).unwrap();
        ds.feature_meta[1] = m.clone();
        let parsed = parse_meta(&meta_text(&ds)).unwrap();
        assert_eq!(parsed.meta[1], m);
    }

    #[test]
    fn malformed_csv_reports_lines() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("train.csv");
        fs::write(&p, "f0,label\n0.5,1\nabc,1\n0.1,0\n").unwrap();
        match read_split(&p, 1) {
            Err(Error::MalformedRows { lines, .. }) => assert_eq!(lines, vec![3, 4]),
            other => panic!("unexpected {other:?}"),
        }
    }
}
