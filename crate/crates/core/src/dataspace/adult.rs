//! UCI Adult ingestion: parse the raw `adult.data` / `adult.test` files,
//! binarize income, balance classes by downsampling the majority class,
//! min-max scale continuous columns with train statistics and one-hot encode
//! the categorical columns.
//!
//! Column mapping (57 columns):
//!
//! | kept as            | raw attribute                                              |
//! |--------------------|------------------------------------------------------------|
//! | continuous, [0,1]  | age, capital-gain, capital-loss, hours-per-week            |
//! | one-hot            | workclass (9), education (16), occupation (15), relationship (6), race (5), sex (2) |
//! | dropped            | fnlwgt (census sampling weight), education-num (same information as education), marital-status (overlaps relationship), native-country (42 sparse categories) |
//!
//! A `?` entry in a categorical attribute is its own category; rows with a
//! missing continuous value are dropped.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::seq::index::sample;

use super::{Dataset, FeatureMeta, Label, Matrix, Source};
use crate::rng::stream;
use crate::{Error, Result};

const RAW_FIELDS: usize = 15;
const INCOME_FIELD: usize = 14;

/// Raw attribute names, in file order.
pub const RAW_COLUMNS: [&str; RAW_FIELDS] = [
    "age",
    "workclass",
    "fnlwgt",
    "education",
    "education-num",
    "marital-status",
    "occupation",
    "relationship",
    "race",
    "sex",
    "capital-gain",
    "capital-loss",
    "hours-per-week",
    "native-country",
    "income",
];

pub const ADULT_CONTINUOUS: [&str; 4] = ["age", "capital-gain", "capital-loss", "hours-per-week"];
pub const ADULT_CATEGORICAL: [&str; 6] =
    ["workclass", "education", "occupation", "relationship", "race", "sex"];

/// Which raw attributes were kept and how; reported alongside the dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct AdultLayout {
    pub continuous: Vec<String>,
    pub categorical: Vec<(String, Vec<String>)>,
    pub dropped: Vec<String>,
}

impl AdultLayout {
    pub fn dim(&self) -> usize {
        self.continuous.len() + self.categorical.iter().map(|(_, c)| c.len()).sum::<usize>()
    }
}

struct RawRow {
    fields: Vec<String>,
    label: Label,
}

fn raw_index(name: &str) -> usize {
    RAW_COLUMNS.iter().position(|c| *c == name).expect("known column")
}

fn parse_file(path: &Path) -> Result<Vec<RawRow>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = fs::read_to_string(path)?;
    let continuous: Vec<usize> = ADULT_CONTINUOUS.iter().map(|c| raw_index(c)).collect();
    let mut rows = Vec::new();
    let mut malformed = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        // adult.test opens with a "|1x3 Cross validator" banner
        if line.is_empty() || line.starts_with('|') {
            continue;
        }
        let fields: Vec<String> = line.split(',').map(|f| f.trim().to_string()).collect();
        if fields.len() != RAW_FIELDS {
            malformed.push(lineno + 1);
            continue;
        }
        let label = match fields[INCOME_FIELD].trim_end_matches('.') {
            ">50K" => Label::Pos,
            "<=50K" => Label::Neg,
            _ => {
                malformed.push(lineno + 1);
                continue;
            }
        };
        let mut missing = false;
        let mut bad = false;
        for &c in &continuous {
            if fields[c] == "?" {
                missing = true;
            } else if fields[c].parse::<f64>().map_or(true, |v| !v.is_finite()) {
                bad = true;
            }
        }
        if bad {
            malformed.push(lineno + 1);
            continue;
        }
        if missing {
            continue;
        }
        rows.push(RawRow { fields, label });
    }
    if !malformed.is_empty() {
        return Err(Error::MalformedRows { path: path.to_path_buf(), lines: malformed });
    }
    if rows.is_empty() {
        return Err(Error::Empty("no usable rows in Adult file"));
    }
    Ok(rows)
}

/// Keeps every minority-class row and a seeded uniform sample of the
/// majority class of the same size; original file order is preserved.
fn balance(rows: Vec<RawRow>, seed: u64, stream_tag: u64) -> Vec<RawRow> {
    let (pos, neg): (Vec<usize>, Vec<usize>) =
        (0..rows.len()).partition(|&i| rows[i].label == Label::Pos);
    let (minority, majority) = if pos.len() <= neg.len() { (pos, neg) } else { (neg, pos) };
    let mut rng = stream(seed, stream_tag);
    let picked = sample(&mut rng, majority.len(), minority.len());
    let mut keep: Vec<usize> = minority;
    keep.extend(picked.into_iter().map(|k| majority[k]));
    keep.sort_unstable();
    let keep: BTreeSet<usize> = keep.into_iter().collect();
    rows.into_iter()
        .enumerate()
        .filter(|(i, _)| keep.contains(i))
        .map(|(_, r)| r)
        .collect()
}

/// Loads and preprocesses UCI Adult from the two raw files.
pub fn load_adult(raw_train_path: &Path, raw_test_path: &Path, seed: u64) -> Result<Dataset> {
    load_adult_with_layout(raw_train_path, raw_test_path, seed).map(|(ds, _)| ds)
}

pub fn load_adult_with_layout(
    raw_train_path: &Path,
    raw_test_path: &Path,
    seed: u64,
) -> Result<(Dataset, AdultLayout)> {
    let train = balance(parse_file(raw_train_path)?, seed, 11);
    let test = balance(parse_file(raw_test_path)?, seed, 12);

    let cont_idx: Vec<usize> = ADULT_CONTINUOUS.iter().map(|c| raw_index(c)).collect();
    let cat_idx: Vec<usize> = ADULT_CATEGORICAL.iter().map(|c| raw_index(c)).collect();

    let mut lo = vec![f64::INFINITY; cont_idx.len()];
    let mut hi = vec![f64::NEG_INFINITY; cont_idx.len()];
    let mut categories: Vec<BTreeSet<String>> = vec![BTreeSet::new(); cat_idx.len()];
    for r in &train {
        for (k, &c) in cont_idx.iter().enumerate() {
            let v: f64 = r.fields[c].parse().expect("validated");
            lo[k] = lo[k].min(v);
            hi[k] = hi[k].max(v);
        }
        for (k, &c) in cat_idx.iter().enumerate() {
            categories[k].insert(r.fields[c].clone());
        }
    }

    let mut meta = Vec::new();
    for name in ADULT_CONTINUOUS {
        meta.push(FeatureMeta::continuous(name, 0.0, 1.0));
    }
    let mut column_of: Vec<BTreeMap<String, usize>> = Vec::new();
    for (k, name) in ADULT_CATEGORICAL.iter().enumerate() {
        let mut cols = BTreeMap::new();
        for cat in &categories[k] {
            cols.insert(cat.clone(), meta.len());
            meta.push(FeatureMeta::categorical(k, name, cat));
        }
        column_of.push(cols);
    }
    let dim = meta.len();

    let encode = |rows: &[RawRow], path: &Path| -> Result<(Matrix, Vec<Label>)> {
        let mut x = Matrix::with_capacity(dim, rows.len());
        let mut y = Vec::with_capacity(rows.len());
        let mut unknown = Vec::new();
        let mut buf = vec![0.0; dim];
        for (i, r) in rows.iter().enumerate() {
            buf.iter_mut().for_each(|v| *v = 0.0);
            for (k, &c) in cont_idx.iter().enumerate() {
                let v: f64 = r.fields[c].parse().expect("validated");
                let span = hi[k] - lo[k];
                buf[k] = if span > 0.0 { ((v - lo[k]) / span).clamp(0.0, 1.0) } else { 0.0 };
            }
            for (k, &c) in cat_idx.iter().enumerate() {
                match column_of[k].get(&r.fields[c]) {
                    Some(&col) => buf[col] = 1.0,
                    None => unknown.push(i + 1),
                }
            }
            x.push(&buf)?;
            y.push(r.label);
        }
        if !unknown.is_empty() {
            return Err(Error::MalformedRows { path: path.to_path_buf(), lines: unknown });
        }
        Ok((x, y))
    };
    let (train_x, train_y) = encode(&train, raw_train_path)?;
    let (test_x, test_y) = encode(&test, raw_test_path)?;

    let layout = AdultLayout {
        continuous: ADULT_CONTINUOUS.iter().map(|s| s.to_string()).collect(),
        categorical: ADULT_CATEGORICAL
            .iter()
            .zip(&categories)
            .map(|(n, c)| (n.to_string(), c.iter().cloned().collect()))
            .collect(),
        dropped: RAW_COLUMNS
            .iter()
            .filter(|c| {
                **c != "income" && !ADULT_CONTINUOUS.contains(c) && !ADULT_CATEGORICAL.contains(c)
            })
            .map(|s| s.to_string())
            .collect(),
    };
    let ds = Dataset::new(train_x, train_y, test_x, test_y, meta, Source::Adult { seed })?;
    Ok((ds, layout))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    const ROWS: &str = "\
39, State-gov, 77516, Bachelors, 13, Never-married, Adm-clerical, Not-in-family, White, Male, 2174, 0, 40, United-States, <=50K
50, Self-emp-not-inc, 83311, Bachelors, 13, Married-civ-spouse, Exec-managerial, Husband, White, Male, 0, 0, 13, United-States, >50K
38, Private, 215646, HS-grad, 9, Divorced, Handlers-cleaners, Not-in-family, White, Female, 0, 0, 40, United-States, <=50K
53, ?, 234721, 11th, 7, Married-civ-spouse, ?, Husband, Black, Male, 0, 0, 40, United-States, >50K
28, Private, 338409, Bachelors, 13, Married-civ-spouse, Prof-specialty, Wife, Black, Female, 0, 0, 40, Cuba, <=50K
";

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        let mut f = fs::File::create(&p).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        p
    }

    #[test]
    fn balanced_one_hot_and_scaled() {
        let dir = tempfile::tempdir().unwrap();
        let tr = write(dir.path(), "adult.data", ROWS);
        let te = write(
            dir.path(),
            "adult.test",
            &format!("|1x3 Cross validator\n{}", ROWS.replace("50K\n", "50K.\n")),
        );
        let (ds, layout) = load_adult_with_layout(&tr, &te, 3).unwrap();
        assert_eq!(ds.n_train(), 4);
        assert_eq!(ds.n_test(), 4);
        let pos = ds.train_y.iter().filter(|l| **l == Label::Pos).count();
        assert_eq!(pos, 2);
        assert_eq!(layout.dim(), ds.dim());
        assert!(layout.dropped.contains(&"fnlwgt".to_string()));
        for g in ds.categorical_groups() {
            for x in ds.train_x.rows() {
                assert_eq!(g.columns.iter().map(|(c, _)| x[*c]).sum::<f64>(), 1.0);
            }
        }
        // "?" stays a category of workclass
        assert!(layout.categorical[0].1.contains(&"?".to_string()));
    }

    #[test]
    fn missing_file_is_distinct() {
        let err = load_adult(Path::new("/nonexistent/a"), Path::new("/nonexistent/b"), 0);
        assert!(matches!(err, Err(Error::MissingFile(_))));
    }

    #[test]
    fn malformed_rows_listed() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!("{ROWS}oops, not, enough\n12, Private, 1, HS-grad, 9, x, y, z, w, Male, 0, 0, 40, US, maybe\n");
        let tr = write(dir.path(), "adult.data", &body);
        match load_adult(&tr, &tr, 0) {
            Err(Error::MalformedRows { lines, .. }) => assert_eq!(lines, vec![6, 7]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn all_missing_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let row = "?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?, <=50K\n";
        let tr = write(dir.path(), "adult.data", &row.repeat(3));
        assert!(matches!(load_adult(&tr, &tr, 0), Err(Error::Empty(_))));
    }
}
