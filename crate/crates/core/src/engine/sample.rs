use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// `K × P` posterior draws with named columns.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleMatrix {
    names: Vec<String>,
    draws: Vec<f64>,
    stage: usize,
}

impl SampleMatrix {
    /// Builds a matrix from row-major `draws`; `draws.len()` must be a positive
    /// multiple of `names.len()`.
    pub fn from_flat(names: Vec<String>, draws: Vec<f64>, stage: usize) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::Data(
                "sample matrix needs at least one column".into(),
            ));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = names.iter().find(|n| !seen.insert(n.as_str())) {
            return Err(Error::Data(format!("duplicate parameter name {dup:?}")));
        }
        if draws.is_empty() || draws.len() % names.len() != 0 {
            return Err(Error::Data(format!(
                "{} values do not form rows of {} columns",
                draws.len(),
                names.len()
            )));
        }
        if let Some(pos) = draws.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite draw in row {} column {:?}",
                pos / names.len(),
                names[pos % names.len()]
            )));
        }
        if stage == 0 {
            return Err(Error::Data("stage numbers start at 1".into()));
        }
        Ok(Self {
            names,
            draws,
            stage,
        })
    }

    pub fn from_rows(names: Vec<String>, rows: &[Vec<f64>], stage: usize) -> Result<Self> {
        if let Some(bad) = rows.iter().position(|r| r.len() != names.len()) {
            return Err(Error::Data(format!(
                "row {bad} has {} values, expected {}",
                rows[bad].len(),
                names.len()
            )));
        }
        Self::from_flat(names, rows.concat(), stage)
    }

    pub fn nrows(&self) -> usize {
        self.draws.len() / self.names.len()
    }

    pub fn ncols(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn stage(&self) -> usize {
        self.stage
    }

    pub fn with_stage(mut self, stage: usize) -> Self {
        self.stage = stage.max(1);
        self
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.ncols();
        &self.draws[i * p..(i + 1) * p]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.draws.chunks_exact(self.ncols())
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.draws
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let j = self
            .column_index(name)
            .ok_or_else(|| Error::Config(format!("no column named {name:?}")))?;
        Ok(self.column_at(j))
    }

    pub fn column_at(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    /// Rows in the order given by `idx` (repeats allowed).
    pub fn select_rows(&self, idx: &[usize]) -> Result<Self> {
        let mut draws = Vec::with_capacity(idx.len() * self.ncols());
        for &i in idx {
            if i >= self.nrows() {
                return Err(Error::Config(format!(
                    "row {i} out of range for {} rows",
                    self.nrows()
                )));
            }
            draws.extend_from_slice(self.row(i));
        }
        Self::from_flat(self.names.clone(), draws, self.stage)
    }

    pub fn select_columns<S: AsRef<str>>(&self, names: &[S]) -> Result<Self> {
        let idx = names
            .iter()
            .map(|n| {
                self.column_index(n.as_ref())
                    .ok_or_else(|| Error::Config(format!("no column named {:?}", n.as_ref())))
            })
            .collect::<Result<Vec<_>>>()?;
        let draws = self
            .rows()
            .flat_map(|r| idx.iter().map(move |&j| r[j]))
            .collect();
        Self::from_flat(
            names.iter().map(|n| n.as_ref().to_string()).collect(),
            draws,
            self.stage,
        )
    }

    /// Column-wise concatenation of matrices with equal row counts.
    pub fn hstack(&self, other: &Self) -> Result<Self> {
        if self.nrows() != other.nrows() {
            return Err(Error::Data(format!(
                "cannot join {} rows with {}",
                self.nrows(),
                other.nrows()
            )));
        }
        let names = self
            .names
            .iter()
            .chain(other.names.iter())
            .cloned()
            .collect();
        let draws = self
            .rows()
            .zip(other.rows())
            .flat_map(|(a, b)| a.iter().chain(b).copied())
            .collect();
        Self::from_flat(names, draws, self.stage.max(other.stage))
    }

    /// CSV with a header row; values printed with 17 significant digits so the
    /// round trip is exact.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(&self.names)?;
        for row in self.rows() {
            w.write_record(row.iter().map(|v| format!("{v:.16e}")))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R, stage: usize) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let names: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        let mut draws = Vec::new();
        for (line, record) in r.records().enumerate() {
            for field in record?.iter() {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| Error::Data(format!("draw {line}: cannot parse {field:?}")))?;
                draws.push(v);
            }
        }
        Self::from_flat(names, draws, stage)
    }

    /// Writes `<base>.csv` and the `<base>.json` sidecar.
    pub fn save(&self, base: &Path, meta: &SampleMeta) -> Result<()> {
        let csv_path = with_extension(base, "csv");
        self.write_csv(BufWriter::new(File::create(&csv_path)?))?;
        let mut f = BufWriter::new(File::create(with_extension(base, "json"))?);
        serde_json::to_writer_pretty(&mut f, meta)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(base: &Path) -> Result<(Self, SampleMeta)> {
        let meta: SampleMeta =
            serde_json::from_reader(BufReader::new(File::open(with_extension(base, "json"))?))?;
        let samples = Self::read_csv(
            BufReader::new(File::open(with_extension(base, "csv"))?),
            meta.stage.max(1),
        )?;
        if samples.nrows() != meta.k {
            return Err(Error::Data(format!(
                "sidecar says K = {} but the CSV has {} draws",
                meta.k,
                samples.nrows()
            )));
        }
        Ok((samples, meta))
    }
}

fn with_extension(base: &Path, ext: &str) -> PathBuf {
    let mut s = base.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

/// JSON sidecar written next to every sample CSV.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub stage: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub seed: u64,
    pub acceptance_rates: BTreeMap<String, f64>,
    pub timings_ms: BTreeMap<String, f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("p{i}")).collect()
    }

    #[test]
    fn rejects_bad_shapes_and_values() {
        assert!(SampleMatrix::from_flat(names(2), vec![1.0, 2.0, 3.0], 1).is_err());
        assert!(SampleMatrix::from_flat(names(2), vec![], 1).is_err());
        assert!(SampleMatrix::from_flat(names(1), vec![f64::NAN], 1).is_err());
        assert!(SampleMatrix::from_flat(vec!["a".into(), "a".into()], vec![1.0, 2.0], 1).is_err());
    }

    #[test]
    fn select_and_stack() {
        let s = SampleMatrix::from_rows(names(2), &[vec![1.0, 2.0], vec![3.0, 4.0]], 1).unwrap();
        let t = s.select_rows(&[1, 1, 0]).unwrap();
        assert_eq!(t.column("p0").unwrap(), vec![3.0, 3.0, 1.0]);
        let c = s.select_columns(&["p1"]).unwrap();
        assert_eq!(c.as_flat(), &[2.0, 4.0]);
        let j = s
            .hstack(&SampleMatrix::from_rows(vec!["q".into()], &[vec![9.0], vec![8.0]], 2).unwrap())
            .unwrap();
        assert_eq!(j.row(1), &[3.0, 4.0, 8.0]);
        assert_eq!(j.stage(), 2);
    }

    #[test]
    fn save_and_load_with_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let s = SampleMatrix::from_rows(names(2), &[vec![0.1, 1.0 / 3.0], vec![-2.5e-300, 7.0]], 2)
            .unwrap();
        let meta = SampleMeta {
            stage: 2,
            k: 2,
            seed: 9,
            ..Default::default()
        };
        let base = dir.path().join("stage2");
        s.save(&base, &meta).unwrap();
        let (back, meta_back) = SampleMatrix::load(&base).unwrap();
        assert_eq!(back, s);
        assert_eq!(meta_back, meta);
        let text = std::fs::read_to_string(dir.path().join("stage2.json")).unwrap();
        assert!(text.contains("\"K\": 2"));
    }

    proptest! {
        #[test]
        fn csv_round_trip_is_bit_exact(values in proptest::collection::vec(proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO, 3..60)) {
            let n = values.len() / 3 * 3;
            let s = SampleMatrix::from_flat(names(3), values[..n].to_vec(), 1).unwrap();
            let mut buf = Vec::new();
            s.write_csv(&mut buf).unwrap();
            let back = SampleMatrix::read_csv(buf.as_slice(), 1).unwrap();
            prop_assert!(back.as_flat().iter().zip(s.as_flat()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }
}
