use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use serde::Serialize;

use recursive_bayes::diagnostics::{compare_with_origins, ComparisonReport, MatchThresholds};

use crate::commands::{load_run, write_json};
use crate::error::{CliError, CliResult};

#[derive(Serialize)]
struct CompareOutput<'a> {
    run_a: String,
    run_b: String,
    thresholds: MatchThresholds,
    passes: bool,
    report: &'a ComparisonReport,
}

type Origins = Option<Vec<(String, Vec<usize>)>>;

/// Origin indices for parameter `name`: a column named after it, else a
/// shared `origin` column.
fn origin_for<'a>(origins: &'a Origins, name: &str) -> Option<&'a [usize]> {
    let o = origins.as_ref()?;
    o.iter()
        .find(|(n, _)| n == name)
        .or_else(|| o.iter().find(|(n, _)| n == "origin"))
        .map(|(_, v)| v.as_slice())
}

/// Compares the final posteriors of two `fit` output directories and writes
/// `comparison.json` and `comparison.csv` to `out`. Returns whether every
/// parameter met the default thresholds.
pub fn compare_runs(run_a: &Path, run_b: &Path, out: &Path) -> CliResult<bool> {
    let (a, oa) = load_run(run_a)?;
    let (b, ob) = load_run(run_b)?;
    let mut na = a.names().to_vec();
    let mut nb = b.names().to_vec();
    na.sort();
    nb.sort();
    if na != nb {
        return Err(CliError::Config(format!(
            "runs have different parameters: {:?} vs {:?}",
            a.names(),
            b.names()
        )));
    }
    let mut report = ComparisonReport::default();
    for name in a.names() {
        let cols = [name.as_str()];
        let part = compare_with_origins(
            &a.select_columns(&cols)?,
            origin_for(&oa, name),
            &b.select_columns(&cols)?,
            origin_for(&ob, name),
        )?;
        report.parameters.extend(part.parameters);
    }
    let thresholds = MatchThresholds::default();
    let passes = report.passes(&thresholds);
    std::fs::create_dir_all(out)?;
    write_json(
        &out.join("comparison.json"),
        &CompareOutput {
            run_a: run_a.display().to_string(),
            run_b: run_b.display().to_string(),
            thresholds,
            passes,
            report: &report,
        },
    )?;
    report.write_csv(BufWriter::new(File::create(out.join("comparison.csv"))?))?;
    Ok(passes)
}
