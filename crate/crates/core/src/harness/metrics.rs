//! CSV output. Every file starts with a `# schema: <name> v<N>` line followed
//! by a header row. Floats use Rust's shortest round-trip formatting.

use std::fs::File;
use std::path::Path;

use crate::error::Result;
use crate::network::NUM_CONSTRAINTS;

pub const TRAIN_SCHEMA: &str = "uavnet-train v1";
pub const TIMING_SCHEMA: &str = "uavnet-timing v1";
pub const EVAL_SCHEMA: &str = "uavnet-eval v1";
pub const ADAPT_SCHEMA: &str = "uavnet-adapt v1";
pub const TRAJ_SCHEMA: &str = "uavnet-traj v1";
pub const BENCH_SCHEMA: &str = "uavnet-bench v1";

/// Shared by A3C and meta-A3C runs so the two are directly comparable.
pub const TRAIN_HEADER: [&str; 11] = [
    "step",
    "algo",
    "worker",
    "task_ids",
    "mean_reward",
    "pre_reward",
    "post_reward",
    "actor_loss",
    "critic_loss",
    "entropy",
    "grad_norm",
];

pub struct CsvOut {
    w: csv::Writer<File>,
}

impl CsvOut {
    pub fn create(path: &Path, schema: &str, header: &[&str]) -> Result<Self> {
        use std::io::Write;
        let mut f = File::create(path)?;
        writeln!(f, "# schema: {schema}")?;
        let mut w = csv::Writer::from_writer(f);
        w.write_record(header)?;
        Ok(Self { w })
    }

    pub fn row<I, S>(&mut self, fields: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.w.write_record(fields)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.w.flush()?;
        Ok(())
    }
}

pub fn f(x: f64) -> String {
    format!("{x}")
}

pub fn opt(x: Option<f64>) -> String {
    x.map(f).unwrap_or_default()
}

/// Header names `c1` … `c11`.
pub fn constraint_columns() -> Vec<String> {
    (1..=NUM_CONSTRAINTS).map(|c| format!("c{c}")).collect()
}

/// Reads a schema-prefixed CSV back into its header and string records.
pub fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    let header = r.headers()?.iter().map(str::to_owned).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|r| r.iter().map(str::to_owned).collect()))
        .collect::<std::result::Result<_, _>>()?;
    Ok((header, rows))
}
