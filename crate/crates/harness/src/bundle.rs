//! Scenario outputs and their serialization.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use serde::Serialize;

use sipm_core::fit::FitResult;

use crate::config::ExperimentConfig;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
    pub trials: usize,
    pub version: String,
    /// Scenarios contained in the bundle, in run order.
    pub scenarios: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableRow {
    pub label: String,
    pub fit: FitResult,
}

/// Column-oriented numeric payload, written as CSV.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Curve {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Curve {
    pub fn new(columns: &[&str]) -> Self {
        Curve { columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }

    pub fn write_csv<W: io::Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(&self.columns)?;
        for r in &self.rows {
            out.write_record(r.iter().map(|v| v.to_string()))?;
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ScenarioOutput {
    pub tables: BTreeMap<String, Vec<TableRow>>,
    pub curves: BTreeMap<String, Curve>,
}

impl ScenarioOutput {
    pub fn row(&mut self, table: &str, label: impl Into<String>, fit: FitResult) {
        self.tables.entry(table.to_string()).or_default().push(TableRow { label: label.into(), fit });
    }

    pub fn curve(&mut self, name: impl Into<String>, curve: Curve) {
        self.curves.insert(name.into(), curve);
    }

    pub fn table(&self, name: &str) -> &[TableRow] {
        self.tables.get(name).map_or(&[], Vec::as_slice)
    }
}

/// Builds a table entry from named scalars without uncertainties.
pub fn scalars(values: &[(&str, f64)]) -> FitResult {
    let mut f = FitResult::default();
    for &(n, v) in values {
        f.insert_derived(n, v, 0.0, 0.0);
    }
    f
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultsBundle {
    pub provenance: Provenance,
    pub config: ExperimentConfig,
    pub scenarios: BTreeMap<String, ScenarioOutput>,
}

impl ResultsBundle {
    pub fn new(config: &ExperimentConfig) -> Self {
        ResultsBundle {
            provenance: Provenance {
                config_hash: config.hash(),
                seed: config.seed,
                trials: config.trials,
                version: env!("CARGO_PKG_VERSION").to_string(),
                scenarios: Vec::new(),
            },
            config: config.clone(),
            scenarios: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, out: ScenarioOutput) {
        self.provenance.scenarios.push(name.to_string());
        self.scenarios.insert(name.to_string(), out);
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("bundle serializes")
    }

    /// Aligned text rendering of every table.
    pub fn render_tables(&self) -> String {
        let mut s = String::new();
        for (name, out) in &self.scenarios {
            for (tname, rows) in &out.tables {
                let _ = writeln!(s, "== {name} / {tname}");
                s.push_str(&render_rows(rows));
                s.push('\n');
            }
        }
        s
    }

    /// Writes `bundle.json`, `config.toml`, `tables.txt` and one CSV per
    /// curve under `<dir>/<scenario>/`.
    pub fn write(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("bundle.json"), self.to_json())?;
        fs::write(dir.join("config.toml"), self.config.to_toml())?;
        fs::write(dir.join("tables.txt"), self.render_tables())?;
        for (name, out) in &self.scenarios {
            let sub = dir.join(name);
            fs::create_dir_all(&sub)?;
            for (cname, curve) in &out.curves {
                let f = fs::File::create(sub.join(format!("{cname}.csv")))?;
                curve.write_csv(f).map_err(io::Error::other)?;
            }
        }
        Ok(())
    }
}

fn fmt_num(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let a = v.abs();
    if (1e-3..1e5).contains(&a) {
        format!("{v:.5}")
    } else {
        format!("{v:.4e}")
    }
}

fn render_rows(rows: &[TableRow]) -> String {
    let mut header = vec!["label".to_string()];
    for r in rows {
        for n in &r.fit.names {
            if !header[1..].contains(n) {
                header.push(n.clone());
            }
        }
    }
    let with_fit = rows.iter().any(|r| r.fit.dof > 0);
    if with_fit {
        header.push("chi2_nu".into());
    }
    let mut cells: Vec<Vec<String>> = vec![header.clone()];
    for r in rows {
        let mut line = vec![r.label.clone()];
        for n in &header[1..] {
            if n == "chi2_nu" && with_fit {
                line.push(fmt_num(r.fit.chi2_nu));
                continue;
            }
            line.push(match r.fit.params.get(n) {
                None => "-".into(),
                Some(&v) => {
                    let e = r.fit.error(n);
                    if e > 0.0 {
                        format!("{} +- {}", fmt_num(v), fmt_num(e))
                    } else {
                        fmt_num(v)
                    }
                }
            });
        }
        cells.push(line);
    }
    let widths: Vec<usize> = (0..header.len()).map(|j| cells.iter().map(|l| l[j].len()).max().unwrap_or(0)).collect();
    let mut s = String::new();
    for line in cells {
        let parts: Vec<String> = line.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        let _ = writeln!(s, "{}", parts.join("  ").trim_end());
    }
    s
}
