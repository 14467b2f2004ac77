use std::io::{BufRead, Write};
use std::path::Path;

use nalgebra::DVector;

use super::ScenarioError;

/// Provenance recorded above the CSV table as `# key: value` lines.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogHeader {
    pub scenario: String,
    pub scenario_sha256: String,
    pub mode: String,
    pub seed: u64,
    pub backend: String,
    pub rng: String,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub t: usize,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub norm_x: f64,
    /// `plain`, `excite` or `switch`; left open so foreign logs can be merged.
    pub mode: String,
    pub gain_index: usize,
    /// Empty unless a gain update ran at this step.
    pub solver_status: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub header: LogHeader,
    pub rows: Vec<LogRow>,
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

const HEADER_KEYS: [&str; 7] = [
    "scenario",
    "scenario_sha256",
    "mode",
    "seed",
    "backend",
    "rng",
    "version",
];

impl RunLog {
    pub fn n(&self) -> usize {
        self.rows.first().map_or(0, |r| r.x.len())
    }

    pub fn m(&self) -> usize {
        self.rows.first().map_or(0, |r| r.u.len())
    }

    pub fn states(&self) -> Vec<DVector<f64>> {
        self.rows.iter().map(|r| DVector::from_column_slice(&r.x)).collect()
    }

    pub fn inputs(&self) -> Vec<DVector<f64>> {
        self.rows.iter().map(|r| DVector::from_column_slice(&r.u)).collect()
    }

    pub fn switch_rows(&self) -> impl Iterator<Item = &LogRow> {
        self.rows.iter().filter(|r| r.mode == "switch")
    }

    pub fn write<W: Write>(&self, out: W) -> Result<(), ScenarioError> {
        let mut out = out;
        let h = &self.header;
        let values = [
            h.scenario.clone(),
            h.scenario_sha256.clone(),
            h.mode.clone(),
            h.seed.to_string(),
            h.backend.clone(),
            h.rng.clone(),
            h.version.clone(),
        ];
        for (k, v) in HEADER_KEYS.iter().zip(values) {
            writeln!(out, "# {k}: {v}").map_err(io)?;
        }
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        let mut cols = vec!["t".to_string()];
        cols.extend((1..=self.n()).map(|i| format!("x{i}")));
        cols.extend((1..=self.m()).map(|i| format!("u{i}")));
        cols.extend(["norm_x", "mode", "gain_index", "solver_status"].map(String::from));
        w.write_record(&cols).map_err(csv_err)?;
        for r in &self.rows {
            let mut rec = vec![r.t.to_string()];
            rec.extend(r.x.iter().map(|v| fmt_f64(*v)));
            rec.extend(r.u.iter().map(|v| fmt_f64(*v)));
            rec.push(fmt_f64(r.norm_x));
            rec.push(r.mode.clone());
            rec.push(r.gain_index.to_string());
            rec.push(r.solver_status.clone());
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush().map_err(io)?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("log is ASCII")
    }

    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let mut header_vals = std::collections::HashMap::new();
        let mut body = String::new();
        for line in text.as_bytes().lines() {
            let line = line.map_err(io)?;
            if let Some(rest) = line.strip_prefix("# ") {
                if let Some((k, v)) = rest.split_once(": ") {
                    header_vals.insert(k.to_string(), v.to_string());
                }
            } else {
                body.push_str(&line);
                body.push('\n');
            }
        }
        let get = |k: &str| {
            header_vals
                .get(k)
                .cloned()
                .ok_or_else(|| ScenarioError::Log(format!("missing header field '{k}'")))
        };
        let header = LogHeader {
            scenario: get("scenario")?,
            scenario_sha256: get("scenario_sha256")?,
            mode: get("mode")?,
            seed: get("seed")?
                .parse()
                .map_err(|e| ScenarioError::Log(format!("seed: {e}")))?,
            backend: get("backend")?,
            rng: get("rng")?,
            version: get("version")?,
        };

        let mut rdr = csv::ReaderBuilder::new().from_reader(body.as_bytes());
        let cols: Vec<String> = rdr.headers().map_err(csv_err)?.iter().map(String::from).collect();
        let n = cols.iter().filter(|c| c.starts_with('x')).count();
        let m = cols.iter().filter(|c| c.starts_with('u')).count();
        if cols.len() != n + m + 5 {
            return Err(ScenarioError::Log(format!("unexpected columns {cols:?}")));
        }
        let num = |s: &str| -> Result<f64, ScenarioError> {
            s.parse()
                .map_err(|e| ScenarioError::Log(format!("bad number '{s}': {e}")))
        };
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(csv_err)?;
            let f: Vec<&str> = rec.iter().collect();
            rows.push(LogRow {
                t: f[0].parse().map_err(|e| ScenarioError::Log(format!("bad t: {e}")))?,
                x: f[1..=n].iter().map(|s| num(s)).collect::<Result<_, _>>()?,
                u: f[n + 1..=n + m].iter().map(|s| num(s)).collect::<Result<_, _>>()?,
                norm_x: num(f[n + m + 1])?,
                mode: f[n + m + 2].to_string(),
                gain_index: f[n + m + 3]
                    .parse()
                    .map_err(|e| ScenarioError::Log(format!("bad gain index: {e}")))?,
                solver_status: f[n + m + 4].to_string(),
            });
        }
        Ok(RunLog { header, rows })
    }

    pub fn read(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(io)?;
        Self::parse(&text)
    }
}

/// Writes `log` to `path` as CSV.
pub fn emit_csv(log: &RunLog, path: &Path) -> Result<(), ScenarioError> {
    let file = std::fs::File::create(path).map_err(io)?;
    let mut out = std::io::BufWriter::new(file);
    log.write(&mut out)?;
    out.flush().map_err(io)
}

fn io(e: std::io::Error) -> ScenarioError {
    ScenarioError::Io(e.to_string())
}

fn csv_err(e: csv::Error) -> ScenarioError {
    ScenarioError::Log(e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header() -> LogHeader {
        LogHeader {
            scenario: "unit".into(),
            scenario_sha256: "00".into(),
            mode: "oddac".into(),
            seed: 3,
            backend: "none".into(),
            rng: "chacha20".into(),
            version: "0".into(),
        }
    }

    #[test]
    fn single_row_log() {
        let log = RunLog {
            header: header(),
            rows: vec![LogRow {
                t: 0,
                x: vec![1.0, -0.1],
                u: vec![1.0 / 3.0],
                norm_x: 1.0f64.hypot(0.1),
                mode: "plain".into(),
                gain_index: 0,
                solver_status: String::new(),
            }],
        };
        let text = log.to_csv_string();
        assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 2);
        assert!(text.contains("t,x1,x2,u1,norm_x,mode,gain_index,solver_status\n"));
        assert!(!text.contains('\r'));
        assert_eq!(RunLog::parse(&text).unwrap(), log);
    }

    #[test]
    fn missing_header_is_an_error() {
        assert!(matches!(
            RunLog::parse("t,x1,u1,norm_x,mode,gain_index,solver_status\n"),
            Err(ScenarioError::Log(_))
        ));
    }
}
