//! Metric reports: aligned text table plus CSV twin.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImageScore {
    pub scene: usize,
    pub psnr: f64,
    pub ssim: f64,
    /// Enhancement level used for this image (the per-image optimum in grid mode).
    pub alpha2: f32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub method: String,
    /// Target exposures the model was fit to, e.g. `1,10`.
    pub trained: String,
    pub test_exposure: f32,
    pub alpha1: f32,
    /// How alpha2 was chosen: a number, `loglin=<v>` or `grid`.
    pub alpha2: String,
    pub scores: Vec<ImageScore>,
}

impl ReportRow {
    pub fn mean_psnr(&self) -> f64 {
        mean(self.scores.iter().map(|s| s.psnr))
    }

    pub fn mean_ssim(&self) -> f64 {
        mean(self.scores.iter().map(|s| s.ssim))
    }
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// A published value kept next to the desk-scale numbers for context.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceValue {
    pub label: String,
    pub psnr: f64,
}

/// An ordering evaluated on the report's rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub experiment: String,
    pub fingerprint: String,
    pub rows: Vec<ReportRow>,
    pub references: Vec<ReferenceValue>,
    pub checks: Vec<Check>,
}

impl MetricReport {
    pub fn new(experiment: impl Into<String>, fingerprint: impl Into<String>) -> Self {
        Self {
            experiment: experiment.into(),
            fingerprint: fingerprint.into(),
            rows: Vec::new(),
            references: Vec::new(),
            checks: Vec::new(),
        }
    }

    pub fn row(&self, method: &str, test_exposure: f32) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.method == method && r.test_exposure == test_exposure)
    }

    pub fn check(&mut self, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.checks.push(Check { name: name.into(), passed, detail: detail.into() });
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# experiment: {}", self.experiment);
        let _ = writeln!(s, "# fingerprint: {}", self.fingerprint);
        let header = ["method", "trained", "test_s", "alpha1", "alpha2", "psnr_db", "ssim", "images"];
        let body: Vec<[String; 8]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.method.clone(),
                    r.trained.clone(),
                    format!("{}", r.test_exposure),
                    format!("{}", r.alpha1),
                    r.alpha2.clone(),
                    format!("{:.3}", r.mean_psnr()),
                    format!("{:.4}", r.mean_ssim()),
                    r.scores.len().to_string(),
                ]
            })
            .collect();
        let widths: Vec<usize> = (0..header.len())
            .map(|c| body.iter().map(|r| r[c].len()).chain([header[c].len()]).max().unwrap_or(0))
            .collect();
        let line = |cells: &[String]| {
            cells
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:<w$}"))
                .collect::<Vec<_>>()
                .join("  ")
                .trim_end()
                .to_string()
        };
        let _ = writeln!(s, "{}", line(&header.map(String::from)));
        for r in &body {
            let _ = writeln!(s, "{}", line(r));
        }
        for r in &self.references {
            let _ = writeln!(s, "# reference {}: {:.2} dB", r.label, r.psnr);
        }
        for c in &self.checks {
            let _ = writeln!(s, "# check {}: {} ({})", c.name, if c.passed { "pass" } else { "fail" }, c.detail);
        }
        s
    }

    /// One line per image plus a `mean` line per row. Floats use the
    /// shortest round-trip form so reruns compare byte for byte.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("experiment,method,trained,test_s,alpha1,alpha2,alpha2_used,scene,psnr_db,ssim\n");
        for r in &self.rows {
            let prefix = format!(
                "{},{},\"{}\",{:?},{:?},{}",
                self.experiment, r.method, r.trained, r.test_exposure, r.alpha1, r.alpha2
            );
            for sc in &r.scores {
                let _ = writeln!(s, "{prefix},{:?},{},{:?},{:?}", sc.alpha2, sc.scene, sc.psnr, sc.ssim);
            }
            let _ = writeln!(s, "{prefix},,mean,{:?},{:?}", r.mean_psnr(), r.mean_ssim());
        }
        s
    }

    /// SHA-256 of the CSV: equal digests mean bit-identical metrics.
    pub fn metrics_digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_csv().as_bytes()))
    }

    /// Writes `<stem>.txt` and `<stem>.csv` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (ext, body) in [("txt", self.to_text()), ("csv", self.to_csv())] {
            let path = dir.join(format!("{stem}.{ext}"));
            std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}
