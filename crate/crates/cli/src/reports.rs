//! Machine-readable report emission: JSON and CSV epoch-report streams with
//! 17-significant-digit numbers, plus atomic file writes.

use std::path::{Path, PathBuf};

use pdalign_core::trainer::EpochReport;

use crate::CliError;

/// Output format for report streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

/// Serialize a float with 17 significant digits, enough to recover the
/// exact bit pattern on parse.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(v) => fmt_f64(v),
        None => "null".into(),
    }
}

/// One JSON object per epoch, one per line, wrapped in a JSON array.
pub fn reports_to_json(reports: &[EpochReport]) -> String {
    let mut out = String::from("[\n");
    for (i, r) in reports.iter().enumerate() {
        let tau: Vec<String> = r.tau.iter().map(|&t| fmt_f64(t)).collect();
        out.push_str(&format!(
            "{{\"epoch\":{},\"l_ce\":{},\"l_comp\":{},\"l_inter\":{},\"l_intra\":{},\"l_ent\":{},\"total\":{},\"n_tau\":{},\"accuracy\":{},\"tau\":[{}],\"wall_ms\":{}}}{}",
            r.epoch,
            fmt_f64(r.l_ce),
            fmt_f64(r.l_comp),
            fmt_f64(r.l_inter),
            fmt_f64(r.l_intra),
            fmt_f64(r.l_ent),
            fmt_f64(r.total),
            r.n_tau,
            fmt_opt(r.accuracy),
            tau.join(","),
            r.wall_ms,
            if i + 1 < reports.len() { ",\n" } else { "\n" }
        ));
    }
    out.push(']');
    out.push('\n');
    out
}

/// CSV with the same columns; `tau` flattened as `tau_0..tau_{K_s−1}`.
pub fn reports_to_csv(reports: &[EpochReport]) -> String {
    let k_s = reports.first().map_or(0, |r| r.tau.len());
    let mut out = String::from("epoch,l_ce,l_comp,l_inter,l_intra,l_ent,total,n_tau,accuracy");
    for k in 0..k_s {
        out.push_str(&format!(",tau_{k}"));
    }
    out.push_str(",wall_ms\n");
    for r in reports {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}",
            r.epoch,
            fmt_f64(r.l_ce),
            fmt_f64(r.l_comp),
            fmt_f64(r.l_inter),
            fmt_f64(r.l_intra),
            fmt_f64(r.l_ent),
            fmt_f64(r.total),
            r.n_tau,
            r.accuracy.map(fmt_f64).unwrap_or_default(),
        ));
        for &t in &r.tau {
            out.push(',');
            out.push_str(&fmt_f64(t));
        }
        out.push_str(&format!(",{}\n", r.wall_ms));
    }
    out
}

/// Emit an epoch-report stream in the requested format.
pub fn emit_reports(
    reports: &[EpochReport],
    format: ReportFormat,
    out_path: &Path,
) -> Result<(), CliError> {
    if reports.is_empty() {
        return Err(CliError::Runtime("no reports to emit".into()));
    }
    let body = match format {
        ReportFormat::Json => reports_to_json(reports),
        ReportFormat::Csv => reports_to_csv(reports),
    };
    write_atomic(out_path, body.as_bytes())
}

/// Write via a temp file in the same directory plus an atomic rename, so an
/// existing file is never left partially overwritten.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let tmp: PathBuf = {
        let mut name = path
            .file_name()
            .ok_or_else(|| CliError::Runtime(format!("bad output path {}", path.display())))?
            .to_os_string();
        name.push(".tmp");
        match dir {
            Some(d) => d.join(name),
            None => PathBuf::from(name),
        }
    };
    std::fs::write(&tmp, bytes)
        .map_err(|e| CliError::Runtime(format!("write {}: {e}", tmp.display())))?;
    std::fs::rename(&tmp, path)
        .map_err(|e| CliError::Runtime(format!("rename to {}: {e}", path.display())))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_report() -> EpochReport {
        EpochReport {
            epoch: 3,
            l_ce: 1.0 / 3.0,
            l_comp: -0.123_456_789_123_456_78,
            l_inter: 42.0,
            l_intra: 0.5,
            l_ent: 0.25,
            total: 1.0 / 7.0,
            n_tau: 17,
            accuracy: Some(0.9633333333333334),
            tau: vec![0.1, 0.2],
            wall_ms: 12,
        }
    }

    #[test]
    fn json_round_trip_recovers_exact_values() {
        let reports = vec![sample_report()];
        let text = reports_to_json(&reports);
        let parsed: serde_json::Value = serde_json::from_str(&text).unwrap();
        let obj = &parsed[0];
        assert_eq!(obj["epoch"], 3);
        assert_eq!(obj["l_ce"].as_f64().unwrap(), 1.0 / 3.0);
        assert_eq!(obj["l_comp"].as_f64().unwrap(), -0.123_456_789_123_456_78);
        assert_eq!(obj["total"].as_f64().unwrap(), 1.0 / 7.0);
        assert_eq!(obj["accuracy"].as_f64().unwrap(), 0.9633333333333334);
        assert_eq!(obj["tau"][1].as_f64().unwrap(), 0.2);
        assert_eq!(obj["n_tau"], 17);
    }

    #[test]
    fn csv_has_one_row_and_flattened_tau() {
        let reports = vec![sample_report()];
        let text = reports_to_csv(&reports);
        let mut lines = text.lines();
        let header = lines.next().unwrap();
        assert_eq!(
            header,
            "epoch,l_ce,l_comp,l_inter,l_intra,l_ent,total,n_tau,accuracy,tau_0,tau_1,wall_ms"
        );
        let row = lines.next().unwrap();
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields.len(), 12);
        assert_eq!(fields[0], "3");
        let reparsed: f64 = fields[1].parse().unwrap();
        assert_eq!(reparsed, 1.0 / 3.0);
        assert!(lines.next().is_none());
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.txt");
        write_atomic(&path, b"first").unwrap();
        write_atomic(&path, b"second").unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "second");
        assert!(!dir.path().join("out.txt.tmp").exists());
    }
}
