use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use warpsplit::psplit::IterationRecord;

use crate::config::TraceFormat;
use crate::CliError;

pub const CSV_HEADER: [&str; 8] = [
    "n",
    "pi",
    "tau",
    "theta",
    "step_norm",
    "kkt_residual",
    "dist_to_reference",
    "wall_clock_ns",
];

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes one row per iteration. Floats use the shortest representation
/// that round-trips, so identical runs give identical bytes.
pub fn write_trace(path: &Path, format: TraceFormat, records: &[IterationRecord]) -> Result<(), CliError> {
    let file = File::create(path).map_err(io_err(path))?;
    match format {
        TraceFormat::Csv => write_csv(BufWriter::new(file), records).map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(source) => CliError::Io {
                path: path.to_path_buf(),
                source,
            },
            other => CliError::Usage(format!("{}: csv error {other:?}", path.display())),
        }),
        TraceFormat::Jsonl => {
            let mut w = BufWriter::new(file);
            for r in records {
                serde_json::to_writer(&mut w, r).map_err(|e| CliError::Io {
                    path: path.to_path_buf(),
                    source: e.into(),
                })?;
                w.write_all(b"\n").map_err(io_err(path))?;
            }
            w.flush().map_err(io_err(path))
        }
    }
}

pub fn write_csv<W: Write>(w: W, records: &[IterationRecord]) -> csv::Result<()> {
    let mut out = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w);
    out.write_record(CSV_HEADER)?;
    for r in records {
        out.write_record([
            r.n.to_string(),
            r.pi.to_string(),
            r.tau.to_string(),
            r.theta.to_string(),
            r.step_norm.to_string(),
            r.kkt_residual.to_string(),
            r.dist_to_reference.map(|d| d.to_string()).unwrap_or_default(),
            r.wall_clock_ns.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Drops the wall-clock column, leaving the part of a CSV trace that is
/// reproducible across runs.
pub fn strip_wall_clock(csv_text: &str) -> String {
    csv_text
        .lines()
        .map(|l| match l.rfind(',') {
            Some(p) => &l[..p],
            None => l,
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(n: usize, dist: Option<f64>) -> IterationRecord {
        IterationRecord {
            n,
            pi: 0.5,
            tau: 2.0,
            theta: 0.25,
            step_norm: 1e-17,
            kkt_residual: 3.0,
            dist_to_reference: dist,
            wall_clock_ns: 42,
        }
    }

    #[test]
    fn csv_layout() {
        let mut buf = Vec::new();
        write_csv(&mut buf, &[rec(0, None), rec(1, Some(0.125))]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "n,pi,tau,theta,step_norm,kkt_residual,dist_to_reference,wall_clock_ns\n\
             0,0.5,2,0.25,0.00000000000000001,3,,42\n\
             1,0.5,2,0.25,0.00000000000000001,3,0.125,42\n"
        );
        assert!(!text.contains('\r'));
        assert_eq!(
            strip_wall_clock(&text),
            "n,pi,tau,theta,step_norm,kkt_residual,dist_to_reference\n\
             0,0.5,2,0.25,0.00000000000000001,3,\n\
             1,0.5,2,0.25,0.00000000000000001,3,0.125"
        );
    }

    #[test]
    fn floats_round_trip() {
        let mut buf = Vec::new();
        let mut r = rec(0, None);
        r.pi = 0.1 + 0.2;
        write_csv(&mut buf, &[r]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let pi: f64 = text.lines().nth(1).unwrap().split(',').nth(1).unwrap().parse().unwrap();
        assert_eq!(pi, 0.1 + 0.2);
    }
}
