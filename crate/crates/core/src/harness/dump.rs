//! Parameter matrices of a checkpoint as CSV grids.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::checkpoint::{ArrayValue, Checkpoint};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// First line of the file written for a shared (single) coefficient.
pub const SHARED_MARKER: &str = "# shared-scalar";

#[derive(Clone, Debug, PartialEq)]
pub enum Dumped {
    Grid(Matrix),
    Shared(f64),
}

/// Writes every array of the checkpoint at `checkpoint` to `<out>/<name>.csv`
/// and `eta` to `<out>/eta.csv`. Returns the files written.
pub fn dump_matrices(checkpoint: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let ck = Checkpoint::load(checkpoint)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut written = Vec::new();
    for (name, value) in &ck.arrays {
        let mut text = String::new();
        match value {
            ArrayValue::Scalar(v) => {
                let _ = writeln!(text, "{SHARED_MARKER}\n{v}");
            }
            ArrayValue::Grid(rows) => {
                for row in rows {
                    let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                    let _ = writeln!(text, "{}", cells.join(","));
                }
            }
        }
        let path = out.join(format!("{name}.csv"));
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    if let Some(eta) = ck.eta {
        let path = out.join("eta.csv");
        std::fs::write(&path, format!("{SHARED_MARKER}\n{eta}\n")).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

/// Reads a file written by [`dump_matrices`].
pub fn parse_dump(path: &Path) -> Result<Dumped> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |msg: String| Error::Data {
        path: path.to_path_buf(),
        msg,
    };
    let mut lines = text.lines().filter(|l| !l.trim().is_empty()).peekable();
    if lines.peek() == Some(&SHARED_MARKER) {
        lines.next();
        let v = lines.next().ok_or_else(|| bad("missing shared value".into()))?;
        return v
            .trim()
            .parse()
            .map(Dumped::Shared)
            .map_err(|_| bad(format!("bad number `{v}`")));
    }
    let rows = lines
        .map(|l| {
            l.split(',')
                .map(|c| c.trim().parse::<f64>().map_err(|_| bad(format!("bad number `{c}`"))))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Matrix::from_rows(&rows)
        .map(Dumped::Grid)
        .map_err(|e| bad(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::{Condition, ExperimentConfig, TaskKind};
    use crate::harness::model::Model;
    use crate::optim::{AdamConfig, AdamState};

    fn write_checkpoint(dir: &Path, condition: Condition) -> (PathBuf, Model) {
        let mut cfg = ExperimentConfig::new(TaskKind::Binary, condition, 1, dir);
        cfg.task.n_elements = Some(5);
        let model = Model::init(&cfg).unwrap();
        let ck = Checkpoint::capture(&cfg, &model, &AdamState::new(AdamConfig::default()), 0);
        let path = dir.join("ck.json");
        ck.save(&path).unwrap();
        (path, model)
    }

    #[test]
    fn dump_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let (ck, model) = write_checkpoint(dir.path(), Condition::Plastic);
        let files = dump_matrices(&ck, &dir.path().join("out")).unwrap();
        assert_eq!(files.len(), 3);
        let Model::Plastic(net) = model else { panic!() };
        assert_eq!(
            parse_dump(&dir.path().join("out/w.csv")).unwrap(),
            Dumped::Grid(net.params.w)
        );
        assert_eq!(
            parse_dump(&dir.path().join("out/alpha.csv")).unwrap(),
            Dumped::Grid(net.params.alpha)
        );
        assert_eq!(
            parse_dump(&dir.path().join("out/eta.csv")).unwrap(),
            Dumped::Shared(net.params.eta)
        );
    }

    #[test]
    fn shared_alpha_gets_a_marker_row() {
        let dir = tempfile::tempdir().unwrap();
        let (ck, model) = write_checkpoint(dir.path(), Condition::Homogeneous);
        dump_matrices(&ck, dir.path()).unwrap();
        let text = std::fs::read_to_string(dir.path().join("alpha.csv")).unwrap();
        assert!(text.starts_with(SHARED_MARKER));
        let Model::Plastic(net) = model else { panic!() };
        assert_eq!(
            parse_dump(&dir.path().join("alpha.csv")).unwrap(),
            Dumped::Shared(net.params.alpha.item())
        );
    }
}
