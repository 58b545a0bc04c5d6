use std::io::Write;
use std::path::{Path, PathBuf};

use fbcsp_core::pipeline::{CellId, CellResult};

/// Writes `contents` to a temporary file beside `path`, then renames it.
pub fn write_atomic(path: &Path, contents: &[u8]) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// `FBCSP_FS_0v2_2s`
pub fn cell_stem(cell: &CellId) -> String {
    format!(
        "{}_{}v{}_{}s",
        cell.kind, cell.pair[0], cell.pair[1], cell.window_seconds
    )
}

pub fn models_dir(out: &Path) -> PathBuf {
    out.join("models")
}

pub fn reports_dir(out: &Path) -> PathBuf {
    out.join("reports")
}

pub fn model_path(out: &Path, cell: &CellId) -> PathBuf {
    models_dir(out).join(format!("{}.json", cell_stem(cell)))
}

pub fn cv_path(out: &Path, cell: &CellId) -> PathBuf {
    models_dir(out).join(format!("{}_cv.csv", cell_stem(cell)))
}

pub fn report_path(out: &Path, cell: &CellId) -> PathBuf {
    reports_dir(out).join(format!("{}.json", cell_stem(cell)))
}

pub fn summary_path(out: &Path) -> PathBuf {
    out.join("summary.csv")
}

pub fn console_table(results: &[CellResult]) -> String {
    let mut out = format!(
        "{:<11} {:<5} {:>7} {:>9} {:>7} {:>7}  {}\n",
        "model", "pair", "window", "accuracy", "n_train", "n_test", "status"
    );
    for r in results {
        let pair = format!("{}v{}", r.cell.pair[0], r.cell.pair[1]);
        let window = format!("{}s", r.cell.window_seconds);
        match r.report() {
            Some(rep) => out.push_str(&format!(
                "{:<11} {:<5} {:>7} {:>9.3} {:>7} {:>7}  ok\n",
                r.cell.kind.name(),
                pair,
                window,
                rep.accuracy,
                rep.n_train,
                rep.n_test
            )),
            None => out.push_str(&format!(
                "{:<11} {:<5} {:>7} {:>9} {:>7} {:>7}  failed\n",
                r.cell.kind.name(),
                pair,
                window,
                "-",
                "-",
                "-"
            )),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use fbcsp_core::pipeline::ModelKind;

    #[test]
    fn stems_name_the_cell() {
        let cell = CellId {
            kind: ModelKind::BpAllF,
            pair: [1, 2],
            window_seconds: 4.0,
        };
        assert_eq!(cell_stem(&cell), "BP_AllF_1v2_4s");
        assert_eq!(
            cv_path(Path::new("out"), &cell),
            Path::new("out/models/BP_AllF_1v2_4s_cv.csv")
        );
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/file.txt");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "two");
        assert_eq!(std::fs::read_dir(path.parent().unwrap()).unwrap().count(), 1);
    }
}
