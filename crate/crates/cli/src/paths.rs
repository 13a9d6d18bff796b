//! Artifact layout under the data root.

use std::path::{Path, PathBuf};

pub const DATA_DIR_ENV: &str = "TWINSIM_DATA_DIR";
pub const DEFAULT_DATA_DIR: &str = "twinsim-data";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DataDir {
    root: PathBuf,
}

impl DataDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    /// `$TWINSIM_DATA_DIR`, else `./twinsim-data`.
    pub fn from_env() -> Self {
        Self::new(std::env::var_os(DATA_DIR_ENV).map_or_else(|| PathBuf::from(DEFAULT_DATA_DIR), PathBuf::from))
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn scene(&self) -> PathBuf {
        self.root.join("scene.json")
    }

    pub fn demos(&self) -> PathBuf {
        self.root.join("demos")
    }

    pub fn collect_summary(&self) -> PathBuf {
        self.root.join("collect_summary.csv")
    }

    pub fn checkpoints(&self, name: &str) -> PathBuf {
        self.root.join("checkpoints").join(name)
    }

    pub fn checkpoint(&self, name: &str, step: usize) -> PathBuf {
        self.checkpoints(name).join(format!("step-{step:06}.ckpt"))
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn failures(&self) -> PathBuf {
        self.root.join("failures.json")
    }
}

/// Steps of the checkpoints saved under `dir`, ascending.
pub fn checkpoint_steps(dir: &Path) -> std::io::Result<Vec<usize>> {
    let mut steps: Vec<usize> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            name.strip_prefix("step-")?.strip_suffix(".ckpt")?.parse().ok()
        })
        .collect();
    steps.sort_unstable();
    Ok(steps)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_names_sort_by_step() {
        let dir = tempfile::tempdir().unwrap();
        let data = DataDir::new(dir.path());
        std::fs::create_dir_all(data.checkpoints("state")).unwrap();
        for step in [5000, 1000, 1500] {
            std::fs::write(data.checkpoint("state", step), b"").unwrap();
        }
        std::fs::write(data.checkpoints("state").join("train_log.csv"), b"").unwrap();
        assert_eq!(data.checkpoint("state", 1500).file_name().unwrap(), "step-001500.ckpt");
        assert_eq!(checkpoint_steps(&data.checkpoints("state")).unwrap(), vec![1000, 1500, 5000]);
    }
}
