//! On-disk layout for kernel snapshots taken during training.
//!
//! ```text
//! dir/metadata.txt          key=value lines
//! dir/snapshots.csv         step,loss,kind
//! dir/step_00000000/        components.txt + <tensor>.ntkmat, or full.ntkmat
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;

use super::matfile::{read_matrix, write_matrix, MatFormat};
use crate::ntk::NtkComponents;
use crate::training::{SnapshotKernel, SnapshotRecord, SnapshotSeries, SnapshotSink};
use crate::{Error, Result};

const METADATA: &str = "metadata.txt";
const INDEX: &str = "snapshots.csv";
const COMPONENT_LIST: &str = "components.txt";
const FULL: &str = "full.ntkmat";

/// Ordered `key=value` run description.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Metadata(pub IndexMap<String, String>);

impl Metadata {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) -> &mut Self {
        self.0.insert(key.into(), value.to_string());
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    pub fn encode(&self) -> String {
        self.0.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn decode(text: &str) -> Result<Self> {
        let mut map = IndexMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("metadata line without `=`: {line}")))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(Self(map))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&text).map_err(|e| parse_err(path, e))
    }
}

fn parse_err(path: &Path, e: Error) -> Error {
    match e {
        Error::InvalidConfig(msg) => Error::Parse {
            path: path.to_path_buf(),
            msg,
        },
        other => other,
    }
}

fn step_dir(dir: &Path, step: usize) -> PathBuf {
    dir.join(format!("step_{step:08}"))
}

fn kind(k: &SnapshotKernel) -> &'static str {
    match k {
        SnapshotKernel::Components(_) => "components",
        SnapshotKernel::Full(_) => "full",
        SnapshotKernel::None => "none",
    }
}

/// Writes each snapshot to disk as it arrives.
pub struct DiskSnapshotSink {
    dir: PathBuf,
    index: String,
    last_step: Option<usize>,
}

impl DiskSnapshotSink {
    /// Creates `dir` and writes the metadata file.
    pub fn create(dir: impl AsRef<Path>, metadata: &Metadata) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        metadata.write(dir.join(METADATA))?;
        let sink = Self {
            dir,
            index: "step,loss,kind\n".into(),
            last_step: None,
        };
        sink.flush_index()?;
        Ok(sink)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn flush_index(&self) -> Result<()> {
        let path = self.dir.join(INDEX);
        fs::write(&path, &self.index).map_err(|e| Error::io(&path, e))
    }
}

impl SnapshotSink for DiskSnapshotSink {
    fn record(&mut self, rec: SnapshotRecord) -> Result<()> {
        if self.last_step.is_some_and(|s| rec.step <= s) {
            return Err(Error::InvalidConfig(format!("snapshot step {} is out of order", rec.step)));
        }
        match &rec.kernel {
            SnapshotKernel::Components(c) => {
                let sd = step_dir(&self.dir, rec.step);
                fs::create_dir_all(&sd).map_err(|e| Error::io(&sd, e))?;
                let mut list = String::new();
                for (name, k) in c.iter() {
                    write_matrix(sd.join(format!("{name}.ntkmat")), k, MatFormat::Binary)?;
                    list.push_str(name);
                    list.push('\n');
                }
                let lp = sd.join(COMPONENT_LIST);
                fs::write(&lp, list).map_err(|e| Error::io(&lp, e))?;
            }
            SnapshotKernel::Full(k) => {
                let sd = step_dir(&self.dir, rec.step);
                fs::create_dir_all(&sd).map_err(|e| Error::io(&sd, e))?;
                write_matrix(sd.join(FULL), k, MatFormat::Binary)?;
            }
            SnapshotKernel::None => {}
        }
        self.index.push_str(&format!("{},{:.16e},{}\n", rec.step, rec.loss, kind(&rec.kernel)));
        self.last_step = Some(rec.step);
        self.flush_index()
    }
}

pub fn write_snapshot_series(dir: impl AsRef<Path>, metadata: &Metadata, series: &SnapshotSeries) -> Result<()> {
    let mut sink = DiskSnapshotSink::create(dir, metadata)?;
    for rec in series.records() {
        sink.record(rec.clone())?;
    }
    Ok(())
}

pub fn read_snapshot_series(dir: impl AsRef<Path>) -> Result<(Metadata, SnapshotSeries)> {
    let dir = dir.as_ref();
    let metadata = Metadata::read(dir.join(METADATA))?;
    let index_path = dir.join(INDEX);
    let index = fs::read_to_string(&index_path).map_err(|e| Error::io(&index_path, e))?;
    let bad = |msg: String| Error::Parse {
        path: index_path.clone(),
        msg,
    };
    let mut series = SnapshotSeries::new();
    for line in index.lines().skip(1).filter(|l| !l.is_empty()) {
        let fields: Vec<&str> = line.split(',').collect();
        let [step, loss, kind] = fields[..] else {
            return Err(bad(format!("expected 3 fields: {line}")));
        };
        let step: usize = step.parse().map_err(|_| bad(format!("bad step `{step}`")))?;
        let loss: f64 = loss.parse().map_err(|_| bad(format!("bad loss `{loss}`")))?;
        let sd = step_dir(dir, step);
        let kernel = match kind {
            "components" => {
                let lp = sd.join(COMPONENT_LIST);
                let list = fs::read_to_string(&lp).map_err(|e| Error::io(&lp, e))?;
                let mut comps = NtkComponents::new();
                for name in list.lines().filter(|l| !l.is_empty()) {
                    comps.insert(name, read_matrix(sd.join(format!("{name}.ntkmat")))?);
                }
                SnapshotKernel::Components(comps)
            }
            "full" => SnapshotKernel::Full(read_matrix(sd.join(FULL))?),
            "none" => SnapshotKernel::None,
            other => return Err(bad(format!("unknown snapshot kind `{other}`"))),
        };
        series.push(SnapshotRecord { step, loss, kernel })?;
    }
    Ok((metadata, series))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Mat;

    fn series() -> SnapshotSeries {
        let mut comps = NtkComponents::new();
        comps.insert("layer1.weight", Mat::from_rows(&[[2.0, 0.5], [0.5, 1.0 / 3.0]]).unwrap());
        comps.insert("readout.weight", Mat::identity(2));
        let mut s = SnapshotSeries::new();
        s.push(SnapshotRecord { step: 0, loss: std::f64::consts::LN_2, kernel: SnapshotKernel::Components(comps) }).unwrap();
        s.push(SnapshotRecord { step: 10, loss: 0.1, kernel: SnapshotKernel::Full(Mat::ones(2, 2)) }).unwrap();
        s.push(SnapshotRecord { step: 20, loss: 1e-300, kernel: SnapshotKernel::None }).unwrap();
        s
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut meta = Metadata::new();
        meta.set("arch", "2,3,1").set("seed", 7);
        let s = series();
        write_snapshot_series(dir.path(), &meta, &s).unwrap();
        let (meta2, s2) = read_snapshot_series(dir.path()).unwrap();
        assert_eq!(meta2, meta);
        assert_eq!(s2, s);
        let names: Vec<_> = match &s2.records()[0].kernel {
            SnapshotKernel::Components(c) => c.names().map(str::to_string).collect(),
            _ => unreachable!(),
        };
        assert_eq!(names, ["layer1.weight", "readout.weight"]);
    }

    #[test]
    fn out_of_order_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut sink = DiskSnapshotSink::create(dir.path(), &Metadata::new()).unwrap();
        sink.record(SnapshotRecord { step: 5, loss: 1.0, kernel: SnapshotKernel::None }).unwrap();
        assert!(sink.record(SnapshotRecord { step: 5, loss: 1.0, kernel: SnapshotKernel::None }).is_err());
    }

    #[test]
    fn metadata_parse() {
        let m = Metadata::decode("a=1\n\nb = x=y\n").unwrap();
        assert_eq!(m.get("a"), Some("1"));
        assert_eq!(m.get("b"), Some("x=y"));
        assert!(Metadata::decode("novalue\n").is_err());
    }
}
