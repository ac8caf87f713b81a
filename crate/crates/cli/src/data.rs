//! Parsing of `--data` arguments.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use ntk_core::dataio::{prepare_mnist2, prepare_mnist2_with, read_idx, read_labels, read_matrix, synth_holdout, synth_two_gaussians, Dataset};
use ntk_core::{Error, Mat, Result};

const MNIST_TRAIN: (&str, &str) = ("train-images-idx3-ubyte", "train-labels-idx1-ubyte");
const MNIST_TEST: (&str, &str) = ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte");

#[derive(Debug, Clone, PartialEq)]
pub enum DataSpec {
    /// Two Gaussian blobs; `n` points per class.
    Synth { d: usize, n: usize, sep: f64 },
    /// Columns of the `d × d` identity, labels alternating 0, 1.
    Identity(usize),
    /// Two-digit MNIST subset from a directory of IDX files.
    Mnist { dir: PathBuf, classes: (u8, u8), per_class: usize },
    /// Matrix file, one datapoint per column.
    File(PathBuf),
}

fn kv<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("bad value `{value}` for `{key}`")))
}

impl FromStr for DataSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(rest) = s.strip_prefix("synth:").or(if s == "synth" { Some("") } else { None }) {
            let (mut d, mut n, mut sep) = (20, 200, 3.0);
            for part in rest.split(',').filter(|p| !p.is_empty()) {
                let (k, v) = part
                    .split_once('=')
                    .ok_or_else(|| Error::InvalidConfig(format!("expected key=value, got `{part}`")))?;
                match k {
                    "d" => d = kv(k, v)?,
                    "n" => n = kv(k, v)?,
                    "sep" => sep = kv(k, v)?,
                    _ => return Err(Error::InvalidConfig(format!("unknown synth key `{k}`"))),
                }
            }
            return Ok(DataSpec::Synth { d, n, sep });
        }
        if let Some(d) = s.strip_prefix("identity:") {
            return Ok(DataSpec::Identity(kv("identity", d)?));
        }
        if let Some(rest) = s.strip_prefix("mnist:") {
            // mnist:<dir>[:a,b[,per_class]]
            let (dir, opts) = match rest.rsplit_once(':') {
                Some((dir, o)) if o.split(',').all(|t| t.parse::<usize>().is_ok()) => (dir, Some(o)),
                _ => (rest, None),
            };
            let mut classes = (6, 9);
            let mut per_class = 5000;
            if let Some(o) = opts {
                let nums: Vec<usize> = o.split(',').map(|t| t.parse().unwrap()).collect();
                match nums[..] {
                    [a, b] => classes = (kv("class", &a.to_string())?, kv("class", &b.to_string())?),
                    [a, b, p] => {
                        classes = (kv("class", &a.to_string())?, kv("class", &b.to_string())?);
                        per_class = p;
                    }
                    _ => return Err(Error::InvalidConfig(format!("bad mnist options `{o}`"))),
                }
            }
            return Ok(DataSpec::Mnist { dir: dir.into(), classes, per_class });
        }
        Ok(DataSpec::File(s.into()))
    }
}

fn mnist_files(dir: &Path, names: (&str, &str)) -> (PathBuf, PathBuf) {
    (dir.join(names.0), dir.join(names.1))
}

impl DataSpec {
    /// Loads the training set; `labels` is required for matrix files.
    pub fn load(&self, labels: Option<&Path>, seed: u64) -> Result<Dataset> {
        match self {
            DataSpec::Synth { d, n, sep } => synth_two_gaussians(*d, *n, *sep, seed),
            DataSpec::Identity(d) => {
                if *d == 0 {
                    return Err(Error::InvalidConfig("identity data needs d >= 1".into()));
                }
                Ok(Dataset {
                    features: Mat::identity(*d),
                    labels: (0..*d).map(|j| (j % 2) as u8).collect(),
                    sorted_by_class: *d <= 2,
                    normalization: None,
                })
            }
            DataSpec::Mnist { dir, classes, per_class } => {
                let (im, lb) = mnist_files(dir, MNIST_TRAIN);
                prepare_mnist2(&read_idx(im)?, &read_idx(lb)?, classes.0, classes.1, *per_class, seed)
            }
            DataSpec::File(path) => {
                let features = read_matrix(path)?;
                let labels = match labels {
                    Some(p) => read_labels(p)?,
                    None => vec![0; features.cols()],
                };
                let ds = Dataset {
                    sorted_by_class: labels.windows(2).all(|w| w[0] <= w[1]),
                    features,
                    labels,
                    normalization: None,
                };
                ds.validate()?;
                Ok(ds)
            }
        }
    }

    /// Held-out companion to `train`: a fresh synthetic draw, the MNIST test
    /// split under the training normalization, or nothing.
    pub fn holdout(&self, train: &Dataset, seed: u64) -> Result<Option<Dataset>> {
        match self {
            DataSpec::Synth { d, n, sep } => synth_holdout(*d, *n, *sep, seed).map(Some),
            DataSpec::Mnist { dir, classes, .. } => {
                let (im, lb) = mnist_files(dir, MNIST_TEST);
                let (im, lb) = (read_idx(im)?, read_idx(lb)?);
                let per_class = [classes.0, classes.1]
                    .iter()
                    .map(|&c| lb.data.iter().filter(|&&y| y == c).count())
                    .min()
                    .unwrap_or(0);
                let norm = train
                    .normalization
                    .as_ref()
                    .ok_or_else(|| Error::InvalidConfig("training set has no normalization".into()))?;
                prepare_mnist2_with(&im, &lb, classes.0, classes.1, per_class, seed, norm).map(Some)
            }
            _ => Ok(None),
        }
    }
}
