//! Dataset addresses used in run configurations.
//!
//! * `idx:<dir>` reads the four IDX files of the standard (Fashion-)MNIST
//!   download from `<dir>`, gzipped or not.
//! * `synth:key=value,...` generates Gaussian blobs. Keys: `classes`,
//!   `train_per_class`, `test_per_class`, `dim`, `spread`, `seed`; omitted
//!   keys keep the defaults of [`DEFAULT_BLOBS`].

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use fedaccess_core::data::{synth_blobs_split, BlobSpec, Dataset};

use crate::error::Error;
use crate::idx;

pub const DEFAULT_BLOBS: BlobSpec =
    BlobSpec { classes: 10, train_per_class: 600, test_per_class: 100, dim: 32, spread: 0.2, seed: 0 };

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSpec {
    Idx(PathBuf),
    Synth(BlobSpec),
}

impl FromStr for DatasetSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        if let Some(dir) = s.strip_prefix("idx:") {
            if dir.is_empty() {
                return Err(Error::Config("idx: dataset needs a directory".into()));
            }
            return Ok(DatasetSpec::Idx(PathBuf::from(dir)));
        }
        let Some(params) = s.strip_prefix("synth:") else {
            return Err(Error::Config(format!("unknown dataset scheme in {s:?} (expected idx: or synth:)")));
        };
        let mut spec = DEFAULT_BLOBS;
        for pair in params.split(',').filter(|p| !p.is_empty()) {
            let (key, value) =
                pair.split_once('=').ok_or_else(|| Error::Config(format!("dataset parameter {pair:?} is not key=value")))?;
            let bad = || Error::Config(format!("bad value for dataset parameter {key}: {value:?}"));
            match key.trim() {
                "classes" => spec.classes = value.trim().parse().map_err(|_| bad())?,
                "train_per_class" => spec.train_per_class = value.trim().parse().map_err(|_| bad())?,
                "test_per_class" => spec.test_per_class = value.trim().parse().map_err(|_| bad())?,
                "dim" => spec.dim = value.trim().parse().map_err(|_| bad())?,
                "spread" => spec.spread = value.trim().parse().map_err(|_| bad())?,
                "seed" => spec.seed = value.trim().parse().map_err(|_| bad())?,
                other => return Err(Error::Config(format!("unknown dataset parameter {other:?}"))),
            }
        }
        if spec.test_per_class == 0 {
            return Err(Error::Config("synthetic datasets need test_per_class >= 1".into()));
        }
        Ok(DatasetSpec::Synth(spec))
    }
}

impl fmt::Display for DatasetSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DatasetSpec::Idx(dir) => write!(f, "idx:{}", dir.display()),
            DatasetSpec::Synth(s) => write!(
                f,
                "synth:classes={},train_per_class={},test_per_class={},dim={},spread={},seed={}",
                s.classes, s.train_per_class, s.test_per_class, s.dim, s.spread, s.seed
            ),
        }
    }
}

impl DatasetSpec {
    /// Checks that the files a spec refers to exist, without reading them.
    pub fn check(&self) -> Result<(), Error> {
        match self {
            DatasetSpec::Idx(dir) => idx::locate_split(dir)
                .map(|_| ())
                .map_err(|missing| Error::Config(format!("dataset file not found: {}", missing.display()))),
            DatasetSpec::Synth(_) => Ok(()),
        }
    }

    /// Loads `(train, test)`.
    pub fn load(&self) -> Result<(Dataset, Dataset), Error> {
        match self {
            DatasetSpec::Idx(dir) => Ok(idx::load_split(dir)?),
            DatasetSpec::Synth(spec) => synth_blobs_split(spec).map_err(|e| Error::Config(e.to_string())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_synth_with_defaults() {
        let spec: DatasetSpec = "synth:classes=3,dim=5,seed=9".parse().unwrap();
        let DatasetSpec::Synth(b) = &spec else { panic!() };
        assert_eq!((b.classes, b.dim, b.seed, b.train_per_class), (3, 5, 9, 600));
        assert_eq!(spec.to_string().parse::<DatasetSpec>().unwrap(), spec);
    }

    #[test]
    fn rejects_garbage() {
        for s in ["mnist", "synth:classes", "synth:colour=red", "synth:dim=x", "idx:", "synth:test_per_class=0"] {
            assert!(s.parse::<DatasetSpec>().is_err(), "{s}");
        }
    }

    #[test]
    fn missing_idx_dir_names_the_file() {
        let spec: DatasetSpec = "idx:/no/such/dir".parse().unwrap();
        let msg = spec.check().unwrap_err().to_string();
        assert!(msg.contains("/no/such/dir/train-images-idx3-ubyte"), "{msg}");
    }
}
