//! Seen/unseen class splits and dataset partitioning.
//!
//! Published splits for NTU60, NTU120 and ToyotaSmartHome ship as JSON
//! fixtures compiled into the crate. NTU60 and Toyota list the unseen
//! classes of each run, NTU120 lists the seen classes. Toyota lists class
//! names; they are mapped to indices through a name table, by default the
//! sorted list of its 31 class names.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::{check_header, SPLIT_FORMAT};

pub const NUM_RUNS: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub dataset_name: String,
    pub run_id: u32,
    pub seen: Vec<usize>,
    pub unseen: Vec<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl SplitSpec {
    /// Builds a split from its unseen classes; every other class is seen.
    pub fn from_unseen(
        dataset_name: &str,
        run_id: u32,
        num_classes: usize,
        unseen: &[usize],
        seed: Option<u64>,
    ) -> Result<Self> {
        let mut is_unseen = vec![false; num_classes];
        for &c in unseen {
            if c >= num_classes {
                return Err(Error::invalid(format!(
                    "class {c} out of range for {num_classes} classes"
                )));
            }
            if std::mem::replace(&mut is_unseen[c], true) {
                return Err(Error::invalid(format!("class {c} listed twice")));
            }
        }
        let (u, s): (Vec<usize>, Vec<usize>) = (0..num_classes).partition(|&c| is_unseen[c]);
        let spec = Self {
            dataset_name: dataset_name.to_string(),
            run_id,
            seen: s,
            unseen: u,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_seen(dataset_name: &str, run_id: u32, num_classes: usize, seen: &[usize]) -> Result<Self> {
        let mut spec = Self::from_unseen(dataset_name, run_id, num_classes, seen, None)?;
        std::mem::swap(&mut spec.seen, &mut spec.unseen);
        spec.validate()?;
        Ok(spec)
    }

    pub fn num_classes(&self) -> usize {
        self.seen.len() + self.unseen.len()
    }

    /// Sorted, disjoint, nonempty, and covering `0..num_classes`.
    pub fn validate(&self) -> Result<()> {
        if self.seen.is_empty() || self.unseen.is_empty() {
            return Err(Error::invalid("split needs nonempty seen and unseen sets"));
        }
        for (name, set) in [("seen", &self.seen), ("unseen", &self.unseen)] {
            if set.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::invalid(format!("{name} classes must be strictly increasing")));
            }
        }
        let n = self.num_classes();
        let mut covered = vec![false; n];
        for &c in self.seen.iter().chain(&self.unseen) {
            if c >= n || std::mem::replace(&mut covered[c], true) {
                return Err(Error::invalid(format!("class {c} breaks the disjoint cover of 0..{n}")));
            }
        }
        Ok(())
    }

    pub fn is_seen(&self, class: usize) -> bool {
        self.seen.binary_search(&class).is_ok()
    }

    /// Position of a seen class among the seen classes, i.e. its model output index.
    pub fn seen_index(&self, class: usize) -> Option<usize> {
        self.seen.binary_search(&class).ok()
    }

    /// Manifest JSON with an optional echo of the producing configuration.
    pub fn to_json(&self, echo: Option<&serde_json::Value>) -> Result<String> {
        #[derive(Serialize)]
        struct Manifest<'a> {
            format: &'static str,
            version: u32,
            #[serde(flatten)]
            spec: &'a SplitSpec,
            #[serde(skip_serializing_if = "Option::is_none")]
            config: Option<&'a serde_json::Value>,
        }
        let mut s = serde_json::to_string_pretty(&Manifest {
            format: SPLIT_FORMAT.0,
            version: SPLIT_FORMAT.1,
            spec: self,
            config: echo,
        })?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Manifest {
            format: String,
            version: u32,
            #[serde(flatten)]
            spec: SplitSpec,
        }
        let m: Manifest = serde_json::from_str(text)?;
        check_header(&m.format, m.version, SPLIT_FORMAT)?;
        m.spec.validate()?;
        Ok(m.spec)
    }
}

/// Picks `num_unseen` distinct classes with a partial Fisher-Yates shuffle.
pub fn generate_split(num_classes: usize, num_unseen: usize, seed: u64) -> Result<SplitSpec> {
    if num_unseen == 0 || num_unseen >= num_classes {
        return Err(Error::Config(format!(
            "need 0 < num_unseen < num_classes, got {num_unseen} of {num_classes}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut classes: Vec<usize> = (0..num_classes).collect();
    for i in 0..num_unseen {
        let j = rng.random_range(i..num_classes);
        classes.swap(i, j);
    }
    SplitSpec::from_unseen("generated", 1, num_classes, &classes[..num_unseen], Some(seed))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
enum ListedSide {
    Seen,
    Unseen,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum FixtureRuns {
    Indices(Vec<Vec<usize>>),
    Names(Vec<Vec<String>>),
}

#[derive(Debug, Deserialize)]
struct Fixture {
    format: String,
    version: u32,
    dataset_name: String,
    num_classes: usize,
    listed_side: ListedSide,
    #[serde(default)]
    class_names: Vec<String>,
    runs: FixtureRuns,
}

const FIXTURE_FORMAT: (&str, u32) = ("crossmax-split-fixture", 1);

const FIXTURES: [(&str, &str); 3] = [
    ("NTU60", include_str!("../fixtures/ntu60.json")),
    ("NTU120", include_str!("../fixtures/ntu120.json")),
    ("ToyotaSmartHome", include_str!("../fixtures/toyotasmarthome.json")),
];

/// Names accepted by [`load_fixture_split`].
pub fn fixture_datasets() -> impl Iterator<Item = &'static str> {
    FIXTURES.iter().map(|(n, _)| *n)
}

fn fixture(dataset: &str) -> Result<Fixture> {
    let key = dataset.to_ascii_lowercase();
    let (_, text) = FIXTURES
        .iter()
        .find(|(n, _)| n.to_ascii_lowercase() == key || (key == "toyota" && *n == "ToyotaSmartHome"))
        .ok_or_else(|| Error::invalid(format!("unknown fixture dataset {dataset:?}")))?;
    let f: Fixture = serde_json::from_str(text)?;
    check_header(&f.format, f.version, FIXTURE_FORMAT)?;
    Ok(f)
}

/// Class names of a fixture dataset, in default index order. Empty for
/// datasets published with indices.
pub fn fixture_class_names(dataset: &str) -> Result<Vec<String>> {
    Ok(fixture(dataset)?.class_names)
}

/// The published split for `run_id` in `1..=5`.
pub fn load_fixture_split(dataset: &str, run_id: u32) -> Result<SplitSpec> {
    load_fixture_split_with_names(dataset, run_id, None)
}

/// Like [`load_fixture_split`], with a caller-supplied class-name table
/// (index = position) for datasets published by name.
pub fn load_fixture_split_with_names(dataset: &str, run_id: u32, names: Option<&[String]>) -> Result<SplitSpec> {
    let f = fixture(dataset)?;
    if run_id == 0 || run_id as usize > NUM_RUNS {
        return Err(Error::invalid(format!(
            "unknown run {run_id} for {}; runs are 1..={NUM_RUNS}",
            f.dataset_name
        )));
    }
    let r = run_id as usize - 1;
    let listed: Vec<usize> = match &f.runs {
        FixtureRuns::Indices(runs) => runs
            .get(r)
            .cloned()
            .ok_or_else(|| Error::invalid("missing fixture run"))?,
        FixtureRuns::Names(runs) => {
            let table = names.unwrap_or(&f.class_names);
            if table.len() != f.num_classes {
                return Err(Error::invalid(format!(
                    "class-name table has {} entries, {} expects {}",
                    table.len(),
                    f.dataset_name,
                    f.num_classes
                )));
            }
            runs.get(r)
                .ok_or_else(|| Error::invalid("missing fixture run"))?
                .iter()
                .map(|n| {
                    table
                        .iter()
                        .position(|t| t == n)
                        .ok_or_else(|| Error::invalid(format!("class name {n:?} not in table")))
                })
                .collect::<Result<_>>()?
        }
    };
    match f.listed_side {
        ListedSide::Unseen => SplitSpec::from_unseen(&f.dataset_name, run_id, f.num_classes, &listed, None),
        ListedSide::Seen => SplitSpec::from_seen(&f.dataset_name, run_id, f.num_classes, &listed),
    }
}

/// All fifteen published splits.
pub fn all_fixture_splits() -> Result<Vec<SplitSpec>> {
    let mut out = Vec::new();
    for name in fixture_datasets() {
        for run in 1..=NUM_RUNS as u32 {
            out.push(load_fixture_split(name, run)?);
        }
    }
    Ok(out)
}

/// Sample indices of the three open-set subsets.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Partition {
    pub train_seen: Vec<usize>,
    pub test_seen: Vec<usize>,
    pub test_unseen: Vec<usize>,
}

/// Splits `(label, is_train)` samples by split side. Training samples of
/// unseen classes are dropped.
pub fn partition<I>(samples: I, split: &SplitSpec) -> Result<Partition>
where
    I: IntoIterator<Item = (usize, bool)>,
{
    let n = split.num_classes();
    let mut out = Partition::default();
    for (i, (label, is_train)) in samples.into_iter().enumerate() {
        if label >= n {
            return Err(Error::invalid(format!(
                "sample {i} has label {label}, split covers {n} classes"
            )));
        }
        match (is_train, split.is_seen(label)) {
            (true, true) => out.train_seen.push(i),
            (true, false) => {}
            (false, true) => out.test_seen.push(i),
            (false, false) => out.test_unseen.push(i),
        }
    }
    Ok(out)
}
