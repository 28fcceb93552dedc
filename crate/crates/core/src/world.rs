//! The synthetic attribute world: instances, tasks, ground truth and the
//! train/test split.

use std::fmt;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::RunRng;

pub const NUM_ATTRIBUTES: usize = 3;

/// Number of ordered attribute pairs, A·(A−1).
pub const NUM_TASKS: usize = NUM_ATTRIBUTES * (NUM_ATTRIBUTES - 1);

pub const DEFAULT_ATTRIBUTE_NAMES: [&str; NUM_ATTRIBUTES] = ["color", "shape", "style"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub attribute_names: Vec<String>,
    pub values_per_attribute: usize,
    pub split_fraction: f64,
    pub split_seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            attribute_names: DEFAULT_ATTRIBUTE_NAMES.iter().map(|s| s.to_string()).collect(),
            values_per_attribute: 4,
            split_fraction: 0.8,
            split_seed: 0,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.attribute_names.len() != NUM_ATTRIBUTES {
            return Err(Error::Config(format!(
                "exactly {NUM_ATTRIBUTES} attributes are supported, got {}",
                self.attribute_names.len()
            )));
        }
        if self.values_per_attribute < 2 {
            return Err(Error::Config("values_per_attribute must be at least 2".into()));
        }
        if self.values_per_attribute > u16::MAX as usize {
            return Err(Error::Config("values_per_attribute is too large".into()));
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(Error::InvalidFraction(self.split_fraction));
        }
        Ok(())
    }

    pub fn num_instances(&self) -> usize {
        self.values_per_attribute.pow(NUM_ATTRIBUTES as u32)
    }

    /// Enumerates and splits the world in one go.
    pub fn build_dataset(&self) -> Result<Dataset> {
        self.validate()?;
        split_dataset(&enumerate_instances(self), self.split_fraction, self.split_seed)
    }
}

/// A world object: one value index per attribute.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Instance {
    pub values: [usize; NUM_ATTRIBUTES],
}

impl Instance {
    pub fn new(values: [usize; NUM_ATTRIBUTES]) -> Self {
        Self { values }
    }
}

impl fmt::Display for Instance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{}", self.values[0], self.values[1], self.values[2])
    }
}

/// An ordered pair of distinct attributes whose values Q-bot has to report.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TaskSpec {
    pub attributes: [usize; 2],
}

impl TaskSpec {
    pub fn new(first: usize, second: usize) -> Result<Self> {
        if first == second || first >= NUM_ATTRIBUTES || second >= NUM_ATTRIBUTES {
            return Err(Error::Config(format!("invalid task ({first},{second})")));
        }
        Ok(Self { attributes: [first, second] })
    }

    pub fn reversed(self) -> Self {
        Self { attributes: [self.attributes[1], self.attributes[0]] }
    }

    /// Position of this task in [`enumerate_tasks`] order.
    pub fn index(self) -> usize {
        let [a, b] = self.attributes;
        a * (NUM_ATTRIBUTES - 1) + if b > a { b - 1 } else { b }
    }

    pub fn from_index(index: usize) -> Option<Self> {
        enumerate_tasks().get(index).copied()
    }
}

impl fmt::Display for TaskSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{}", self.attributes[0], self.attributes[1])
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    pub train: Vec<Instance>,
    pub test: Vec<Instance>,
}

/// All `values_per_attribute³` instances in lexicographic order.
pub fn enumerate_instances(config: &WorldConfig) -> Vec<Instance> {
    let n = config.values_per_attribute;
    let mut out = Vec::with_capacity(config.num_instances());
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                out.push(Instance::new([a, b, c]));
            }
        }
    }
    out
}

/// The six ordered attribute pairs, lexicographic by (first, second).
pub fn enumerate_tasks() -> Vec<TaskSpec> {
    let mut out = Vec::with_capacity(NUM_TASKS);
    for a in 0..NUM_ATTRIBUTES {
        for b in 0..NUM_ATTRIBUTES {
            if a != b {
                out.push(TaskSpec { attributes: [a, b] });
            }
        }
    }
    out
}

/// Seeded uniform shuffle, then the first `round(fraction·N)` items become the
/// training split. Both halves keep the shuffled order.
pub fn split_dataset(instances: &[Instance], fraction: f64, seed: u64) -> Result<Dataset> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidFraction(fraction));
    }
    let mut shuffled = instances.to_vec();
    let mut rng = RunRng::seed_from_u64(seed);
    shuffled.shuffle(&mut rng);
    let n_train = (fraction * instances.len() as f64).round() as usize;
    let test = shuffled.split_off(n_train);
    Ok(Dataset { train: shuffled, test })
}

/// The instance's values at the task's two attributes, in task order.
pub fn ground_truth(instance: &Instance, task: &TaskSpec) -> (usize, usize) {
    (instance.values[task.attributes[0]], instance.values[task.attributes[1]])
}

/// Every (instance, task) pair over the given instances, instance-major.
pub fn all_pairs(instances: &[Instance]) -> Vec<(Instance, TaskSpec)> {
    let tasks = enumerate_tasks();
    instances.iter().flat_map(|i| tasks.iter().map(move |t| (*i, *t))).collect()
}

/// Writes a dataset as a line-oriented snapshot:
///
/// ```text
/// # attributes=color,shape,style values_per_attribute=4
/// [train]
/// 2,0,1
/// ...
/// [test]
/// ...
/// ```
pub fn write_snapshot<W: Write>(mut w: W, config: &WorldConfig, dataset: &Dataset) -> Result<()> {
    writeln!(
        w,
        "# attributes={} values_per_attribute={}",
        config.attribute_names.join(","),
        config.values_per_attribute
    )?;
    for (label, items) in [("train", &dataset.train), ("test", &dataset.test)] {
        writeln!(w, "[{label}]")?;
        for inst in items {
            writeln!(w, "{inst}")?;
        }
    }
    Ok(())
}

pub fn read_snapshot<R: BufRead>(r: R) -> Result<(Vec<String>, usize, Dataset)> {
    let mut lines = r.lines();
    let header = lines.next().ok_or_else(|| Error::Snapshot("missing header".into()))??;
    let header = header.strip_prefix("# ").ok_or_else(|| Error::Snapshot(format!("bad header `{header}`")))?;
    let mut names = None;
    let mut values = None;
    for field in header.split_whitespace() {
        match field.split_once('=') {
            Some(("attributes", v)) => names = Some(v.split(',').map(str::to_string).collect::<Vec<_>>()),
            Some(("values_per_attribute", v)) => {
                values = Some(v.parse::<usize>().map_err(|e| Error::Snapshot(e.to_string()))?)
            }
            _ => return Err(Error::Snapshot(format!("unknown header field `{field}`"))),
        }
    }
    let names = names.ok_or_else(|| Error::Snapshot("header lacks attributes".into()))?;
    let values = values.ok_or_else(|| Error::Snapshot("header lacks values_per_attribute".into()))?;
    if names.len() != NUM_ATTRIBUTES {
        return Err(Error::Snapshot(format!("expected {NUM_ATTRIBUTES} attributes")));
    }

    let mut dataset = Dataset { train: Vec::new(), test: Vec::new() };
    let mut section: Option<&mut Vec<Instance>> = None;
    for line in lines {
        let line = line?;
        let line = line.trim();
        match line {
            "" => continue,
            "[train]" => section = Some(&mut dataset.train),
            "[test]" => section = Some(&mut dataset.test),
            _ => {
                let target =
                    section.as_deref_mut().ok_or_else(|| Error::Snapshot("instance outside a section".into()))?;
                let parsed: Vec<usize> = line
                    .split(',')
                    .map(|v| v.trim().parse::<usize>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::Snapshot(format!("`{line}`: {e}")))?;
                if parsed.len() != NUM_ATTRIBUTES || parsed.iter().any(|&v| v >= values) {
                    return Err(Error::Snapshot(format!("invalid instance `{line}`")));
                }
                target.push(Instance::new([parsed[0], parsed[1], parsed[2]]));
            }
        }
    }
    Ok((names, values, dataset))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn config(values: usize) -> WorldConfig {
        WorldConfig { values_per_attribute: values, ..WorldConfig::default() }
    }

    #[test]
    fn enumerates_all_instances() {
        let all = enumerate_instances(&config(4));
        assert_eq!(all.len(), 64);
        assert_eq!(all.iter().filter(|i| i.values == [3, 3, 3]).count(), 1);
        let unique: HashSet<_> = all.iter().collect();
        assert_eq!(unique.len(), 64);

        let small = enumerate_instances(&config(2));
        assert_eq!(small.len(), 8);
        assert_eq!(small[0].values, [0, 0, 0]);
        assert_eq!(small[7].values, [1, 1, 1]);
    }

    #[test]
    fn tasks_are_ordered_distinct_pairs() {
        let tasks = enumerate_tasks();
        assert_eq!(tasks.len(), 6);
        // (color, shape) and (shape, color) are distinct tasks
        assert!(tasks.contains(&TaskSpec { attributes: [0, 1] }));
        assert!(tasks.contains(&TaskSpec { attributes: [1, 0] }));
        assert!(tasks.iter().all(|t| t.attributes[0] != t.attributes[1]));
        for (i, t) in tasks.iter().enumerate() {
            assert_eq!(t.index(), i);
            assert_eq!(TaskSpec::from_index(i), Some(*t));
        }
        assert!(TaskSpec::new(0, 0).is_err());
    }

    #[test]
    fn split_cardinality_and_determinism() {
        let all = enumerate_instances(&config(4));
        let a = split_dataset(&all, 0.8, 7).unwrap();
        assert_eq!(a.train.len(), 51);
        assert_eq!(a.test.len(), 13);
        let train: HashSet<_> = a.train.iter().collect();
        assert!(a.test.iter().all(|i| !train.contains(i)));

        let again = split_dataset(&all, 0.8, 7).unwrap();
        assert_eq!(a, again);

        let other = split_dataset(&all, 0.8, 8).unwrap();
        assert_ne!(a.train, other.train);
        let set_a: HashSet<_> = a.train.iter().collect();
        let set_b: HashSet<_> = other.train.iter().collect();
        assert_ne!(set_a, set_b);
    }

    #[test]
    fn split_rejects_bad_fraction() {
        let all = enumerate_instances(&config(2));
        for f in [0.0, 1.0, -0.5, 1.5, f64::NAN] {
            assert!(matches!(split_dataset(&all, f, 0), Err(Error::InvalidFraction(_))));
        }
    }

    #[test]
    fn ground_truth_lookup() {
        let inst = Instance::new([2, 0, 1]);
        let color_shape = TaskSpec::new(0, 1).unwrap();
        assert_eq!(ground_truth(&inst, &color_shape), (2, 0));
        assert_eq!(ground_truth(&inst, &color_shape.reversed()), (0, 2));
        let sym = Instance::new([1, 1, 1]);
        for t in enumerate_tasks() {
            assert_eq!(ground_truth(&sym, &t), (1, 1));
        }
    }

    #[test]
    fn snapshot_round_trip() {
        let cfg = config(4);
        let ds = cfg.build_dataset().unwrap();
        let mut buf = Vec::new();
        write_snapshot(&mut buf, &cfg, &ds).unwrap();
        let (names, values, back) = read_snapshot(buf.as_slice()).unwrap();
        assert_eq!(names, cfg.attribute_names);
        assert_eq!(values, 4);
        assert_eq!(back, ds);
        assert!(read_snapshot("# values_per_attribute=4\n".as_bytes()).is_err());
        assert!(read_snapshot("# attributes=a,b,c values_per_attribute=2\n[train]\n0,2,0\n".as_bytes()).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn reversed_task_swaps_truth(a in 0usize..5, b in 0usize..5, c in 0usize..5, t in 0usize..NUM_TASKS) {
                let inst = Instance::new([a, b, c]);
                let task = TaskSpec::from_index(t).unwrap();
                let (x, y) = ground_truth(&inst, &task);
                prop_assert_eq!(ground_truth(&inst, &task.reversed()), (y, x));
            }

            #[test]
            fn split_partitions(values in 2usize..6, fraction in 0.05f64..0.95, seed in any::<u64>()) {
                let all = enumerate_instances(&config(values));
                let ds = split_dataset(&all, fraction, seed).unwrap();
                prop_assert_eq!(ds.train.len() + ds.test.len(), all.len());
                let mut joined: Vec<_> = ds.train.iter().chain(ds.test.iter()).copied().collect();
                joined.sort();
                prop_assert_eq!(joined, all);
            }
        }
    }
}
