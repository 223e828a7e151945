//! Datasets, client partitions and ratio views.
//!
//! A [`ClientPartition`] owns a client's dataset positions together with one
//! fixed seeded permutation of them. An [`ActiveView`] at ratio `R` exposes
//! the first `⌈R·n⌉` entries of that permutation, so views at smaller ratios
//! are always prefixes (subsets) of views at larger ones.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::nn::Example;
use crate::{ceil_fraction, fsutil, rng};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    examples: Vec<Example>,
    num_classes: usize,
    dim: usize,
}

impl Dataset {
    /// Validates that the dataset is nonempty, every feature vector has the
    /// same length, and every label is below `num_classes`.
    pub fn new(examples: Vec<Example>, num_classes: usize) -> Result<Self> {
        let Some(first) = examples.first() else {
            return Err(Error::input("dataset must not be empty"));
        };
        let dim = first.x.len();
        if dim == 0 {
            return Err(Error::input("feature vectors must be nonempty"));
        }
        for (i, ex) in examples.iter().enumerate() {
            if ex.x.len() != dim {
                return Err(Error::input(format!(
                    "example {i} has {} features, expected {dim}",
                    ex.x.len()
                )));
            }
            if ex.y >= num_classes {
                return Err(Error::input(format!(
                    "example {i} has label {} but only {num_classes} classes",
                    ex.y
                )));
            }
        }
        Ok(Dataset {
            examples,
            num_classes,
            dim,
        })
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for ex in &self.examples {
            counts[ex.y] += 1;
        }
        counts
    }

    /// Classes with no examples.
    pub fn empty_classes(&self) -> Vec<usize> {
        self.class_counts()
            .iter()
            .enumerate()
            .filter(|(_, &n)| n == 0)
            .map(|(c, _)| c)
            .collect()
    }

    /// Splits into the first `n_first` examples and the rest.
    pub fn split_at(&self, n_first: usize) -> Result<(Dataset, Dataset)> {
        if n_first == 0 || n_first >= self.len() {
            return Err(Error::config(format!(
                "cannot split {} examples at {n_first}",
                self.len()
            )));
        }
        let (a, b) = self.examples.split_at(n_first);
        Ok((
            Dataset::new(a.to_vec(), self.num_classes)?,
            Dataset::new(b.to_vec(), self.num_classes)?,
        ))
    }

    /// CSV text, one `label,f0,...,f{d-1}` row per example.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for ex in &self.examples {
            write!(out, "{}", ex.y).unwrap();
            for v in &ex.x {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

/// Class-balanced Gaussian mixture.
///
/// Class means are drawn once, uniformly on the unit sphere in `dim`
/// dimensions; example `i` has label `i mod num_classes` and features
/// `mean + spread · N(0, I)`. Per-class counts differ by at most one, and any
/// prefix of the example list stays balanced the same way.
pub fn generate_synthetic(num_classes: usize, dim: usize, n: usize, spread: f64, seed: u64) -> Result<Dataset> {
    if num_classes < 2 {
        return Err(Error::config(format!("need at least 2 classes, got {num_classes}")));
    }
    if dim == 0 {
        return Err(Error::config("feature dimension must be positive"));
    }
    if n < num_classes {
        return Err(Error::config(format!(
            "sample count {n} is smaller than class count {num_classes}"
        )));
    }
    if !(spread > 0.0 && spread.is_finite()) {
        return Err(Error::config(format!("spread must be positive, got {spread}")));
    }
    let mut rng = rng::seeded(seed);
    let means: Vec<Vec<f64>> = (0..num_classes)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            v.into_iter().map(|a| a / norm).collect()
        })
        .collect();
    let examples = (0..n)
        .map(|i| {
            let y = i % num_classes;
            let x = means[y]
                .iter()
                .map(|m| m + spread * rng.sample::<f64, _>(StandardNormal))
                .collect();
            Example::new(x, y)
        })
        .collect();
    Dataset::new(examples, num_classes)
}

fn parse_line(line: &str, path: &str, lineno: usize) -> Result<(i64, Vec<f64>)> {
    let err = |msg: String| Error::Parse {
        path: path.to_string(),
        line: lineno,
        msg,
    };
    let mut fields = line.split(',');
    let label_field = fields.next().unwrap_or("").trim();
    let label: i64 = label_field
        .parse()
        .map_err(|_| err(format!("invalid label {label_field:?}")))?;
    if label < 0 {
        return Err(err(format!("negative label {label}")));
    }
    let features = fields
        .map(|f| {
            f.trim()
                .parse::<f64>()
                .map_err(|_| err(format!("invalid feature {f:?}")))
        })
        .collect::<Result<Vec<f64>>>()?;
    if features.is_empty() {
        return Err(err("row has no features".to_string()));
    }
    Ok((label, features))
}

/// Parses dataset CSV text (see [`load_dataset`]); `origin` names the source
/// in error messages.
pub fn parse_dataset(text: &str, origin: &str) -> Result<Dataset> {
    let mut lines: Vec<&str> = text.split('\n').collect();
    if lines.last() == Some(&"") {
        lines.pop();
    }
    if lines.is_empty() {
        return Err(Error::Parse {
            path: origin.to_string(),
            line: 1,
            msg: "empty dataset file".to_string(),
        });
    }
    let mut examples = Vec::with_capacity(lines.len());
    let mut dim = None;
    let mut max_label = 0usize;
    for (i, raw) in lines.iter().enumerate() {
        let lineno = i + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() {
            return Err(Error::Parse {
                path: origin.to_string(),
                line: lineno,
                msg: "empty line".to_string(),
            });
        }
        let (label, x) = parse_line(line, origin, lineno)?;
        match dim {
            None => dim = Some(x.len()),
            Some(d) if d != x.len() => {
                return Err(Error::Parse {
                    path: origin.to_string(),
                    line: lineno,
                    msg: format!("expected {d} features, found {}", x.len()),
                })
            }
            _ => {}
        }
        let y = label as usize;
        max_label = max_label.max(y);
        examples.push(Example::new(x, y));
    }
    let dataset = Dataset::new(examples, max_label + 1)?;
    let empty = dataset.empty_classes();
    if !empty.is_empty() {
        log::warn!("{origin}: classes {empty:?} have no examples");
    }
    Ok(dataset)
}

/// Reads a headerless CSV with rows `label,f0,f1,...`. The class count is
/// inferred as `max label + 1`; classes with no rows only produce a warning.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text, &path.display().to_string())
}

/// Writes `dataset` as CSV, atomically.
pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    fsutil::write_atomic(path, dataset.to_csv().as_bytes())
}

/// One client's share of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientPartition {
    client_id: usize,
    indices: Vec<usize>,
    permuted: Vec<usize>,
}

impl ClientPartition {
    /// Builds a partition whose fixed permutation is drawn from `perm_seed`.
    pub fn new(client_id: usize, indices: Vec<usize>, perm_seed: u64) -> Result<Self> {
        let mut sorted = indices.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::input(format!("client {client_id} has duplicate indices")));
        }
        let mut permuted = indices.clone();
        permuted.shuffle(&mut rng::derived(perm_seed, &[rng::purpose::CLIENT_PERM, client_id as u64]));
        Ok(ClientPartition {
            client_id,
            indices,
            permuted,
        })
    }

    pub fn client_id(&self) -> usize {
        self.client_id
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn permuted(&self) -> &[usize] {
        &self.permuted
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// The active prefix of a partition's permutation at ratio `R`.
#[derive(Debug, Clone, Copy)]
pub struct ActiveView<'a> {
    partition: &'a ClientPartition,
    ratio: f64,
    len: usize,
}

impl<'a> ActiveView<'a> {
    pub fn partition(&self) -> &'a ClientPartition {
        self.partition
    }

    pub fn ratio(&self) -> f64 {
        self.ratio
    }

    pub fn indices(&self) -> &'a [usize] {
        &self.partition.permuted[..self.len]
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

pub(crate) fn check_ratio(ratio: f64) -> Result<()> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::config(format!("ratio must lie in (0, 1], got {ratio}")));
    }
    Ok(())
}

/// Active view holding the first `⌈R·|indices|⌉` entries of the partition's
/// permutation.
pub fn subset_ratio(partition: &ClientPartition, ratio: f64) -> Result<ActiveView<'_>> {
    check_ratio(ratio)?;
    Ok(ActiveView {
        partition,
        ratio,
        len: ceil_fraction(ratio, partition.len()),
    })
}

/// Even random split. A seeded permutation of all positions is cut into
/// contiguous chunks; the first `n mod N` clients get one extra index.
pub fn partition_iid(dataset: &Dataset, n_clients: usize, seed: u64) -> Result<Vec<ClientPartition>> {
    let n = dataset.len();
    if n_clients == 0 || n_clients > n {
        return Err(Error::config(format!(
            "cannot split {n} examples across {n_clients} clients"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng::seeded(seed));
    let base = n / n_clients;
    let extra = n % n_clients;
    let mut start = 0;
    (0..n_clients)
        .map(|client| {
            let size = base + usize::from(client < extra);
            let chunk = perm[start..start + size].to_vec();
            start += size;
            ClientPartition::new(client, chunk, seed)
        })
        .collect()
}

/// Label-shard split where every client holds exactly `shards_per_client`
/// distinct classes.
///
/// Each class is shuffled and cut into `P = ⌈s·N/C⌉` near-equal contiguous
/// parts. Parts are laid out class-major (classes in seeded order) and the
/// first `s·N` are dealt with stride `N`: slot `k` gets parts `k, k+N, ...`.
/// A class occupies `P ≤ N` consecutive positions, so no slot sees the same
/// class twice. Slots map to clients through a seeded permutation.
pub fn partition_noniid_shards(
    dataset: &Dataset,
    n_clients: usize,
    shards_per_client: usize,
    seed: u64,
) -> Result<Vec<ClientPartition>> {
    let classes = dataset.num_classes();
    if n_clients == 0 {
        return Err(Error::config("need at least one client"));
    }
    if shards_per_client == 0 || shards_per_client > classes {
        return Err(Error::config(format!(
            "shards per client must be in 1..={classes}, got {shards_per_client}"
        )));
    }
    let mut rng = rng::seeded(seed);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, ex) in dataset.examples().iter().enumerate() {
        by_class[ex.y].push(i);
    }
    let parts_per_class = (shards_per_client * n_clients).div_ceil(classes);
    for (c, members) in by_class.iter_mut().enumerate() {
        if members.len() < parts_per_class {
            return Err(Error::config(format!(
                "class {c} has {} examples but must be cut into {parts_per_class} parts (short by {})",
                members.len(),
                parts_per_class - members.len()
            )));
        }
        members.shuffle(&mut rng);
    }
    let mut class_order: Vec<usize> = (0..classes).collect();
    class_order.shuffle(&mut rng);
    let mut parts: Vec<&[usize]> = Vec::with_capacity(classes * parts_per_class);
    for &c in &class_order {
        let members = &by_class[c];
        let base = members.len() / parts_per_class;
        let extra = members.len() % parts_per_class;
        let mut start = 0;
        for p in 0..parts_per_class {
            let size = base + usize::from(p < extra);
            parts.push(&members[start..start + size]);
            start += size;
        }
    }
    let mut client_of_slot: Vec<usize> = (0..n_clients).collect();
    client_of_slot.shuffle(&mut rng);
    let mut assigned: Vec<Vec<usize>> = vec![Vec::new(); n_clients];
    for (pos, part) in parts.iter().take(shards_per_client * n_clients).enumerate() {
        assigned[client_of_slot[pos % n_clients]].extend_from_slice(part);
    }
    assigned
        .into_iter()
        .enumerate()
        .map(|(client, mut indices)| {
            indices.sort_unstable();
            ClientPartition::new(client, indices, seed)
        })
        .collect()
}
