use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::record::{read_record, EcgRecord};
use crate::error::{Error, Result};

/// Sidecar next to the manifest CSV holding one class name per line.
pub const CLASSES_FILE: &str = "classes.txt";
const HEADER: [&str; 3] = ["path", "label", "split"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArgument(format!("unknown split tag `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    /// Relative paths resolve against [`DatasetManifest::root`].
    pub path: PathBuf,
    pub label: usize,
    pub split: Option<Split>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub class_names: Vec<String>,
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>, class_names: Vec<String>, root: impl Into<PathBuf>) -> Result<Self> {
        let m = Self {
            entries,
            class_names,
            root: root.into(),
        };
        m.check_labels()?;
        Ok(m)
    }

    fn check_labels(&self) -> Result<()> {
        if let Some(e) = self.entries.iter().find(|e| e.label >= self.class_names.len()) {
            return Err(Error::InvalidArgument(format!(
                "entry {} has label {} but only {} classes are named",
                e.path.display(),
                e.label,
                self.class_names.len()
            )));
        }
        Ok(())
    }

    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.path)
    }

    pub fn entries_in(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == Some(split))
    }

    /// Reads every record tagged `split`, checking that the stored label
    /// agrees with the manifest.
    pub fn load_split(&self, split: Split) -> Result<Vec<EcgRecord>> {
        self.entries_in(split)
            .map(|e| {
                let r = read_record(self.resolve(e))?;
                if r.label != e.label {
                    return Err(Error::InvalidArgument(format!(
                        "{}: file label {} disagrees with manifest label {}",
                        e.path.display(),
                        r.label,
                        e.label
                    )));
                }
                Ok(r)
            })
            .collect()
    }

    /// Per-class record counts, optionally restricted to one split.
    pub fn class_counts(&self, split: Option<Split>) -> Vec<usize> {
        let mut counts = vec![0; self.class_count()];
        for e in &self.entries {
            if split.is_none() || e.split == split {
                counts[e.label] += 1;
            }
        }
        counts
    }

    /// Loads `path` plus the class-name sidecar in the same directory. When
    /// the sidecar is missing, classes are named `class0…` up to the largest
    /// label seen.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
        let header = reader.headers()?.clone();
        if header.iter().collect::<Vec<_>>() != HEADER {
            return Err(Error::Format {
                offset: 0,
                detail: format!("manifest header must be `path,label,split`, found `{}`", header.iter().collect::<Vec<_>>().join(",")),
            });
        }
        let mut entries = Vec::new();
        for row in reader.records() {
            let row = row?;
            let offset = row.position().map_or(0, |p| p.byte());
            let label = row[1].trim().parse().map_err(|_| Error::Format {
                offset,
                detail: format!("label `{}` is not a class index", &row[1]),
            })?;
            let split = match row[2].trim() {
                "" => None,
                tag => Some(tag.parse()?),
            };
            entries.push(ManifestEntry {
                path: PathBuf::from(&row[0]),
                label,
                split,
            });
        }
        let sidecar = root.join(CLASSES_FILE);
        let class_names = if sidecar.exists() {
            fs::read_to_string(&sidecar)
                .map_err(|e| Error::io(&sidecar, e))?
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(String::from)
                .collect()
        } else {
            let n = entries.iter().map(|e| e.label + 1).max().unwrap_or(0);
            (0..n).map(|i| format!("class{i}")).collect()
        };
        let m = Self::new(entries, class_names, root)?;
        if let Some(missing) = m.entries.iter().find(|e| !m.resolve(e).exists()) {
            return Err(Error::InvalidArgument(format!("record {} does not exist", m.resolve(missing).display())));
        }
        Ok(m)
    }

    /// Writes the CSV and the class-name sidecar beside it.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_path(path)?;
        w.write_record(HEADER)?;
        for e in &self.entries {
            let split = e.split.map_or("", Split::as_str);
            w.write_record([e.path.to_string_lossy().as_ref(), &e.label.to_string(), split])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        let sidecar = path.parent().map(|p| p.join(CLASSES_FILE)).unwrap_or_else(|| CLASSES_FILE.into());
        let mut names = self.class_names.join("\n");
        names.push('\n');
        fs::write(&sidecar, names).map_err(|e| Error::io(&sidecar, e))
    }
}

/// Stratified train/val/test assignment.
///
/// Split totals are the largest-remainder rounding of `fractions·N`. Each
/// class first receives `⌊f·n_c⌋` records per split; the few leftovers are
/// then placed with a greedy margin-preserving 0/1 fill, so every class is
/// within one record of its proportional share in every split. Which
/// records land where is a seeded shuffle within each class.
pub fn split(manifest: &DatasetManifest, fractions: [f64; 3], seed: u64) -> Result<DatasetManifest> {
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("split fractions {fractions:?} must be in [0, 1] and sum to 1")));
    }
    let nonzero = fractions.iter().filter(|&&f| f > 0.0).count();
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, e) in manifest.entries.iter().enumerate() {
        by_class.entry(e.label).or_default().push(i);
    }
    if let Some((c, members)) = by_class.iter().find(|(_, m)| m.len() < nonzero) {
        return Err(Error::InvalidArgument(format!(
            "class {c} has {} records, fewer than the {nonzero} requested splits",
            members.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let totals = largest_remainder(fractions, manifest.entries.len());

    let mut counts: Vec<[usize; 3]> = by_class
        .values()
        .map(|m| fractions.map(|f| (f * m.len() as f64).floor() as usize))
        .collect();
    let mut row_left: Vec<(usize, u64, usize)> = by_class
        .values()
        .zip(&counts)
        .enumerate()
        .map(|(i, (m, c))| (m.len() - c.iter().sum::<usize>(), rng.random(), i))
        .collect();
    let mut col_left: [usize; 3] =
        std::array::from_fn(|s| totals[s] - counts.iter().map(|c| c[s]).sum::<usize>());
    // Ryser's greedy construction: biggest row deficit first, each taking
    // one from the columns with the most room left.
    row_left.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(need, _, row) in &row_left {
        let mut cols = [0, 1, 2];
        cols.sort_by(|&a, &b| col_left[b].cmp(&col_left[a]).then(a.cmp(&b)));
        for &s in cols.iter().take(need) {
            if col_left[s] == 0 {
                return Err(Error::InvalidArgument("stratified split has no feasible rounding".into()));
            }
            col_left[s] -= 1;
            counts[row][s] += 1;
        }
    }

    let mut out = manifest.clone();
    for (members, count) in by_class.values_mut().zip(&counts) {
        members.shuffle(&mut rng);
        let mut it = members.iter();
        for (s, &n) in Split::ALL.iter().zip(count) {
            for &idx in it.by_ref().take(n) {
                out.entries[idx].split = Some(*s);
            }
        }
    }
    Ok(out)
}

/// Integer parts summing to `n` that are each within one of `f·n`.
fn largest_remainder(fractions: [f64; 3], n: usize) -> [usize; 3] {
    let exact = fractions.map(|f| f * n as f64);
    let mut parts = exact.map(|x| x.floor() as usize);
    let mut order = [0, 1, 2];
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())));
    let short = n.saturating_sub(parts.iter().sum());
    for &i in order.iter().take(short) {
        parts[i] += 1;
    }
    parts
}
