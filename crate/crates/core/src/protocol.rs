//! Open-set protocols: which ILSVRC classes play the known, negative and
//! unknown roles, and the per-image manifest that materializes them.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::rng::{fnv1a64, SeededStream};
use crate::taxonomy::{SynsetId, Taxonomy, TaxonomyError};

pub const MANIFEST_VERSION: &str = "v1";
const MANIFEST_COLUMNS: [&str; 5] = ["path", "synset", "class_index", "role", "split"];

/// Fraction of each class's original training images kept for training.
pub const TRAIN_FRACTION_NUM: usize = 4;
pub const TRAIN_FRACTION_DEN: usize = 5;

pub const BUILTIN_PROTOCOLS: [&str; 3] = ["p1", "p2", "p3"];

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error("protocol spec line {line}: {message}")]
    SpecSyntax { line: usize, message: String },
    #[error("{root} selects {id}, which is not an ILSVRC class below it")]
    NotBelowRoot { root: SynsetId, id: SynsetId },
    #[error("role {0} resolves to no classes")]
    EmptyRole(Role),
    #[error("classes assigned to more than one role: {}", join_ids(.0))]
    Overlap(Vec<SynsetId>),
    #[error("no samples given for class {0}")]
    EmptyClass(SynsetId),
    #[error("samples for {0} are not sorted and unique")]
    UnsortedSamples(SynsetId),
    #[error("class {synset} has no images in the {source_name} manifest")]
    MissingImages {
        synset: SynsetId,
        source_name: &'static str,
    },
    #[error("{source_name} manifest line {line}: {message}")]
    SourceManifest {
        source_name: &'static str,
        line: usize,
        message: String,
    },
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error("unsupported manifest version {0:?}")]
    Version(String),
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn join_ids(ids: &[SynsetId]) -> String {
    ids.iter()
        .map(SynsetId::to_string)
        .collect::<Vec<_>>()
        .join(", ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Role {
    Known,
    Negative,
    Unknown,
}

impl Role {
    pub const ALL: [Role; 3] = [Role::Known, Role::Negative, Role::Unknown];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Known => "known",
            Role::Negative => "negative",
            Role::Unknown => "unknown",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "known" => Ok(Role::Known),
            "negative" => Ok(Role::Negative),
            "unknown" => Ok(Role::Unknown),
            other => Err(format!("unknown role {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
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
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Half {
    First,
    Second,
}

/// How the ILSVRC classes below one root are selected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SelectionRule {
    AllLeaves,
    Explicit(Vec<SynsetId>),
    /// Sorted leaf list cut in two; `First` receives `floor(n/2)` classes.
    HalfSplit(Half),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RootSelection {
    pub root: SynsetId,
    pub rule: SelectionRule,
}

impl RootSelection {
    pub fn all(root: SynsetId) -> Self {
        Self {
            root,
            rule: SelectionRule::AllLeaves,
        }
    }
}

/// Declarative protocol definition.
///
/// Text form, one selection per logical line (a trailing `\` continues a
/// line, `#` starts a comment):
///
/// ```text
/// # osr-protocol v1
/// name p2
/// known n02087122 half-split first
/// negative n02087122 half-split second
/// unknown n02118333 all-leaves
/// unknown n02131653 explicit n02132136 n02133161
/// ```
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProtocolSpec {
    pub name: String,
    pub known: Vec<RootSelection>,
    pub negative: Vec<RootSelection>,
    pub unknown: Vec<RootSelection>,
}

impl ProtocolSpec {
    pub fn selections(&self, role: Role) -> &[RootSelection] {
        match role {
            Role::Known => &self.known,
            Role::Negative => &self.negative,
            Role::Unknown => &self.unknown,
        }
    }

    fn selections_mut(&mut self, role: Role) -> &mut Vec<RootSelection> {
        match role {
            Role::Known => &mut self.known,
            Role::Negative => &mut self.negative,
            Role::Unknown => &mut self.unknown,
        }
    }

    /// One of the shipped protocols `p1`, `p2`, `p3`.
    pub fn builtin(name: &str) -> Option<Self> {
        let text = match name {
            "p1" => include_str!("../../../data/protocols/p1.txt"),
            "p2" => include_str!("../../../data/protocols/p2.txt"),
            "p3" => include_str!("../../../data/protocols/p3.txt"),
            _ => return None,
        };
        Some(Self::parse(text).expect("built-in protocol specs are valid"))
    }

    pub fn parse(text: &str) -> Result<Self, ProtocolError> {
        let syntax = |line: usize, message: String| ProtocolError::SpecSyntax { line, message };
        let mut spec = ProtocolSpec {
            name: String::new(),
            known: Vec::new(),
            negative: Vec::new(),
            unknown: Vec::new(),
        };
        let mut logical: Vec<(usize, String)> = Vec::new();
        let mut pending: Option<(usize, String)> = None;
        for (idx, raw) in text.lines().enumerate() {
            let content = raw.split('#').next().unwrap_or("").trim_end();
            let (body, continues) = match content.strip_suffix('\\') {
                Some(b) => (b, true),
                None => (content, false),
            };
            let entry = pending.get_or_insert_with(|| (idx + 1, String::new()));
            entry.1.push(' ');
            entry.1.push_str(body);
            if !continues {
                logical.push(pending.take().expect("just inserted"));
            }
        }
        if let Some(last) = pending {
            logical.push(last);
        }

        for (line, content) in logical {
            let tokens: Vec<&str> = content.split_whitespace().collect();
            let Some(&head) = tokens.first() else {
                continue;
            };
            if head == "name" {
                if tokens.len() != 2 {
                    return Err(syntax(line, "expected 'name <identifier>'".into()));
                }
                spec.name = tokens[1].to_string();
                continue;
            }
            let role: Role = head.parse().map_err(|e| syntax(line, e))?;
            if tokens.len() < 3 {
                return Err(syntax(
                    line,
                    "expected '<role> <root> <rule> [args]'".into(),
                ));
            }
            let root: SynsetId = tokens[1]
                .parse()
                .map_err(|e| syntax(line, format!("{e}")))?;
            let args = &tokens[3..];
            let rule = match tokens[2] {
                "all-leaves" if args.is_empty() => SelectionRule::AllLeaves,
                "half-split" => match args {
                    ["first"] => SelectionRule::HalfSplit(Half::First),
                    ["second"] => SelectionRule::HalfSplit(Half::Second),
                    _ => return Err(syntax(line, "half-split takes 'first' or 'second'".into())),
                },
                "explicit" if !args.is_empty() => SelectionRule::Explicit(
                    args.iter()
                        .map(|a| a.parse().map_err(|e| syntax(line, format!("{e}"))))
                        .collect::<Result<_, _>>()?,
                ),
                other => return Err(syntax(line, format!("bad selection rule {other:?}"))),
            };
            spec.selections_mut(role).push(RootSelection { root, rule });
        }
        if spec.name.is_empty() {
            return Err(syntax(1, "missing 'name' line".into()));
        }
        if spec.name.chars().any(|c| c.is_whitespace() || c == ',') {
            return Err(syntax(
                1,
                "protocol name must not contain spaces or commas".into(),
            ));
        }
        Ok(spec)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("# osr-protocol v1\nname {}\n", self.name);
        for role in Role::ALL {
            for sel in self.selections(role) {
                let rule = match &sel.rule {
                    SelectionRule::AllLeaves => "all-leaves".to_string(),
                    SelectionRule::HalfSplit(Half::First) => "half-split first".to_string(),
                    SelectionRule::HalfSplit(Half::Second) => "half-split second".to_string(),
                    SelectionRule::Explicit(ids) => format!("explicit {}", {
                        ids.iter()
                            .map(SynsetId::to_string)
                            .collect::<Vec<_>>()
                            .join(" ")
                    }),
                };
                out.push_str(&format!("{role} {} {rule}\n", sel.root));
            }
        }
        out
    }
}

/// The class sets of a protocol, each sorted bytewise.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResolvedClasses {
    pub known: Vec<SynsetId>,
    pub negative: Vec<SynsetId>,
    pub unknown: Vec<SynsetId>,
}

impl ResolvedClasses {
    pub fn get(&self, role: Role) -> &[SynsetId] {
        match role {
            Role::Known => &self.known,
            Role::Negative => &self.negative,
            Role::Unknown => &self.unknown,
        }
    }

    /// 1-based index of a known class, 0 for negatives, -1 for unknowns.
    pub fn class_index(&self, role: Role, synset: &SynsetId) -> Option<i64> {
        match role {
            Role::Known => self.known.binary_search(synset).ok().map(|i| i as i64 + 1),
            Role::Negative => self.negative.binary_search(synset).ok().map(|_| 0),
            Role::Unknown => self.unknown.binary_search(synset).ok().map(|_| -1),
        }
    }
}

fn select(t: &Taxonomy, sel: &RootSelection) -> Result<Vec<SynsetId>, ProtocolError> {
    let leaves = t.leaf_descendants(&sel.root)?;
    Ok(match &sel.rule {
        SelectionRule::AllLeaves => leaves,
        SelectionRule::HalfSplit(half) => {
            let cut = leaves.len() / 2;
            match half {
                Half::First => leaves[..cut].to_vec(),
                Half::Second => leaves[cut..].to_vec(),
            }
        }
        SelectionRule::Explicit(ids) => {
            for id in ids {
                if leaves.binary_search(id).is_err() {
                    return Err(ProtocolError::NotBelowRoot {
                        root: sel.root,
                        id: *id,
                    });
                }
            }
            let mut ids = ids.clone();
            ids.sort();
            ids.dedup();
            ids
        }
    })
}

/// Resolves every role of `spec` to a sorted, duplicate-free class list.
pub fn resolve_classes(
    t: &Taxonomy,
    spec: &ProtocolSpec,
) -> Result<ResolvedClasses, ProtocolError> {
    let mut sets: Vec<BTreeSet<SynsetId>> = Vec::with_capacity(3);
    for role in Role::ALL {
        let mut set = BTreeSet::new();
        for sel in spec.selections(role) {
            set.extend(select(t, sel)?);
        }
        if set.is_empty() {
            return Err(ProtocolError::EmptyRole(role));
        }
        sets.push(set);
    }
    let mut overlap: BTreeSet<SynsetId> = BTreeSet::new();
    for (i, a) in sets.iter().enumerate() {
        for b in &sets[i + 1..] {
            overlap.extend(a.intersection(b).copied());
        }
    }
    if !overlap.is_empty() {
        return Err(ProtocolError::Overlap(overlap.into_iter().collect()));
    }
    let mut it = sets.into_iter().map(|s| s.into_iter().collect::<Vec<_>>());
    Ok(ResolvedClasses {
        known: it.next().expect("three roles"),
        negative: it.next().expect("three roles"),
        unknown: it.next().expect("three roles"),
    })
}

/// Number of training samples out of `n`: `floor(0.8 n)`.
pub fn train_count(n: usize) -> usize {
    n * TRAIN_FRACTION_NUM / TRAIN_FRACTION_DEN
}

/// Deterministic 80/20 split of one class's original training images.
///
/// The sorted sample list is shuffled with Fisher-Yates driven by SplitMix64
/// seeded with `seed ^ fnv1a64(synset)`; the first `floor(0.8 n)` samples
/// become training data. Both parts are returned sorted.
pub fn split_train_val(
    samples: &[String],
    seed: u64,
    synset: &SynsetId,
) -> Result<(Vec<String>, Vec<String>), ProtocolError> {
    if samples.is_empty() {
        return Err(ProtocolError::EmptyClass(*synset));
    }
    if samples.windows(2).any(|w| w[0] >= w[1]) {
        return Err(ProtocolError::UnsortedSamples(*synset));
    }
    if samples.len() < 5 {
        log::warn!(
            "class {synset} has only {} training-source samples",
            samples.len()
        );
    }
    let mut order: Vec<&String> = samples.iter().collect();
    SeededStream::new(seed ^ fnv1a64(synset.as_bytes())).shuffle(&mut order);
    let cut = train_count(samples.len());
    let mut train: Vec<String> = order[..cut].iter().map(|s| (*s).clone()).collect();
    let mut val: Vec<String> = order[cut..].iter().map(|s| (*s).clone()).collect();
    train.sort();
    val.sort();
    Ok((train, val))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleRecord {
    pub path: String,
    pub synset: SynsetId,
    pub class_index: i64,
    pub role: Role,
    pub split: Split,
}

impl SampleRecord {
    fn sort_key(&self) -> (Role, SynsetId, Split, &str) {
        (self.role, self.synset, self.split, self.path.as_str())
    }

    fn check(&self) -> Result<(), String> {
        let index_ok = match self.role {
            Role::Known => self.class_index >= 1,
            Role::Negative => self.class_index == 0,
            Role::Unknown => self.class_index == -1,
        };
        if !index_ok {
            return Err(format!(
                "class_index {} is invalid for role {}",
                self.class_index, self.role
            ));
        }
        if self.role == Role::Unknown && self.split != Split::Test {
            return Err("unknown samples may only appear in the test split".into());
        }
        Ok(())
    }
}

/// Per-sample listing of a protocol in canonical order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProtocolManifest {
    pub protocol: String,
    pub seed: u64,
    pub known_classes: usize,
    pub records: Vec<SampleRecord>,
}

/// Class and sample counts of one role.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RoleCounts {
    pub classes: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl fmt::Display for RoleCounts {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let show = |n: usize| {
            if n == 0 {
                "---".to_string()
            } else {
                n.to_string()
            }
        };
        write!(
            f,
            "{}: {} / {} / {}",
            self.classes,
            show(self.train),
            show(self.val),
            show(self.test)
        )
    }
}

fn parse_source(
    text: &str,
    source_name: &'static str,
    wanted: &HashSet<SynsetId>,
    seen_paths: &mut HashSet<String>,
) -> Result<BTreeMap<SynsetId, Vec<String>>, ProtocolError> {
    let mut by_class: BTreeMap<SynsetId, Vec<String>> = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.trim();
        if content.is_empty() {
            continue;
        }
        let err = |message: String| ProtocolError::SourceManifest {
            source_name,
            line,
            message,
        };
        let (path, id) = content
            .rsplit_once(char::is_whitespace)
            .ok_or_else(|| err("expected 'path synsetId'".into()))?;
        let path = path.trim();
        if path.is_empty() {
            return Err(err("empty path".into()));
        }
        let id: SynsetId = id.parse().map_err(|e| err(format!("{e}")))?;
        if !seen_paths.insert(path.to_string()) {
            return Err(err(format!("path {path} listed more than once")));
        }
        if wanted.contains(&id) {
            by_class.entry(id).or_default().push(path.to_string());
        }
    }
    for paths in by_class.values_mut() {
        paths.sort();
    }
    Ok(by_class)
}

/// Materializes `spec` over the ILSVRC-2012 source manifests.
///
/// `train_manifest` and `val_manifest` list `path synsetId` for the original
/// training and validation images. Known and negative classes split their
/// original training images into train/val; original validation images become
/// the test split for all roles.
pub fn build_protocol(
    t: &Taxonomy,
    spec: &ProtocolSpec,
    train_manifest: &str,
    val_manifest: &str,
    seed: u64,
) -> Result<ProtocolManifest, ProtocolError> {
    let classes = resolve_classes(t, spec)?;
    let wanted: HashSet<SynsetId> = Role::ALL
        .iter()
        .flat_map(|r| classes.get(*r).iter().copied())
        .collect();
    let mut seen_paths = HashSet::new();
    let train_src = parse_source(train_manifest, "train", &wanted, &mut seen_paths)?;
    let val_src = parse_source(val_manifest, "val", &wanted, &mut seen_paths)?;

    let mut records = Vec::new();
    for role in Role::ALL {
        for synset in classes.get(role) {
            let class_index = classes.class_index(role, synset).expect("resolved class");
            let record = |path: String, split: Split| SampleRecord {
                path,
                synset: *synset,
                class_index,
                role,
                split,
            };
            if role != Role::Unknown {
                let originals = train_src.get(synset).ok_or(ProtocolError::MissingImages {
                    synset: *synset,
                    source_name: "train",
                })?;
                let (train, val) = split_train_val(originals, seed, synset)?;
                records.extend(train.into_iter().map(|p| record(p, Split::Train)));
                records.extend(val.into_iter().map(|p| record(p, Split::Val)));
            }
            let tests = val_src.get(synset).ok_or(ProtocolError::MissingImages {
                synset: *synset,
                source_name: "val",
            })?;
            records.extend(tests.iter().cloned().map(|p| record(p, Split::Test)));
        }
    }
    records.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    Ok(ProtocolManifest {
        protocol: spec.name.clone(),
        seed,
        known_classes: classes.known.len(),
        records,
    })
}

impl ProtocolManifest {
    pub fn counts(&self, role: Role) -> RoleCounts {
        let mut counts = RoleCounts::default();
        let mut classes = HashSet::new();
        for r in self.records.iter().filter(|r| r.role == role) {
            classes.insert(r.synset);
            match r.split {
                Split::Train => counts.train += 1,
                Split::Val => counts.val += 1,
                Split::Test => counts.test += 1,
            }
        }
        counts.classes = classes.len();
        counts
    }

    pub fn header_line(&self) -> String {
        format!(
            "# osr-manifest {MANIFEST_VERSION} protocol={} seed={} K={}",
            self.protocol, self.seed, self.known_classes
        )
    }

    pub fn write_to<W: Write>(&self, out: W) -> Result<(), std::io::Error> {
        let mut out = out;
        writeln!(out, "{}", self.header_line())?;
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        w.write_record(MANIFEST_COLUMNS)?;
        for r in &self.records {
            w.write_record([
                r.path.as_str(),
                r.synset.as_str(),
                &r.class_index.to_string(),
                r.role.as_str(),
                r.split.as_str(),
            ])?;
        }
        w.flush()
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("manifest is UTF-8")
    }

    pub fn write(&self, path: &Path) -> Result<(), ProtocolError> {
        let io = |source| ProtocolError::Io {
            path: path.to_path_buf(),
            source,
        };
        let file = fs::File::create(path).map_err(io)?;
        let mut buf = std::io::BufWriter::new(file);
        self.write_to(&mut buf).map_err(io)?;
        buf.flush().map_err(io)
    }

    pub fn read(path: &Path) -> Result<Self, ProtocolError> {
        let text = fs::read_to_string(path).map_err(|source| ProtocolError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Parses and validates manifest text. Records are put in canonical order.
    pub fn parse(text: &str) -> Result<Self, ProtocolError> {
        let bad = |line: usize, message: String| ProtocolError::Manifest { line, message };
        let (first, rest) = text.split_once('\n').unwrap_or((text, ""));
        let mut fields = first.trim_end().split(' ');
        if fields.next() != Some("#") || fields.next() != Some("osr-manifest") {
            return Err(bad(1, "missing '# osr-manifest' header".into()));
        }
        match fields.next() {
            Some(MANIFEST_VERSION) => {}
            Some(other) => return Err(ProtocolError::Version(other.to_string())),
            None => return Err(bad(1, "missing version".into())),
        }
        let mut protocol = None;
        let mut seed = None;
        let mut k = None;
        for kv in fields {
            match kv.split_once('=') {
                Some(("protocol", v)) => protocol = Some(v.to_string()),
                Some(("seed", v)) => {
                    seed = Some(v.parse::<u64>().map_err(|e| bad(1, e.to_string()))?)
                }
                Some(("K", v)) => k = Some(v.parse::<usize>().map_err(|e| bad(1, e.to_string()))?),
                _ => return Err(bad(1, format!("unexpected header field {kv:?}"))),
            }
        }
        let (Some(protocol), Some(seed), Some(known_classes)) = (protocol, seed, k) else {
            return Err(bad(1, "header needs protocol=, seed= and K=".into()));
        };

        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(rest.as_bytes());
        let headers = reader.headers().map_err(|e| bad(2, e.to_string()))?;
        if headers.iter().ne(MANIFEST_COLUMNS) {
            return Err(bad(
                2,
                format!("expected columns {}", MANIFEST_COLUMNS.join(",")),
            ));
        }
        let mut records = Vec::new();
        let mut paths = HashSet::new();
        for row in reader.records() {
            let row = row.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line() as usize + 1);
                bad(line, e.to_string())
            })?;
            let line = row.position().map_or(0, |p| p.line() as usize) + 1;
            if row.len() != 5 {
                return Err(bad(line, format!("expected 5 fields, found {}", row.len())));
            }
            let record = SampleRecord {
                path: row[0].to_string(),
                synset: row[1].parse().map_err(|e| bad(line, format!("{e}")))?,
                class_index: row[2]
                    .parse()
                    .map_err(|_| bad(line, format!("bad class_index {:?}", &row[2])))?,
                role: row[3].parse().map_err(|e| bad(line, e))?,
                split: row[4].parse().map_err(|e| bad(line, e))?,
            };
            record.check().map_err(|m| bad(line, m))?;
            if record.class_index > known_classes as i64 {
                return Err(bad(
                    line,
                    format!(
                        "class_index {} exceeds K={known_classes}",
                        record.class_index
                    ),
                ));
            }
            if !paths.insert(record.path.clone()) {
                return Err(bad(line, format!("path {} appears twice", record.path)));
            }
            records.push(record);
        }
        records.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
        Ok(ProtocolManifest {
            protocol,
            seed,
            known_classes,
            records,
        })
    }
}
