//! Corpus collection: pattern scanning, labeled manifests with stratified
//! splits, and a seeded generator of race-free template programs.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::frontend::{lex, parse, NodeClass};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PatternKind {
    OmpPrivate,
    OmpCritical,
    PthreadMutex,
}

impl PatternKind {
    pub const ALL: [PatternKind; 3] = [
        PatternKind::OmpPrivate,
        PatternKind::OmpCritical,
        PatternKind::PthreadMutex,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PatternKind::OmpPrivate => "omp-private",
            PatternKind::OmpCritical => "omp-critical",
            PatternKind::PthreadMutex => "pthread-mutex",
        }
    }

    /// Plain-text detection rule used by [`scan_corpus`].
    pub fn matches_text(self, text: &str) -> bool {
        static RULES: OnceLock<[Regex; 4]> = OnceLock::new();
        let [parallel, private, critical, lock] = RULES.get_or_init(|| {
            [
                Regex::new(r"#\s*pragma\s+omp\s+parallel").unwrap(),
                Regex::new(r"\bprivate\s*\(").unwrap(),
                Regex::new(r"#\s*pragma\s+omp\s+critical").unwrap(),
                Regex::new(r"pthread_mutex_lock\s*\(").unwrap(),
            ]
        });
        match self {
            PatternKind::OmpPrivate => parallel.is_match(text) && private.is_match(text),
            PatternKind::OmpCritical => critical.is_match(text),
            PatternKind::PthreadMutex => lock.is_match(text),
        }
    }
}

impl fmt::Display for PatternKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PatternKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PatternKind::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown pattern `{s}` (omp-private|omp-critical|pthread-mutex)"
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Clean,
    Buggy,
}

impl Label {
    /// Softmax class index: 0 = Clean, 1 = Buggy.
    pub fn index(self) -> usize {
        match self {
            Label::Clean => 0,
            Label::Buggy => 1,
        }
    }

    pub fn from_index(i: usize) -> Label {
        if i == 1 {
            Label::Buggy
        } else {
            Label::Clean
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Clean => "clean",
            Label::Buggy => "buggy",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
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
        Split::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown split `{s}` (train|val|test)")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub path: PathBuf,
    pub label: Label,
    pub pattern: PatternKind,
    pub truth_lines: BTreeSet<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

impl CorpusEntry {
    pub fn clean(path: impl Into<PathBuf>, pattern: PatternKind) -> Self {
        CorpusEntry {
            path: path.into(),
            label: Label::Clean,
            pattern,
            truth_lines: BTreeSet::new(),
            split: None,
        }
    }
}

/// A list of entries whose relative paths resolve against `base_dir`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Manifest {
    pub entries: Vec<CorpusEntry>,
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn new(entries: Vec<CorpusEntry>) -> Self {
        Manifest {
            entries,
            base_dir: PathBuf::new(),
        }
    }

    pub fn resolve(&self, entry: &CorpusEntry) -> PathBuf {
        if entry.path.is_absolute() {
            entry.path.clone()
        } else {
            self.base_dir.join(&entry.path)
        }
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &CorpusEntry> {
        self.entries.iter().filter(move |e| e.split == Some(split))
    }

    pub fn read(path: &Path) -> Result<Manifest> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: CorpusEntry = serde_json::from_str(line).map_err(|e| Error::Manifest {
                line: i + 1,
                message: e.to_string(),
            })?;
            if entry.truth_lines.is_empty() != (entry.label == Label::Clean) {
                return Err(Error::Manifest {
                    line: i + 1,
                    message: "truth_lines must be nonempty exactly when label is buggy".into(),
                });
            }
            entries.push(entry);
        }
        Ok(Manifest {
            entries,
            base_dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
        })
    }

    /// Write as JSONL through a temp file and rename. Paths under the
    /// manifest's directory are stored relative to it.
    pub fn write(&self, path: &Path) -> Result<()> {
        let dir = path
            .parent()
            .filter(|d| !d.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        let dir_abs = fs::canonicalize(dir).map_err(|e| Error::io(dir, e))?;
        let mut out = String::new();
        for e in &self.entries {
            let full = self.resolve(e);
            let stored = fs::canonicalize(&full)
                .ok()
                .and_then(|abs| abs.strip_prefix(&dir_abs).ok().map(Path::to_path_buf))
                .unwrap_or(full);
            let entry = CorpusEntry {
                path: stored,
                ..e.clone()
            };
            out.push_str(&serde_json::to_string(&entry).expect("entries serialize"));
            out.push('\n');
        }
        let tmp = dir.join(format!(
            ".{}.tmp",
            path.file_name()
                .and_then(|n| n.to_str())
                .unwrap_or("manifest")
        ));
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(out.as_bytes())
            .map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    /// Counts per split and label, plus total lines of the referenced files.
    pub fn stats(&self) -> Result<CorpusStats> {
        let mut s = CorpusStats::default();
        for e in &self.entries {
            let p = self.resolve(e);
            let bytes = fs::read(&p).map_err(|err| Error::io(&p, err))?;
            s.add(
                e.split,
                e.label,
                line_count(&String::from_utf8_lossy(&bytes)),
            );
        }
        Ok(s)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CorpusStats {
    pub file_count: usize,
    pub total_loc: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub unassigned: usize,
    pub buggy: usize,
    pub clean: usize,
}

impl CorpusStats {
    fn add(&mut self, split: Option<Split>, label: Label, loc: usize) {
        self.file_count += 1;
        self.total_loc += loc;
        match split {
            Some(Split::Train) => self.train += 1,
            Some(Split::Val) => self.val += 1,
            Some(Split::Test) => self.test += 1,
            None => self.unassigned += 1,
        }
        match label {
            Label::Buggy => self.buggy += 1,
            Label::Clean => self.clean += 1,
        }
    }

    /// Fraction of buggy files, in [0, 1]; 0 for an empty corpus.
    pub fn balance(&self) -> f64 {
        if self.file_count == 0 {
            0.0
        } else {
            self.buggy as f64 / self.file_count as f64
        }
    }
}

pub fn line_count(text: &str) -> usize {
    text.lines().count()
}

/// Find `.c`/`.h` files under `root` that match the pattern's text rule.
pub fn scan_corpus(root: &Path, pattern: PatternKind) -> Result<(Vec<PathBuf>, CorpusStats)> {
    fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut found = Vec::new();
    let mut stats = CorpusStats::default();
    for item in walkdir::WalkDir::new(root).sort_by_file_name() {
        let item = item.map_err(|e| {
            let path = e
                .path()
                .map(Path::to_path_buf)
                .unwrap_or_else(|| root.to_path_buf());
            Error::io(path, e.into())
        })?;
        let p = item.path();
        let is_source = item.file_type().is_file()
            && matches!(p.extension().and_then(|e| e.to_str()), Some("c" | "h"));
        if !is_source {
            continue;
        }
        let bytes = fs::read(p).map_err(|e| Error::io(p, e))?;
        let text = String::from_utf8_lossy(&bytes);
        if pattern.matches_text(&text) {
            stats.add(None, Label::Clean, line_count(&text));
            found.push(p.to_path_buf());
        }
    }
    found.sort();
    Ok((found, stats))
}

/// Largest-remainder apportionment of `n` items over `fractions`.
pub(crate) fn apportion(n: usize, fractions: &[f64]) -> Vec<usize> {
    let raw: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = raw[a] - raw[a].floor();
        let rb = raw[b] - raw[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Assign splits, stratified by label, under a seeded shuffle. Entry order
/// is preserved.
pub fn build_manifest(
    mut entries: Vec<CorpusEntry>,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<Manifest> {
    if entries.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot build a manifest from zero entries".into(),
        ));
    }
    let f = [fractions.0, fractions.1, fractions.2];
    if f.iter().any(|x| !(*x >= 0.0)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split fractions must be nonnegative and sum to 1, got {:?}",
            fractions
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for label in [Label::Buggy, Label::Clean] {
        let mut idx: Vec<usize> = (0..entries.len())
            .filter(|&i| entries[i].label == label)
            .collect();
        idx.shuffle(&mut rng);
        let counts = apportion(idx.len(), &f);
        let mut it = idx.into_iter();
        for (split, count) in Split::ALL.into_iter().zip(counts) {
            for i in it.by_ref().take(count) {
                entries[i].split = Some(split);
            }
        }
    }
    Ok(Manifest::new(entries))
}

// ---- synthetic corpus ------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub n_files: usize,
    pub pattern: PatternKind,
    pub seed: u64,
    pub min_depth: usize,
    pub max_depth: usize,
    /// Upper bound on filler statements before and after the core region.
    /// Zero yields the bare template.
    pub max_filler: usize,
    pub ident_pool: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_files: 100,
            pattern: PatternKind::OmpPrivate,
            seed: 42,
            min_depth: 1,
            max_depth: 3,
            max_filler: 4,
            ident_pool: 16,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.n_files < 2 {
            return bad(format!("n_files must be at least 2, got {}", self.n_files));
        }
        if !(1..=3).contains(&self.min_depth)
            || !(1..=3).contains(&self.max_depth)
            || self.min_depth > self.max_depth
        {
            return bad(format!(
                "depth range {}..={} must lie within 1..=3",
                self.min_depth, self.max_depth
            ));
        }
        if self.max_filler > 8 {
            return bad(format!(
                "max_filler must be at most 8, got {}",
                self.max_filler
            ));
        }
        if !(2..=NAMES.len()).contains(&self.ident_pool) {
            return bad(format!(
                "ident_pool must be in 2..={}, got {}",
                NAMES.len(),
                self.ident_pool
            ));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<SynthSpec> {
        let spec: SynthSpec =
            toml::from_str(text).map_err(|e| Error::InvalidArgument(format!("synth spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }
}

/// Write `spec.n_files` race-free programs to `out_dir`, all labeled Clean.
pub fn synth_corpus(spec: &SynthSpec, out_dir: &Path) -> Result<Vec<CorpusEntry>> {
    let sources = synth_sources(spec)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let stem = match spec.pattern {
        PatternKind::OmpPrivate => "private",
        PatternKind::OmpCritical => "critical",
        PatternKind::PthreadMutex => "mutex",
    };
    let mut entries = Vec::with_capacity(sources.len());
    for (i, src) in sources.into_iter().enumerate() {
        let path = out_dir.join(format!("{stem}_{i:05}.c"));
        fs::write(&path, src).map_err(|e| Error::io(&path, e))?;
        entries.push(CorpusEntry::clean(path, spec.pattern));
    }
    Ok(entries)
}

/// Generate the program texts without touching the filesystem.
pub fn synth_sources(spec: &SynthSpec) -> Result<Vec<String>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(spec.n_files);
    while out.len() < spec.n_files {
        let mut attempts = 0;
        let src = loop {
            let src = Template::new(spec, &mut rng).render();
            attempts += 1;
            if seen.insert(src.clone()) || attempts >= 50 {
                break src;
            }
        };
        check_generated(&src)?;
        out.push(src);
    }
    Ok(out)
}

fn check_generated(src: &str) -> Result<()> {
    let tokens = lex(src).map_err(|e| Error::Generator(format!("{e}\n{src}")))?;
    let root = parse(&tokens).map_err(|e| Error::Generator(format!("{e}\n{src}")))?;
    if root.count(NodeClass::Unknown) > 0 {
        return Err(Error::Generator(format!(
            "template contains unparsable constructs:\n{src}"
        )));
    }
    Ok(())
}

const NAMES: &[&str] = &[
    "a", "b", "c", "x", "y", "z", "arr", "buf", "sum", "acc", "val", "data", "grid", "out", "res",
    "cnt", "total", "temp_v", "scale", "mat", "vec", "src", "dst", "work", "field", "hist",
    "weight", "bias", "delta", "score", "level", "range_v",
];

const INDEX_SETS: &[[&str; 3]] = &[
    ["i", "j", "k"],
    ["r", "c", "d"],
    ["ii", "jj", "kk"],
    ["p", "q", "s"],
    ["m", "n", "l"],
];

struct Template<'a, R: Rng> {
    spec: &'a SynthSpec,
    rng: &'a mut R,
    names: Vec<&'static str>,
    next_name: usize,
    lines: Vec<String>,
    tight: bool,
    bare: bool,
}

impl<'a, R: Rng> Template<'a, R> {
    fn new(spec: &'a SynthSpec, rng: &'a mut R) -> Self {
        let mut names: Vec<&'static str> = NAMES[..spec.ident_pool].to_vec();
        names.shuffle(rng);
        let tight = rng.gen_bool(0.5);
        Template {
            spec,
            rng,
            names,
            next_name: 0,
            lines: Vec::new(),
            tight,
            bare: spec.max_filler == 0,
        }
    }

    fn fresh(&mut self) -> String {
        let k = self.next_name;
        self.next_name += 1;
        let base = self.names[k % self.names.len()];
        match k / self.names.len() {
            0 => base.to_string(),
            n => format!("{base}{n}"),
        }
    }

    fn emit(&mut self, indent: usize, text: impl AsRef<str>) {
        self.lines
            .push(format!("{}{}", "    ".repeat(indent), text.as_ref()));
    }

    /// `a = b` or `a=b` depending on the file's spacing style.
    fn op(&self, op: &str) -> String {
        if self.tight {
            op.to_string()
        } else {
            format!(" {op} ")
        }
    }

    fn for_header(&self, var: &str, bound: &str) -> String {
        if self.tight {
            format!("for ({var}=0; {var}<{bound}; {var}++)")
        } else {
            format!("for ({var} = 0; {var} < {bound}; {var}++)")
        }
    }

    fn constant(&mut self) -> u32 {
        self.rng.gen_range(1..10)
    }

    fn braces(&mut self) -> bool {
        !self.bare && self.rng.gen_bool(0.35)
    }

    fn filler_count(&mut self) -> usize {
        if self.bare {
            0
        } else {
            self.rng.gen_range(0..=self.spec.max_filler)
        }
    }

    /// Distractor scalar declarations followed by filler statements over them.
    fn fillers(&mut self, indent: usize, scalars: &mut Vec<String>, n: usize) {
        for _ in 0..n {
            if scalars.is_empty() || self.rng.gen_bool(0.3) {
                let v = self.fresh();
                let c = self.constant();
                let ty = *["int", "long", "double"].choose(self.rng).unwrap();
                if self.rng.gen_bool(0.5) {
                    self.emit(indent, format!("{ty} {v}{}{c};", self.op("=")));
                } else {
                    let w = self.fresh();
                    self.emit(
                        indent,
                        format!("{ty} {v}{}{c}, {w}{}0;", self.op("="), self.op("=")),
                    );
                    scalars.push(w);
                }
                scalars.push(v);
                continue;
            }
            let v = scalars.choose(self.rng).unwrap().clone();
            let w = scalars.choose(self.rng).unwrap().clone();
            let c = self.constant();
            let eq = self.op("=");
            let stmt = match self.rng.gen_range(0..6) {
                0 => format!("{v}{eq}{w} + {c};"),
                1 => format!("printf(\"%d\\n\", (int){v});"),
                2 => format!("if ({v} > {c}) {w}{eq}{v} - {c};"),
                3 => format!("{v}++;"),
                4 => format!("{v}{eq}{w} * {c} - {v};"),
                _ => format!("{v} += {c};"),
            };
            self.emit(indent, stmt);
        }
    }

    fn render(mut self) -> String {
        let depth = self
            .rng
            .gen_range(self.spec.min_depth..=self.spec.max_depth);
        match self.spec.pattern {
            PatternKind::OmpPrivate => self.omp_private(depth),
            PatternKind::OmpCritical => self.omp_critical(depth),
            PatternKind::PthreadMutex => self.pthread(depth),
        }
        let mut s = self.lines.join("\n");
        s.push('\n');
        s
    }

    fn main_prologue(&mut self) -> Vec<String> {
        self.emit(0, "int main()");
        self.emit(0, "{");
        let mut scalars = Vec::new();
        let n = self.filler_count();
        self.fillers(1, &mut scalars, n);
        scalars
    }

    fn main_epilogue(&mut self, mut scalars: Vec<String>) {
        let n = self.filler_count();
        if !scalars.is_empty() {
            self.fillers(1, &mut scalars, n);
        }
        self.emit(1, "return 0;");
        self.emit(0, "}");
    }

    fn omp_private(&mut self, depth: usize) {
        let idx = *INDEX_SETS.choose(self.rng).unwrap();
        let size = *[64, 100, 128, 256, 512, 1000].choose(self.rng).unwrap();
        let bound = size.to_string();
        let a = self.fresh();
        let b = self.fresh();
        let eq = self.op("=");
        match depth {
            1 => {
                let region = self.bare || self.rng.gen_bool(0.5);
                if region {
                    self.emit(0, format!("int {a}[{size}];"));
                    let scalars = self.main_prologue();
                    let tid = *["tid", "id", "me", "rank"].choose(self.rng).unwrap();
                    self.emit(1, format!("int {tid};"));
                    self.emit(1, format!("#pragma omp parallel private({tid})"));
                    self.emit(1, "{");
                    self.emit(2, format!("{tid}{eq}omp_get_thread_num();"));
                    let c = self.constant();
                    match if self.bare {
                        0
                    } else {
                        self.rng.gen_range(0..3)
                    } {
                        0 => self.emit(2, format!("{a}[{tid}]{eq}{tid} * {c};")),
                        1 => {
                            self.emit(2, format!("{a}[{tid}]{eq}{a}[{tid}] + {c};"));
                            self.emit(2, format!("printf(\"%d\\n\", {tid});"));
                        }
                        _ => {
                            self.emit(2, format!("if ({tid} < {bound})"));
                            self.emit(3, format!("{a}[{tid}]{eq}{tid} + {c};"));
                        }
                    }
                    self.emit(1, "}");
                    self.main_epilogue(scalars);
                } else {
                    self.emit(0, format!("int {a}[{size}];"));
                    self.emit(0, format!("int {b}[{size}];"));
                    let scalars = self.main_prologue();
                    let (i, t) = (idx[0], *["t", "tmp", "v", "w"].choose(self.rng).unwrap());
                    self.emit(1, format!("int {i}, {t};"));
                    self.emit(1, format!("#pragma omp parallel for private({t})"));
                    let header = self.for_header(i, &bound);
                    self.emit(1, header);
                    self.emit(1, "{");
                    let c = self.constant();
                    self.emit(2, format!("{t}{eq}{b}[{i}] * {c};"));
                    self.emit(2, format!("{a}[{i}]{eq}{t} + 1;"));
                    self.emit(1, "}");
                    self.main_epilogue(scalars);
                }
            }
            2 => {
                self.emit(0, format!("int {a}[{size}][{size}];"));
                let two_arrays = !self.bare && self.rng.gen_bool(0.4);
                if two_arrays {
                    self.emit(0, format!("int {b}[{size}][{size}];"));
                }
                let scalars = self.main_prologue();
                let (i, j) = (idx[0], idx[1]);
                self.emit(1, format!("int {i}, {j};"));
                let extra = if !self.bare && self.rng.gen_bool(0.25) {
                    " schedule(static)"
                } else {
                    ""
                };
                self.emit(1, format!("#pragma omp parallel for private({j}){extra}"));
                let outer_braces = self.braces();
                let h = self.for_header(i, &bound);
                self.emit(1, h);
                if outer_braces {
                    self.emit(1, "{");
                }
                let h = self.for_header(j, &bound);
                self.emit(2, h);
                let c = self.constant();
                let body = match if self.bare {
                    0
                } else {
                    self.rng.gen_range(0..4)
                } {
                    0 => format!("{a}[{i}][{j}]{eq}{a}[{i}][{j}] + {c};"),
                    1 if two_arrays => format!("{a}[{i}][{j}]{eq}{b}[{i}][{j}] * {c};"),
                    2 if two_arrays => format!("{a}[{i}][{j}]{eq}{a}[{i}][{j}] + {b}[{j}][{i}];"),
                    _ => format!("{a}[{i}][{j}]{eq}{i} + {j} * {c};"),
                };
                self.emit(3, body);
                if outer_braces {
                    self.emit(1, "}");
                }
                self.main_epilogue(scalars);
            }
            _ => {
                let m = self.fresh();
                self.emit(0, format!("double {a}[{size}][{size}];"));
                self.emit(0, format!("double {b}[{size}][{size}];"));
                self.emit(0, format!("double {m}[{size}][{size}];"));
                let scalars = self.main_prologue();
                let (i, j, k) = (idx[0], idx[1], idx[2]);
                self.emit(1, format!("int {i}, {j}, {k};"));
                self.emit(1, format!("#pragma omp parallel for private({j}, {k})"));
                let h = self.for_header(i, &bound);
                self.emit(1, h);
                let h = self.for_header(j, &bound);
                self.emit(2, h);
                let h = self.for_header(k, &bound);
                self.emit(3, h);
                self.emit(
                    4,
                    format!("{m}[{i}][{j}]{eq}{m}[{i}][{j}] + {a}[{i}][{k}] * {b}[{k}][{j}];"),
                );
                self.main_epilogue(scalars);
            }
        }
    }

    fn omp_critical(&mut self, depth: usize) {
        let idx = *INDEX_SETS.choose(self.rng).unwrap();
        let size = *[64, 100, 128, 256, 1000].choose(self.rng).unwrap();
        let bound = size.to_string();
        let a = self.fresh();
        let total = self.fresh();
        let eq = self.op("=");
        let dims: String = (0..depth.min(2)).map(|_| format!("[{size}]")).collect();
        self.emit(0, format!("int {a}{dims};"));
        let scalars = self.main_prologue();
        let used: Vec<&str> = idx[..depth].to_vec();
        self.emit(1, format!("int {}, {total}{eq}0;", used.join(", ")));
        let private = if depth > 1 {
            format!(" private({})", used[1..].join(", "))
        } else {
            String::new()
        };
        self.emit(1, format!("#pragma omp parallel for{private}"));
        for (level, v) in used.iter().enumerate() {
            let h = self.for_header(v, &bound);
            self.emit(1 + level, h);
        }
        let inner = depth + 1;
        let elem = match depth {
            1 => format!("{a}[{}]", used[0]),
            2 => format!("{a}[{}][{}]", used[0], used[1]),
            _ => format!("{a}[{}][{}] * {}", used[0], used[1], used[2]),
        };
        self.emit(inner - 1, "{");
        self.emit(inner, "#pragma omp critical");
        let braced = self.bare || self.rng.gen_bool(0.7);
        if braced {
            self.emit(inner, "{");
            self.emit(inner + 1, format!("{total}{eq}{total} + {elem};"));
            if !self.bare && self.rng.gen_bool(0.5) {
                let c = self.constant();
                self.emit(
                    inner + 1,
                    format!("if ({total} > {c}) {total}{eq}{total} - {c};"),
                );
            }
            self.emit(inner, "}");
        } else {
            self.emit(inner, format!("{total} += {elem};"));
        }
        self.emit(inner - 1, "}");
        self.emit(1, format!("printf(\"%d\\n\", {total});"));
        self.main_epilogue(scalars);
    }

    fn pthread(&mut self, depth: usize) {
        let idx = *INDEX_SETS.choose(self.rng).unwrap();
        let lock = *["lock", "mutex", "mtx", "guard"].choose(self.rng).unwrap();
        let counter = self.fresh();
        let worker = *["worker", "run", "thread_main", "task"]
            .choose(self.rng)
            .unwrap();
        let bound = *[10, 100, 1000, 5000].choose(self.rng).unwrap();
        let eq = self.op("=");
        self.emit(0, "#include <pthread.h>");
        self.emit(0, "#include <stdio.h>");
        self.emit(0, format!("pthread_mutex_t {lock};"));
        self.emit(0, format!("int {counter}{eq}0;"));
        self.emit(0, format!("void *{worker}(void *arg)"));
        self.emit(0, "{");
        let used: Vec<&str> = idx[..depth].to_vec();
        self.emit(1, format!("int {};", used.join(", ")));
        for (level, v) in used.iter().enumerate() {
            let h = self.for_header(v, &bound.to_string());
            self.emit(1 + level, h);
        }
        let inner = depth;
        self.emit(inner, "{");
        self.emit(inner + 1, format!("pthread_mutex_lock(&{lock});"));
        self.emit(inner + 1, format!("{counter}{eq}{counter} + 1;"));
        if !self.bare && self.rng.gen_bool(0.5) {
            let c = self.constant();
            self.emit(inner + 1, format!("if ({counter} % {c} == 0) {counter}++;"));
        }
        self.emit(inner + 1, format!("pthread_mutex_unlock(&{lock});"));
        self.emit(inner, "}");
        self.emit(1, "return NULL;");
        self.emit(0, "}");
        self.emit(0, "int main()");
        self.emit(0, "{");
        let nthreads = self.rng.gen_range(2..=4);
        let threads: Vec<String> = (0..nthreads).map(|t| format!("t{t}")).collect();
        self.emit(1, format!("pthread_t {};", threads.join(", ")));
        let mut scalars = Vec::new();
        let n = self.filler_count();
        self.fillers(1, &mut scalars, n);
        self.emit(1, format!("pthread_mutex_init(&{lock}, NULL);"));
        for t in &threads {
            self.emit(1, format!("pthread_create(&{t}, NULL, {worker}, NULL);"));
        }
        for t in &threads {
            self.emit(1, format!("pthread_join({t}, NULL);"));
        }
        self.emit(1, format!("printf(\"%d\\n\", {counter});"));
        self.emit(1, format!("pthread_mutex_destroy(&{lock});"));
        self.emit(1, "return 0;");
        self.emit(0, "}");
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::frontend::{extract_units, lex, parse};

    fn entries(n_buggy: usize, n_clean: usize) -> Vec<CorpusEntry> {
        let mut v = Vec::new();
        for i in 0..n_buggy {
            let mut e = CorpusEntry::clean(format!("b{i}.c"), PatternKind::OmpPrivate);
            e.label = Label::Buggy;
            e.truth_lines.insert(1);
            v.push(e);
        }
        for i in 0..n_clean {
            v.push(CorpusEntry::clean(
                format!("c{i}.c"),
                PatternKind::OmpPrivate,
            ));
        }
        v
    }

    fn count(m: &Manifest, s: Split) -> usize {
        m.split(s).count()
    }

    #[test]
    fn apportion_is_exact() {
        assert_eq!(apportion(10, &[0.8, 0.2, 0.0]), [8, 2, 0]);
        assert_eq!(apportion(5710, &[0.8, 0.2, 0.0]), [4568, 1142, 0]);
        assert_eq!(apportion(3, &[1.0 / 3.0; 3]), [1, 1, 1]);
        assert_eq!(apportion(0, &[0.5, 0.5, 0.0]), [0, 0, 0]);
    }

    #[test]
    fn ten_entries_split_eight_two() {
        let m = build_manifest(entries(0, 10), (0.8, 0.2, 0.0), 7).unwrap();
        assert_eq!(
            (
                count(&m, Split::Train),
                count(&m, Split::Val),
                count(&m, Split::Test)
            ),
            (8, 2, 0)
        );
    }

    #[test]
    fn table_one_split_sizes() {
        let m = build_manifest(entries(2855, 2855), (0.8, 0.2, 0.0), 1).unwrap();
        assert_eq!(
            (count(&m, Split::Train), count(&m, Split::Val)),
            (4568, 1142)
        );
    }

    #[test]
    fn manifest_is_deterministic_and_preserves_entries() {
        let a = build_manifest(entries(7, 9), (0.6, 0.2, 0.2), 3).unwrap();
        let b = build_manifest(entries(7, 9), (0.6, 0.2, 0.2), 3).unwrap();
        assert_eq!(a, b);
        let paths: Vec<_> = a.entries.iter().map(|e| e.path.clone()).collect();
        let want: Vec<_> = entries(7, 9).into_iter().map(|e| e.path).collect();
        assert_eq!(paths, want);
        assert!(a.entries.iter().all(|e| e.split.is_some()));
    }

    #[test]
    fn bad_fractions_and_empty_input_rejected() {
        assert!(build_manifest(entries(1, 1), (0.5, 0.4, 0.0), 0).is_err());
        assert!(build_manifest(entries(1, 1), (1.2, -0.2, 0.0), 0).is_err());
        assert!(build_manifest(Vec::new(), (1.0, 0.0, 0.0), 0).is_err());
    }

    #[test]
    fn manifest_jsonl_roundtrip_uses_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("x.c");
        fs::write(&file, "int main(){}\n").unwrap();
        let mut e = CorpusEntry::clean(&file, PatternKind::OmpCritical);
        e.split = Some(Split::Val);
        let m = Manifest::new(vec![e]);
        let mpath = dir.path().join("manifest.jsonl");
        m.write(&mpath).unwrap();
        let text = fs::read_to_string(&mpath).unwrap();
        assert_eq!(
            text,
            "{\"path\":\"x.c\",\"label\":\"clean\",\"pattern\":\"omp-critical\",\"truth_lines\":[],\"split\":\"val\"}\n"
        );
        let back = Manifest::read(&mpath).unwrap();
        assert_eq!(back.resolve(&back.entries[0]), dir.path().join("x.c"));
        assert_eq!(back.stats().unwrap().total_loc, 1);
    }

    #[test]
    fn manifest_rejects_inconsistent_label() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        fs::write(&p, "{\"path\":\"a.c\",\"label\":\"buggy\",\"pattern\":\"omp-private\",\"truth_lines\":[],\"split\":\"train\"}\n").unwrap();
        assert!(matches!(
            Manifest::read(&p),
            Err(Error::Manifest { line: 1, .. })
        ));
    }

    #[test]
    fn scan_finds_figure_one() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("fig1.c"), fixtures::DOALL_PRIVATE_INNER).unwrap();
        let (files, stats) = scan_corpus(dir.path(), PatternKind::OmpPrivate).unwrap();
        assert_eq!(files.len(), 1);
        assert_eq!((stats.file_count, stats.total_loc), (1, 10));
        let (files, stats) = scan_corpus(dir.path(), PatternKind::OmpCritical).unwrap();
        assert!(files.is_empty());
        assert_eq!(stats, CorpusStats::default());
    }

    #[test]
    fn scan_missing_root_is_io_error() {
        assert!(matches!(
            scan_corpus(Path::new("/nonexistent/dir"), PatternKind::OmpPrivate),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn spec_validation() {
        assert!(SynthSpec::default().validate().is_ok());
        for bad in [
            SynthSpec {
                n_files: 1,
                ..Default::default()
            },
            SynthSpec {
                max_depth: 4,
                ..Default::default()
            },
            SynthSpec {
                min_depth: 3,
                max_depth: 2,
                ..Default::default()
            },
            SynthSpec {
                max_filler: 9,
                ..Default::default()
            },
            SynthSpec {
                ident_pool: 1,
                ..Default::default()
            },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
        let spec =
            SynthSpec::from_toml("n_files = 5\npattern = \"omp-critical\"\nseed = 3\n").unwrap();
        assert_eq!(
            (spec.n_files, spec.pattern, spec.seed),
            (5, PatternKind::OmpCritical, 3)
        );
        assert!(SynthSpec::from_toml("bogus = 1\n").is_err());
    }

    fn classes(src: &str, pattern: PatternKind) -> Vec<Vec<NodeClass>> {
        let root = parse(&lex(src).unwrap()).unwrap();
        extract_units(&root, pattern)
            .iter()
            .map(|u| u.items.iter().map(|t| t.class).collect())
            .collect()
    }

    #[test]
    fn bare_depth_two_matches_figure_one_structure() {
        for seed in 0..5 {
            let spec = SynthSpec {
                n_files: 2,
                seed,
                min_depth: 2,
                max_depth: 2,
                max_filler: 0,
                ..Default::default()
            };
            let srcs = synth_sources(&spec).unwrap();
            let want = classes(fixtures::DOALL_PRIVATE_INNER, PatternKind::OmpPrivate);
            for s in &srcs {
                assert_eq!(classes(s, PatternKind::OmpPrivate), want, "{s}");
                assert_eq!(line_count(s), 10);
            }
        }
    }

    #[test]
    fn generated_files_parse_match_and_differ() {
        for pattern in PatternKind::ALL {
            let spec = SynthSpec {
                n_files: 100,
                pattern,
                seed: 11,
                max_filler: 8,
                ..Default::default()
            };
            let srcs = synth_sources(&spec).unwrap();
            let distinct: HashSet<_> = srcs.iter().collect();
            assert_eq!(distinct.len(), 100);
            for s in &srcs {
                assert!(pattern.matches_text(s), "{s}");
                check_generated(s).unwrap();
            }
        }
    }

    #[test]
    fn synthesis_is_deterministic_on_disk() {
        let spec = SynthSpec {
            n_files: 6,
            seed: 5,
            ..Default::default()
        };
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let e1 = synth_corpus(&spec, d1.path()).unwrap();
        let e2 = synth_corpus(&spec, d2.path()).unwrap();
        assert_eq!(e1.len(), 6);
        for (a, b) in e1.iter().zip(&e2) {
            assert_eq!(fs::read(&a.path).unwrap(), fs::read(&b.path).unwrap());
            assert_eq!(a.label, Label::Clean);
        }
    }
}
