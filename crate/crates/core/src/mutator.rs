//! Synchronization-removal mutants with exact ground truth, and manifest
//! rebalancing.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;

use crate::corpus::{apportion, Label, Manifest, PatternKind, Split};
use crate::frontend::{lex, parse, AstNode, LexToken, NodeClass, TokenKind};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MutationResult {
    pub mutated_source: String,
    /// Inclusive line ranges of the original file that were edited or deleted.
    pub removed_spans: Vec<(usize, usize)>,
    /// Buggy lines, numbered in the mutated file.
    pub truth_lines: BTreeSet<usize>,
    pub pattern: PatternKind,
}

/// Apply the pattern's mutator. `Ok(None)` means the file has no usable site.
pub fn mutate(source: &str, pattern: PatternKind) -> Result<Option<MutationResult>> {
    match pattern {
        PatternKind::OmpPrivate => mutate_omp_private(source),
        PatternKind::OmpCritical => mutate_omp_critical(source),
        PatternKind::PthreadMutex => mutate_pthread_mutex(source),
    }
}

fn front(source: &str) -> Result<(Vec<LexToken>, AstNode)> {
    let tokens = lex(source)?;
    let root = parse(&tokens)?;
    Ok((tokens, root))
}

fn split_lines(source: &str) -> Vec<&str> {
    source.split_inclusive('\n').collect()
}

fn without_lines(source: &str, drop: &BTreeSet<usize>) -> String {
    split_lines(source)
        .into_iter()
        .enumerate()
        .filter(|(i, _)| !drop.contains(&(i + 1)))
        .map(|(_, l)| l)
        .collect()
}

/// Lines in `range` that carry at least one token.
fn token_lines(tokens: &[LexToken], lo: usize, hi: usize) -> BTreeSet<usize> {
    tokens
        .iter()
        .flat_map(|t| t.line..=t.end_line)
        .filter(|l| (lo..=hi).contains(l))
        .collect()
}

/// Deleting lines `deleted` renumbers `line` downwards.
fn renumber(line: usize, deleted: &BTreeSet<usize>) -> usize {
    line - deleted.range(..line).count()
}

/// Remove the first `private(...)` clause from the first OpenMP directive
/// that has one.
pub fn mutate_omp_private(source: &str) -> Result<Option<MutationResult>> {
    static CLAUSE: OnceLock<Regex> = OnceLock::new();
    let clause = CLAUSE.get_or_init(|| Regex::new(r"[ \t]*\bprivate\s*\([^)]*\)").unwrap());

    let (tokens, root) = front(source)?;
    let Some((func, directive)) = find_in_functions(&root, |n| {
        n.class.is_omp_directive()
            && n.children
                .iter()
                .any(|c| c.class == NodeClass::OmpPrivateClause)
    }) else {
        return Ok(None);
    };
    let pragma = pragma_token(&tokens, directive.line);
    let (first, last) = (
        directive.line,
        pragma.map_or(directive.line, |t| t.end_line),
    );

    let mut lines: Vec<String> = split_lines(source)
        .into_iter()
        .map(str::to_string)
        .collect();
    let Some(edited) = (first..=last).find(|&l| clause.is_match(&lines[l - 1])) else {
        return Ok(None);
    };
    lines[edited - 1] = clause.replace(&lines[edited - 1], "").into_owned();

    let vars: BTreeSet<&str> = directive
        .children
        .iter()
        .find(|c| c.class == NodeClass::OmpPrivateClause)
        .into_iter()
        .flat_map(|c| c.children.iter().filter_map(|v| v.name()))
        .collect();

    let mut truth = BTreeSet::from([directive.line]);
    for v in &vars {
        if let Some(l) = declaration_line(&root, func, directive.line, v) {
            truth.insert(l);
        }
    }
    for block in directive
        .children
        .iter()
        .filter(|c| !c.class.is_omp_clause())
    {
        for n in block.preorder() {
            if n.class == NodeClass::ID && n.name().is_some_and(|name| vars.contains(name)) {
                truth.insert(n.line);
            }
        }
    }

    Ok(Some(MutationResult {
        mutated_source: lines.concat(),
        removed_spans: vec![(edited, edited)],
        truth_lines: truth,
        pattern: PatternKind::OmpPrivate,
    }))
}

/// First node (preorder) satisfying `pred`, with its enclosing function.
fn find_in_functions(
    root: &AstNode,
    pred: impl Fn(&AstNode) -> bool,
) -> Option<(Option<&AstNode>, &AstNode)> {
    for top in &root.children {
        if let Some(n) = top.preorder().find(|n| pred(n)) {
            let func = (top.class == NodeClass::FuncDef).then_some(top);
            return Some((func, n));
        }
    }
    None
}

fn pragma_token(tokens: &[LexToken], line: usize) -> Option<&LexToken> {
    tokens
        .iter()
        .find(|t| t.kind == TokenKind::Pragma && t.line == line)
}

/// Line of the closest declaration of `name` at or before `before`: the
/// enclosing function first, then file scope.
fn declaration_line(
    root: &AstNode,
    func: Option<&AstNode>,
    before: usize,
    name: &str,
) -> Option<usize> {
    let is_decl =
        |n: &&AstNode| n.class == NodeClass::Decl && n.name() == Some(name) && n.line <= before;
    func.and_then(|f| f.preorder().filter(is_decl).map(|n| n.line).max())
        .or_else(|| root.children.iter().filter(is_decl).map(|n| n.line).max())
}

/// Delete the first `#pragma omp critical` line(s), keeping the guarded block.
pub fn mutate_omp_critical(source: &str) -> Result<Option<MutationResult>> {
    let (tokens, root) = front(source)?;
    let Some(crit) = root.preorder().find(|n| n.class == NodeClass::OmpCritical) else {
        return Ok(None);
    };
    let Some(block) = crit.children.iter().find(|c| !c.class.is_omp_clause()) else {
        return Ok(None);
    };
    let end = pragma_token(&tokens, crit.line).map_or(crit.line, |t| t.end_line);
    let deleted: BTreeSet<usize> = (crit.line..=end).collect();
    let truth = token_lines(&tokens, block.line, block.end_line)
        .into_iter()
        .map(|l| renumber(l, &deleted))
        .collect();
    Ok(Some(MutationResult {
        mutated_source: without_lines(source, &deleted),
        removed_spans: vec![(crit.line, end)],
        truth_lines: truth,
        pattern: PatternKind::OmpCritical,
    }))
}

/// Delete the first lock (by line) and its nearest same-mutex unlock in the
/// same function, when both stand alone on their lines.
pub fn mutate_pthread_mutex(source: &str) -> Result<Option<MutationResult>> {
    let (tokens, root) = front(source)?;
    let mut locks: Vec<(&AstNode, &AstNode)> = Vec::new();
    for f in root
        .children
        .iter()
        .filter(|n| n.class == NodeClass::FuncDef)
    {
        for n in f
            .preorder()
            .filter(|n| n.class == NodeClass::PthreadLockCall)
        {
            locks.push((f, n));
        }
    }
    locks.sort_by_key(|(_, n)| n.line);

    for (func, lock) in locks {
        let Some(unlock) = func
            .preorder()
            .filter(|n| {
                n.class == NodeClass::PthreadUnlockCall && n.name == lock.name && n.line > lock.line
            })
            .min_by_key(|n| n.line)
        else {
            continue;
        };
        if !standalone_statement(func, lock, &tokens)
            || !standalone_statement(func, unlock, &tokens)
        {
            continue;
        }
        if unlock.line <= lock.line + 1 {
            continue;
        }
        let region = token_lines(&tokens, lock.line + 1, unlock.line - 1);
        if region.is_empty() {
            continue;
        }
        let deleted = BTreeSet::from([lock.line, unlock.line]);
        return Ok(Some(MutationResult {
            mutated_source: without_lines(source, &deleted),
            removed_spans: vec![(lock.line, lock.line), (unlock.line, unlock.line)],
            truth_lines: region.into_iter().map(|l| renumber(l, &deleted)).collect(),
            pattern: PatternKind::PthreadMutex,
        }));
    }
    Ok(None)
}

/// True when `call` is an expression statement directly inside a compound
/// block and is the only thing on its line.
fn standalone_statement(func: &AstNode, call: &AstNode, tokens: &[LexToken]) -> bool {
    let under_compound = func
        .preorder()
        .filter(|n| n.class == NodeClass::Compound)
        .any(|c| c.children.iter().any(|k| std::ptr::eq(k, call)));
    if !under_compound || call.line != call.end_line {
        return false;
    }
    let on_line: Vec<&LexToken> = tokens
        .iter()
        .filter(|t| t.line <= call.line && t.end_line >= call.line)
        .collect();
    on_line
        .first()
        .is_some_and(|t| t.kind == TokenKind::Identifier && t.text.starts_with("pthread_mutex_"))
        && on_line.last().is_some_and(|t| t.is_punct(";"))
        && on_line.iter().filter(|t| t.is_punct(";")).count() == 1
}

/// Independent soundness check: a line diff (LCS) between original and
/// mutant may only touch lines inside `removed_spans`, an edited line must be
/// a character subsequence of its original, and the mutant must re-lex.
pub fn verify_mutation(original: &str, result: &MutationResult) -> std::result::Result<(), String> {
    lex(&result.mutated_source).map_err(|e| format!("mutant does not lex: {e}"))?;
    let a: Vec<&str> = original.lines().collect();
    let b: Vec<&str> = result.mutated_source.lines().collect();
    let in_span = |l: usize| {
        result
            .removed_spans
            .iter()
            .any(|&(s, e)| (s..=e).contains(&l))
    };

    let (n, m) = (a.len(), b.len());
    let mut dp = vec![vec![0u32; m + 1]; n + 1];
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            dp[i][j] = if a[i] == b[j] {
                dp[i + 1][j + 1] + 1
            } else {
                dp[i + 1][j].max(dp[i][j + 1])
            };
        }
    }
    let (mut i, mut j) = (0, 0);
    let mut deleted: Vec<usize> = Vec::new();
    let mut inserted: Vec<usize> = Vec::new();
    let flush =
        |deleted: &mut Vec<usize>, inserted: &mut Vec<usize>| -> std::result::Result<(), String> {
            for &d in deleted.iter() {
                if !in_span(d + 1) {
                    return Err(format!(
                        "original line {} changed outside removed spans",
                        d + 1
                    ));
                }
            }
            for &k in inserted.iter() {
                if !deleted.iter().any(|&d| is_subsequence(b[k], a[d])) {
                    return Err(format!("mutant line {} is not a deletion-only edit", k + 1));
                }
            }
            deleted.clear();
            inserted.clear();
            Ok(())
        };
    while i < n || j < m {
        if i < n && j < m && a[i] == b[j] {
            flush(&mut deleted, &mut inserted)?;
            i += 1;
            j += 1;
        } else if j < m && (i == n || dp[i][j + 1] >= dp[i + 1][j]) {
            inserted.push(j);
            j += 1;
        } else {
            deleted.push(i);
            i += 1;
        }
    }
    flush(&mut deleted, &mut inserted)?;
    if result.truth_lines.is_empty() {
        return Err("empty truth set".into());
    }
    if let Some(&l) = result.truth_lines.iter().find(|&&l| l == 0 || l > b.len()) {
        return Err(format!("truth line {l} outside the mutant"));
    }
    Ok(())
}

fn is_subsequence(short: &str, long: &str) -> bool {
    let mut it = long.chars();
    short.chars().all(|c| it.any(|x| x == c))
}

/// `dir/stem.c` becomes `dir/stem.mut.c`.
pub fn mutant_path(path: &Path) -> PathBuf {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("mutant");
    path.with_file_name(format!("{stem}.mut.c"))
}

/// Mutate ⌊ratio·n⌋ Clean entries, spread over splits by largest remainder,
/// writing each mutant beside its original.
pub fn apply_balanced_mutation(manifest: &Manifest, ratio: f64, seed: u64) -> Result<Manifest> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::InvalidArgument(format!(
            "ratio must be in [0, 1], got {ratio}"
        )));
    }
    if let Some(e) = manifest.entries.iter().find(|e| e.label != Label::Clean) {
        return Err(Error::InvalidArgument(format!(
            "{} is already labeled buggy",
            e.path.display()
        )));
    }
    let n = manifest.entries.len();
    let quota = (ratio * n as f64 + 1e-9).floor() as usize;
    let mut groups: BTreeMap<Option<Split>, Vec<usize>> = BTreeMap::new();
    for (i, e) in manifest.entries.iter().enumerate() {
        groups.entry(e.split).or_default().push(i);
    }
    let shares: Vec<f64> = groups
        .values()
        .map(|g| g.len() as f64 / n.max(1) as f64)
        .collect();
    let wants = apportion(quota, &shares);

    let mut out = manifest.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for ((split, mut members), wanted) in groups.into_iter().zip(wants) {
        members.shuffle(&mut rng);
        let mut achieved = 0;
        for i in members {
            if achieved == wanted {
                break;
            }
            let entry = &manifest.entries[i];
            let path = manifest.resolve(entry);
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            let source = String::from_utf8_lossy(&bytes);
            let result = match mutate(&source, entry.pattern) {
                Ok(Some(r)) => r,
                Ok(None) => {
                    log::info!(
                        "{}: no {} site, trying next candidate",
                        path.display(),
                        entry.pattern
                    );
                    continue;
                }
                Err(e) => {
                    log::warn!("{}: skipped, {e}", path.display());
                    continue;
                }
            };
            let target = mutant_path(&path);
            fs::write(&target, &result.mutated_source).map_err(|e| Error::io(&target, e))?;
            let slot = &mut out.entries[i];
            slot.path = mutant_path(&entry.path);
            slot.label = Label::Buggy;
            slot.truth_lines = result.truth_lines;
            achieved += 1;
        }
        if achieved < wanted {
            return Err(Error::QuotaShortfall {
                split: split.map_or("unassigned".to_string(), |s| s.to_string()),
                wanted,
                achieved,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::CorpusEntry;
    use crate::fixtures;

    #[test]
    fn figure_one_right_becomes_left() {
        let r = mutate_omp_private(fixtures::DOALL_PRIVATE_INNER)
            .unwrap()
            .unwrap();
        assert_eq!(r.mutated_source, fixtures::DOALL_SHARED_INNER);
        assert_eq!(r.truth_lines, BTreeSet::from([4, 5, 7, 8]));
        assert_eq!(r.removed_spans, [(5, 5)]);
        verify_mutation(fixtures::DOALL_PRIVATE_INNER, &r).unwrap();
    }

    #[test]
    fn no_private_clause_is_no_site() {
        assert_eq!(
            mutate_omp_private(fixtures::DOALL_SHARED_INNER).unwrap(),
            None
        );
        assert_eq!(
            mutate_omp_private("int main() { return 0; }\n").unwrap(),
            None
        );
    }

    #[test]
    fn private_global_and_multiple_vars() {
        let src = "int t;\nint main()\n{\n    int i, k;\n    #pragma omp parallel for private(t, k) shared(i)\n    for (i = 0; i < 4; i++) {\n        t = i;\n        k = t;\n    }\n}\n";
        let r = mutate_omp_private(src).unwrap().unwrap();
        assert_eq!(r.truth_lines, BTreeSet::from([1, 4, 5, 7, 8]));
        assert!(r
            .mutated_source
            .contains("#pragma omp parallel for shared(i)\n"));
        verify_mutation(src, &r).unwrap();
    }

    const CRITICAL: &str = "int main()\n{\n    int i, s = 0;\n    int a[10];\n    #pragma omp parallel for\n    for (i = 0; i < 10; i++)\n    {\n        #pragma omp critical\n        {\n            s = s + a[i];\n        }\n    }\n    return s;\n}\n";

    #[test]
    fn critical_removal_shifts_block() {
        let r = mutate_omp_critical(CRITICAL).unwrap().unwrap();
        assert_eq!(r.truth_lines, BTreeSet::from([8, 9, 10]));
        assert_eq!(r.removed_spans, [(8, 8)]);
        assert_eq!(
            r.mutated_source.lines().count(),
            CRITICAL.lines().count() - 1
        );
        verify_mutation(CRITICAL, &r).unwrap();
        assert_eq!(mutate_omp_critical(&r.mutated_source).unwrap(), None);
    }

    const PTHREAD: &str = "#include <pthread.h>\npthread_mutex_t m;\nint c;\nvoid *w(void *arg)\n{\n    int i;\n    for (i = 0; i < 9; i++)\n    {\n        int t = c;\n        t = t + 1;\n        c = t;\n        pthread_mutex_lock(&m);\n        c = c + 1;\n        c = c * 2;\n        pthread_mutex_unlock(&m);\n    }\n    return NULL;\n}\n";

    #[test]
    fn pthread_pair_removed() {
        let r = mutate_pthread_mutex(PTHREAD).unwrap().unwrap();
        assert_eq!(r.truth_lines, BTreeSet::from([12, 13]));
        assert_eq!(r.removed_spans, [(12, 12), (15, 15)]);
        verify_mutation(PTHREAD, &r).unwrap();
    }

    #[test]
    fn pthread_lock_without_unlock_is_no_site() {
        let src = "pthread_mutex_t m;\nvoid f()\n{\n    pthread_mutex_lock(&m);\n    x = 1;\n}\nvoid g()\n{\n    pthread_mutex_unlock(&m);\n}\n";
        assert_eq!(mutate_pthread_mutex(src).unwrap(), None);
    }

    #[test]
    fn pthread_first_of_two_pairs() {
        let src = "void f()\n{\n    pthread_mutex_lock(&a);\n    x = 1;\n    pthread_mutex_unlock(&a);\n}\nvoid g()\n{\n    pthread_mutex_lock(&b);\n    y = 1;\n    pthread_mutex_unlock(&b);\n}\n";
        let r = mutate_pthread_mutex(src).unwrap().unwrap();
        assert_eq!(r.removed_spans, [(3, 3), (5, 5)]);
        assert_eq!(r.truth_lines, BTreeSet::from([3]));
        assert!(r.mutated_source.contains("pthread_mutex_lock(&b)"));
        let again = mutate_pthread_mutex(&r.mutated_source).unwrap().unwrap();
        assert_eq!(again.truth_lines, BTreeSet::from([7]));
    }

    #[test]
    fn pthread_mismatched_mutex_and_inline_calls_skipped() {
        let src = "void f()\n{\n    pthread_mutex_lock(&a);\n    x = 1;\n    pthread_mutex_unlock(&b);\n    pthread_mutex_lock(&c); y = 2;\n    z = 3;\n    pthread_mutex_unlock(&c);\n}\n";
        assert_eq!(mutate_pthread_mutex(src).unwrap(), None);
    }

    #[test]
    fn verifier_rejects_foreign_edits() {
        let r = MutationResult {
            mutated_source: "int a;\nint c;\n".into(),
            removed_spans: vec![(2, 2)],
            truth_lines: BTreeSet::from([1]),
            pattern: PatternKind::OmpCritical,
        };
        assert!(verify_mutation("int a;\nint b;\nint c;\n", &r).is_ok());
        assert!(verify_mutation("int x;\nint b;\nint c;\n", &r).is_err());
        let grown = MutationResult {
            mutated_source: "int a;\nint bb;\nint c;\n".into(),
            ..r.clone()
        };
        assert!(verify_mutation("int a;\nint b;\nint c;\n", &grown).is_err());
    }

    fn synth_manifest(dir: &Path, n: usize) -> Manifest {
        let spec = crate::corpus::SynthSpec {
            n_files: n,
            seed: 2,
            ..Default::default()
        };
        let entries = crate::corpus::synth_corpus(&spec, dir).unwrap();
        crate::corpus::build_manifest(entries, (0.8, 0.2, 0.0), 1).unwrap()
    }

    #[test]
    fn balanced_half_and_zero_and_full() {
        let dir = tempfile::tempdir().unwrap();
        let m = synth_manifest(dir.path(), 10);
        let half = apply_balanced_mutation(&m, 0.5, 3).unwrap();
        let buggy = half
            .entries
            .iter()
            .filter(|e| e.label == Label::Buggy)
            .count();
        assert_eq!(buggy, 5);
        for e in &half.entries {
            assert_eq!(e.truth_lines.is_empty(), e.label == Label::Clean);
            if e.label == Label::Buggy {
                assert!(e.path.to_str().unwrap().ends_with(".mut.c"));
                assert!(e.path.exists());
            }
        }
        assert_eq!(apply_balanced_mutation(&m, 0.0, 3).unwrap(), m);
        let all = apply_balanced_mutation(&m, 1.0, 3).unwrap();
        assert!(all.entries.iter().all(|e| e.label == Label::Buggy));
        assert!(apply_balanced_mutation(&all, 0.5, 3).is_err());
    }

    #[test]
    fn shortfall_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let mut entries = Vec::new();
        for i in 0..4 {
            let p = dir.path().join(format!("f{i}.c"));
            let src = if i == 0 {
                fixtures::DOALL_PRIVATE_INNER
            } else {
                fixtures::DOALL_SHARED_INNER
            };
            fs::write(&p, src).unwrap();
            entries.push(CorpusEntry::clean(p, PatternKind::OmpPrivate));
        }
        let m = Manifest::new(entries);
        let err = apply_balanced_mutation(&m, 0.5, 0).unwrap_err();
        assert!(
            matches!(
                err,
                Error::QuotaShortfall {
                    wanted: 2,
                    achieved: 1,
                    ..
                }
            ),
            "{err}"
        );
    }
}
