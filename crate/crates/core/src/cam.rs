//! Class activation maps projected onto source lines.
//!
//! With sum pooling the bias-free logit of class `c` splits exactly over
//! positions: `z_c − b_c = Σ_i Σ_k w_ck · g_k(i)`. The per-position term,
//! divided by the number of window sizes, is the raw score.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::str::FromStr;

use serde::Serialize;

use crate::corpus::{Label, PatternKind};
use crate::frontend::{encode, units_of_source, EncodedSample};
use crate::model::{infer, ForwardCache, ModelParams};
use crate::{Error, Result, Scalar};

pub const DEFAULT_THETA: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct CamResult<T> {
    pub unit_name: String,
    /// Raw buggy-class score per valid position.
    pub per_token: Vec<T>,
    /// Source line of each entry in `per_token`.
    pub token_lines: Vec<usize>,
    /// Normalized heat in [0, 1] per line holding at least one token.
    pub per_line: BTreeMap<usize, f64>,
    pub flagged_lines: BTreeSet<usize>,
    pub predicted: Label,
    pub prob_buggy: f64,
}

impl<T: Scalar> CamResult<T> {
    /// Fold the units of one file into a single report: heat is the max
    /// over units, flags are the union.
    pub fn merge(results: &[CamResult<T>]) -> CamResult<T> {
        let mut out = CamResult {
            unit_name: "<file>".into(),
            per_token: Vec::new(),
            token_lines: Vec::new(),
            per_line: BTreeMap::new(),
            flagged_lines: BTreeSet::new(),
            predicted: Label::Clean,
            prob_buggy: 0.0,
        };
        for r in results {
            out.per_token.extend_from_slice(&r.per_token);
            out.token_lines.extend_from_slice(&r.token_lines);
            for (&l, &h) in &r.per_line {
                let e = out.per_line.entry(l).or_insert(0.0);
                *e = e.max(h);
            }
            out.flagged_lines.extend(&r.flagged_lines);
            if r.predicted == Label::Buggy {
                out.predicted = Label::Buggy;
            }
            out.prob_buggy = out.prob_buggy.max(r.prob_buggy);
        }
        out
    }
}

/// Raw scores for `class` from an existing cache. `keep` is ignored, so pass
/// an inference-mode cache.
pub fn cam_from_cache<T: Scalar>(
    params: &ModelParams<T>,
    cache: &ForwardCache<T>,
    class: usize,
) -> Vec<T> {
    let nf = params.hp.features();
    let w = &params.weights.dense[class * nf..(class + 1) * nf];
    let scale = T::of(1.0 / params.hp.window_sizes.len() as f64);
    (0..cache.valid)
        .map(|i| {
            let s = (0..nf).fold(T::zero(), |acc, k| acc + w[k] * cache.act(k, i));
            s * scale
        })
        .collect()
}

pub fn cam_scores<T: Scalar>(
    params: &ModelParams<T>,
    sample: &EncodedSample,
    class: usize,
) -> Result<Vec<T>> {
    if class > 1 {
        return Err(Error::InvalidArgument(format!(
            "class must be 0 or 1, got {class}"
        )));
    }
    let cache = infer(params, sample)?;
    Ok(cam_from_cache(params, &cache, class))
}

/// Clamp at zero, take the max per line, scale so the hottest line is 1.
pub fn project_to_lines<T: Scalar>(raw: &[T], line_map: &[usize]) -> BTreeMap<usize, f64> {
    let mut heat: BTreeMap<usize, f64> = BTreeMap::new();
    for (r, &line) in raw.iter().zip(line_map) {
        let e = heat.entry(line).or_insert(0.0);
        *e = e.max(r.as_f64().max(0.0));
    }
    let top = heat.values().copied().fold(0.0, f64::max);
    heat.values_mut()
        .for_each(|h| *h = if top > 0.0 { *h / top } else { 0.0 });
    heat
}

pub fn flag_lines(heat: &BTreeMap<usize, f64>, theta: f64) -> Result<BTreeSet<usize>> {
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "theta must be in (0, 1], got {theta}"
        )));
    }
    Ok(heat
        .iter()
        .filter(|(_, &h)| h >= theta)
        .map(|(&l, _)| l)
        .collect())
}

/// Predict each unit of `source` and localize the ones predicted Buggy.
pub fn localize<T: Scalar>(
    params: &ModelParams<T>,
    source: &str,
    pattern: PatternKind,
    theta: f64,
) -> Result<Vec<CamResult<T>>> {
    units_of_source(source, pattern)?
        .iter()
        .map(|v| {
            localize_sample(
                params,
                &encode(v, &params.vocab, params.hp.l_max),
                &v.unit_name,
                theta,
            )
        })
        .collect()
}

pub fn localize_sample<T: Scalar>(
    params: &ModelParams<T>,
    sample: &EncodedSample,
    unit_name: &str,
    theta: f64,
) -> Result<CamResult<T>> {
    let cache = infer(params, sample)?;
    let prob_buggy = cache.prob_buggy().as_f64();
    let predicted = if prob_buggy >= params.hp.threshold {
        Label::Buggy
    } else {
        Label::Clean
    };
    let per_token = cam_from_cache(params, &cache, Label::Buggy.index());
    let token_lines = sample.line_map[..cache.valid].to_vec();
    let per_line = project_to_lines(&per_token, &token_lines);
    let flagged_lines = match predicted {
        Label::Buggy => flag_lines(&per_line, theta)?,
        Label::Clean => BTreeSet::new(),
    };
    Ok(CamResult {
        unit_name: unit_name.to_string(),
        per_token,
        token_lines,
        per_line,
        flagged_lines,
        predicted,
        prob_buggy,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Ansi,
    Html,
    Json,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ansi" => Ok(ReportFormat::Ansi),
            "html" => Ok(ReportFormat::Html),
            "json" => Ok(ReportFormat::Json),
            _ => Err(Error::InvalidArgument(format!(
                "unknown format {s:?} (expected ansi, html or json)"
            ))),
        }
    }
}

#[derive(Serialize)]
struct JsonLine {
    line: usize,
    heat: f64,
    flagged: bool,
}

#[derive(Serialize)]
struct JsonReport {
    prob_buggy: f64,
    lines: Vec<JsonLine>,
}

const HIGHLIGHT: &str = "\x1b[43m";
const RESET: &str = "\x1b[0m";

fn escape_html(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '&' => out.push_str("&amp;"),
            '"' => out.push_str("&quot;"),
            _ => out.push(c),
        }
    }
    out
}

pub fn render_report<T: Scalar>(source: &str, cam: &CamResult<T>, format: ReportFormat) -> String {
    let heat = |l: usize| cam.per_line.get(&l).copied().unwrap_or(0.0);
    let width = source.lines().count().max(1).to_string().len();
    match format {
        ReportFormat::Json => {
            let report = JsonReport {
                prob_buggy: cam.prob_buggy,
                lines: (1..=source.lines().count())
                    .map(|l| JsonLine {
                        line: l,
                        heat: heat(l),
                        flagged: cam.flagged_lines.contains(&l),
                    })
                    .collect(),
            };
            serde_json::to_string_pretty(&report).expect("report serializes") + "\n"
        }
        ReportFormat::Ansi => {
            let mut out = format!("prob_buggy {:.4}\n", cam.prob_buggy);
            for (i, text) in source.lines().enumerate() {
                let l = i + 1;
                if cam.flagged_lines.contains(&l) {
                    let _ = writeln!(out, "{HIGHLIGHT}{l:>width$} | {text}{RESET}");
                } else {
                    let _ = writeln!(out, "{l:>width$} | {text}");
                }
            }
            out
        }
        ReportFormat::Html => {
            let mut out = String::from(
                "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>deeprace report</title></head>\n\
                 <body style=\"font-family: monospace\">\n",
            );
            let _ = writeln!(out, "<p>prob_buggy {:.4}</p>\n<pre>", cam.prob_buggy);
            for (i, text) in source.lines().enumerate() {
                let l = i + 1;
                let line = format!("{l:>width$} | {}", escape_html(text));
                if cam.flagged_lines.contains(&l) {
                    let _ = writeln!(
                        out,
                        "<mark style=\"background: rgba(255, 200, 0, {:.3})\">{line}</mark>",
                        heat(l)
                    );
                } else {
                    let _ = writeln!(out, "{line}");
                }
            }
            out.push_str("</pre>\n</body></html>\n");
            out
        }
    }
}
