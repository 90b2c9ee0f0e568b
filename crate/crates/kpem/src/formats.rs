//! Text file formats: time-series CSV, model files, traces and benchmark
//! tables. Every real number is written with 17 significant digits so files
//! round-trip exactly.

use std::fs;
use std::io::Write;
use std::path::Path;

use kpem_core::benchmark::{BoxStats, DemoDraw, Estimator, RunOutcome};
use kpem_core::evidence::EvidenceValue;
use kpem_core::kernels::{HyperParams, KernelKind};
use kpem_core::model::Theta;
use kpem_core::pipeline::SearchStep;
use kpem_core::signals::Dataset;

use crate::error::{Error, Result};

/// `{:.16e}`; parses back to the identical `f64`.
pub fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes `bytes` through a temporary file in the target directory, so
/// readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new())
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Vec<u8> {
    w.into_inner().expect("in-memory writer cannot fail")
}

fn bool_str(b: bool) -> &'static str {
    if b {
        "true"
    } else {
        "false"
    }
}

// ---- time series ------------------------------------------------------------

/// `t,u,y` with `t` counting from 1.
pub fn dataset_to_csv(data: &Dataset) -> Vec<u8> {
    let mut w = csv_writer();
    w.write_record(["t", "u", "y"]).expect("in-memory");
    for (i, (u, y)) in data.u().iter().zip(data.y()).enumerate() {
        w.write_record([(i + 1).to_string(), fmt_real(*u), fmt_real(*y)]).expect("in-memory");
    }
    finish_csv(w)
}

pub fn parse_dataset(text: &str, path: &Path) -> Result<Dataset> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| Error::parse(path, 1, e.to_string()))?.clone();
    let names: Vec<&str> = header.iter().collect();
    if names != ["t", "u", "y"] {
        return Err(Error::parse(path, 1, format!("expected header `t,u,y`, found `{}`", names.join(","))));
    }
    let mut u = Vec::new();
    let mut y = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::parse(path, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let t: u64 = rec[0]
            .parse()
            .map_err(|_| Error::parse(path, line, format!("invalid sample index `{}`", &rec[0])))?;
        if t != u.len() as u64 + 1 {
            return Err(Error::parse(path, line, format!("expected t = {}, found {t}", u.len() + 1)));
        }
        let num = |s: &str, what: &str| -> Result<f64> {
            match s.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::parse(path, line, format!("invalid {what} value `{s}`"))),
            }
        };
        u.push(num(&rec[1], "u")?);
        y.push(num(&rec[2], "y")?);
    }
    if u.is_empty() {
        return Err(Error::parse(path, 1, "no samples"));
    }
    Ok(Dataset::from_vecs(u, y)?)
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    parse_dataset(&read_text(path)?, path)
}

pub fn write_dataset(path: &Path, data: &Dataset) -> Result<()> {
    write_atomic(path, &dataset_to_csv(data))
}

// ---- model files ------------------------------------------------------------

/// Contents of a model (or truth) file.
///
/// ```text
/// T=<taps>
/// sigma2=<noise variance>
/// kernel=tc|dc2            optional
/// eta=<v1>,<v2>,...        optional, requires kernel
/// b <k> <value>            k = 0 .. nb-1
/// c <k> <value>            k = 1 .. nc
/// ```
/// Lines starting with `#` are comments.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub t: usize,
    pub sigma2: f64,
    pub eta: Option<HyperParams>,
    pub theta: Theta,
}

pub fn model_to_string(m: &ModelFile, comments: &[String]) -> String {
    let mut s = String::new();
    for c in comments {
        s.push_str(&format!("# {c}\n"));
    }
    s.push_str(&format!("T={}\n", m.t));
    s.push_str(&format!("sigma2={}\n", fmt_real(m.sigma2)));
    if let Some(eta) = &m.eta {
        s.push_str(&format!("kernel={}\n", eta.kind.name()));
        let vals: Vec<String> = eta.values().into_iter().map(fmt_real).collect();
        s.push_str(&format!("eta={}\n", vals.join(",")));
    }
    for (k, v) in m.theta.b().iter().enumerate() {
        s.push_str(&format!("b {k} {}\n", fmt_real(*v)));
    }
    for (k, v) in m.theta.c().iter().enumerate() {
        s.push_str(&format!("c {} {}\n", k + 1, fmt_real(*v)));
    }
    s
}

pub fn eta_from_values(kind: KernelKind, v: &[f64]) -> Option<HyperParams> {
    match (kind, v) {
        (KernelKind::Tc, &[lb, lc, bb, bc]) => Some(HyperParams::tc(lb, lc, bb, bc)),
        (KernelKind::Dc2, &[lb, lc, bb, bc, ab, ac]) => Some(HyperParams::dc2(lb, lc, bb, bc, ab, ac)),
        _ => None,
    }
}

pub fn parse_model(text: &str, path: &Path) -> Result<ModelFile> {
    let mut t = None;
    let mut sigma2 = None;
    let mut kind = None;
    let mut eta_vals: Option<(u64, Vec<f64>)> = None;
    let mut b: Vec<Option<f64>> = Vec::new();
    let mut c: Vec<Option<f64>> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i as u64 + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| Error::parse(path, line_no, msg);
        let real = |s: &str| -> Result<f64> {
            match s.trim().parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(err(format!("invalid number `{s}`"))),
            }
        };
        if let Some((key, value)) = line.split_once('=') {
            match key.trim() {
                "T" => t = Some(value.trim().parse::<usize>().map_err(|_| err(format!("invalid T `{value}`")))?),
                "sigma2" => sigma2 = Some(real(value)?),
                "kernel" => {
                    kind = Some(
                        value
                            .trim()
                            .parse::<KernelKind>()
                            .map_err(|_| err(format!("unknown kernel `{value}`")))?,
                    )
                }
                "eta" => eta_vals = Some((line_no, value.split(',').map(real).collect::<Result<_>>()?)),
                other => return Err(err(format!("unknown key `{other}`"))),
            }
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        let [which, k, v] = parts[..] else {
            return Err(err(format!("expected `b|c <index> <value>`, found `{line}`")));
        };
        let k: usize = k.parse().map_err(|_| err(format!("invalid tap index `{k}`")))?;
        let v = real(v)?;
        let (taps, pos) = match which {
            "b" => (&mut b, k),
            "c" if k >= 1 => (&mut c, k - 1),
            "c" => return Err(err("c taps are numbered from 1".into())),
            _ => return Err(err(format!("unknown tap kind `{which}`"))),
        };
        if taps.len() <= pos {
            taps.resize(pos + 1, None);
        }
        if taps[pos].replace(v).is_some() {
            return Err(err(format!("duplicate tap {which} {k}")));
        }
    }
    let t = t.ok_or_else(|| Error::parse(path, 0, "missing `T=` line"))?;
    let sigma2 = sigma2.ok_or_else(|| Error::parse(path, 0, "missing `sigma2=` line"))?;
    let dense = |taps: Vec<Option<f64>>, name: &str| -> Result<Vec<f64>> {
        taps.iter()
            .enumerate()
            .map(|(k, v)| v.ok_or_else(|| Error::parse(path, 0, format!("missing {name} tap {k}"))))
            .collect()
    };
    let b = dense(b, "b")?;
    let c = dense(c, "c (0-based position)")?;
    if b.len() > t || c.len() > t {
        return Err(Error::parse(path, 0, format!("more taps than T = {t}")));
    }
    let eta = match (kind, eta_vals) {
        (Some(kind), Some((line, v))) => Some(
            eta_from_values(kind, &v)
                .ok_or_else(|| Error::parse(path, line, format!("{} expects {} values", kind.name(), kind.arity())))?,
        ),
        (None, Some((line, _))) => return Err(Error::parse(path, line, "`eta=` requires a `kernel=` line")),
        _ => None,
    };
    Ok(ModelFile {
        t,
        sigma2,
        eta,
        theta: Theta::new(b, c)?,
    })
}

pub fn read_model(path: &Path) -> Result<ModelFile> {
    parse_model(&read_text(path)?, path)
}

// ---- fit and evaluate outputs -----------------------------------------------

pub fn param_names(kind: KernelKind) -> &'static [&'static str] {
    match kind {
        KernelKind::Tc => &["lambda_b", "lambda_c", "beta_b", "beta_c"],
        KernelKind::Dc2 => &["lambda_b", "lambda_c", "beta_b", "beta_c", "alpha_b", "alpha_c"],
    }
}

pub fn trace_to_csv(kind: KernelKind, trace: &[SearchStep]) -> Vec<u8> {
    let mut w = csv_writer();
    let mut header = vec!["eval"];
    header.extend_from_slice(param_names(kind));
    header.extend_from_slice(&["nll_relative", "best_so_far", "flagged", "inner_converged", "failed"]);
    w.write_record(&header).expect("in-memory");
    for (i, s) in trace.iter().enumerate() {
        let mut row = vec![(i + 1).to_string()];
        row.extend(s.eta.values().into_iter().map(fmt_real));
        row.push(fmt_real(s.nll_relative));
        row.push(fmt_real(s.best_so_far));
        row.push(bool_str(s.flagged).into());
        row.push(bool_str(s.inner_converged).into());
        row.push(bool_str(s.failed).into());
        w.write_record(&row).expect("in-memory");
    }
    finish_csv(w)
}

/// One evaluated grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct GridRow {
    pub eta: HyperParams,
    pub evidence: EvidenceValue,
}

pub fn grid_to_csv(kind: KernelKind, rows: &[GridRow]) -> Vec<u8> {
    let mut w = csv_writer();
    let mut header = vec!["index"];
    header.extend_from_slice(param_names(kind));
    header.extend_from_slice(&[
        "nll",
        "nll_relative",
        "hessian_logdet",
        "inner_converged",
        "inner_iterations",
        "gauss_newton_fallback",
        "flagged",
    ]);
    w.write_record(&header).expect("in-memory");
    for (i, r) in rows.iter().enumerate() {
        let ev = &r.evidence;
        let mut row = vec![i.to_string()];
        row.extend(r.eta.values().into_iter().map(fmt_real));
        row.extend([
            fmt_real(ev.nll),
            fmt_real(ev.nll_relative),
            fmt_real(ev.hessian_logdet),
            bool_str(ev.inner_converged).into(),
            ev.inner_iterations.to_string(),
            bool_str(ev.gauss_newton_fallback).into(),
            bool_str(ev.flagged()).into(),
        ]);
        w.write_record(&row).expect("in-memory");
    }
    finish_csv(w)
}

// ---- benchmark tables -------------------------------------------------------

/// `run,estimator,air,cod,converged,error`. Wall-clock times live in a
/// separate table so this one is reproducible byte for byte.
pub fn results_to_csv(outcomes: &[RunOutcome]) -> Vec<u8> {
    let mut w = csv_writer();
    w.write_record(["run", "estimator", "air", "cod", "converged", "error"]).expect("in-memory");
    for o in outcomes {
        w.write_record([
            o.run.to_string(),
            o.estimator.name().to_string(),
            fmt_real(o.air),
            fmt_real(o.cod),
            bool_str(o.converged).to_string(),
            o.error.clone().unwrap_or_default(),
        ])
        .expect("in-memory");
    }
    finish_csv(w)
}

/// One parsed row of a results table.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub run: usize,
    pub estimator: Estimator,
    pub air: f64,
    pub cod: f64,
    pub converged: bool,
    pub error: Option<String>,
}

pub fn parse_results(text: &str, path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::parse(path, e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |what: &str| Error::parse(path, line, format!("invalid {what}"));
        if rec.len() != 6 {
            return Err(bad("column count"));
        }
        out.push(ResultRow {
            run: rec[0].parse().map_err(|_| bad("run"))?,
            estimator: rec[1].parse().map_err(|_| bad("estimator"))?,
            air: rec[2].parse().map_err(|_| bad("air"))?,
            cod: rec[3].parse().map_err(|_| bad("cod"))?,
            converged: rec[4].parse().map_err(|_| bad("converged"))?,
            error: (!rec[5].is_empty()).then(|| rec[5].to_string()),
        });
    }
    Ok(out)
}

pub fn timings_to_csv(outcomes: &[RunOutcome]) -> Vec<u8> {
    let mut w = csv_writer();
    w.write_record(["run", "estimator", "fit_seconds"]).expect("in-memory");
    for o in outcomes {
        w.write_record([o.run.to_string(), o.estimator.name().to_string(), format!("{:.6}", o.seconds)])
            .expect("in-memory");
    }
    finish_csv(w)
}

pub fn summary_to_csv(summary: &[(Estimator, Option<BoxStats>)]) -> Vec<u8> {
    let mut w = csv_writer();
    w.write_record(["estimator", "median", "q1", "q3", "lo_whisker", "hi_whisker", "n_outliers"])
        .expect("in-memory");
    for (est, stats) in summary {
        let row = match stats {
            Some(s) => [
                est.name().to_string(),
                fmt_real(s.median),
                fmt_real(s.q1),
                fmt_real(s.q3),
                fmt_real(s.lo_whisker),
                fmt_real(s.hi_whisker),
                s.n_outliers.to_string(),
            ],
            None => {
                let nan = fmt_real(f64::NAN);
                [
                    est.name().to_string(),
                    nan.clone(),
                    nan.clone(),
                    nan.clone(),
                    nan.clone(),
                    nan,
                    "0".to_string(),
                ]
            }
        };
        w.write_record(&row).expect("in-memory");
    }
    finish_csv(w)
}

/// Long format, one row per tap: `a = a_{tap+1}`, `f = f_tap`,
/// `b = b_tap`, `c = c_{tap+1}`.
pub fn demo_to_csv(draws: &[DemoDraw]) -> Vec<u8> {
    let mut w = csv_writer();
    w.write_record(["draw", "tap", "a", "f", "b", "c", "unstable"]).expect("in-memory");
    for (d, draw) in draws.iter().enumerate() {
        for k in 0..draw.b.len() {
            w.write_record([
                d.to_string(),
                k.to_string(),
                fmt_real(draw.a[k]),
                fmt_real(draw.f[k]),
                fmt_real(draw.b[k]),
                fmt_real(draw.c[k]),
                bool_str(draw.unstable).to_string(),
            ])
            .expect("in-memory");
        }
    }
    finish_csv(w)
}
