//! CSV and manifest writers. Floats are written in shortest round-trip
//! exponent form so identical runs give identical bytes.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::Command;

use super::{
    descent_to_string, mean_std, parse_descent, Baseline, DataSource, EtaRule, ExperimentSpec, ModelChoice,
    RunOutput, Sweep,
};
use crate::bounds::CorollaryForm;
use crate::error::{Error, Result};
use crate::scenario::{load_config_str, SystemConfig};

pub fn fmt_f(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:e}")
    }
}

fn writer(dir: &Path, name: &str) -> Result<csv::Writer<std::fs::File>> {
    let p = dir.join(name);
    let f = std::fs::File::create(&p).map_err(|e| Error::io(&p, e))?;
    Ok(csv::Writer::from_writer(f))
}

pub fn write_outputs(out: &RunOutput, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let base = out.spec.baseline.name();
    let sweep = out.spec.sweep.kind();

    let mut h = writer(dir, "history.csv")?;
    h.write_record([
        "baseline", "sweep", "value", "trial", "round", "loss", "test_acc", "grad_norm2", "e1_norm2", "e2_norm2",
        "mu", "closed_form", "bound_rhs",
    ])?;
    let mut s = writer(dir, "summary.csv")?;
    s.write_record([
        "baseline", "sweep", "value", "trials_ok", "trials_failed", "acc_mean", "acc_std", "loss_mean",
        "loss_std", "d_mean", "sca_obj_mean", "corollary_limit",
    ])?;
    let mut b = writer(dir, "bounds.csv")?;
    b.write_record(["baseline", "sweep", "value", "t", "lhs_mc", "lhs_se", "rhs_bound", "d", "upsilon"])?;
    let mut tr = if out.spec.traces {
        let mut w = writer(dir, "sca_trace.csv")?;
        w.write_record(["baseline", "sweep", "value", "trial", "iter", "obj", "rel_change"])?;
        Some(w)
    } else {
        None
    };

    for p in &out.points {
        let v = fmt_f(p.value);
        for t in &p.trials {
            for r in &t.history.rows {
                h.write_record([
                    base.to_string(),
                    sweep.to_string(),
                    v.clone(),
                    t.trial.to_string(),
                    r.round.to_string(),
                    fmt_f(r.loss),
                    fmt_f(r.test_acc),
                    fmt_f(r.grad_norm2),
                    fmt_f(r.e1_norm2),
                    fmt_f(r.e2_norm2),
                    fmt_f(r.mu),
                    fmt_f(r.closed_form),
                    fmt_f(r.bound_rhs),
                ])?;
            }
            if let Some(w) = tr.as_mut() {
                for row in &t.sca_trace {
                    w.write_record([
                        base.to_string(),
                        sweep.to_string(),
                        v.clone(),
                        t.trial.to_string(),
                        row.iter.to_string(),
                        fmt_f(row.obj),
                        fmt_f(row.rel_change),
                    ])?;
                }
            }
        }
        let m = &p.summary;
        s.write_record([
            base.to_string(),
            sweep.to_string(),
            v.clone(),
            m.trials_ok.to_string(),
            m.trials_failed.to_string(),
            fmt_f(m.acc_mean),
            fmt_f(m.acc_std),
            fmt_f(m.loss_mean),
            fmt_f(m.loss_std),
            fmt_f(m.d_mean),
            fmt_f(m.sca_obj_mean),
            fmt_f(m.corollary_mean),
        ])?;

        let with: Vec<_> = p.trials.iter().filter_map(|t| t.bounds.as_ref().map(|bd| (t, bd))).collect();
        if let Some((_, first)) = with.first() {
            let n = with.len() as f64;
            let d = with.iter().map(|(t, _)| t.d).sum::<f64>() / n;
            let ups = with.iter().map(|(_, bd)| bd.upsilon).sum::<f64>() / n;
            for step in 0..first.lhs.len() {
                let lhs: Vec<f64> = with.iter().map(|(_, bd)| bd.lhs[step]).collect();
                let (lm, ls) = mean_std(&lhs);
                let rhs = with.iter().map(|(_, bd)| bd.rhs[step]).sum::<f64>() / n;
                b.write_record([
                    base.to_string(),
                    sweep.to_string(),
                    v.clone(),
                    step.to_string(),
                    fmt_f(lm),
                    fmt_f(ls / n.sqrt()),
                    fmt_f(rhs),
                    fmt_f(d),
                    fmt_f(ups),
                ])?;
            }
        }
    }
    h.flush().map_err(|e| Error::io(&dir.join("history.csv"), e))?;
    s.flush().map_err(|e| Error::io(&dir.join("summary.csv"), e))?;
    b.flush().map_err(|e| Error::io(&dir.join("bounds.csv"), e))?;
    if let Some(mut w) = tr {
        w.flush().map_err(|e| Error::io(&dir.join("sca_trace.csv"), e))?;
    }
    let mp = dir.join("manifest.txt");
    std::fs::write(&mp, manifest_text(out)).map_err(|e| Error::io(&mp, e))
}

fn git_describe() -> String {
    Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .current_dir(env!("CARGO_MANIFEST_DIR"))
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .unwrap_or_else(|| "unknown".into())
}

fn quote(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}

fn corollary_name(c: CorollaryForm) -> &'static str {
    match c {
        CorollaryForm::Printed => "printed",
        CorollaryForm::Series => "series",
    }
}

/// TOML manifest: `[run]` and `[config]` suffice to replay the run;
/// `[provenance]` is informational.
pub fn manifest_text(out: &RunOutput) -> String {
    let sp = &out.spec;
    let mut m = String::from("# otafl run manifest\n[run]\n");
    let mut kv = |k: &str, v: &str| {
        let _ = writeln!(m, "{k} = {}", quote(v));
    };
    kv("name", &sp.name);
    kv("baseline", sp.baseline.name());
    kv("data_mode", &sp.data_mode.to_string());
    kv("descent", &descent_to_string(sp.descent));
    kv("sweep", &sp.sweep.to_string());
    kv("trials", &sp.trials.to_string());
    match &sp.data {
        DataSource::Mnist { images, labels, limit } => {
            kv("data", "mnist");
            kv("mnist_images", &images.to_string_lossy());
            kv("mnist_labels", &labels.to_string_lossy());
            kv("mnist_limit", &limit.map_or("all".into(), |l| l.to_string()));
        }
        DataSource::Synthetic {
            classes,
            dim,
            per_class,
            margin,
        } => {
            kv("data", "synthetic");
            kv("synthetic", &format!("{classes}:{dim}:{per_class}:{margin}"));
        }
    }
    kv("model", &sp.model.to_string());
    kv("eta", &sp.eta.to_string());
    kv("bounds", &sp.bounds.to_string());
    kv("corollary_form", corollary_name(sp.corollary_form));
    kv("test_frac", &sp.test_frac.to_string());
    kv("traces", &sp.traces.to_string());
    m.push_str("\n[provenance]\n");
    let _ = writeln!(m, "git_describe = {}", quote(&git_describe()));
    let _ = writeln!(m, "seed = {}", out.cfg.seed);
    let _ = writeln!(m, "wall_clock_s = {:.3}", out.wall_clock_s);
    let _ = writeln!(
        m,
        "module_versions = {}",
        quote(&format!(
            "scenario,channel,ota,fl,bounds,sca,harness = {}",
            env!("CARGO_PKG_VERSION")
        ))
    );
    m.push_str("\n[config]\n");
    m.push_str(&out.cfg.to_flat());
    m
}

fn get<'a>(t: &'a toml::Table, k: &str) -> Result<&'a str> {
    t.get(k)
        .and_then(|v| v.as_str())
        .ok_or_else(|| Error::Config(format!("manifest: missing run.{k}")))
}

fn parse<T: std::str::FromStr>(t: &toml::Table, k: &str) -> Result<T> {
    let raw = get(t, k)?;
    raw.parse().map_err(|_| Error::Config(format!("manifest: bad run.{k} `{raw}`")))
}

/// Read back the experiment spec and configuration written by [`manifest_text`].
pub fn load_manifest(path: &Path) -> Result<(ExperimentSpec, SystemConfig)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::Config(format!("manifest: {e}")))?;
    let run = doc
        .get("run")
        .and_then(|v| v.as_table())
        .ok_or_else(|| Error::Config("manifest: missing [run]".into()))?;
    let cfg_table = doc
        .get("config")
        .and_then(|v| v.as_table())
        .ok_or_else(|| Error::Config("manifest: missing [config]".into()))?;
    let cfg = load_config_str(&cfg_table.to_string(), &[])?;
    let data = match get(run, "data")? {
        "mnist" => DataSource::Mnist {
            images: PathBuf::from(get(run, "mnist_images")?),
            labels: PathBuf::from(get(run, "mnist_labels")?),
            limit: match get(run, "mnist_limit")? {
                "all" => None,
                _ => Some(parse(run, "mnist_limit")?),
            },
        },
        "synthetic" => {
            let raw = get(run, "synthetic")?;
            let p: Vec<&str> = raw.split(':').collect();
            let bad = || Error::Config(format!("manifest: bad run.synthetic `{raw}`"));
            if p.len() != 4 {
                return Err(bad());
            }
            DataSource::Synthetic {
                classes: p[0].parse().map_err(|_| bad())?,
                dim: p[1].parse().map_err(|_| bad())?,
                per_class: p[2].parse().map_err(|_| bad())?,
                margin: p[3].parse().map_err(|_| bad())?,
            }
        }
        other => return Err(Error::Config(format!("manifest: unknown data `{other}`"))),
    };
    let spec = ExperimentSpec {
        name: get(run, "name")?.to_string(),
        baseline: parse::<Baseline>(run, "baseline")?,
        data_mode: parse(run, "data_mode")?,
        descent: parse_descent(get(run, "descent")?)?,
        sweep: parse::<Sweep>(run, "sweep")?,
        trials: parse(run, "trials")?,
        out_dir: None,
        data,
        model: parse::<ModelChoice>(run, "model")?,
        eta: parse::<EtaRule>(run, "eta")?,
        bounds: parse(run, "bounds")?,
        corollary_form: parse(run, "corollary_form")?,
        test_frac: parse(run, "test_frac")?,
        traces: parse(run, "traces")?,
    };
    spec.validate()?;
    Ok((spec, cfg))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format_is_round_trip() {
        for x in [0.1, 1e-20, 123456.789, -3.0, 0.0] {
            assert_eq!(fmt_f(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(fmt_f(f64::NAN), "nan");
        assert_eq!(fmt_f(f64::NEG_INFINITY), "-inf");
    }
}
