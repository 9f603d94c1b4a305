use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use carmen_core::engine::{
    argmax, run_batch, run_network, select_modes, sensitivity_profile, BatchOutput, EngineConfig,
    ModePolicy,
};
use carmen_core::mac::{default_approx_depth, MacKind, MacMode};
use carmen_core::model::{
    calibrate_formats, load_manifest, read_inputs, read_labels, InputSet, Model, QuantizedModel,
};

use crate::args::{Mode, ModelArgs, Precision, ProfileArgs, RunArgs, SweepArgs};
use crate::report::{
    reduction_pct, Accuracy, ConfigEcho, CycleTotals, DepthTrend, LayerSensitivity, ProfileReport,
    RunReport, SweepCell, SweepReport,
};
use crate::{CliError, Result};

/// Environment variable naming the default report directory.
pub const REPORT_DIR_ENV: &str = "CARMEN_REPORT_DIR";

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| CliError::Read {
        path: path.display().to_string(),
        msg: e.to_string(),
    })
}

fn in_file<T>(path: &Path, r: carmen_core::Result<T>) -> Result<T> {
    r.map_err(|source| CliError::Parse {
        path: path.display().to_string(),
        source,
    })
}

fn load_model(args: &ModelArgs) -> Result<Model> {
    let text = String::from_utf8(read_file(&args.model)?).map_err(|_| CliError::Read {
        path: args.model.display().to_string(),
        msg: "not UTF-8 text".into(),
    })?;
    let blob = read_file(&args.weights)?;
    in_file(&args.model, load_manifest(&text, &blob))
}

fn load_inputs(path: &Path, limit: Option<usize>, model: &Model) -> Result<InputSet> {
    let set = in_file(path, read_inputs(&read_file(path)?))?;
    if set.dim != model.input_len() {
        return Err(CliError::Usage(format!(
            "`{}` holds {}-value samples but the model expects {}",
            path.display(),
            set.dim,
            model.input_len()
        )));
    }
    Ok(match limit {
        Some(0) => return Err(CliError::Usage("--limit must be at least 1".into())),
        Some(n) => set.take(n),
        None => set,
    })
}

/// Labels must cover the whole input file; `--limit` then trims both.
fn load_labels(path: &Path, total: usize, keep: usize) -> Result<Vec<usize>> {
    let text = String::from_utf8(read_file(path)?).map_err(|_| CliError::Read {
        path: path.display().to_string(),
        msg: "not UTF-8 text".into(),
    })?;
    let mut labels = in_file(path, read_labels(&text))?;
    if labels.len() != total {
        return Err(CliError::Usage(format!(
            "`{}` has {} labels for {total} inputs",
            path.display(),
            labels.len()
        )));
    }
    labels.truncate(keep);
    Ok(labels)
}

fn input_count(path: &Path) -> Result<usize> {
    Ok(in_file(path, read_inputs(&read_file(path)?))?.len())
}

fn engine_config(args: &ModelArgs, width: u32) -> Result<EngineConfig> {
    let mut cfg = EngineConfig::new(width);
    let acc = args.iters_accurate.unwrap_or(width);
    let approx = args
        .iters_approx
        .unwrap_or_else(|| default_approx_depth(acc).min(acc.saturating_sub(1)));
    cfg.mac =
        MacMode::new(MacKind::Accurate, acc, approx).map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

/// Run `f` on a pool of `threads` workers, or the global pool.
fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        Some(0) => Err(CliError::Usage("--threads must be at least 1".into())),
        #[cfg(feature = "parallel")]
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map(|pool| pool.install(f))
            .map_err(|e| CliError::Usage(format!("cannot start {n} threads: {e}"))),
        _ => Ok(f()),
    }
}

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn echo(
    command: &str,
    args: &ModelArgs,
    model: &Model,
    cfg: &EngineConfig,
    width: u32,
    samples: usize,
) -> ConfigEcho {
    ConfigEcho {
        command: command.into(),
        model: path_str(&args.model),
        model_name: model.name.clone(),
        weights: path_str(&args.weights),
        input: None,
        labels: None,
        calib: args.calib.as_deref().map(path_str),
        precision: if width == 8 {
            Precision::Fxp8
        } else {
            Precision::Fxp16
        }
        .name()
        .into(),
        width,
        mode: None,
        tau: None,
        metric: None,
        iters_accurate: cfg.mac.depth_accurate,
        iters_approx: cfg.mac.depth_approx,
        af_iters: cfg.af_depth,
        num_pes: cfg.num_pes,
        bank_depth: cfg.bank_depth,
        refill_cycles: cfg.refill_cycles,
        limit: args.limit,
        samples,
    }
}

/// Where a report goes: `--report`, else `$CARMEN_REPORT_DIR`, else the
/// working directory.
pub fn report_path(explicit: Option<&Path>, command: &str) -> PathBuf {
    explicit.map(Path::to_path_buf).unwrap_or_else(|| {
        std::env::var_os(REPORT_DIR_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("."))
            .join(format!("{command}-report.json"))
    })
}

/// Write via a temporary sibling and rename, so a report either exists
/// completely or not at all.
fn write_report<T: Serialize>(path: &Path, report: &T) -> Result<()> {
    let fail = |e: std::io::Error| CliError::Write {
        path: path_str(path),
        msg: e.to_string(),
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(fail)?;
    }
    let mut text = serde_json::to_string_pretty(report).expect("reports serialize");
    text.push('\n');
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    std::fs::write(&tmp, text).map_err(fail)?;
    std::fs::rename(&tmp, path).map_err(fail)
}

fn oracle_outputs(model: &Model, inputs: &InputSet) -> Result<Vec<Vec<f64>>> {
    Ok(inputs
        .iter()
        .map(|x| model.oracle_infer(x))
        .collect::<carmen_core::Result<_>>()?)
}

struct Scored {
    accuracy: Option<Accuracy>,
    agreement: f64,
    /// Correct predictions (labels) or oracle matches (no labels).
    hits: usize,
    errors: Vec<f64>,
}

fn score(batch: &BatchOutput, oracle: &[Vec<f64>], labels: Option<&[usize]>) -> Scored {
    let n = batch.runs.len();
    let preds = batch.predictions();
    let oracle_top: Vec<usize> = oracle.iter().map(|o| argmax(o)).collect();
    let agree = preds
        .iter()
        .zip(&oracle_top)
        .filter(|(a, b)| a == b)
        .count();
    let errors = batch
        .runs
        .iter()
        .zip(oracle)
        .map(|(r, o)| {
            r.output_f64()
                .iter()
                .zip(o)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        })
        .collect();
    let frac = |k: usize| k as f64 / n as f64;
    let (accuracy, hits) = match labels {
        Some(l) => {
            let fxp = preds.iter().zip(l).filter(|(a, b)| a == b).count();
            let orc = oracle_top.iter().zip(l).filter(|(a, b)| a == b).count();
            (Some(Accuracy::new(frac(fxp), frac(orc))), fxp)
        }
        None => (None, agree),
    };
    Scored {
        accuracy,
        agreement: frac(agree),
        hits,
        errors,
    }
}

fn output_digest(batch: &BatchOutput) -> String {
    let mut h = Sha256::new();
    for r in &batch.runs {
        for w in &r.output {
            h.update(w.raw().to_le_bytes());
        }
    }
    h.finalize().iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Cycle counts do not depend on data, so one sample per uniform policy
/// scaled by the batch size gives the batch totals.
fn cycle_totals(
    q: &QuantizedModel,
    sample: &[f32],
    cfg: &EngineConfig,
    n: usize,
    policy: u64,
) -> Result<CycleTotals> {
    let layers = q.layers.len();
    let acc = run_network(
        q,
        sample,
        &ModePolicy::uniform(MacKind::Accurate, layers),
        cfg,
    )?
    .stats;
    let apx = run_network(
        q,
        sample,
        &ModePolicy::uniform(MacKind::Approximate, layers),
        cfg,
    )?
    .stats;
    let n = n as u64;
    Ok(CycleTotals {
        accurate: acc.total_cycles * n,
        approximate: apx.total_cycles * n,
        reduction_pct: reduction_pct(acc.total_cycles, apx.total_cycles),
        mac_accurate: acc.mac_cycles * n,
        mac_approximate: apx.mac_cycles * n,
        mac_reduction_pct: reduction_pct(acc.mac_cycles, apx.mac_cycles),
        policy,
    })
}

fn pct(v: f64) -> String {
    format!("{:.2}%", 100.0 * v)
}

/// Evaluate a batch under a fixed or sensitivity-derived policy.
pub fn cmd_run(args: &RunArgs) -> Result<(RunReport, PathBuf)> {
    let m = &args.model;
    let model = load_model(m)?;
    let inputs = load_inputs(&args.input, m.limit, &model)?;
    let labels = match &args.labels {
        Some(p) => Some(load_labels(p, input_count(&args.input)?, inputs.len())?),
        None => None,
    };
    let calib = match &m.calib {
        Some(p) => load_inputs(p, None, &model)?,
        None => inputs.clone(),
    };
    if args.mode != Mode::Auto && args.tau.is_some() {
        return Err(CliError::Usage("--tau only applies to --mode auto".into()));
    }
    let width = m.precision.width();
    let q = calibrate_formats(&model, &calib, width)?;
    let cfg = engine_config(m, width)?;
    let metric = args.metric.into();

    let (policy, sensitivities, batch) = with_threads(m.threads, || -> Result<_> {
        let (policy, sens) = match args.mode.kind() {
            Some(kind) => (ModePolicy::from_hints(&q, kind), None),
            None => {
                let tau = args
                    .tau
                    .ok_or_else(|| CliError::Usage("--mode auto needs --tau".into()))?;
                let s = sensitivity_profile(&q, &calib, &cfg, metric)?;
                (select_modes(&s, tau)?, Some(s))
            }
        };
        let batch = run_batch(&q, &inputs, &policy, &cfg)?;
        Ok((policy, sens, batch))
    })??;

    let oracle = oracle_outputs(&model, &inputs)?;
    let scored = score(&batch, &oracle, labels.as_deref());
    let cycles = cycle_totals(
        &q,
        inputs.sample(0),
        &cfg,
        inputs.len(),
        batch.stats.total_cycles,
    )?;
    let mut config = echo("run", m, &model, &cfg, width, inputs.len());
    config.input = Some(path_str(&args.input));
    config.labels = args.labels.as_deref().map(path_str);
    config.mode = Some(args.mode.name().into());
    config.tau = args.tau;
    config.metric = sensitivities.as_ref().map(|_| metric);
    let report = RunReport {
        generated_unix: now_unix(),
        config,
        policy,
        sensitivities,
        accuracy: scored.accuracy,
        oracle_agreement: scored.agreement,
        cycles,
        max_af_error: batch.stats.max_af_error.clone(),
        max_output_error: scored.errors.iter().copied().fold(0.0, f64::max),
        output_sha256: output_digest(&batch),
        stats: batch.stats,
    };
    let path = report_path(m.report.as_deref(), "run");
    write_report(&path, &report)?;
    if !m.quiet {
        print!("{}", run_table(&report));
    }
    Ok((report, path))
}

fn run_table(r: &RunReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{} {} mode={} samples={}",
        r.config.model_name,
        r.config.precision,
        r.policy_label(),
        r.config.samples
    );
    let _ = writeln!(
        s,
        "{:>5} {:>11} {:>10} {:>10} {:>8} {:>8} {:>8} {:>7}",
        "layer", "mode", "mac", "bank", "af", "pool", "norm", "util"
    );
    for (i, l) in r.stats.layers.iter().enumerate() {
        let _ = writeln!(
            s,
            "{i:>5} {:>11} {:>10} {:>10} {:>8} {:>8} {:>8} {:>7}",
            l.mode.to_string(),
            l.mac_cycles,
            l.bank_cycles,
            l.af_cycles,
            l.pool_cycles,
            l.norm_cycles,
            pct(l.pe_utilization)
        );
    }
    if let Some(a) = r.accuracy {
        let _ = writeln!(
            s,
            "top1 fxp {}  oracle {}  delta {}",
            pct(a.top1_fxp),
            pct(a.top1_oracle),
            pct(a.delta)
        );
    }
    let c = &r.cycles;
    let _ = writeln!(
        s,
        "cycles {}  (accurate {}, approximate {}, -{:.2}%; MAC only -{:.2}%)",
        c.policy, c.accurate, c.approximate, c.reduction_pct, c.mac_reduction_pct
    );
    let _ = writeln!(
        s,
        "oracle agreement {}  max output error {:.3e}  saturations {}",
        pct(r.oracle_agreement),
        r.max_output_error,
        r.stats.saturation_count
    );
    s
}

impl RunReport {
    fn policy_label(&self) -> String {
        self.policy
            .modes
            .iter()
            .map(|k| if *k == MacKind::Accurate { 'A' } else { 'a' })
            .collect()
    }
}

/// Fraction of samples whose error is non-increasing along `cells`
/// (depths ascending).
pub fn monotone_samples(cells: &[&SweepCell]) -> usize {
    let n = cells.first().map_or(0, |c| c.sample_errors.len());
    (0..n)
        .filter(|&i| {
            cells
                .windows(2)
                .all(|w| w[1].sample_errors[i] <= w[0].sample_errors[i])
        })
        .count()
}

/// Accuracy (or oracle agreement) over a (precision x depth) grid.
pub fn cmd_sweep(args: &SweepArgs) -> Result<(SweepReport, PathBuf)> {
    let m = &args.model;
    if args.depths.is_empty() && args.precisions.is_empty() {
        return Err(CliError::Usage(
            "empty sweep grid: give --depths and/or --precisions".into(),
        ));
    }
    let precisions = if args.precisions.is_empty() {
        vec![m.precision]
    } else {
        args.precisions.clone()
    };
    let model = load_model(m)?;
    let inputs = load_inputs(&args.input, m.limit, &model)?;
    let labels = match &args.labels {
        Some(p) => Some(load_labels(p, input_count(&args.input)?, inputs.len())?),
        None => None,
    };
    let calib = match &m.calib {
        Some(p) => load_inputs(p, None, &model)?,
        None => inputs.clone(),
    };
    let oracle = oracle_outputs(&model, &inputs)?;
    let n = inputs.len();

    let mut cells = Vec::new();
    let mut trends = Vec::new();
    let mut first_cfg = None;
    for &p in &precisions {
        let width = p.width();
        let q = calibrate_formats(&model, &calib, width)?;
        let depths = if args.depths.is_empty() {
            vec![width]
        } else {
            args.depths.clone()
        };
        let mut hits = Vec::new();
        let start = cells.len();
        for &d in &depths {
            let mut cfg = engine_config(m, width)?;
            cfg.mac = MacMode::with_accurate_depth(MacKind::Accurate, d)
                .map_err(|e| CliError::Usage(e.to_string()))?;
            cfg.af_depth = d;
            first_cfg.get_or_insert(cfg);
            let policy = ModePolicy::uniform(MacKind::Accurate, q.layers.len());
            let batch = with_threads(m.threads, || run_batch(&q, &inputs, &policy, &cfg))??;
            let s = score(&batch, &oracle, labels.as_deref());
            hits.push((d, s.hits));
            cells.push(SweepCell {
                precision: p.name().into(),
                width,
                depth: d,
                depth_approx: cfg.mac.depth_approx,
                accuracy: s.accuracy,
                oracle_agreement: s.agreement,
                total_cycles: batch.stats.total_cycles,
                mac_cycles: batch.stats.mac_cycles,
                max_output_error: s.errors.iter().copied().fold(0.0, f64::max),
                mean_output_error: s.errors.iter().sum::<f64>() / n as f64,
                sample_errors: s.errors,
            });
        }
        let mut order: Vec<&SweepCell> = cells[start..].iter().collect();
        order.sort_by_key(|c| c.depth);
        order.dedup_by_key(|c| c.depth);
        if order.len() >= 2 {
            hits.sort_unstable();
            hits.dedup_by_key(|h| h.0);
            let mono = monotone_samples(&order);
            trends.push(DepthTrend {
                precision: p.name().into(),
                depths: order.iter().map(|c| c.depth).collect(),
                samples: n,
                monotone_samples: mono,
                monotone_fraction: mono as f64 / n as f64,
                accuracy_monotone: hits.windows(2).all(|w| w[1].1 + 1 >= w[0].1),
            });
        }
    }
    let cfg = first_cfg.expect("grid is non-empty");
    let mut config = echo("sweep", m, &model, &cfg, precisions[0].width(), n);
    config.input = Some(path_str(&args.input));
    config.labels = args.labels.as_deref().map(path_str);
    config.mode = Some(Mode::Accurate.name().into());
    let report = SweepReport {
        generated_unix: now_unix(),
        config,
        cells,
        trends,
    };
    let path = report_path(m.report.as_deref(), "sweep");
    write_report(&path, &report)?;
    if !m.quiet {
        print!("{}", sweep_table(&report));
    }
    Ok((report, path))
}

fn sweep_table(r: &SweepReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:>9} {:>6} {:>8} {:>8} {:>8} {:>12} {:>10} {:>10}",
        "precision", "depth", "top1", "oracle", "agree", "cycles", "max err", "mean err"
    );
    for c in &r.cells {
        let (top, orc) = c.accuracy.map_or(("-".into(), "-".into()), |a| {
            (pct(a.top1_fxp), pct(a.top1_oracle))
        });
        let _ = writeln!(
            s,
            "{:>9} {:>6} {:>8} {:>8} {:>8} {:>12} {:>10.3e} {:>10.3e}",
            c.precision,
            c.depth,
            top,
            orc,
            pct(c.oracle_agreement),
            c.total_cycles,
            c.max_output_error,
            c.mean_output_error
        );
    }
    for t in &r.trends {
        let _ = writeln!(
            s,
            "{}: error non-increasing in depth for {}/{} samples ({}); accuracy monotone: {}",
            t.precision,
            t.monotone_samples,
            t.samples,
            pct(t.monotone_fraction),
            t.accuracy_monotone
        );
    }
    s
}

/// Rank layers by their sensitivity to approximate MACs on the
/// calibration set.
pub fn cmd_profile(args: &ProfileArgs) -> Result<(ProfileReport, PathBuf)> {
    let m = &args.model;
    let calib_path = m
        .calib
        .as_deref()
        .ok_or_else(|| CliError::Usage("profile needs --calib".into()))?;
    let model = load_model(m)?;
    let calib = load_inputs(calib_path, m.limit, &model)?;
    let width = m.precision.width();
    let q = calibrate_formats(&model, &calib, width)?;
    let cfg = engine_config(m, width)?;
    let metric = args.metric.into();
    let sens = with_threads(m.threads, || sensitivity_profile(&q, &calib, &cfg, metric))??;
    let policy = args.tau.map(|t| select_modes(&sens, t)).transpose()?;
    let mut ranked: Vec<LayerSensitivity> = sens
        .iter()
        .zip(&q.layers)
        .enumerate()
        .map(|(i, (&s, l))| LayerSensitivity {
            layer: i,
            activation: l.spec.activation,
            fan_in: l.spec.geometry.fan_in(),
            sensitivity: s,
        })
        .collect();
    ranked.sort_by(|a, b| b.sensitivity.total_cmp(&a.sensitivity));
    let mut config = echo("profile", m, &model, &cfg, width, calib.len());
    config.tau = args.tau;
    config.metric = Some(metric);
    let report = ProfileReport {
        generated_unix: now_unix(),
        config,
        ranked,
        policy,
    };
    let path = report_path(m.report.as_deref(), "profile");
    write_report(&path, &report)?;
    if !m.quiet {
        print!("{}", profile_table(&report));
    }
    Ok((report, path))
}

fn profile_table(r: &ProfileReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:>5} {:>8} {:>7} {:>12} {:>11}",
        "layer", "af", "fan_in", "sensitivity", "policy"
    );
    for l in &r.ranked {
        let mode = r
            .policy
            .as_ref()
            .map_or("-".to_string(), |p| p.modes[l.layer].to_string());
        let _ = writeln!(
            s,
            "{:>5} {:>8} {:>7} {:>12.4e} {:>11}",
            l.layer,
            l.activation.to_string(),
            l.fan_in,
            l.sensitivity,
            mode
        );
    }
    s
}
