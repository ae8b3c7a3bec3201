use std::collections::HashMap;
use std::path::PathBuf;

use memometer::growth::{growth_report, sample_seed};
use memometer::oracle::{mc_frequencies, spearman, toy2d, Assign};
use memometer::stats::{carlini_metric, histogram, rank_values, ttest, TTestKind};
use memometer::{Dataset, Error, GrowthConfig, GrowthSeries, PixelLayout, ValueRange};
use clap::Parser;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde_json::json;

use crate::args::*;
use crate::context::Context;
use crate::io::{csv_bytes, num};
use crate::manifest::RunManifest;
use crate::{svg, Cli, Failure};

pub fn dispatch(cli: Cli, recorded: Vec<String>) -> Result<(), Failure> {
    match cli.command {
        Command::Rerun(r) => rerun(&cli.global, &r),
        command => execute(Context::new(&cli.global, recorded)?, command),
    }
}

fn execute(ctx: Context, command: Command) -> Result<(), Failure> {
    match command {
        Command::Analyze(a) => analyze(ctx, &a),
        Command::Sweep(a) => sweep(ctx, &a),
        Command::Toy2d(a) => toy(ctx, &a),
        Command::Oracle(a) => oracle(ctx, &a),
        Command::Rank(a) => rank(ctx, &a),
        Command::Ttest(a) => ttest_cmd(ctx, &a),
        Command::Carlini(a) => carlini(ctx, &a),
        Command::Split(a) => split(ctx, &a),
        Command::Synth(a) => synth(ctx, &a),
        Command::Rerun(_) => Err(Failure::Config("a manifest cannot record a rerun".into())),
    }
}

/// Replays a manifest from its recorded working directory, writing into
/// `--out` as resolved against the current one.
fn rerun(global: &GlobalArgs, r: &RerunArgs) -> Result<(), Failure> {
    let manifest = RunManifest::load(&r.manifest)?;
    let out = std::path::absolute(&global.out)
        .map_err(|e| Failure::Config(format!("output directory {}: {e}", global.out.display())))?;
    std::env::set_current_dir(&manifest.cwd)
        .map_err(|e| Failure::Data(format!("recorded working directory {}: {e}", manifest.cwd.display())))?;
    let argv = std::iter::once("memometer".to_string()).chain(manifest.args.iter().cloned());
    let recorded = Cli::try_parse_from(argv)
        .map_err(|e| Failure::Config(format!("manifest arguments do not parse: {e}")))?;
    let ctx = Context::replay(manifest, &recorded.global, out)?;
    execute(ctx, recorded.command)
}

fn warn(msg: impl AsRef<str>) {
    eprintln!("memometer: warning: {}", msg.as_ref());
}

fn check_dims(a: &Dataset, b: &Dataset, what: &str) -> Result<(), Failure> {
    if a.dim() != b.dim() {
        return Err(Failure::Data(format!("{what}: D={} versus D={}", a.dim(), b.dim())));
    }
    Ok(())
}

fn growth_header(checkpoints: &[usize]) -> Vec<String> {
    std::iter::once("id".to_string())
        .chain(checkpoints.iter().map(|k| format!("log_l_{k}")))
        .collect()
}

fn growth_rows<'a>(series: &'a [GrowthSeries], checkpoints: &'a [usize]) -> impl Iterator<Item = Vec<String>> + 'a {
    series.iter().map(move |s| {
        std::iter::once(s.target_id.clone())
            .chain(checkpoints.iter().map(|&k| num(s.at_step(k).expect("checkpoint within series"))))
            .collect()
    })
}

/// Writes `failures.csv` and returns the failure to exit with, if any.
fn write_failures(ctx: &mut Context, failures: &[(String, String)]) -> Result<Option<Failure>, Failure> {
    if failures.is_empty() {
        return Ok(None);
    }
    let rows = failures.iter().map(|(id, e)| vec![id.clone(), e.clone()]);
    ctx.write("failures.csv", &csv_bytes(&["id", "error"], rows))?;
    for (id, e) in failures {
        warn(format!("{id}: {e}"));
    }
    Ok(Some(Failure::Numerical(format!(
        "{} sample(s) failed; see failures.csv",
        failures.len()
    ))))
}

fn done(ctx: Context, command: &str, failure: Option<Failure>) -> Result<(), Failure> {
    ctx.finish(command)?;
    failure.map_or(Ok(()), Err)
}

fn checkpoints(ctx: &Context) -> Result<Vec<usize>, Failure> {
    let steps = ctx.config.growth.steps_for(&ctx.config.schedule);
    let c = ctx.config.output.checkpoints_for(steps);
    if c.is_empty() {
        return Err(Failure::Config(format!("no checkpoint lies within 1..={steps}")));
    }
    Ok(c)
}

fn analyze(mut ctx: Context, a: &AnalyzeArgs) -> Result<(), Failure> {
    ctx.apply_schedule(&a.schedule)?;
    ctx.apply_growth(&a.growth);
    let train = match a.train.is_empty() {
        true => None,
        false => Some(ctx.load("train", &a.train, &a.data, true)?),
    };
    let targets = match (a.targets.is_empty(), &train) {
        (false, _) => ctx.load("targets", &a.targets, &a.data, false)?,
        (true, Some(t)) => t.clone(),
        (true, None) => return Err(Failure::Config("give --train, --targets or both".into())),
    };
    if let Some(t) = &train {
        check_dims(t, &targets, "training and target data differ in dimension")?;
    }
    ctx.validate(Some(targets.dim()))?;
    let checkpoints = checkpoints(&ctx)?;
    let provider = ctx.provider(train.as_ref(), targets.dim())?;
    let report = growth_report(&targets, &provider, &ctx.config.schedule, &ctx.config.growth)?;
    provider.warn_dropped_mass();

    let header = growth_header(&checkpoints);
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    ctx.write("growth.csv", &csv_bytes(&header, growth_rows(&report.series, &checkpoints)))?;
    let timing = report.wall_seconds.iter().map(|(id, s)| vec![id.clone(), num(*s)]);
    ctx.write("timing.csv", &csv_bytes(&["id", "wall_seconds"], timing))?;
    let failures: Vec<_> = report.failures.iter().map(|(id, e)| (id.clone(), e.to_string())).collect();
    let failure = write_failures(&mut ctx, &failures)?;
    done(ctx, "analyze", failure)
}

/// Direction of a sequence of p-values.
fn trend(values: &[f64]) -> &'static str {
    let pairs: Vec<_> = values.windows(2).map(|w| (w[0], w[1])).collect();
    if values.iter().any(|v| v.is_nan()) {
        "undefined"
    } else if pairs.is_empty() || pairs.iter().all(|(a, b)| a == b) {
        "constant"
    } else if pairs.iter().all(|(a, b)| b <= a) {
        "decreasing"
    } else if pairs.iter().all(|(a, b)| b >= a) {
        "increasing"
    } else {
        "mixed"
    }
}

fn sweep(mut ctx: Context, a: &SweepArgs) -> Result<(), Failure> {
    ctx.apply_schedule(&a.schedule)?;
    ctx.apply_growth(&a.growth);
    if a.student {
        ctx.config.stats.ttest = TTestKind::Student;
    }
    if a.cohort_a.is_empty() || a.cohort_b.is_empty() {
        return Err(Failure::Config("sweep needs --cohort-a and --cohort-b".into()));
    }
    let cohort_a = ctx.load("cohort_a", &a.cohort_a, &a.data, false)?;
    let cohort_b = ctx.load("cohort_b", &a.cohort_b, &a.data, false)?;
    check_dims(&cohort_a, &cohort_b, "cohorts differ in dimension")?;
    let train = if a.train.is_empty() {
        if a.data.hflip {
            cohort_a.augment_hflip()?
        } else {
            cohort_a.clone()
        }
    } else {
        ctx.load("train", &a.train, &a.data, true)?
    };
    check_dims(&train, &cohort_a, "training data and cohorts differ in dimension")?;
    ctx.validate(None)?;
    let dim = cohort_a.dim();
    let mut axes = a.axes.clone();
    axes.sort_unstable();
    axes.dedup();
    let mut sigmas = a.sigmas.clone();
    sigmas.sort_by(f64::total_cmp);
    sigmas.dedup();
    let usable: Vec<usize> = axes.iter().copied().filter(|&n| n >= 1 && n <= dim).collect();
    for n in axes.iter().filter(|n| !usable.contains(n)) {
        warn(format!("skipping N={n}: it must lie in 1..={dim}"));
    }
    if usable.is_empty() || sigmas.is_empty() {
        return Err(Failure::Config("the sweep grid is empty".into()));
    }
    let checkpoints = checkpoints(&ctx)?;
    let provider = ctx.provider(Some(&train), dim)?;
    let kind = ctx.config.stats.ttest;

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    // p-values keyed by (N index, sigma index, checkpoint index).
    let mut p = vec![vec![vec![f64::NAN; checkpoints.len()]; sigmas.len()]; usable.len()];
    for (ni, &n) in usable.iter().enumerate() {
        for (si, &sigma) in sigmas.iter().enumerate() {
            let cfg = GrowthConfig {
                num_axes: n,
                sphere_radius: sigma,
                ..ctx.config.growth
            };
            cfg.validate(dim, &ctx.config.schedule)?;
            let ra = growth_report(&cohort_a, &provider, &ctx.config.schedule, &cfg)?;
            let rb = growth_report(&cohort_b, &provider, &ctx.config.schedule, &cfg)?;
            for (id, e) in ra.failures.iter().chain(&rb.failures) {
                failures.push((id.clone(), format!("N={n}, sigma={sigma}: {e}")));
            }
            for (ki, &step) in checkpoints.iter().enumerate() {
                let at = |r: &memometer::GrowthReport| -> Vec<f64> {
                    r.series.iter().filter_map(|s| s.at_step(step)).collect()
                };
                let (va, vb) = (at(&ra), at(&rb));
                let (pv, ma, mb) = match ttest(&va, &vb, kind) {
                    Ok(t) => (t.p_value, t.mean_a, t.mean_b),
                    Err(e) => {
                        warn(format!("N={n}, sigma={sigma}, step={step}: {e}"));
                        (f64::NAN, f64::NAN, f64::NAN)
                    }
                };
                p[ni][si][ki] = pv;
                rows.push(vec![n.to_string(), num(sigma), step.to_string(), num(pv), num(ma), num(mb)]);
            }
        }
    }
    provider.warn_dropped_mass();
    ctx.write(
        "sweep.csv",
        &csv_bytes(&["N", "sigma", "step", "p", "mean_a", "mean_b"], rows),
    )?;

    let joined = |pairs: Vec<(String, f64)>| pairs.iter().map(|(k, v)| format!("{k}:{}", num(*v))).collect::<Vec<_>>().join(";");
    let mut trends = Vec::new();
    for (si, &sigma) in sigmas.iter().enumerate() {
        for (ki, &step) in checkpoints.iter().enumerate() {
            let seq: Vec<f64> = (0..usable.len()).map(|ni| p[ni][si][ki]).collect();
            let labelled = usable.iter().map(|n| n.to_string()).zip(seq.iter().copied()).collect();
            trends.push(vec!["N".into(), String::new(), num(sigma), step.to_string(), trend(&seq).into(), joined(labelled)]);
        }
    }
    for (ni, &n) in usable.iter().enumerate() {
        for (si, &sigma) in sigmas.iter().enumerate() {
            let seq = &p[ni][si];
            let labelled = checkpoints.iter().map(|k| k.to_string()).zip(seq.iter().copied()).collect();
            trends.push(vec!["step".into(), n.to_string(), num(sigma), String::new(), trend(seq).into(), joined(labelled)]);
        }
    }
    ctx.write(
        "sweep_trends.csv",
        &csv_bytes(&["over", "N", "sigma", "step", "trend", "p_values"], trends),
    )?;
    let failure = write_failures(&mut ctx, &failures)?;
    done(ctx, "sweep", failure)
}

fn toy(mut ctx: Context, a: &ToyArgs) -> Result<(), Failure> {
    ctx.apply_schedule(&a.schedule)?;
    let toy = &mut ctx.config.oracle.toy;
    if let Some(n) = a.samples {
        toy.samples = n;
        toy.centers = None;
    }
    if let Some(n) = a.ring_points {
        toy.ring_points = n;
    }
    if let Some(r) = a.ring_radius {
        toy.ring_radius = r;
    }
    if let Some(m) = a.method {
        toy.method = m.into();
    }
    if a.every == 0 {
        return Err(Failure::Config("--every must be at least 1".into()));
    }
    ctx.validate(None)?;
    let r = toy2d(&ctx.config.oracle.toy, &ctx.config.schedule)?;
    let n = r.centers.len();
    let last = r.knots.len() - 1;
    let mut rows = Vec::new();
    for (k, (_, knot)) in r.knots.iter().enumerate() {
        if k % a.every != 0 && k != last {
            continue;
        }
        for i in 0..n {
            for j in 0..r.ring_points {
                let row = knot.row(i * r.ring_points + j);
                rows.push(vec![i.to_string(), j.to_string(), k.to_string(), num(row[0]), num(row[1])]);
            }
        }
    }
    ctx.write(
        "toy2d.csv",
        &csv_bytes(&["sample_index", "ring_index", "step", "x", "y"], rows),
    )?;
    let m: Vec<f64> = r.knots.iter().map(|(m, _)| *m).collect();
    ctx.write_json(
        "toy2d.json",
        json!({
            "centers": r.centers,
            "steps": last,
            "m_start": m[0],
            "m_end": m[last],
            "disjoint": r.disjoint(),
            "overlapping_pairs": r.overlapping_pairs,
            "mean_final_radius": r.mean_final_radius,
            "predicted_radius": r.predicted_radius,
            "bisector": r.bisector,
        }),
    )?;
    if a.svg {
        let first = &r.knots[0].1;
        let groups: Vec<Vec<Vec<[f64; 2]>>> = (0..n)
            .map(|i| {
                let start = (0..r.ring_points)
                    .map(|j| {
                        let row = first.row(i * r.ring_points + j);
                        [row[0], row[1]]
                    })
                    .collect();
                vec![start, r.final_ring(i)]
            })
            .collect();
        ctx.write("toy2d.svg", svg::polygons(&groups).as_bytes())?;
    }
    if !r.disjoint() {
        warn(format!("final rings overlap: {:?}", r.overlapping_pairs));
    }
    done(ctx, "toy2d", None)
}

fn oracle(mut ctx: Context, a: &OracleArgs) -> Result<(), Failure> {
    ctx.apply_schedule(&a.schedule)?;
    ctx.apply_growth(&a.growth);
    let mc = &mut ctx.config.oracle.mc;
    if let Some(d) = a.draws {
        mc.draws = d;
    }
    if let Some(r) = a.radius {
        mc.assign = Assign::Radius(r);
    }
    if let Some(m) = a.mc_method {
        mc.method = m.into();
    }
    if a.train.is_empty() {
        return Err(Failure::Config("oracle needs --train data".into()));
    }
    let train = ctx.load("train", &a.train, &a.data, true)?;
    ctx.validate(a.with_growth.then_some(train.dim()))?;
    let steps = ctx.config.growth.steps_for(&ctx.config.schedule);
    let provider = ctx.provider(Some(&train), train.dim())?;
    let report = mc_frequencies(&train, &provider, &ctx.config.schedule, &ctx.config.oracle.mc)?;

    let mut growth: HashMap<String, f64> = HashMap::new();
    let mut failures = Vec::new();
    if a.with_growth {
        let g = growth_report(&train, &provider, &ctx.config.schedule, &ctx.config.growth)?;
        growth.extend(g.series.iter().map(|s| (s.target_id.clone(), s.last())));
        failures.extend(g.failures.iter().map(|(id, e)| (id.clone(), e.to_string())));
    }
    provider.warn_dropped_mass();

    let mut header = vec!["id", "frequency", "std_error"];
    let col = format!("log_l_{steps}");
    if a.with_growth {
        header.push(&col);
    }
    let rows = (0..report.ids.len()).map(|i| {
        let id = &report.ids[i];
        let mut row = vec![id.clone(), num(report.frequencies[i]), num(report.std_errors[i])];
        if a.with_growth {
            row.push(growth.get(id).map_or_else(String::new, |v| num(*v)));
        }
        row
    });
    ctx.write("oracle.csv", &csv_bytes(&header, rows))?;

    let rho = if a.with_growth {
        let (l, f): (Vec<f64>, Vec<f64>) = report
            .ids
            .iter()
            .zip(&report.frequencies)
            .filter_map(|(id, &f)| growth.get(id).map(|&l| (l, f)))
            .unzip();
        match spearman(&l, &f) {
            Ok(r) => Some(r),
            Err(e) => {
                warn(format!("rank correlation undefined: {e}"));
                None
            }
        }
    } else {
        None
    };
    ctx.write_json(
        "oracle.json",
        json!({
            "num_draws": report.num_draws,
            "unassigned": report.unassigned,
            "failed_draws": report.failed_draws,
            "diagnostics": report.diagnostics,
            "roundtrip": report.roundtrip,
            "spearman_log_l_frequency": rho,
        }),
    )?;
    if report.failed_draws > 0 {
        for d in &report.diagnostics {
            warn(d);
        }
        ctx.finish("oracle")?;
        return Err(Failure::Numerical(format!("{} draw(s) failed to integrate", report.failed_draws)));
    }
    let failure = write_failures(&mut ctx, &failures)?;
    done(ctx, "oracle", failure)
}

fn rank(mut ctx: Context, a: &RankArgs) -> Result<(), Failure> {
    let table = ctx.load_table("growth", &a.growth)?;
    let name = a.at_step.map(|s| format!("log_l_{s}"));
    let (_, values) = table.column(name.as_deref())?;
    let items: Vec<(String, f64)> = table.ids.iter().cloned().zip(values.iter().copied()).collect();
    let (top, bottom) = rank_values(&items, a.k)?;
    let lines = |ids: &[String]| ids.iter().map(|id| format!("{id}\n")).collect::<String>();
    ctx.write("top.txt", lines(&top).as_bytes())?;
    ctx.write("bottom.txt", lines(&bottom).as_bytes())?;
    done(ctx, "rank", None)
}

fn ttest_cmd(mut ctx: Context, a: &TtestArgs) -> Result<(), Failure> {
    if a.student {
        ctx.config.stats.ttest = TTestKind::Student;
    }
    let ta = ctx.load_table("a", &a.a)?;
    let tb = ctx.load_table("b", &a.b)?;
    let (column_a, va) = ta.column(a.column.as_deref())?;
    let (column_b, vb) = tb.column(a.column.as_deref())?;
    let result = ttest(va, vb, ctx.config.stats.ttest).map_err(|e| match e {
        Error::Domain(m) => Failure::Data(m),
        e => e.into(),
    })?;
    let all: Vec<f64> = va.iter().chain(vb).copied().collect();
    let h = histogram(&all, a.bins)?;
    let (ca, cb) = (h.count(va), h.count(vb));
    let rows = (0..ca.len()).map(|i| {
        vec![i.to_string(), num(h.edges[i]), num(h.edges[i + 1]), ca[i].to_string(), cb[i].to_string()]
    });
    ctx.write("histogram.csv", &csv_bytes(&["bin", "lo", "hi", "count_a", "count_b"], rows))?;
    if a.svg {
        ctx.write("histogram.svg", svg::histograms(&h.edges, &[("a", ca), ("b", cb)]).as_bytes())?;
    }
    let mut value = serde_json::to_value(result).expect("result serialises");
    // Tables of different lengths (full against cheap) each use their own final step.
    value["column"] = if column_a == column_b {
        column_a.into()
    } else {
        serde_json::json!({ "a": column_a, "b": column_b })
    };
    ctx.write_json("ttest.json", value)?;
    println!("t = {:.4}, df = {:.2}, p = {:.4e}", result.t_statistic, result.degrees_of_freedom, result.p_value);
    done(ctx, "ttest", None)
}

fn carlini(mut ctx: Context, a: &CarliniArgs) -> Result<(), Failure> {
    let cfg = &mut ctx.config.stats.carlini;
    if let Some(alpha) = a.alpha {
        cfg.alpha = alpha;
    }
    if let Some(n) = a.n_neighbors {
        cfg.n_neighbors = n;
    }
    if a.include_candidate {
        cfg.include_candidate = true;
    }
    ctx.validate(None)?;
    if a.generated.is_empty() || a.train.is_empty() {
        return Err(Failure::Config("carlini needs --generated and --train".into()));
    }
    let generated = ctx.load("generated", &a.generated, &a.data, false)?;
    let train = ctx.load("train", &a.train, &a.data, true)?;
    check_dims(&generated, &train, "generated and training data differ in dimension")?;
    let cfg = ctx.config.stats.carlini;
    let results: Vec<_> = (0..generated.len())
        .into_par_iter()
        .map(|i| {
            let x_hat = generated.row_f64(i);
            let (nearest, d2) = (0..train.len())
                .map(|j| {
                    let d2: f64 = train.row(j).iter().zip(&x_hat).map(|(&t, h)| (t as f64 - h).powi(2)).sum();
                    (j, d2)
                })
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .expect("training data is non-empty");
            let metric = carlini_metric(&x_hat, &train.row_f64(nearest), &train, &cfg);
            (nearest, d2.sqrt(), metric)
        })
        .collect();
    let mut failures = Vec::new();
    let rows: Vec<Vec<String>> = results
        .iter()
        .enumerate()
        .map(|(i, (nearest, d, metric))| {
            let id = generated.ids()[i].clone();
            let metric = match metric {
                Ok(v) => num(*v),
                Err(e) => {
                    failures.push((id.clone(), e.to_string()));
                    String::new()
                }
            };
            vec![id, train.ids()[*nearest].clone(), num(*d), metric]
        })
        .collect();
    ctx.write("carlini.csv", &csv_bytes(&["id", "nearest_id", "distance", "metric"], rows))?;
    let failure = write_failures(&mut ctx, &failures)?;
    done(ctx, "carlini", failure)
}

fn save(ctx: &mut Context, ds: &Dataset, name: &str) -> Result<(), Failure> {
    ctx.ensure_out_dir()?;
    let tensor = ctx.path(name);
    let sidecar = memometer::dataset::sidecar_path(&tensor);
    ds.save_raw(&tensor, &sidecar)?;
    ctx.record_output(name);
    ctx.record_output(&sidecar.file_name().expect("sidecar has a name").to_string_lossy());
    Ok(())
}

fn split(mut ctx: Context, a: &SplitArgs) -> Result<(), Failure> {
    if a.data.is_empty() {
        return Err(Failure::Config("split needs --data".into()));
    }
    let ds = ctx.load("data", &a.data, &a.range, true)?;
    let (kept, held) = ds.split(a.held_out, sample_seed(ctx.seed, "data/split"))?;
    save(&mut ctx, &kept, "kept.f32")?;
    save(&mut ctx, &held, "held.f32")?;
    done(ctx, "split", None)
}

fn synth(mut ctx: Context, a: &SynthArgs) -> Result<(), Failure> {
    let name = PathBuf::from(&a.name);
    if name.extension().is_none_or(|e| e != "f32") || name.components().count() != 1 {
        return Err(Failure::Config(format!("--name must be a plain file name ending in .f32, got {:?}", a.name)));
    }
    if a.n == 0 || a.dim == 0 {
        return Err(Failure::Config("--n and --dim must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(ctx.seed, "data/synth"));
    let samples: Vec<f32> = (0..a.n * a.dim)
        .map(|_| match a.dist {
            Distribution::Uniform => rng.random_range(-1.0f32..=1.0),
            Distribution::Gaussian => (0.5 * rng.sample::<f64, _>(StandardNormal)).clamp(-1.0, 1.0) as f32,
        })
        .collect();
    let ids = (0..a.n).map(|i| format!("{i:06}")).collect();
    let ds = Dataset::new(samples, a.dim, ids, ValueRange::SYMMETRIC, vec![a.dim], PixelLayout::Interleaved)?;
    save(&mut ctx, &ds, &a.name)?;
    done(ctx, "synth", None)
}
