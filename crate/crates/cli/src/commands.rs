use std::fs;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use serde_json::{json, Value};

use sar_damage::buildings::{
    assess_buildings, buildings_to_geojson, class_csv, class_rollup, parse_buildings_geojson, rollup, rollup_csv, rollup_until, DEFAULT_THRESHOLD,
};
use sar_damage::evaluation::{
    calibrate_threshold, compare_methods, compute_metrics, intersect_universe, render_table, samples_csv, score_labels, EvalError, ScoringReport,
};
use sar_damage::features::{BandSelection, FeatureSubset, Statistic};
use sar_damage::forest::{self, ForestConfig, ForestModel};
use sar_damage::geodata::{
    period_dir_name, read_footprints, read_labels, read_map_set, read_regions, read_stack, write_json, write_map, write_map_u8, LabelPoint, PeriodMap,
    RasterStack, META_FILE,
};
use sar_damage::inference::{infer_map, pwtt_maps, InferenceJob};
use sar_damage::pipeline::{ablate, forest_scores, pwtt_scores, training_set, AblationAxis, TrainingOptions};
use sar_damage::pwtt::DEFAULT_CUTOFF;
use sar_damage::synthgen::{generate_with_threads, Scenario, FOOTPRINTS_FILE, LABELS_FILE, REGIONS_FILE, STACK_DIR};
use sar_damage::temporal::parse_periods;
use sar_damage::Window;
use sar_damage_service::{Dataset, ServiceConfig};

use crate::{
    AblateArgs, Axis, BuildingsArgs, CalibrateArgs, Cli, Command, CompareArgs, EvalArgs, ForestArgs, Format, InferArgs, Level, Method, RollupArgs,
    SampleArgs, ServeArgs, StackLabels, SynthArgs, TrainArgs,
};

pub enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

type Res<T> = Result<T, Failure>;

/// Writes to stdout; a closed pipe (e.g. `| head`) is not an error.
fn out(text: &str) {
    let mut stdout = std::io::stdout().lock();
    let _ = stdout.write_all(text.as_bytes()).and_then(|_| stdout.flush());
}

fn usage<T>(msg: impl Into<String>) -> Res<T> {
    Err(Failure::Usage(msg.into()))
}

fn runtime<E: std::error::Error + Send + Sync + 'static>(ctx: String) -> impl FnOnce(E) -> Failure {
    move |e| Failure::Runtime(anyhow::Error::new(e).context(ctx))
}

struct Ctx {
    json: bool,
    threads: usize,
}

impl Ctx {
    fn emit(&self, human: &str, value: Value) {
        if self.json {
            out(&(serde_json::to_string_pretty(&value).expect("summary serializes") + "\n"));
        } else if human.ends_with('\n') {
            out(human);
        } else {
            out(&format!("{human}\n"));
        }
    }
}

pub fn run(cli: Cli) -> Res<()> {
    let threads = cli.threads.map(usize::from).unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
    let ctx = Ctx { json: cli.json, threads };
    match cli.command {
        Command::Synth(a) => synth(&ctx, a),
        Command::Train(a) => train(&ctx, a),
        Command::Infer(a) => infer(&ctx, a),
        Command::Buildings(a) => buildings(&ctx, a),
        Command::Rollup(a) => rollup_cmd(&ctx, a),
        Command::Eval(a) => eval(&ctx, a),
        Command::Calibrate(a) => calibrate(&ctx, a),
        Command::Compare(a) => compare(&ctx, a),
        Command::Ablate(a) => ablate_cmd(&ctx, a),
        Command::Serve(a) => serve(&ctx, a),
    }
}

// ---------------------------------------------------------------------------
// shared parsing

fn periods(s: &str) -> Res<Vec<u8>> {
    parse_periods(s).or_else(|e| usage(e.to_string()))
}

fn window(s: &str) -> Res<Window> {
    s.parse().or_else(|e: sar_damage::features::FeatureError| usage(format!("--window: {e}")))
}

fn options(s: &SampleArgs) -> Res<TrainingOptions> {
    Ok(TrainingOptions { periods: periods(&s.periods)?, reference_period: s.reference, window: window(&s.window)?, ..Default::default() })
}

fn subset(bands: &str, stats: &str) -> Res<FeatureSubset> {
    let bands: BandSelection = bands.parse().or_else(|e: sar_damage::features::FeatureError| usage(format!("--bands: {e}")))?;
    let stats = FeatureSubset::parse_stats(stats).or_else(|e| usage(format!("--features: {e}")))?;
    Ok(FeatureSubset { bands, stats })
}

fn forest_config(f: &ForestArgs, threads: usize) -> Res<ForestConfig> {
    Ok(ForestConfig {
        n_trees: f.trees,
        min_leaf: f.min_leaf,
        max_nodes: f.max_nodes,
        seed: f.seed,
        balance: !f.no_balance,
        bootstrap: !f.no_bootstrap,
        features: subset(&f.bands, &f.features)?.indices(),
        mtry: f.mtry,
        threads,
    })
}

fn unit_threshold(t: f64, flag: &str) -> Res<f64> {
    if (0.0..=1.0).contains(&t) {
        Ok(t)
    } else {
        usage(format!("{flag} must be in [0, 1], got {t}"))
    }
}

/// Stack directory of `path`: the directory itself or its `stack/` child.
fn stack_dir(path: &Path) -> PathBuf {
    if !path.join(META_FILE).is_file() && path.join(STACK_DIR).join(META_FILE).is_file() {
        path.join(STACK_DIR)
    } else {
        path.to_path_buf()
    }
}

fn bundle_file(path: &Path, explicit: Option<&PathBuf>, name: &str, flag: &str) -> Res<PathBuf> {
    if let Some(p) = explicit {
        return Ok(p.clone());
    }
    if !path.is_dir() {
        return Err(Failure::Runtime(anyhow!("{} is not a directory", path.display())));
    }
    let candidate = path.join(name);
    if candidate.is_file() {
        Ok(candidate)
    } else {
        usage(format!("{flag} is required: {} has no {name}", path.display()))
    }
}

fn load_stack(path: &Path) -> Res<RasterStack> {
    let dir = stack_dir(path);
    read_stack(&dir).map_err(runtime(format!("reading stack {}", dir.display())))
}

fn load_labels(path: &Path) -> Res<Vec<LabelPoint>> {
    let r = read_labels(path).map_err(runtime(format!("reading labels {}", path.display())))?;
    for w in &r.warnings {
        eprintln!("warning: {}: {w:?}", path.display());
    }
    Ok(r.items)
}

fn load_inputs(i: &StackLabels) -> Res<(RasterStack, Vec<LabelPoint>)> {
    let labels = bundle_file(&i.stack, i.labels.as_ref(), LABELS_FILE, "--labels")?;
    Ok((load_stack(&i.stack)?, load_labels(&labels)?))
}

fn load_model(path: &Path) -> Res<ForestModel> {
    ForestModel::load(path).map_err(runtime(format!("reading model {}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Res<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn eval_failure(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Runtime(e.into())
}

// ---------------------------------------------------------------------------
// subcommands

fn synth(ctx: &Ctx, a: SynthArgs) -> Res<()> {
    let mut scenario = match &a.scenario {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Scenario::from_toml(&text).map_err(runtime(format!("parsing {}", p.display())))?
        }
        None => Scenario::preset(&a.preset).or_else(|e| usage(e.to_string()))?,
    };
    if let Some(seed) = a.seed {
        scenario = scenario.with_seed(seed);
    }
    let g = generate_with_threads(&scenario, ctx.threads).map_err(runtime("generating scene".into()))?;
    g.write(&a.out).map_err(runtime(format!("writing {}", a.out.display())))?;
    let summary = json!({
        "command": "synth",
        "scenario": scenario.name,
        "seed": scenario.seed,
        "width": g.stack.width,
        "height": g.stack.height,
        "layers": g.stack.layers.len(),
        "labels": g.labels.len(),
        "footprints": g.footprints.len(),
        "damaged_buildings": g.truth.damaged_buildings.len(),
        "regions": g.regions.len(),
        "out": a.out.display().to_string(),
    });
    let human = format!(
        "scene {} (seed {}): {}x{} px, {} layers, {} labels, {} footprints ({} damaged), {} regions -> {}",
        scenario.name,
        scenario.seed,
        g.stack.width,
        g.stack.height,
        g.stack.layers.len(),
        g.labels.len(),
        g.footprints.len(),
        g.truth.damaged_buildings.len(),
        g.regions.len(),
        a.out.display()
    );
    ctx.emit(&human, summary);
    Ok(())
}

fn train(ctx: &Ctx, a: TrainArgs) -> Res<()> {
    let (stack, labels) = load_inputs(&a.input)?;
    let opts = options(&a.samples)?;
    let config = forest_config(&a.forest, ctx.threads)?;
    let set = training_set(&stack, &labels, &opts).map_err(eval_failure)?;
    let (neg, pos) = set.class_counts();
    let model = forest::train(&set.rows, &config).map_err(runtime("training".into()))?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    model.save(&a.out).map_err(runtime(format!("writing {}", a.out.display())))?;
    let summary = json!({
        "command": "train",
        "samples": set.rows.len(),
        "intact": neg,
        "damaged": pos,
        "labels_outside_stack": set.outside.len(),
        "trees": model.n_trees(),
        "features": config.features.len(),
        "mtry": config.effective_mtry(),
        "window": opts.window.to_string(),
        "periods": opts.periods,
        "out": a.out.display().to_string(),
    });
    let human = format!(
        "trained {} trees on {} samples ({} damaged, {} intact; {} features, mtry {}) -> {}",
        model.n_trees(),
        set.rows.len(),
        pos,
        neg,
        config.features.len(),
        config.effective_mtry(),
        a.out.display()
    );
    ctx.emit(&human, summary);
    Ok(())
}

fn infer(ctx: &Ctx, a: InferArgs) -> Res<()> {
    if a.uint8 && a.method == Method::Pwtt {
        return usage("--uint8 stores probabilities; t-test scores are unbounded");
    }
    if a.tile_size == 0 {
        return usage("--tile-size must be positive");
    }
    let stack = load_stack(&a.stack)?;
    let job = InferenceJob {
        periods: periods(&a.periods)?,
        reference_period: a.reference,
        window: window(&a.window)?,
        tile_size: a.tile_size,
        threads: ctx.threads,
        ..Default::default()
    };
    let maps = match a.method {
        Method::Forest => {
            let Some(model_path) = &a.model else { return usage("--model is required for --method forest") };
            let model = load_model(model_path)?;
            infer_map(&stack, &model, &job).map_err(eval_failure)?
        }
        Method::Pwtt => pwtt_maps(&stack, &job).map_err(eval_failure)?,
    };
    let mut rows = Vec::new();
    for m in &maps {
        let dir = a.out.join(period_dir_name(m.period_index));
        let r = if a.uint8 { write_map_u8(m, &dir) } else { write_map(m, &dir) };
        r.map_err(runtime(format!("writing {}", dir.display())))?;
        rows.push(map_summary(m));
    }
    let method = match a.method {
        Method::Forest => "forest",
        Method::Pwtt => "pwtt",
    };
    let human: String = rows
        .iter()
        .map(|r| format!("T{:02}: mean {:.4}, max {:.4}, nodata {}\n", r["period"].as_u64().unwrap_or(0), r["mean"].as_f64().unwrap_or(f64::NAN), r["max"].as_f64().unwrap_or(f64::NAN), r["nodata"]))
        .collect::<String>()
        + &format!("{} {} maps ({}x{} px, {}) -> {}", maps.len(), method, stack.width, stack.height, if a.uint8 { "uint8" } else { "f32" }, a.out.display());
    ctx.emit(
        &human,
        json!({ "command": "infer", "method": method, "width": stack.width, "height": stack.height, "encoding": if a.uint8 { "u8" } else { "f32" }, "maps": rows, "out": a.out.display().to_string() }),
    );
    Ok(())
}

fn map_summary(m: &PeriodMap) -> Value {
    let finite: Vec<f64> = m.values.iter().filter(|v| !v.is_nan()).map(|&v| v as f64).collect();
    let mean = if finite.is_empty() { None } else { Some(finite.iter().sum::<f64>() / finite.len() as f64) };
    let max = finite.iter().copied().reduce(f64::max);
    json!({ "period": m.period_index, "mean": mean, "max": max, "nodata": m.values.len() - finite.len() })
}

fn buildings(ctx: &Ctx, a: BuildingsArgs) -> Res<()> {
    let t = unit_threshold(a.threshold, "--threshold")?;
    if !(a.min_area >= 0.0) {
        return usage("--min-area must be non-negative");
    }
    let maps = read_map_set(&a.maps).map_err(runtime(format!("reading maps {}", a.maps.display())))?;
    let Some(first) = maps.first() else {
        return Err(Failure::Runtime(anyhow!("{} contains no Tnn map directories", a.maps.display())));
    };
    for m in &maps {
        m.validate_probabilities().map_err(runtime(format!("map T{:02}", m.period_index)))?;
    }
    let crs = first.transform.crs.clone();
    let fps = read_footprints(&a.footprints, a.min_area, &crs).map_err(runtime(format!("reading {}", a.footprints.display())))?;
    for w in &fps.warnings {
        eprintln!("warning: {}: {w:?}", a.footprints.display());
    }
    let (assessed, outside) = assess_buildings(&fps.items, &maps, ctx.threads);
    write_json(&a.out, &buildings_to_geojson(&assessed, &fps.items, t)).map_err(runtime(format!("writing {}", a.out.display())))?;
    let damaged = assessed.iter().filter(|b| b.is_damaged(t)).count();
    let periods: Vec<u8> = maps.iter().map(|m| m.period_index).collect();
    ctx.emit(
        &format!(
            "{} of {} buildings damaged at threshold {t} ({} outside the maps, {} footprints skipped) -> {}",
            damaged,
            assessed.len(),
            outside.len(),
            fps.warnings.len(),
            a.out.display()
        ),
        json!({
            "command": "buildings",
            "threshold": t,
            "periods": periods,
            "assessed": assessed.len(),
            "damaged": damaged,
            "outside": outside.len(),
            "skipped": fps.warnings.len(),
            "out": a.out.display().to_string(),
        }),
    );
    Ok(())
}

fn rollup_cmd(ctx: &Ctx, a: RollupArgs) -> Res<()> {
    let t = unit_threshold(a.threshold, "--threshold")?;
    let text = fs::read_to_string(&a.buildings).with_context(|| format!("reading {}", a.buildings.display()))?;
    let bs = parse_buildings_geojson(&text).map_err(runtime(format!("parsing {}", a.buildings.display())))?;
    let (rows, table) = match a.level {
        Level::Region => {
            let Some(path) = &a.regions else { return usage("--regions is required for --level region") };
            let regions = read_regions(path).map_err(runtime(format!("reading {}", path.display())))?.items;
            let r = match a.until {
                Some(p) => rollup_until(&bs, &regions, t, p),
                None => rollup(&bs, &regions, t),
            };
            (serde_json::to_value(&r).expect("rows serialize"), rollup_csv(&r))
        }
        Level::Class => {
            if a.until.is_some() {
                return usage("--until applies to --level region");
            }
            let r = class_rollup(&bs, t);
            (serde_json::to_value(&r).expect("rows serialize"), class_csv(&r))
        }
    };
    let level = match a.level {
        Level::Region => "region",
        Level::Class => "class",
    };
    let doc = json!({ "level": level, "threshold": t, "until": a.until, "rows": rows });
    let body = match a.format {
        Format::Csv => table,
        Format::Json => serde_json::to_string_pretty(&doc).expect("rollup serializes") + "\n",
    };
    match &a.out {
        Some(p) => {
            write_text(p, &body)?;
            let mut summary = doc.clone();
            summary["command"] = json!("rollup");
            summary["out"] = json!(p.display().to_string());
            ctx.emit(&format!("{} rows -> {}", rows.as_array().map_or(0, Vec::len), p.display()), summary);
        }
        None if ctx.json => {
            let mut summary = doc;
            summary["command"] = json!("rollup");
            ctx.emit("", summary);
        }
        None => out(&body),
    }
    Ok(())
}

fn method_name(m: Method) -> &'static str {
    match m {
        Method::Forest => "forest",
        Method::Pwtt => "pwtt",
    }
}

fn eval(ctx: &Ctx, a: EvalArgs) -> Res<()> {
    let opts = options(&a.samples)?;
    let threshold = a.threshold.unwrap_or(match a.method {
        Method::Forest => DEFAULT_THRESHOLD,
        Method::Pwtt => DEFAULT_CUTOFF,
    });
    if !threshold.is_finite() {
        return usage("--threshold must be finite");
    }
    let report: ScoringReport = match &a.maps {
        Some(dir) => {
            let labels_path = bundle_file(&a.input.stack, a.input.labels.as_ref(), LABELS_FILE, "--labels")?;
            let labels = load_labels(&labels_path)?;
            let maps: Vec<PeriodMap> = read_map_set(dir)
                .map_err(runtime(format!("reading maps {}", dir.display())))?
                .into_iter()
                .filter(|m| opts.periods.contains(&m.period_index))
                .collect();
            if maps.is_empty() {
                return Err(Failure::Runtime(anyhow!("{} has no maps for periods {:?}", dir.display(), opts.periods)));
            }
            score_labels(&maps, &labels, &opts.calendar).map_err(eval_failure)?
        }
        None => {
            let (stack, labels) = load_inputs(&a.input)?;
            match a.method {
                Method::Forest => {
                    let Some(p) = &a.model else { return usage("--model is required for --method forest unless --maps is given") };
                    let model = load_model(p)?;
                    forest_scores(&stack, &model, &labels, &opts, ctx.threads).map_err(eval_failure)?
                }
                Method::Pwtt => pwtt_scores(&stack, &labels, &opts, ctx.threads).map_err(eval_failure)?,
            }
        }
    };
    for w in &report.warnings {
        eprintln!("warning: {}: {}", w.label_id, w.message);
    }
    if let Some(p) = &a.scores {
        write_text(p, &samples_csv(&report.samples))?;
    }
    let m = compute_metrics(&report.samples, threshold).map_err(eval_failure)?;
    let name = method_name(a.method);
    let human = format!("{name} at threshold {threshold}\n{}", render_table(&[(name, &m)]));
    ctx.emit(&human, json!({ "command": "eval", "method": name, "threshold": threshold, "metrics": m, "warnings": report.warnings.len() }));
    Ok(())
}

fn calibrate(ctx: &Ctx, a: CalibrateArgs) -> Res<()> {
    if !(a.target > 0.0 && a.target <= 1.0) {
        return usage(format!("--target must be in (0, 1], got {}", a.target));
    }
    let (stack, labels) = load_inputs(&a.input)?;
    let opts = options(&a.samples)?;
    let model = load_model(&a.model)?;
    let scores = forest_scores(&stack, &model, &labels, &opts, ctx.threads).map_err(eval_failure)?;
    let c = match calibrate_threshold(&scores.samples, a.target) {
        Ok(c) => c,
        Err(e @ EvalError::Unachievable { .. }) => return Err(Failure::Runtime(anyhow!(e))),
        Err(e) => return Err(eval_failure(e)),
    };
    ctx.emit(
        &format!("threshold {} reaches precision {:.4} (target {}) at recall {:.4} over {} samples", c.threshold, c.precision, a.target, c.recall, scores.samples.len()),
        json!({ "command": "calibrate", "threshold": c.threshold, "target": a.target, "precision": c.precision, "recall": c.recall, "samples": scores.samples.len() }),
    );
    Ok(())
}

fn compare(ctx: &Ctx, a: CompareArgs) -> Res<()> {
    let t = unit_threshold(a.threshold, "--threshold")?;
    if !a.cutoff.is_finite() || a.cutoff < 0.0 {
        return usage("--cutoff must be a non-negative number");
    }
    let (stack, labels) = load_inputs(&a.input)?;
    let opts = options(&a.samples)?;
    let model = load_model(&a.model)?;
    let rf = forest_scores(&stack, &model, &labels, &opts, ctx.threads).map_err(eval_failure)?;
    let pw = pwtt_scores(&stack, &labels, &opts, ctx.threads).map_err(eval_failure)?;
    let (x, y) = intersect_universe(&rf.samples, &pw.samples);
    let dropped = (rf.samples.len() - x.len(), pw.samples.len() - y.len());
    let c = compare_methods(&x, &y, t, a.cutoff).map_err(eval_failure)?;
    let mut human = render_table(&[("forest", &c.forest), ("pwtt", &c.pwtt)]);
    if dropped != (0, 0) {
        human.push_str(&format!("samples without a score in both methods: {} forest, {} t-test\n", dropped.0, dropped.1));
    }
    ctx.emit(
        &human,
        json!({ "command": "compare", "threshold": t, "cutoff": a.cutoff, "forest": c.forest, "pwtt": c.pwtt, "dropped_forest": dropped.0, "dropped_pwtt": dropped.1 }),
    );
    Ok(())
}

fn axis_values(axis: Axis, values: &str) -> Res<AblationAxis> {
    let items: Vec<&str> = values.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    if items.is_empty() {
        return usage("--values is empty");
    }
    Ok(match axis {
        Axis::Trees => AblationAxis::Trees(
            items
                .iter()
                .map(|s| s.parse::<usize>().ok().filter(|&n| n > 0).ok_or_else(|| Failure::Usage(format!("tree count '{s}' is not a positive integer"))))
                .collect::<Res<_>>()?,
        ),
        Axis::Bands => AblationAxis::Bands(
            items.iter().map(|s| s.parse::<BandSelection>().map_err(|e| Failure::Usage(e.to_string()))).collect::<Res<_>>()?,
        ),
        Axis::Features => AblationAxis::Features(
            items.iter().map(|s| FeatureSubset::parse_stats(s).map_err(|e| Failure::Usage(e.to_string()))).collect::<Res<Vec<Vec<Statistic>>>>()?,
        ),
        Axis::Window => AblationAxis::Window(items.iter().map(|s| window(s)).collect::<Res<_>>()?),
    })
}

fn ablate_cmd(ctx: &Ctx, a: AblateArgs) -> Res<()> {
    let axis = axis_values(a.axis, &a.values)?;
    let t = unit_threshold(a.threshold, "--threshold")?;
    let config = forest_config(&a.forest, ctx.threads)?;
    let opts = options(&a.samples)?;
    let (train_stack, train_labels) = load_inputs(&StackLabels { stack: a.train.clone(), labels: None })?;
    let (test_stack, test_labels) = load_inputs(&StackLabels { stack: a.test.clone(), labels: None })?;
    let points = ablate((&train_stack, &train_labels), (&test_stack, &test_labels), &axis, &config, &opts, t, ctx.threads).map_err(eval_failure)?;
    let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
    let mut human = format!("{:<24} {:>8} {:>10} {:>8} {:>8}\n", axis.name(), "f1", "precision", "recall", "auc");
    for p in &points {
        human.push_str(&format!("{:<24} {:>8.4} {:>10.4} {:>8.4} {:>8}\n", p.value, p.f1, p.precision, p.recall, fmt(p.auc)));
    }
    ctx.emit(&human, json!({ "command": "ablate", "axis": axis.name(), "threshold": t, "points": points }));
    Ok(())
}

fn serve(ctx: &Ctx, a: ServeArgs) -> Res<()> {
    let addr: SocketAddr = format!("{}:{}", a.bind, a.port).parse().or_else(|_| usage(format!("cannot bind to '{}:{}'", a.bind, a.port)))?;
    if a.tile_size == 0 {
        return usage("--tile-size must be positive");
    }
    let stack = load_stack(&a.stack)?;
    let model = load_model(&a.model)?;
    let fp_path = bundle_file(&a.stack, a.footprints.as_ref(), FOOTPRINTS_FILE, "--footprints")?;
    let footprints = read_footprints(&fp_path, a.min_area, &stack.transform.crs).map_err(runtime(format!("reading {}", fp_path.display())))?.items;
    let regions = match bundle_file(&a.stack, a.regions.as_ref(), REGIONS_FILE, "--regions") {
        Ok(p) => read_regions(&p).map_err(runtime(format!("reading {}", p.display())))?.items,
        Err(_) => Vec::new(),
    };
    let config = ServiceConfig {
        workdir: a.workdir.clone(),
        workers: a.workers as usize,
        queue_capacity: a.queue as usize,
        max_result_pixels: a.max_result_pixels,
        tile_size: a.tile_size,
        threads: ctx.threads,
        cors_origins: a.cors_origins.clone(),
    };
    let data = Dataset { stack, model, footprints, regions };
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().context("starting runtime")?;
    eprintln!("serving on http://{addr} (work directory {})", a.workdir.display());
    rt.block_on(sar_damage_service::serve(data, config, addr)).map_err(runtime("service".into()))?;
    Ok(())
}
