use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use mllm_lab::corruption::{
    emit_sample, region_seed, CorruptionConfig, DocumentAnnotation, TargetRecord,
};
use mllm_lab::numerics::DenseArray;
use mllm_lab::partition::{select_partition, slice_image, ImageGeometry, PartitionConfig};
use mllm_lab::resampler::{
    encode_video, grad_check, init_weights, random_features, ResamplerConfig,
};
use mllm_lab::rl::reward::standardize;
use mllm_lab::rl::toy::{train_toy_with, ToyTask, TrainConfig};
use mllm_lab::rl::{
    score_group, ContextCopyModel, HeuristicScorer, Mode, RewardContext, RolloutGroup,
};
use mllm_lab::tensor_file::{read_tensor, write_tensor};
use mllm_lab::tokens::compression_report;
use mllm_lab::video::{augment, pack_timestamps, sample_frames, FrameSamplingSpec};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::CliError;
use crate::imageio;
use crate::{
    BudgetArgs, CorruptArgs, EncodeArgs, GradcheckArgs, PackArgs, PartitionArgs, RewardsArgs,
    TrainToyArgs,
};

/// A command's JSON result plus an invariant failure to report after the
/// result has been written.
pub struct Outcome {
    pub json: Value,
    pub violation: Option<String>,
}

impl From<Value> for Outcome {
    fn from(json: Value) -> Self {
        Outcome {
            json,
            violation: None,
        }
    }
}

pub fn emit(outcome: &Outcome, path: Option<&Path>) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(&outcome.json)? + "\n";
    match path {
        Some(p) => fs::write(p, text).map_err(CliError::io(p))?,
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .map_err(CliError::io("<stdout>"))?;
        }
    }
    match &outcome.violation {
        Some(v) => Err(CliError::Invariant(v.clone())),
        None => Ok(()),
    }
}

fn header(command: &str, seed: u64, config: Value) -> serde_json::Map<String, Value> {
    let mut m = serde_json::Map::new();
    m.insert("command".into(), command.into());
    m.insert("seed".into(), seed.into());
    m.insert("config".into(), config);
    m
}

fn check_finite(name: &str, v: f64) -> Result<(), CliError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(CliError::Input(format!("--{name} must be finite, got {v}")))
    }
}

pub fn partition(a: &PartitionArgs, seed: u64) -> Result<Outcome, CliError> {
    let cfg = PartitionConfig {
        base: a.base,
        max_slices: a.max_slices,
        area_weight: a.area_weight,
        queries: a.queries,
    };
    let image = a.image.as_deref().map(imageio::load).transpose()?;
    let geometry = match &image {
        Some(img) => ImageGeometry::new(img.width() as u32, img.height() as u32)?,
        None => ImageGeometry::new(a.width.unwrap_or(0), a.height.unwrap_or(0))?,
    };
    let plan = select_partition(geometry, &cfg)?;
    let mut out = header(
        "partition",
        seed,
        json!({
            "base": cfg.base,
            "max_slices": cfg.max_slices,
            "area_weight": cfg.area_weight,
            "queries": cfg.queries,
            "image": a.image.as_ref().map(|p| p.display().to_string()),
        }),
    );
    out.insert("source".into(), json!([geometry.width, geometry.height]));
    if let Value::Object(plan_json) = plan.to_json() {
        out.extend(plan_json);
    }
    if let (Some(img), Some(dir)) = (&image, &a.slices_out) {
        fs::create_dir_all(dir).map_err(CliError::io(dir))?;
        let slices = slice_image(img, &plan)?;
        let mut files = Vec::with_capacity(slices.len());
        for (i, s) in slices.iter().enumerate() {
            let (row, col) = (i as u32 / plan.grid_cols, i as u32 % plan.grid_cols);
            let path = dir.join(format!("slice_r{row}_c{col}.png"));
            imageio::save_png(&path, s)?;
            files.push(path.display().to_string());
        }
        out.insert("slices".into(), json!(files));
    }
    Ok(Value::Object(out).into())
}

pub fn pack(a: &PackArgs, seed: u64) -> Result<Outcome, CliError> {
    let mut spec = FrameSamplingSpec {
        duration_s: a.duration,
        native_fps: a.fps,
        max_frames: a.max_frames,
        max_fps: a.max_fps,
    };
    spec.validate()?;
    let mut package_size = a.package_size;
    let augmentation = a.augment.then(|| augment(&spec, seed));
    if let Some(aug) = augmentation {
        package_size = aug.package_size;
        spec.max_fps = aug.fps;
    }
    let timestamps = sample_frames(&spec)?;
    let packages = pack_timestamps(&timestamps, package_size)?;
    let mut out = header(
        "pack",
        seed,
        json!({
            "duration_s": a.duration,
            "native_fps": a.fps,
            "max_frames": a.max_frames,
            "max_fps": a.max_fps,
            "package_size": a.package_size,
            "augment": a.augment,
        }),
    );
    out.insert("augmentation".into(), json!(augmentation));
    out.insert("effective_fps".into(), json!(spec.effective_fps()));
    out.insert("frame_count".into(), json!(timestamps.len()));
    out.insert("package_size".into(), json!(package_size));
    out.insert("package_count".into(), json!(packages.len()));
    out.insert("packages".into(), json!(packages));
    Ok(Value::Object(out).into())
}

pub fn budget(a: &BudgetArgs, seed: u64) -> Result<Outcome, CliError> {
    let report = compression_report(a.frames, a.package_size, a.queries, a.patch_side)?;
    let mut out = header(
        "budget",
        seed,
        json!({
            "frames": a.frames,
            "package_size": a.package_size,
            "queries": a.queries,
            "patch_side": a.patch_side,
        }),
    );
    if let Value::Object(m) = serde_json::to_value(&report)? {
        out.extend(m);
    }
    Ok(Value::Object(out).into())
}

fn infer_grid(
    patches: usize,
    rows: Option<usize>,
    cols: Option<usize>,
) -> Result<(usize, usize), CliError> {
    let (r, c) = match (rows, cols) {
        (Some(r), Some(c)) => (r, c),
        (Some(r), None) if r > 0 => (r, patches / r),
        (None, Some(c)) if c > 0 => (patches / c, c),
        _ => {
            let side = (patches as f64).sqrt().round() as usize;
            (side, side)
        }
    };
    if r * c != patches || patches == 0 {
        return Err(CliError::Input(format!(
            "cannot lay {patches} patches on a {r}x{c} grid; pass --patch-rows/--patch-cols"
        )));
    }
    Ok((r, c))
}

pub fn encode(a: &EncodeArgs, seed: u64) -> Result<Outcome, CliError> {
    let (features, feature_dim, grid, source) = match &a.features {
        Some(path) => {
            let t = read_tensor(File::open(path).map_err(CliError::io(path))?)?;
            let &[_, patches, d_in] = t.shape() else {
                return Err(CliError::Input(format!(
                    "{}: expected a [frames, patches, feature_dim] tensor, got shape {:?}",
                    path.display(),
                    t.shape()
                )));
            };
            let grid = infer_grid(patches, a.patch_rows, a.patch_cols)?;
            (Some(t), d_in, grid, path.display().to_string())
        }
        None => {
            let grid = match (a.patch_rows, a.patch_cols) {
                (Some(r), Some(c)) => (r, c),
                (r, c) => (r.or(c).unwrap_or(4), c.or(r).unwrap_or(4)),
            };
            (None, a.feature_dim, grid, "random".to_string())
        }
    };
    let cfg = ResamplerConfig {
        num_queries: a.queries,
        ..ResamplerConfig::new(feature_dim, a.model_dim, grid.0, grid.1)
    };
    if a.package_size == 0 || a.package_size > cfg.max_package {
        return Err(CliError::Input(format!(
            "--package-size must be in 1..={}, got {}",
            cfg.max_package, a.package_size
        )));
    }
    cfg.validate()?;
    let features = match features {
        Some(f) => f,
        None => random_features(a.frames, &cfg, seed ^ 0x5eed_f00d),
    };
    let frames = features.shape()[0];
    if frames == 0 {
        return Err(CliError::Input("feature tensor has no frames".into()));
    }
    let weights = init_weights(&cfg, seed)?;
    let frame_len = cfg.patches() * cfg.feature_dim;
    let packages: Vec<DenseArray> = features
        .data()
        .chunks(a.package_size * frame_len)
        .map(|chunk| {
            DenseArray::new(
                vec![chunk.len() / frame_len, cfg.patches(), cfg.feature_dim],
                chunk.to_vec(),
            )
        })
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Input(e.to_string()))?;
    let tokens = encode_video(&packages, &weights, &cfg)?;
    if !tokens.is_finite() {
        return Err(CliError::Invariant(
            "resampler produced non-finite output".into(),
        ));
    }
    if let Some(path) = &a.out_tensor {
        let f = File::create(path).map_err(CliError::io(path))?;
        write_tensor(BufWriter::new(f), &tokens)?;
    }
    let mut out = header(
        "encode",
        seed,
        json!({
            "features": source,
            "resampler": cfg,
            "package_size": a.package_size,
            "out_tensor": a.out_tensor.as_ref().map(|p| p.display().to_string()),
        }),
    );
    out.insert("frames".into(), json!(frames));
    out.insert("packages".into(), json!(packages.len()));
    out.insert("output_shape".into(), json!(tokens.shape()));
    out.insert("output_sum_squares".into(), json!(tokens.sum_squares()));
    Ok(Value::Object(out).into())
}

pub fn gradcheck(a: &GradcheckArgs, seed: u64) -> Result<Outcome, CliError> {
    check_finite("eps", a.eps)?;
    check_finite("tolerance", a.tolerance)?;
    let cfg = ResamplerConfig {
        num_queries: a.queries,
        ..ResamplerConfig::new(a.feature_dim, a.model_dim, a.patch_rows, a.patch_cols)
    };
    let report = grad_check(&cfg, a.frames, seed, a.eps)?;
    let passed = report.max_relative_error < a.tolerance;
    let mut out = header(
        "gradcheck",
        seed,
        json!({
            "resampler": cfg,
            "frames": a.frames,
            "eps": a.eps,
            "tolerance": a.tolerance,
        }),
    );
    out.insert(
        "max_relative_error".into(),
        json!(report.max_relative_error),
    );
    out.insert(
        "per_array".into(),
        Value::Object(
            report
                .per_array
                .iter()
                .map(|(n, e)| (n.as_str().to_string(), json!(e)))
                .collect(),
        ),
    );
    out.insert("passed".into(), json!(passed));
    Ok(Outcome {
        json: Value::Object(out),
        violation: (!passed).then(|| {
            format!(
                "gradient check error {:e} >= tolerance {:e}",
                report.max_relative_error, a.tolerance
            )
        }),
    })
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, CliError> {
    let f = File::open(path).map_err(CliError::io(path))?;
    let mut items = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(CliError::io(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line)
            .map_err(|e| CliError::Input(format!("{}:{}: {e}", path.display(), i + 1)))?;
        items.push(item);
    }
    Ok(items)
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(path).map_err(CliError::io(path))?);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n").map_err(CliError::io(path))?;
    }
    w.flush().map_err(CliError::io(path))
}

pub fn corrupt(a: &CorruptArgs, seed: u64) -> Result<Outcome, CliError> {
    let cfg = CorruptionConfig {
        sigma_low: a.sigma_low,
        blur_radius_low: a.blur_radius_low,
        sigma_moderate: a.sigma_moderate,
        fill: a.fill,
        target_fraction: a.target_fraction,
        ..CorruptionConfig::default()
    };
    cfg.validate()?;
    let docs: Vec<DocumentAnnotation> = read_jsonl(&a.annotations)?;
    let base = a.annotations.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(&a.out).map_err(CliError::io(&a.out))?;
    let mut records = Vec::with_capacity(docs.len());
    let mut target_count = 0;
    for (i, doc) in docs.iter().enumerate() {
        let src = base.join(&doc.image);
        let image = imageio::load(&src)?;
        let doc_seed = region_seed(seed, &format!("{i}:{}", doc.image));
        let sample = emit_sample(&image, &doc.regions, doc_seed, &cfg)
            .map_err(|e| CliError::Input(format!("{}: {e}", doc.image)))?;
        let stem = Path::new(&doc.image)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "doc".into());
        let name = format!("{i:05}_{stem}.png");
        imageio::save_png(&a.out.join(&name), &sample.image)?;
        target_count += sample.targets.len();
        records.push(TargetRecord {
            source: doc.image.clone(),
            image: name,
            seed: sample.seed,
            targets: sample.targets,
        });
    }
    let targets_path = a.out.join("targets.jsonl");
    write_jsonl(&targets_path, &records)?;
    let mut out = header(
        "corrupt",
        seed,
        json!({
            "annotations": a.annotations.display().to_string(),
            "out": a.out.display().to_string(),
            "corruption": cfg,
        }),
    );
    out.insert("documents".into(), json!(records.len()));
    out.insert("targets".into(), json!(target_count));
    out.insert(
        "targets_file".into(),
        json!(targets_path.display().to_string()),
    );
    Ok(Value::Object(out).into())
}

pub fn train_toy(a: &TrainToyArgs, seed: u64) -> Result<Outcome, CliError> {
    if a.max_operand > 9 {
        return Err(CliError::Input("--max-operand must be <= 9".into()));
    }
    let task = ToyTask {
        max_operand: a.max_operand,
    };
    let cfg = TrainConfig {
        steps: a.steps,
        prompts_per_batch: a.prompts_per_batch,
        group_size: a.group_size,
        p_long: a.p_long,
        lr: a.lr,
        temperature: 1.0,
        seed,
    };
    let mut groups = Vec::new();
    let keep = a.rollouts_out.is_some();
    let (policy, trace) = train_toy_with(task, &cfg, &HeuristicScorer::default(), |step, g| {
        if keep {
            groups.push(StoredGroup {
                step,
                group: g.clone(),
            });
        }
    })?;
    let f = File::create(&a.out).map_err(CliError::io(&a.out))?;
    trace
        .write_csv(BufWriter::new(f))
        .map_err(|e| CliError::Input(format!("{}: {e}", a.out.display())))?;
    if let Some(path) = &a.rollouts_out {
        write_jsonl(path, &groups)?;
    }
    let tail = a.steps.saturating_sub(50)..a.steps;
    let mut out = header(
        "train-toy",
        seed,
        json!({
            "task": task,
            "train": cfg,
            "out": a.out.display().to_string(),
            "rollouts_out": a.rollouts_out.as_ref().map(|p| p.display().to_string()),
        }),
    );
    for mode in [Mode::Short, Mode::Long] {
        out.insert(
            format!("final_accuracy_{mode}"),
            json!(trace.windowed_accuracy(mode, tail.clone())),
        );
        out.insert(
            format!("greedy_accuracy_{mode}"),
            json!(policy.greedy_accuracy(mode)),
        );
    }
    out.insert("trace_rows".into(), json!(trace.rows.len()));
    Ok(Value::Object(out).into())
}

#[derive(Debug, Serialize, Deserialize)]
struct StoredGroup {
    step: usize,
    #[serde(flatten)]
    group: RolloutGroup,
}

#[derive(Debug, Deserialize)]
struct ScoreRequest {
    prompt: String,
    reference: String,
    mode: Mode,
    responses: Vec<String>,
}

/// Checks that every stored total equals the recomputed composite and that
/// the stored standardized scores are the standardized raw scores.
fn verify_group(g: &StoredGroup) -> Vec<String> {
    let mut problems = Vec::new();
    for (i, r) in g.group.rewards.iter().enumerate() {
        if !r.is_consistent() {
            problems.push(format!(
                "step {} prompt {} response {i}: total {} != recomputed {}",
                g.step,
                g.group.prompt_id,
                r.total,
                r.recomputed_total()
            ));
        }
    }
    let raw: Vec<f64> = g.group.rewards.iter().map(|r| r.r_rm_raw).collect();
    match standardize(&raw) {
        Ok(expected) => {
            for (i, (e, r)) in expected.iter().zip(&g.group.rewards).enumerate() {
                if (e - r.r_rm_std).abs() > 1e-9 {
                    problems.push(format!(
                        "step {} prompt {} response {i}: r_rm_std {} != standardized {e}",
                        g.step, g.group.prompt_id, r.r_rm_std
                    ));
                }
            }
        }
        Err(e) => problems.push(format!("step {} prompt {}: {e}", g.step, g.group.prompt_id)),
    }
    if g.group.responses.len() != g.group.rewards.len() {
        problems.push(format!(
            "step {} prompt {}: {} responses but {} rewards",
            g.step,
            g.group.prompt_id,
            g.group.responses.len(),
            g.group.rewards.len()
        ));
    }
    problems
}

pub fn rewards(a: &RewardsArgs, seed: u64) -> Result<Outcome, CliError> {
    if let Some(path) = &a.verify {
        let groups: Vec<StoredGroup> = read_jsonl(path)?;
        let problems: Vec<String> = groups.iter().flat_map(verify_group).collect();
        let rollouts: usize = groups.iter().map(|g| g.group.rewards.len()).sum();
        let mut out = header(
            "rewards",
            seed,
            json!({ "verify": path.display().to_string() }),
        );
        out.insert("groups".into(), json!(groups.len()));
        out.insert("rollouts".into(), json!(rollouts));
        out.insert("violations".into(), json!(problems));
        let violation = (!problems.is_empty())
            .then(|| format!("{} reward breakdown(s) inconsistent", problems.len()));
        return Ok(Outcome {
            json: Value::Object(out),
            violation,
        });
    }
    let path = a.input.as_ref().expect("clap requires --input or --verify");
    let requests: Vec<ScoreRequest> = read_jsonl(path)?;
    let scorer = HeuristicScorer::default();
    let model = ContextCopyModel::default();
    let mut scored = Vec::with_capacity(requests.len());
    for (i, req) in requests.iter().enumerate() {
        let ctx = RewardContext {
            prompt: &req.prompt,
            reference: &req.reference,
            mode: req.mode,
            scorer: &scorer,
            model: Some(&model),
        };
        let rewards = score_group(&ctx, &req.responses)
            .map_err(|e| CliError::Input(format!("{}:{}: {e}", path.display(), i + 1)))?;
        scored.push(json!({
            "prompt": req.prompt,
            "reference": req.reference,
            "mode": req.mode,
            "route": mllm_lab::rl::route_verifier(&req.reference),
            "rewards": rewards,
        }));
    }
    let mut out = header(
        "rewards",
        seed,
        json!({
            "input": path.display().to_string(),
            "scorer": { "marker_bonus": scorer.marker_bonus, "per_char_penalty": scorer.per_char_penalty },
            "probability_model": { "vocab": model.vocab, "smoothing": model.smoothing },
        }),
    );
    out.insert("groups".into(), json!(scored));
    Ok(Value::Object(out).into())
}
