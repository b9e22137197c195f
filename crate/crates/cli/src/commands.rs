use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use featsel::checkpoint::{decode_checkpoint_headers, load_checkpoint, save_checkpoint, FSCK_MAGIC};
use featsel::data::{
    common_dim, decode_feature_headers, generate_planted_redundancy, load_feature_file, save_feature_file,
    PlantedSpec, FSEL_MAGIC,
};
use featsel::eval::evaluate_policies;
use featsel::grad_check::GradCheckOptions;
use featsel::gumbel::sample_gumbel_noise;
use featsel::networks::{init_networks, NetworkConfig};
use featsel::objective::check_full_loss;
use featsel::select::{pruned_feature_set, select_top_k};
use featsel::tensor::Tensor;
use featsel::train::{metrics_csv, TrainConfig, Trainer};
use featsel::{seed, FeatureSet, Scalar};

use crate::error::{at, CliError};
use crate::manifest::{beside, RunManifest};
use crate::settings::Settings;

const GRAD_CHECK_MAX_TOKENS: usize = 8;
const GRAD_CHECK_MAX_DIM: usize = 16;
const DEFAULT_RATIOS: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];
const DEFAULT_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

/// Writes to stdout, tolerating a closed pipe.
fn stdout(text: &str) {
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn load_sets(path: &Path) -> Result<Vec<FeatureSet>, CliError> {
    load_feature_file(path).map_err(at(path))
}

/// Refuses to write over any input file.
fn guard_outputs(inputs: &[&Path], outputs: &[&Path]) -> Result<(), CliError> {
    let canon = |p: &Path| fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf());
    for o in outputs {
        if inputs.iter().any(|i| canon(i) == canon(o)) {
            return Err(CliError::Usage(format!("output {} would overwrite an input", o.display())));
        }
    }
    Ok(())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn gen_data(mut s: Settings) -> Result<(), CliError> {
    let spec = PlantedSpec {
        sets: s.take_or("sets", 100)?,
        tokens: s.take_or("tokens", 16)?,
        dim: s.take_or("dim", 32)?,
        rank: s.take_or("rank", 8)?,
        noise_sigma: s.take_or("noise", 0.01)?,
        seed: s.take_or("seed", 0)?,
    };
    let out: PathBuf = s.require("out")?;
    s.finish()?;
    spec.validate()?;

    let corpus = generate_planted_redundancy::<f32>(&spec)?;
    save_feature_file(&out, &corpus.sets).map_err(at(&out))?;

    let positions = corpus
        .basis_positions
        .iter()
        .map(|p| p.to_string())
        .collect::<Vec<_>>()
        .join(",");
    let mut meta = format!("basis_positions={positions}\n");
    for (pos, mix) in corpus.mixing.iter().enumerate() {
        let terms: Vec<String> = mix.iter().map(|(b, w)| format!("{b}:{w}")).collect();
        let _ = writeln!(meta, "mixing.{pos}={}", terms.join(","));
    }
    for set in &corpus.sets {
        let _ = writeln!(meta, "record.{}={positions}", set.id);
    }
    let mut meta_path = out.as_os_str().to_owned();
    meta_path.push(".meta");
    let meta_path = PathBuf::from(meta_path);
    write(&meta_path, meta)?;

    let mut m = RunManifest::new("gen-data");
    m.setting("sets", spec.sets)
        .setting("tokens", spec.tokens)
        .setting("dim", spec.dim)
        .setting("rank", spec.rank)
        .setting("noise", spec.noise_sigma)
        .setting("seed", spec.seed)
        .output("out", &out);
    m.write(&beside(&out))?;
    eprintln!(
        "wrote {} records ({}x{}, rank {}) to {}",
        spec.sets,
        spec.tokens,
        spec.dim,
        spec.rank,
        out.display()
    );
    Ok(())
}

pub fn train(mut s: Settings) -> Result<(), CliError> {
    let data_path: PathBuf = s.require("data")?;
    let out: PathBuf = s.require("out")?;
    let resume: Option<PathBuf> = s.take("resume")?;
    let overrides = s.drain();

    let sets = load_sets(&data_path)?;
    let ckpt = match &resume {
        Some(p) => Some(load_checkpoint(p).map_err(at(p))?),
        None => None,
    };
    let mut config = match &ckpt {
        Some(c) => c.config.clone(),
        None => {
            let dim = common_dim(&sets)?;
            TrainConfig {
                dim,
                max_tokens: sets.iter().map(|s| s.tokens()).max().unwrap_or(1),
                ..TrainConfig::default()
            }
        }
    };
    let mut problems = Vec::new();
    for (k, v) in &overrides {
        if let Err(e) = config.set(k, v) {
            problems.push(e.to_string());
        }
    }
    if ckpt.is_none() && !overrides.iter().any(|(k, _)| k == "heads") {
        config.heads = NetworkConfig::default_heads(config.dim);
    }
    problems.extend(config.problems().into_iter().map(|p| format!("invalid configuration: {p}")));
    if !problems.is_empty() {
        return Err(CliError::Usage(problems.join("; ")));
    }

    let mut trainer = match &ckpt {
        Some(c) => Trainer::<f32>::from_checkpoint(c, Some(config.clone()), &sets)?,
        None => Trainer::<f32>::new(config.clone(), &sets)?,
    };
    let model = out.join("model.fsck");
    let metrics = out.join("metrics.csv");
    let manifest = out.join("manifest.txt");
    let mut inputs = vec![data_path.as_path()];
    if let Some(r) = &resume {
        inputs.push(r);
    }
    guard_outputs(&inputs, &[&model, &metrics, &manifest])?;
    fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;

    let total = config.steps;
    let log = trainer.run(|m| {
        if m.step % 100 == 0 || m.step == total {
            eprintln!(
                "step {:>6}  reconstruction {:.5}  l_pr {:.4}  total {:.5}",
                m.step, m.reconstruction, m.l_pr, m.total
            );
        }
    })?;
    save_checkpoint(&trainer.checkpoint(), &model).map_err(at(&model))?;
    write(&metrics, metrics_csv(&log))?;

    let mut m = RunManifest::new("train");
    m.input("data", &data_path);
    if let Some(r) = &resume {
        m.input("resume", r);
    }
    m.setting("out", out.display());
    for (k, v) in config.to_kv() {
        m.setting(&k, v);
    }
    m.artifact("model", &model).artifact("metrics", &metrics);
    m.write(&manifest)?;
    eprintln!("wrote {}, {} and {}", model.display(), metrics.display(), manifest.display());
    Ok(())
}

fn load_model(
    path: &Path,
) -> Result<(featsel::SelectorNetwork, featsel::ReconstructorNetwork, TrainConfig), CliError> {
    let ckpt = load_checkpoint(path).map_err(at(path))?;
    let (sel, rec) = ckpt.networks::<f32>()?;
    Ok((sel, rec, ckpt.config))
}

fn check_compatible(config: &TrainConfig, sets: &[FeatureSet]) -> Result<(), CliError> {
    let dim = common_dim(sets)?;
    if dim != config.dim {
        return Err(CliError::Usage(format!(
            "data feature width {dim} differs from checkpoint dim {}",
            config.dim
        )));
    }
    if let Some(s) = sets.iter().find(|s| s.tokens() > config.max_tokens) {
        return Err(CliError::Usage(format!(
            "record '{}' has {} tokens, checkpoint supports at most {}",
            s.id,
            s.tokens(),
            config.max_tokens
        )));
    }
    Ok(())
}

pub fn select(mut s: Settings) -> Result<(), CliError> {
    let ckpt_path: PathBuf = s.require("ckpt")?;
    let data_path: PathBuf = s.require("data")?;
    let ratio: f64 = s.take_or("ratio", 0.5)?;
    let out: Option<PathBuf> = s.take("out")?;
    let pruned_path: Option<PathBuf> = s.take("pruned")?;
    s.finish()?;
    featsel::select::retained_count(ratio, 1)?;
    let outputs: Vec<&Path> = out.iter().chain(pruned_path.iter()).map(PathBuf::as_path).collect();
    guard_outputs(&[&ckpt_path, &data_path], &outputs)?;

    let (sel, _, config) = load_model(&ckpt_path)?;
    let sets = load_sets(&data_path)?;
    check_compatible(&config, &sets)?;

    let mut csv = String::from("record_id,ratio,indices\n");
    let mut pruned = Vec::with_capacity(sets.len());
    for set in &sets {
        let r = select_top_k(&sel, &set.features, ratio)?;
        let idx: Vec<String> = r.retained_indices.iter().map(|i| i.to_string()).collect();
        let _ = writeln!(csv, "{},{ratio},{}", csv_field(&set.id), idx.join(","));
        pruned.push(pruned_feature_set(set, &r)?);
    }
    match &out {
        Some(p) => write(p, &csv)?,
        None => stdout(&csv),
    }
    if let Some(p) = &pruned_path {
        save_feature_file(p, &pruned).map_err(at(p))?;
    }
    if let Some(manifest_at) = out.as_ref().or(pruned_path.as_ref()) {
        let mut m = RunManifest::new("select");
        m.input("ckpt", &ckpt_path).input("data", &data_path).setting("ratio", ratio);
        if let Some(p) = &out {
            m.output("out", p);
        }
        if let Some(p) = &pruned_path {
            m.output("pruned", p);
        }
        m.write(&beside(manifest_at))?;
    }
    Ok(())
}

pub fn evaluate(mut s: Settings) -> Result<(), CliError> {
    let ckpt_path: PathBuf = s.require("ckpt")?;
    let data_path: PathBuf = s.require("data")?;
    let ratios: Vec<f64> = s.take_list("ratios")?.unwrap_or_else(|| DEFAULT_RATIOS.to_vec());
    let seeds: Vec<u64> = s.take_list("seeds")?.unwrap_or_else(|| DEFAULT_SEEDS.to_vec());
    let out: PathBuf = s.require("out")?;
    s.finish()?;
    let mut summary_path = out.as_os_str().to_owned();
    summary_path.push(".summary");
    let summary_path = PathBuf::from(summary_path);
    guard_outputs(&[&ckpt_path, &data_path], &[&out, &summary_path])?;

    let (sel, rec, config) = load_model(&ckpt_path)?;
    let sets = load_sets(&data_path)?;
    check_compatible(&config, &sets)?;

    let report = evaluate_policies(&sel, &rec, &sets, &ratios, &seeds)?;
    write(&out, report.to_csv())?;
    write(&summary_path, report.summary_csv())?;
    for sm in &report.summaries {
        println!(
            "{:<8} ratio {:<5} distance {:.5} +- {:.5} (n={})",
            sm.policy.to_string(),
            sm.ratio,
            sm.mean,
            sm.std,
            sm.count
        );
    }

    let join = |xs: Vec<String>| xs.join(",");
    let mut m = RunManifest::new("evaluate");
    m.input("ckpt", &ckpt_path)
        .input("data", &data_path)
        .setting("ratios", join(ratios.iter().map(|r| r.to_string()).collect()))
        .setting("seeds", join(seeds.iter().map(|r| r.to_string()).collect()))
        .output("out", &out);
    m.write(&beside(&out))?;
    Ok(())
}

fn run_grad_check<T: Scalar>(
    cfg: &NetworkConfig,
    seed_value: u64,
    tokens: usize,
    tau: f64,
    p: f64,
    options: GradCheckOptions,
    corrupt: bool,
) -> Result<featsel::grad_check::GradCheckReport, CliError> {
    let (sel, rec) = init_networks::<T>(cfg, seed_value)?;
    let features = generate_planted_redundancy::<T>(&PlantedSpec {
        sets: 1,
        tokens,
        dim: cfg.dim,
        rank: tokens,
        noise_sigma: 0.0,
        seed: seed_value,
    })?
    .sets
    .remove(0)
    .features;
    let mut rng = seed::rng(seed_value, seed::GUMBEL, &[]);
    let noise = Tensor::new(vec![tokens, 2], sample_gumbel_noise(tokens * 2, &mut rng))?;
    Ok(check_full_loss(&sel, &rec, &features, &noise, T::of(tau), T::of(p), options, corrupt)?)
}

pub fn grad_check(mut s: Settings, corrupt: bool) -> Result<(), CliError> {
    let tokens: usize = s.take_or("tokens", 4)?;
    let dim: usize = s.take_or("dim", 8)?;
    let heads: usize = s.take_or("heads", 2)?;
    let seed_value: u64 = s.take_or("seed", 0)?;
    let tau: f64 = s.take_or("tau", 1.0)?;
    let p: f64 = s.take_or("p", 0.5)?;
    let precision: String = s.take_or("precision", "f64".to_string())?;
    let defaults = match precision.as_str() {
        "f64" => GradCheckOptions::for_precision::<f64>(),
        "f32" => GradCheckOptions::for_precision::<f32>(),
        other => return Err(CliError::Usage(format!("precision: expected f64 or f32, got {other:?}"))),
    };
    let options = GradCheckOptions {
        tol: s.take_or("tol", defaults.tol)?,
        h: s.take_or("h", defaults.h)?,
        ..defaults
    };
    let out: Option<PathBuf> = s.take("out")?;
    s.finish()?;

    if tokens == 0 || tokens > GRAD_CHECK_MAX_TOKENS {
        return Err(CliError::Usage(format!(
            "tokens: must lie in 1..={GRAD_CHECK_MAX_TOKENS}, got {tokens}"
        )));
    }
    if dim == 0 || dim > GRAD_CHECK_MAX_DIM {
        return Err(CliError::Usage(format!("dim: must lie in 1..={GRAD_CHECK_MAX_DIM}, got {dim}")));
    }
    featsel::objective::validate_retention(p)?;
    let cfg = NetworkConfig::new(dim, tokens, heads)?;
    let report = match precision.as_str() {
        "f32" => run_grad_check::<f32>(&cfg, seed_value, tokens, tau, p, options, corrupt)?,
        _ => run_grad_check::<f64>(&cfg, seed_value, tokens, tau, p, options, corrupt)?,
    };
    let text = format!(
        "full loss gradient check: L={tokens} C={dim} heads={heads} precision={precision} seed={seed_value}\n\
         {:<40} {:>6} {:>12}\n{report}\n",
        "parameter", "size", "rel error"
    );
    print!("{text}");
    if let Some(path) = &out {
        write(path, &text)?;
        let mut m = RunManifest::new("grad-check");
        m.setting("tokens", tokens)
            .setting("dim", dim)
            .setting("heads", heads)
            .setting("seed", seed_value)
            .setting("tau", tau)
            .setting("p", p)
            .setting("tol", options.tol)
            .setting("h", options.h)
            .setting("precision", &precision)
            .output("out", path);
        m.write(&beside(path))?;
    }
    if report.passed() {
        Ok(())
    } else {
        let names: Vec<_> = report.failures().map(|e| e.name.clone()).collect();
        Err(CliError::Check(format!("gradient mismatch in {}", names.join(", "))))
    }
}

pub fn inspect(files: &[PathBuf]) -> Result<(), CliError> {
    for path in files {
        let mut text = String::new();
        let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
        let _ = writeln!(text, "{}", path.display());
        match bytes.get(..4) {
            Some(m) if m == FSEL_MAGIC => {
                let headers = decode_feature_headers(&bytes).map_err(at(path))?;
                let _ = writeln!(text, "  FSEL v1, {} records", headers.len());
                for h in headers {
                    let grid = h.grid.map_or("-".to_string(), |(a, b)| format!("{a}x{b}"));
                    let _ = writeln!(text, "  {:<24} L={:<5} C={:<5} grid={grid:<7} offset={}", h.id, h.tokens, h.dim, h.offset);
                }
            }
            Some(m) if m == FSCK_MAGIC => {
                let (entries, block) = decode_checkpoint_headers(&bytes).map_err(at(path))?;
                let _ = writeln!(text, "  FSCK v1, {} tensors", entries.len());
                for e in entries {
                    let _ = writeln!(text, "  {:<48} {:?}", e.name, e.shape);
                }
                let _ = writeln!(text, "  config:");
                for line in block.lines() {
                    let _ = writeln!(text, "    {line}");
                }
            }
            _ => return Err(CliError::io(path, "not an FSEL or FSCK file")),
        }
        stdout(&text);
    }
    Ok(())
}
