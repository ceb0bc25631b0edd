use crate::{Cli, Command};
use fxrep_core::config::{Preset, RunConfig};
use fxrep_core::datagen::SourceLibrary;
use fxrep_core::dsp::chain::FxChain;
use fxrep_core::dsp::wav::{read_wav, write_wav, WavFormat};
use fxrep_core::error::{Error, Result};
use fxrep_core::eval::{
    build_pool, effect_count_sweep, make_triplet, metrics_with_query_class, param_match,
    retrieval_metrics, seven_effect_template, RetrievalMetrics, Scenario,
};
use fxrep_core::model::{load_checkpoint, logmel, MelFrontend, ModelConfig, ParamStore};
use fxrep_core::rng::derive_seed;
use fxrep_core::training::train;
use std::io::Write;
use std::path::{Path, PathBuf};

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::from_file(path)?,
        None => {
            let preset: Preset = cli.preset.parse()?;
            RunConfig::preset(preset)
        }
    };
    if let Some(seed) = cli.seed {
        cfg.apply_master_seed(seed);
    }
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    fxrep_core::parallel::configure_threads(cfg.threads);
    cfg.validate()?;
    Ok(cfg)
}

fn build_library(cfg: &RunConfig) -> Result<SourceLibrary> {
    let mut lib_cfg = cfg.library.clone();
    lib_cfg.seed = cfg.training.seeds.library;
    match &cfg.paths.library {
        Some(dir) => SourceLibrary::from_dir(lib_cfg, dir),
        None => SourceLibrary::synthetic(lib_cfg),
    }
}

fn write_effective_config(cfg: &RunConfig, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    cfg.save(&dir.join("config.json"))
}

pub fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::SynthData { out } => synth_data(&cli, out),
        Command::Train { out } => train_cmd(&cli, out),
        Command::EvalRetrieval {
            checkpoint,
            out,
            scenarios,
            sweep,
        } => eval_retrieval(&cli, checkpoint, out, scenarios, *sweep),
        Command::EvalMatch {
            checkpoint,
            out,
            triplets_per_class,
            gain_only,
        } => eval_match(&cli, checkpoint, out, *triplets_per_class, *gain_only),
        Command::Embed {
            checkpoint,
            query,
            query_file,
            out,
            wavs,
        } => embed(checkpoint, query.as_deref(), query_file.as_deref(), out, wavs),
        Command::FxApply {
            chain,
            input,
            output,
            format,
        } => fx_apply(chain, input, output, format),
        Command::Gradcheck => gradcheck(),
    }
}

fn synth_data(cli: &Cli, out: &Path) -> Result<()> {
    let cfg = load_config(cli)?;
    let library = build_library(&cfg)?;
    write_effective_config(&cfg, out)?;
    let stems_dir = out.join("stems");
    for class in library.classes() {
        let class_dir = stems_dir.join(class);
        std::fs::create_dir_all(&class_dir)?;
        for i in 0..library.stem_count(class) {
            let stem = library.raw_stem(class, i)?;
            write_wav(
                &class_dir.join(format!("{class}_{i:03}.wav")),
                stem,
                WavFormat::Float32,
            )?;
        }
    }
    let manifest = library.manifest();
    std::fs::write(
        out.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    library.profile().save(&out.join("profile.json"))?;
    println!(
        "wrote {} stems across {} classes to {}",
        manifest.entries.len(),
        library.classes().len(),
        out.display()
    );
    Ok(())
}

fn train_cmd(cli: &Cli, out: &Path) -> Result<()> {
    let cfg = load_config(cli)?;
    let library = build_library(&cfg)?;
    write_effective_config(&cfg, out)?;
    let result = train(&cfg.model, &cfg.batch, &cfg.training, &library, Some(out))?;
    println!(
        "trained {} steps, final loss {:.4}; checkpoint at {}",
        cfg.training.steps,
        result.final_loss,
        result.checkpoint_path.unwrap().display()
    );
    Ok(())
}

fn scenario_from_name(name: &str) -> Result<Scenario> {
    match name {
        "mixture-level" => Ok(Scenario::MixtureLevel),
        "instrument-oracle" => Ok(Scenario::InstrumentOracle),
        "instrument-extracted" => Ok(Scenario::InstrumentExtracted),
        other => Err(Error::InvalidConfig(format!("unknown scenario {other}"))),
    }
}

fn format_metrics_row(label: &str, m: &RetrievalMetrics) -> String {
    format!(
        "{label:<22} R@1 {:6.1}%  R@5 {:6.1}%  R@10 {:6.1}%  mAP@10 {:6.1}%",
        m.r_at_1 * 100.0,
        m.r_at_5 * 100.0,
        m.r_at_10 * 100.0,
        m.map_at_10 * 100.0
    )
}

fn eval_retrieval(
    cli: &Cli,
    checkpoint: &Path,
    out: &Path,
    scenarios: &[String],
    sweep: bool,
) -> Result<()> {
    let cfg = load_config(cli)?;
    let (model_cfg, store) = load_checkpoint(checkpoint)?;
    let library = build_library(&cfg)?;
    write_effective_config(&cfg, out)?;
    let mut summary = serde_json::Map::new();
    for name in scenarios {
        let scenario = scenario_from_name(name)?;
        let pool = build_pool(&library, &store, &model_cfg, &cfg.eval, 3, scenario)?;
        let metrics = retrieval_metrics(&pool);
        let mut lines = vec![format_metrics_row(name, &metrics)];
        let mut scen_summary = serde_json::Map::new();
        scen_summary.insert("metrics".into(), serde_json::to_value(metrics)?);
        if scenario == Scenario::InstrumentExtracted {
            let classes = library.classes().to_vec();
            let mismatched = metrics_with_query_class(&pool, &store, &model_cfg, |target| {
                classes
                    .iter()
                    .find(|c| c.as_str() != target)
                    .cloned()
                    .unwrap_or_else(|| target.to_string())
            })?;
            lines.push(format_metrics_row("  (mismatched query)", &mismatched));
            scen_summary.insert("mismatched_query".into(), serde_json::to_value(mismatched)?);
        }
        if sweep && name == &scenarios[0] {
            let counts: Vec<usize> = (1..=8).collect();
            let rows = effect_count_sweep(&library, &store, &model_cfg, &cfg.eval, &counts, scenario)?;
            lines.push("effect-count sweep:".to_string());
            let mut sweep_json = Vec::new();
            for (n, m) in &rows {
                lines.push(format_metrics_row(&format!("  {n} effects"), m));
                sweep_json.push(serde_json::json!({ "n_effects": n, "metrics": m }));
            }
            scen_summary.insert("sweep".into(), serde_json::Value::Array(sweep_json));
        }
        let table = lines.join("\n");
        println!("{table}");
        std::fs::write(out.join(format!("{name}.txt")), table + "\n")?;
        summary.insert(name.clone(), serde_json::Value::Object(scen_summary));
    }
    std::fs::write(
        out.join("summary.json"),
        serde_json::to_string_pretty(&serde_json::Value::Object(summary))?,
    )?;
    Ok(())
}

fn eval_match(
    cli: &Cli,
    checkpoint: &Path,
    out: &Path,
    triplets_per_class: usize,
    gain_only: bool,
) -> Result<()> {
    let cfg = load_config(cli)?;
    let (model_cfg, store) = load_checkpoint(checkpoint)?;
    let library = build_library(&cfg)?;
    write_effective_config(&cfg, out)?;
    let template = if gain_only {
        vec![fxrep_core::dsp::effects::EffectType::Gain]
    } else {
        seven_effect_template()
    };
    let mut lines = vec![format!(
        "{:<12} {:>4} {:>12} {:>12} {:>10}",
        "class", "idx", "baseline_L_d", "matched_L_d", "reduction"
    )];
    let mut rows = Vec::new();
    for class in library.classes() {
        for i in 0..triplets_per_class {
            let seed = derive_seed(cfg.matching.seed, (i + 1) as u64);
            let triplet = make_triplet(
                &library,
                &template,
                class,
                derive_seed(seed, library.class_index(class)? as u64),
                model_cfg.segment_secs,
            )?;
            let result = param_match(&triplet, &template, &store, &model_cfg, &cfg.matching)?;
            let reduction = 1.0 - result.l_d / result.baseline_l_d.max(1e-12);
            lines.push(format!(
                "{:<12} {:>4} {:>12.4} {:>12.4} {:>9.1}%",
                class,
                i,
                result.baseline_l_d,
                result.l_d,
                reduction * 100.0
            ));
            rows.push(serde_json::json!({
                "class": class, "index": i,
                "baseline_l_d": result.baseline_l_d,
                "l_d": result.l_d,
            }));
        }
    }
    let table = lines.join("\n");
    println!("{table}");
    std::fs::write(out.join("l_d_table.txt"), table + "\n")?;
    std::fs::write(
        out.join("summary.json"),
        serde_json::to_string_pretty(&serde_json::json!({ "triplets": rows }))?,
    )?;
    Ok(())
}

fn read_query_file(path: &Path, dim: usize) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::InvalidConfig("empty query file".into()))?;
    let declared: usize = header
        .strip_prefix("dim ")
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| Error::InvalidConfig("query file must start with `dim N`".into()))?;
    if declared != dim {
        return Err(Error::ShapeMismatch(format!(
            "query file dimension {declared} does not match model {dim}"
        )));
    }
    let vec_line = lines
        .next()
        .ok_or_else(|| Error::InvalidConfig("query file has no vector line".into()))?;
    let values: Vec<f64> = vec_line
        .split_whitespace()
        .map(|t| t.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::InvalidConfig(format!("bad query value: {e}")))?;
    if values.len() != dim {
        return Err(Error::ShapeMismatch(format!(
            "query vector has {} values, expected {dim}",
            values.len()
        )));
    }
    Ok(values)
}

fn embed(
    checkpoint: &Path,
    query: Option<&str>,
    query_file: Option<&Path>,
    out: &Path,
    wavs: &[PathBuf],
) -> Result<()> {
    let (model_cfg, store) = load_checkpoint(checkpoint)?;
    let frontend = MelFrontend::new(&model_cfg);
    let external = match query_file {
        Some(p) => Some(read_query_file(p, model_cfg.query_dim)?),
        None => None,
    };
    let mut file = std::io::BufWriter::new(std::fs::File::create(out)?);
    writeln!(file, "dim {}", model_cfg.embed_dim)?;
    for wav in wavs {
        let buf = read_wav(wav)?;
        fxrep_core::dsp::wav::expect_sample_rate(&buf, model_cfg.sample_rate, "embed")?;
        let needed = model_cfg.segment_samples();
        if buf.len() < needed {
            return Err(Error::Audio(format!(
                "{}: too short ({} samples, need {needed})",
                wav.display(),
                buf.len()
            )));
        }
        let segment = buf.segment(0, needed)?;
        let feats = logmel(&segment, &frontend)?;
        let emb = embed_features(&store, &model_cfg, &feats, query, external.as_deref())?;
        let text: Vec<String> = emb.iter().map(|v| format!("{v:.8}")).collect();
        writeln!(file, "{}", text.join(" "))?;
        println!("{}: embedded ({} dims)", wav.display(), emb.len());
    }
    Ok(())
}

fn embed_features(
    store: &ParamStore,
    model_cfg: &ModelConfig,
    feats: &fxrep_core::model::Features,
    query: Option<&str>,
    external: Option<&[f64]>,
) -> Result<Vec<f64>> {
    use fxrep_core::autodiff::Tape;
    use fxrep_core::model::{bind_params, encode, extract, query_vector, QueryMode, QuerySource};
    let mut tape = Tape::new();
    let b = bind_params(&mut tape, store, false);
    let ft = tape.constant(feats.values.clone(), &[feats.frames, feats.mel_bins]);
    let z = encode(&mut tape, &b, model_cfg, ft)?;
    let out = match (query, external) {
        (Some(class), _) => {
            let mut rng = fxrep_core::rng::rng_from_seed(0);
            let q = query_vector(
                &mut tape,
                &b,
                model_cfg,
                QuerySource::Class(class),
                QueryMode::Eval,
                &mut rng,
            )?;
            extract(&mut tape, &b, model_cfg, q, z)?
        }
        (None, Some(vec)) => {
            let mut rng = fxrep_core::rng::rng_from_seed(0);
            let q = query_vector(
                &mut tape,
                &b,
                model_cfg,
                QuerySource::External(vec),
                QueryMode::Eval,
                &mut rng,
            )?;
            extract(&mut tape, &b, model_cfg, q, z)?
        }
        (None, None) => z,
    };
    Ok(tape.values(out).to_vec())
}

#[derive(serde::Deserialize)]
struct ChainDocument {
    effects: Vec<fxrep_core::dsp::effects::EffectSpec>,
    #[serde(default)]
    rng_seed: u64,
}

fn fx_apply(chain_path: &Path, input: &Path, output: &Path, format: &str) -> Result<()> {
    let doc: ChainDocument = serde_json::from_str(&std::fs::read_to_string(chain_path)?)?;
    let chain = FxChain::new(doc.effects, doc.rng_seed);
    chain.validate()?;
    let buf = read_wav(input)?;
    let rendered = fxrep_core::dsp::chain::apply_chain(&buf, &chain)?;
    let fmt = match format {
        "pcm16" => WavFormat::Pcm16,
        "float32" => WavFormat::Float32,
        other => {
            return Err(Error::InvalidConfig(format!(
                "unknown format {other} (pcm16 or float32)"
            )))
        }
    };
    write_wav(output, &rendered, fmt)?;
    println!(
        "applied {} effects to {} -> {}",
        chain.effects.len(),
        input.display(),
        output.display()
    );
    Ok(())
}

fn gradcheck() -> Result<()> {
    let reports = fxrep_core::gradsuite::run_suite()?;
    let mut failed = 0;
    for r in &reports {
        let status = if r.passed() { "PASS" } else { "FAIL" };
        println!(
            "{status} {:<38} max rel err {:.3e} (tol {:.0e})",
            r.name, r.max_rel_err, r.tolerance
        );
        if !r.passed() {
            failed += 1;
        }
    }
    println!("{} checks, {} failed", reports.len(), failed);
    if failed > 0 {
        return Err(Error::NonFinite(format!("{failed} gradient checks failed")));
    }
    Ok(())
}
