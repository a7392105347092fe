use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use hat_core::infer::{generate, Batch, BatchStats, GenConfig, Policy, Sampling};
use hat_core::metrics::compression_report;
use hat_core::model::{count_params, forward, init_params, load_checkpoint, save_checkpoint, HatConfig, ParamSet};
use hat_core::splitter::{validate_utf8, Splitter};
use hat_core::train::{train_from, GroupPolicy, LrSchedule, TrainOptions};

use crate::{
    BenchArgs, Cli, Command, CompressArgs, CountArgs, GenerateArgs, ModelSource, RoundtripArgs, SamplingArgs, SplitArgs,
    TrainArgs,
};

const BUILTIN_TEXT: &str = include_str!("../../core/data/english_sample.txt");

pub fn run(cli: Cli) -> Result<()> {
    let kv = cli.kv;
    match cli.command {
        Command::Split(a) => split(a),
        Command::CountParams(a) => count(a, kv),
        Command::TrainToy(a) => train(a),
        Command::Generate(a) => gen(a),
        Command::BenchSched(a) => bench(a, kv),
        Command::Compress(a) => compress(a, kv),
        Command::CkptRoundtrip(a) => roundtrip(a),
    }
}

fn load_config(path: &Path) -> Result<HatConfig> {
    HatConfig::load(path).with_context(|| format!("loading config {}", path.display()))
}

fn load_model(src: &ModelSource) -> Result<ParamSet<f32>> {
    match (&src.ckpt, &src.config) {
        (Some(p), _) => load_checkpoint(p).with_context(|| format!("loading checkpoint {}", p.display())),
        (None, Some(c)) => Ok(init_params(&load_config(c)?, src.init_seed)),
        (None, None) => bail!("one of --ckpt or --config is required"),
    }
}

fn gen_config(s: &SamplingArgs) -> GenConfig {
    let sampling = match s.temperature {
        Some(temperature) if !s.greedy => Sampling::Temperature {
            temperature,
            seed: s.seed,
        },
        _ => Sampling::Greedy,
    };
    GenConfig {
        sampling,
        max_new_bytes: s.max_bytes,
    }
}

fn split(a: SplitArgs) -> Result<()> {
    let bytes = match (&a.text, &a.file) {
        (Some(t), _) => t.clone().into_bytes(),
        (None, Some(f)) => fs::read(f).with_context(|| format!("reading {}", f.display()))?,
        (None, None) => unreachable!("clap requires one source"),
    };
    let splitter = Splitter::new(a.max_word_bytes)?;
    let result = splitter.split(&bytes)?;
    let mut out = std::io::stdout().lock();
    if a.offsets {
        out.write_all(result.to_offsets_string().as_bytes())?;
        if !result.is_empty() {
            writeln!(out)?;
        }
    } else {
        for w in result.chunks(&bytes) {
            out.write_all(w)?;
            writeln!(out)?;
        }
    }
    Ok(())
}

fn count(a: CountArgs, kv: bool) -> Result<()> {
    let c = count_params(&load_config(&a.config)?);
    if kv {
        println!("encoder={}", c.encoder);
        println!("backbone={}", c.backbone);
        println!("decoder={}", c.decoder);
        println!("total={}", c.total());
        println!("backbone_per_layer={}", c.backbone_per_layer);
        println!("excluded_bos={}", c.excluded_bos);
    } else {
        println!("{c}");
    }
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let config = load_config(&a.config)?;
    let corpus = fs::read(&a.corpus).with_context(|| format!("reading {}", a.corpus.display()))?;
    let mut schedule = LrSchedule::toy(a.steps);
    if let Some(lr) = a.lr {
        schedule.stable_lr = lr;
    }
    let policy = if let Some(k) = a.freeze_backbone {
        GroupPolicy::hatification(k)
    } else if a.qk_only {
        GroupPolicy::query_key_only()
    } else if let Some(p) = &a.policy {
        GroupPolicy::parse(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?
    } else {
        GroupPolicy::default()
    };
    let options = TrainOptions {
        window: a.window,
        stop_below: a.stop_below,
        ..TrainOptions::default()
    };
    let start = Instant::now();
    let on_step = |s: u64, l: f64| {
        println!("{s}\t{l:.6}");
        log::debug!("step {s} loss {l:.6} after {:.1}s", start.elapsed().as_secs_f64());
    };
    let params: ParamSet<f32> = if a.f64 {
        let init = init_params::<f64>(&config, a.seed);
        let r = train_from(init, &corpus, &schedule, &policy, a.steps, a.seed, &options, on_step)?;
        r.params.convert()
    } else {
        let init = init_params::<f32>(&config, a.seed);
        train_from(init, &corpus, &schedule, &policy, a.steps, a.seed, &options, on_step)?.params
    };
    log::info!("trained in {:.1}s", start.elapsed().as_secs_f64());
    if let Some(out) = &a.out {
        save_checkpoint(&params, out).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(())
}

fn gen(a: GenerateArgs) -> Result<()> {
    let params = load_model(&a.model)?;
    let s = generate(&params, a.prompt.as_bytes(), gen_config(&a.sampling))?;
    if let Some(r) = s.finish_reason() {
        log::info!("finished: {r:?}");
    }
    let mut out = std::io::stdout().lock();
    if a.echo {
        out.write_all(s.prompt())?;
    }
    out.write_all(s.generated())?;
    out.flush()?;
    Ok(())
}

fn parse_policies(s: &str) -> Result<Vec<Policy>> {
    let p = match s {
        "both" => vec![Policy::BoundarySync, Policy::FixedByteStride(4)],
        "boundary-sync" => vec![Policy::BoundarySync],
        _ => match s.strip_prefix("stride:") {
            Some(n) => vec![Policy::FixedByteStride(
                n.parse().with_context(|| format!("bad stride `{n}`"))?,
            )],
            None => bail!("unknown policy `{s}` (boundary-sync, stride:<n>, both)"),
        },
    };
    for x in &p {
        x.validate()?;
    }
    Ok(p)
}

fn builtin_prompts(count: usize) -> Vec<String> {
    let words: Vec<&str> = BUILTIN_TEXT.split_whitespace().collect();
    (0..count)
        .map(|i| {
            let start = (i * 7) % words.len();
            let len = 1 + i % 5;
            words.iter().cycle().skip(start).take(len).copied().collect::<Vec<_>>().join(" ")
        })
        .collect()
}

fn policy_name(p: Policy) -> String {
    match p {
        Policy::BoundarySync => "boundary-sync".into(),
        Policy::FixedByteStride(n) => format!("stride:{n}"),
    }
}

fn bench(a: BenchArgs, kv: bool) -> Result<()> {
    let params = load_model(&a.model)?;
    let prompts = match &a.prompts {
        Some(p) => {
            let text = fs::read(p).with_context(|| format!("reading {}", p.display()))?;
            validate_utf8(&text)?.lines().map(String::from).collect()
        }
        None => builtin_prompts(a.count),
    };
    let gen = gen_config(&a.sampling);
    let mut traces = String::new();
    for policy in parse_policies(&a.policy)? {
        let mut batch = Batch::new(&params, policy)?;
        for p in &prompts {
            batch.submit(p.as_bytes(), gen)?;
        }
        let start = Instant::now();
        batch.run()?;
        let secs = start.elapsed().as_secs_f64();
        let name = policy_name(policy);
        report_stats(&name, batch.stats(), secs, kv);
        for line in batch.trace() {
            traces.push_str(&format!("{name}\t{line}\n"));
        }
        if a.check {
            let mut mismatches = 0;
            for (s, p) in batch.sessions().iter().zip(&prompts) {
                let solo = generate(&params, p.as_bytes(), gen)?;
                if solo.generated() != s.generated() || solo.logits_digest() != s.logits_digest() {
                    log::warn!("session {} differs from its unbatched run", s.id());
                    mismatches += 1;
                }
            }
            if kv {
                println!("{name}.mismatches={mismatches}");
            } else {
                println!("{name}: {mismatches} of {} sessions differ from unbatched runs", prompts.len());
            }
            if mismatches > 0 {
                bail!("{mismatches} batched sessions differ from unbatched runs");
            }
        }
    }
    if let Some(path) = &a.trace {
        fs::write(path, traces).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn report_stats(name: &str, s: BatchStats, secs: f64, kv: bool) {
    let rows = [
        ("ticks", s.ticks),
        ("prefills", s.prefills),
        ("byte_steps", s.byte_steps),
        ("encoder_calls", s.encoder_calls),
        ("decoder_calls", s.decoder_calls),
        ("backbone_calls", s.backbone_calls),
        ("backbone_positions", s.backbone_positions),
    ];
    if kv {
        for (k, v) in rows {
            println!("{name}.{k}={v}");
        }
        println!("{name}.seconds={secs:.3}");
    } else {
        println!("policy {name}");
        for (k, v) in rows {
            println!("  {k:<19}{v}");
        }
        println!("  {:<19}{secs:.3}", "seconds");
    }
}

fn compress(a: CompressArgs, kv: bool) -> Result<()> {
    let splitter = Splitter::new(a.max_word_bytes)?;
    let report = compression_report(&splitter, &a.files);
    print!("{}", if kv { report.render_kv() } else { report.render_text() });
    if !report.failures.is_empty() {
        bail!("{} of {} files failed", report.failures.len(), a.files.len());
    }
    Ok(())
}

fn bits(p: &ParamSet<f32>) -> Vec<(String, Vec<u32>)> {
    p.tensors()
        .into_iter()
        .map(|(n, t)| (n, t.data().iter().map(|x| x.to_bits()).collect()))
        .collect()
}

fn roundtrip(a: RoundtripArgs) -> Result<()> {
    let params = load_model(&a.model)?;
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("roundtrip.ckpt");
    save_checkpoint(&params, &path)?;
    let size = fs::metadata(&path)?.len();
    let back = load_checkpoint(&path)?;
    if back.config != params.config {
        bail!("config changed across the round trip");
    }
    if bits(&back) != bits(&params) {
        bail!("weights changed across the round trip");
    }
    let l0 = forward(&params, a.text.as_bytes())?;
    let l1 = forward(&back, a.text.as_bytes())?;
    let same = l0.logits.data().iter().zip(l1.logits.data()).all(|(x, y)| x.to_bits() == y.to_bits());
    if !same {
        bail!("forward logits changed across the round trip");
    }
    println!("ok: {} tensors, {} parameters, {size} bytes, logits bit-identical", bits(&params).len(), params.numel());
    Ok(())
}
