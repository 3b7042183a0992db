use anyhow::anyhow;
use serde::Serialize;

use hbsim::dataflow::{schedule_gqa_naive, schedule_gqa_optimized, AttentionConfig, TailCycleParams, Timeline, Unit};
use hbsim::dram::{sweep_btt, SweepPoint};
use hbsim::quant::format::write_weight_dir;
use hbsim::system::{
    capacity_check, decode_throughput, max_context, model_breakdown, run_tiny_model_e2e, CapacityReport, ModelBreakdown,
    ThroughputReport, TinyWeights, MIB,
};
use hbsim::vpu::EngineConfig;
use hbsim::Presets;

use crate::output::Artifacts;
use crate::{verify, Cli, Command, Failure, Mode};

pub const SWEEP_BYTES: u64 = 256 << 10;
/// BTTs within this much utilization of the best are reported as peaks.
const PEAK_TOLERANCE: f64 = 0.0025;

fn presets(cli: &Cli) -> Result<Presets, Failure> {
    Ok(match &cli.config {
        Some(path) => Presets::load(path)?,
        None => Presets::builtin()?,
    })
}

pub fn run(cli: &Cli) -> Result<(), Failure> {
    let p = presets(cli)?;
    let mut out = Artifacts::new(&cli.out, cli.format)?;
    let finish = |out: Artifacts, name: &str, presets: &[(&str, &str)]| out.finish(name, cli.config.as_deref(), presets, cli.seed);
    match &cli.command {
        Command::SweepBtt { platform } => {
            sweep(&p, platform, &mut out)?;
            finish(out, "sweep-btt", &[("platform", platform)])
        }
        Command::Schedule {
            model,
            group_size,
            context,
            mode,
        } => {
            let result = schedule(&p, model, *group_size, *context, *mode, &mut out)?;
            finish(out, "schedule", &[("model", model)])?;
            result
        }
        Command::Throughput { model, platform, context } => {
            let result = throughput(&p, model, platform, *context, &mut out)?;
            finish(out, "throughput", &[("model", model), ("platform", platform)])?;
            result
        }
        Command::Breakdown { model } => {
            breakdown(&p, model, &mut out)?;
            finish(out, "breakdown", &[("model", model)])
        }
        Command::Capacity { model, platform, context } => {
            let result = capacity(&p, model, platform, *context, &mut out)?;
            finish(out, "capacity", &[("model", model), ("platform", platform)])?;
            result
        }
        Command::Verify { sizes, weights } => {
            let result = verify::run(&p, cli.seed, sizes, weights.as_deref(), &mut out)?;
            finish(out, "verify", &[("model", "tiny")])?;
            result
        }
        Command::RunTiny { model, steps } => {
            let result = run_tiny(&p, model, *steps, cli.seed, &mut out)?;
            finish(out, "run-tiny", &[("model", model)])?;
            result
        }
    }
}

#[derive(Serialize)]
struct SweepReport<'a> {
    platform: &'a str,
    channel: &'a str,
    matrix_bytes: u64,
    ports: usize,
    peak_btts: Vec<u64>,
    points: &'a [SweepPoint],
}

fn sweep(p: &Presets, platform: &str, out: &mut Artifacts) -> Result<(), Failure> {
    let pl = p.platform(platform)?;
    let ch = &pl.channels[0];
    let btts: Vec<u64> = (10..=18).map(|k| 1u64 << k).collect();
    let points = sweep_btt(&ch.dram, SWEEP_BYTES, ch.ports, &btts)?;
    let best = points.iter().map(|q| q.utilization).fold(0f64, f64::max);
    let peak_btts: Vec<u64> = points.iter().filter(|q| q.utilization >= best - PEAK_TOLERANCE).map(|q| q.btt_bytes).collect();
    println!("{:>8}  {:>11}  {:>12}", "btt", "utilization", "row_switches");
    for q in &points {
        println!("{:>8}  {:>11.4}  {:>12}", q.btt_bytes, q.utilization, q.row_switches);
    }
    println!("peak BTT: {peak_btts:?} (utilization {best:.4})");
    let report = SweepReport {
        platform,
        channel: &ch.name,
        matrix_bytes: SWEEP_BYTES,
        ports: ch.ports,
        peak_btts,
        points: &points,
    };
    out.emit("sweep_btt", &report, &points)
}

#[derive(Serialize)]
struct IdleSummary {
    unit: &'static str,
    busy_cycles: u64,
    idle_cycles: u64,
}

#[derive(Serialize)]
struct ScheduleReport<'a> {
    model: &'a str,
    mode: &'static str,
    group_size: usize,
    context: usize,
    total_cycles: u64,
    vpu_idle_after_fill: u64,
    idle: Vec<IdleSummary>,
    valid: bool,
    timeline: &'a Timeline,
}

fn idle(t: &Timeline, unit: Unit) -> IdleSummary {
    let mut spans: Vec<_> = t.entries.iter().filter(|e| e.unit == unit).collect();
    spans.sort_by_key(|e| e.start);
    let busy = spans.iter().map(|e| e.end - e.start).sum();
    let window = match (spans.first(), spans.last()) {
        (Some(a), Some(b)) => b.end - a.start,
        _ => 0,
    };
    IdleSummary {
        unit: match unit {
            Unit::Vpu => "vpu",
            Unit::Spu => "spu",
        },
        busy_cycles: busy,
        idle_cycles: window.saturating_sub(busy),
    }
}

fn schedule(
    p: &Presets,
    model: &str,
    group_size: Option<usize>,
    context: usize,
    mode: Mode,
    out: &mut Artifacts,
) -> Result<Result<(), Failure>, Failure> {
    let spec = p.model(model)?;
    let base = spec.attention_config();
    let g = group_size.unwrap_or(base.group_size());
    if g == 0 || base.num_q_heads % g != 0 {
        return Err(Failure::Usage(anyhow!(
            "group size {g} does not divide the {} query heads of {model}",
            base.num_q_heads
        )));
    }
    if context == 0 {
        return Err(Failure::Usage(anyhow!("context must attend at least one key")));
    }
    let cfg = AttentionConfig {
        num_kv_heads: base.num_q_heads / g,
        ..base
    };
    let engine = EngineConfig::default();
    let tails = TailCycleParams::default();
    let t = match mode {
        Mode::Optimized => schedule_gqa_optimized(&cfg, &engine, context - 1, tails)?,
        Mode::Naive => schedule_gqa_naive(&cfg, &engine, context - 1, tails)?,
    };
    let validity = t.validate();
    let report = ScheduleReport {
        model,
        mode: match mode {
            Mode::Optimized => "optimized",
            Mode::Naive => "naive",
        },
        group_size: g,
        context,
        total_cycles: t.total_cycles(),
        vpu_idle_after_fill: t.vpu_idle_after_fill(),
        idle: vec![idle(&t, Unit::Vpu), idle(&t, Unit::Spu)],
        valid: validity.is_ok(),
        timeline: &t,
    };
    println!("{} schedule, group {g}, {context} keys: {} cycles", report.mode, report.total_cycles);
    for s in &report.idle {
        println!("  {}: busy {} idle {}", s.unit, s.busy_cycles, s.idle_cycles);
    }
    println!("  VPU idle after fill: {}", report.vpu_idle_after_fill);
    match out.format() {
        crate::Format::Json => out.json("schedule", &report)?,
        crate::Format::Csv => out.write_bytes("schedule.csv", t.to_csv().as_bytes())?,
    }
    Ok(validity.map_err(|e| Failure::Check(format!("invalid timeline: {e}"))))
}

fn print_capacity(r: &CapacityReport) {
    let mib = |b: u64| b as f64 / MIB as f64;
    println!("{} on {} at context {}:", r.model, r.platform, r.context);
    println!(
        "  {:>8} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10}  fits",
        "channel", "capacity", "weights", "embedding", "kv_cache", "workspace", "reserved", "used"
    );
    for b in &r.channels {
        println!(
            "  {:>8} {:>10.1} {:>10.1} {:>10.1} {:>10.1} {:>10.1} {:>10.1} {:>10.1}  {}",
            b.channel,
            mib(b.capacity),
            mib(b.weights),
            mib(b.embedding),
            mib(b.kv_cache),
            mib(b.workspace),
            mib(b.reserved),
            mib(b.used),
            b.fits
        );
    }
    println!("  (MiB)");
    if let Some(o) = &r.overflow {
        println!("  overflow: {o}");
    }
}

#[derive(Serialize)]
struct ThroughputRow<'a> {
    model: &'a str,
    platform: &'a str,
    context_len: usize,
    cores: usize,
    tokens_per_s: f64,
    bw_efficiency: f64,
    norm_perf: f64,
    per_inference_bytes: u64,
    dram_utilization: f64,
    pass_ms: f64,
    memory_ms: f64,
    compute_ms: f64,
    exposed_ms: f64,
    embedding_fetch_ms: f64,
}

impl<'a> From<&'a ThroughputReport> for ThroughputRow<'a> {
    fn from(r: &'a ThroughputReport) -> Self {
        Self {
            model: &r.model,
            platform: &r.platform,
            context_len: r.context_len,
            cores: r.cores,
            tokens_per_s: r.tokens_per_s,
            bw_efficiency: r.bw_efficiency,
            norm_perf: r.norm_perf,
            per_inference_bytes: r.per_inference_bytes,
            dram_utilization: r.dram_utilization,
            pass_ms: r.pass_ms,
            memory_ms: r.memory_ms,
            compute_ms: r.compute_ms,
            exposed_ms: r.exposed_ms,
            embedding_fetch_ms: r.embedding_fetch_ms,
        }
    }
}

fn throughput(
    p: &Presets,
    model: &str,
    platform: &str,
    context: usize,
    out: &mut Artifacts,
) -> Result<Result<(), Failure>, Failure> {
    let spec = p.model(model)?;
    let pl = p.platform(platform)?;
    let cap = capacity_check(&spec, &pl, context)?;
    if !cap.fits {
        print_capacity(&cap);
        out.emit("capacity", &cap, &cap.channels)?;
        return Ok(Err(Failure::Check(cap.overflow.unwrap_or_default())));
    }
    let r = decode_throughput(&spec, &pl, context)?;
    println!("{model} on {platform} ({} cores), {context} cached tokens", r.cores);
    println!("  tokens/s             {:>10.3}", r.tokens_per_s);
    println!("  bandwidth efficiency {:>10.3}", r.bw_efficiency);
    println!("  normalized perf      {:>10.3}", r.norm_perf);
    println!("  DRAM utilization     {:>10.3}", r.dram_utilization);
    println!("  pass ms              {:>10.3}", r.pass_ms);
    println!("    memory ms          {:>10.3}", r.memory_ms);
    println!("    compute ms         {:>10.3}", r.compute_ms);
    println!("    exposed ms         {:>10.3}", r.exposed_ms);
    println!("  embedding fetch ms   {:>10.3}", r.embedding_fetch_ms);
    out.emit("throughput", &r, &[ThroughputRow::from(&r)])?;
    Ok(Ok(()))
}

#[derive(Serialize)]
struct BreakdownRow<'a> {
    model: &'a str,
    embedding_bytes: u64,
    attention_bytes: u64,
    mlp_bytes: u64,
    lm_head_bytes: u64,
    norm_bytes: u64,
    weight_bytes: u64,
    total: u64,
    embedding_fraction: f64,
    weight_params: u64,
}

impl<'a> BreakdownRow<'a> {
    fn new(model: &'a str, b: &ModelBreakdown) -> Self {
        Self {
            model,
            embedding_bytes: b.embedding_bytes,
            attention_bytes: b.attention_bytes,
            mlp_bytes: b.mlp_bytes,
            lm_head_bytes: b.lm_head_bytes,
            norm_bytes: b.norm_bytes,
            weight_bytes: b.weight_bytes,
            total: b.total,
            embedding_fraction: b.embedding_fraction,
            weight_params: b.weight_params,
        }
    }
}

fn breakdown(p: &Presets, model: &str, out: &mut Artifacts) -> Result<(), Failure> {
    let spec = p.model(model)?;
    let b = model_breakdown(&spec);
    let mib = |x: u64| x as f64 / MIB as f64;
    println!("{model}:");
    for (name, bytes) in [
        ("embedding", b.embedding_bytes),
        ("attention", b.attention_bytes),
        ("mlp", b.mlp_bytes),
        ("lm_head", b.lm_head_bytes),
        ("norms", b.norm_bytes),
        ("weights", b.weight_bytes),
        ("total", b.total),
    ] {
        println!("  {name:<10} {bytes:>14} B {:>10.1} MiB", mib(bytes));
    }
    println!("  embedding fraction {:.4}", b.embedding_fraction);
    let row = BreakdownRow::new(model, &b);
    out.emit("breakdown", &row, &[&row])
}

#[derive(Serialize)]
struct CapacityOutput<'a> {
    max_context: usize,
    #[serde(flatten)]
    report: &'a CapacityReport,
}

fn capacity(
    p: &Presets,
    model: &str,
    platform: &str,
    context: Option<usize>,
    out: &mut Artifacts,
) -> Result<Result<(), Failure>, Failure> {
    let spec = p.model(model)?;
    let pl = p.platform(platform)?;
    let best = max_context(&spec, &pl)?;
    let ctx = context.unwrap_or(best.max(1));
    let r = capacity_check(&spec, &pl, ctx)?;
    print_capacity(&r);
    println!("largest power-of-two context that fits: {best}");
    out.emit("capacity", &CapacityOutput { max_context: best, report: &r }, &r.channels)?;
    Ok(match r.overflow {
        Some(o) => Err(Failure::Check(o)),
        None => Ok(()),
    })
}

#[derive(Serialize)]
struct TinyRow {
    position: usize,
    token: usize,
    argmax: usize,
    reference_argmax: usize,
    max_deviation: f64,
    max_sigmas: f64,
}

fn run_tiny(p: &Presets, model: &str, steps: usize, seed: u64, out: &mut Artifacts) -> Result<Result<(), Failure>, Failure> {
    let spec = p.model(model)?;
    if steps == 0 || steps > spec.max_context {
        return Err(Failure::Usage(anyhow!("steps must be in 1..={}", spec.max_context)));
    }
    let trace = run_tiny_model_e2e(&spec, seed, steps)?;
    let weights = TinyWeights::random(&spec, seed)?;
    let tensors = weights.tensors();
    let named: Vec<(&str, &_)> = tensors.iter().map(|(n, m)| (n.as_str(), *m)).collect();
    write_weight_dir(&out.dir().join("weights"), &named)?;
    out.record("weights/");
    let rows: Vec<TinyRow> = trace
        .steps
        .iter()
        .map(|s| TinyRow {
            position: s.position,
            token: s.token,
            argmax: s.argmax,
            reference_argmax: s.reference_argmax,
            max_deviation: s.max_deviation,
            max_sigmas: s.max_sigmas,
        })
        .collect();
    println!("{:>4} {:>6} {:>7} {:>9} {:>13} {:>7}", "pos", "token", "argmax", "ref_argmax", "max_deviation", "sigmas");
    for r in &rows {
        println!(
            "{:>4} {:>6} {:>7} {:>9} {:>13.6} {:>7.2}",
            r.position, r.token, r.argmax, r.reference_argmax, r.max_deviation, r.max_sigmas
        );
    }
    println!("digest {}", trace.digest);
    out.emit("tiny_trace", &trace, &rows)?;
    Ok(if trace.within_bound {
        Ok(())
    } else {
        Err(Failure::Check(format!("logits outside the {}-sigma bound", hbsim::system::TOLERANCE_SIGMAS)))
    })
}
