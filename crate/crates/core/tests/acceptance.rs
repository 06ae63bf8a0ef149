//! End-to-end acceptance criteria. Runs as a plain binary and prints one
//! PASS/FAIL line per criterion; exits non-zero if any criterion fails.

mod common;

use std::panic::{self, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng;

use common::{FusionWeights, Mat, PropagationOptions, PropagationWeights, ToyGraph};
use tgt::attention::{encode_subsequences, AttentionParams};
use tgt::autodiff::{Tape, Tensor, Var};
use tgt::checkpoint;
use tgt::data::{generate_synthetic, BehaviorVocab};
use tgt::eval::{evaluate, hit_rate, ndcg, rank_of};
use tgt::graph::{
    channel_projection, combine_layers, propagate_layers, ChannelParams, FusionParams,
    InteractionGraph, PropagationConfig, PropagationInputs,
};
use tgt::model::{forward, infer, GraphInputs};
use tgt::toy::toy_gradient_check;
use tgt::train::{EpochLoss, Trainer};
use tgt::{
    AblationConfig, CandidatePolicy, Dataset, EtaMode, ModelConfig, ModelParameters, RankingReport,
    RefineMode, SyntheticConfig, TrainConfig,
};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed < limit, || {
        format!(
            "took {:.1}s, limit {:.0}s",
            elapsed.as_secs_f64(),
            limit.as_secs_f64()
        )
    })
}

// ---------------------------------------------------------------- 1

fn gradient_integrity() -> Outcome {
    let start = Instant::now();
    let errors =
        toy_gradient_check(8, AblationConfig::default(), 0, 1e-5).map_err(|e| e.to_string())?;
    let (name, worst) = errors
        .iter()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .cloned()
        .ok_or("no parameters")?;
    within(start.elapsed(), Duration::from_secs(60))?;
    ensure(worst < 1e-4, || {
        format!("max relative error {worst:.3e} at `{name}`")
    })?;
    Ok(format!(
        "max relative error {worst:.2e} over {} parameters ({:.1}s)",
        errors.len(),
        start.elapsed().as_secs_f64()
    ))
}

// ---------------------------------------------------------------- 2

fn leaf(tape: &mut Tape, m: &Mat) -> Var {
    tape.leaf(Tensor::new(vec![m.len(), m[0].len()], common::flatten(m)).unwrap())
}

fn leaf_vec(tape: &mut Tape, v: &[f64]) -> Var {
    tape.leaf(Tensor::vector(v.to_vec()))
}

fn deviation(tape: &Tape, v: Var, m: &Mat) -> f64 {
    common::max_abs_diff(tape.value(v).data(), &common::flatten(m))
}

/// Encoder over every window of a random graph; returns the worst deviation.
fn encoder_instance(rng: &mut impl Rng, g: &ToyGraph, graph: &InteractionGraph) -> f64 {
    let (d, heads) = (4, 2);
    let e = common::random_mat(rng, g.n_events(), d);
    let mut proj = || -> Vec<Mat> {
        (0..heads)
            .map(|_| common::random_mat(rng, d, d / heads))
            .collect()
    };
    let (q, k, v) = (proj(), proj(), proj());

    let mut tape = Tape::new();
    let ev = leaf(&mut tape, &e);
    let params = AttentionParams {
        query: q.iter().map(|m| leaf(&mut tape, m)).collect(),
        key: k.iter().map(|m| leaf(&mut tape, m)).collect(),
        value: v.iter().map(|m| leaf(&mut tape, m)).collect(),
    };
    let enc = encode_subsequences(&mut tape, ev, &params, &graph.attention).unwrap();

    let mut expected_out = Vec::new();
    let mut expected_w: Vec<Vec<f64>> = vec![Vec::new(); heads];
    let mut row = 0;
    for w in g.windows.iter().flatten() {
        let window: Mat = e[row..row + w.len()].to_vec();
        let (out, weights) = common::attention(&window, &q, &k, &v);
        expected_out.extend(out);
        for (h, wh) in weights.iter().enumerate() {
            expected_w[h].extend(wh.iter().flatten());
        }
        row += w.len();
    }
    let mut worst = deviation(&tape, enc.output, &expected_out);
    for (h, w) in enc.weights.iter().enumerate() {
        worst = worst.max(common::max_abs_diff(tape.value(*w).data(), &expected_w[h]));
    }
    worst
}

/// Two-layer propagation with random weights and a seed-dependent mode mix.
fn propagation_instance(
    rng: &mut impl Rng,
    seed: u64,
    g: &ToyGraph,
    graph: &InteractionGraph,
) -> f64 {
    let (d, channels) = (4, 2);
    let b = g.behaviors;
    let behavior = common::random_mat(rng, b, d);
    let basis: Vec<Mat> = (0..channels)
        .map(|_| common::random_mat(rng, d, d))
        .collect();
    let gate = common::random_mat(rng, channels, d);
    let gate_bias = common::random_vec(rng, channels);
    let fusion = match seed % 4 {
        3 => FusionWeights::Concat {
            projection: common::random_mat(rng, b * d, d),
        },
        2 => FusionWeights::Frequency,
        _ => FusionWeights::Attention {
            weight: common::random_mat(rng, d, d),
            bias: common::random_vec(rng, d),
        },
    };
    let opt = PropagationOptions {
        layers: 2,
        softmax_eta: seed % 3 != 1,
        fresh_refine: seed % 5 != 2,
        mean: seed % 2 == 1,
        global: seed % 7 != 6,
    };
    let (transforms, betas) = common::channel_transforms(&behavior, &basis, &gate, &gate_bias);
    let w = PropagationWeights {
        events: common::random_mat(rng, g.n_events(), d),
        items: common::random_mat(rng, g.items, d),
        users: common::random_mat(rng, g.users, d),
        subuser_time: common::random_mat(rng, g.n_subusers(), d),
        transforms,
        fusion,
    };
    let expected = common::propagate(g, &w, opt);

    let mut tape = Tape::new();
    let beh = leaf(&mut tape, &behavior);
    let flat_basis: Vec<f64> = basis.iter().flat_map(common::flatten).collect();
    let channel = ChannelParams {
        basis: tape.leaf(Tensor::new(vec![channels, d, d], flat_basis).unwrap()),
        gate: leaf(&mut tape, &gate),
        gate_bias: leaf_vec(&mut tape, &gate_bias),
    };
    let (transform_vars, beta) = channel_projection(&mut tape, beh, &channel).unwrap();
    let mut worst = deviation(&tape, beta, &betas);
    for (v, m) in transform_vars.iter().zip(&w.transforms) {
        worst = worst.max(deviation(&tape, *v, m));
    }
    let fusion = match &w.fusion {
        FusionWeights::Attention { weight, bias } => FusionParams::Attention {
            weight: leaf(&mut tape, weight),
            bias: leaf_vec(&mut tape, bias),
        },
        FusionWeights::Concat { projection } => FusionParams::Concat {
            projection: leaf(&mut tape, projection),
        },
        FusionWeights::Frequency => FusionParams::Frequency,
    };
    let inputs = PropagationInputs {
        events: leaf(&mut tape, &w.events),
        items: leaf(&mut tape, &w.items),
        users: leaf(&mut tape, &w.users),
        subuser_time: leaf(&mut tape, &w.subuser_time),
    };
    let cfg = PropagationConfig {
        layers: opt.layers,
        eta_mode: if opt.softmax_eta {
            EtaMode::Softmax
        } else {
            EtaMode::Literal
        },
        refine: if opt.fresh_refine {
            RefineMode::Fresh
        } else {
            RefineMode::Literal
        },
        mean_normalize: opt.mean,
        global_off: !opt.global,
    };
    let state =
        propagate_layers(&mut tape, graph, &inputs, &transform_vars, &fusion, &cfg).unwrap();
    for l in 0..=opt.layers {
        worst = worst.max(deviation(&tape, state.users[l], &expected.users[l]));
        worst = worst.max(deviation(&tape, state.subusers[l], &expected.subusers[l]));
        worst = worst.max(deviation(&tape, state.items[l], &expected.items[l]));
    }
    for l in 0..opt.layers {
        if let (Some(v), Some(m)) = (state.subuser_gamma[l], &expected.subuser_gamma[l]) {
            worst = worst.max(common::max_abs_diff(
                tape.value(v).data(),
                &common::flatten(m),
            ));
        }
        if let (Some(v), Some(e)) = (state.eta[l], &expected.eta[l]) {
            worst = worst.max(common::max_abs_diff(tape.value(v).data(), e));
        }
    }
    for (vars, mats) in [
        (&state.users, &expected.users),
        (&state.subusers, &expected.subusers),
        (&state.items, &expected.items),
    ] {
        let combined = combine_layers(&mut tape, vars).unwrap();
        worst = worst.max(deviation(&tape, combined, &common::combine(mats)));
    }
    worst
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let mut rng = common::rng(1000 + seed);
        let g = ToyGraph::random(&mut rng, 3, 5, 2);
        let graph = InteractionGraph::build(&g.subsequences(), g.items, g.behaviors).unwrap();
        let enc = encoder_instance(&mut rng, &g, &graph);
        let prop = propagation_instance(&mut rng, seed, &g, &graph);
        ensure(enc < 1e-10 && prop < 1e-10, || {
            format!("instance {seed}: encoder {enc:.2e}, propagation {prop:.2e}")
        })?;
        worst = worst.max(enc).max(prop);
    }
    within(start.elapsed(), Duration::from_secs(10))?;
    Ok(format!("20 instances, max deviation {worst:.2e}"))
}

// ---------------------------------------------------------------- 3

fn sums_to_one(values: &[f64], what: &str) -> Result<f64, String> {
    let dev = (values.iter().sum::<f64>() - 1.0).abs();
    ensure(dev <= 1e-9, || format!("{what} sums to 1{dev:+.2e}"))?;
    Ok(dev)
}

fn normalization_invariants() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut checked = 0usize;
    for seed in 0..100u64 {
        let mut rng = common::rng(5000 + seed);
        let b = rng.gen_range(2..=4);
        let g = ToyGraph::random(&mut rng, 4, 8, b);
        let cfg = ModelConfig {
            dim: 4,
            layers: 2,
            attention_heads: 2,
            channels: 3,
            window: 4,
            ..ModelConfig::default()
        };
        let origin = g.events().iter().map(|e| e.2.timestamp).min().unwrap();
        let inputs = GraphInputs::new(&g.subsequences(), g.items, b, &cfg, origin)
            .map_err(|e| e.to_string())?;
        let mut params = ModelParameters::init(&cfg, g.users, g.items, b, seed).unwrap();
        // spread logits so that the softmaxes are far from uniform
        let scale = rng.gen_range(1.0..6.0);
        for i in 0..params.len() {
            params
                .tensor_mut(i)
                .data_mut()
                .iter_mut()
                .for_each(|x| *x *= scale);
        }
        let mut tape = Tape::new();
        let vars = params.register(&mut tape);
        let out = forward(&mut tape, &vars, &cfg, &inputs).map_err(|e| e.to_string())?;
        let graph = &inputs.graph;

        let attention = out.attention.as_ref().ok_or("no attention weights")?;
        let offsets = &graph.attention.pair_offsets;
        for w in &attention.weights {
            let data = tape.value(*w).data();
            for q in 0..offsets.len() - 1 {
                worst = worst.max(sums_to_one(
                    &data[offsets[q]..offsets[q + 1]],
                    "attention row",
                )?);
                checked += 1;
            }
        }
        let beta = tape.value(out.channel_gate.ok_or("no channel gate")?);
        for r in 0..b {
            worst = worst.max(sums_to_one(beta.row(r), "channel gate row")?);
            checked += 1;
        }
        for l in 0..cfg.layers {
            let gamma = tape.value(out.state.subuser_gamma[l].ok_or("no gamma")?);
            for s in 0..graph.n_subusers {
                worst = worst.max(sums_to_one(gamma.row(s), "sub-user behavior weights")?);
                checked += 1;
            }
            let gamma = tape.value(out.state.item_gamma[l].ok_or("no gamma")?);
            for j in (0..graph.n_items).filter(|&j| graph.item_has_edge[j]) {
                worst = worst.max(sums_to_one(gamma.row(j), "item behavior weights")?);
                checked += 1;
            }
            let eta = tape.value(out.state.eta[l].ok_or("no eta")?).data();
            for u in 0..graph.n_users {
                let r = graph.subusers_of(u);
                if !r.is_empty() {
                    worst = worst.max(sums_to_one(&eta[r], "user aggregation weights")?);
                    checked += 1;
                }
            }
        }
    }
    Ok(format!(
        "100 instances, {checked} distributions, max deviation {worst:.2e}"
    ))
}

// ---------------------------------------------------------------- 4

fn metric_oracle() -> Outcome {
    let cutoffs = [1, 5, 10, 20, 50];
    let mut ranks = std::collections::BTreeMap::new();
    for inst in 0..50u64 {
        let mut rng = common::rng(9000 + inst);
        let mut ids: Vec<usize> = (0..1000).collect();
        ids.shuffle(&mut rng);
        // coarse scores force many ties
        let candidates: Vec<(usize, f64)> = ids[..100]
            .iter()
            .map(|&i| (i, (rng.gen_range(0..25) as f64) * 0.5))
            .collect();
        let target = candidates[rng.gen_range(0..100)].0;
        let got = rank_of(target, &candidates);
        let want = common::brute_force_rank(target, &candidates);
        ensure(got == want, || {
            format!("instance {inst}: rank {got}, oracle {want}")
        })?;
        for &n in &cutoffs {
            let hr = if want <= n { 1.0 } else { 0.0 };
            let dcg = if want <= n {
                1.0 / ((want + 1) as f64).log2()
            } else {
                0.0
            };
            ensure(hit_rate(got, n) == hr && ndcg(got, n) == dcg, || {
                format!("instance {inst} cutoff {n}: metrics differ")
            })?;
        }
        ranks.insert(inst as usize, got);
    }
    let report = RankingReport::from_ranks(ranks.clone(), &cutoffs, 0, CandidatePolicy::default());
    for (c, &n) in cutoffs.iter().enumerate() {
        let hr = ranks
            .values()
            .map(|&r| if r <= n { 1.0 } else { 0.0 })
            .sum::<f64>()
            / 50.0;
        let dcg = ranks
            .values()
            .map(|&r| {
                if r <= n {
                    1.0 / ((r + 1) as f64).log2()
                } else {
                    0.0
                }
            })
            .sum::<f64>()
            / 50.0;
        ensure(report.hit_rate[c] == hr && report.ndcg[c] == dcg, || {
            format!("averages at cutoff {n} differ")
        })?;
    }
    for r in 1..=100usize {
        let closed = std::f64::consts::LN_2 / ((r + 1) as f64).ln();
        ensure((ndcg(r, 100) - closed).abs() <= 1e-12, || {
            format!("NDCG at rank {r}")
        })?;
    }
    Ok("50 instances match the re-ranking oracle".into())
}

// ---------------------------------------------------------------- 5, 6

fn corpus(target_only: bool) -> Dataset {
    let sc = SyntheticConfig::default();
    let records = generate_synthetic(&sc).unwrap();
    let vocab = BehaviorVocab::new(sc.labels()).unwrap();
    Dataset::from_records(&records, vocab, sc.target, target_only).unwrap()
}

fn learning_model() -> ModelConfig {
    ModelConfig {
        mean_normalize: true,
        ..ModelConfig::default()
    }
}

fn learning_schedule(seed: u64) -> TrainConfig {
    TrainConfig {
        batch_size: 32,
        learning_rate: 1e-2,
        seed,
        ..TrainConfig::default()
    }
}

struct Run {
    log: Vec<EpochLoss>,
    hr10: f64,
}

fn train_and_score(ds: &Dataset, model: ModelConfig, tc: TrainConfig) -> Result<Run, String> {
    let trainer = Trainer::new(ds, model, tc).map_err(|e| e.to_string())?;
    let mut params = trainer.init_parameters().map_err(|e| e.to_string())?;
    let mut state = trainer.init_state(&params);
    let log = trainer
        .train(&mut params, &mut state)
        .map_err(|e| e.to_string())?;
    let inf = infer(&params, &model, &trainer.inputs).map_err(|e| e.to_string())?;
    let report = evaluate(
        &inf,
        &trainer.inputs.graph,
        ds,
        &[10],
        CandidatePolicy::Sampled(99),
        tc.seed,
    );
    Ok(Run {
        log,
        hr10: report.hit_rate[0],
    })
}

const SEEDS: [u64; 3] = [0, 1, 2];

fn learning_signal(full: &[Run], elapsed: Duration) -> Outcome {
    let baseline = 10.0 / 100.0;
    let mut lines = Vec::new();
    for (seed, run) in SEEDS.iter().zip(full) {
        let first = run.log.first().ok_or("empty loss log")?.loss;
        let last = run.log.last().unwrap().loss;
        lines.push(format!(
            "seed {seed}: loss {first:.0}->{last:.0}, HR@10 {:.3}",
            run.hr10
        ));
        ensure(last < first, || {
            format!("seed {seed}: loss did not decrease ({first} -> {last})")
        })?;
        ensure(run.hr10 >= 2.0 * baseline, || {
            format!(
                "seed {seed}: HR@10 {:.3} below {:.2}",
                run.hr10,
                2.0 * baseline
            )
        })?;
    }
    within(elapsed, Duration::from_secs(15 * 60))?;
    Ok(format!(
        "{} ({:.0}s)",
        lines.join("; "),
        elapsed.as_secs_f64()
    ))
}

fn multi_behavior_benefit(full: &[Run]) -> Outcome {
    let buy_only = corpus(true);
    let with_context = corpus(false);
    let mut cta_model = learning_model();
    cta_model
        .ablation
        .enable("cta")
        .map_err(|e| e.to_string())?;
    let mut lines = Vec::new();
    let mut holds = true;
    for (seed, run) in SEEDS.iter().zip(full) {
        let buy = train_and_score(&buy_only, learning_model(), learning_schedule(*seed))?;
        let cta = train_and_score(&with_context, cta_model, learning_schedule(*seed))?;
        let ok = run.hr10 > buy.hr10 && cta.hr10 <= run.hr10;
        holds &= ok;
        lines.push(format!(
            "seed {seed}: full {:.3}, buy-only {:.3}, concat {:.3}{}",
            run.hr10,
            buy.hr10,
            cta.hr10,
            if ok { "" } else { " (violated)" }
        ));
    }
    ensure(holds, || lines.join("; "))?;
    Ok(lines.join("; "))
}

// ---------------------------------------------------------------- 7

fn small_corpus() -> Dataset {
    let sc = SyntheticConfig {
        users: 120,
        ..SyntheticConfig::default()
    };
    let records = generate_synthetic(&sc).unwrap();
    Dataset::from_records(
        &records,
        BehaviorVocab::new(sc.labels()).unwrap(),
        sc.target,
        false,
    )
    .unwrap()
}

fn bits(xs: &[f64]) -> Vec<u64> {
    xs.iter().map(|x| x.to_bits()).collect()
}

fn report_bits(r: &RankingReport) -> (Vec<u64>, Vec<u64>) {
    (bits(&r.hit_rate), bits(&r.ndcg))
}

fn determinism_and_persistence() -> Outcome {
    let ds = small_corpus();
    let model = learning_model();
    let tc = TrainConfig {
        epochs: 3,
        ..learning_schedule(5)
    };
    let trainer = Trainer::new(&ds, model, tc).map_err(|e| e.to_string())?;
    let run = || -> Result<(ModelParameters, Vec<EpochLoss>), String> {
        let mut p = trainer.init_parameters().map_err(|e| e.to_string())?;
        let mut s = trainer.init_state(&p);
        let log = trainer.train(&mut p, &mut s).map_err(|e| e.to_string())?;
        Ok((p, log))
    };
    let (p1, log1) = run()?;
    let (p2, log2) = run()?;
    let losses = |l: &[EpochLoss]| bits(&l.iter().map(|e| e.loss).collect::<Vec<_>>());
    ensure(losses(&log1) == losses(&log2), || {
        "loss logs differ between identical runs".into()
    })?;
    ensure(p1 == p2, || {
        "parameters differ between identical runs".into()
    })?;

    let cutoffs = [1, 5, 10, 20];
    let score = |p: &ModelParameters| -> Result<RankingReport, String> {
        let inf = infer(p, &model, &trainer.inputs).map_err(|e| e.to_string())?;
        Ok(evaluate(
            &inf,
            &trainer.inputs.graph,
            &ds,
            &cutoffs,
            CandidatePolicy::Sampled(99),
            5,
        ))
    };
    let before = score(&p1)?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("model.bin");
    checkpoint::save(&path, &p1, None).map_err(|e| e.to_string())?;
    let (loaded, _) = checkpoint::load(&path).map_err(|e| e.to_string())?;
    let after = score(&loaded)?;
    ensure(
        report_bits(&before) == report_bits(&after) && before.ranks == after.ranks,
        || "reloaded checkpoint ranks differently".into(),
    )?;

    let mut p = trainer.init_parameters().map_err(|e| e.to_string())?;
    let mut s = trainer.init_state(&p);
    let mut log = vec![trainer
        .run_epoch(&mut p, &mut s)
        .map_err(|e| e.to_string())?];
    checkpoint::save(&path, &p, Some(&s)).map_err(|e| e.to_string())?;
    let (mut p, s) = checkpoint::load(&path).map_err(|e| e.to_string())?;
    let mut s = s.ok_or("optimizer state missing")?;
    while s.epoch < tc.epochs {
        log.push(
            trainer
                .run_epoch(&mut p, &mut s)
                .map_err(|e| e.to_string())?,
        );
    }
    ensure(bits(&log) == losses(&log1), || {
        "resumed loss log differs".into()
    })?;
    ensure(p == p1, || "resumed parameters differ".into())?;
    Ok(format!(
        "{} epochs reproduced bitwise, checkpoint and resume exact",
        tc.epochs
    ))
}

// ---------------------------------------------------------------- 8

fn ablation_switchboard() -> Outcome {
    let ds = corpus(false);
    let tc = TrainConfig {
        epochs: 2,
        ..TrainConfig::default()
    };
    let mut lines = Vec::new();
    for flag in AblationConfig::FLAGS {
        let mut model = ModelConfig::default();
        model.ablation.enable(flag).map_err(|e| e.to_string())?;
        let run = train_and_score(&ds, model, tc).map_err(|e| format!("{flag}: {e}"))?;
        ensure(
            run.log.iter().all(|e| e.loss.is_finite()) && run.hr10.is_finite(),
            || format!("{flag}: non-finite result"),
        )?;
        lines.push(format!("{flag} {:.3}", run.hr10));
    }

    let off = ModelConfig {
        ablation: AblationConfig::from_flags([]).map_err(|e| e.to_string())?,
        ..ModelConfig::default()
    };
    let a = train_and_score(&ds, ModelConfig::default(), tc)?;
    let b = train_and_score(&ds, off, tc)?;
    let losses = |r: &Run| bits(&r.log.iter().map(|e| e.loss).collect::<Vec<_>>());
    ensure(
        losses(&a) == losses(&b) && a.hr10.to_bits() == b.hr10.to_bits(),
        || "all-flags-off differs from the default model".into(),
    )?;
    Ok(format!(
        "HR@10 after 2 epochs: {}; all-off matches default",
        lines.join(", ")
    ))
}

// ----------------------------------------------------------------

fn run(n: usize, name: &str, f: &mut dyn FnMut() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into());
        Err(format!("panicked: {msg}"))
    });
    let secs = start.elapsed().as_secs_f64();
    match &outcome {
        Ok(detail) => println!("PASS  criterion {n} {name}: {detail} [{secs:.1}s]"),
        Err(detail) => println!("FAIL  criterion {n} {name}: {detail} [{secs:.1}s]"),
    }
    outcome.is_ok()
}

fn main() {
    // optional criterion numbers select a subset; other arguments are ignored
    let only: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let wanted = |n: usize| only.is_empty() || only.contains(&n);
    let mut ok = true;
    let mut check = |n: usize, name: &str, f: &mut dyn FnMut() -> Outcome| {
        if wanted(n) {
            ok &= run(n, name, f);
        }
    };
    check(1, "gradient integrity", &mut gradient_integrity);
    check(2, "oracle equivalence", &mut oracle_equivalence);
    check(3, "normalization invariants", &mut normalization_invariants);
    check(4, "metric oracle", &mut metric_oracle);

    if wanted(5) || wanted(6) {
        let start = Instant::now();
        let ds = corpus(false);
        let full: Result<Vec<Run>, String> = SEEDS
            .iter()
            .map(|&s| train_and_score(&ds, learning_model(), learning_schedule(s)))
            .collect();
        let elapsed = start.elapsed();
        check(5, "learning signal", &mut || {
            learning_signal(full.as_deref()?, elapsed)
        });
        check(6, "multi-behavior benefit", &mut || {
            multi_behavior_benefit(full.as_deref()?)
        });
    }

    check(
        7,
        "determinism and persistence",
        &mut determinism_and_persistence,
    );
    check(8, "ablation switchboard", &mut ablation_switchboard);
    if !ok {
        std::process::exit(1);
    }
}
