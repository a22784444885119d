//! End-to-end acceptance checks. Prints one line per criterion and exits
//! nonzero if any fails.

use std::cmp::Ordering;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use calm::checkpoint::Checkpoint;
use calm::config::RunConfig;
use calm::core::data::SynthSpec;
use calm::core::encoders::{init_params, EncoderConfig};
use calm::core::retrieval::{summarize, IndexEntry, RetrievalIndex};
use calm::core::sampling::{build_batches, rank_by_style, StyleTable};
use calm::core::tensor::cosine_similarity;
use calm::core::trainer::{build_ground_truth, check_gradients, StepRecord};
use calm::core::{FeaturePair, Rng, Vec64};
use calm::index_file::{self, load_index, save_index};
use calm::{pipeline, Error};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn vec64(rng: &mut Rng, dim: usize) -> Vec64 {
    Vec64::new((0..dim).map(|_| rng.gaussian()).collect()).unwrap()
}

fn toy_item(rng: &mut Rng, i: usize) -> FeaturePair {
    let frames = 2 + rng.below(3);
    let tokens = 2 + rng.below(3);
    FeaturePair {
        id: format!("toy{i}"),
        speech_frames: (0..frames).map(|_| vec64(rng, 3)).collect(),
        text_tokens: (0..tokens).map(|_| vec64(rng, 3)).collect(),
        label: None,
    }
}

fn gradients() -> Check {
    let cfg = EncoderConfig {
        speech_dim: 3,
        text_dim: 3,
        hidden: 4,
        style_dim: 2,
        n_tokens: 3,
        attn_dim: 2,
        dropout: 0.0,
    };
    let mut worst: f64 = 0.0;
    let mut params_checked = 0;
    for seed in 1..=20u64 {
        let mut rng = Rng::new(seed);
        let data: Vec<FeaturePair> = (0..8).map(|i| toy_item(&mut rng, i)).collect();
        let mut params = init_params(&cfg, &mut rng).map_err(|e| e.to_string())?;
        for (_, t) in params.tensors_mut() {
            for x in t.as_mut_slice() {
                *x += 0.3 * rng.gaussian();
            }
        }
        let table = StyleTable::from_corpus(&data, &params).map_err(|e| e.to_string())?;
        let batches = build_batches(&table, 2, &mut rng).map_err(|e| e.to_string())?;
        let batch = &batches[rng.below(batches.len())];
        let lambda = 0.5 + rng.next_f64();
        let report = check_gradients(&params, &data, batch, table.embedding(batch.anchor), lambda, 1e-4)
            .map_err(|e| e.to_string())?;
        ensure(report.max_rel_error < 1e-3, || {
            format!(
                "seed {seed}: relative error {:e} at {}[{}] (analytic {}, numeric {})",
                report.max_rel_error, report.worst_tensor, report.worst_index, report.analytic, report.numeric
            )
        })?;
        worst = worst.max(report.max_rel_error);
        params_checked = report.n_params;
    }
    Ok(format!("20 seeds, {params_checked} parameters each, max relative error {worst:.2e}"))
}

fn ground_truth() -> Check {
    for k in 1..=8usize {
        let g = build_ground_truth(k).map_err(|e| e.to_string())?;
        let n = 2 * k;
        ensure(g.m.shape() == (n, n), || format!("K={k}: shape {:?}", g.m.shape()))?;
        let mut trace = 0.0;
        let mut plus = 0;
        for i in 0..n {
            for j in 0..n {
                let v = g.m.row(i)[j];
                let want = if (i < k && j < k) || (i == j && i >= k) { 1.0 } else { -1.0 };
                ensure(v == want, || format!("K={k}: entry ({i},{j}) is {v}"))?;
                ensure(v == g.m.row(j)[i], || format!("K={k}: not symmetric at ({i},{j})"))?;
                if v == 1.0 {
                    plus += 1;
                }
            }
            trace += g.m.row(i)[i];
        }
        ensure(trace == (2 * k) as f64, || format!("K={k}: trace {trace}"))?;
        ensure(plus == k * k + k, || format!("K={k}: {plus} entries are +1"))?;
    }
    Ok("K = 1..8: block rule, symmetry, trace 2K, K²+K positive entries".into())
}

fn random_index(rng: &mut Rng, size: usize, dim: usize, grid: bool) -> RetrievalIndex {
    let mut ids: Vec<usize> = (0..size).collect();
    rng.shuffle(&mut ids);
    let entries = ids
        .into_iter()
        .map(|id| {
            let stf = if grid {
                let mut v: Vec<f64> = (0..dim).map(|_| rng.below(3) as f64 - 1.0).collect();
                if v.iter().all(|x| *x == 0.0) {
                    v[0] = 1.0;
                }
                Vec64::new(v).unwrap()
            } else {
                vec64(rng, dim)
            };
            IndexEntry {
                id: format!("item{id:03}"),
                stf,
                style: vec64(rng, 3),
                label: None,
            }
        })
        .collect();
    RetrievalIndex::new(entries, [0; 32]).unwrap()
}

fn summary_contracts() -> Check {
    let mut rng = Rng::new(11);
    for case in 0..200 {
        let index = random_index(&mut rng, 30, 4, case % 2 == 0);
        let t0 = vec64(&mut rng, 4);
        let n = 1 + rng.below(30);
        let refs = index.query_top_n(&t0, n).map_err(|e| e.to_string())?;
        let sum = summarize(&refs, &t0).map_err(|e| e.to_string())?;
        let w = sum.weights.as_slice();
        let total: f64 = w.iter().sum();
        ensure((total - 1.0).abs() <= 1e-12, || format!("case {case}: weights sum to {total}"))?;
        ensure(w.iter().all(|x| *x >= 0.0), || format!("case {case}: negative weight"))?;
        for c in 0..refs.s.cols() {
            let col: Vec<f64> = (0..refs.s.rows()).map(|r| refs.s.row(r)[c]).collect();
            let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let f = sum.final_style.as_slice()[c];
            let combo: f64 = w.iter().zip(&col).map(|(a, b)| a * b).sum();
            ensure(f >= lo - 1e-12 && f <= hi + 1e-12, || format!("case {case}: coordinate {c} outside the hull"))?;
            ensure((f - combo).abs() <= 1e-12, || format!("case {case}: final is not wᵀS"))?;
        }
        if n == 1 {
            ensure(sum.final_style.as_slice() == refs.s.row(0), || format!("case {case}: N=1 differs from s1"))?;
        }
    }

    let stf = Vec64::new(vec![0.3, -1.2, 0.5]).unwrap();
    let styles: Vec<Vec<f64>> = (0..5).map(|i| (0..3).map(|j| (i * 3 + j) as f64 * 0.25 - 1.0).collect()).collect();
    let entries = styles
        .iter()
        .enumerate()
        .map(|(i, s)| IndexEntry {
            id: format!("same{i}"),
            stf: stf.clone(),
            style: Vec64::new(s.clone()).unwrap(),
            label: None,
        })
        .collect();
    let index = RetrievalIndex::new(entries, [0; 32]).unwrap();
    let refs = index.query_top_n(&stf, 5).unwrap();
    let sum = summarize(&refs, &stf).unwrap();
    for c in 0..3 {
        let mean = styles.iter().map(|s| s[c]).sum::<f64>() / 5.0;
        let f = sum.final_style.as_slice()[c];
        ensure((f - mean).abs() <= 1e-15, || format!("identical STFs: coordinate {c} is {f}, mean {mean}"))?;
    }
    Ok("200 random cases: weights sum to 1, convex hull, N=1 exact; identical STFs give the mean".into())
}

fn by_sim_then_id(a: &(f64, String), b: &(f64, String)) -> Ordering {
    b.0.partial_cmp(&a.0).unwrap().then_with(|| a.1.cmp(&b.1))
}

fn oracles() -> Check {
    let mut rng = Rng::new(23);
    let mut ties = 0;
    for case in 0..200 {
        let size = 1 + rng.below(100);
        let grid = case % 2 == 0;
        let index = random_index(&mut rng, size, 3, grid);
        let t0 = if grid {
            Vec64::new(vec![1.0, 0.0, -1.0]).unwrap()
        } else {
            vec64(&mut rng, 3)
        };
        let n = 1 + rng.below(size.min(20));
        let mut all: Vec<(f64, String)> = index
            .entries()
            .iter()
            .map(|e| (cosine_similarity(&t0, &e.stf).unwrap(), e.id.clone()))
            .collect();
        all.sort_by(by_sim_then_id);
        ties += all.windows(2).filter(|w| w[0].0 == w[1].0).count();
        let got = index.query_top_n(&t0, n).map_err(|e| e.to_string())?;
        let want_ids: Vec<String> = all[..n].iter().map(|p| p.1.clone()).collect();
        let want_sims: Vec<f64> = all[..n].iter().map(|p| p.0).collect();
        ensure(got.ids == want_ids, || format!("query case {case}: ids {:?}, oracle {:?}", got.ids, want_ids))?;
        ensure(got.sims == want_sims, || format!("query case {case}: similarities differ"))?;

        let rows: Vec<(String, Vec64)> = index.entries().iter().map(|e| (e.id.clone(), e.stf.clone())).collect();
        if rows.len() < 2 {
            continue;
        }
        let table = StyleTable::new(rows.clone()).map_err(|e| e.to_string())?;
        let anchor = &rows[rng.below(rows.len())];
        let mut want: Vec<(f64, String)> = rows
            .iter()
            .filter(|r| r.0 != anchor.0)
            .map(|r| (cosine_similarity(&anchor.1, &r.1).unwrap(), r.0.clone()))
            .collect();
        want.sort_by(by_sim_then_id);
        let got: Vec<(f64, String)> = rank_by_style(&table, &anchor.0)
            .map_err(|e| e.to_string())?
            .into_iter()
            .map(|r| (r.similarity, table.id(r.index).to_string()))
            .collect();
        ensure(got == want, || format!("style ranking case {case} differs from the oracle: {:?}", got.iter().zip(&want).find(|(g, w)| g != w)))?;
    }
    ensure(ties > 0, || "no ties were generated".into())?;
    Ok(format!("200 instances each for top-N and style ranking, {ties} tied neighbours"))
}

struct Run {
    stats: Vec<StepRecord>,
    eval: pipeline::EvalResult,
    sweep: calm::core::evaluation::SweepCurve,
    index: RetrievalIndex,
    checkpoint: Checkpoint,
    seconds: f64,
}

fn run_config(dir: &Path) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.paths.dataset = Some(dir.join("train.jsonl"));
    cfg.paths.test_dataset = Some(dir.join("test.jsonl"));
    cfg.paths.checkpoint = Some(dir.join("model.ckpt"));
    cfg.paths.index = Some(dir.join("train.idx"));
    cfg.paths.report_dir = Some(dir.join("reports"));
    cfg
}

fn library_run(dir: &Path) -> Result<Run, Error> {
    let start = Instant::now();
    let cfg = run_config(dir);
    pipeline::gen_data(&SynthSpec::default(), dir)?;
    let trained = pipeline::train(&cfg, |_| {})?;
    let index = pipeline::index(&cfg)?;
    let eval = pipeline::evaluate(&cfg)?;
    let sweep = pipeline::sweep(&cfg)?;
    Ok(Run {
        stats: trained.stats,
        eval,
        sweep,
        index,
        checkpoint: trained.checkpoint,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_calm"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!("calm {}: {}", args.join(" "), String::from_utf8_lossy(&out.stderr))
    })
}

fn cli_run(dir: &Path) -> Result<(), String> {
    let p = |name: &str| dir.join(name).to_str().unwrap().to_string();
    let (train, test, ckpt, idx, reports) = (p("train.jsonl"), p("test.jsonl"), p("model.ckpt"), p("train.idx"), p("reports"));
    cli(&["gen-data", "--out", dir.to_str().unwrap()])?;
    cli(&["train", "--dataset", &train, "--checkpoint", &ckpt, "--report-dir", &reports])?;
    cli(&["index", "--checkpoint", &ckpt, "--dataset", &train, "--out", &idx])?;
    cli(&[
        "eval", "--checkpoint", &ckpt, "--index", &idx, "--dataset", &train, "--test", &test, "--report-dir", &reports,
    ])
}

fn table1(run: &Run) -> Check {
    let (c, s) = (run.eval.calm_summary(), run.eval.control_summary());
    let detail = format!(
        "precision@20 {:.3} vs control {:.3}; similarity {:.3} vs {:.3}; {:.1} s",
        c.mean_precision, s.mean_precision, c.mean_style_similarity, s.mean_style_similarity, run.seconds
    );
    ensure(c.mean_precision - s.mean_precision >= 0.10, || format!("precision gap too small: {detail}"))?;
    ensure(c.mean_style_similarity > s.mean_style_similarity, || format!("similarity not higher: {detail}"))?;
    ensure(run.seconds < 300.0, || format!("too slow: {detail}"))?;
    Ok(detail)
}

fn sweep_peak(run: &Run) -> Check {
    let curve: Vec<String> = run.sweep.points.iter().map(|(n, s)| format!("{n}:{s:.4}")).collect();
    let n_values: Vec<usize> = run.sweep.points.iter().map(|p| p.0).collect();
    ensure(n_values == [1, 5, 20, 75, 150, 300, 600], || format!("N values {n_values:?}"))?;
    let best = run.sweep.argmax().ok_or("empty curve")?;
    let detail = format!("argmax N = {best}; curve {}", curve.join(" "));
    ensure((75..=300).contains(&best), || detail.clone())?;
    Ok(detail)
}

fn descent(run: &Run) -> Check {
    ensure(!run.stats.is_empty(), || "no steps recorded".into())?;
    for r in &run.stats {
        let sum = r.l_tts_proxy + 1.0 * r.l_calm;
        ensure((r.l_total - sum).abs() <= 1e-12, || format!("step {}: l_total {} vs {}", r.step, r.l_total, sum))?;
    }
    let initial = run.stats[0].l_calm;
    let tail = &run.stats[run.stats.len().saturating_sub(100)..];
    let last = tail.iter().map(|r| r.l_calm).sum::<f64>() / tail.len() as f64;
    let detail = format!(
        "initial l_calm {initial:.4}, final (mean of last {} steps) {last:.4}, ratio {:.3}",
        tail.len(),
        last / initial
    );
    ensure(last < 0.5 * initial, || detail.clone())?;
    Ok(detail)
}

fn determinism(a: &Path, b: &Path) -> Check {
    for file in ["reports/stats.csv", "train.idx", "model.ckpt", "train.jsonl", "reports/precision.csv"] {
        let x = std::fs::read(a.join(file)).map_err(|e| format!("{file}: {e}"))?;
        let y = std::fs::read(b.join(file)).map_err(|e| format!("{file}: {e}"))?;
        ensure(x == y, || format!("{file} differs between runs"))?;
    }
    Ok("library and CLI runs agree byte-for-byte on data, stats, checkpoint, index and precision reports".into())
}

fn rejected(e: &Error) -> bool {
    matches!(
        e,
        Error::BadMagic { .. }
            | Error::Truncated { .. }
            | Error::FormatVersionMismatch { .. }
            | Error::ChecksumMismatch { .. }
            | Error::Malformed { .. }
    )
}

fn persistence(run: &Run, dir: &Path) -> Check {
    let ck_path = dir.join("copy.ckpt");
    run.checkpoint.save(&ck_path).map_err(|e| e.to_string())?;
    let back = Checkpoint::load(&ck_path).map_err(|e| e.to_string())?;
    ensure(back.to_bytes() == run.checkpoint.to_bytes(), || "checkpoint re-encodes differently".into())?;
    let bits = |c: &Checkpoint| c.params.flatten().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    ensure(bits(&back) == bits(&run.checkpoint), || "checkpoint parameters differ".into())?;
    ensure(back.optimizer == run.checkpoint.optimizer && back.step == run.checkpoint.step, || {
        "optimizer state differs".into()
    })?;

    let idx_path = dir.join("copy.idx");
    save_index(&run.index, &idx_path).map_err(|e| e.to_string())?;
    let idx = load_index(&idx_path).map_err(|e| e.to_string())?;
    ensure(idx == run.index, || "index differs after reload".into())?;
    let idx_bytes = index_file::to_bytes(&run.index).map_err(|e| e.to_string())?;
    ensure(index_file::to_bytes(&idx).map_err(|e| e.to_string())? == idx_bytes, || {
        "index re-encodes differently".into()
    })?;

    let ck_bytes = run.checkpoint.to_bytes();
    let mut rng = Rng::new(5);
    let mut attempts = 0;
    for (name, bytes) in [("checkpoint", &ck_bytes), ("index", &idx_bytes)] {
        let mut cuts: Vec<usize> = (0..200.min(bytes.len())).collect();
        cuts.extend((0..300).map(|_| rng.below(bytes.len())));
        for cut in cuts {
            let path = dir.join("broken");
            std::fs::write(&path, &bytes[..cut]).unwrap();
            let err = if name == "checkpoint" {
                Checkpoint::load(&path).err()
            } else {
                load_index(&path).err()
            };
            ensure(err.as_ref().is_some_and(rejected), || format!("{name} truncated to {cut} bytes: {err:?}"))?;
            attempts += 1;
        }
        for _ in 0..300 {
            let mut broken = bytes.clone();
            let at = rng.below(broken.len());
            broken[at] ^= 1 << rng.below(8);
            let path = dir.join("broken");
            std::fs::write(&path, &broken).unwrap();
            let err = if name == "checkpoint" {
                Checkpoint::load(&path).err()
            } else {
                load_index(&path).err()
            };
            ensure(err.as_ref().is_some_and(rejected), || format!("{name} bit flip at byte {at}: {err:?}"))?;
            attempts += 1;
        }
    }
    Ok(format!("bit-exact round trips; {attempts} truncated or corrupted files rejected"))
}

fn report(id: u32, name: &str, start: Instant, result: Check) -> bool {
    let secs = start.elapsed().as_secs_f64();
    match result {
        Ok(detail) => {
            println!("PASS {id} {name} ({secs:.1} s): {detail}");
            true
        }
        Err(detail) => {
            println!("FAIL {id} {name} ({secs:.1} s): {detail}");
            false
        }
    }
}

fn main() {
    let mut ok = true;
    let t = Instant::now();
    ok &= report(1, "gradient check", t, gradients().and_then(|d| {
        ensure(t.elapsed().as_secs_f64() < 60.0, || "slower than 60 s".into()).map(|_| d)
    }));
    let t = Instant::now();
    ok &= report(2, "ground-truth matrix", t, ground_truth());
    let t = Instant::now();
    ok &= report(3, "style summary contracts", t, summary_contracts());
    let t = Instant::now();
    ok &= report(4, "retrieval oracles", t, oracles());

    let root = tempfile::tempdir().expect("temp dir");
    let (a, b) = (root.path().join("a"), root.path().join("b"));
    let t = Instant::now();
    match library_run(&a) {
        Ok(run) => {
            ok &= report(5, "retrieval precision and similarity vs semantic control", t, table1(&run));
            let t = Instant::now();
            ok &= report(6, "similarity sweep peak", t, sweep_peak(&run));
            let t = Instant::now();
            ok &= report(7, "training loss descent", t, descent(&run));
            let t = Instant::now();
            let det = cli_run(&b).and_then(|_| determinism(&a, &b));
            ok &= report(8, "determinism", t, det);
            let t = Instant::now();
            ok &= report(9, "persistence", t, persistence(&run, root.path()));
        }
        Err(e) => {
            for (id, name) in [(5, "retrieval precision"), (6, "sweep"), (7, "descent"), (8, "determinism"), (9, "persistence")] {
                ok &= report(id, name, t, Err(format!("pipeline failed: {e}")));
            }
        }
    }
    if !ok {
        std::process::exit(1);
    }
}
