//! End-to-end acceptance suite. Each criterion prints one PASS/FAIL line
//! with its runtime and budget; the process exits non-zero on any failure.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use cnnlab_core::datastore::{format_libsvm_line, parse_libsvm_line, read_libsvm};
use cnnlab_core::engine::gradcheck::{check_gradients, Objective};
use cnnlab_core::engine::{init_weights, runnable_spec, Network};
use cnnlab_core::netspec::{
    parse_net, serialize_net, ConvParams, LayerKind, LayerSpec, NetSpec, PoolMethod, PoolParams, Stage,
};
use cnnlab_core::shapecheck::infer_shapes;
use cnnlab_core::taskhub::{Event, Hub, HubConfig, Outcome, TaskKind, TaskState, WorkContext};
use cnnlab_core::tensor::Tensor;
use cnnlab_core::workspace::Workspace;

const BIN: &str = env!("CARGO_BIN_EXE_cnnlab");

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn fx(rel: &str) -> String {
    fixtures().join(rel).to_string_lossy().into_owned()
}

fn corpus(kind: &str) -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = fs::read_dir(fixtures().join(kind))
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read_to_string(&p).unwrap())
        })
        .collect();
    out.sort();
    out
}

/// Runs the binary with `--json` and returns its parsed stdout.
fn cli(ws: &Path, args: &[&str]) -> Value {
    let out = Command::new(BIN).arg("--workspace").arg(ws).arg("--json").args(args).output().unwrap();
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(out.status.success(), "cnnlab {args:?} exited {}: {stderr}", out.status);
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("cnnlab {args:?}: bad json: {e}"))
}

fn parser_round_trip() -> String {
    let valid = corpus("nets/valid");
    let invalid = corpus("nets/invalid");
    let total = valid.len() + invalid.len();
    assert!(total >= 20, "only {total} fixtures");

    let mut kinds = BTreeSet::new();
    for (name, src) in &valid {
        let first = parse_net(src).unwrap_or_else(|e| panic!("{name}: {e}"));
        kinds.extend(first.layers.iter().map(|l| l.kind));
        let text = serialize_net(&first);
        let second = parse_net(&text).unwrap_or_else(|e| panic!("{name} reparsed: {e}"));
        assert_eq!(first, second, "{name}");
        assert_eq!(serialize_net(&second), text, "{name}");
    }
    let all = [
        LayerKind::Data,
        LayerKind::Convolution,
        LayerKind::Pooling,
        LayerKind::InnerProduct,
        LayerKind::ReLU,
        LayerKind::SoftmaxWithLoss,
        LayerKind::Softmax,
        LayerKind::Accuracy,
    ];
    for k in all {
        assert!(kinds.contains(&k), "no valid fixture uses {}", k.as_str());
    }

    let mut stages = BTreeSet::new();
    for (name, src) in &invalid {
        let diags = parse_net(src).err().unwrap_or_else(|| panic!("{name} parsed")).into_vec();
        assert!(!diags.is_empty(), "{name}");
        for d in &diags {
            let (s, e) = (d.span.start, d.span.end);
            assert!(s.offset <= e.offset && e.offset <= src.len(), "{name}: span outside source");
            assert!(s.line >= 1 && s.column >= 1, "{name}: span not set");
            stages.insert(format!("{:?}", d.stage));
        }
    }
    for stage in [Stage::Lexical, Stage::Syntax, Stage::Semantic] {
        assert!(stages.contains(&format!("{stage:?}")), "no fixture triggers a {stage:?} error");
    }
    format!("{} valid + {} invalid fixtures, {} layer kinds", valid.len(), invalid.len(), kinds.len())
}

fn conv_windows(h: usize, k: usize, s: usize, p: usize) -> usize {
    (0..h + 2 * p).step_by(s).filter(|&t| t + k <= h + 2 * p).count()
}

fn pool_windows(h: usize, k: usize, s: usize, p: usize) -> usize {
    let padded = h + 2 * p;
    let mut starts = vec![0];
    while starts.last().unwrap() + k < padded {
        starts.push(starts.last().unwrap() + s);
    }
    starts.into_iter().filter(|&t| t < h + p).count()
}

fn shape_oracle() -> String {
    let mut cases = 0;
    let mut mismatches = Vec::new();
    for k in 1..=7u32 {
        for s in 1..=7u32 {
            for p in 0..=3u32 {
                let mut net = NetSpec::new("grid");
                net.inputs.push("x".into());
                net.layers.push(LayerSpec::conv(
                    "c",
                    "x",
                    "c",
                    ConvParams { num_output: 2, kernel_size: k, stride: Some(s), pad: Some(p) },
                ));
                net.layers.push(LayerSpec::pool(
                    "p",
                    "x",
                    "p",
                    PoolParams { pool: Some(PoolMethod::Max), kernel_size: k, stride: Some(s), pad: Some(p) },
                ));
                for h in 1..=64usize {
                    cases += 2;
                    let (k, s, p) = (k as usize, s as usize, p as usize);
                    let got = infer_shapes(&net, [1, 3, h, h]);
                    if h + 2 * p < k {
                        if got.is_ok() {
                            mismatches.push(format!("k={k} s={s} p={p} h={h}: accepted an oversized kernel"));
                        }
                        continue;
                    }
                    let report = got.unwrap_or_else(|d| panic!("k={k} s={s} p={p} h={h}: {}", d.message));
                    let (c, q) = (conv_windows(h, k, s, p), pool_windows(h, k, s, p));
                    if report.blob("c") != Some([1, 2, c, c]) {
                        mismatches.push(format!("conv k={k} s={s} p={p} h={h}: {:?} vs {c}", report.blob("c")));
                    }
                    if report.blob("p") != Some([1, 3, q, q]) {
                        mismatches.push(format!("pool k={k} s={s} p={p} h={h}: {:?} vs {q}", report.blob("p")));
                    }
                }
            }
        }
    }
    assert!(mismatches.is_empty(), "{} mismatches, first: {}", mismatches.len(), mismatches[0]);
    format!("{cases} cases, 0 mismatches")
}

fn random_tensor(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor {
    let data = (0..shape.iter().product()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::from_vec(shape, data).unwrap()
}

fn gradient_check() -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let nets = [
        (fs::read_to_string(fx("nets/valid/tiny_conv.prototxt")).unwrap(), [2, 1, 8, 8], None),
        (
            r#"layer { name: "data" type: "Data" top: "x" top: "label" }
layer { name: "c1" type: "Convolution" bottom: "x" top: "c1" convolution_param { num_output: 3 kernel_size: 3 stride: 2 pad: 1 } }
layer { name: "r1" type: "ReLU" bottom: "c1" top: "c1" }
layer { name: "p1" type: "Pooling" bottom: "c1" top: "p1" pooling_param { pool: AVE kernel_size: 3 stride: 2 pad: 1 } }
layer { name: "c2" type: "Convolution" bottom: "p1" top: "c2" convolution_param { num_output: 2 kernel_size: 1 } }
layer { name: "p2" type: "Pooling" bottom: "c2" top: "p2" pooling_param { pool: MAX kernel_size: 2 stride: 1 } }
layer { name: "f" type: "InnerProduct" bottom: "p2" top: "f" inner_product_param { num_output: 3 } }
layer { name: "loss" type: "SoftmaxWithLoss" bottom: "f" bottom: "label" top: "loss" }"#
                .to_string(),
            [3, 2, 9, 9],
            None,
        ),
        (
            r#"input: "x"
layer { name: "f" type: "InnerProduct" bottom: "x" top: "f" inner_product_param { num_output: 4 } }
layer { name: "s" type: "Softmax" bottom: "f" top: "s" }"#
                .to_string(),
            [2, 3, 2, 2],
            Some([2, 4, 1, 1]),
        ),
    ];
    let mut kinds = BTreeSet::new();
    let mut checked = 0;
    let mut worst = 0.0f64;
    for (src, shape, probe) in nets {
        let spec = runnable_spec(&parse_net(&src).unwrap()).unwrap();
        kinds.extend(parse_net(&src).unwrap().layers.iter().map(|l| l.kind.as_str()));
        let [n, c, h, w] = shape;
        let net = Network::compile(&spec, [c, h, w]).unwrap();
        let mut weights = init_weights(&spec, [c, h, w], 5).unwrap();
        for lw in weights.values_mut() {
            lw.bias = random_tensor(lw.bias.shape(), &mut rng);
        }
        let batch = random_tensor(shape, &mut rng);
        let objective = match probe {
            Some(p) => Objective::Probe(random_tensor(p, &mut rng)),
            None => Objective::SoftmaxLoss((0..n).map(|_| rng.gen_range(0..net.num_outputs())).collect()),
        };
        for chk in check_gradients(&net, &weights, &batch, &objective, 1e-5).unwrap() {
            assert!(chk.relative_error < 1e-4, "{}: relative error {:e}", chk.tensor, chk.relative_error);
            worst = worst.max(chk.relative_error);
            checked += 1;
        }
    }
    assert_eq!(kinds.len(), 8, "kinds covered: {kinds:?}");
    format!("{checked} gradient tensors over 8 layer kinds, worst relative error {worst:.1e}")
}

fn end_to_end_training() -> String {
    let mut checksums = Vec::new();
    let mut times = Vec::new();
    let mut last = Value::Null;
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        let t = Instant::now();
        let v = cli(
            dir.path(),
            &[
                "train",
                "--net",
                &fx("nets/valid/tiny_conv.prototxt"),
                "--solver",
                &fx("solvers/tiny.prototxt"),
                "--dataset",
                "synthetic:blobs:200:8:5",
            ],
        );
        times.push(t.elapsed());
        assert!(t.elapsed() < Duration::from_secs(60), "run took {:?}", t.elapsed());
        let id = v["model_id"].as_str().unwrap();
        let bytes = fs::read(dir.path().join("models").join(format!("{id}.model"))).unwrap();
        checksums.push(bytes);
        last = v;
    }
    assert_eq!(checksums[0], checksums[1], "model files differ between runs");
    let acc = last["train_accuracy"].as_f64().unwrap();
    let epochs = last["epochs_completed"].as_u64().unwrap();
    assert!(acc >= 0.95, "training accuracy {acc}");
    assert!(epochs <= 20, "{epochs} epochs");
    assert_eq!(last["model"]["meta"]["class_names"], json!(["a", "b"]));
    format!(
        "accuracy {acc:.3} after {epochs} epochs; two runs bit-identical ({} bytes); {:.2} s and {:.2} s",
        checksums[0].len(),
        times[0].as_secs_f64(),
        times[1].as_secs_f64()
    )
}

struct Pipeline {
    _dir: tempfile::TempDir,
    ws: PathBuf,
    test_features: String,
}

fn experiment_pipeline(state: &mut Option<Pipeline>) -> String {
    let dir = tempfile::tempdir().unwrap();
    let ws = dir.path().to_path_buf();
    let imported = cli(&ws, &["import", "synthetic:blobs:200:8:5"]);
    let id = imported["dataset_id"].as_str().unwrap();
    let split = cli(&ws, &["split", id, "--fraction", "0.7", "--seed", "11", "--stratified"]);
    let (train, test) = (split["train"]["id"].as_str().unwrap(), split["test"]["id"].as_str().unwrap());
    let trained = cli(
        &ws,
        &[
            "train",
            "--net",
            &fx("nets/valid/tiny_conv.prototxt"),
            "--solver",
            &fx("solvers/tiny.prototxt"),
            "--dataset",
            train,
        ],
    );
    let model = trained["model_id"].as_str().unwrap();

    // ip2 produces the logits, so ip1 (after its in-place ReLU) is penultimate.
    let extracted = cli(&ws, &["extract", "--model", model, "--dataset", test, "--layer", "ip1"]);
    assert_eq!(extracted["features"][0]["blob_shape"], json!([8, 1, 1]));
    let test_features = extracted["features_ids"][0].as_str().unwrap().to_string();

    let result = cli(&ws, &["test", "--model", model, "--dataset", test, "--svm-layer", "ip1", "--svm-train", train]);
    assert_eq!(result["method"], "svm");
    let m = &result["metrics"];
    let k = m["num_classes"].as_u64().unwrap() as usize;
    let cells: Vec<u64> = m["confusion"].as_array().unwrap().iter().map(|c| c.as_u64().unwrap()).collect();
    assert_eq!(cells.len(), k * k);
    let expected_rows: Vec<u64> =
        split["test"]["class_counts"].as_array().unwrap().iter().map(|c| c.as_u64().unwrap()).collect();
    let rows: Vec<u64> = cells.chunks(k).map(|r| r.iter().sum()).collect();
    assert_eq!(rows, expected_rows, "row sums must equal per-class test counts");
    let total: u64 = cells.iter().sum();
    let trace: u64 = (0..k).map(|i| cells[i * k + i]).sum();
    assert_eq!(total, m["total"].as_u64().unwrap());
    assert_eq!(total, split["test"]["samples"].as_u64().unwrap());
    assert_eq!(trace, m["correct"].as_u64().unwrap());
    assert_eq!(m["global_accuracy"].as_f64().unwrap(), trace as f64 / total as f64);
    for i in 0..k {
        assert_eq!(m["per_class_accuracy"][i].as_f64().unwrap(), cells[i * k + i] as f64 / rows[i] as f64);
    }
    let acc = m["global_accuracy"].as_f64().unwrap();
    assert!(acc >= 0.95, "held-out svm accuracy {acc}");

    *state = Some(Pipeline { _dir: dir, ws, test_features });
    format!("held-out svm accuracy {acc:.3} on {total} samples; row sums and trace exact")
}

/// A task made of `units` sleeps that checks for cancellation before each.
fn unit_work(
    units: usize,
    unit: Duration,
    done: Arc<AtomicUsize>,
    fail: bool,
) -> impl FnOnce(&dyn WorkContext) -> Outcome {
    move |ctx| {
        for u in 0..units {
            if ctx.is_cancelled() {
                return Outcome::Stopped(json!({ "units": u }));
            }
            thread::sleep(unit);
            done.fetch_add(1, Ordering::SeqCst);
            ctx.report_progress((u + 1) as f64 / units as f64, None, json!({ "unit": u + 1 }));
        }
        if fail {
            Outcome::Failed("scripted failure".into())
        } else {
            Outcome::Succeeded(json!({ "units": units }))
        }
    }
}

fn legal_events(events: &[Event]) -> bool {
    match events {
        [Event::Stopped] => true,
        [Event::Started, middle @ .., last] => {
            middle.iter().all(|e| *e == Event::Progress)
                && matches!(last, Event::Finished | Event::Failed | Event::Stopped)
        }
        _ => false,
    }
}

fn cancellation_stress() -> String {
    let hub = Arc::new(Hub::new(HubConfig { workers: 4, feed_capacity: 100_000, store: None }));
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let unit = Duration::from_millis(2);
    let kinds = [TaskKind::Import, TaskKind::Train, TaskKind::Extract, TaskKind::Test, TaskKind::Export];

    // Samples states while the stress runs, to catch illegal transitions.
    let observer = {
        let hub = Arc::clone(&hub);
        thread::spawn(move || {
            let mut seen: BTreeMap<String, TaskState> = BTreeMap::new();
            let mut bad = Vec::new();
            let deadline = Instant::now() + Duration::from_secs(25);
            loop {
                let list = hub.list();
                for rec in &list {
                    let prev = seen.insert(rec.id.clone(), rec.state);
                    if let Some(p) = prev {
                        if p != rec.state && !p.can_become(rec.state) {
                            bad.push(format!("{}: {p:?} -> {:?}", rec.id, rec.state));
                        }
                    }
                }
                if (list.len() == 100 && list.iter().all(|r| r.state.is_terminal())) || Instant::now() > deadline {
                    return bad;
                }
                thread::sleep(Duration::from_micros(300));
            }
        })
    };

    let mut tasks = Vec::new();
    for i in 0..100 {
        let done = Arc::new(AtomicUsize::new(0));
        let units = rng.gen_range(1..40);
        let fail = rng.gen_bool(0.1);
        let work = unit_work(units, unit, Arc::clone(&done), fail);
        let rec = hub.submit(kinds[i % kinds.len()], json!({ "i": i }), move |ctx| work(ctx));
        tasks.push((rec.id, done, None::<usize>, fail));
        // Cancel an earlier task about half the time, often one that is
        // running right now.
        if rng.gen_bool(0.5) {
            let running: Vec<usize> =
                (0..tasks.len()).filter(|&j| hub.get(&tasks[j].0).unwrap().state == TaskState::Running).collect();
            let j = if !running.is_empty() && rng.gen_bool(0.6) {
                running[rng.gen_range(0..running.len())]
            } else {
                rng.gen_range(0..tasks.len())
            };
            let (id, done, at, _) = &mut tasks[j];
            if at.is_none() && hub.cancel(id).unwrap() {
                *at = Some(done.load(Ordering::SeqCst));
            }
        }
        thread::sleep(Duration::from_micros(rng.gen_range(0..3000)));
    }

    let mut cancelled_running = 0;
    let mut excess = 0;
    for (id, done, at, fail) in &tasks {
        let rec = hub.wait(id, Duration::from_secs(20)).unwrap();
        assert!(rec.state.is_terminal(), "{id} left {:?}", rec.state);
        if let Some(at) = at {
            // A scripted failure after the last unit may still win the race.
            let allowed = if *fail { &[TaskState::Stopped, TaskState::Failed][..] } else { &[TaskState::Stopped][..] };
            assert!(allowed.contains(&rec.state), "{id} acknowledged a cancel but ended {:?}", rec.state);
            let after = done.load(Ordering::SeqCst) - at;
            if rec.started_ms.is_some() {
                cancelled_running += 1;
                excess = excess.max(after);
            }
            assert!(after <= 1, "{id} ran {after} units after cancel");
        }
    }
    let bad = observer.join().unwrap();
    assert!(bad.is_empty(), "illegal transitions: {bad:?}");

    let page = hub.poll_feed(0);
    assert_eq!(page.floor, 0);
    let seqs: Vec<u64> = page.notifications.iter().map(|n| n.sequence).collect();
    assert_eq!(seqs, (1..=page.latest).collect::<Vec<_>>(), "feed has gaps");
    let mut per_task: BTreeMap<&str, Vec<Event>> = BTreeMap::new();
    for n in &page.notifications {
        per_task.entry(n.task_id.as_str()).or_default().push(n.event);
    }
    assert_eq!(per_task.len(), 100);
    for (id, events) in &per_task {
        assert!(legal_events(events), "{id}: {events:?}");
        let final_state = hub.get(id).unwrap().state;
        let expected = match events.last().unwrap() {
            Event::Finished => TaskState::Succeeded,
            Event::Failed => TaskState::Failed,
            _ => TaskState::Stopped,
        };
        assert_eq!(final_state, expected, "{id}");
    }
    let stopped = tasks.iter().filter(|t| t.2.is_some()).count();
    format!(
        "100 tasks, {stopped} cancelled ({cancelled_running} while running, at most {excess} unit after cancel); feed 1..{} gapless",
        page.latest
    )
}

fn libsvm_interop(state: &Option<Pipeline>) -> String {
    let p = state.as_ref().expect("experiment pipeline must run first");
    let out = p.ws.join("exported.libsvm");
    cli(&p.ws, &["export", &p.test_features, "--out", out.to_str().unwrap()]);
    let stored = Workspace::open(&p.ws).unwrap().features(&p.test_features).unwrap();
    let text = fs::read_to_string(&out).unwrap();
    let back = read_libsvm(&text, Some(stored.dim())).unwrap();
    assert_eq!(back.len(), stored.len());
    let mut values = 0;
    for (i, (label, row)) in back.iter().enumerate() {
        assert_eq!(*label, stored.labels[i] as i64);
        for (a, b) in row.iter().zip(&stored.vectors[i]) {
            assert!(a.to_bits() == b.to_bits() || (*a == 0.0 && *b == 0.0), "row {i}: {a} vs {b}");
            values += 1;
        }
    }

    // Label first, then ascending one-based index:value pairs, zeros left out.
    let hand = [
        ("1 1:0.5 3:-2", 1, vec![0.5, 0.0, -2.0, 0.0]),
        ("-1 2:0.001 4:7", -1, vec![0.0, 0.001, 0.0, 7.0]),
        ("+1 1:1 2:2.5 3:1e-3", 1, vec![1.0, 2.5, 0.001, 0.0]),
    ];
    let text: String = hand.iter().map(|(l, _, _)| format!("{l}\n")).collect();
    let rows = read_libsvm(&text, Some(4)).unwrap();
    for ((line, label, dense), (l, v)) in hand.iter().zip(&rows) {
        assert_eq!((l, v), (label, dense), "{line}");
    }
    assert_eq!(format_libsvm_line(1, &[0.5, 0.0, -2.0, 0.0]), "1 1:0.5 3:-2");
    assert_eq!(format_libsvm_line(-1, &[0.0, 0.001, 0.0, 7.0]), "-1 2:0.001 4:7");
    assert!(parse_libsvm_line("1 3:1 2:1", 1).is_err(), "indices must ascend");
    assert!(parse_libsvm_line("1 0:1", 1).is_err(), "indices start at 1");
    format!("{} rows, {values} values bit-exact; 3 hand-written lines match", back.len())
}

fn main() {
    let mut pipeline = None;
    let mut failures = 0;
    let mut run = |name: &str, budget: Option<Duration>, f: &mut dyn FnMut() -> String| {
        let t = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(f));
        let elapsed = t.elapsed();
        let over = budget.is_some_and(|b| elapsed >= b);
        let budget_text = budget.map(|b| format!(" < {} s", b.as_secs())).unwrap_or_default();
        let line = match result {
            Ok(detail) if !over => format!("PASS  {name:<22} {:>7.2} s{budget_text}  {detail}", elapsed.as_secs_f64()),
            Ok(detail) => {
                format!("FAIL  {name:<22} {:>7.2} s{budget_text}  over budget; {detail}", elapsed.as_secs_f64())
            }
            Err(e) => {
                let msg =
                    e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
                format!("FAIL  {name:<22} {:>7.2} s{budget_text}  {}", elapsed.as_secs_f64(), msg.unwrap_or_default())
            }
        };
        if line.starts_with("FAIL") {
            failures += 1;
        }
        println!("{line}");
    };
    panic::set_hook(Box::new(|_| {}));
    println!("acceptance criteria");
    run("parser round-trip", Some(Duration::from_secs(1)), &mut parser_round_trip);
    run("shape oracle", Some(Duration::from_secs(5)), &mut shape_oracle);
    run("gradient check", Some(Duration::from_secs(10)), &mut gradient_check);
    run("end-to-end training", Some(Duration::from_secs(60)), &mut end_to_end_training);
    run("experiment pipeline", Some(Duration::from_secs(30)), &mut || experiment_pipeline(&mut pipeline));
    run("cancellation", Some(Duration::from_secs(30)), &mut cancellation_stress);
    let p = &pipeline;
    run("libsvm interop", None, &mut || libsvm_interop(p));
    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
    println!("all criteria passed");
}
