//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.
//!
//! Criterion 7 runs the full 5000-episode protocol and is only executed when
//! `MARKER_RALLY_EXTENDED=1`; otherwise it reports SKIP.

#[path = "../../core/tests/common/toy.rs"]
mod toy;

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use marker_rally::harness::{
    eval_oval, eval_segments, reward_log_csv, segment_pairs, train, Algo, CenterlineFollower, EvalOptions,
    TrainConfig, TrainState,
};
use marker_rally::nn::{Activation, Mlp};
use marker_rally::sim::{integrate_unicycle, reward, RewardConfig};
use marker_rally::track::{
    default_entry_pose, generate_segment, generate_track, oval_specs, segment_variants, Direction, NoiseConfig,
    CENTERLINE_TURN_RADIUS, PAIRS_PER_SEGMENT,
};
use marker_rally::Pose;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    passed: Option<bool>,
    detail: String,
}

fn pass_if(ok: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed: Some(ok),
        detail: detail.into(),
    }
}

fn skip(detail: impl Into<String>) -> Outcome {
    Outcome {
        passed: None,
        detail: detail.into(),
    }
}

// ---------------------------------------------------------------------------

fn reward_exactness() -> Outcome {
    let cfg = RewardConfig::default();
    let exact = [(0.0, 10.0), (15.0, 0.0), (10.0, 5.0)];
    let worst = exact
        .iter()
        .map(|&(theta, want)| (reward(theta, &cfg) - want).abs())
        .fold(0.0f64, f64::max);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let bounded = (0..100_000).all(|_| {
        let r = reward(rng.random_range(-360.0..360.0f64).abs(), &cfg);
        (0.0..=10.0).contains(&r)
    });
    pass_if(
        worst <= 1e-9 && bounded,
        format!("max |error| at 0/15/10 deg = {worst:.1e}; 1e5 random angles in [0, 10]: {bounded}"),
    )
}

fn geometry_suite() -> Outcome {
    let variants = segment_variants();
    let mut built = 0;
    for pair in segment_pairs() {
        if generate_track(&pair, NoiseConfig::off(), 0).is_ok() {
            built += 1;
        }
    }

    let mut width_err = 0.0f64;
    let mut radius_err = 0.0f64;
    for spec in &variants {
        let track = generate_track(&[*spec], NoiseConfig::off(), 0).unwrap();
        for k in 0..PAIRS_PER_SEGMENT {
            let l = track.markers.iter().find(|m| m.id == 2 * k + 1).unwrap();
            let r = track.markers.iter().find(|m| m.id == 2 * k + 2).unwrap();
            width_err = width_err.max((l.position().distance(r.position()) - 2.0).abs());
            if !spec.is_straight() {
                // The turn centre lies one centre-line radius to the turning side of the entry.
                let side = f64::from(spec.turn_angle_deg().signum());
                let centre = default_entry_pose().offset(0.0, side * CENTERLINE_TURN_RADIUS);
                let (inner, outer) = if side > 0.0 { (l, r) } else { (r, l) };
                radius_err = radius_err
                    .max((inner.position().distance(centre) - 10.0).abs())
                    .max((outer.position().distance(centre) - 12.0).abs());
            }
        }
    }

    let closure = [Direction::Clockwise, Direction::Anticlockwise]
        .iter()
        .map(|&dir| {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let entry = default_entry_pose();
            let mut pose = entry;
            for (i, spec) in oval_specs(dir).iter().enumerate() {
                let first = 1 + PAIRS_PER_SEGMENT * i as u32;
                pose = generate_segment(*spec, pose, first, &NoiseConfig::off(), &mut rng).unwrap().exit_pose;
            }
            let heading = marker_rally::geometry::normalize_angle(pose.heading - entry.heading).abs();
            (pose.x - entry.x).hypot(pose.y - entry.y).max(heading)
        })
        .fold(0.0f64, f64::max);
    let ok = variants.len() == 13 && built == 169 && width_err <= 1e-9 && radius_err <= 1e-9 && closure < 1e-6;
    pass_if(
        ok,
        format!(
            "{} variants, {built} two-segment tracks, pair width err {width_err:.1e}, \
             radius err {radius_err:.1e}, oval closure {closure:.1e}",
            variants.len()
        ),
    )
}

fn rk4(pose: Pose, v: f64, w: f64, duration: f64, h: f64) -> Pose {
    let f = |s: [f64; 3]| [v * s[2].cos(), v * s[2].sin(), w];
    let mut s = [pose.x, pose.y, pose.heading];
    let steps = (duration / h).round() as usize;
    for _ in 0..steps {
        let add = |a: [f64; 3], b: [f64; 3], k: f64| [a[0] + k * b[0], a[1] + k * b[1], a[2] + k * b[2]];
        let k1 = f(s);
        let k2 = f(add(s, k1, h / 2.0));
        let k3 = f(add(s, k2, h / 2.0));
        let k4 = f(add(s, k3, h));
        for i in 0..3 {
            s[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    Pose::new(s[0], s[1], s[2])
}

fn kinematics_oracle() -> Outcome {
    let v = 0.5 / 0.85;
    let mut worst = 0.0f64;
    for i in 0..=80 {
        let w = -0.4 + 0.01 * f64::from(i);
        for start in [Pose::new(0.0, 0.0, 1.2), Pose::new(3.0, -1.0, -2.9)] {
            let exact = integrate_unicycle(start, v, w, 0.2);
            let numeric = rk4(start, v, w, 0.2, 1e-5);
            worst = worst.max((exact.x - numeric.x).hypot(exact.y - numeric.y));
        }
    }
    pass_if(worst < 1e-6, format!("81 angular rates, max position gap {worst:.2e} units"))
}

/// f64 shadow of an [`Mlp`] used as the finite-difference reference.
struct Shadow {
    layers: Vec<(usize, usize, Activation, Vec<f64>, Vec<f64>)>,
}

impl Shadow {
    fn of(net: &Mlp) -> Self {
        Self {
            layers: net
                .layers()
                .iter()
                .map(|l| {
                    (
                        l.inputs,
                        l.outputs,
                        l.activation,
                        l.weights.iter().map(|&w| f64::from(w)).collect(),
                        l.biases.iter().map(|&b| f64::from(b)).collect(),
                    )
                })
                .collect(),
        }
    }

    /// `sum(output * g)` over the batch, plus the sign pattern of every ReLU input.
    fn objective(&self, input: &[f64], g: &[f64]) -> (f64, Vec<bool>) {
        let n0 = self.layers[0].0;
        let mut total = 0.0;
        let mut pattern = Vec::new();
        for (row, grow) in input.chunks(n0).zip(g.chunks(self.layers.last().unwrap().1)) {
            let mut x = row.to_vec();
            for (nin, nout, act, w, b) in &self.layers {
                let z: Vec<f64> = (0..*nout)
                    .map(|o| b[o] + w[o * nin..(o + 1) * nin].iter().zip(&x).map(|(a, c)| a * c).sum::<f64>())
                    .collect();
                x = match act {
                    Activation::Relu => {
                        pattern.extend(z.iter().map(|&v| v > 0.0));
                        z.iter().map(|&v| v.max(0.0)).collect()
                    }
                    Activation::Tanh => z.iter().map(|&v| v.tanh()).collect(),
                    Activation::Linear => z,
                };
            }
            total += x.iter().zip(grow).map(|(a, b)| a * b).sum::<f64>();
        }
        (total, pattern)
    }
}

fn gradient_checks() -> Outcome {
    let archs: [(&str, Vec<usize>, Vec<Activation>); 2] = [
        (
            "12-1024-512-2",
            vec![12, 1024, 512, 2],
            vec![Activation::Relu, Activation::Relu, Activation::Linear],
        ),
        (
            "12-64-64-32-1",
            vec![12, 64, 64, 32, 1],
            vec![Activation::Relu, Activation::Relu, Activation::Relu, Activation::Tanh],
        ),
    ];
    let h = 1e-4;
    let batch = 3;
    let mut details = Vec::new();
    let mut ok = true;
    for (name, sizes, acts) in &archs {
        let (mut checked, mut skipped, mut worst, mut raw_worst) = (0usize, 0usize, 0.0f64, 0.0f64);
        for draw in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(draw);
            let mut net = Mlp::new(sizes, acts, draw).unwrap();
            for l in net.layers_mut() {
                l.biases.iter_mut().for_each(|b| *b = rng.random_range(-0.1..0.1));
            }
            let input: Vec<f32> = (0..batch * sizes[0]).map(|_| rng.random_range(-1.0..1.0)).collect();
            let g: Vec<f32> = (0..batch * net.output_size()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (_, cache) = net.forward(&input).unwrap();
            let grads = net.backward(&cache, &g).unwrap();

            let mut shadow = Shadow::of(&net);
            let x64: Vec<f64> = input.iter().map(|&v| f64::from(v)).collect();
            let g64: Vec<f64> = g.iter().map(|&v| f64::from(v)).collect();
            let mut compare = |analytic: f64, numeric: f64| {
                // Same definition as the property test: the denominator is floored at 1e-3 because
                // an f32 gradient that cancels down to ~1e-5 only keeps a few significant digits.
                let gap = (analytic - numeric).abs();
                worst = worst.max(gap / analytic.abs().max(numeric.abs()).max(1e-3));
                let scale = analytic.abs().max(numeric.abs());
                if scale > 0.0 {
                    raw_worst = raw_worst.max(gap / scale);
                }
                checked += 1;
            };
            for li in 0..shadow.layers.len() {
                for pick in 0..6 {
                    let is_bias = pick >= 4;
                    let len = if is_bias { shadow.layers[li].4.len() } else { shadow.layers[li].3.len() };
                    let idx = rng.random_range(0..len);
                    let param = |s: &mut Shadow| -> *mut f64 {
                        if is_bias {
                            &mut s.layers[li].4[idx]
                        } else {
                            &mut s.layers[li].3[idx]
                        }
                    };
                    let p = param(&mut shadow);
                    // SAFETY: `p` points into `shadow`, which is not resized while it is used.
                    let orig = unsafe { *p };
                    unsafe { *p = orig + h };
                    let (fp, pat_p) = shadow.objective(&x64, &g64);
                    unsafe { *p = orig - h };
                    let (fm, pat_m) = shadow.objective(&x64, &g64);
                    unsafe { *p = orig };
                    if pat_p != pat_m {
                        skipped += 1;
                        continue;
                    }
                    let analytic = if is_bias {
                        grads.layers[li].biases[idx]
                    } else {
                        grads.layers[li].weights[idx]
                    };
                    compare(f64::from(analytic), (fp - fm) / (2.0 * h));
                }
            }
            for _ in 0..2 {
                let idx = rng.random_range(0..x64.len());
                let mut xp = x64.clone();
                xp[idx] += h;
                let mut xm = x64.clone();
                xm[idx] -= h;
                let ((fp, pp), (fm, pm)) = (shadow.objective(&xp, &g64), shadow.objective(&xm, &g64));
                if pp != pm {
                    skipped += 1;
                    continue;
                }
                compare(f64::from(grads.input[idx]), (fp - fm) / (2.0 * h));
            }
        }
        let arch_ok = worst < 1e-4 && skipped * 10 < checked;
        ok &= arch_ok;
        details.push(format!(
            "{name}: {checked} coords, max rel err {worst:.2e} (unfloored {raw_worst:.2e}), {skipped} skipped at kinks"
        ));
    }
    pass_if(ok, details.join("; "))
}

fn toy_agents() -> Outcome {
    let budget = Duration::from_secs(300);
    let optimal = toy::Chain::optimal_policy(0.99);
    let start = Instant::now();
    let dqn_ok = (0..5u64)
        .filter(|&seed| toy::dqn_chain_policy(&toy::train_dqn_chain(seed, 20_000)) == optimal)
        .count();
    let dqn_time = start.elapsed();
    let start = Instant::now();
    let errors: Vec<f32> = (0..5u64)
        .map(|seed| toy::DriveToOrigin::evaluate(&toy::train_td3_drive(seed, 30_000), 1000 + seed, 200))
        .collect();
    let td3_time = start.elapsed();
    let td3_ok = errors.iter().filter(|&&e| e < 0.1).count();
    let shown: Vec<String> = errors.iter().map(|e| format!("{e:.3}")).collect();
    pass_if(
        dqn_ok >= 3 && td3_ok >= 3 && dqn_time < budget && td3_time < budget,
        format!(
            "DQN chain optimal on {dqn_ok}/5 seeds (20k updates, {:.0}s); TD3 |terminal error| < 0.1 on \
             {td3_ok}/5 seeds (30k steps, {:.0}s): [{}]",
            dqn_time.as_secs_f64(),
            td3_time.as_secs_f64(),
            shown.join(", ")
        ),
    )
}

fn smoke_config(seed: u64) -> TrainConfig {
    TrainConfig {
        algo: Algo::Td3,
        episodes: 500,
        checkpoint_interval: 500,
        seed,
        ..TrainConfig::default()
    }
}

fn training_curve() -> Outcome {
    let mut ratios = Vec::new();
    for seed in 1..=5u64 {
        let cfg = smoke_config(seed);
        let (_, log) = train(&cfg, TrainState::fresh(&cfg).unwrap(), &mut ()).unwrap();
        let mean = |rows: &[marker_rally::harness::EpisodeLog]| {
            rows.iter().map(|r| r.total_reward).sum::<f64>() / rows.len() as f64
        };
        let (first, last) = (mean(&log[..100]), mean(&log[log.len() - 100..]));
        ratios.push(last / first);
    }
    let good = ratios.iter().filter(|&&r| r >= 2.0).count();
    let shown: Vec<String> = ratios.iter().map(|r| format!("{r:.2}")).collect();
    pass_if(
        good >= 3,
        format!("last-100 / first-100 mean reward per seed: [{}]; {good}/5 seeds >= 2x", shown.join(", ")),
    )
}

fn full_protocol(bin: &Path, work: &Path) -> Outcome {
    if std::env::var("MARKER_RALLY_EXTENDED").as_deref() != Ok("1") {
        return skip("set MARKER_RALLY_EXTENDED=1 to run the 5000-episode TD3 and DQN protocol (hours)");
    }
    let mut parts = Vec::new();
    let mut ok = true;
    for (algo, min_finish, min_avg) in [("td3", 50.0, 70.0), ("dqn", 20.0, 0.0)] {
        let out = work.join(format!("full_{algo}"));
        let status = Command::new(bin)
            .args(["--seed", "0", "--out"])
            .arg(&out)
            .args(["train", "--algo", algo, "--episodes", "5000"])
            .status()
            .unwrap();
        let eval = out.join("eval");
        let status2 = Command::new(bin)
            .arg("--out")
            .arg(&eval)
            .arg("eval")
            .arg(out.join("checkpoints").join("ep_05000"))
            .status()
            .unwrap();
        let summary: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(eval.join("eval_segments_summary.json")).unwrap()).unwrap();
        let finish = summary["summary"]["finish_pct"].as_f64().unwrap();
        let avg = summary["summary"]["avg_distance_pct"].as_f64().unwrap();
        let this = status.success() && status2.success() && finish >= min_finish && avg >= min_avg;
        ok &= this;
        parts.push(format!("{algo}: finish {finish:.2}% avg {avg:.2}%"));
    }
    pass_if(ok, parts.join("; "))
}

fn run_cli(bin: &Path, args: &[&str], out: &Path) -> bool {
    Command::new(bin)
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn determinism(bin: &Path, work: &Path) -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    for algo in ["dqn", "td3"] {
        let args = ["--seed", "1", "train", "--algo", algo, "--episodes", "50", "--checkpoint-interval", "50"];
        let (a, b) = (work.join(format!("det_{algo}_a")), work.join(format!("det_{algo}_b")));
        let ran = run_cli(bin, &args, &a) && run_cli(bin, &args, &b);
        let logs_equal = ran && fs::read(a.join("reward_log.csv")).ok() == fs::read(b.join("reward_log.csv")).ok();
        let rows = fs::read_to_string(a.join("reward_log.csv")).map(|t| t.lines().count() - 1).unwrap_or(0);

        let ck = a.join("checkpoints").join("ep_00050");
        let ck = ck.to_str().unwrap();
        let (e1, e2) = (work.join(format!("det_{algo}_e1")), work.join(format!("det_{algo}_e2")));
        let evals = run_cli(bin, &["eval", ck], &e1) && run_cli(bin, &["eval", ck], &e2);
        let csv_equal =
            evals && fs::read(e1.join("eval_segments.csv")).ok() == fs::read(e2.join("eval_segments.csv")).ok();
        ok &= logs_equal && csv_equal && rows == 50;
        notes.push(format!("{algo}: {rows}-row logs identical {logs_equal}, eval CSVs identical {csv_equal}"));
    }
    // The library path gives the same bytes as the CLI.
    let cfg = TrainConfig {
        algo: Algo::Td3,
        episodes: 50,
        checkpoint_interval: 50,
        seed: 1,
        ..TrainConfig::default()
    };
    let (_, log) = train(&cfg, TrainState::fresh(&cfg).unwrap(), &mut ()).unwrap();
    let lib_equal = fs::read_to_string(work.join("det_td3_a").join("reward_log.csv")).ok() == Some(reward_log_csv(&log));
    ok &= lib_equal;
    notes.push(format!("library log matches CLI {lib_equal}"));
    pass_if(ok, notes.join("; "))
}

fn csv_rows(path: &Path) -> usize {
    fs::read_to_string(path).map(|t| t.lines().count().saturating_sub(1)).unwrap_or(0)
}

fn protocol_counts(bin: &Path, work: &Path) -> Outcome {
    let scripted = CenterlineFollower::default();
    let opts = EvalOptions::default();
    let seg = eval_segments(&scripted, &opts).unwrap();
    let mut ok = seg.episodes.len() == 169;
    let mut notes = vec![format!("segments {} rows", seg.episodes.len())];
    for dir in [Direction::Clockwise, Direction::Anticlockwise] {
        let r = eval_oval(&scripted, dir, &EvalOptions { noise: true, ..opts }).unwrap();
        let b = r.start_breakdown.unwrap();
        ok &= r.episodes.len() == 90 && b.total() == r.summary.finished;
        notes.push(format!("oval {dir} {} rows, L/C/R {}/{}/{} of {}", r.episodes.len(), b.left, b.centre, b.right, r.summary.finished));
    }

    // A weak checkpoint through the CLI exercises a non-trivial breakdown.
    let ck = work.join("det_td3_a").join("checkpoints").join("ep_00050");
    let out = work.join("counts");
    let ran = run_cli(bin, &["eval", ck.to_str().unwrap(), "--suite", "segments"], &out)
        && run_cli(bin, &["eval", ck.to_str().unwrap(), "--suite", "oval", "--direction", "both", "--noise"], &out)
        && run_cli(bin, &["eval", ck.to_str().unwrap(), "--suite", "oval", "--direction", "cw"], &out);
    let seg_rows = csv_rows(&out.join("eval_segments.csv"));
    let cw_rows = csv_rows(&out.join("eval_oval-cw.csv"));
    let both_rows = csv_rows(&out.join("eval_oval.csv"));
    let summary: serde_json::Value = fs::read_to_string(out.join("eval_oval_summary.json"))
        .ok()
        .and_then(|t| serde_json::from_str(&t).ok())
        .unwrap_or_default();
    let mut sums_ok = true;
    for part in summary["directions"].as_array().cloned().unwrap_or_default() {
        let b = &part["start_breakdown"];
        let total = b["left"].as_u64().unwrap_or(0) + b["centre"].as_u64().unwrap_or(0) + b["right"].as_u64().unwrap_or(0);
        sums_ok &= part["summary"]["episodes"].as_u64() == Some(90) && Some(total) == part["summary"]["finished"].as_u64();
    }
    ok &= ran && seg_rows == 169 && cw_rows == 90 && both_rows == 180 && sums_ok;
    notes.push(format!(
        "CLI checkpoint: segments {seg_rows} rows, oval cw {cw_rows} rows, both {both_rows} rows, breakdown sums {sums_ok}"
    ));
    pass_if(ok, notes.join("; "))
}

// ---------------------------------------------------------------------------

fn main() {
    let bin = Path::new(env!("CARGO_BIN_EXE_marker-rally")).to_path_buf();
    let work = tempfile::tempdir().expect("temp dir");
    let work_path = work.path().to_path_buf();

    type Check<'a> = Box<dyn Fn() -> Outcome + 'a>;
    let criteria: Vec<(u32, &str, Option<Duration>, Check)> = vec![
        (1, "reward exactness", Some(Duration::from_secs(1)), Box::new(reward_exactness)),
        (2, "geometry suite", Some(Duration::from_secs(5)), Box::new(geometry_suite)),
        (3, "kinematics oracle", Some(Duration::from_secs(10)), Box::new(kinematics_oracle)),
        (4, "gradient checks", Some(Duration::from_secs(120)), Box::new(gradient_checks)),
        (5, "agent correctness at toy scale", None, Box::new(toy_agents)),
        (6, "training-curve property", None, Box::new(training_curve)),
        (7, "full-protocol reproduction", None, Box::new(|| full_protocol(&bin, &work_path))),
        (8, "determinism", Some(Duration::from_secs(120)), Box::new(|| determinism(&bin, &work_path))),
        (9, "protocol counts", Some(Duration::from_secs(600)), Box::new(|| protocol_counts(&bin, &work_path))),
    ];

    let mut failures = 0;
    for (id, name, budget, check) in &criteria {
        let start = Instant::now();
        let mut outcome = check();
        let elapsed = start.elapsed();
        if let (Some(true), Some(limit)) = (outcome.passed, budget) {
            if elapsed > *limit {
                outcome.passed = Some(false);
                outcome.detail.push_str(&format!("; over the {limit:?} budget"));
            }
        }
        let tag = match outcome.passed {
            Some(true) => "PASS",
            Some(false) => {
                failures += 1;
                "FAIL"
            }
            None => "SKIP",
        };
        println!("[{tag}] criterion {id}: {name} ({:.2}s) {}", elapsed.as_secs_f64(), outcome.detail);
    }
    if failures > 0 {
        println!("{failures} criterion(s) failed");
        std::process::exit(1);
    }
    println!("all executed criteria passed");
}
