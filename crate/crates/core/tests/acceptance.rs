use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use playlist_attrs::cluster::{alpha_grid, analyze_clusters, leading_threshold, ClusterConfig};
use playlist_attrs::domain::AttributeTask;
use playlist_attrs::eval::{run_experiment, split_users, weighted_f1, ExperimentConfig, GridSpec};
use playlist_attrs::features::Featurizer;
use playlist_attrs::ingest::load_corpus;
use playlist_attrs::learn::{gradient_check, softmax_cross_entropy, Activation, DeepSet, Mlp, ModelKind};
use playlist_attrs::stats::{
    one_way_anova, pearson_r, significance_matrix, student_t_test, welch_t_test, SignificanceOptions,
};
use playlist_attrs::synth::{generate_corpus, AttributeSpec, CountDist, GenerationSpec, PlantedEffect};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ContinuousCDF, FisherSnedecor, StudentsT};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn close(name: &str, got: f64, want: f64, tol: f64) -> Result<(), String> {
    ensure((got - want).abs() <= tol, || format!("{name}: got {got}, want {want} (tol {tol})"))
}

fn normal_sample(rng: &mut ChaCha8Rng, n: usize, mu: f64, sd: f64) -> Vec<f64> {
    (0..n).map(|_| mu + sd * { let z: f64 = StandardNormal.sample(rng); z }).collect::<Vec<f64>>()
}

fn leading_fixture() -> Outcome {
    let th = leading_threshold(&[0.28, 0.68, 0.04], 0.5).map_err(|e| e.to_string())?;
    for (got, want) in th.iter().zip([0.64, 0.84, 0.52]) {
        close("threshold", *got, want, 1e-12)?;
    }
    Ok(format!("{th:?}"))
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn var(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

fn t_two_sided(t: f64, df: f64) -> f64 {
    let d = StudentsT::new(0.0, 1.0, df).unwrap();
    2.0 * d.sf(t.abs())
}

fn statistics_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0_f64;
    let mut track = |name: &str, got: f64, want: f64, tol: f64| -> Result<(), String> {
        let err = (got - want).abs() / want.abs().max(1.0);
        worst = worst.max(err);
        ensure(err <= tol, || format!("{name}: got {got}, want {want}"))
    };
    for case in 0..50 {
        let na = rng.random_range(3..25);
        let nb = rng.random_range(3..25);
        let shift = rng.random_range(-1.5..1.5);
        let (sd_a, sd_b) = (rng.random_range(0.5..2.0), rng.random_range(0.5..2.0));
        let a = normal_sample(&mut rng, na, 0.0, sd_a);
        let b = normal_sample(&mut rng, nb, shift, sd_b);
        let (ma, mb, va, vb) = (mean(&a), mean(&b), var(&a), var(&b));
        let (fa, fb) = (na as f64, nb as f64);

        let df = fa + fb - 2.0;
        let pooled = ((fa - 1.0) * va + (fb - 1.0) * vb) / df;
        let t_ref = (ma - mb) / (pooled * (1.0 / fa + 1.0 / fb)).sqrt();
        let st = student_t_test(&a, &b).map_err(|e| e.to_string())?;
        track(&format!("case {case} t"), st.t, t_ref, 1e-6)?;
        track(&format!("case {case} t p"), st.p, t_two_sided(t_ref, df), 1e-6)?;

        let (sa, sb) = (va / fa, vb / fb);
        let tw = (ma - mb) / (sa + sb).sqrt();
        let dfw = (sa + sb).powi(2) / (sa * sa / (fa - 1.0) + sb * sb / (fb - 1.0));
        let w = welch_t_test(&a, &b).map_err(|e| e.to_string())?;
        track(&format!("case {case} welch"), w.t, tw, 1e-6)?;
        track(&format!("case {case} welch df"), w.df, dfw, 1e-6)?;
        track(&format!("case {case} welch p"), w.p, t_two_sided(tw, dfw), 1e-6)?;

        let k = rng.random_range(2..5);
        let groups: Vec<Vec<f64>> = (0..k)
            .map(|_| {
                let n = rng.random_range(3..15);
                let mu = rng.random_range(-1.0..1.0);
                normal_sample(&mut rng, n, mu, 1.0)
            })
            .collect();
        let all: Vec<f64> = groups.iter().flatten().copied().collect();
        let grand = mean(&all);
        let ssb: f64 = groups.iter().map(|g| g.len() as f64 * (mean(g) - grand).powi(2)).sum();
        let ssw: f64 = groups.iter().map(|g| g.iter().map(|x| (x - mean(g)).powi(2)).sum::<f64>()).sum();
        let (d1, d2) = ((k - 1) as f64, (all.len() - k) as f64);
        let f_ref = (ssb / d1) / (ssw / d2);
        let p_ref = FisherSnedecor::new(d1, d2).unwrap().sf(f_ref);
        let an = one_way_anova(&groups).map_err(|e| e.to_string())?;
        track(&format!("case {case} F"), an.f, f_ref, 1e-6)?;
        track(&format!("case {case} F p"), an.p, p_ref, 1e-6)?;

        let two = one_way_anova(&[a.clone(), b.clone()]).map_err(|e| e.to_string())?;
        close(&format!("case {case} F=t^2"), two.f, st.t * st.t, 1e-9 * two.f.max(1.0))?;
        close(&format!("case {case} F p = t p"), two.p, st.p, 1e-9)?;

        let n = rng.random_range(4..30);
        let x = normal_sample(&mut rng, n, 0.0, 1.0);
        let slope = rng.random_range(-1.0..1.0);
        let y: Vec<f64> = x.iter().map(|v| slope * v + { let z: f64 = StandardNormal.sample(&mut rng); z }).collect::<Vec<f64>>();
        let (mx, my) = (mean(&x), mean(&y));
        let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
        let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
        let r_ref = sxy / (sxx * syy).sqrt();
        let tr = r_ref * ((n as f64 - 2.0) / (1.0 - r_ref * r_ref)).sqrt();
        let r = pearson_r(&x, &y).map_err(|e| e.to_string())?;
        track(&format!("case {case} r"), r.r, r_ref, 1e-6)?;
        track(&format!("case {case} r p"), r.p, t_two_sided(tr, n as f64 - 2.0), 1e-6)?;
    }
    Ok(format!("50 cases, worst relative error {worst:.2e}"))
}

fn null_calibration() -> Outcome {
    const TRIALS: usize = 2000;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut rejections = [0usize; 4];
    for _ in 0..TRIALS {
        let na = rng.random_range(10..40);
        let nb = rng.random_range(10..40);
        let a = normal_sample(&mut rng, na, 0.0, 1.0);
        let b = normal_sample(&mut rng, nb, 0.0, 1.0);
        let c = normal_sample(&mut rng, 20, 0.0, 1.0);
        let y = normal_sample(&mut rng, na, 0.0, 1.0);
        let ps = [
            student_t_test(&a, &b).unwrap().p,
            welch_t_test(&a, &b).unwrap().p,
            one_way_anova(&[a.clone(), b.clone(), c]).unwrap().p,
            pearson_r(&a, &y).unwrap().p,
        ];
        for (r, p) in rejections.iter_mut().zip(ps) {
            *r += (p < 0.05) as usize;
        }
    }
    let rates: Vec<f64> = rejections.iter().map(|&r| r as f64 / TRIALS as f64).collect();
    for (name, rate) in ["t", "welch", "anova", "pearson"].iter().zip(&rates) {
        close(&format!("{name} rejection rate"), *rate, 0.05, 0.02)?;
    }
    Ok(format!("t/welch/anova/pearson rates {rates:?}"))
}

fn random_set(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect()
}

fn permutation_invariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0_f64;
    for draw in 0..100 {
        let d = rng.random_range(1..12);
        let act = if draw % 2 == 0 { Activation::Relu } else { Activation::Tanh };
        let ds = DeepSet::<f64>::init(d, rng.random_range(1..4), rng.random_range(1..4), rng.random_range(2..5), act, &mut rng);
        let n = rng.random_range(1..30);
        let mut set = random_set(&mut rng, n, d);
        let base = ds.predict_proba(&set).map_err(|e| e.to_string())?;
        for _ in 0..5 {
            set.shuffle(&mut rng);
            let p = ds.predict_proba(&set).map_err(|e| e.to_string())?;
            for (a, b) in p.iter().zip(&base) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    ensure(worst <= 1e-12, || format!("max deviation {worst:e}"))?;
    Ok(format!("100 draws, max deviation {worst:e}"))
}

/// Smallest gap between the largest and second largest encoder output per
/// dimension.
fn max_margin(ds: &DeepSet<f64>, set: &[Vec<f64>]) -> f64 {
    let enc: Vec<Vec<f64>> = set.iter().map(|r| ds.phi.forward(r)).collect();
    let width = enc[0].len();
    (0..width)
        .map(|j| {
            let mut col: Vec<f64> = enc.iter().map(|r| r[j]).collect();
            col.sort_by(|a, b| b.total_cmp(a));
            col[0] - col[1]
        })
        .fold(f64::INFINITY, f64::min)
}

fn gradient_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_mlp = 0.0_f64;
    let mut worst_ds = 0.0_f64;
    for act in [Activation::Tanh, Activation::Relu] {
        for _ in 0..5 {
            let sizes = [6, 8, 5, 3];
            let mlp = Mlp::<f64>::init(&sizes, vec![act, act, Activation::Identity], &mut rng);
            let xs = random_set(&mut rng, 4, 6);
            let ys: Vec<usize> = (0..4).map(|_| rng.random_range(0..3)).collect();
            let f = |p: &[f64]| {
                let net = Mlp { params: p.to_vec(), ..mlp.clone() };
                let mut g = vec![0.0; p.len()];
                let mut loss = 0.0;
                for (x, &y) in xs.iter().zip(&ys) {
                    let tr = net.trace(x);
                    let (l, dl, _) = softmax_cross_entropy(tr.output(), y);
                    loss += l;
                    net.backward(&tr, &dl, &mut g);
                }
                (loss, g)
            };
            worst_mlp = worst_mlp.max(gradient_check(&mlp.params, f, 1e-6));
        }
        let mut checked = 0;
        while checked < 5 {
            let ds = DeepSet::<f64>::init(4, 2, 2, 3, act, &mut rng);
            let set = random_set(&mut rng, 5, 4);
            if max_margin(&ds, &set) < 1e-3 {
                continue;
            }
            let target = rng.random_range(0..3);
            let f = |p: &[f64]| {
                let mut m = ds.clone();
                m.set_params(p);
                let mut g = vec![0.0; p.len()];
                let l = m.loss_and_grad(&set, target, &mut g).unwrap();
                (l, g)
            };
            worst_ds = worst_ds.max(gradient_check(&ds.params(), f, 1e-6));
            checked += 1;
        }
    }
    ensure(worst_mlp < 1e-4 && worst_ds < 1e-4, || format!("mlp {worst_mlp:e}, deepset {worst_ds:e}"))?;
    Ok(format!("max relative error mlp {worst_mlp:.2e}, deepset {worst_ds:.2e}"))
}

fn planted_signal() -> Outcome {
    let targets = ["song_danceability_mean", "song_energy_mean", "song_valence_mean"];
    let task = AttributeTask::by_name("gender").map_err(|e| e.to_string())?;
    let (mut hit, mut tried, mut false_pos, mut nulls) = (0usize, 0usize, 0usize, 0usize);
    for seed in 0..20 {
        let spec = GenerationSpec::null(300, seed).with_effect(PlantedEffect::MeanShift {
            attribute: task.name.clone(),
            class: "female".into(),
            features: targets.iter().map(|s| s.to_string()).collect(),
            delta: 2.0,
        });
        let (corpus, truth) = generate_corpus(&spec).map_err(|e| e.to_string())?;
        let (ds, _) = Featurizer::default().featurize_corpus(&corpus);
        let opts = SignificanceOptions::default();
        let (_, results) = significance_matrix(&ds, std::slice::from_ref(&task), &opts).map_err(|e| e.to_string())?;
        let signal: BTreeSet<String> =
            truth.signal_pairs().into_iter().filter(|(a, _)| *a == task.name).map(|(_, f)| f).collect();
        for r in &results {
            let flagged = r.effective_p() < opts.alpha;
            if targets.contains(&r.feature.as_str()) {
                tried += 1;
                hit += flagged as usize;
            } else if !signal.contains(&r.feature) {
                nulls += 1;
                false_pos += flagged as usize;
            }
        }
    }
    let power = hit as f64 / tried as f64;
    let fpr = false_pos as f64 / nulls as f64;
    ensure(tried == 60, || format!("expected 60 target tests, got {tried}"))?;
    ensure(power >= 0.9 && fpr <= 0.08, || format!("power {power:.3}, fpr {fpr:.4}"))?;
    Ok(format!("power {power:.3}, fpr {fpr:.4} over {nulls} null tests"))
}

fn set_level_advantage() -> Outcome {
    let spec = GenerationSpec {
        playlists_per_user: CountDist::Uniform { min: 8, max: 30 },
        tracks_per_playlist: CountDist::Uniform { min: 5, max: 15 },
        attributes: vec![AttributeSpec::new("flag", &["no", "yes"], &[0.5, 0.5])],
        ..GenerationSpec::null(500, 0)
    }
    .with_effect(PlantedEffect::MaxRule {
        attribute: "flag".into(),
        class: "yes".into(),
        feature: "song_instrumentalness_mean".into(),
        threshold: 0.5,
    });
    let (corpus, _) = generate_corpus(&spec).map_err(|e| e.to_string())?;
    let (ds, _) = Featurizer::default().featurize_corpus(&corpus);
    let task = AttributeTask::custom("flag", &["no", "yes"]).map_err(|e| e.to_string())?;
    let kinds = vec![ModelKind::RandomGuess, ModelKind::Mlp, ModelKind::DeepSet];
    let mut cfg = ExperimentConfig::new(GridSpec::quick(ds.schema.len()).restrict(&kinds));
    cfg.kinds = kinds;
    cfg.seeds = (0..5).collect();
    let report = run_experiment(&ds, &task, &cfg).map_err(|e| e.to_string())?;
    let score = |k: ModelKind| -> Result<f64, String> {
        report.result(k).and_then(|r| r.mean).ok_or_else(|| format!("{k} produced no score"))
    };
    let (rg, mlp, dset) = (score(ModelKind::RandomGuess)?, score(ModelKind::Mlp)?, score(ModelKind::DeepSet)?);
    let detail = format!("DS {dset:.3}, MLP {mlp:.3}, RG {rg:.3}");
    ensure(dset >= rg + 0.20 && dset >= mlp + 0.05, || detail.clone())?;
    Ok(detail)
}

fn split_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst_ratio = 0.0_f64;
    let mut worst_strat = 0.0_f64;
    for plan_no in 0..1000 {
        let n = rng.random_range(200..600);
        let k = rng.random_range(2..5);
        let weights: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..1.0)).collect();
        let total: f64 = weights.iter().sum();
        let users: Vec<(String, usize)> = (0..n)
            .map(|i| {
                let mut u = rng.random_range(0.0..total);
                let mut c = 0;
                while c + 1 < k && u >= weights[c] {
                    u -= weights[c];
                    c += 1;
                }
                (format!("user{i:04}"), c)
            })
            .collect();
        let names: Vec<String> = (0..k).map(|c| format!("c{c}")).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let task = AttributeTask::custom("attr", &refs).map_err(|e| e.to_string())?;
        let plan = split_users(&users, &task, plan_no).map_err(|e| e.to_string())?;
        let parts = plan.partitions();
        let mut seen = BTreeSet::new();
        for part in parts {
            for id in part {
                ensure(seen.insert(id.clone()), || format!("plan {plan_no}: {id} appears twice"))?;
            }
        }
        ensure(seen.len() == n, || format!("plan {plan_no}: {} of {n} users placed", seen.len()))?;
        let label: std::collections::HashMap<&str, usize> = users.iter().map(|(u, c)| (u.as_str(), *c)).collect();
        let overall: Vec<f64> =
            (0..k).map(|c| users.iter().filter(|(_, y)| *y == c).count() as f64 / n as f64).collect();
        for (part, ratio) in parts.iter().zip([0.7, 0.1, 0.2]) {
            let share = part.len() as f64 / n as f64;
            worst_ratio = worst_ratio.max((share - ratio).abs());
            for (c, &want) in overall.iter().enumerate() {
                let got = part.iter().filter(|u| label[u.as_str()] == c).count() as f64 / part.len() as f64;
                worst_strat = worst_strat.max((got - want).abs());
            }
        }
    }
    ensure(worst_ratio <= 0.02 && worst_strat <= 0.05, || {
        format!("ratio deviation {worst_ratio:.4}, class share deviation {worst_strat:.4}")
    })?;
    Ok(format!("1000 plans, ratio deviation {worst_ratio:.4}, class share deviation {worst_strat:.4}"))
}

fn leading_monotonicity() -> Outcome {
    let small = |seed: u64| GenerationSpec {
        playlists_per_user: CountDist::Uniform { min: 3, max: 10 },
        tracks_per_playlist: CountDist::Uniform { min: 5, max: 20 },
        ..GenerationSpec::null(120, seed)
    };
    let suite = vec![
        small(90),
        small(91).with_effect(PlantedEffect::PureCluster { attribute: "gender".into(), class: "male".into(), playlists: 60 }),
        small(92).with_effect(PlantedEffect::MeanShift {
            attribute: "country".into(),
            class: "US".into(),
            features: vec!["song_energy_mean".into()],
            delta: 1.5,
        }),
    ];
    let config = ClusterConfig { alphas: alpha_grid(0.1).map_err(|e| e.to_string())?, ..ClusterConfig::default() };
    let mut sweeps = 0;
    for (i, spec) in suite.iter().enumerate() {
        let (corpus, _) = generate_corpus(spec).map_err(|e| e.to_string())?;
        let (ds, _) = Featurizer::default().featurize_corpus(&corpus);
        let analysis = analyze_clusters(&ds, &AttributeTask::standard(), &config).map_err(|e| e.to_string())?;
        for (task, sweep) in &analysis.sweeps {
            ensure(sweep.len() == 11, || format!("{task}: {} sweep points", sweep.len()))?;
            for w in sweep.windows(2) {
                let prev: BTreeSet<usize> = w[0].leading.iter().copied().collect();
                let next: BTreeSet<usize> = w[1].leading.iter().copied().collect();
                ensure(next.is_subset(&prev), || {
                    format!("corpus {i} task {task}: α {} → {} gained {:?}", w[0].alpha, w[1].alpha, next.difference(&prev))
                })?;
            }
            sweeps += 1;
        }
    }
    Ok(format!("{} corpora, {sweeps} nested sweeps", suite.len()))
}

fn golden_featurization() -> Outcome {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let corpus = load_corpus(&dir.join("golden_corpus.json")).map_err(|e| e.to_string())?;
    let golden: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("golden_features.json")).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
    let want: Vec<f64> = golden["values"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    let names: Vec<&str> = golden["names"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    let fz = Featurizer::default();
    ensure(fz.schema().names.iter().map(String::as_str).eq(names.iter().copied()), || "schema names differ".into())?;
    ensure(want.len() == 111, || format!("golden vector has {} entries", want.len()))?;
    let playlist = &corpus.users[0].playlists[0];
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<u64>>();
    let got = fz.featurize_playlist(playlist, &corpus.artists).map_err(|e| e.to_string())?;
    for (k, (g, w)) in got.values.iter().zip(&want).enumerate() {
        ensure(g.to_bits() == w.to_bits(), || format!("{}: got {g:?}, want {w:?}", names[k]))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut shuffled = playlist.clone();
    for _ in 0..200 {
        shuffled.tracks.shuffle(&mut rng);
        let v = fz.featurize_playlist(&shuffled, &corpus.artists).map_err(|e| e.to_string())?;
        ensure(bits(&v.values) == bits(&want), || "permuted tracks changed the vector".into())?;
    }
    Ok(format!("111 values bit-exact over 200 track permutations of {}", playlist.playlist_id))
}

fn weighted_f1_fixture() -> Outcome {
    let f = weighted_f1(&[0, 0, 0, 1], &[0, 0, 1, 1]);
    close("weighted F1", f, 0.7667, 1e-4)?;
    Ok(format!("{f:.6}"))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("leading-threshold fixture", leading_fixture),
        ("statistics oracle", statistics_oracle),
        ("null calibration", null_calibration),
        ("deepset permutation invariance", permutation_invariance),
        ("gradient check", gradient_suite),
        ("planted-signal detection", planted_signal),
        ("set-level advantage", set_level_advantage),
        ("split invariants", split_invariants),
        ("leading-set monotonicity", leading_monotonicity),
        ("featurization contract", golden_featurization),
        ("weighted-f1 fixture", weighted_f1_fixture),
    ];
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let id = i + 1;
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {id:>2} {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {id:>2} {name}: {detail} [{secs:.1}s]");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
