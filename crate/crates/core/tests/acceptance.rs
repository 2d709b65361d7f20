//! Acceptance criteria, one pass/fail line each. Oracles are computed here
//! independently of the library code they check.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use clinical_themes::features::{FeatureMatrix, FeatureRow, FeatureSource};
use clinical_themes::learn::{
    binary_auc, metrics, mlr_loss_and_gradient, train, ClassifierKind, ClassifierSpec, Model,
};
use clinical_themes::pipeline::{Pipeline, PipelineConfig, Report, REPORT_FILE};
use clinical_themes::synth::{generate_cohort, generate_lda_corpus, topic_recovery_score, CohortSpec, LdaCorpusSpec};
use clinical_themes::textprep::{detect_negation, split_phrases, NegexLexicon, Phrase};
use clinical_themes::topics::{coherence_scan, fit_lda, CoherenceCorpus, CoherenceMeasure, LdaConfig};
use clinical_themes::vectorize::{bow_vectors, Vocabulary, Weighting};
use clinical_themes::{Execution, LosCategory};

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn run_cli(config: &Path, workdir: &Path) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_clinical-themes"))
        .arg("run")
        .arg("--config")
        .arg(config)
        .arg("--workdir")
        .arg(workdir)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("run exited with {}: {}", out.status, String::from_utf8_lossy(&out.stderr)));
    }
    Ok(())
}

fn read_report(workdir: &Path) -> Report {
    serde_json::from_str(&std::fs::read_to_string(workdir.join(REPORT_FILE)).unwrap()).unwrap()
}

// ---- 1 ----

fn lda_closed_form() -> Outcome {
    let (docs, _) = generate_lda_corpus(&LdaCorpusSpec { disjoint: false, ..LdaCorpusSpec::disjoint(3, 60, 100, 25, 11) })
        .map_err(|e| e.to_string())?;
    let toks: Vec<&Vec<String>> = docs.iter().map(|d| &d.1).collect();
    let vocab = Vocabulary::build(&toks, 1).unwrap();
    let bow = bow_vectors(&docs, &vocab);
    let config = LdaConfig::new(1, 5);
    let start = Instant::now();
    let model = fit_lda(&bow, &vocab, &config).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();

    let mut n_w: BTreeMap<&str, f64> = BTreeMap::new();
    for (_, words) in &docs {
        for w in words {
            *n_w.entry(w).or_default() += 1.0;
        }
    }
    let total: f64 = n_w.values().sum();
    let v = n_w.len() as f64;
    let beta = config.beta;
    let mut worst = 0.0f64;
    for (i, term) in model.terms.iter().enumerate() {
        let expect = (n_w[term.as_str()] + beta) / (total + v * beta);
        worst = worst.max((model.phi[0][i] - expect).abs());
    }
    let theta_ok = model.theta.iter().all(|t| t.len() == 1 && t[0] == 1.0);
    ensure(
        worst <= 1e-12 && theta_ok && secs < 1.0 && model.terms.len() == n_w.len(),
        format!("max |phi - closed form| = {worst:.2e}, theta all [1.0] = {theta_ok}, {secs:.3} s"),
    )
}

// ---- 2 ----

fn topic_recovery() -> Outcome {
    let (docs, manifest) = generate_lda_corpus(&LdaCorpusSpec::disjoint(4, 200, 500, 80, 21)).map_err(|e| e.to_string())?;
    let toks: Vec<&Vec<String>> = docs.iter().map(|d| &d.1).collect();
    let vocab = Vocabulary::build(&toks, 1).unwrap();
    let bow = bow_vectors(&docs, &vocab);
    let config = LdaConfig { iterations: 1000, burn_in: 800, ..LdaConfig::new(4, 21) };
    let start = Instant::now();
    let model = fit_lda(&bow, &vocab, &config).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    // Re-index the estimate onto the generator's vocabulary order.
    let est: Vec<Vec<f64>> = model
        .phi
        .iter()
        .map(|row| manifest.vocabulary.iter().map(|w| vocab.id(w).map_or(0.0, |i| row[i])).collect())
        .collect();
    let score = topic_recovery_score(&manifest.phi, &est).map_err(|e| e.to_string())?;
    ensure(score <= 0.15 && secs < 60.0, format!("recovery score {score:.4}, {secs:.2} s"))
}

// ---- 3 ----

fn coherence_selection() -> Outcome {
    let ks: Vec<usize> = (2..=8).collect();
    let mut picks = Vec::new();
    for run in 0..10u64 {
        let seed = 300 + run;
        let spec = LdaCorpusSpec { alpha: 1.0, ..LdaCorpusSpec::disjoint(4, 40, 200, 60, seed) };
        let (docs, _) = generate_lda_corpus(&spec).map_err(|e| e.to_string())?;
        let toks: Vec<&Vec<String>> = docs.iter().map(|d| &d.1).collect();
        let vocab = Vocabulary::build(&toks, 1).unwrap();
        let bow = bow_vectors(&docs, &vocab);
        let streams: Vec<Vec<String>> = docs.iter().map(|d| d.1.clone()).collect();
        let corpus = CoherenceCorpus { vectors: &bow, bow: &bow, streams: &streams, vocab: &vocab };
        let report = coherence_scan(&corpus, &ks, &LdaConfig::new(2, seed), CoherenceMeasure::Cv, Execution::default())
            .map_err(|e| e.to_string())?;
        picks.push(report.selected_k);
    }
    let near = picks.iter().filter(|&&k| (3..=5).contains(&k)).count();
    let exact = picks.iter().filter(|&&k| k == 4).count();
    ensure(near >= 8 && exact >= 6, format!("selected {picks:?}: {near}/10 in 3..=5, {exact}/10 exactly 4"))
}

// ---- 4 ----

const CXR_REPORT: &str = "PROCEDURE: CHEST X-RAY (PA, LATERAL).\n\nFINDINGS: There is redemonstration of moderate cardiomegaly. There is pulmonary vascular redistribution with interstitial opacity. The aorta is tortuous with calcifications of the arch. No pleural effusion is visualized. There is no pneumothorax.\n\nIMPRESSION: Redemonstration of moderate cardiomegaly with interstitial edema.\n";

fn normalize(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

fn negation_fixture() -> Outcome {
    let text = std::fs::read_to_string(fixtures().join("negation_fixture.tsv")).unwrap();
    let rows: Vec<(String, String, Vec<String>)> = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| {
            let c: Vec<&str> = l.split('\t').collect();
            (c[0].to_string(), c[1].to_string(), c[2].split(" | ").map(normalize).collect())
        })
        .collect();

    // Every sentence of the chest X-ray report must be in the fixture verbatim.
    let report_sentences: Vec<String> = CXR_REPORT
        .split("\n\n")
        .flat_map(|block| {
            let body = match block.split_once(": ") {
                Some((head, rest)) if head != "PROCEDURE" => rest.trim().to_string(),
                _ => block.trim().to_string(),
            };
            body.split_inclusive(". ").map(|s| s.trim().to_string()).collect::<Vec<_>>()
        })
        .collect();
    let fixture_report: Vec<&String> = rows.iter().filter(|r| r.0 == "cxr_report").map(|r| &r.1).collect();
    let report_verbatim = fixture_report.len() == report_sentences.len()
        && fixture_report.iter().zip(&report_sentences).all(|(a, b)| *a == b);
    let prostate = rows.iter().filter(|r| r.0 == "prostate").count() == 2;

    let lexicon = NegexLexicon::bundled();
    let (mut agree, mut total) = (0usize, 0usize);
    let mut misses = Vec::new();
    for (_, sentence, expected) in &rows {
        let got: Vec<String> = split_phrases(sentence)
            .iter()
            .flat_map(|p| detect_negation(p, &lexicon))
            .map(|p| normalize(&p.render()))
            .collect();
        let mut pool = got.clone();
        let mut hit = 0;
        for e in expected {
            if let Some(i) = pool.iter().position(|g| g == e) {
                pool.swap_remove(i);
                hit += 1;
            }
        }
        agree += hit;
        total += expected.len().max(got.len());
        if hit < expected.len().max(got.len()) {
            misses.push(sentence.clone());
        }
    }
    let rate = agree as f64 / total as f64;
    let fig = detect_negation(&Phrase::affirmed("No pleural effusion is visualized"), &lexicon);
    let fig_ok = fig.first().map(Phrase::render).as_deref() == Some("no pleural effusion");
    ensure(
        rows.len() == 60 && report_verbatim && prostate && rate >= 0.95 && fig_ok,
        format!(
            "{} sentences, phrase agreement {agree}/{total} = {rate:.3}, report verbatim {report_verbatim}, rendered effusion ok {fig_ok}, misses {misses:?}",
            rows.len()
        ),
    )
}

// ---- golden cohort runs (5, 9, 10) ----

fn golden_config() -> PathBuf {
    fixtures().join("golden.toml")
}

fn smote_contract(workdir: &Path) -> Outcome {
    let mut config = PipelineConfig::load(&golden_config()).map_err(|e| e.to_string())?;
    config.workdir = workdir.to_path_buf();
    let pipeline = Pipeline::new(config.clone(), Execution::default());
    let mut lines = Vec::new();
    let mut ok = true;
    for &w in &config.topics.weightings {
        for s in FeatureSource::ALL {
            let parts = pipeline.partitions(w, s).map_err(|e| e.to_string())?;
            let out = pipeline.oversample(w, s, &parts.train).map_err(|e| e.to_string())?;
            let before = parts.train.histogram().0;
            let majority = *before.iter().max().unwrap();
            let after = out.matrix.histogram().0;
            let flat = after.iter().zip(&before).all(|(&a, &b)| if b == 0 { a == 0 } else { a == majority });
            let between = out.synthetic.iter().all(|r| {
                let (p, q) = (&parts.train.rows[r.parent].values, &parts.train.rows[r.neighbor].values);
                r.raw.iter().zip(p.iter().zip(q)).all(|(&x, (&a, &b))| a.min(b) <= x && x <= a.max(b))
            });
            let lineage = out.synthetic.iter().all(|r| {
                parts.train.rows[r.parent].label == r.class && parts.train.rows[r.neighbor].label == r.class
            });
            ok &= flat && between && lineage;
            lines.push(format!("{}/{}: {before:?} -> {after:?}, {} synthetic", w.name(), s.name(), out.synthetic.len()));
        }
    }
    ensure(ok, lines.join("; "))
}

fn snapshot(workdir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(workdir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| {
            let name = p.file_name().unwrap().to_string_lossy();
            name == REPORT_FILE || name == "features.csv" || name.ends_with(".lda")
        })
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect()
}

fn determinism(workdir: &Path) -> Outcome {
    let first = snapshot(workdir);
    run_cli(&golden_config(), workdir)?;
    let second = snapshot(workdir);
    let differing: Vec<&String> = first.keys().filter(|k| first.get(*k) != second.get(*k)).collect();
    ensure(
        first.len() >= 6 && first.keys().eq(second.keys()) && differing.is_empty(),
        format!("{} files compared, differing {differing:?}", first.len()),
    )
}

fn grid_structure(workdir: &Path) -> Outcome {
    let report = read_report(workdir);
    let mut cells = 0;
    let mut missing = Vec::new();
    for k in ClassifierKind::ALL {
        for w in Weighting::ALL {
            for s in FeatureSource::ALL {
                match report.cell(k, w, s) {
                    Some(c) => {
                        cells += [c.precision, c.recall, c.accuracy, c.roc_auc]
                            .iter()
                            .filter(|v| v.is_finite() && (0.0..=1.0).contains(*v))
                            .count()
                    }
                    None => missing.push(format!("{}/{}/{}", k.name(), w.name(), s.name())),
                }
            }
        }
    }
    ensure(
        cells == 120 && report.metric_cells == 120 && report.results.len() == 30,
        format!("{cells} metric cells over {} results, missing {missing:?}", report.results.len()),
    )
}

// ---- 6 ----

fn random_matrix(rng: &mut ChaCha8Rng, n: usize, f: usize, grid: bool) -> FeatureMatrix {
    let rows = (0..n)
        .map(|i| FeatureRow {
            encounter_id: format!("r{i}"),
            values: (0..f)
                .map(|_| if grid { f64::from(rng.random_range(0..4u8)) } else { rng.random_range(-2.0..2.0) })
                .collect(),
            label: LosCategory::from_code(rng.random_range(0..5)).unwrap(),
        })
        .collect();
    FeatureMatrix { columns: (0..f).map(|j| format!("x{j}")).collect(), rows, topic_columns: Vec::new(), dropped: 0 }
}

fn knn_oracle(train: &FeatureMatrix, q: &[f64], k: usize) -> usize {
    let mut d: Vec<(f64, usize)> = train
        .rows
        .iter()
        .enumerate()
        .map(|(i, r)| (r.values.iter().zip(q).map(|(a, b)| (a - b).powi(2)).sum(), i))
        .collect();
    d.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut votes = [0usize; 5];
    for &(_, i) in d.iter().take(k) {
        votes[train.rows[i].label.code()] += 1;
    }
    let best = *votes.iter().max().unwrap();
    votes.iter().position(|&v| v == best).unwrap()
}

fn stump_oracle(m: &FeatureMatrix) -> (usize, f64, usize, usize) {
    let n = m.len();
    let majority = |rows: &[&FeatureRow]| {
        let mut c = [0usize; 5];
        rows.iter().for_each(|r| c[r.label.code()] += 1);
        let best = *c.iter().max().unwrap();
        (c.iter().position(|&v| v == best).unwrap(), best)
    };
    let mut best: Option<((usize, f64, usize, usize), usize)> = None;
    for f in 0..m.width() {
        let mut vals: Vec<f64> = m.rows.iter().map(|r| r.values[f]).collect();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        for pair in vals.windows(2) {
            let t = pair[0] + (pair[1] - pair[0]) / 2.0;
            let (l, r): (Vec<&FeatureRow>, Vec<&FeatureRow>) = m.rows.iter().partition(|r| r.values[f] <= t);
            let ((lc, lh), (rc, rh)) = (majority(&l), majority(&r));
            let err = n - lh - rh;
            if best.as_ref().is_none_or(|(_, e)| err < *e) {
                best = Some(((f, t, lc, rc), err));
            }
        }
    }
    best.unwrap().0
}

fn classifier_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(66);

    let train_m = random_matrix(&mut rng, 150, 4, true);
    let queries = random_matrix(&mut rng, 200, 4, true);
    let mut knn_ok = true;
    for k in [1, 3, 5] {
        let model = train(&ClassifierSpec { knn_k: k, ..ClassifierSpec::new(ClassifierKind::Knn, 0) }, &train_m)
            .map_err(|e| e.to_string())?;
        let rows: Vec<Vec<f64>> = queries.rows.iter().map(|r| r.values.clone()).collect();
        let got = model.predict(&rows, Execution::Sequential).map_err(|e| e.to_string())?;
        knn_ok &= rows.iter().zip(&got).all(|(q, g)| g.code() == knn_oracle(&train_m, q, k));
    }

    let f = 3;
    let mut worst_grad = 0.0f64;
    for _ in 0..20 {
        let m = random_matrix(&mut rng, 30, f, false);
        let x: Vec<Vec<f64>> = m.rows.iter().map(|r| r.values.clone()).collect();
        let y: Vec<usize> = m.rows.iter().map(|r| r.label.code()).collect();
        let w: Vec<f64> = (0..5 * (f + 1)).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (_, g) = mlr_loss_and_gradient(&w, &x, &y, 1e-2);
        let h = 1e-5;
        let fd: Vec<f64> = (0..w.len())
            .map(|i| {
                let (mut a, mut b) = (w.clone(), w.clone());
                a[i] += h;
                b[i] -= h;
                (mlr_loss_and_gradient(&a, &x, &y, 1e-2).0 - mlr_loss_and_gradient(&b, &x, &y, 1e-2).0) / (2.0 * h)
            })
            .collect();
        let diff: f64 = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = fd.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        worst_grad = worst_grad.max(diff / norm);
    }

    let mut stump_ok = true;
    for grid in [true, false] {
        let m = random_matrix(&mut rng, 80, 3, grid);
        let model = train(&ClassifierSpec { n_estimators: 1, ..ClassifierSpec::new(ClassifierKind::AdaBoost, 0) }, &m)
            .map_err(|e| e.to_string())?;
        let Model::AdaBoost { stumps } = &model.model else { return Err("not an AdaBoost model".into()) };
        let s = &stumps[0].0;
        stump_ok &= (s.feature, s.threshold, s.left, s.right) == stump_oracle(&m);
    }
    ensure(
        knn_ok && worst_grad <= 1e-5 && stump_ok,
        format!("kNN matches brute force {knn_ok}, max MLR gradient rel. error {worst_grad:.2e}, stump matches {stump_ok}"),
    )
}

// ---- 7 ----

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let n = rng.random_range(2..60);
        let scores: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..10u8)) / 10.0).collect();
        let mut pos: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        pos[0] = true;
        pos[1] = false;
        let mut conc = 0.0;
        let mut pairs = 0.0;
        for i in 0..n {
            for j in 0..n {
                if pos[i] && !pos[j] {
                    pairs += 1.0;
                    conc += if scores[i] > scores[j] { 1.0 } else if scores[i] == scores[j] { 0.5 } else { 0.0 };
                }
            }
        }
        let got = binary_auc(&scores, &pos).ok_or("AUC undefined")?;
        worst = worst.max((got - conc / pairs).abs());
    }
    let mut acc_ok = true;
    for _ in 0..20 {
        let n = rng.random_range(1..80);
        let truth: Vec<LosCategory> = (0..n).map(|_| LosCategory::from_code(rng.random_range(0..5)).unwrap()).collect();
        let proba: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let r: Vec<f64> = (0..5).map(|_| rng.random_range(0.0..1.0)).collect();
                let s: f64 = r.iter().sum();
                r.into_iter().map(|v| v / s).collect()
            })
            .collect();
        let rep = metrics(&truth, &proba).map_err(|e| e.to_string())?;
        let trace: usize = (0..5).map(|i| rep.confusion.counts[i][i]).sum();
        let total: usize = rep.confusion.counts.iter().flatten().sum();
        acc_ok &= total == n && rep.accuracy == trace as f64 / total as f64;
    }
    ensure(worst <= 1e-9 && acc_ok, format!("max |AUC - pairwise| = {worst:.2e}, accuracy = trace/total {acc_ok}"))
}

// ---- 8 ----

fn planted_signal() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    generate_cohort(&CohortSpec::new(2000, 4, 4, 8)).and_then(|c| c.write(&data)).map_err(|e| e.to_string())?;
    let config = dir.path().join("run.toml");
    std::fs::write(
        &config,
        "seed = 8\nworkdir = \"work\"\n\
         [paths]\nencounters = \"data/encounters.csv\"\nnotes = \"data/notes.jsonl\"\nccsr = \"data/ccsr.csv\"\n\
         [topics]\nweightings = [\"tfidf\"]\nk_diag = 4\nk_proc = 4\n\
         [features]\nprimary_weighting = \"tfidf\"\n\
         [classifiers]\nkinds = [\"knn\"]\nknn_k = 15\n",
    )
    .unwrap();
    let start = Instant::now();
    let workdir = dir.path().join("work");
    run_cli(&config, &workdir)?;
    let secs = start.elapsed().as_secs_f64();
    let report = read_report(&workdir);
    let cell = report.cell(ClassifierKind::Knn, Weighting::Tfidf, FeatureSource::Combined).ok_or("missing cell")?;
    ensure(
        cell.accuracy >= 0.80 && cell.roc_auc >= 0.90 && secs < 300.0,
        format!("kNN/tfidf/combined accuracy {:.3}, macro AUC {:.3}, {secs:.1} s", cell.accuracy, cell.roc_auc),
    )
}

fn main() {
    let golden = tempfile::tempdir().unwrap();
    let golden_dir = golden.path().to_path_buf();
    let golden_run = run_cli(&golden_config(), &golden_dir);

    let after_golden = |f: fn(&Path) -> Outcome| -> Box<dyn Fn() -> Outcome> {
        let dir = golden_dir.clone();
        let prior = golden_run.clone();
        Box::new(move || prior.clone().and_then(|_| f(&dir)))
    };
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("1 lda closed form", Box::new(lda_closed_form)),
        ("2 topic recovery", Box::new(topic_recovery)),
        ("3 coherence selection", Box::new(coherence_selection)),
        ("4 negation fixture", Box::new(negation_fixture)),
        ("5 smote contract", after_golden(smote_contract)),
        ("6 classifier oracles", Box::new(classifier_oracles)),
        ("7 metric oracles", Box::new(metric_oracles)),
        ("8 planted signal", Box::new(planted_signal)),
        ("9 determinism", after_golden(determinism)),
        ("10 report grid", after_golden(grid_structure)),
    ];

    let mut failed = 0;
    for (name, check) in &criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or(p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {name} ({secs:.1} s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {name} ({secs:.1} s): {detail}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
