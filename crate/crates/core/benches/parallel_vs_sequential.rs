use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use clinical_themes::features::{assemble_features, FeatureMode, FeatureSource, FeatureMatrix};
use clinical_themes::ingest::{load_ccsr_map, load_cohort};
use clinical_themes::learn::{train_with, ClassifierKind, ClassifierSpec};
use clinical_themes::synth::{generate_cohort, generate_lda_corpus, CohortSpec, LdaCorpusSpec};
use clinical_themes::textprep::Preprocessor;
use clinical_themes::topics::{coherence_scan, CoherenceCorpus, CoherenceMeasure, LdaConfig, TopicAssignment};
use clinical_themes::vectorize::{bow_vectors, Vocabulary};
use clinical_themes::Execution;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn preprocessing(c: &mut Criterion) {
    let dir = tempfile::tempdir().unwrap();
    generate_cohort(&CohortSpec::new(2000, 4, 4, 3)).unwrap().write(dir.path()).unwrap();
    let dataset = load_cohort(&dir.path().join("encounters.csv"), &dir.path().join("notes.jsonl")).unwrap();
    let ccsr = load_ccsr_map(&dir.path().join("ccsr.csv")).unwrap();
    let pre = Preprocessor::bundled();
    let mut group = c.benchmark_group("preprocess_2000_encounters");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| pre.process(&dataset, &ccsr, exec)));
    }
    group.finish();
}

fn coherence(c: &mut Criterion) {
    let spec = LdaCorpusSpec { alpha: 1.0, ..LdaCorpusSpec::disjoint(4, 40, 200, 60, 1) };
    let (docs, _) = generate_lda_corpus(&spec).unwrap();
    let toks: Vec<&Vec<String>> = docs.iter().map(|d| &d.1).collect();
    let vocab = Vocabulary::build(&toks, 1).unwrap();
    let bow = bow_vectors(&docs, &vocab);
    let streams: Vec<Vec<String>> = docs.iter().map(|d| d.1.clone()).collect();
    let corpus = CoherenceCorpus { vectors: &bow, bow: &bow, streams: &streams, vocab: &vocab };
    let ks: Vec<usize> = (2..=8).collect();
    let template = LdaConfig { iterations: 200, burn_in: 150, ..LdaConfig::new(2, 1) };
    let mut group = c.benchmark_group("coherence_scan_k2_to_8");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| coherence_scan(&corpus, &ks, &template, CoherenceMeasure::Cv, exec).unwrap())
        });
    }
    group.finish();
}

fn forest(c: &mut Criterion) {
    let cohort = generate_cohort(&CohortSpec::new(2000, 4, 4, 5)).unwrap();
    let labels = |theta: fn(&clinical_themes::synth::EncounterTruth) -> &Vec<f64>| -> Vec<TopicAssignment> {
        cohort.manifest.encounters.iter().map(|e| TopicAssignment::from_theta(&e.encounter_id, theta(e))).collect()
    };
    let (diag, proc) = (labels(|e| &e.diag_theta), labels(|e| &e.proc_theta));
    let los = cohort.manifest.encounters.iter().map(|e| (e.encounter_id.clone(), e.label)).collect();
    let m: FeatureMatrix = assemble_features(&diag, &proc, &los, FeatureMode::Full, FeatureSource::Combined).unwrap();
    let spec = ClassifierSpec::new(ClassifierKind::RandomForest, 1);
    let mut group = c.benchmark_group("random_forest_100_trees");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| train_with(&spec, &m, exec).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, preprocessing, coherence, forest);
criterion_main!(benches);
