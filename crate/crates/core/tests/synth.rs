use playlist_attrs::cluster::{analyze_clusters, ClusterConfig, KRange};
use playlist_attrs::domain::{corpus_summary, AttributeTask, Corpus, CorpusUser};
use playlist_attrs::features::Featurizer;
use playlist_attrs::ingest::{corpus_to_json, load_corpus};
use playlist_attrs::synth::{generate_corpus, write_synthetic, CountDist, GenerationSpec, PlantedEffect, SynthError};

fn spec(users: usize, seed: u64) -> GenerationSpec {
    GenerationSpec {
        playlists_per_user: CountDist::Uniform { min: 1, max: 5 },
        tracks_per_playlist: CountDist::Uniform { min: 3, max: 20 },
        ..GenerationSpec::null(users, seed)
    }
}

#[test]
fn hundred_user_corpus_round_trips_bit_identically() {
    let (corpus, truth) = generate_corpus(&spec(100, 21)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_synthetic(dir.path(), &corpus, &truth).unwrap();
    let back = load_corpus(&dir.path().join("corpus.json")).unwrap();
    assert_eq!(back, corpus);
    assert_eq!(corpus_to_json(&back), std::fs::read_to_string(dir.path().join("corpus.json")).unwrap());
    let gt: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("ground_truth.json")).unwrap()).unwrap();
    assert_eq!(gt["seed"], 21);
    assert_eq!(gt["totals"]["users"], 100);
}

#[test]
fn summary_matches_recorded_totals() {
    let (corpus, truth) = generate_corpus(&spec(80, 22)).unwrap();
    let s = corpus_summary(&corpus).unwrap();
    let t = &truth.totals;
    assert_eq!((s.users, s.playlists, s.unique_songs, s.unique_artists), (t.users, t.playlists, t.unique_songs, t.unique_artists));
    let slots: usize = corpus.playlists().map(|p| p.tracks.len()).sum();
    assert_eq!(slots, t.track_slots);
    let genders: usize = truth.label_counts["gender"].values().sum();
    assert!(genders <= 80);
}

#[test]
fn duplicate_user_ids_are_rejected() {
    let (corpus, _) = generate_corpus(&spec(3, 23)).unwrap();
    let mut users: Vec<CorpusUser> = corpus.users.clone();
    users.push(users[0].clone());
    assert!(Corpus::new(corpus.provenance, corpus.artists.clone(), users).is_err());
}

#[test]
fn impossible_shift_is_reported() {
    let s = spec(50, 24).with_effect(PlantedEffect::MeanShift {
        attribute: "gender".into(),
        class: "female".into(),
        features: vec!["song_danceability_mean".into()],
        delta: 500.0,
    });
    assert!(matches!(generate_corpus(&s), Err(SynthError::Infeasible(_))));
    let unknown = spec(5, 24).with_effect(PlantedEffect::MaxRule {
        attribute: "gender".into(),
        class: "female".into(),
        feature: "no_such_feature".into(),
        threshold: 0.5,
    });
    assert!(generate_corpus(&unknown).is_err());
}

#[test]
fn pure_cluster_is_leading_at_high_alpha() {
    let s = spec(150, 25).with_effect(PlantedEffect::PureCluster {
        attribute: "premium".into(),
        class: "no".into(),
        playlists: 40,
    });
    let (corpus, truth) = generate_corpus(&s).unwrap();
    assert_eq!(truth.effects[0].playlists.len(), 40);
    let (ds, _) = Featurizer::default().featurize_corpus(&corpus);
    let task = AttributeTask::by_name("premium").unwrap();
    let config = ClusterConfig { k_range: KRange { start: 10, end: 40, step: 5 }, ..ClusterConfig::default() };
    let analysis = analyze_clusters(&ds, std::slice::from_ref(&task), &config).unwrap();
    let at = analysis.sweeps["premium"].iter().find(|p| (p.alpha - 0.8).abs() < 1e-9).unwrap();
    assert!(!at.leading.is_empty(), "no leading cluster at α=0.8; k={}", analysis.selected_k);
    let planted: std::collections::BTreeSet<&str> = truth.effects[0].playlists.iter().map(String::as_str).collect();
    let hit = at.leading.iter().any(|id| {
        let c = analysis.clusters.iter().find(|c| c.cluster_id == *id).unwrap();
        c.members.iter().filter(|m| planted.contains(m.as_str())).count() * 2 > c.size()
    });
    assert!(hit, "leading clusters do not hold the planted playlists");
}
