use std::io::Write;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::hypothesis::{benjamini_hochberg, one_way_anova, pearson_r, quantile_sorted, student_t_test, welch_t_test, Correlation};
use super::StatsError;
use crate::domain::{age_bin_midpoint, AttributeTask, FeatureDataset};
use crate::features::{featurize_user, FeatureFamily, FeatureSchema};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestKind {
    T,
    Welch,
    Anova,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub feature: String,
    pub attribute: String,
    pub kind: TestKind,
    pub statistic: f64,
    pub p_value: f64,
    /// Benjamini–Hochberg adjusted value when correction is enabled.
    pub p_adjusted: Option<f64>,
    pub group_sizes: Vec<usize>,
    pub degenerate: bool,
}

impl TestResult {
    pub fn effective_p(&self) -> f64 {
        self.p_adjusted.unwrap_or(self.p_value)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Correction {
    #[default]
    None,
    BenjaminiHochberg,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignificanceOptions {
    pub alpha: f64,
    pub correction: Correction,
    /// Welch instead of Student for two-class tasks.
    pub welch: bool,
}

impl Default for SignificanceOptions {
    fn default() -> Self {
        SignificanceOptions { alpha: 0.05, correction: Correction::None, welch: false }
    }
}

/// Attribute × family grid of significant-feature shares.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceMatrix {
    pub alpha: f64,
    pub attributes: Vec<String>,
    pub families: Vec<FeatureFamily>,
    /// `ratios[a][f]` = significant features in family `f` / family size.
    pub ratios: Vec<Vec<f64>>,
    pub skipped: Vec<String>,
}

/// One mean vector per user, in dataset order.
pub fn user_level_vectors(dataset: &FeatureDataset) -> Vec<Vec<f64>> {
    dataset
        .users
        .iter()
        .map(|u| featurize_user(u).expect("dataset users have playlists"))
        .collect()
}

/// Partition of labelled user indices by class, dropping empty classes.
fn class_groups(
    dataset: &FeatureDataset,
    task: &AttributeTask,
) -> Result<Vec<(usize, Vec<usize>)>, StatsError> {
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); task.n_classes()];
    for (i, u) in dataset.users.iter().enumerate() {
        if let Some(y) = u.label(task) {
            groups[y].push(i);
        }
    }
    let present: Vec<(usize, Vec<usize>)> =
        groups.into_iter().enumerate().filter(|(_, g)| !g.is_empty()).collect();
    let skip = |reason: String| StatsError::TaskSkipped { task: task.name.clone(), reason };
    if present.len() < 2 {
        return Err(skip(format!("{} class(es) with labelled users", present.len())));
    }
    if let Some((c, g)) = present.iter().find(|(_, g)| g.len() < 2) {
        return Err(skip(format!("class {:?} has {} user(s)", task.classes[*c], g.len())));
    }
    Ok(present)
}

fn test_feature(
    values: &[Vec<f64>],
    task: &AttributeTask,
    groups: &[(usize, Vec<usize>)],
    feature: usize,
    schema: &FeatureSchema,
    welch: bool,
) -> TestResult {
    let samples: Vec<Vec<f64>> = groups
        .iter()
        .map(|(_, idx)| idx.iter().map(|&i| values[i][feature]).collect())
        .collect();
    let group_sizes = samples.iter().map(Vec::len).collect();
    let (kind, statistic, p_value, degenerate) = if samples.len() == 2 {
        let r = if welch {
            welch_t_test(&samples[0], &samples[1])
        } else {
            student_t_test(&samples[0], &samples[1])
        }
        .expect("groups validated");
        (if welch { TestKind::Welch } else { TestKind::T }, r.t, r.p, r.degenerate)
    } else {
        let r = one_way_anova(&samples).expect("groups validated");
        (TestKind::Anova, r.f, r.p, r.degenerate)
    };
    TestResult {
        feature: schema.names[feature].clone(),
        attribute: task.name.clone(),
        kind,
        statistic,
        p_value,
        p_adjusted: None,
        group_sizes,
        degenerate,
    }
}

/// Runs the per-feature battery on precomputed user-level vectors.
pub fn significance_matrix_from_vectors(
    dataset: &FeatureDataset,
    user_vectors: &[Vec<f64>],
    tasks: &[AttributeTask],
    options: &SignificanceOptions,
) -> Result<(SignificanceMatrix, Vec<TestResult>), StatsError> {
    if !(0.0..=1.0).contains(&options.alpha) {
        return Err(StatsError::BadAlpha(options.alpha));
    }
    let schema = &dataset.schema;
    let mut matrix = SignificanceMatrix {
        alpha: options.alpha,
        attributes: Vec::new(),
        families: FeatureFamily::ALL.to_vec(),
        ratios: Vec::new(),
        skipped: Vec::new(),
    };
    let mut all = Vec::new();
    for task in tasks {
        let groups = match class_groups(dataset, task) {
            Ok(g) => g,
            Err(e) => {
                warn!("{e}");
                matrix.skipped.push(task.name.clone());
                continue;
            }
        };
        let mut results: Vec<TestResult> = (0..schema.len())
            .into_par_iter()
            .map(|f| test_feature(user_vectors, task, &groups, f, schema, options.welch))
            .collect();
        if options.correction == Correction::BenjaminiHochberg {
            let p: Vec<f64> = results.iter().map(|r| r.p_value).collect();
            for (r, adj) in results.iter_mut().zip(benjamini_hochberg(&p)) {
                r.p_adjusted = Some(adj);
            }
        }
        let row = FeatureFamily::ALL
            .iter()
            .map(|&fam| {
                let idx = schema.family_indices(fam);
                let hits = idx.iter().filter(|&&i| results[i].effective_p() < options.alpha).count();
                hits as f64 / idx.len() as f64
            })
            .collect();
        matrix.attributes.push(task.name.clone());
        matrix.ratios.push(row);
        all.extend(results);
    }
    Ok((matrix, all))
}

/// Per-feature tests at user level for every task, summarised by family.
pub fn significance_matrix(
    dataset: &FeatureDataset,
    tasks: &[AttributeTask],
    options: &SignificanceOptions,
) -> Result<(SignificanceMatrix, Vec<TestResult>), StatsError> {
    let vectors = user_level_vectors(dataset);
    significance_matrix_from_vectors(dataset, &vectors, tasks, options)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSummary {
    pub class: String,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDistributions {
    pub attribute: String,
    pub feature: String,
    pub classes: Vec<ClassSummary>,
    pub test: TestResult,
}

/// User-level distribution of one feature per class, ordered by class index.
pub fn class_distributions(
    dataset: &FeatureDataset,
    task: &AttributeTask,
    feature: &str,
) -> Result<ClassDistributions, StatsError> {
    let f = dataset
        .schema
        .index_of(feature)
        .ok_or_else(|| StatsError::UnknownFeature(feature.into()))?;
    let groups = class_groups(dataset, task)?;
    let vectors = user_level_vectors(dataset);
    let classes = groups
        .iter()
        .map(|(c, idx)| {
            let mut xs: Vec<f64> = idx.iter().map(|&i| vectors[i][f]).collect();
            xs.sort_by(f64::total_cmp);
            ClassSummary {
                class: task.classes[*c].clone(),
                n: xs.len(),
                mean: crate::scalar::mean(&xs).unwrap(),
                std: crate::scalar::sample_std(&xs).unwrap(),
                min: xs[0],
                q1: quantile_sorted(&xs, 0.25).unwrap(),
                median: quantile_sorted(&xs, 0.5).unwrap(),
                q3: quantile_sorted(&xs, 0.75).unwrap(),
                max: xs[xs.len() - 1],
            }
        })
        .collect();
    let test = test_feature(&vectors, task, &groups, f, &dataset.schema, false);
    Ok(ClassDistributions { attribute: task.name.clone(), feature: feature.into(), classes, test })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureCorrelation {
    pub feature: String,
    pub correlation: Option<Correlation<f64>>,
}

/// Pearson correlation of each feature against age, with ages taken as bin
/// midpoints. Constant features yield `None`.
pub fn age_correlations(dataset: &FeatureDataset) -> Vec<FeatureCorrelation> {
    let vectors = user_level_vectors(dataset);
    let (ages, rows): (Vec<f64>, Vec<&Vec<f64>>) = dataset
        .users
        .iter()
        .zip(&vectors)
        .filter_map(|(u, v)| u.attributes.get("age").and_then(|b| age_bin_midpoint(b)).map(|a| (a, v)))
        .unzip();
    (0..dataset.schema.len())
        .map(|f| {
            let xs: Vec<f64> = rows.iter().map(|r| r[f]).collect();
            FeatureCorrelation {
                feature: dataset.schema.names[f].clone(),
                correlation: pearson_r(&xs, &ages).ok(),
            }
        })
        .collect()
}

pub fn write_significance_csv<W: Write>(m: &SignificanceMatrix, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["attribute".to_string()];
    header.extend(m.families.iter().map(|f| f.as_str().to_string()));
    w.write_record(&header)?;
    for (a, row) in m.attributes.iter().zip(&m.ratios) {
        let mut rec = vec![a.clone()];
        rec.extend(row.iter().map(|r| r.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_test_results_csv<W: Write>(results: &[TestResult], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["attribute", "feature", "test", "statistic", "p_value", "p_adjusted", "group_sizes", "degenerate"])?;
    for r in results {
        let kind = match r.kind {
            TestKind::T => "t",
            TestKind::Welch => "welch",
            TestKind::Anova => "anova",
        };
        let sizes: Vec<String> = r.group_sizes.iter().map(usize::to_string).collect();
        w.write_record([
            r.attribute.clone(),
            r.feature.clone(),
            kind.to_string(),
            r.statistic.to_string(),
            r.p_value.to_string(),
            r.p_adjusted.map(|p| p.to_string()).unwrap_or_default(),
            sizes.join(";"),
            r.degenerate.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{FeatureVector, UserRecord};
    use std::collections::BTreeMap;

    fn dataset(rows: &[(&str, Vec<f64>)]) -> FeatureDataset {
        let schema = FeatureSchema::default();
        let users = rows
            .iter()
            .enumerate()
            .map(|(i, (label, head))| {
                let mut values = vec![0.0; schema.len()];
                values[..head.len()].copy_from_slice(head);
                let mut attributes = BTreeMap::new();
                attributes.insert("smoke".to_string(), label.to_string());
                UserRecord {
                    user_id: format!("u{i}"),
                    attributes,
                    playlists: vec![FeatureVector { playlist_id: format!("p{i}"), owner_id: format!("u{i}"), values }],
                }
            })
            .collect();
        FeatureDataset { schema, users }
    }

    #[test]
    fn constant_feature_never_significant() {
        let d = dataset(&[("yes", vec![1.0]), ("yes", vec![2.0]), ("no", vec![8.0]), ("no", vec![9.0])]);
        let task = AttributeTask::by_name("smoke").unwrap();
        let (m, results) = significance_matrix(&d, &[task], &SignificanceOptions::default()).unwrap();
        // Feature 0 separates the classes; everything else is the constant 0.
        assert!(results[0].p_value < 0.05);
        assert!(results[1..].iter().all(|r| r.p_value == 1.0));
        assert!((m.ratios[0][0] - 1.0 / 49.0).abs() < 1e-15);
        assert_eq!(&m.ratios[0][1..], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn alpha_one_flags_every_varying_feature() {
        let schema_len = FeatureSchema::default().len();
        let rows: Vec<(&str, Vec<f64>)> = (0..6)
            .map(|i| {
                let v: Vec<f64> = (0..schema_len).map(|f| ((i * 7 + f * 3) % 11) as f64).collect();
                (if i % 2 == 0 { "yes" } else { "no" }, v)
            })
            .collect();
        let d = dataset(&rows);
        let task = AttributeTask::by_name("smoke").unwrap();
        let opts = SignificanceOptions { alpha: 1.0, ..Default::default() };
        let (_, results) = significance_matrix(&d, &[task.clone()], &opts).unwrap();
        assert!(results.iter().all(|r| r.p_value < 1.0), "fixture must vary in every feature");
        let (m, _) = significance_matrix(&d, &[task], &opts).unwrap();
        assert!(m.ratios[0].iter().all(|&r| r == 1.0));
    }

    #[test]
    fn task_with_singleton_class_is_skipped() {
        let d = dataset(&[("yes", vec![1.0]), ("no", vec![2.0]), ("no", vec![3.0])]);
        let task = AttributeTask::by_name("smoke").unwrap();
        let (m, results) = significance_matrix(&d, &[task.clone()], &SignificanceOptions::default()).unwrap();
        assert_eq!(m.skipped, vec!["smoke"]);
        assert!(results.is_empty());
        assert!(matches!(class_distributions(&d, &task, "song_popularity_mean"), Err(StatsError::TaskSkipped { .. })));
    }

    #[test]
    fn distributions_are_ordered_by_class() {
        let d = dataset(&[("no", vec![5.0]), ("no", vec![6.0]), ("yes", vec![1.0]), ("yes", vec![3.0]), ("yes", vec![2.0])]);
        let task = AttributeTask::by_name("smoke").unwrap();
        let cd = class_distributions(&d, &task, "song_popularity_mean").unwrap();
        assert_eq!(cd.classes[0].class, "yes");
        assert_eq!((cd.classes[0].n, cd.classes[0].median, cd.classes[0].mean), (3, 2.0, 2.0));
        assert_eq!(cd.classes[1].q1, 5.25);
        assert!(cd.test.p_value < 0.05);
        assert!(matches!(class_distributions(&d, &task, "nope"), Err(StatsError::UnknownFeature(_))));
    }

    #[test]
    fn bad_alpha_rejected() {
        let d = dataset(&[("yes", vec![1.0])]);
        let opts = SignificanceOptions { alpha: 1.5, ..Default::default() };
        assert_eq!(significance_matrix(&d, &[], &opts).unwrap_err(), StatsError::BadAlpha(1.5));
    }
}
