use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use playlist_attrs::domain::{Corpus, FeatureDataset};
use playlist_attrs::features::{Featurizer, GenreLexicon, SkippedPlaylist};
use playlist_attrs::ingest::load_corpus;
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Serialize)]
pub struct InputFile {
    pub path: String,
    pub sha256: String,
}

/// Written as `metadata.json` next to every command's outputs.
#[derive(Debug, Clone, Serialize)]
pub struct RunMetadata {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub arguments: Vec<String>,
    pub seeds: Vec<u64>,
    pub jobs: usize,
    pub inputs: Vec<InputFile>,
    pub outputs: Vec<String>,
    pub settings: Value,
}

/// Collects inputs and outputs while a command runs, then writes the
/// metadata block.
pub struct Run {
    pub out: PathBuf,
    meta: RunMetadata,
}

impl Run {
    pub fn start(command: &str, out: &Path, jobs: usize) -> CliResult<Self> {
        fs::create_dir_all(out).map_err(|e| CliError::output(out, e))?;
        Ok(Run {
            out: out.to_path_buf(),
            meta: RunMetadata {
                tool: "playlist-attrs",
                version: env!("CARGO_PKG_VERSION"),
                command: command.to_string(),
                arguments: std::env::args().skip(1).collect(),
                seeds: Vec::new(),
                jobs,
                inputs: Vec::new(),
                outputs: Vec::new(),
                settings: Value::Null,
            },
        })
    }

    pub fn seeds(&mut self, seeds: &[u64]) {
        self.meta.seeds = seeds.to_vec();
    }

    pub fn settings<S: Serialize>(&mut self, s: &S) {
        self.meta.settings = serde_json::to_value(s).expect("settings serialize");
    }

    pub fn input(&mut self, path: &Path) -> CliResult<()> {
        let bytes = fs::read(path).map_err(|_| CliError::MissingInput(path.to_path_buf()))?;
        self.meta.inputs.push(InputFile { path: path.display().to_string(), sha256: hex::encode(Sha256::digest(&bytes)) });
        Ok(())
    }

    /// Path for an output file, recorded in the metadata.
    pub fn file(&mut self, name: &str) -> PathBuf {
        if !self.meta.outputs.iter().any(|o| o == name) {
            self.meta.outputs.push(name.to_string());
        }
        self.out.join(name)
    }

    pub fn write_json<S: Serialize + ?Sized>(&mut self, name: &str, value: &S) -> CliResult<PathBuf> {
        let path = self.file(name);
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::output(&path, e))?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| CliError::output(&path, e))?;
        Ok(path)
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> CliResult<PathBuf> {
        let path = self.file(name);
        fs::write(&path, text).map_err(|e| CliError::output(&path, e))?;
        Ok(path)
    }

    pub fn finish(mut self) -> CliResult<()> {
        self.meta.outputs.sort();
        let meta = self.meta.clone();
        self.write_json("metadata.json", &meta)?;
        Ok(())
    }
}

pub fn require(path: &Path) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::MissingInput(path.to_path_buf()))
    }
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    require(path)?;
    let text = fs::read_to_string(path).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        CliError::Invalid(format!("{}: {} at {}", path.display(), e.inner(), e.path()))
    })
}

pub fn featurizer(lexicon: Option<&Path>, run: &mut Run) -> CliResult<Featurizer> {
    Ok(match lexicon {
        Some(p) => {
            require(p)?;
            run.input(p)?;
            Featurizer::new(GenreLexicon::from_file(p)?)
        }
        None => Featurizer::default(),
    })
}

pub fn read_corpus(path: &Path, run: &mut Run) -> CliResult<Corpus> {
    require(path)?;
    run.input(path)?;
    Ok(load_corpus(path)?)
}

/// Where analyses read their playlists from: a corpus, featurized on the fly,
/// or a dataset written by `featurize`.
#[derive(Debug, Clone, Args)]
#[group(required = true, multiple = false)]
pub struct DatasetArgs {
    /// Corpus JSON (from `ingest` or `synth`); featurized in memory.
    #[arg(long, value_name = "PATH")]
    pub corpus: Option<PathBuf>,
    /// dataset.json written by `featurize`.
    #[arg(long, value_name = "PATH")]
    pub features: Option<PathBuf>,
}

pub fn load_dataset(
    input: &DatasetArgs,
    lexicon: Option<&Path>,
    run: &mut Run,
) -> CliResult<(FeatureDataset, Vec<SkippedPlaylist>)> {
    if let Some(p) = &input.features {
        if lexicon.is_some() {
            return Err(CliError::Usage("--lexicon only applies when featurizing a --corpus".into()));
        }
        let ds: FeatureDataset = read_json(p)?;
        run.input(p)?;
        if let Some(u) = ds.users.iter().find(|u| u.playlists.iter().any(|v| v.values.len() != ds.schema.len())) {
            return Err(CliError::Invalid(format!("{}: user {} has vectors not matching the schema", p.display(), u.user_id)));
        }
        return Ok((ds, Vec::new()));
    }
    let path = input.corpus.as_ref().expect("clap enforces one input");
    let fz = featurizer(lexicon, run)?;
    let corpus = read_corpus(path, run)?;
    Ok(fz.featurize_corpus(&corpus))
}
