use std::fs;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};

use echolab_core::container::ModelFile;
use echolab_core::corpus::ingest_sources;
use echolab_core::ontology::load_ontology;
use echolab_core::{AnnotatedDocument, CorpusSplit, Error, Ontology};
use thiserror::Error as ThisError;

#[derive(Debug, ThisError)]
pub enum CliError {
    /// Bad input data, flags or models.
    #[error("{0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => 1,
            CliError::Io { .. } => 2,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        CliError::Invalid(msg.into())
    }

    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Wraps a library error raised while handling `path`.
    pub(crate) fn from_core(path: &Path, e: Error) -> Self {
        match e {
            Error::Io(source) => CliError::io(path, source),
            other => CliError::Invalid(format!("{}: {other}", path.display())),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Io(source) => CliError::Io {
                path: PathBuf::new(),
                source,
            },
            other => CliError::Invalid(other.to_string()),
        }
    }
}

pub(crate) type CliResult<T> = Result<T, CliError>;

/// Writes through a temporary file in the target directory and renames it
/// into place, so readers never see a partial file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| CliError::io(path, e))?;
    tmp.as_file()
        .sync_all()
        .map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

pub(crate) fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub(crate) fn load_ontology_arg(path: Option<&Path>) -> CliResult<Ontology> {
    match path {
        None => Ok(Ontology::bundled()),
        Some(p) => load_ontology(&read_text(p)?).map_err(|e| CliError::from_core(p, e)),
    }
}

pub(crate) fn load_corpus(path: &Path, ontology: &Ontology) -> CliResult<Vec<AnnotatedDocument>> {
    let f = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    ingest_sources([(path.display().to_string(), BufReader::new(f))], ontology)
        .map_err(|e| CliError::from_core(path, e))
}

pub(crate) fn load_split(path: &Path) -> CliResult<CorpusSplit> {
    serde_json::from_str(&read_text(path)?)
        .map_err(|e| CliError::invalid(format!("{}: split manifest: {e}", path.display())))
}

/// Documents of one side of a split, in corpus order.
pub(crate) fn select(
    docs: &[AnnotatedDocument],
    ids: &[String],
) -> CliResult<Vec<AnnotatedDocument>> {
    Ok(CorpusSplit::select(docs, ids)?
        .into_iter()
        .cloned()
        .collect())
}

pub(crate) fn read_model(path: &Path) -> CliResult<ModelFile> {
    let f = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    ModelFile::read(BufReader::new(f)).map_err(|e| CliError::from_core(path, e))
}

pub(crate) fn write_model(path: &Path, file: &ModelFile) -> CliResult<()> {
    atomic_write(path, &file.to_bytes())
}

/// Model files in `dir` whose name starts with `prefix`, sorted by name.
pub(crate) fn model_files(dir: &Path, prefix: &str) -> CliResult<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if name.starts_with(prefix) && name.ends_with(".model") {
            out.push(path);
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(CliError::io(
            dir,
            io::Error::new(io::ErrorKind::NotFound, format!("no {prefix}*.model files")),
        ));
    }
    Ok(out)
}

pub(crate) fn check_version(path: &Path, file: &ModelFile, ontology: &Ontology) -> CliResult<()> {
    if file.header.ontology_version != ontology.version {
        return Err(CliError::invalid(format!(
            "{}: model was built for ontology version {}, but the ontology in use is version {}",
            path.display(),
            file.header.ontology_version,
            ontology.version
        )));
    }
    Ok(())
}
