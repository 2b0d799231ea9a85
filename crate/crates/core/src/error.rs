use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("JSON syntax error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("schema violation at `{path}`: {message}")]
    Schema { path: String, message: String },

    #[error("line {line}: {message}")]
    Line { line: usize, message: String },

    #[error("inconsistent legend: {0}")]
    InconsistentLegend(String),

    #[error("no template registered for task `{0}`")]
    MissingTemplate(String),

    #[error("template slot error: {0}")]
    Slot(String),

    #[error("invalid triple `{id}`: {message}")]
    InvalidTriple { id: String, message: String },

    #[error("corpus needs at least 2 items for IDF, got {0}")]
    DegenerateCorpus(usize),

    #[error("embedding format error at line {line}: {message}")]
    EmbeddingFormat { line: usize, message: String },

    #[error("unknown adapter `{0}`")]
    UnknownAdapter(String),

    #[error("failed to decode image {path}: {message}")]
    Decode { path: String, message: String },

    #[error("image encoding failed: {0}")]
    Encode(String),

    #[error("provider `{provider}` failed after {attempts} attempt(s): {message}")]
    Provider {
        provider: String,
        attempts: u32,
        message: String,
    },

    #[error("provider returned an empty annotation for `{0}`")]
    EmptyAnnotation(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    IoBare(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Converts a serde_json error into either a syntax error carrying the
    /// byte offset into `input` or a schema error carrying the field path.
    pub(crate) fn from_json(input: &[u8], err: serde_path_to_error::Error<serde_json::Error>) -> Self {
        let path = err.path().to_string();
        let inner = err.into_inner();
        match inner.classify() {
            serde_json::error::Category::Data => Error::Schema {
                path,
                message: inner.to_string(),
            },
            _ => Error::Parse {
                offset: byte_offset(input, inner.line(), inner.column()),
                message: inner.to_string(),
            },
        }
    }
}

/// serde_json reports 1-based line and column; column counts bytes.
fn byte_offset(input: &[u8], line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let mut offset = 0;
    for (i, l) in input.split(|&b| b == b'\n').enumerate() {
        if i + 1 == line {
            return (offset + column.saturating_sub(1)).min(input.len());
        }
        offset += l.len() + 1;
    }
    input.len()
}
