use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Wraps any error raised while reading a specific file. `line` is 1-based.
    #[error("{}{}: {source}", path.display(), line.map(|l| format!(":{l}")).unwrap_or_default())]
    InFile {
        path: PathBuf,
        line: Option<usize>,
        source: Box<Error>,
    },

    #[error("malformed record: {0}")]
    Parse(String),

    #[error("invalid schema: {0}")]
    InvalidSchema(String),

    #[error("duplicate dialogue id `{0}`")]
    DuplicateId(String),

    #[error("slot `{0}` is not defined in the schema")]
    SchemaViolation(String),

    #[error("empty value for slot `{0}` after canonicalization")]
    EmptySlotValue(String),

    #[error("structure error: {0}")]
    StructureError(String),

    #[error("dangling reference to dialogue `{dialogue}` turn {turn}")]
    DanglingReference { dialogue: String, turn: usize },

    #[error("duplicate entry for dialogue `{dialogue}` turn {turn}")]
    DuplicateEntry { dialogue: String, turn: usize },

    #[error("value of slot `{0}` contains the reserved separator `;`")]
    UnserializableValue(String),

    #[error("malformed state segment `{0}`")]
    MalformedSegment(String),

    #[error("unknown slot `{0}`")]
    UnknownSlot(String),

    #[error("dialogue `{dialogue}` user turn {turn} has no {variant} text")]
    MissingVariant {
        dialogue: String,
        turn: usize,
        variant: &'static str,
    },

    #[error("user turn {turn} out of range for dialogue `{dialogue}`")]
    TurnOutOfRange { dialogue: String, turn: usize },

    #[error("empty reference")]
    EmptyReference,

    #[error("empty value")]
    EmptyValue,

    #[error("span {start}..{end} of dialogue `{dialogue}` turn {turn} does not match its text (expected `{surface}`)")]
    StaleSpan {
        dialogue: String,
        turn: usize,
        start: usize,
        end: usize,
        surface: String,
    },

    #[error("overlapping spans {0:?} and {1:?}")]
    SpanOverlap((usize, usize), (usize, usize)),

    #[error("no transcript pairs to estimate from")]
    EmptyCorpus,

    #[error("slot `{0}` is not non-categorical")]
    WrongSlotKind(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid rule set: {0}")]
    InvalidRules(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// The underlying error with any file/line context stripped.
    pub fn kind(&self) -> &Error {
        match self {
            Error::InFile { source, .. } => source.kind(),
            other => other,
        }
    }

    pub(crate) fn in_file(self, path: impl Into<PathBuf>, line: Option<usize>) -> Error {
        match self {
            already @ Error::InFile { .. } => already,
            Error::Io { .. } => self,
            other => Error::InFile {
                path: path.into(),
                line,
                source: Box::new(other),
            },
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Error {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
