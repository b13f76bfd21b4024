use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {what} is {got_w}x{got_h}, expected {want_w}x{want_h}")]
    DimensionMismatch {
        what: &'static str,
        got_w: usize,
        got_h: usize,
        want_w: usize,
        want_h: usize,
    },

    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),

    #[error("invalid pose: {0}")]
    InvalidPose(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("malformed semantic parse {path}: {reason}")]
    MalformedParse { path: PathBuf, reason: String },

    #[error("region {region} references unknown instance local id {member}")]
    DanglingMember { region: u32, member: u32 },

    #[error("duplicate local {kind} id {id}")]
    DuplicateLocalId { kind: &'static str, id: u32 },

    #[error("mask file {path} referenced by instance {id} does not exist")]
    MissingMask { id: u32, path: PathBuf },

    #[error("frame {frame_id}: {reason}")]
    Frame { frame_id: String, reason: String },

    #[error("unknown {kind} id {id}")]
    UnknownUnit { kind: &'static str, id: u32 },

    #[error("archive format version {found} is not supported (this build reads version {supported})")]
    VersionMismatch { found: u32, supported: u32 },

    #[error("archive checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },

    #[error("corrupt archive: {0}")]
    CorruptArchive(String),

    #[error("malformed PLY: {0}")]
    Ply(String),

    #[error("no navigable viewpoint candidate")]
    NoViewpoint,

    #[error("localization failed: {0}")]
    LocalizationFailed(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: {source}")]
    Toml {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether the error comes from bad input data rather than a broken internal invariant.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::Invariant(_))
    }
}
