use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Run lengths do not describe a canonical mask of the stated size.
    MalformedRuns { width: u32, height: u32, reason: &'static str },
    /// Images must have at least one pixel.
    EmptyImage,
    DimensionMismatch { expected: (u32, u32), found: (u32, u32) },
    /// Feature or pixel vector of the wrong length.
    LengthMismatch { expected: usize, found: usize },
    /// An operation needed a non-empty mask.
    EmptyMask,
    InvalidSuperpixels(&'static str),
    InvalidConfig(&'static str),
    /// Training data has a single class.
    DegenerateLabels,
    MissingFeature { image_id: String, region: String },
    /// A category has no group assignment.
    MissingGroup { category: u32 },
    /// Re-estimation left no positive examples for the category.
    NoPositives { category: u32 },
    /// No region qualifies as a refinement training example.
    NoTrainingRegions { category: u32 },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::MalformedRuns { width, height, reason } => {
                write!(f, "malformed runs for {width}x{height} mask: {reason}")
            }
            Error::EmptyImage => f.write_str("image has zero width or height"),
            Error::DimensionMismatch { expected, found } => write!(
                f,
                "dimension mismatch: expected {}x{}, found {}x{}",
                expected.0, expected.1, found.0, found.1
            ),
            Error::LengthMismatch { expected, found } => {
                write!(f, "length mismatch: expected {expected}, found {found}")
            }
            Error::EmptyMask => f.write_str("operation undefined on an empty mask"),
            Error::InvalidSuperpixels(reason) => write!(f, "invalid superpixel map: {reason}"),
            Error::InvalidConfig(reason) => write!(f, "invalid configuration: {reason}"),
            Error::DegenerateLabels => f.write_str("training labels contain a single class"),
            Error::MissingFeature { image_id, region } => {
                write!(f, "no feature row for image {image_id:?} region {region}")
            }
            Error::MissingGroup { category } => write!(f, "category {category} has no group"),
            Error::NoPositives { category } => {
                write!(f, "category {category}: no positives survive re-estimation")
            }
            Error::NoTrainingRegions { category } => {
                write!(f, "category {category}: no region overlaps ground truth by more than 0.7")
            }
        }
    }
}

impl core::error::Error for Error {}
