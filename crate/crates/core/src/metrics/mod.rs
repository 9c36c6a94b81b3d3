//! Image quality, verification metrics and comparison protocols.

mod protocol;
mod quality;
mod roc;
mod scores;

pub use protocol::{build_protocol, Comparison, ProtocolKind};
pub use quality::{psnr, ssim, QualityStats, SsimParams};
pub use roc::{
    eer, eer_from_curve, eer_point, gar_at_far, gar_at_far_from_curve, roc_points, summarize, EerPoint,
    RocCurve, RocPoint, VerificationSummary,
};
pub use scores::{combine_eyes, format_score, Label, ScoreEntry, ScoreSet};
