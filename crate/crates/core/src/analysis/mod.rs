//! Scans, peak fits, intensity distributions and score summaries.

pub mod pdf;
pub mod peak;
pub mod scan;
pub mod scores;
pub mod simplex;

pub use pdf::{fit_pdf, histogram, Histogram, PdfFit, PdfModel};
pub use peak::{
    correlation_length, fit_gaussian_1d, fit_scan, integrated_intensity, ratio_report, AxisFits, CorrelationReport,
    Measured, PeakFit, PeakQuantities,
};
pub use scan::{project_scan, subtract_background, ScanProjection};
pub use scores::{aggregate_scores, ScoreSummary};
