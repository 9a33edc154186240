//! Feature standardization, K-means, silhouette scores and k selection.

pub mod kmeans;
pub mod selection;
pub mod silhouette;
pub mod standardize;

pub use kmeans::{count_distinct, kmeans_fit, kmeans_fit_traced, kmeans_predict, wcss, KMeansModel, RestartTrace};
pub use selection::{knee, select_by_silhouette, wcss_curve, ChosenBy, KSelection, Knee};
pub use silhouette::{silhouette, silhouette_samples};
pub use standardize::Standardizer;
