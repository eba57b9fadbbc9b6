use thiserror::Error;

use crate::bandit::BanditError;
use crate::config::ConfigError;
use crate::dataset::DatasetError;
use crate::graph::GraphError;
use crate::kernel::KernelError;
use crate::metrics::MetricsError;

/// Any failure surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Bandit(#[from] BanditError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("training diverged at epoch {epoch}: {source}")]
    Diverged {
        epoch: usize,
        #[source]
        source: KernelError,
    },
    #[error("the training split is empty")]
    EmptyTrainingSet,
}
