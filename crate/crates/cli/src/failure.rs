//! Exit-code classification: 1 data error, 2 config error, 3 numeric failure.

use std::fmt;

use sparta::ivector::IvectorError;
use sparta::model::ModelError;
use sparta::nn::NnError;
use sparta::train::TrainError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Data = 1,
    Config = 2,
    Numeric = 3,
}

#[derive(Debug)]
pub struct Failure {
    pub kind: Kind,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn new(kind: Kind, error: impl Into<anyhow::Error>) -> Self {
        Self {
            kind,
            error: error.into(),
        }
    }

    pub fn config(message: impl fmt::Display) -> Self {
        Self::new(Kind::Config, anyhow::anyhow!("{message}"))
    }

    pub fn data(message: impl fmt::Display) -> Self {
        Self::new(Kind::Data, anyhow::anyhow!("{message}"))
    }

    pub fn code(&self) -> u8 {
        self.kind as u8
    }
}

pub type CmdResult<T = ()> = Result<T, Failure>;

/// Tags library errors with an exit-code class.
pub trait Classify<T> {
    fn data(self) -> CmdResult<T>;
    fn config(self) -> CmdResult<T>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn data(self) -> CmdResult<T> {
        self.map_err(|e| Failure::new(Kind::Data, e))
    }

    fn config(self) -> CmdResult<T> {
        self.map_err(|e| Failure::new(Kind::Config, e))
    }
}

fn nn_kind(e: &NnError) -> Kind {
    match e {
        NnError::NonFinite(_) => Kind::Numeric,
        NnError::Config(_) => Kind::Config,
        _ => Kind::Data,
    }
}

fn model_kind(e: &ModelError) -> Kind {
    match e {
        ModelError::Config { .. } | ModelError::FeatureMismatch { .. } | ModelError::InactiveTask(_) => Kind::Config,
        ModelError::Nn(n) => nn_kind(n),
    }
}

fn train_kind(e: &TrainError) -> Kind {
    match e {
        TrainError::Config { .. } => Kind::Config,
        TrainError::Divergence { .. } => Kind::Numeric,
        TrainError::GridPoint { source, .. } => train_kind(source),
        TrainError::Model(m) => model_kind(m),
        _ => Kind::Data,
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        Failure::new(train_kind(&e), e)
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        Failure::new(model_kind(&e), e)
    }
}

impl From<IvectorError> for Failure {
    fn from(e: IvectorError) -> Self {
        let kind = match e {
            IvectorError::Singular { .. } => Kind::Numeric,
            IvectorError::Invalid(_) => Kind::Config,
            _ => Kind::Data,
        };
        Failure::new(kind, e)
    }
}
