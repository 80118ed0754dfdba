use std::fmt;

use nsp_core::bsn::BsnError;
use nsp_core::dataset::DatasetError;
use nsp_core::experiment::ExperimentError;
use nsp_core::imaging::ImageError;
use nsp_core::pairing::PairingError;
use nsp_core::pipeline::PipelineError;
use nsp_core::train::TrainError;

/// Error class, one per exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Class {
    Usage,
    Data,
    Numeric,
    Infeasible,
}

#[derive(Debug)]
pub struct Failure {
    pub class: Class,
    pub message: String,
}

impl Failure {
    pub fn new(class: Class, message: impl Into<String>) -> Failure {
        Failure {
            class,
            message: message.into(),
        }
    }

    pub fn code(&self) -> u8 {
        match self.class {
            Class::Usage => 2,
            Class::Data => 3,
            Class::Numeric => 4,
            Class::Infeasible => 5,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

fn pairing_class(e: &PairingError) -> Class {
    match e {
        PairingError::Infeasible { .. } => Class::Infeasible,
        PairingError::Invalid(_) | PairingError::NonDivisible { .. } => Class::Usage,
        PairingError::Image(_) => Class::Data,
    }
}

fn train_class(e: &TrainError) -> Class {
    match e {
        TrainError::NonFinite { .. } => Class::Numeric,
        TrainError::Config(_) => Class::Usage,
        TrainError::Pairing(p) => pairing_class(p),
        _ => Class::Data,
    }
}

macro_rules! classify {
    ($($ty:ty => $f:expr),* $(,)?) => {
        $(impl From<$ty> for Failure {
            fn from(e: $ty) -> Failure {
                let class: fn(&$ty) -> Class = $f;
                Failure::new(class(&e), e.to_string())
            }
        })*
    };
}

classify! {
    TrainError => train_class,
    PairingError => pairing_class,
    ExperimentError => |e| match e {
        ExperimentError::Train(t) => train_class(t),
        ExperimentError::Invalid(_) => Class::Usage,
        _ => Class::Data,
    },
    BsnError => |e| match e {
        BsnError::Config(_) => Class::Usage,
        _ => Class::Data,
    },
    PipelineError => |e| match e {
        PipelineError::Pairing(p) => pairing_class(p),
        _ => Class::Data,
    },
    ImageError => |_| Class::Data,
    DatasetError => |e| match e {
        DatasetError::Invalid(_) => Class::Usage,
        DatasetError::Pairing(p) => pairing_class(p),
        _ => Class::Data,
    },
}
