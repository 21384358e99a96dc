//! Run configuration: defaults, TOML config file, and command-line merge.
//!
//! The config file is a flat key/value TOML document mirroring the flags;
//! explicit flags win over file values, which win over defaults.

use std::fs;
use std::path::Path;

use liouville_dmd::{
    Error, InputLayout, KernelSpec, QuadratureRule, Result, TransposeVariant,
};
use serde::Deserialize;

use crate::{KernelArg, LayoutArg, OrderArg, QuadratureArg, TransposeArg};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeOrder {
    Eigenvalue,
    Energy,
}

impl ModeOrder {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModeOrder::Eigenvalue => "eigenvalue",
            ModeOrder::Energy => "energy",
        }
    }
}

/// Fully resolved configuration for a `decompose` run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub kernel: KernelSpec,
    pub quadrature: QuadratureRule,
    pub scaling: f64,
    pub eps: f64,
    pub segment_len: Option<usize>,
    pub segment_stride: Option<usize>,
    pub layout: InputLayout,
    pub order: ModeOrder,
    pub transpose: TransposeVariant,
}

/// Flat key/value config file; every key optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    kernel: Option<String>,
    mu: Option<f64>,
    scale_a: Option<f64>,
    eps: Option<f64>,
    quadrature: Option<String>,
    segment_len: Option<usize>,
    segment_stride: Option<usize>,
    order: Option<String>,
    modes_transpose: Option<String>,
    layout: Option<String>,
}

/// Flag values as given on the command line (None = not given).
#[derive(Debug, Default)]
pub struct Overrides {
    pub kernel: Option<KernelArg>,
    pub mu: Option<f64>,
    pub scale_a: Option<f64>,
    pub eps: Option<f64>,
    pub quadrature: Option<QuadratureArg>,
    pub segment_len: Option<usize>,
    pub segment_stride: Option<usize>,
    pub order: Option<OrderArg>,
    pub modes_transpose: Option<TransposeArg>,
    pub layout: Option<LayoutArg>,
}

fn usage(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

fn parse_kernel_name(name: &str) -> Result<KernelArg> {
    match name {
        "gaussian" => Ok(KernelArg::Gaussian),
        "expdot" => Ok(KernelArg::Expdot),
        other => Err(usage(format!(
            "unknown kernel {other:?}; expected gaussian or expdot"
        ))),
    }
}

fn parse_quadrature_name(name: &str) -> Result<QuadratureArg> {
    match name {
        "auto" => Ok(QuadratureArg::Auto),
        "simpson" => Ok(QuadratureArg::Simpson),
        "trapezoid" => Ok(QuadratureArg::Trapezoid),
        other => Err(usage(format!(
            "unknown quadrature rule {other:?}; expected auto, simpson, or trapezoid"
        ))),
    }
}

fn parse_order_name(name: &str) -> Result<OrderArg> {
    match name {
        "eigenvalue" => Ok(OrderArg::Eigenvalue),
        "energy" => Ok(OrderArg::Energy),
        other => Err(usage(format!(
            "unknown mode order {other:?}; expected eigenvalue or energy"
        ))),
    }
}

fn parse_transpose_name(name: &str) -> Result<TransposeArg> {
    match name {
        "plain" => Ok(TransposeArg::Plain),
        "conjugate" => Ok(TransposeArg::Conjugate),
        other => Err(usage(format!(
            "unknown transpose variant {other:?}; expected plain or conjugate"
        ))),
    }
}

fn parse_layout_name(name: &str) -> Result<LayoutArg> {
    match name {
        "per-file" => Ok(LayoutArg::PerFile),
        "with-id" => Ok(LayoutArg::WithId),
        other => Err(usage(format!(
            "unknown layout {other:?}; expected per-file or with-id"
        ))),
    }
}

impl RunConfig {
    /// Resolves defaults, then the config file, then explicit flags.
    pub fn resolve(config_path: Option<&Path>, flags: Overrides) -> Result<Self> {
        let file = match config_path {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|source| Error::Io {
                    path: path.to_path_buf(),
                    source,
                })?;
                toml::from_str::<ConfigFile>(&text)
                    .map_err(|e| usage(format!("{}: {e}", path.display())))?
            }
            None => ConfigFile::default(),
        };

        let kernel_kind = match flags.kernel {
            Some(k) => k,
            None => match &file.kernel {
                Some(name) => parse_kernel_name(name)?,
                None => KernelArg::Gaussian,
            },
        };
        let mu = flags.mu.or(file.mu).unwrap_or(1.0);
        let kernel = match kernel_kind {
            KernelArg::Gaussian => KernelSpec::gaussian(mu)?,
            KernelArg::Expdot => KernelSpec::exponential_dot(mu)?,
        };

        let quadrature = match flags.quadrature {
            Some(q) => q,
            None => match &file.quadrature {
                Some(name) => parse_quadrature_name(name)?,
                None => QuadratureArg::Auto,
            },
        };
        let quadrature = match quadrature {
            QuadratureArg::Auto => QuadratureRule::Auto,
            QuadratureArg::Simpson => QuadratureRule::Simpson,
            QuadratureArg::Trapezoid => QuadratureRule::Trapezoid,
        };

        let scaling = flags.scale_a.or(file.scale_a).unwrap_or(1.0);
        if !(scaling > 0.0 && scaling <= 1.0) {
            return Err(usage(format!("--scale-a must lie in (0, 1], got {scaling}")));
        }
        let eps = flags.eps.or(file.eps).unwrap_or(1e-10);
        if !(eps >= 0.0) || !eps.is_finite() {
            return Err(usage(format!("--eps must be non-negative, got {eps}")));
        }

        let segment_len = flags.segment_len.or(file.segment_len);
        let segment_stride = flags.segment_stride.or(file.segment_stride);
        if let Some(len) = segment_len {
            if len < 2 {
                return Err(usage(format!("--segment-len must be at least 2, got {len}")));
            }
        }
        if segment_stride.is_some() && segment_len.is_none() {
            return Err(usage("--segment-stride requires --segment-len".to_string()));
        }
        if let Some(stride) = segment_stride {
            if stride == 0 {
                return Err(usage("--segment-stride must be at least 1".to_string()));
            }
        }

        let order = match flags.order {
            Some(OrderArg::Eigenvalue) => ModeOrder::Eigenvalue,
            Some(OrderArg::Energy) => ModeOrder::Energy,
            None => match &file.order {
                Some(name) => match parse_order_name(name)? {
                    OrderArg::Eigenvalue => ModeOrder::Eigenvalue,
                    OrderArg::Energy => ModeOrder::Energy,
                },
                None => ModeOrder::Eigenvalue,
            },
        };

        let transpose = match flags.modes_transpose {
            Some(TransposeArg::Plain) => TransposeVariant::Plain,
            Some(TransposeArg::Conjugate) => TransposeVariant::Conjugate,
            None => match &file.modes_transpose {
                Some(name) => match parse_transpose_name(name)? {
                    TransposeArg::Plain => TransposeVariant::Plain,
                    TransposeArg::Conjugate => TransposeVariant::Conjugate,
                },
                None => TransposeVariant::Plain,
            },
        };

        let layout = match flags.layout {
            Some(LayoutArg::PerFile) => InputLayout::OneFilePerTrajectory,
            Some(LayoutArg::WithId) => InputLayout::SingleFileWithId,
            None => match &file.layout {
                Some(name) => match parse_layout_name(name)? {
                    LayoutArg::PerFile => InputLayout::OneFilePerTrajectory,
                    LayoutArg::WithId => InputLayout::SingleFileWithId,
                },
                None => InputLayout::OneFilePerTrajectory,
            },
        };

        Ok(Self {
            kernel,
            quadrature,
            scaling,
            eps,
            segment_len,
            segment_stride,
            layout,
            order,
            transpose,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use liouville_dmd::KernelKind;

    #[test]
    fn defaults_without_config() {
        let cfg = RunConfig::resolve(None, Overrides::default()).unwrap();
        assert_eq!(cfg.kernel.kind(), KernelKind::GaussianRbf);
        assert_eq!(cfg.kernel.mu(), 1.0);
        assert_eq!(cfg.quadrature, QuadratureRule::Auto);
        assert_eq!(cfg.scaling, 1.0);
        assert_eq!(cfg.eps, 1e-10);
        assert_eq!(cfg.order, ModeOrder::Eigenvalue);
        assert_eq!(cfg.transpose, TransposeVariant::Plain);
        assert_eq!(cfg.layout, InputLayout::OneFilePerTrajectory);
    }

    #[test]
    fn flags_beat_file_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "kernel = \"expdot\"\nmu = 7.0\nscale_a = 0.9\n").unwrap();
        let flags = Overrides {
            mu: Some(2.5),
            ..Overrides::default()
        };
        let cfg = RunConfig::resolve(Some(&path), flags).unwrap();
        assert_eq!(cfg.kernel.kind(), KernelKind::ExponentialDotProduct);
        assert_eq!(cfg.kernel.mu(), 2.5);
        assert_eq!(cfg.scaling, 0.9);
    }

    #[test]
    fn unknown_config_key_is_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "bogus = 1\n").unwrap();
        let err = RunConfig::resolve(Some(&path), Overrides::default()).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
    }

    #[test]
    fn range_validation() {
        let flags = Overrides {
            scale_a: Some(1.5),
            ..Overrides::default()
        };
        assert!(RunConfig::resolve(None, flags).is_err());
        let flags = Overrides {
            segment_len: Some(1),
            ..Overrides::default()
        };
        assert!(RunConfig::resolve(None, flags).is_err());
        let flags = Overrides {
            segment_stride: Some(3),
            ..Overrides::default()
        };
        assert!(RunConfig::resolve(None, flags).is_err());
    }
}
