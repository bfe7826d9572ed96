//! Versioned textual checkpoint: named tensors with shapes and full-precision
//! values, one model per file.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a
//! save/load cycle restores bit-identical parameters. The first line is a
//! magic header; unknown versions are rejected rather than guessed at.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use super::{FlipoutLayer, Head, NetLayer, PriorMixture, StochasticModel, StochasticNet, Variant};
use crate::nn::{Activation, DenseLayer, Matrix};
use crate::{Error, Result};

const MAGIC: &str = "uqbench-checkpoint";
const VERSION: &str = "v1";

fn fmt_values(values: impl Iterator<Item = f64>, out: &mut String) {
    let mut first = true;
    for v in values {
        if !first {
            out.push(' ');
        }
        let _ = write!(out, "{v}");
        first = false;
    }
    out.push('\n');
}

fn fmt_sites(sites: &[usize]) -> String {
    if sites.is_empty() {
        "-".to_string()
    } else {
        sites
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>()
            .join(",")
    }
}

fn activation_name(a: Activation) -> &'static str {
    match a {
        Activation::Relu => "relu",
        Activation::Linear => "linear",
    }
}

/// Serializes the model to `path`.
pub fn save_model(model: &StochasticModel, path: &Path) -> Result<()> {
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC} {VERSION}");
    match model.variant {
        Variant::McDropout { rate } => {
            let _ = writeln!(out, "variant mc_dropout {rate}");
        }
        Variant::McDropConnect { rate } => {
            let _ = writeln!(out, "variant mc_dropconnect {rate}");
        }
        Variant::Flipout => {
            let _ = writeln!(out, "variant flipout -");
        }
        Variant::DeepEnsemble { members } => {
            let _ = writeln!(out, "variant deep_ensemble {members}");
        }
    }
    let _ = writeln!(out, "head {}", model.head.name());
    let _ = writeln!(out, "passes {}", model.passes);
    let _ = writeln!(out, "class_count {}", model.class_count());
    let _ = writeln!(out, "trained {}", u8::from(model.is_trained()));
    let _ = writeln!(out, "dropout_sites {}", fmt_sites(&model.dropout_sites));
    let _ = writeln!(out, "dropconnect_sites {}", fmt_sites(&model.dropconnect_sites));
    let _ = writeln!(out, "nets {}", model.nets.len());
    for (n, net) in model.nets.iter().enumerate() {
        let _ = writeln!(out, "net {n} layers {}", net.layers.len());
        for (i, layer) in net.layers.iter().enumerate() {
            match layer {
                NetLayer::Dense(l) => {
                    let _ = writeln!(
                        out,
                        "layer {i} dense {} {} {}",
                        activation_name(l.activation),
                        l.out_dim(),
                        l.in_dim()
                    );
                    let _ = writeln!(out, "tensor weights {}", l.out_dim() * l.in_dim());
                    fmt_values(l.weights.iter(), &mut out);
                    let _ = writeln!(out, "tensor bias {}", l.bias.len());
                    fmt_values(l.bias.iter().copied(), &mut out);
                }
                NetLayer::Flipout(l) => {
                    let _ = writeln!(
                        out,
                        "layer {i} flipout {} {} {}",
                        activation_name(l.activation),
                        l.out_dim(),
                        l.in_dim()
                    );
                    let _ = writeln!(
                        out,
                        "prior {} {} {}",
                        l.prior.sigma1, l.prior.sigma2, l.prior.mixing
                    );
                    for (name, m) in [("w_mean", &l.w_mean), ("w_rho", &l.w_rho)] {
                        let _ = writeln!(out, "tensor {name} {}", m.rows() * m.cols());
                        fmt_values(m.iter(), &mut out);
                    }
                    for (name, v) in [("b_mean", &l.b_mean), ("b_rho", &l.b_rho)] {
                        let _ = writeln!(out, "tensor {name} {}", v.len());
                        fmt_values(v.iter().copied(), &mut out);
                    }
                }
            }
        }
    }
    out.push_str("end\n");
    fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

struct Reader<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Reader<'a> {
    fn next(&mut self) -> Result<(usize, &'a str)> {
        self.lines
            .next()
            .map(|(n, l)| (n + 1, l))
            .ok_or_else(|| Error::Checkpoint("unexpected end of file".into()))
    }

    /// Reads a line expected to start with `keyword`; returns the rest.
    fn expect(&mut self, keyword: &str) -> Result<Vec<&'a str>> {
        let (n, line) = self.next()?;
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some(k) if k == keyword => Ok(parts.collect()),
            other => Err(Error::Checkpoint(format!(
                "line {n}: expected '{keyword}', got '{}'",
                other.unwrap_or("")
            ))),
        }
    }
}

fn parse<T: FromStr>(s: &str, what: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::Checkpoint(format!("invalid {what}: '{s}'")))
}

fn parse_sites(s: &str) -> Result<Vec<usize>> {
    if s == "-" {
        return Ok(Vec::new());
    }
    s.split(',').map(|p| parse(p, "site index")).collect()
}

fn parse_activation(s: &str) -> Result<Activation> {
    match s {
        "relu" => Ok(Activation::Relu),
        "linear" => Ok(Activation::Linear),
        other => Err(Error::Checkpoint(format!("unknown activation '{other}'"))),
    }
}

fn parse_tensor(r: &mut Reader<'_>, name: &str, expected_len: usize) -> Result<Vec<f64>> {
    let parts = r.expect("tensor")?;
    if parts.len() != 2 || parts[0] != name {
        return Err(Error::Checkpoint(format!(
            "expected tensor '{name}', got {parts:?}"
        )));
    }
    let declared: usize = parse(parts[1], "tensor length")?;
    if declared != expected_len {
        return Err(Error::Checkpoint(format!(
            "tensor '{name}' declares {declared} values, layer shape needs {expected_len}"
        )));
    }
    let (n, line) = r.next()?;
    let values: Vec<f64> = line
        .split_whitespace()
        .map(|v| parse(v, "tensor value"))
        .collect::<Result<_>>()?;
    if values.len() != expected_len {
        return Err(Error::Checkpoint(format!(
            "line {n}: tensor '{name}' has {} values, expected {expected_len}",
            values.len()
        )));
    }
    Ok(values)
}

/// Restores a model written by [`save_model`].
pub fn load_model(path: &Path) -> Result<StochasticModel> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut r = Reader {
        lines: text.lines().enumerate(),
    };
    let (_, header) = r.next()?;
    let mut head_parts = header.split_whitespace();
    if head_parts.next() != Some(MAGIC) {
        return Err(Error::Checkpoint(format!(
            "not a checkpoint file (missing '{MAGIC}' magic)"
        )));
    }
    match head_parts.next() {
        Some(VERSION) => {}
        Some(v) => {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version '{v}' (this build reads {VERSION})"
            )))
        }
        None => return Err(Error::Checkpoint("missing checkpoint version".into())),
    }

    let vparts = r.expect("variant")?;
    if vparts.len() != 2 {
        return Err(Error::Checkpoint("malformed variant line".into()));
    }
    let variant = match vparts[0] {
        "mc_dropout" => Variant::McDropout {
            rate: parse(vparts[1], "dropout rate")?,
        },
        "mc_dropconnect" => Variant::McDropConnect {
            rate: parse(vparts[1], "dropconnect rate")?,
        },
        "flipout" => Variant::Flipout,
        "deep_ensemble" => Variant::DeepEnsemble {
            members: parse(vparts[1], "member count")?,
        },
        other => return Err(Error::Checkpoint(format!("unknown variant '{other}'"))),
    };
    let head = match r.expect("head")?.first().copied() {
        Some("softmax") => Head::Softmax,
        Some("gaussian_logits") => Head::GaussianLogits,
        other => return Err(Error::Checkpoint(format!("unknown head {other:?}"))),
    };
    let passes: usize = parse(
        r.expect("passes")?.first().copied().unwrap_or(""),
        "pass count",
    )?;
    let class_count: usize = parse(
        r.expect("class_count")?.first().copied().unwrap_or(""),
        "class count",
    )?;
    let trained = r.expect("trained")?.first().copied() == Some("1");
    let dropout_sites = parse_sites(r.expect("dropout_sites")?.first().copied().unwrap_or(""))?;
    let dropconnect_sites =
        parse_sites(r.expect("dropconnect_sites")?.first().copied().unwrap_or(""))?;
    let net_count: usize = parse(r.expect("nets")?.first().copied().unwrap_or(""), "net count")?;

    let mut nets = Vec::with_capacity(net_count);
    for n in 0..net_count {
        let parts = r.expect("net")?;
        if parts.len() != 3 || parts[0] != n.to_string() || parts[1] != "layers" {
            return Err(Error::Checkpoint(format!("malformed net header {parts:?}")));
        }
        let layer_count: usize = parse(parts[2], "layer count")?;
        let mut layers = Vec::with_capacity(layer_count);
        for i in 0..layer_count {
            let lp = r.expect("layer")?;
            if lp.len() != 5 || lp[0] != i.to_string() {
                return Err(Error::Checkpoint(format!("malformed layer header {lp:?}")));
            }
            let activation = parse_activation(lp[2])?;
            let out_dim: usize = parse(lp[3], "layer rows")?;
            let in_dim: usize = parse(lp[4], "layer cols")?;
            match lp[1] {
                "dense" => {
                    let weights = parse_tensor(&mut r, "weights", out_dim * in_dim)?;
                    let bias = parse_tensor(&mut r, "bias", out_dim)?;
                    layers.push(NetLayer::Dense(DenseLayer {
                        weights: Matrix::from_vec(out_dim, in_dim, weights)?,
                        bias,
                        activation,
                    }));
                }
                "flipout" => {
                    let pp = r.expect("prior")?;
                    if pp.len() != 3 {
                        return Err(Error::Checkpoint("malformed prior line".into()));
                    }
                    let prior = PriorMixture {
                        sigma1: parse(pp[0], "prior sigma1")?,
                        sigma2: parse(pp[1], "prior sigma2")?,
                        mixing: parse(pp[2], "prior mixing")?,
                    };
                    let w_mean = parse_tensor(&mut r, "w_mean", out_dim * in_dim)?;
                    let w_rho = parse_tensor(&mut r, "w_rho", out_dim * in_dim)?;
                    let b_mean = parse_tensor(&mut r, "b_mean", out_dim)?;
                    let b_rho = parse_tensor(&mut r, "b_rho", out_dim)?;
                    layers.push(NetLayer::Flipout(FlipoutLayer {
                        w_mean: Matrix::from_vec(out_dim, in_dim, w_mean)?,
                        w_rho: Matrix::from_vec(out_dim, in_dim, w_rho)?,
                        b_mean,
                        b_rho,
                        activation,
                        prior,
                    }));
                }
                other => return Err(Error::Checkpoint(format!("unknown layer kind '{other}'"))),
            }
        }
        nets.push(StochasticNet {
            layers,
            class_count,
        });
    }
    r.expect("end")?;

    let mut model = StochasticModel {
        variant,
        head,
        passes,
        dropout_sites,
        dropconnect_sites,
        nets,
        trained: false,
    };
    model.set_trained(trained);
    Ok(model)
}
