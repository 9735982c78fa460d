//! Text model files.
//!
//! ```text
//! lpskit-model v1 linear A
//! train_rmse = 12.5
//! train_min = 20.1
//! train_max = 280.4
//! clamp_factor = 2
//! intercept = -40
//! slope = -1
//! ```
//!
//! Floats are written in shortest round-trip form, so a save/load cycle is
//! bit-exact. Trees are preorder node lists (`node <id> split <thr>` or
//! `node <id> leaf <value>`).

use std::fmt::Write as _;
use std::path::Path;

use super::{
    GaussianTerm, LsBoostParams, ModelKind, ModelParams, Polynomial3Params, RangingError, RangingModel, RegressionTree,
    Result, SmoothingSpline, SvrLinearParams, TreeNode,
};

pub const MODEL_MAGIC: &str = "lpskit-model";
pub const MODEL_VERSION: &str = "v1";

fn kv(out: &mut String, name: &str, value: f64) {
    let _ = writeln!(out, "{name} = {value}");
}

fn write_tree(out: &mut String, tree: &RegressionTree) {
    let _ = writeln!(out, "nodes = {}", tree.nodes.len());
    for (id, node) in tree.nodes.iter().enumerate() {
        let _ = match node {
            TreeNode::Split { threshold, .. } => writeln!(out, "node {id} split {threshold}"),
            TreeNode::Leaf { value } => writeln!(out, "node {id} leaf {value}"),
        };
    }
}

/// Serializes a model to its text form.
pub fn format_model(m: &RangingModel) -> String {
    let mut out = format!("{MODEL_MAGIC} {MODEL_VERSION} {} {}\n", m.kind, m.gateway_id);
    kv(&mut out, "train_rmse", m.train_rmse);
    kv(&mut out, "train_min", m.train_range.0);
    kv(&mut out, "train_max", m.train_range.1);
    kv(&mut out, "clamp_factor", m.clamp_factor);
    match &m.params {
        ModelParams::PathLoss { intercept, slope } | ModelParams::Linear { intercept, slope } => {
            kv(&mut out, "intercept", *intercept);
            kv(&mut out, "slope", *slope);
        }
        ModelParams::Polynomial3(p) => {
            kv(&mut out, "center", p.center);
            kv(&mut out, "scale", p.scale);
            for (j, c) in p.coeffs.iter().enumerate() {
                kv(&mut out, &format!("c{j}"), *c);
            }
        }
        ModelParams::Exponential { a, b } => {
            kv(&mut out, "a", *a);
            kv(&mut out, "b", *b);
        }
        ModelParams::GaussianSum(terms) => {
            let _ = writeln!(out, "terms = {}", terms.len());
            for t in terms {
                kv(&mut out, "amplitude", t.amplitude);
                kv(&mut out, "centroid", t.centroid);
                kv(&mut out, "width", t.width);
            }
        }
        ModelParams::SmoothingSpline(s) => {
            kv(&mut out, "p", s.p);
            let _ = writeln!(out, "knots = {}", s.knots.len());
            for i in 0..s.knots.len() {
                let _ = writeln!(out, "knot = {} {} {}", s.knots[i], s.values[i], s.second_derivs[i]);
            }
        }
        ModelParams::Cart(tree) => write_tree(&mut out, tree),
        ModelParams::LsBoost(b) => {
            kv(&mut out, "base", b.base);
            kv(&mut out, "learn_rate", b.learn_rate);
            let _ = writeln!(out, "trees = {}", b.trees.len());
            for (i, t) in b.trees.iter().enumerate() {
                let _ = writeln!(out, "tree = {i}");
                write_tree(&mut out, t);
            }
        }
        ModelParams::SvrLinear(s) => {
            kv(&mut out, "center", s.center);
            kv(&mut out, "scale", s.scale);
            kv(&mut out, "weight", s.weight);
            kv(&mut out, "bias", s.bias);
            kv(&mut out, "c", s.c);
            kv(&mut out, "epsilon", s.epsilon);
        }
    }
    out
}

pub fn save_model(m: &RangingModel, path: &Path) -> Result<()> {
    std::fs::write(path, format_model(m))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<RangingModel> {
    parse_model(&std::fs::read_to_string(path)?)
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

fn parse_err(line: usize, message: impl Into<String>) -> RangingError {
    RangingError::ParseError {
        line,
        message: message.into(),
    }
}

impl<'a> Lines<'a> {
    fn next_line(&mut self) -> Result<(usize, &'a str)> {
        for (i, l) in self.inner.by_ref() {
            let l = l.trim();
            if !l.is_empty() {
                self.last = i + 1;
                return Ok((i + 1, l));
            }
        }
        Err(parse_err(self.last + 1, "unexpected end of file"))
    }

    fn value(&mut self, name: &str) -> Result<(usize, &'a str)> {
        let (line, text) = self.next_line()?;
        let (key, value) = text
            .split_once('=')
            .ok_or_else(|| parse_err(line, format!("expected `{name} = ...`")))?;
        if key.trim() != name {
            return Err(parse_err(line, format!("expected `{name}`, found `{}`", key.trim())));
        }
        Ok((line, value.trim()))
    }

    fn float(&mut self, name: &str) -> Result<f64> {
        let (line, v) = self.value(name)?;
        parse_float(line, v)
    }

    fn count(&mut self, name: &str) -> Result<usize> {
        let (line, v) = self.value(name)?;
        v.parse()
            .map_err(|_| parse_err(line, format!("`{name}` must be a count")))
    }

    fn tree(&mut self) -> Result<RegressionTree> {
        let n = self.count("nodes")?;
        let mut items = Vec::with_capacity(n);
        let start = self.last + 1;
        for id in 0..n {
            let (line, text) = self.next_line()?;
            let parts: Vec<&str> = text.split_whitespace().collect();
            let [tag, nid, what, v] = parts[..] else {
                return Err(parse_err(line, "expected `node <id> split|leaf <value>`"));
            };
            if tag != "node" || nid.parse::<usize>().ok() != Some(id) {
                return Err(parse_err(line, format!("expected node {id}")));
            }
            let v = parse_float(line, v)?;
            items.push(match what {
                "split" => Ok(v),
                "leaf" => Err(v),
                _ => return Err(parse_err(line, format!("unknown node type {what:?}"))),
            });
        }
        RegressionTree::from_preorder(items)
            .ok_or_else(|| parse_err(start, "node list is not a complete preorder tree"))
    }
}

fn parse_float(line: usize, v: &str) -> Result<f64> {
    let x: f64 = v
        .parse()
        .map_err(|_| parse_err(line, format!("{v:?} is not a number")))?;
    if !x.is_finite() {
        return Err(parse_err(line, "non-finite value"));
    }
    Ok(x)
}

/// Parses the text form written by [`format_model`].
pub fn parse_model(text: &str) -> Result<RangingModel> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
        last: 0,
    };
    let (line, header) = lines.next_line()?;
    let mut parts = header.splitn(4, ' ');
    if parts.next() != Some(MODEL_MAGIC) {
        return Err(parse_err(line, format!("missing `{MODEL_MAGIC}` header")));
    }
    let version = parts.next().unwrap_or("");
    if version != MODEL_VERSION {
        return Err(RangingError::VersionMismatch {
            found: version.to_string(),
            expected: MODEL_VERSION.to_string(),
        });
    }
    let kind: ModelKind = parts
        .next()
        .unwrap_or("")
        .parse()
        .map_err(|_| parse_err(line, "unknown model kind"))?;
    let gateway_id = parts.next().unwrap_or("").trim().to_string();
    if gateway_id.is_empty() {
        return Err(parse_err(line, "missing gateway id"));
    }

    let train_rmse = lines.float("train_rmse")?;
    let train_range = (lines.float("train_min")?, lines.float("train_max")?);
    let clamp_factor = lines.float("clamp_factor")?;
    let params = match kind {
        ModelKind::PathLoss => ModelParams::PathLoss {
            intercept: lines.float("intercept")?,
            slope: lines.float("slope")?,
        },
        ModelKind::Linear => ModelParams::Linear {
            intercept: lines.float("intercept")?,
            slope: lines.float("slope")?,
        },
        ModelKind::Polynomial3 => ModelParams::Polynomial3(Polynomial3Params {
            center: lines.float("center")?,
            scale: lines.float("scale")?,
            coeffs: [
                lines.float("c0")?,
                lines.float("c1")?,
                lines.float("c2")?,
                lines.float("c3")?,
            ],
        }),
        ModelKind::Exponential => ModelParams::Exponential {
            a: lines.float("a")?,
            b: lines.float("b")?,
        },
        ModelKind::GaussianSum => {
            let k = lines.count("terms")?;
            let mut terms = Vec::with_capacity(k);
            for _ in 0..k {
                terms.push(GaussianTerm {
                    amplitude: lines.float("amplitude")?,
                    centroid: lines.float("centroid")?,
                    width: lines.float("width")?,
                });
            }
            ModelParams::GaussianSum(terms)
        }
        ModelKind::SmoothingSpline => {
            let p = lines.float("p")?;
            let n = lines.count("knots")?;
            if n < 2 {
                return Err(parse_err(lines.last, "a spline needs at least two knots"));
            }
            let mut s = SmoothingSpline {
                knots: Vec::with_capacity(n),
                values: Vec::with_capacity(n),
                second_derivs: Vec::with_capacity(n),
                p,
            };
            for _ in 0..n {
                let (line, v) = lines.value("knot")?;
                let nums = v
                    .split_whitespace()
                    .map(|t| parse_float(line, t))
                    .collect::<Result<Vec<f64>>>()?;
                let [x, g, c] = nums[..] else {
                    return Err(parse_err(line, "expected `knot = <x> <value> <second derivative>`"));
                };
                if s.knots.last().is_some_and(|prev| *prev >= x) {
                    return Err(parse_err(line, "knots must be strictly increasing"));
                }
                s.knots.push(x);
                s.values.push(g);
                s.second_derivs.push(c);
            }
            ModelParams::SmoothingSpline(s)
        }
        ModelKind::Cart => ModelParams::Cart(lines.tree()?),
        ModelKind::LsBoost => {
            let base = lines.float("base")?;
            let learn_rate = lines.float("learn_rate")?;
            let m = lines.count("trees")?;
            let mut trees = Vec::with_capacity(m);
            for i in 0..m {
                if lines.count("tree")? != i {
                    return Err(parse_err(lines.last, format!("expected tree {i}")));
                }
                trees.push(lines.tree()?);
            }
            ModelParams::LsBoost(LsBoostParams {
                base,
                learn_rate,
                trees,
            })
        }
        ModelKind::SvrLinear => ModelParams::SvrLinear(SvrLinearParams {
            center: lines.float("center")?,
            scale: lines.float("scale")?,
            weight: lines.float("weight")?,
            bias: lines.float("bias")?,
            c: lines.float("c")?,
            epsilon: lines.float("epsilon")?,
        }),
    };
    if let Ok((line, _)) = lines.next_line() {
        return Err(parse_err(line, "trailing content"));
    }
    Ok(RangingModel {
        kind,
        gateway_id,
        params,
        train_rmse,
        train_range,
        clamp_factor,
    })
}
