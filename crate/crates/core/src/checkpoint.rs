//! Line-oriented text container for trained [`PairModel`]s.
//!
//! ```text
//! aisc-checkpoint 1
//! seed <u64>
//! landmark_count <m>
//! appearance_dim <d>|none
//! config <single-line JSON of TrainConfig>
//! branch shape|appearance|joint
//! dims <in> <h1> ... <out>
//! odd <count of leading sign-symmetric inputs>
//! mean <v>...
//! scale <v>...
//! weight <layer> <v>...        (row-major, out × in)
//! bias <layer> <v>...
//! ...                          (further branches)
//! end
//! ```
//!
//! Values are separated by single spaces and printed in Rust's shortest
//! round-trip form, so a save/load cycle is bit-exact. Readers reject any
//! version other than 1.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::kernels::Matrix;
use crate::network::{Branch, FusionMode, Layer, MlpParams, PairModel, TrainConfig};
use crate::pipeline::Standardizer;

pub const MAGIC: &str = "aisc-checkpoint";
pub const VERSION: u32 = 1;

fn join(values: &[f64]) -> String {
    let mut s = String::with_capacity(values.len() * 20);
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        let _ = write!(s, "{v:?}");
    }
    s
}

fn write_branch(out: &mut String, name: &str, b: &Branch) {
    let dims: Vec<String> = b.net.dims().iter().map(usize::to_string).collect();
    let _ = writeln!(out, "branch {name}");
    let _ = writeln!(out, "dims {}", dims.join(" "));
    let _ = writeln!(out, "odd {}", b.odd_inputs);
    let _ = writeln!(out, "mean {}", join(&b.standardizer.mean));
    let _ = writeln!(out, "scale {}", join(&b.standardizer.scale));
    for (i, layer) in b.net.layers.iter().enumerate() {
        let _ = writeln!(out, "weight {i} {}", join(layer.weight.as_slice()));
        let _ = writeln!(out, "bias {i} {}", join(&layer.bias));
    }
}

pub fn format_checkpoint(model: &PairModel) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC} {VERSION}");
    let _ = writeln!(out, "seed {}", model.config.seed);
    let _ = writeln!(out, "landmark_count {}", model.landmark_count);
    match model.appearance_dim {
        Some(d) => {
            let _ = writeln!(out, "appearance_dim {d}");
        }
        None => out.push_str("appearance_dim none\n"),
    }
    let config = serde_json::to_string(&model.config).expect("config serialises");
    let _ = writeln!(out, "config {config}");
    for (name, branch) in [("shape", &model.shape), ("appearance", &model.appearance), ("joint", &model.joint)] {
        if let Some(b) = branch {
            write_branch(&mut out, name, b);
        }
    }
    out.push_str("end\n");
    out
}

pub fn save_checkpoint(model: &PairModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_checkpoint(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<PairModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&text, path)
}

struct Lines<'a> {
    iter: std::iter::Enumerate<std::str::Lines<'a>>,
    path: &'a Path,
    line: usize,
}

impl<'a> Lines<'a> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::format(self.path, self.line, message)
    }

    /// Next line split into its keyword and the remainder.
    fn next(&mut self) -> Result<(&'a str, &'a str)> {
        let (i, line) = self.iter.next().ok_or_else(|| Error::format(self.path, self.line + 1, "unexpected end of file"))?;
        self.line = i + 1;
        Ok(line.split_once(' ').unwrap_or((line, "")))
    }

    fn expect(&mut self, key: &str) -> Result<&'a str> {
        let (k, rest) = self.next()?;
        if k != key {
            return Err(self.err(format!("expected `{key}`, found `{k}`")));
        }
        Ok(rest)
    }

    fn floats(&self, rest: &str, expected: usize) -> Result<Vec<f64>> {
        let values: Vec<f64> = rest
            .split(' ')
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>().map_err(|_| self.err(format!("bad number `{s}`"))))
            .collect::<Result<_>>()?;
        if values.len() != expected {
            return Err(self.err(format!("expected {expected} values, found {}", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(self.err("non-finite value"));
        }
        Ok(values)
    }

    fn usize(&self, s: &str) -> Result<usize> {
        s.parse().map_err(|_| self.err(format!("bad integer `{s}`")))
    }
}

fn read_branch(lines: &mut Lines) -> Result<Branch> {
    let dims_text = lines.expect("dims")?;
    let dims: Vec<usize> = dims_text.split(' ').map(|s| lines.usize(s)).collect::<Result<_>>()?;
    if dims.len() < 2 || dims.contains(&0) {
        return Err(lines.err("dims needs at least two positive sizes"));
    }
    let odd_text = lines.expect("odd")?;
    let odd_inputs = lines.usize(odd_text)?;
    if odd_inputs > dims[0] {
        return Err(lines.err("odd input count exceeds the input size"));
    }
    let mean_text = lines.expect("mean")?;
    let mean = lines.floats(mean_text, dims[0])?;
    let scale_text = lines.expect("scale")?;
    let scale = lines.floats(scale_text, dims[0])?;
    if scale.iter().any(|&s| s <= 0.0) {
        return Err(lines.err("standardizer scale must be positive"));
    }
    let mut layers = Vec::with_capacity(dims.len() - 1);
    for (i, w) in dims.windows(2).enumerate() {
        let (fan_in, fan_out) = (w[0], w[1]);
        let rest = lines.expect("weight")?;
        let (idx, rest) = rest.split_once(' ').unwrap_or((rest, ""));
        if lines.usize(idx)? != i {
            return Err(lines.err(format!("expected weight {i}")));
        }
        let weight = Matrix::from_vec(fan_out, fan_in, lines.floats(rest, fan_in * fan_out)?)?;
        let rest = lines.expect("bias")?;
        let (idx, rest) = rest.split_once(' ').unwrap_or((rest, ""));
        if lines.usize(idx)? != i {
            return Err(lines.err(format!("expected bias {i}")));
        }
        let bias = lines.floats(rest, fan_out)?;
        layers.push(Layer { weight, bias });
    }
    Ok(Branch {
        net: MlpParams::new(layers)?,
        standardizer: Standardizer { mean, scale },
        odd_inputs,
    })
}

pub fn parse_checkpoint(text: &str, path: &Path) -> Result<PairModel> {
    let mut lines = Lines {
        iter: text.lines().enumerate(),
        path,
        line: 0,
    };
    let (magic, version) = lines.next()?;
    if magic != MAGIC {
        return Err(lines.err("not a checkpoint file"));
    }
    if version != VERSION.to_string() {
        return Err(lines.err(format!("unsupported checkpoint version `{version}`")));
    }
    let seed_text = lines.expect("seed")?;
    let seed: u64 = seed_text.parse().map_err(|_| lines.err("bad seed"))?;
    let count_text = lines.expect("landmark_count")?;
    let landmark_count = lines.usize(count_text)?;
    let dim_text = lines.expect("appearance_dim")?;
    let appearance_dim = match dim_text {
        "none" => None,
        s => Some(lines.usize(s)?),
    };
    let config_text = lines.expect("config")?;
    let config: TrainConfig =
        serde_json::from_str(config_text).map_err(|e| lines.err(format!("bad config: {e}")))?;
    if config.seed != seed {
        return Err(lines.err("seed does not match the config echo"));
    }

    let mut model = PairModel {
        config,
        landmark_count,
        appearance_dim,
        shape: None,
        appearance: None,
        joint: None,
    };
    loop {
        let (key, rest) = lines.next()?;
        match key {
            "end" => break,
            "branch" => {
                let slot = match rest {
                    "shape" => &mut model.shape,
                    "appearance" => &mut model.appearance,
                    "joint" => &mut model.joint,
                    other => return Err(lines.err(format!("unknown branch `{other}`"))),
                };
                if slot.is_some() {
                    return Err(lines.err(format!("duplicate branch `{rest}`")));
                }
                *slot = Some(read_branch(&mut lines)?);
            }
            other => return Err(lines.err(format!("unexpected `{other}`"))),
        }
    }

    let shape_dim = landmark_count * landmark_count;
    let check = |b: &Option<Branch>, dim: Option<usize>, name: &str| -> Result<()> {
        match (b, dim) {
            (Some(b), Some(d)) if b.net.input_dim() == d && b.net.output_dim() == 2 => Ok(()),
            (None, None) => Ok(()),
            _ => Err(Error::format(path, lines.line, format!("branch `{name}` does not match the model header"))),
        }
    };
    match model.config.fusion {
        FusionMode::Score => {
            check(&model.shape, Some(shape_dim), "shape")?;
            check(&model.appearance, appearance_dim, "appearance")?;
            check(&model.joint, None, "joint")?;
        }
        FusionMode::Concat => {
            check(&model.shape, None, "shape")?;
            check(&model.appearance, None, "appearance")?;
            check(&model.joint, Some(shape_dim + appearance_dim.unwrap_or(0)), "joint")?;
        }
    }
    Ok(model)
}
