//! Network hyper-parameters and their flat `key = value` text form.
//!
//! Grammar: one `key = value` per line; `#` starts a comment; blank lines
//! are ignored; list values are comma separated. Unknown keys are errors.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::geometry::KernelKind;

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub n_points: usize,
    pub n_classes: usize,
    /// Input feature channels (3 for xyz-only clouds).
    pub in_channels: usize,
    pub encoder_channels: Vec<usize>,
    pub encoder_points: Vec<usize>,
    /// Cell radius of the first layer; doubles at every layer.
    pub base_radius: f64,
    pub kernel_kind: KernelKind,
    pub use_density: bool,
    pub density_scale: f64,
    pub density_hidden: (usize, usize),
    pub density_neighbors: usize,
    pub dropout_p: f64,
    pub fc_hidden: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub bn_momentum: f64,
    pub ignore_label: Option<u32>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            n_points: 8192,
            n_classes: 3,
            in_channels: 3,
            encoder_channels: vec![32, 64, 128, 256, 512],
            encoder_points: vec![2048, 512, 128, 64, 32],
            base_radius: 0.045,
            kernel_kind: KernelKind::SpherePacked,
            use_density: true,
            density_scale: 1.0,
            density_hidden: crate::density::DEFAULT_HIDDEN,
            density_neighbors: crate::density::DEFAULT_NEIGHBORS,
            dropout_p: 0.5,
            fc_hidden: 128,
            learning_rate: 1e-3,
            batch_size: 16,
            bn_momentum: 0.9,
            ignore_label: None,
        }
    }
}

/// Shapes of one spherical convolution in the network.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvPlan {
    pub name: String,
    pub points_in: usize,
    pub points_out: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub radius: f64,
}

/// Shapes of one per-point linear (1x1) layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPlan {
    pub name: String,
    pub points: usize,
    pub c_in: usize,
    pub c_out: usize,
}

impl NetworkConfig {
    /// Small network for 2048-point synthetic scenes.
    pub fn toy() -> Self {
        NetworkConfig {
            n_points: 2048,
            n_classes: 3,
            encoder_channels: vec![16, 32, 48, 64, 64],
            encoder_points: vec![512, 128, 64, 32, 16],
            base_radius: 0.08,
            fc_hidden: 32,
            learning_rate: 5e-3,
            batch_size: 8,
            ..Default::default()
        }
    }

    pub fn layers(&self) -> usize {
        self.encoder_channels.len()
    }

    /// Cell radius of encoder (and matching decoder) layer `i`.
    pub fn radius(&self, i: usize) -> f64 {
        self.base_radius * f64::powi(2.0, i as i32)
    }

    pub fn radii(&self) -> Vec<f64> {
        (0..self.layers()).map(|i| self.radius(i)).collect()
    }

    /// Output width of decoder layer `i`.
    pub fn decoder_channels(&self, i: usize) -> usize {
        self.encoder_channels[i]
    }

    /// Point count at level `i` (level 0 is the input).
    pub fn level_points(&self, i: usize) -> usize {
        if i == 0 {
            self.n_points
        } else {
            self.encoder_points[i - 1]
        }
    }

    /// Feature width at level `i` on the encoder side.
    pub fn level_channels(&self, i: usize) -> usize {
        if i == 0 {
            self.in_channels
        } else {
            self.encoder_channels[i - 1]
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.encoder_channels.len() != self.encoder_points.len() {
            return bad(format!(
                "encoder_channels has {} entries but encoder_points has {}",
                self.encoder_channels.len(),
                self.encoder_points.len()
            ));
        }
        if self.n_classes == 0 || self.in_channels == 0 || self.fc_hidden == 0 {
            return bad("n_classes, in_channels and fc_hidden must be positive".into());
        }
        if self.encoder_channels.contains(&0) {
            return bad("encoder channel widths must be positive".into());
        }
        let mut prev = self.n_points;
        for &p in &self.encoder_points {
            if p == 0 || p >= prev {
                return bad(format!(
                    "encoder_points must be strictly decreasing from n_points = {}: {:?}",
                    self.n_points, self.encoder_points
                ));
            }
            prev = p;
        }
        if !(self.base_radius > 0.0 && self.base_radius.is_finite()) {
            return bad(format!("base_radius must be positive, got {}", self.base_radius));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad(format!("dropout_p must lie in [0, 1), got {}", self.dropout_p));
        }
        if !(self.density_scale > 0.0) {
            return bad(format!("density_scale must be positive, got {}", self.density_scale));
        }
        if self.density_hidden.0 == 0 || self.density_hidden.1 == 0 || self.density_neighbors == 0 {
            return bad("density widths and neighbour count must be positive".into());
        }
        if !(self.learning_rate > 0.0) || self.batch_size == 0 {
            return bad("learning_rate and batch_size must be positive".into());
        }
        if !(0.0..1.0).contains(&self.bn_momentum) {
            return bad(format!("bn_momentum must lie in [0, 1), got {}", self.bn_momentum));
        }
        Ok(())
    }

    /// Every spherical convolution, in forward order.
    pub fn conv_plan(&self) -> Vec<ConvPlan> {
        let mut plan = Vec::new();
        for i in 0..self.layers() {
            let (n_in, n_out) = (self.level_points(i), self.level_points(i + 1));
            let c = self.encoder_channels[i];
            plan.push(ConvPlan {
                name: format!("enc{i}.conv1"),
                points_in: n_in,
                points_out: n_out,
                c_in: self.level_channels(i),
                c_out: c,
                radius: self.radius(i),
            });
            plan.push(ConvPlan {
                name: format!("enc{i}.conv2"),
                points_in: n_out,
                points_out: n_out,
                c_in: c,
                c_out: c,
                radius: self.radius(i),
            });
        }
        for i in (0..self.layers()).rev() {
            plan.push(ConvPlan {
                name: format!("dec{i}.conv"),
                points_in: self.level_points(i + 1),
                points_out: self.level_points(i),
                c_in: self.decoder_input_channels(i),
                c_out: self.decoder_channels(i),
                radius: self.radius(i),
            });
        }
        plan
    }

    /// Width of the coarse features entering decoder layer `i`.
    pub fn decoder_input_channels(&self, i: usize) -> usize {
        if i + 1 == self.layers() {
            self.encoder_channels[i]
        } else {
            self.decoder_channels(i + 1)
        }
    }

    /// Every per-point linear layer, in forward order.
    pub fn linear_plan(&self) -> Vec<LinearPlan> {
        let mut plan = Vec::new();
        for i in (0..self.layers()).rev() {
            let w = self.decoder_channels(i);
            let n = self.level_points(i);
            plan.push(LinearPlan {
                name: format!("dec{i}.mlp1"),
                points: n,
                c_in: w + self.level_channels(i),
                c_out: w,
            });
            plan.push(LinearPlan {
                name: format!("dec{i}.mlp2"),
                points: n,
                c_in: w,
                c_out: w,
            });
        }
        let head_in = if self.layers() == 0 {
            self.in_channels
        } else {
            self.decoder_channels(0)
        };
        plan.push(LinearPlan {
            name: "head.fc1".into(),
            points: self.n_points,
            c_in: head_in,
            c_out: self.fc_hidden,
        });
        plan.push(LinearPlan {
            name: "head.fc2".into(),
            points: self.n_points,
            c_in: self.fc_hidden,
            c_out: self.n_classes,
        });
        plan
    }

    pub fn to_text(&self) -> String {
        let list = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let mut s = String::new();
        let _ = writeln!(s, "n_points = {}", self.n_points);
        let _ = writeln!(s, "n_classes = {}", self.n_classes);
        let _ = writeln!(s, "in_channels = {}", self.in_channels);
        let _ = writeln!(s, "encoder_channels = {}", list(&self.encoder_channels));
        let _ = writeln!(s, "encoder_points = {}", list(&self.encoder_points));
        let _ = writeln!(s, "base_radius = {:?}", self.base_radius);
        let _ = writeln!(s, "kernel_kind = {}", self.kernel_kind);
        let _ = writeln!(s, "use_density = {}", self.use_density);
        let _ = writeln!(s, "density_scale = {:?}", self.density_scale);
        let _ = writeln!(
            s,
            "density_hidden = {},{}",
            self.density_hidden.0, self.density_hidden.1
        );
        let _ = writeln!(s, "density_neighbors = {}", self.density_neighbors);
        let _ = writeln!(s, "dropout_p = {:?}", self.dropout_p);
        let _ = writeln!(s, "fc_hidden = {}", self.fc_hidden);
        let _ = writeln!(s, "learning_rate = {:?}", self.learning_rate);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "bn_momentum = {:?}", self.bn_momentum);
        match self.ignore_label {
            Some(l) => {
                let _ = writeln!(s, "ignore_label = {l}");
            }
            None => {
                let _ = writeln!(s, "ignore_label = none");
            }
        }
        s
    }

    /// Parse `key = value` text on top of the defaults.
    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_text_with_base(text, NetworkConfig::default())
    }

    pub fn from_text_with_base(text: &str, base: NetworkConfig) -> Result<Self> {
        let mut cfg = base;
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(Error::ConfigParse {
                    line,
                    token: content.to_string(),
                    message: "expected `key = value`".into(),
                });
            };
            cfg.set(key.trim(), value.trim()).map_err(|message| Error::ConfigParse {
                line,
                token: content.to_string(),
                message,
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Set one field from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String> {
            v.parse().map_err(|_| format!("cannot parse `{v}`"))
        }
        fn list(v: &str) -> std::result::Result<Vec<usize>, String> {
            if v.is_empty() {
                return Ok(Vec::new());
            }
            v.split(',').map(|x| num(x.trim())).collect()
        }
        fn flag(v: &str) -> std::result::Result<bool, String> {
            match v {
                "true" | "on" | "1" | "yes" => Ok(true),
                "false" | "off" | "0" | "no" => Ok(false),
                _ => Err(format!("expected a boolean, got `{v}`")),
            }
        }
        match key {
            "n_points" => self.n_points = num(value)?,
            "n_classes" => self.n_classes = num(value)?,
            "in_channels" => self.in_channels = num(value)?,
            "encoder_channels" => self.encoder_channels = list(value)?,
            "encoder_points" => self.encoder_points = list(value)?,
            "base_radius" => self.base_radius = num(value)?,
            "kernel_kind" => self.kernel_kind = value.parse().map_err(|e: Error| e.to_string())?,
            "use_density" => self.use_density = flag(value)?,
            "density_scale" => self.density_scale = num(value)?,
            "density_hidden" => {
                let v = list(value)?;
                if v.len() != 2 {
                    return Err("density_hidden takes two widths".into());
                }
                self.density_hidden = (v[0], v[1]);
            }
            "density_neighbors" => self.density_neighbors = num(value)?,
            "dropout_p" => self.dropout_p = num(value)?,
            "fc_hidden" => self.fc_hidden = num(value)?,
            "learning_rate" => self.learning_rate = num(value)?,
            "batch_size" => self.batch_size = num(value)?,
            "bn_momentum" => self.bn_momentum = num(value)?,
            "ignore_label" => {
                self.ignore_label = match value {
                    "none" | "" => None,
                    v => Some(num(v)?),
                }
            }
            other => return Err(format!("unknown key `{other}`")),
        }
        Ok(())
    }
}
