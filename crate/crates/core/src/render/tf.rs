//! Piecewise-linear transfer functions and the preset store.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::RenderError;

/// Control point: `[hu, r, g, b, alpha]`, colours and alpha in [0, 1].
pub type ControlPoint = [f64; 5];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferFunction {
    pub points: Vec<ControlPoint>,
    /// The curve is evaluated at `scalar - offset`.
    #[serde(default)]
    pub offset: f64,
    #[serde(default = "one")]
    pub opacity_scale: f64,
}

fn one() -> f64 {
    1.0
}

impl TransferFunction {
    pub fn new(points: Vec<ControlPoint>) -> Result<Self, RenderError> {
        let tf = Self { points, offset: 0.0, opacity_scale: 1.0 };
        tf.validate()?;
        Ok(tf)
    }

    pub fn with_offset(mut self, offset: f64) -> Self {
        self.offset = offset;
        self
    }

    pub fn with_opacity(mut self, scale: f64) -> Self {
        self.opacity_scale = scale;
        self
    }

    pub fn validate(&self) -> Result<(), RenderError> {
        let bad = |m: String| Err(RenderError::InvalidTransferFunction(m));
        if self.points.is_empty() {
            return bad("at least one control point is required".into());
        }
        for w in self.points.windows(2) {
            if !(w[0][0] < w[1][0]) {
                return bad(format!("control-point scalars must increase strictly ({} then {})", w[0][0], w[1][0]));
            }
        }
        for p in &self.points {
            if !p[0].is_finite() || p[1..].iter().any(|c| !(0.0..=1.0).contains(c)) {
                return bad(format!("control point {p:?} has a component outside [0, 1]"));
            }
        }
        if !self.offset.is_finite() || !(0.0..=1.0).contains(&self.opacity_scale) {
            return bad("offset must be finite and opacity scale within [0, 1]".into());
        }
        Ok(())
    }

    /// RGBA at `scalar`. Outside the control-point range the end values hold.
    pub fn eval(&self, scalar: f64) -> [f64; 4] {
        let v = scalar - self.offset;
        let pts = &self.points;
        let rgba = |p: &ControlPoint| [p[1], p[2], p[3], p[4]];
        let mut out = if v <= pts[0][0] {
            rgba(&pts[0])
        } else if v >= pts[pts.len() - 1][0] {
            rgba(&pts[pts.len() - 1])
        } else {
            let i = pts.partition_point(|p| p[0] <= v);
            let (a, b) = (&pts[i - 1], &pts[i]);
            let t = (v - a[0]) / (b[0] - a[0]);
            std::array::from_fn(|c| a[c + 1] + (b[c + 1] - a[c + 1]) * t)
        };
        out[3] *= self.opacity_scale;
        out
    }
}

/// On-disk preset: `{"name": ..., "points": [[hu, r, g, b, a], ...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TfPreset {
    pub name: String,
    pub points: Vec<ControlPoint>,
}

impl TfPreset {
    pub fn transfer_function(&self) -> Result<TransferFunction, RenderError> {
        TransferFunction::new(self.points.clone())
    }
}

pub const PRESET_NAMES: [&str; 5] = ["lung-air", "vessel", "lesion-red", "context-fat", "outline"];

pub fn builtin_preset(name: &str) -> Option<TfPreset> {
    let points: Vec<ControlPoint> = match name {
        "lung-air" => vec![
            [-1000.0, 0.55, 0.65, 0.85, 0.0],
            [-900.0, 0.55, 0.65, 0.85, 0.01],
            [-600.0, 0.75, 0.8, 0.9, 0.08],
            [-200.0, 0.95, 0.95, 1.0, 0.25],
        ],
        "vessel" => vec![[-300.0, 0.8, 0.2, 0.2, 0.0], [100.0, 1.0, 0.4, 0.35, 0.6], [400.0, 1.0, 1.0, 1.0, 0.9]],
        "lesion-red" => vec![[-800.0, 1.0, 0.15, 0.1, 0.0], [-650.0, 1.0, 0.15, 0.1, 0.35], [-200.0, 1.0, 0.3, 0.2, 0.8]],
        "context-fat" => vec![[-200.0, 0.9, 0.7, 0.5, 0.0], [-100.0, 0.9, 0.7, 0.5, 0.03], [200.0, 1.0, 0.9, 0.8, 0.15]],
        "outline" => vec![[-1024.0, 1.0, 1.0, 1.0, 0.03], [3071.0, 1.0, 1.0, 1.0, 0.03]],
        _ => return None,
    };
    Some(TfPreset { name: name.to_string(), points })
}

pub fn builtin_tf(name: &str) -> TransferFunction {
    builtin_preset(name)
        .and_then(|p| p.transfer_function().ok())
        .unwrap_or_else(|| panic!("unknown builtin preset {name}"))
}

/// Built-in presets overlaid with every `*.json` preset in `dir` (user presets
/// win on name clashes). A missing directory yields the built-ins only.
pub fn load_presets(dir: Option<&Path>) -> Result<BTreeMap<String, TfPreset>, RenderError> {
    let mut out: BTreeMap<String, TfPreset> =
        PRESET_NAMES.iter().filter_map(|n| builtin_preset(n)).map(|p| (p.name.clone(), p)).collect();
    let Some(dir) = dir else { return Ok(out) };
    let Ok(entries) = std::fs::read_dir(dir) else { return Ok(out) };
    let mut paths: Vec<_> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    for path in paths {
        let text = std::fs::read_to_string(&path).map_err(|e| RenderError::Preset(format!("{}: {e}", path.display())))?;
        let preset: TfPreset =
            serde_json::from_str(&text).map_err(|e| RenderError::Preset(format!("{}: {e}", path.display())))?;
        preset.transfer_function()?;
        out.insert(preset.name.clone(), preset);
    }
    Ok(out)
}

pub fn save_preset(dir: &Path, preset: &TfPreset) -> Result<std::path::PathBuf, RenderError> {
    preset.transfer_function()?;
    let safe = !preset.name.is_empty()
        && preset.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
    if !safe {
        return Err(RenderError::Preset(format!("preset name {:?} is not a safe file name", preset.name)));
    }
    std::fs::create_dir_all(dir).map_err(|e| RenderError::Preset(e.to_string()))?;
    let path = dir.join(format!("{}.json", preset.name));
    let json = serde_json::to_string_pretty(preset).expect("preset serializes");
    std::fs::write(&path, json).map_err(|e| RenderError::Preset(e.to_string()))?;
    Ok(path)
}
