//! Scenario configuration: one JSON document, schema `hidden-reach/1`.
//!
//! Matrices are row-major nested arrays. Every validation error names the
//! offending key as a dotted path.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::calibration::{AttackMoments, QuantileMethod};
use crate::error::{Error, Result};
use crate::linalg::{from_rows, Mat, Vector};
use crate::model::{ObserverDesign, SystemModel, Tolerances};
use crate::reach::{BGrid, SynthesisSettings};
use crate::sdp::SolverSettings;
use crate::sim::{ClipMode, SimConfig, Strategy};

pub const SCHEMA: &str = "hidden-reach/1";

pub type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub system: SystemBlock,
    #[serde(default)]
    pub observer: ObserverBlock,
    #[serde(default)]
    pub detector: DetectorBlock,
    #[serde(default)]
    pub solver: SolverBlock,
    #[serde(default)]
    pub sim: SimBlock,
    #[serde(default)]
    pub output: OutputBlock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemBlock {
    #[serde(rename = "F")]
    pub f: Rows,
    #[serde(rename = "G")]
    pub g: Rows,
    #[serde(rename = "C")]
    pub c: Rows,
    #[serde(rename = "R0")]
    pub r0: Rows,
    #[serde(rename = "R1")]
    pub r1: Rows,
    #[serde(rename = "R2")]
    pub r2: Rows,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ObserverBlock {
    /// Fixed observer gain (n×m).
    #[serde(rename = "L", default, skip_serializing_if = "Option::is_none")]
    pub l: Option<Rows>,
    /// Redesign request; the fixed `L` (if any) becomes the baseline.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthesize: Option<SynthesizeBlock>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesizeBlock {
    pub gamma: f64,
    pub false_alarm: f64,
    #[serde(default)]
    pub search: SynthesisSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorBlock {
    /// Case-1 false-alarm rates.
    pub false_alarm: Vec<f64>,
    pub case2: Option<Case2Block>,
    pub quantile: QuantileMethod,
}

impl Default for DetectorBlock {
    fn default() -> Self {
        Self { false_alarm: Vec::new(), case2: None, quantile: QuantileMethod::Exact }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Case2Block {
    pub false_alarm: f64,
    pub a_p: Vec<f64>,
    /// Attack mean and second moment; default to the attack-free `0` and `I`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub second_moment: Option<Rows>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverBlock {
    /// Contraction-rate grid; `None` means the default 102-point grid.
    pub b_grid: Option<Vec<f64>>,
    pub refine: bool,
    #[serde(flatten)]
    pub settings: SolverSettings,
    pub tolerances: Tolerances,
}

impl Default for SolverBlock {
    fn default() -> Self {
        Self { b_grid: None, refine: true, settings: SolverSettings::default(), tolerances: Tolerances::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimBlock {
    pub horizon: usize,
    pub trials: usize,
    /// Missing seed falls back to 0 with a notice.
    pub seed: Option<u64>,
    pub strategy: Strategy,
    pub clip: ClipMode,
    pub warmup: usize,
    pub noise_candidates: usize,
    /// Detector rate the simulation runs at; defaults to the first Case-1 rate.
    pub false_alarm: Option<f64>,
    /// Run the containment stress test against every computed bound.
    pub containment: bool,
    pub containment_trials: usize,
    pub containment_horizon: usize,
}

impl Default for SimBlock {
    fn default() -> Self {
        let d = SimConfig::default();
        Self {
            horizon: d.horizon,
            trials: d.trials,
            seed: None,
            strategy: d.strategy,
            clip: d.clip,
            warmup: d.warmup,
            noise_candidates: d.noise_candidates,
            false_alarm: None,
            containment: false,
            containment_trials: 1000,
            containment_horizon: 1000,
        }
    }
}

impl SimBlock {
    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            horizon: self.horizon,
            trials: self.trials,
            seed: self.seed.unwrap_or(0),
            strategy: self.strategy,
            clip: self.clip,
            warmup: self.warmup,
            noise_candidates: self.noise_candidates,
        }
    }

    pub fn containment_config(&self) -> SimConfig {
        SimConfig { horizon: self.containment_horizon, trials: self.containment_trials, ..self.sim_config() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
    Svg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputBlock {
    pub directory: String,
    pub formats: Vec<Format>,
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self { directory: "out".into(), formats: vec![Format::Json, Format::Csv, Format::Svg] }
    }
}

impl OutputBlock {
    pub fn wants(&self, f: Format) -> bool {
        self.formats.contains(&f)
    }
}

fn matrix(path: &str, rows: &Rows) -> Result<Mat> {
    if rows.is_empty() || rows[0].is_empty() {
        return Err(Error::config(path, "matrix must be non-empty"));
    }
    let cols = rows[0].len();
    if let Some(i) = rows.iter().position(|r| r.len() != cols) {
        return Err(Error::config(format!("{path}[{i}]"), format!("expected {cols} entries like row 0")));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::config(path, "entries must be finite"));
    }
    from_rows(rows).map_err(|e| Error::config(path, e.to_string()))
}

fn shape(path: &str, m: &Mat, rows: usize, cols: usize) -> Result<()> {
    if m.shape() != (rows, cols) {
        return Err(Error::config(
            path,
            format!("expected {rows}×{cols}, got {}×{}", m.nrows(), m.ncols()),
        ));
    }
    Ok(())
}

fn rate(path: String, a: f64) -> Result<()> {
    if a > 0.0 && a < 1.0 {
        Ok(())
    } else {
        Err(Error::config(path, format!("false-alarm rate must lie in (0,1), got {a}")))
    }
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig =
            serde_json::from_str(text).map_err(|e| Error::config("<root>", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Structural checks with key paths; numerical checks (PSD, stability)
    /// happen when the model is built.
    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA {
            return Err(Error::config("schema", format!("expected \"{SCHEMA}\", got \"{}\"", self.schema)));
        }
        let s = &self.system;
        let f = matrix("system.F", &s.f)?;
        let n = f.nrows();
        shape("system.F", &f, n, n)?;
        let c = matrix("system.C", &s.c)?;
        let m = c.nrows();
        shape("system.C", &c, m, n)?;
        let g = matrix("system.G", &s.g)?;
        if g.nrows() != n {
            return Err(Error::config("system.G", format!("expected {n} rows, got {}", g.nrows())));
        }
        shape("system.R0", &matrix("system.R0", &s.r0)?, n, n)?;
        shape("system.R1", &matrix("system.R1", &s.r1)?, n, n)?;
        shape("system.R2", &matrix("system.R2", &s.r2)?, m, m)?;
        if let Some(l) = &self.observer.l {
            shape("observer.L", &matrix("observer.L", l)?, n, m)?;
        }
        if let Some(syn) = &self.observer.synthesize {
            if !(syn.gamma > 0.0) {
                return Err(Error::config("observer.synthesize.gamma", "γ must be positive"));
            }
            rate("observer.synthesize.false_alarm".into(), syn.false_alarm)?;
        }
        for (i, &a) in self.detector.false_alarm.iter().enumerate() {
            rate(format!("detector.false_alarm[{i}]"), a)?;
        }
        if let Some(c2) = &self.detector.case2 {
            rate("detector.case2.false_alarm".into(), c2.false_alarm)?;
            for (i, &ap) in c2.a_p.iter().enumerate() {
                if !(ap > 0.0 && ap < c2.false_alarm) {
                    return Err(Error::config(
                        format!("detector.case2.a_p[{i}]"),
                        format!("a_p must lie in (0, {}), got {ap}", c2.false_alarm),
                    ));
                }
            }
            if let Some(mu) = &c2.mean {
                if mu.len() != m {
                    return Err(Error::config("detector.case2.mean", format!("expected {m} entries")));
                }
            }
            if let Some(sm) = &c2.second_moment {
                shape("detector.case2.second_moment", &matrix("detector.case2.second_moment", sm)?, m, m)?;
            }
        }
        if let Some(grid) = &self.solver.b_grid {
            if let Some(i) = grid.iter().position(|&b| !(b > 0.0 && b < 1.0)) {
                return Err(Error::config(format!("solver.b_grid[{i}]"), "b must lie in (0,1)"));
            }
        }
        if self.sim.horizon == 0 || self.sim.trials == 0 {
            return Err(Error::config("sim", "horizon and trials must be at least 1"));
        }
        if self.sim.warmup >= self.sim.horizon {
            return Err(Error::config("sim.warmup", "warmup must be shorter than the horizon"));
        }
        if let Some(a) = self.sim.false_alarm {
            rate("sim.false_alarm".into(), a)?;
        }
        Ok(())
    }

    pub fn model(&self) -> Result<SystemModel> {
        let s = &self.system;
        SystemModel::with_tolerances(
            matrix("system.F", &s.f)?,
            matrix("system.G", &s.g)?,
            matrix("system.C", &s.c)?,
            matrix("system.R0", &s.r0)?,
            matrix("system.R1", &s.r1)?,
            matrix("system.R2", &s.r2)?,
            &self.solver.tolerances,
        )
    }

    /// The fixed observer, if the config provides one.
    pub fn observer(&self, model: &SystemModel) -> Result<Option<ObserverDesign>> {
        self.observer
            .l
            .as_ref()
            .map(|l| ObserverDesign::with_tolerances(matrix("observer.L", l)?, model, &self.solver.tolerances))
            .transpose()
    }

    pub fn require_observer(&self, model: &SystemModel) -> Result<ObserverDesign> {
        self.observer(model)?.ok_or_else(|| Error::config("observer.L", "this command needs a fixed observer gain"))
    }

    pub fn b_grid(&self) -> Result<BGrid> {
        match &self.solver.b_grid {
            Some(points) => BGrid::new(points.clone(), self.solver.refine),
            None => Ok(BGrid { refine: self.solver.refine, ..BGrid::default() }),
        }
    }

    pub fn case2_moments(&self, m: usize) -> Result<AttackMoments> {
        let Some(c2) = &self.detector.case2 else {
            return Ok(AttackMoments::standard(m));
        };
        let mean = c2.mean.clone().map(Vector::from_vec).unwrap_or_else(|| Vector::zeros(m));
        let second = match &c2.second_moment {
            Some(rows) => matrix("detector.case2.second_moment", rows)?,
            None => Mat::identity(m, m),
        };
        AttackMoments::new(mean, second)
    }
}
