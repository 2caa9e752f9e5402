use std::collections::BTreeMap;

use super::{CampaignConfig, CampaignInputs, CampaignResult, Cell, Engine};
use crate::error::{Error, Result};
use crate::inject::InjectorRegistry;

/// A campaign protocol.
pub trait CampaignMode: Send + Sync {
    fn name(&self) -> &'static str;

    /// Whether the mode needs a labelled dataset.
    fn needs_dataset(&self) -> bool {
        false
    }

    fn run(
        &self,
        cfg: &CampaignConfig,
        inputs: CampaignInputs<'_>,
        injectors: &InjectorRegistry,
    ) -> Result<CampaignResult>;
}

fn plain(
    cfg: &CampaignConfig,
    inputs: CampaignInputs<'_>,
    injectors: &InjectorRegistry,
    cells: Vec<Cell>,
    with_accuracy: bool,
) -> Result<CampaignResult> {
    let engine = Engine::new(cfg, inputs, injectors)?;
    let baseline = if with_accuracy {
        engine.dataset()?;
        engine.baseline_accuracy()?
    } else {
        None
    };
    let mut done = Vec::with_capacity(cells.len());
    for (i, cell) in cells.into_iter().enumerate() {
        let ms = engine.measure(&cell.spec, with_accuracy)?;
        let recs = engine.records(i, &cell, &ms);
        done.push((cell, recs));
    }
    Ok(engine.finish(baseline, done))
}

fn grid_cells(cfg: &CampaignConfig, threshold: f64) -> Vec<Cell> {
    cfg.grid
        .iter()
        .map(|spec| Cell {
            spec: spec.clone(),
            threshold,
            offset: None,
        })
        .collect()
}

fn stored_threshold(inputs: &CampaignInputs<'_>) -> Result<f64> {
    inputs.btv.threshold().ok_or_else(|| {
        Error::contract("the test vector has no calibrated threshold; calibrate it first")
    })
}

/// Plain coverage per grid cell.
pub struct Coverage;

impl CampaignMode for Coverage {
    fn name(&self) -> &'static str {
        "coverage"
    }

    fn run(
        &self,
        cfg: &CampaignConfig,
        inputs: CampaignInputs<'_>,
        injectors: &InjectorRegistry,
    ) -> Result<CampaignResult> {
        let t = stored_threshold(&inputs)?;
        plain(cfg, inputs, injectors, grid_cells(cfg, t), inputs.dataset.is_some())
    }
}

/// Coverage that also requires an accuracy loss.
pub struct Verifiable;

impl CampaignMode for Verifiable {
    fn name(&self) -> &'static str {
        "verifiable"
    }

    fn needs_dataset(&self) -> bool {
        true
    }

    fn run(
        &self,
        cfg: &CampaignConfig,
        inputs: CampaignInputs<'_>,
        injectors: &InjectorRegistry,
    ) -> Result<CampaignResult> {
        if inputs.dataset.is_none() {
            return Err(Error::Config("mode `verifiable` needs a dataset".into()));
        }
        let t = stored_threshold(&inputs)?;
        plain(cfg, inputs, injectors, grid_cells(cfg, t), true)
    }
}

/// Every template crossed with every layer fraction.
pub struct Layerwise;

impl CampaignMode for Layerwise {
    fn name(&self) -> &'static str {
        "layerwise"
    }

    fn run(
        &self,
        cfg: &CampaignConfig,
        inputs: CampaignInputs<'_>,
        injectors: &InjectorRegistry,
    ) -> Result<CampaignResult> {
        if cfg.layer_fractions.is_empty() {
            return Err(Error::Config("layerwise mode needs layer_fractions".into()));
        }
        let t = stored_threshold(&inputs)?;
        let mut cells = Vec::new();
        for spec in &cfg.grid {
            for &f in &cfg.layer_fractions {
                let spec = spec.clone().layer_fraction(f);
                spec.validate()?;
                cells.push(Cell {
                    spec,
                    threshold: t,
                    offset: None,
                });
            }
        }
        plain(cfg, inputs, injectors, cells, inputs.dataset.is_some())
    }
}

/// One cell judged against `clean_sigma + offset` for each offset.
///
/// σ_y of each run does not depend on the threshold, so the cell is measured
/// once and re-thresholded per offset.
pub struct OffsetSweep;

impl CampaignMode for OffsetSweep {
    fn name(&self) -> &'static str {
        "offset_sweep"
    }

    fn run(
        &self,
        cfg: &CampaignConfig,
        inputs: CampaignInputs<'_>,
        injectors: &InjectorRegistry,
    ) -> Result<CampaignResult> {
        if cfg.offsets.is_empty() {
            return Err(Error::Config("offset_sweep needs offsets".into()));
        }
        if cfg.offsets.iter().any(|o| !(*o >= 0.0 && o.is_finite())) {
            return Err(Error::contract("threshold offsets must be finite and ≥ 0"));
        }
        if cfg.offsets.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Config("offsets must be sorted ascending".into()));
        }
        let spec = cfg.grid.get(cfg.sweep_cell).ok_or_else(|| {
            Error::Config(format!(
                "sweep_cell {} outside a grid of {} cells",
                cfg.sweep_cell,
                cfg.grid.len()
            ))
        })?;
        let engine = Engine::new(cfg, inputs, injectors)?;
        let with_accuracy = inputs.dataset.is_some();
        let baseline = engine.baseline_accuracy()?;
        let ms = engine.measure(spec, with_accuracy)?;
        let clean = inputs.btv.clean_sigma();
        let cells = cfg
            .offsets
            .iter()
            .enumerate()
            .map(|(i, &o)| {
                let cell = Cell {
                    spec: spec.clone(),
                    threshold: clean + o,
                    offset: Some(o),
                };
                let recs = engine.records(i, &cell, &ms);
                (cell, recs)
            })
            .collect();
        Ok(engine.finish(baseline, cells))
    }
}

/// Campaign modes by name.
pub struct ModeRegistry {
    modes: BTreeMap<&'static str, Box<dyn CampaignMode>>,
}

impl ModeRegistry {
    pub fn empty() -> Self {
        ModeRegistry {
            modes: BTreeMap::new(),
        }
    }

    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(Coverage));
        r.register(Box::new(Verifiable));
        r.register(Box::new(Layerwise));
        r.register(Box::new(OffsetSweep));
        r
    }

    pub fn register(&mut self, mode: Box<dyn CampaignMode>) -> Option<Box<dyn CampaignMode>> {
        self.modes.insert(mode.name(), mode)
    }

    pub fn get(&self, name: &str) -> Result<&dyn CampaignMode> {
        self.modes.get(name).map(|m| m.as_ref()).ok_or_else(|| {
            Error::Config(format!(
                "unknown campaign mode `{name}` (known: {})",
                self.names().collect::<Vec<_>>().join(", ")
            ))
        })
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.modes.keys().copied()
    }

    /// Runs the mode named in `cfg.mode`.
    pub fn run(
        &self,
        cfg: &CampaignConfig,
        inputs: CampaignInputs<'_>,
        injectors: &InjectorRegistry,
    ) -> Result<CampaignResult> {
        self.get(&cfg.mode)?.run(cfg, inputs, injectors)
    }
}

impl Default for ModeRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}
