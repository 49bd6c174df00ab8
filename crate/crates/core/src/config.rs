//! Hardware parameters and the on-disk configuration file.
//!
//! The configuration file is TOML. Top-level keys carry every
//! [`AcceleratorConfig`] field plus the decoder parameters; the optional
//! `[cost]` and `[frontend]` tables override the instruction costs and the
//! feature-extraction parameters. Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cost::CostTable;
use crate::error::{Error, Result};
use crate::frontend::FrontendParams;
use crate::hypothesis::MergePolicy;

pub const KIB: u64 = 1024;
pub const MIB: u64 = 1024 * 1024;

/// Accelerator hardware parameters. The default is the reference
/// low-power configuration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcceleratorConfig {
    pub frequency_hz: u64,
    pub num_pes: usize,
    pub mac_width: usize,
    pub shared_mem_bytes: u64,
    pub model_mem_bytes: u64,
    pub hyp_mem_bytes: u64,
    pub pe_dcache_bytes: u64,
    pub pe_icache_bytes: u64,
    /// DMA bandwidth from external memory into model memory.
    pub dma_bytes_per_cycle: u64,
    /// Line size of the model memory when it operates as an LRU cache.
    pub cache_line_bytes: u64,
}

impl Default for AcceleratorConfig {
    fn default() -> Self {
        Self {
            frequency_hz: 500_000_000,
            num_pes: 8,
            mac_width: 8,
            shared_mem_bytes: 512 * KIB,
            model_mem_bytes: MIB,
            hyp_mem_bytes: 24 * KIB,
            pe_dcache_bytes: 24 * KIB,
            pe_icache_bytes: 4 * KIB,
            dma_bytes_per_cycle: 8,
            cache_line_bytes: 64,
        }
    }
}

impl AcceleratorConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("frequency_hz", self.frequency_hz),
            ("num_pes", self.num_pes as u64),
            ("mac_width", self.mac_width as u64),
            ("shared_mem_bytes", self.shared_mem_bytes),
            ("model_mem_bytes", self.model_mem_bytes),
            ("hyp_mem_bytes", self.hyp_mem_bytes),
            ("pe_dcache_bytes", self.pe_dcache_bytes),
            ("pe_icache_bytes", self.pe_icache_bytes),
            ("dma_bytes_per_cycle", self.dma_bytes_per_cycle),
            ("cache_line_bytes", self.cache_line_bytes),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("`{name}` must be positive")));
        }
        if !self.mac_width.is_power_of_two() {
            return Err(Error::Config(format!(
                "`mac_width` must be a power of two, got {}",
                self.mac_width
            )));
        }
        Ok(())
    }
}

/// Decoder search parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchParams {
    pub beam_width: f64,
    pub lm_weight: f64,
    pub word_penalty: f64,
    pub merge: MergePolicy,
}

impl Default for SearchParams {
    fn default() -> Self {
        Self {
            beam_width: 10.0,
            lm_weight: 1.0,
            word_penalty: 0.0,
            merge: MergePolicy::Max,
        }
    }
}

/// Everything read from a configuration file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Settings {
    pub accelerator: AcceleratorConfig,
    pub search: SearchParams,
    pub costs: CostTable,
    pub frontend: FrontendParams,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SettingsFile {
    frequency_hz: Option<u64>,
    num_pes: Option<usize>,
    mac_width: Option<usize>,
    shared_mem_bytes: Option<u64>,
    model_mem_bytes: Option<u64>,
    hyp_mem_bytes: Option<u64>,
    pe_dcache_bytes: Option<u64>,
    pe_icache_bytes: Option<u64>,
    dma_bytes_per_cycle: Option<u64>,
    cache_line_bytes: Option<u64>,
    beam_width: Option<f64>,
    lm_weight: Option<f64>,
    word_penalty: Option<f64>,
    merge: Option<MergePolicy>,
    cost: Option<CostTable>,
    frontend: Option<FrontendParams>,
}

impl Settings {
    pub fn parse(text: &str) -> Result<Self> {
        let file: SettingsFile =
            toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        let d = AcceleratorConfig::default();
        let s = SearchParams::default();
        let settings = Settings {
            accelerator: AcceleratorConfig {
                frequency_hz: file.frequency_hz.unwrap_or(d.frequency_hz),
                num_pes: file.num_pes.unwrap_or(d.num_pes),
                mac_width: file.mac_width.unwrap_or(d.mac_width),
                shared_mem_bytes: file.shared_mem_bytes.unwrap_or(d.shared_mem_bytes),
                model_mem_bytes: file.model_mem_bytes.unwrap_or(d.model_mem_bytes),
                hyp_mem_bytes: file.hyp_mem_bytes.unwrap_or(d.hyp_mem_bytes),
                pe_dcache_bytes: file.pe_dcache_bytes.unwrap_or(d.pe_dcache_bytes),
                pe_icache_bytes: file.pe_icache_bytes.unwrap_or(d.pe_icache_bytes),
                dma_bytes_per_cycle: file.dma_bytes_per_cycle.unwrap_or(d.dma_bytes_per_cycle),
                cache_line_bytes: file.cache_line_bytes.unwrap_or(d.cache_line_bytes),
            },
            search: SearchParams {
                beam_width: file.beam_width.unwrap_or(s.beam_width),
                lm_weight: file.lm_weight.unwrap_or(s.lm_weight),
                word_penalty: file.word_penalty.unwrap_or(s.word_penalty),
                merge: file.merge.unwrap_or(s.merge),
            },
            costs: file.cost.unwrap_or_default(),
            frontend: file.frontend.unwrap_or_default(),
        };
        settings.validate()?;
        Ok(settings)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.accelerator.validate()?;
        self.costs.validate().map_err(Error::Config)?;
        self.frontend.validate().map_err(Error::Config)?;
        if !(self.search.beam_width >= 0.0) {
            return Err(Error::Config("`beam_width` must be non-negative".into()));
        }
        if !(self.search.lm_weight >= 0.0) {
            return Err(Error::Config("`lm_weight` must be non-negative".into()));
        }
        if !self.search.word_penalty.is_finite() {
            return Err(Error::Config("`word_penalty` must be finite".into()));
        }
        Ok(())
    }

    /// Renders the settings in the configuration-file format.
    pub fn to_toml(&self) -> String {
        #[derive(Serialize)]
        struct Out<'a> {
            #[serde(flatten)]
            accelerator: &'a AcceleratorConfig,
            beam_width: f64,
            lm_weight: f64,
            word_penalty: f64,
            merge: MergePolicy,
            cost: &'a CostTable,
            frontend: &'a FrontendParams,
        }
        toml::to_string(&Out {
            accelerator: &self.accelerator,
            beam_width: self.search.beam_width,
            lm_weight: self.search.lm_weight,
            word_penalty: self.search.word_penalty,
            merge: self.search.merge,
            cost: &self.costs,
            frontend: &self.frontend,
        })
        .expect("settings serialise")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_reference_configuration() {
        let c = AcceleratorConfig::default();
        assert_eq!(c.frequency_hz, 500_000_000);
        assert_eq!(c.num_pes, 8);
        assert_eq!(c.mac_width, 8);
        assert_eq!(c.shared_mem_bytes, 524_288);
        assert_eq!(c.model_mem_bytes, 1_048_576);
        assert_eq!(c.hyp_mem_bytes, 24_576);
        assert_eq!(c.pe_dcache_bytes, 24_576);
        assert_eq!(c.pe_icache_bytes, 4_096);
        c.validate().unwrap();
    }

    #[test]
    fn parse_overrides_and_round_trip() {
        let s = Settings::parse(
            "num_pes = 16\nbeam_width = 12.5\nword_penalty = -1.0\n[cost]\nmac = 2\n",
        )
        .unwrap();
        assert_eq!(s.accelerator.num_pes, 16);
        assert_eq!(s.search.beam_width, 12.5);
        assert_eq!(s.costs.mac, 2);
        assert_eq!(s.costs.add, 1);
        let again = Settings::parse(&s.to_toml()).unwrap();
        assert_eq!(again, s);
    }

    #[test]
    fn unknown_key_rejected() {
        let err = Settings::parse("num_pe = 4\n").unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
        assert!(Settings::parse("[cost]\nfoo = 1\n").is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(Settings::parse("mac_width = 6\n").is_err());
        assert!(Settings::parse("num_pes = 0\n").is_err());
        assert!(Settings::parse("beam_width = -1.0\n").is_err());
        assert!(Settings::parse("[cost]\nsfu = 0\n").is_err());
    }

    #[test]
    fn infinite_beam_accepted() {
        let s = Settings::parse("beam_width = inf\n").unwrap();
        assert!(s.search.beam_width.is_infinite());
    }
}
