//! End-to-end runs driven by a [`RunConfig`]: each `cmd_*` computes one
//! stage, writes its artifacts (JSON, CSV, PGM) to the output directory and
//! returns a JSON summary. Every artifact embeds the full configuration, and
//! identical configurations reproduce identical bytes.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::corpus::{default_corpus, generate, support_box, CorpusSpec};
use crate::error::{Error, Result};
use crate::extension::{extend_full, ExtensionEngine, ExtensionOptions, ExtensionReport, RatioStatus};
use crate::fattening::{fatten, separation_ratio, verify_fattened_itc, FattenedDomain};
use crate::geometry::{AnalyticRegion, FractionalParams, GeometryConfig, Region};
use crate::grid::{CellMask, GridFunction, Window};
use crate::io::{pgm_heatmap, pgm_mask};
use crate::norms::{hardy_norm, lp_norm, seminorm_wsp};
use crate::thickness::{check_degenerate_itc, check_itc_in, ItcOptions};
use crate::whitney::{verify_whitney, whitney_decompose, whitney_decompose_shared};

/// Everything a run depends on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub geometry: GeometryConfig,
    pub s: f64,
    pub p: f64,
    pub seed: u64,
    /// Monte-Carlo points per ball.
    pub mc_samples: usize,
    pub centers: usize,
    pub radii: usize,
    /// ITC pass threshold for O.
    pub threshold: f64,
    /// ITC pass threshold for the fattened domain.
    pub fattened_threshold: f64,
    /// Pass threshold of the degenerate check.
    pub degenerate_threshold: f64,
    /// Sampled pairs of the separation check.
    pub pairs: usize,
    /// Corpus family used by `norms` and `extend`.
    pub family: String,
    pub extension: ExtensionOptions,
    /// Fail with a contract violation when a certification does not pass.
    pub expect_pass: bool,
    pub output_dir: PathBuf,
    pub threads: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            geometry: GeometryConfig::builtin("cusp_touching_halfplane", 8),
            s: 0.5,
            p: 2.0,
            seed: 0,
            mc_samples: 10_000,
            centers: 200,
            radii: 20,
            threshold: 0.05,
            fattened_threshold: 0.02,
            degenerate_threshold: 0.1,
            pairs: 100_000,
            family: "hardy_power".into(),
            extension: ExtensionOptions::default(),
            expect_pass: false,
            output_dir: PathBuf::from("out"),
            threads: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn level(&self) -> u32 {
        self.geometry.resolution_level
    }

    pub fn region(&self) -> Result<AnalyticRegion> {
        self.geometry.build()
    }

    pub fn params(&self, dim: usize) -> Result<FractionalParams> {
        FractionalParams::new(self.s, self.p, dim)
    }

    pub fn itc_options(&self, level: u32, threshold: f64) -> ItcOptions {
        ItcOptions {
            centers: self.centers,
            radii: self.radii,
            n_mc: self.mc_samples,
            seed: self.seed,
            ..ItcOptions::for_level(level)
        }
        .with_threshold(threshold)
    }

    fn validate(&self) -> Result<()> {
        if self.mc_samples == 0 || self.centers == 0 || self.radii == 0 || self.pairs == 0 {
            return Err(Error::Config("sample counts must be positive".into()));
        }
        for (name, t) in [
            ("threshold", self.threshold),
            ("fattened_threshold", self.fattened_threshold),
            ("degenerate_threshold", self.degenerate_threshold),
        ] {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::Config(format!("{name} must lie in [0, 1]")));
            }
        }
        let e = &self.extension;
        if !(e.reflection_factor > 0.0 && e.dilation > 1.0 && e.far_field_diam > 0.0) {
            return Err(Error::Config("extension constants out of range".into()));
        }
        Ok(())
    }

    /// Single-line JSON of the configuration, embedded in every artifact.
    pub fn header(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

struct Output<'a> {
    cfg: &'a RunConfig,
}

impl<'a> Output<'a> {
    fn new(cfg: &'a RunConfig) -> Result<Self> {
        cfg.validate()?;
        fs::create_dir_all(&cfg.output_dir)?;
        Ok(Output { cfg })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.cfg.output_dir.join(name)
    }

    fn json(&self, name: &str, body: Value) -> Result<Value> {
        let mut doc = json!({ "config": self.cfg });
        if let (Value::Object(d), Value::Object(b)) = (&mut doc, body) {
            d.extend(b);
        }
        fs::write(self.path(name), serde_json::to_string_pretty(&doc)? + "\n")?;
        Ok(doc)
    }

    fn csv(&self, name: &str, body: &str) -> Result<()> {
        let body = body.strip_prefix('#').map_or(body.to_string(), |rest| format!("#{rest}"));
        fs::write(self.path(name), format!("# {}\n{body}", self.cfg.header()))?;
        Ok(())
    }

    fn pgm(&self, name: &str, bytes: Result<Vec<u8>>) -> Result<()> {
        match bytes {
            Ok(b) => Ok(fs::write(self.path(name), b)?),
            // rasters exist for planar geometries only
            Err(Error::InvalidParams(_)) => Ok(()),
            Err(e) => Err(e),
        }
    }
}

fn fattened(g: &AnalyticRegion) -> Result<FattenedDomain> {
    let w = whitney_decompose_shared(Arc::new(g.n_cloud().clone()), g.bbox(), g.level() as i32)?;
    fatten(g, Arc::new(w))
}

fn contract(cfg: &RunConfig, pass: bool, what: &str) -> Result<()> {
    if cfg.expect_pass && !pass {
        return Err(Error::Contract(format!("{what} did not pass")));
    }
    Ok(())
}

/// Whitney decomposition of the complement of `cl(N)` with its invariants.
pub fn cmd_decompose(cfg: &RunConfig) -> Result<Value> {
    let out = Output::new(cfg)?;
    let g = cfg.region()?;
    let w = whitney_decompose(g.n_cloud(), g.bbox(), g.level() as i32)?;
    let report = verify_whitney(&w);
    out.csv("whitney.csv", &w.to_csv())?;
    out.json("decompose.json", json!({ "whitney": report }))
}

/// ITC of O at points of N.
pub fn cmd_check_itc(cfg: &RunConfig) -> Result<Value> {
    let out = Output::new(cfg)?;
    let g = cfg.region()?;
    let report = check_itc_in(&g, g.n_cloud(), &cfg.itc_options(g.level(), cfg.threshold))?;
    out.csv("itc_samples.csv", &report.to_csv())?;
    let doc = out.json("check_itc.json", json!({ "itc_in_n": report.summary() }))?;
    contract(cfg, report.verdict.passed(), "ITC in N")?;
    Ok(doc)
}

/// Degenerate ITC against plain ITC-in-N.
pub fn cmd_check_degenerate(cfg: &RunConfig) -> Result<Value> {
    let out = Output::new(cfg)?;
    let g = cfg.region()?;
    let deg = check_degenerate_itc(&g, g.n_cloud(), g.d_cloud(), &cfg.itc_options(g.level(), cfg.degenerate_threshold))?;
    let plain = check_itc_in(&g, g.n_cloud(), &cfg.itc_options(g.level(), cfg.threshold))?;
    out.csv("degenerate_samples.csv", &deg.to_csv())?;
    let witness = deg.verdict.passed() && !plain.verdict.passed();
    let doc = out.json(
        "check_degenerate.json",
        json!({ "degenerate": deg.summary(), "itc_in_n": plain.summary(), "degenerate_only": witness }),
    )?;
    contract(cfg, deg.verdict.passed(), "degenerate ITC")?;
    Ok(doc)
}

fn fattening_artifacts(cfg: &RunConfig, out: &Output<'_>, fat: &FattenedDomain) -> Result<()> {
    out.csv("sigma.csv", &fat.sigma_csv())?;
    let ext = fat.extent();
    let w = Window::covering(&ext, fat.level());
    out.pgm("fattened_mask.pgm", pgm_mask(&CellMask::rasterize(fat, w), Some(&cfg.header())))
}

/// Fattening, pair separation and ITC of the fattened domain.
pub fn cmd_fatten(cfg: &RunConfig) -> Result<Value> {
    let out = Output::new(cfg)?;
    let g = cfg.region()?;
    let fat = fattened(&g)?;
    let sep = separation_ratio(&fat, cfg.pairs, cfg.seed)?;
    let itc = verify_fattened_itc(&fat, &cfg.itc_options(g.level(), cfg.fattened_threshold))?;
    fattening_artifacts(cfg, &out, &fat)?;
    let doc = out.json("fatten.json", json!({ "fattening": fat.summary(), "separation": sep, "fattened_itc": itc.summary() }))?;
    contract(cfg, itc.verdict.passed(), "ITC of the fattened domain")?;
    Ok(doc)
}

fn select_spec(cfg: &RunConfig, g: &AnalyticRegion) -> Result<CorpusSpec> {
    let params = cfg.params(g.dim())?;
    default_corpus(g, params, cfg.seed)
        .into_iter()
        .find(|s| s.family.name() == cfg.family)
        .ok_or_else(|| Error::Config(format!("unknown corpus family `{}`", cfg.family)))
}

/// Norms of one corpus function.
pub fn cmd_norms(cfg: &RunConfig) -> Result<Value> {
    let out = Output::new(cfg)?;
    let g = cfg.region()?;
    let spec = select_spec(cfg, &g)?;
    let f = generate(&spec, &g)?;
    let hardy = hardy_norm(&f, g.d_cloud());
    out.csv("function.csv", &f.to_csv())?;
    out.json(
        "norms.json",
        json!({ "function": spec, "seminorm": seminorm_wsp(&f)?, "lp": lp_norm(&f), "hardy": hardy }),
    )
}

fn extension_artifacts(cfg: &RunConfig, out: &Output<'_>, input: &GridFunction, e0: &GridFunction, output: &GridFunction) -> Result<()> {
    out.csv("input.csv", &input.to_csv())?;
    out.csv("zero_extended.csv", &e0.to_csv())?;
    out.csv("output.csv", &output.to_csv())?;
    out.pgm("output.pgm", pgm_heatmap(output, Some(&cfg.header())))
}

/// `Ext = E_W ∘ E₀` on one corpus function.
pub fn cmd_extend(cfg: &RunConfig) -> Result<Value> {
    let out = Output::new(cfg)?;
    let g = cfg.region()?;
    let spec = select_spec(cfg, &g)?;
    let f = generate(&spec, &g)?;
    let fat = fattened(&g)?;
    let res = extend_full(&f, &fat, cfg.extension)?;
    extension_artifacts(cfg, &out, &res.input, &res.zero_extended, &res.output)?;
    out.json("extension.json", json!({ "function": spec, "extension": res.report }))
}

/// One corpus function through the pipeline at one level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRow {
    pub level: u32,
    pub label: String,
    pub family: String,
    pub control: bool,
    pub report: ExtensionReport,
}

/// Corpus results at one level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRun {
    pub level: u32,
    pub rows: Vec<CorpusRow>,
    /// Largest ratio over the non-control functions.
    pub max_ratio: Option<f64>,
    pub all_finite: bool,
    pub splitting_holds: bool,
    pub lp_isometric: bool,
    pub max_restriction_deviation: f64,
}

/// Run the default corpus of `cfg`'s geometry through `extend_full` at
/// `level`, sharing one engine.
pub fn corpus_stage(cfg: &RunConfig, level: u32) -> Result<CorpusRun> {
    let g = cfg.region()?.at_level(level);
    let params = cfg.params(g.dim())?;
    let fat = fattened(&g)?;
    let mut engine = ExtensionEngine::new(&fat, &support_box(&g), cfg.extension)?;
    let mut rows = Vec::new();
    for spec in default_corpus(&g, params, cfg.seed) {
        let f = generate(&spec, &g)?;
        let res = engine.extend_full(&f)?;
        rows.push(CorpusRow {
            level,
            label: spec.label.clone(),
            family: spec.family.name().to_string(),
            control: spec.is_control(),
            report: res.report,
        });
    }
    let regular = rows.iter().filter(|r| !r.control);
    let all_finite = regular.clone().all(|r| r.report.status == RatioStatus::Finite);
    let max_ratio = regular.filter_map(|r| r.report.ratio).fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))));
    Ok(CorpusRun {
        level,
        max_ratio,
        all_finite,
        splitting_holds: rows.iter().all(|r| r.report.splitting.holds),
        lp_isometric: rows.iter().all(|r| r.report.zero_extension.lp_isometric),
        max_restriction_deviation: rows.iter().map(|r| r.report.restriction_deviation).fold(0.0, f64::max),
        rows,
    })
}

fn corpus_csv(runs: &[CorpusRun]) -> String {
    let mut s = String::from(
        "level,label,family,control,seminorm,lp,hardy,hardy_divergence_suspected,zero_ext_seminorm,cross,splitting_holds,out_seminorm,out_lp,ratio,status,restriction_deviation\n",
    );
    for run in runs {
        for r in &run.rows {
            let e = &r.report;
            let status = serde_json::to_value(e.status).expect("status serializes");
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                r.level,
                r.label,
                r.family,
                r.control,
                e.input_norms.seminorm,
                e.input_norms.lp,
                e.input_norms.hardy,
                e.input_norms.hardy_divergence_suspected,
                e.zero_extension.seminorm,
                e.splitting.cross,
                e.splitting.holds,
                e.output_norms.seminorm,
                e.output_norms.lp,
                e.ratio.map_or(String::new(), |v| v.to_string()),
                status.as_str().unwrap_or(""),
                e.restriction_deviation,
            ));
        }
    }
    s
}

/// Full run: certify ITC in N, fatten, certify the fattened domain, push the
/// corpus through `Ext` at levels `L − 1` and `L` and tabulate the ratios.
pub fn cmd_report(cfg: &RunConfig) -> Result<Value> {
    let out = Output::new(cfg)?;
    let g = cfg.region()?;
    let level = g.level();
    let itc_n = check_itc_in(&g, g.n_cloud(), &cfg.itc_options(level, cfg.threshold))?;
    let fat = fattened(&g)?;
    let sep = separation_ratio(&fat, cfg.pairs, cfg.seed)?;
    let fat_itc = verify_fattened_itc(&fat, &cfg.itc_options(level, cfg.fattened_threshold))?;
    fattening_artifacts(cfg, &out, &fat)?;
    let certification = json!({
        "itc_in_n": itc_n.summary(),
        "fattening": fat.summary(),
        "separation": sep,
        "fattened_itc": fat_itc.summary(),
    });
    if !fat_itc.verdict.passed() {
        out.json("report.json", json!({ "certification": certification, "corpus": Value::Null }))?;
        return Err(Error::Contract("the fattened domain fails ITC; the extension is not certified".into()));
    }
    let levels: Vec<u32> = if level > 1 { vec![level - 1, level] } else { vec![level] };
    let runs = levels.iter().map(|&l| corpus_stage(cfg, l)).collect::<Result<Vec<_>>>()?;
    out.csv("corpus.csv", &corpus_csv(&runs))?;
    let maxima: Vec<Option<f64>> = runs.iter().map(|r| r.max_ratio).collect();
    let stability = match (maxima.first().copied().flatten(), maxima.last().copied().flatten()) {
        (Some(a), Some(b)) if runs.len() == 2 => Some(a.max(b) / a.min(b)),
        _ => None,
    };
    let summary = json!({
        "levels": levels,
        "max_ratio": maxima,
        "stability_factor": stability,
        "stable_within_2x": stability.map(|f| f < 2.0),
        "all_finite": runs.iter().all(|r| r.all_finite),
        "splitting_holds": runs.iter().all(|r| r.splitting_holds),
        "lp_isometric": runs.iter().all(|r| r.lp_isometric),
        "max_restriction_deviation": runs.iter().map(|r| r.max_restriction_deviation).fold(0.0, f64::max),
    });
    out.json("report.json", json!({ "certification": certification, "summary": summary, "corpus": runs }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = RunConfig { s: 0.25, p: 0.5, seed: 9, threads: Some(2), ..RunConfig::default() };
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
        let partial = RunConfig::from_toml("s = 0.3\n[geometry]\nname = \"disk\"\nresolution_level = 5\n").unwrap();
        assert_eq!(partial.s, 0.3);
        assert_eq!(partial.level(), 5);
        assert!(matches!(RunConfig::from_toml("bogus = 1"), Err(Error::Config(_))));
    }

    #[test]
    fn invalid_settings_are_config_errors() {
        let dir = tempfile::tempdir().unwrap();
        let bad = RunConfig { threshold: 1.5, output_dir: dir.path().into(), ..RunConfig::default() };
        assert_eq!(cmd_decompose(&bad).unwrap_err().exit_code(), 3);
        let bad_p = RunConfig { p: 0.0, output_dir: dir.path().into(), ..RunConfig::default() };
        assert_eq!(cmd_norms(&bad_p).unwrap_err().exit_code(), 3);
        let bad_family = RunConfig { family: "nope".into(), output_dir: dir.path().into(), ..RunConfig::default() };
        assert_eq!(cmd_norms(&bad_family).unwrap_err().exit_code(), 3);
    }

    #[test]
    fn artifacts_embed_the_config() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig {
            geometry: GeometryConfig::builtin("interval_with_endpoint_D", 6),
            output_dir: dir.path().into(),
            ..RunConfig::default()
        };
        let doc = cmd_norms(&cfg).unwrap();
        assert_eq!(doc["config"]["s"], 0.5);
        let csv = fs::read_to_string(dir.path().join("function.csv")).unwrap();
        assert!(csv.starts_with(&format!("# {}\n", cfg.header())));
        let json: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("norms.json")).unwrap()).unwrap();
        assert_eq!(serde_json::from_value::<RunConfig>(json["config"].clone()).unwrap(), cfg);
    }
}
