//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Run with `cargo test -p fracext --test acceptance`.

use std::path::Path;
use std::sync::{Arc, OnceLock};
use std::time::Instant;

use fracext::corpus::{default_corpus, generate, support_box};
use fracext::extension::{linearity_defect, nonlinearity_witnesses, ExtensionEngine, ExtensionOptions};
use fracext::fattening::{fatten, separation_ratio, verify_fattened_itc, FattenedDomain};
use fracext::geometry::{builtin_geometry, AnalyticRegion, BBox, FractionalParams, Label, Region, BUILTIN_NAMES};
use fracext::grid::{CellMask, GridFunction, Window};
use fracext::norms::{hardy_kernel_integral, hardy_norm, kernel_constant, seminorm_wsp};
use fracext::pipeline::{cmd_report, corpus_stage, CorpusRun, RunConfig};
use rand::{Rng, SeedableRng};
use fracext::thickness::{check_degenerate_itc, check_itc_in, default_taus, boundary_interior_consistency, ItcOptions};
use fracext::whitney::{verify_whitney, whitney_decompose_shared, DyadicCube};

struct Outcome {
    id: u32,
    title: &'static str,
    pass: bool,
    detail: String,
}

fn fattened(g: &AnalyticRegion) -> FattenedDomain {
    let w = whitney_decompose_shared(Arc::new(g.n_cloud().clone()), g.bbox(), g.level() as i32).unwrap();
    fatten(g, Arc::new(w)).unwrap()
}

fn criterion_1() -> Outcome {
    let mut pass = true;
    let mut detail = Vec::new();
    for name in BUILTIN_NAMES {
        let g = builtin_geometry(name, 9).unwrap();
        let t = Instant::now();
        let w = whitney_decompose_shared(Arc::new(g.n_cloud().clone()), g.bbox(), 9).unwrap();
        let r = verify_whitney(&w);
        let secs = t.elapsed().as_secs_f64();
        let ok = r.disjointness
            && r.ratio_min >= 1.0
            && r.ratio_max <= 4.0
            && r.cover_defect_volume <= 0.5f64.powi(6) * g.bbox().volume()
            && secs <= 30.0;
        pass &= ok;
        detail.push(format!(
            "{name}: cubes={} ratio=[{:.3},{:.3}] defect={:.2e} {:.1}s",
            r.cube_count, r.ratio_min, r.ratio_max, r.cover_defect_volume, secs
        ));
    }
    Outcome { id: 1, title: "Whitney invariants", pass, detail: detail.join("; ") }
}

fn criterion_2() -> Outcome {
    let t = Instant::now();
    let opts = ItcOptions::for_level(9).with_seed(1);
    let hp = builtin_geometry("halfplane", 9).unwrap();
    let a = check_itc_in(&hp, hp.boundary_cloud(), &opts).unwrap().inf_density;
    let cusp = builtin_geometry("cusp_touching_halfplane", 9).unwrap();
    let b = check_itc_in(&cusp, cusp.n_cloud(), &opts).unwrap().inf_density;
    let fine = cusp.at_level(11);
    let biased = ItcOptions::for_level(11).with_seed(1).with_bias(fine.tip());
    let c = check_itc_in(&fine, fine.boundary_cloud(), &biased).unwrap().inf_density;
    let secs = t.elapsed().as_secs_f64();
    Outcome {
        id: 2,
        title: "Thickness calibration",
        pass: (a - 0.5).abs() <= 0.05 && b >= 0.45 && c <= 0.01 && secs <= 60.0,
        detail: format!("halfplane inf={a:.4}; cusp in N inf={b:.4}; cusp full boundary inf={c:.5}; {secs:.1}s"),
    }
}

fn criterion_3() -> Outcome {
    let mut pass = true;
    let mut detail = Vec::new();
    for name in BUILTIN_NAMES {
        let g = builtin_geometry(name, 9).unwrap();
        let opts = ItcOptions::for_level(9).with_seed(3).with_bias(g.tip());
        let r = boundary_interior_consistency(&g, g.boundary_cloud(), &opts, &default_taus()).unwrap();
        pass &= r.consistent;
        detail.push(format!("{name}: boundary={:.4} interior={:.4} {}", r.boundary_inf, r.interior_inf, r.consistent));
    }
    Outcome { id: 3, title: "Boundary/interior consistency", pass, detail: detail.join("; ") }
}

fn criterion_4() -> Outcome {
    let mut detail = Vec::new();
    let mut pass = true;
    for name in ["cusp_touching_halfplane", "exp_whitney_cusp"] {
        let g = builtin_geometry(name, 9).unwrap();
        let f = fattened(&g);
        let r = separation_ratio(&f, 100_000, 4).unwrap();
        let m = r.min_ratio.unwrap_or(f64::NAN);
        pass &= r.pairs == 100_000 && m >= 0.45;
        detail.push(format!("{name}: min_ratio={m:.4} over {} pairs", r.pairs));
    }
    // negative control: a cube reaching N, violating dist(Q, N) ≥ diam(Q)
    let g = builtin_geometry("cusp_touching_halfplane", 9).unwrap();
    let f = fattened(&g);
    let mut sigma = f.sigma().to_vec();
    sigma.push(DyadicCube::new(2, 0, &[-1, 0]));
    let bad = FattenedDomain::from_parts(g.clone(), Arc::new(f.whitney().clone()), sigma);
    let r = separation_ratio(&bad, 100_000, 4).unwrap();
    let m = r.min_ratio.unwrap_or(f64::NAN);
    pass &= m < 0.2;
    detail.push(format!("negative control: min_ratio={m:.4}"));
    Outcome { id: 4, title: "Fattening separation", pass, detail: detail.join("; ") }
}

fn criterion_5() -> Outcome {
    let t = Instant::now();
    let opts = ItcOptions::for_level(9).with_seed(5).with_threshold(0.02);
    let cusp = fattened(&builtin_geometry("cusp_touching_halfplane", 9).unwrap());
    let a = verify_fattened_itc(&cusp, &opts).unwrap();
    let exp = fattened(&builtin_geometry("exp_whitney_cusp", 9).unwrap());
    let b = verify_fattened_itc(&exp, &opts).unwrap();
    Outcome {
        id: 5,
        title: "Fattened-domain ITC",
        pass: a.verdict.passed() && !b.verdict.passed(),
        detail: format!(
            "cusp 𝑶 inf={:.4} ({:?}); exp 𝑶 inf={:.5} ({:?}); {:.1}s",
            a.inf_density,
            a.verdict,
            b.inf_density,
            b.verdict,
            t.elapsed().as_secs_f64()
        ),
    }
}

fn criterion_6() -> Outcome {
    let g = builtin_geometry("exp_whitney_cusp", 9).unwrap();
    let opts = ItcOptions::for_level(9).with_seed(6).with_threshold(0.1);
    let deg = check_degenerate_itc(&g, g.n_cloud(), g.d_cloud(), &opts).unwrap();
    let plain = check_itc_in(&g, g.n_cloud(), &opts).unwrap();
    Outcome {
        id: 6,
        title: "Degenerate ITC witness",
        pass: deg.inf_density >= 0.1 && !plain.verdict.passed(),
        detail: format!(
            "degenerate inf={:.4} (skipped {}); plain ITC-in-N inf={:.5}",
            deg.inf_density, deg.skipped_centers, plain.inf_density
        ),
    }
}

/// `f` sampled on O = (0, 1) with D = {0}, in a window carrying the unit
/// kernel range.
fn unit_interval(level: u32, f: impl Fn(f64) -> f64 + Sync) -> (AnalyticRegion, GridFunction) {
    let g = builtin_geometry("interval_with_endpoint_D", level).unwrap();
    let w = Window::covering(&BBox::new(1, &[-1.0], &[2.0]).unwrap(), level);
    let params = FractionalParams::new(0.5, 2.0, 1).unwrap();
    let f = GridFunction::sample(&g, CellMask::rasterize(&g, w), params, |x| f(x[0])).unwrap();
    (g, f)
}

fn criterion_7() -> Outcome {
    // [x]_{W^{1/2,2}(0,1)} = 1: every pair has |x − y| < 1 and the kernel cancels
    let errors: Vec<f64> = (6..=11).map(|l| (seminorm_wsp(&unit_interval(l, |x| x).1).unwrap() - 1.0).abs()).collect();
    let monotone = errors.windows(2).all(|e| e[1] < e[0]);
    let fine = errors[errors.len() - 1];
    let (g, lin) = unit_interval(11, |x| x);
    let hardy = hardy_norm(&lin, g.d_cloud());
    let target = 0.5f64.sqrt();
    let one = hardy_norm(&unit_interval(11, |_| 1.0).1, g.d_cloud());
    Outcome {
        id: 7,
        title: "Norm quadrature",
        pass: fine <= 0.03 && monotone && (hardy.norm - target).abs() <= 0.03 * target && !hardy.divergence_suspected && one.divergence_suspected,
        detail: format!(
            "seminorm errors L=6..11 {:?}; hardy(x)={:.5} vs {:.5}; hardy(1) flagged={}",
            errors.iter().map(|e| format!("{e:.2e}")).collect::<Vec<_>>(),
            hardy.norm,
            target,
            one.divergence_suspected
        ),
    }
}

/// Corpus runs on the cusp geometry, s = 1/2, for each p at L = 7 and 8.
fn corpus_runs() -> &'static Vec<(f64, CorpusRun, CorpusRun)> {
    static RUNS: OnceLock<Vec<(f64, CorpusRun, CorpusRun)>> = OnceLock::new();
    RUNS.get_or_init(|| {
        [0.5, 1.0, 2.0]
            .into_iter()
            .map(|p| {
                let cfg = RunConfig { p, ..RunConfig::default() };
                (p, corpus_stage(&cfg, 7).unwrap(), corpus_stage(&cfg, 8).unwrap())
            })
            .collect()
    })
}

fn criterion_8() -> Outcome {
    let runs = corpus_runs();
    let all = || runs.iter().flat_map(|(_, a, b)| [a, b]);
    let isometric = all().all(|r| r.lp_isometric);
    let splitting = all().all(|r| r.splitting_holds);
    let functions: usize = all().map(|r| r.rows.len()).sum();

    // kernel bound at probes x ∈ O near the tip, against the added region 𝑶 \ O
    let level = 8;
    let g = builtin_geometry("cusp_touching_halfplane", level).unwrap();
    let fat = fattened(&g);
    let params = FractionalParams::new(0.5, 2.0, 2).unwrap();
    let h = g.resolution();
    let w = Window::covering(&BBox::new(2, &[-1.3, -1.3], &[1.3, 1.3]).unwrap(), level);
    let added = CellMask::rasterize(&fat, w).minus(&CellMask::rasterize(&g, w)).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
    let c = kernel_constant(&params);
    let (mut probes, mut worst) = (0, 0.0f64);
    while probes < 100 {
        let x = [rng.gen_range(-0.25..0.25), rng.gen_range(-0.25..0.25), 0.0];
        let d = g.d_cloud().dist_to(&x).unwrap();
        if g.label(&x) != Label::InsideO || d <= h {
            continue;
        }
        probes += 1;
        worst = worst.max(hardy_kernel_integral(&x, &added, &params) / (c * d.powf(-params.sp())));
    }
    Outcome {
        id: 8,
        title: "Zero-extension contracts",
        pass: isometric && splitting && worst <= 1.0,
        detail: format!(
            "{functions} functions: lp isometric={isometric}, splitting={splitting}; kernel bound max ratio {worst:.4} over {probes} probes"
        ),
    }
}

fn criterion_9() -> Outcome {
    let mut pass = true;
    let mut detail = Vec::new();
    let runs = corpus_runs();
    let restriction = runs.iter().flat_map(|(_, a, b)| [a, b]).map(|r| r.max_restriction_deviation).fold(0.0, f64::max);
    pass &= restriction == 0.0;
    detail.push(format!("restriction deviation {restriction}"));

    let g = builtin_geometry("cusp_touching_halfplane", 7).unwrap();
    let fat = fattened(&g);
    let params = FractionalParams::new(0.5, 2.0, 2).unwrap();
    let corpus: Vec<GridFunction> = default_corpus(&g, params, 9).iter().map(|s| generate(s, &g).unwrap()).collect();
    let engine = ExtensionEngine::new(&fat, &support_box(&g), ExtensionOptions::default()).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
    let mut worst = 0.0f64;
    for _ in 0..5 {
        let terms: Vec<(f64, &GridFunction)> =
            (0..3).map(|_| (rng.gen_range(-2.0..2.0), &corpus[rng.gen_range(0..corpus.len())])).collect();
        worst = worst.max(linearity_defect(&engine, &terms).unwrap());
    }
    pass &= worst < 1e-12;
    detail.push(format!("p=2 linearity defect {worst:.1e}"));

    let hp = builtin_geometry("halfplane", 6).unwrap();
    let hfat = fattened(&hp);
    let half = FractionalParams::new(0.5, 0.5, 2).unwrap();
    let w = Window::covering(&BBox::new(2, &[-0.25, -0.5], &[0.75, 0.5]).unwrap(), 6);
    let bump = |x: &[f64; 3]| (1.0 - ((x[0] - 0.25).powi(2) + x[1] * x[1]) / 0.25).max(0.0).powi(2);
    let sample = |f: &(dyn Fn(&[f64; 3]) -> f64 + Sync)| GridFunction::sample(&hp, CellMask::rasterize(&hp, w), half, |x| f(x)).unwrap();
    let gf = sample(&|x| bump(x) * (x[1] > 0.05) as i32 as f64);
    let hf = sample(&|x| bump(x) * (x[1] < -0.05) as i32 as f64);
    let hengine = ExtensionEngine::for_function(&hfat, &sample(&|x| bump(x)), ExtensionOptions::default()).unwrap();
    let witnesses = nonlinearity_witnesses(&hengine, &gf, &hf, 1e-9).unwrap();
    pass &= !witnesses.is_empty();
    if let Some((x, joint, split)) = witnesses.first() {
        detail.push(format!("p=1/2 witness at ({:.4}, {:.4}): Ext(g+h)={joint:.4} vs Ext g + Ext h={split:.4}", x[0], x[1]));
    } else {
        detail.push("no p=1/2 witness".into());
    }

    for (p, a, b) in runs {
        let (ra, rb) = (a.max_ratio.unwrap_or(f64::NAN), b.max_ratio.unwrap_or(f64::NAN));
        let stable = ra.is_finite() && rb.is_finite() && ra.max(rb) <= 2.0 * ra.min(rb);
        pass &= stable && a.all_finite && b.all_finite;
        detail.push(format!("p={p}: max ratio L7={ra:.4} L8={rb:.4}"));
    }

    let dir = tempfile::tempdir().unwrap();
    let t = Instant::now();
    let report = cmd_report(&RunConfig { output_dir: dir.path().to_path_buf(), ..RunConfig::default() });
    let secs = t.elapsed().as_secs_f64();
    pass &= report.is_ok() && secs <= 600.0;
    detail.push(format!("report {} in {secs:.1}s", if report.is_ok() { "ok" } else { "failed" }));
    Outcome { id: 9, title: "Extension contracts", pass, detail: detail.join("; ") }
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn criterion_10() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig { output_dir: dir.path().to_path_buf(), ..RunConfig::default() };
    let first_doc = cmd_report(&cfg).unwrap();
    let first = snapshot(dir.path());
    let second_doc = cmd_report(&cfg).unwrap();
    let second = snapshot(dir.path());
    let bytes: usize = first.iter().map(|(_, b)| b.len()).sum();
    Outcome {
        id: 10,
        title: "Reproducibility",
        pass: !first.is_empty() && first == second && first_doc == second_doc,
        detail: format!("{} files, {bytes} bytes, identical={}", first.len(), first == second),
    }
}

fn main() {
    let criteria: Vec<fn() -> Outcome> = vec![
        criterion_1,
        criterion_2,
        criterion_3,
        criterion_4,
        criterion_5,
        criterion_6,
        criterion_7,
        criterion_8,
        criterion_9,
        criterion_10,
    ];
    let mut failed = 0;
    for c in criteria {
        let t = Instant::now();
        let o = c();
        if !o.pass {
            failed += 1;
        }
        println!(
            "[{}] criterion {:>2} {:<28} {:>6.1}s  {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.id,
            o.title,
            t.elapsed().as_secs_f64(),
            o.detail
        );
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
