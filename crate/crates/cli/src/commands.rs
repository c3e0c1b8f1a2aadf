use std::path::{Path, PathBuf};

use log::{info, warn};
use stv_core::container::{self, Container};
use stv_core::dataset::load_manifest;
use stv_core::ensemble::stvm;
use stv_core::eval::{self, report, FeatureSet};
use stv_core::phantom::{self, Disk, PhantomKind, PhantomSpec};
use stv_core::spectral::{self, reconstruct, stv_filter, TransferFunction};
use stv_core::{GrayImage, Label3, Manifest, Mode, SpectralStack};

use crate::config::{RunConfig, ECHO_FILE};
use crate::error::{CliError, CliResult};
use crate::PhantomKindArg;

/// Creates the output directory and echoes the effective configuration into it.
fn prepare_out(cfg: &RunConfig) -> CliResult<PathBuf> {
    let out = cfg.require_out()?.to_path_buf();
    std::fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
    let echo = out.join(ECHO_FILE);
    std::fs::write(&echo, cfg.to_text()).map_err(|e| CliError::io(&echo, e))?;
    Ok(out)
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    report::write_csv(path, text)?;
    Ok(())
}

fn warn_unconverged(what: &str, steps: usize, cfg: &RunConfig) {
    if steps > 0 {
        warn!(
            "{what}: {steps} flow steps hit inner_max_iter = {} before reaching inner_tol",
            cfg.flow.inner_max_iter
        );
    }
}

fn read_stack_or_decompose(cfg: &RunConfig, input: &Path) -> CliResult<(GrayImage, SpectralStack)> {
    match container::read(input)? {
        Container::Raster(img) => {
            let (stack, space) = spectral::decompose(&img, &cfg.flow)?;
            warn_unconverged(&input.display().to_string(), space.unconverged_steps.len(), cfg);
            Ok((img, stack))
        }
        Container::Stack(stack) => Ok((reconstruct(&stack), stack)),
        Container::Signatures(_) => Err(CliError::Usage(format!(
            "{}: expected a raster or a spectral stack, found a signature field",
            input.display()
        ))),
    }
}

pub fn decompose(cfg: &RunConfig, input: &Path) -> CliResult<()> {
    let img = container::read_raster(input)?;
    let out = prepare_out(cfg)?;
    let (stack, space) = spectral::decompose(&img, &cfg.flow)?;
    warn_unconverged(&input.display().to_string(), space.unconverged_steps.len(), cfg);
    container::write_stack(&out.join("stack.stv"), &stack)?;
    println!("components {} residual_norm {}", stack.n_components(), stack.residual().norm());
    Ok(())
}

pub fn spectrum(cfg: &RunConfig, input: &Path) -> CliResult<()> {
    let (f, stack) = read_stack_or_decompose(cfg, input)?;
    let out = prepare_out(cfg)?;
    let s = spectral::spectrum(&f, &stack)?;
    let mut text = String::from("component,t,s\n");
    for (i, v) in s.values.iter().enumerate() {
        text.push_str(&format!("{},{},{v}\n", i + 1, stack.scale(i)));
    }
    text.push_str(&format!("residual,,{}\n", s.residual_term));
    write_text(&out.join("spectrum.csv"), &text)?;
    println!("components {} total {} norm_sq {}", s.values.len(), s.total(), f.norm_sq());
    Ok(())
}

pub fn filter(cfg: &RunConfig, input: &Path, k_min: usize, k_max: usize, keep_residual: bool) -> CliResult<()> {
    let (_, stack) = read_stack_or_decompose(cfg, input)?;
    let n = stack.n_components();
    if k_min == 0 || k_min > k_max || k_max > n {
        return Err(CliError::Usage(format!(
            "component range {k_min}..={k_max} must lie within 1..={n}"
        )));
    }
    let gains = (1..=n).map(|k| if (k_min..=k_max).contains(&k) { 1.0 } else { 0.0 }).collect();
    let transfer = TransferFunction::new(gains, if keep_residual { 1.0 } else { 0.0 })?;
    let filtered = stv_filter(&stack, &transfer)?;
    let out = prepare_out(cfg)?;
    container::write_raster(&out.join("filtered.stv"), &filtered)?;
    println!("kept components {k_min}..={k_max} of {n}, residual {keep_residual}");
    Ok(())
}

pub struct PhantomArgs {
    pub kind: PhantomKindArg,
    pub size: usize,
    pub radius: f64,
    pub contrast: f64,
    pub label: Label3,
    pub length: usize,
    pub segments: usize,
}

pub fn phantom(cfg: &RunConfig, args: &PhantomArgs) -> CliResult<()> {
    let img = match args.kind {
        PhantomKindArg::Disk => PhantomSpec::disk(args.size, args.radius, args.contrast).render()?,
        PhantomKindArg::TwoDisks => {
            let s = args.size as f64;
            let disk = |cx: f64, radius: f64| Disk {
                cx,
                cy: (args.size / 2) as f64,
                radius,
                contrast: args.contrast,
            };
            PhantomSpec {
                width: args.size,
                height: args.size,
                kind: PhantomKind::TwoDisks(disk((s / 3.0).round(), args.radius), disk((2.0 * s / 3.0).round(), args.radius / 2.0)),
            }
            .render()?
        }
        PhantomKindArg::Step1d => phantom::random_step_signal(args.length, args.segments, cfg.seed)?,
        PhantomKindArg::Texture => phantom::texture_patch(args.label, cfg.seed),
    };
    let out = prepare_out(cfg)?;
    container::write_raster(&out.join("phantom.stv"), &img)?;
    println!("phantom {}x{}", img.width(), img.height());
    Ok(())
}

pub fn cohort(cfg: &RunConfig, n_normal: usize, n_pathological: usize) -> CliResult<()> {
    let cohort = phantom::synth_cohort(n_normal, n_pathological, cfg.seed)?;
    let out = prepare_out(cfg)?;
    let manifest = cohort.write(&out)?;
    let [normal, lu, hu] = manifest.class_counts();
    println!(
        "patients {} patches {} (NORMAL {normal}, PATH_LU {lu}, PATH_HU {hu})",
        cohort.patients.len(),
        manifest.len()
    );
    Ok(())
}

fn features(cfg: &RunConfig) -> CliResult<(Manifest, FeatureSet)> {
    let manifest = load_manifest(cfg.require_manifest()?)?;
    info!("decomposing {} patches", manifest.len());
    let features = eval::extract_features(&manifest, &cfg.flow)?;
    for (record, p) in manifest.records.iter().zip(&features.patches) {
        warn_unconverged(&manifest.resolve(record).display().to_string(), p.unconverged_steps, cfg);
    }
    Ok((manifest, features))
}

pub fn train(cfg: &RunConfig) -> CliResult<()> {
    cfg.validate_ensemble()?;
    let out = prepare_out(cfg)?;
    let (manifest, features) = features(cfg)?;
    let model = eval::fit_on_manifest(&manifest, &features, &cfg.cv())?;
    stvm::write(&out.join("model.stvm"), &model)?;
    println!(
        "trained {} band learners ({} mode) on {} patches",
        model.band_count(),
        model.config.mode,
        manifest.len()
    );
    Ok(())
}

pub fn eval(cfg: &RunConfig) -> CliResult<()> {
    cfg.validate_ensemble()?;
    let out = prepare_out(cfg)?;
    let (manifest, features) = features(cfg)?;
    if let Some(model_path) = &cfg.model {
        let model = stvm::read(model_path)?;
        let patients = eval::score_patients(&manifest, &features, &model)?;
        let scores = patients
            .iter()
            .map(|p| Ok((p.patient_id.clone(), p.pathological, p.score(None)?)))
            .collect::<stv_core::Result<Vec<_>>>()?;
        let s: Vec<f64> = scores.iter().map(|x| x.2).collect();
        let t: Vec<bool> = scores.iter().map(|x| x.1).collect();
        let roc = eval::roc_auc(&s, &t)?;
        let metrics = eval::metrics_at_cutoff(&s, &t, cfg.ensemble.cutoff)?;
        write_text(
            &out.join("model_report.csv"),
            &report::model_report_csv(scores.len(), &roc, &metrics, cfg.ensemble.cutoff),
        )?;
        write_text(&out.join("patient_scores.csv"), &report::scores_csv(&scores, cfg.ensemble.cutoff))?;
        write_text(&out.join("roc.csv"), &report::roc_csv(&[("model", &roc)]))?;
        println!("auc {} accuracy {}", roc.auc, metrics.accuracy);
        return Ok(());
    }
    let cv = eval::run_cv(&manifest, &features, &cfg.cv())?;
    write_text(&out.join("cv_report.csv"), &report::cv_report_csv(&cv))?;
    write_text(&out.join("patient_scores.csv"), &report::patient_scores_csv(&cv))?;
    let pooled = cv.pooled_scores();
    let s: Vec<f64> = pooled.iter().map(|x| x.2).collect();
    let t: Vec<bool> = pooled.iter().map(|x| x.1).collect();
    let pooled_roc = eval::roc_auc(&s, &t)?;
    let names: Vec<String> = cv.folds.iter().map(|f| format!("fold{}", f.fold)).collect();
    let mut series: Vec<(&str, &eval::RocCurve)> = vec![("pooled", &pooled_roc)];
    series.extend(names.iter().map(String::as_str).zip(cv.folds.iter().map(|f| &f.roc)));
    write_text(&out.join("roc.csv"), &report::roc_csv(&series))?;
    let m = &cv.summary;
    println!(
        "auc {} ± {} accuracy {} ± {} ({} folds)",
        m.auc.mean, m.auc.sd, m.accuracy.mean, m.accuracy.sd, cv.plan.k
    );
    Ok(())
}

pub fn ablate(cfg: &RunConfig, scales: &[usize], layouts: &[bool], modes: &[Mode]) -> CliResult<()> {
    // configurations are validated before any decomposition starts
    for &s in scales {
        for &overlapping in layouts {
            let mut bands = cfg.ensemble.bands;
            bands.scales_per_band = s;
            bands.overlapping = overlapping;
            bands.validate()?;
        }
    }
    let out = prepare_out(cfg)?;
    let (manifest, features) = features(cfg)?;
    let rows = eval::ablation_scales(&manifest, &features, &cfg.cv(), scales, layouts, modes)?;
    write_text(&out.join("ablation.csv"), &report::ablation_csv(&rows))?;
    for r in &rows {
        println!(
            "s {} overlapping {} mode {}: auc {}",
            r.scales_per_band, r.overlapping, r.mode, r.summary.auc.mean
        );
    }
    Ok(())
}

pub fn band_importance(cfg: &RunConfig) -> CliResult<()> {
    cfg.validate_ensemble()?;
    if cfg.ensemble.bands.band_count() < 2 {
        return Err(CliError::Usage("band importance needs at least 2 bands".into()));
    }
    let out = prepare_out(cfg)?;
    let (manifest, features) = features(cfg)?;
    let importance = eval::band_importance(&manifest, &features, &cfg.cv())?;
    write_text(
        &out.join("band_importance.csv"),
        &report::band_importance_csv(&importance, &cfg.ensemble.bands),
    )?;
    println!("auc_all {} bands {}", importance.auc_all, importance.drops.len());
    Ok(())
}

pub fn sweep(cfg: &RunConfig, counts: &[usize]) -> CliResult<()> {
    for &n in counts {
        let mut bands = cfg.ensemble.bands;
        bands.n_components = n;
        bands.validate()?;
        if n > cfg.flow.n_components {
            return Err(CliError::Usage(format!(
                "sweep count {n} exceeds n_components {}",
                cfg.flow.n_components
            )));
        }
    }
    let out = prepare_out(cfg)?;
    let (manifest, features) = features(cfg)?;
    let rows = eval::component_sweep(&manifest, &features, &cfg.cv(), counts)?;
    write_text(&out.join("component_sweep.csv"), &report::sweep_csv(&rows))?;
    for r in &rows {
        println!("components {}: auc {}", r.n_components, r.summary.auc.mean);
    }
    Ok(())
}

pub fn spectrum_by_class(cfg: &RunConfig) -> CliResult<()> {
    let out = prepare_out(cfg)?;
    let (manifest, features) = features(cfg)?;
    let spectra = eval::mean_spectrum_by_class(&manifest, &features)?;
    write_text(&out.join("class_spectra.csv"), &report::class_spectra_csv(&spectra))?;
    for (label, count, _) in &spectra.classes {
        println!("{label}: {count} patches");
    }
    Ok(())
}
