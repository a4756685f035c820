use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use lesion_mil::imageio::{read_image, read_mask, write_mask};
use lesion_mil::inference::image_score;
use lesion_mil::manifest::write_manifest;
use lesion_mil::metrics::write_roc_csv;
use lesion_mil::mil::train_observed;
use lesion_mil::report::save_report;
use lesion_mil::segment::segment_and_clean;
use lesion_mil::{
    classify_image, describe, evaluate, generate, load_corpus, load_model, read_manifest, render_heatmap, save_model,
    slide_windows, Provider, RegionMask, SegmenterConfig,
};

use crate::config::RunConfig;

pub fn cmd_gen(cfg: &RunConfig, out: &Path) -> Result<PathBuf> {
    let manifest = generate(&cfg.gen_config(), out).context("gen")?;
    let s = describe(&manifest)?;
    eprintln!(
        "wrote {} ({} positive, {} negative, {} boxes, mean region area {:.1} px)",
        manifest.display(),
        s.positives,
        s.negatives,
        s.boxes,
        s.mean_blob_area
    );
    Ok(manifest)
}

fn absolute(p: &Path) -> Result<PathBuf> {
    fs::canonicalize(p).with_context(|| format!("resolving {}", p.display()))
}

pub fn cmd_segment(cfg: &RunConfig, manifest: &Path, out: &Path) -> Result<PathBuf> {
    let mut rows = read_manifest(manifest).context("segment")?;
    fs::create_dir_all(out.join("masks"))?;
    let seg = SegmenterConfig {
        provider: Provider::Baseline,
        ..cfg.segmenter
    };
    let mut made = 0;
    for row in &mut rows {
        row.image_path = absolute(&row.image_path)?;
        match &row.mask_path {
            Some(p) => row.mask_path = Some(absolute(p)?),
            None => {
                let image = read_image(&row.image_path, &row.id)?;
                let mask = segment_and_clean(&image, None, &seg).with_context(|| format!("segmenting {}", row.id))?;
                let rel = PathBuf::from("masks").join(format!("{}.png", row.id));
                write_mask(&mask, out.join(&rel))?;
                row.mask_path = Some(rel);
                made += 1;
            }
        }
    }
    let path = out.join("manifest.csv");
    write_manifest(&path, &rows)?;
    eprintln!("segmented {made} of {} images; wrote {}", rows.len(), path.display());
    Ok(path)
}

pub fn cmd_train(cfg: &RunConfig, manifest: &Path, out: &Path) -> Result<PathBuf> {
    let corpus = load_corpus(manifest, &cfg.load_options()).context("loading training corpus")?;
    let (pos, neg) = (corpus.weak_positive().count(), corpus.weak_negative().count());
    eprintln!(
        "{} bags, {pos} weak positive tiles, {neg} weak negative tiles, {} reinforced",
        corpus.len(),
        corpus.reinforced().count()
    );
    let mil = cfg.mil_config();
    let epochs = mil.train.epochs;
    let (model, history) = train_observed(&corpus, &mil, |set| {
        eprintln!("iteration {}/{epochs}: |D| = {}", set.iteration, set.len());
    })
    .context("training")?;
    fs::create_dir_all(out)?;
    let path = out.join("model.lmil");
    save_model(&model, &path)?;
    history.write_csv(out.join("history.csv"))?;
    if let (Some(l), Some(a)) = (history.loss.last(), history.accuracy.last()) {
        eprintln!("final loss {l:.4}, accuracy on D {a:.4}");
    }
    eprintln!("wrote {}", path.display());
    Ok(path)
}

pub fn cmd_eval(cfg: &RunConfig, manifest: &Path, model_path: &Path, out: &Path) -> Result<PathBuf> {
    let model = load_model(model_path).context("loading checkpoint")?;
    model.check_tile_size(cfg.tile_size).context("eval")?;
    let rows = read_manifest(manifest)?;
    let corpus = load_corpus(manifest, &cfg.load_options()).context("loading evaluation corpus")?;
    let ev = evaluate(&model, &corpus, &cfg.tiler(), cfg.threshold).context("evaluating")?;
    fs::create_dir_all(out)?;
    let report_path = out.join("report.json");
    save_report(&ev.report, &report_path)?;
    write_roc_csv(&ev.roc, out.join("roc.csv"))?;
    let mut f = std::io::BufWriter::new(fs::File::create(out.join("predictions.csv"))?);
    writeln!(f, "id,label,score,prediction")?;
    for ((row, score), pred) in rows.iter().zip(&ev.scores).zip(&ev.predictions) {
        writeln!(f, "{},{},{score},{pred}", row.id, row.label)?;
    }
    f.flush()?;
    let r = &ev.report;
    eprintln!(
        "precision {:.4} recall {:.4} f1 {:.4} accuracy {:.4} auc {:.4}",
        r.precision,
        r.recall,
        r.f1,
        r.accuracy,
        ev.roc.auc
    );
    eprintln!("wrote {}", report_path.display());
    Ok(report_path)
}

pub fn cmd_viz(cfg: &RunConfig, image_path: &Path, mask: Option<&Path>, model_path: &Path, out: &Path) -> Result<PathBuf> {
    let model = load_model(model_path).context("loading checkpoint")?;
    model.check_tile_size(cfg.tile_size).context("viz")?;
    let stem = image_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".into());
    let image = read_image(image_path, &stem)?;
    let (h, w) = image.shape();
    let region = if !cfg.use_mask {
        RegionMask::full(h, w)
    } else {
        let oracle = mask.map(read_mask).transpose()?;
        let seg = SegmenterConfig {
            provider: if oracle.is_some() { Provider::Oracle } else { Provider::Baseline },
            ..cfg.segmenter
        };
        segment_and_clean(&image, oracle.as_ref(), &seg).context("segmenting")?
    };
    let matrix = slide_windows(&model, &image, &region, &cfg.viz_windows()).context("sliding windows")?;
    let heat = render_heatmap(&matrix, &image, &region, cfg.alpha, cfg.fusion)?;
    fs::create_dir_all(out)?;
    let composite = out.join(format!("{stem}_heatmap.png"));
    heat.composite.save(&composite).map_err(lesion_mil::Error::from)?;
    heat.overlay
        .save(out.join(format!("{stem}_overlay.png")))
        .map_err(lesion_mil::Error::from)?;
    matrix.write_csv(out.join(format!("{stem}_windows.csv")))?;
    eprintln!(
        "{stem}: {} (max window probability {:.4}); wrote {}",
        classify_image(&matrix, cfg.threshold),
        image_score(&matrix),
        composite.display()
    );
    Ok(composite)
}
