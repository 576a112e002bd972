use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use gpgl_core::{
    augment as augment_graph, build_grid_tensor, dataset_stats, export_tensors, featurize, layout_graph, load_exported,
    load_tudataset, AugmentedSet, FeatureMode, GraphDataset, LayoutParams,
};
use msm_cnn::{cross_validate_models, save_checkpoint, Network, NetworkConfig, Tensor4, TensorDataset, TrainConfig};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::render;
use crate::{AugmentCmd, BenchCmd, DatasetArgs, ExportCmd, LayoutCmd, RenderCmd, StatsCmd, TrainCmd};

const DEGREE_CAP: usize = gpgl_core::dataset::DEFAULT_DEGREE_CAP;

/// A directory argument is used as is; a bare name is looked up under
/// `$GPGL_DATA_DIR`, then `./data`.
fn resolve_dataset(name: &str) -> Result<PathBuf> {
    let direct = PathBuf::from(name);
    if direct.is_dir() {
        return Ok(direct);
    }
    let mut roots = Vec::new();
    if let Some(root) = std::env::var_os("GPGL_DATA_DIR") {
        roots.push(PathBuf::from(root));
    }
    roots.push(PathBuf::from("data"));
    roots
        .iter()
        .map(|r| r.join(name))
        .find(|p| p.is_dir())
        .with_context(|| format!("dataset `{name}` not found (looked in $GPGL_DATA_DIR and ./data)"))
}

fn load(args: &DatasetArgs, features: FeatureMode) -> Result<GraphDataset> {
    let dir = resolve_dataset(&args.dataset)?;
    let mut ds = load_tudataset(&dir).with_context(|| format!("loading {}", dir.display()))?;
    if let Some(limit) = args.limit {
        ds.graphs.truncate(limit);
        ds.labels.truncate(limit);
        if let Some(nl) = ds.node_labels.as_mut() {
            nl.truncate(limit);
        }
    }
    Ok(featurize(&ds, features, DEGREE_CAP)?)
}

fn augment_all(ds: &GraphDataset, p: &LayoutParams, k: usize) -> Result<Vec<AugmentedSet>> {
    if k == 0 {
        bail!("--k must be at least 1");
    }
    Ok(ds.graphs.par_iter().enumerate().map(|(i, g)| augment_graph(g, i, p, k)).collect())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

/// `layouts.jsonl` plus a deterministic `summary.json`; timing goes to stdout.
fn write_layouts(out: &Path, ds: &GraphDataset, sets: &[AugmentedSet], p: &LayoutParams, started: Instant) -> Result<()> {
    fs::create_dir_all(out)?;
    let mut w = BufWriter::new(File::create(out.join("layouts.jsonl"))?);
    let (mut lost, mut vertices, mut count) = (0usize, 0usize, 0usize);
    for set in sets {
        for l in &set.layouts {
            let line = json!({
                "graph_id": set.graph_id,
                "seed": l.seed,
                "width": l.grid.width(),
                "height": l.grid.height(),
                "cells": l.grid.cells(),
                "diagnostics": l.diagnostics,
            });
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
            lost += l.diagnostics.vertex_loss;
            vertices += l.grid.n();
            count += 1;
        }
    }
    w.flush()?;
    let distinct: usize = sets.iter().map(AugmentedSet::distinct_layouts).sum();
    let summary = json!({
        "dataset": ds.name,
        "graphs": ds.graphs.len(),
        "k": sets.first().map_or(0, |s| s.k),
        "params": p,
        "layouts": count,
        "distinct_layouts": distinct,
        "vertex_loss_ratio": if vertices == 0 { 0.0 } else { lost as f64 / vertices as f64 },
        "max_width": sets.iter().flat_map(|s| &s.layouts).map(|l| l.grid.width()).max(),
        "max_height": sets.iter().flat_map(|s| &s.layouts).map(|l| l.grid.height()).max(),
        "failed": sets.iter().flat_map(|s| s.failures.iter().map(move |f| json!({
            "graph_id": s.graph_id, "seed": f.seed, "error": f.error,
        }))).collect::<Vec<_>>(),
    });
    write_json(&out.join("summary.json"), &summary)?;
    let mut report = summary;
    report["wall_time_s"] = json!(started.elapsed().as_secs_f64());
    println!("{report}");
    Ok(())
}

pub fn layout(c: LayoutCmd) -> Result<()> {
    let started = Instant::now();
    let p = c.layout.params()?;
    let ds = load(&c.data, FeatureMode::Auto)?;
    let sets = augment_all(&ds, &p, 1)?;
    write_layouts(&c.out, &ds, &sets, &p, started)
}

pub fn augment(c: AugmentCmd) -> Result<()> {
    let started = Instant::now();
    let p = c.layout.params()?;
    let ds = load(&c.data, FeatureMode::Auto)?;
    let sets = augment_all(&ds, &p, c.k)?;
    write_layouts(&c.out, &ds, &sets, &p, started)
}

pub fn export(c: ExportCmd) -> Result<()> {
    let started = Instant::now();
    let p = c.layout.params()?;
    let ds = load(&c.data, c.tensor.features)?;
    let sets = augment_all(&ds, &p, c.k)?;
    let manifest = export_tensors(&sets, &ds, &c.out, (c.tensor.window, c.tensor.window), c.tensor.merge)?;
    let lost: usize = manifest.entries.iter().map(|e| e.lost).sum();
    let vertices: usize = manifest.entries.iter().map(|e| ds.graphs[e.graph_id].num_vertices()).sum();
    println!(
        "{}",
        json!({
            "dataset": manifest.dataset,
            "count": manifest.count,
            "shape": [manifest.height, manifest.width, manifest.channels],
            "vertex_loss_ratio": lost as f64 / vertices.max(1) as f64,
            "failed": manifest.failed.len(),
            "wall_time_s": started.elapsed().as_secs_f64(),
        })
    );
    Ok(())
}

pub fn stats(c: StatsCmd) -> Result<()> {
    let ds = load(&c.data, c.features)?;
    let s = dataset_stats(&ds);
    if let Some(out) = &c.out {
        write_json(out, &s)?;
    }
    println!("{}", serde_json::to_string_pretty(&s)?);
    Ok(())
}

pub fn render(c: RenderCmd) -> Result<()> {
    let p = c.layout.params()?;
    let ds = load(&c.data, FeatureMode::Auto)?;
    let ids: Vec<usize> = if c.graphs.is_empty() { (0..ds.graphs.len()).collect() } else { c.graphs.clone() };
    if let Some(&bad) = ids.iter().find(|&&g| g >= ds.graphs.len()) {
        bail!("graph {bad} out of range (dataset has {} graphs)", ds.graphs.len());
    }
    fs::create_dir_all(&c.out)?;
    let sets: Vec<AugmentedSet> = ids.par_iter().map(|&g| augment_graph(&ds.graphs[g], g, &p, c.k.max(1))).collect();
    let mut written = 0;
    for set in &sets {
        for l in &set.layouts {
            let title = format!("{} graph {} seed {}", ds.name, set.graph_id, l.seed);
            let path = c.out.join(format!("graph{}_seed{}.svg", set.graph_id, l.seed));
            fs::write(&path, render::svg(&ds.graphs[set.graph_id], &l.grid, &title))?;
            written += 1;
        }
    }
    println!("{}", json!({ "written": written, "dir": c.out }));
    Ok(())
}

pub fn train(c: TrainCmd) -> Result<()> {
    let started = Instant::now();
    let (manifest, header, tensors) = load_exported(&c.tensors)?;
    let graph_count = manifest.entries.iter().map(|e| e.graph_id + 1).max().unwrap_or(0);
    let mut graph_labels = vec![0; graph_count];
    for e in &manifest.entries {
        graph_labels[e.graph_id] = e.label;
    }
    let data = TensorDataset {
        height: header.height,
        width: header.width,
        channels: header.channels,
        tensors,
        graph_of: manifest.entries.iter().map(|e| e.graph_id).collect(),
        graph_labels,
        classes: manifest.class_count,
    };
    let net = NetworkConfig {
        input_channels: header.channels,
        msm_channels: c.channels.clone(),
        scales: c.scales,
        fc_hidden: c.fc.clone(),
        classes: manifest.class_count,
        global_pool: c.global_pool,
        dropout: c.dropout,
    };
    net.validate()?;
    let cfg = TrainConfig {
        learning_rate: c.lr,
        batch_size: c.batch_size,
        max_epochs: c.epochs,
        patience: c.patience,
        folds: c.folds,
        validation_fraction: c.validation_fraction,
        seed: c.seed,
    };
    let (report, models) = cross_validate_models(&net, &cfg, &data)?;

    fs::create_dir_all(&c.out)?;
    write_json(
        &c.out.join("report.json"),
        &json!({ "dataset": manifest.dataset, "network": net, "train": cfg, "cv": report }),
    )?;
    let mut curves = BufWriter::new(File::create(c.out.join("curves.jsonl"))?);
    for f in &report.folds {
        for e in &f.curve {
            let mut line = serde_json::to_value(e)?;
            line["fold"] = json!(f.fold);
            serde_json::to_writer(&mut curves, &line)?;
            curves.write_all(b"\n")?;
        }
    }
    curves.flush()?;
    if c.checkpoints {
        for (f, model) in report.folds.iter().zip(&models) {
            let mut w = BufWriter::new(File::create(c.out.join(format!("fold{}.ckpt", f.fold)))?);
            save_checkpoint(&mut w, model, c.seed.wrapping_add(f.fold as u64), f.best_epoch)?;
            w.flush()?;
        }
    }
    println!(
        "{}",
        json!({
            "mean_graph_accuracy": report.mean_graph_accuracy,
            "std_graph_accuracy": report.std_graph_accuracy,
            "mean_layout_accuracy": report.mean_layout_accuracy,
            "majority_baseline": report.majority_baseline,
            "wall_time_s": started.elapsed().as_secs_f64(),
        })
    );
    Ok(())
}

pub fn bench(c: BenchCmd) -> Result<()> {
    let p = c.layout.params()?;
    let ds = load(&c.data, c.tensor.features)?;
    if ds.graphs.is_empty() {
        bail!("dataset is empty");
    }
    // Graphs one after another so the mean is a per-graph latency.
    let started = Instant::now();
    let mut grids = Vec::with_capacity(ds.graphs.len());
    for (i, g) in ds.graphs.iter().enumerate() {
        let (grid, _) = layout_graph(g, &p).with_context(|| format!("graph {i}"))?;
        grids.push(grid);
    }
    let layout_ms = started.elapsed().as_secs_f64() * 1e3 / ds.graphs.len() as f64;

    let window = (c.tensor.window, c.tensor.window);
    let mut tensors = Vec::new();
    let mut overflow = 0;
    for (g, grid) in ds.graphs.iter().zip(&grids) {
        if tensors.len() == c.inference_samples {
            break;
        }
        match build_grid_tensor(grid, g.features().unwrap_or_default(), window, c.tensor.merge) {
            Ok((t, _)) => tensors.push(t),
            Err(gpgl_core::GridError::WindowOverflow { .. }) => overflow += 1,
            Err(e) => return Err(e.into()),
        }
    }
    let inference_ms = if tensors.is_empty() {
        None
    } else {
        let channels = tensors[0].channels;
        let mut cfg = NetworkConfig::standard(channels, ds.class_count.max(1));
        cfg.dropout = 0.0;
        let net = Network::new(cfg, 0)?;
        let started = Instant::now();
        for t in &tensors {
            let x = Tensor4::stack(t.height, t.width, channels, &[t.data.as_slice()])?;
            net.predict(&x)?;
        }
        Some(started.elapsed().as_secs_f64() * 1e3 / tensors.len() as f64)
    };
    println!(
        "{}",
        json!({
            "dataset": ds.name,
            "graphs": ds.graphs.len(),
            "mean_layout_ms": layout_ms,
            "inference_ms_per_tensor": inference_ms,
            "inference_samples": tensors.len(),
            "window": c.tensor.window,
            "overflowing_layouts": overflow,
        })
    );
    Ok(())
}

