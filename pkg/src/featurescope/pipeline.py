"""Pipeline orchestration: one function per service/CLI command.

Every run reads tensors referenced by a dataset manifest, writes its outputs
under a target directory, and returns a summary dict {command, config,
metrics, output_files}. All randomness flows from the request seed, exports
are written with a deterministic JSON encoder, and file contents depend only
on the inputs and the seed, so reruns are byte-identical.
"""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np

from . import analysis, knowledge, tensorio
from .errors import ConfigError, DependencyError, PairingError
from .importance import ImportanceConfig, fit_importance
from .mixture import MixtureModel
from .numutil import RngState
from .region_embed import RegionalBatch, SimilarityConfig, fit_region_projection
from .sample_embed import (
    SampleBatch,
    SampleFitConfig,
    fit_sample_projection,
    strength_uncertainty_report,
)
from .synth import SynthSpec, gen_regional_batch
from .tensorio import (
    Manifest,
    ManifestSample,
    load_kappa_table,
    load_manifest,
    load_mixture,
    read_tensor,
    save_kappa_table,
    save_manifest,
    save_mixture,
    write_json,
    write_tensor,
)
from .vmf import build_kappa_table, default_strength_grid


def _slug(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", name)


def _summary(command: str, config: dict, metrics: dict, files) -> dict:
    return {
        "command": command,
        "config": config,
        "metrics": metrics,
        "output_files": sorted(str(f) for f in files),
    }


def _load_sample_batch(manifest: Manifest) -> SampleBatch:
    feats, logits, labels, ids = [], [], [], []
    for s in manifest.samples:
        feats.append(read_tensor(manifest.path(s.features)))
        logits.append(read_tensor(manifest.path(s.logits)))
        labels.append(s.label)
        ids.append(s.id)
    return SampleBatch(
        features=np.asarray(feats, dtype=float),
        logits=np.asarray(logits, dtype=float),
        labels=np.asarray(labels),
        ids=ids,
    )


# ---------------------------------------------------------------------------
# synth


def run_synth(spec_path, out, seed: int = 0, n: int | None = None) -> dict:
    import json

    spec = SynthSpec.load(spec_path)
    if n is None:
        try:
            n = json.loads(Path(spec_path).read_text()).get("n")
        except (OSError, json.JSONDecodeError):
            n = None
    if n is None:
        raise ConfigError("synth spec must carry an 'n' sample count (or pass n)", module="synth")
    count = int(n)
    if count < spec.categories:
        raise ConfigError("synth requires n >= categories", module="synth")

    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    rng = RngState(seed)
    spec.materialize(rng.split("spec"))

    g = rng.generator
    labels = g.integers(0, spec.categories, size=count)
    strengths = g.uniform(spec.strength_low, spec.strength_high, size=count)

    files = []
    # whole-sample features and logits share the latent (label, strength)
    from .numutil import sample_vmf

    feats = np.empty((count, spec.dim))
    feat_rng = rng.split("sample-features")
    for i in range(count):
        direction = (spec.sample_directions[labels[i]] if np.isinf(spec.kappa_true)
                     else sample_vmf(spec.sample_directions[labels[i]], spec.kappa_true, feat_rng))
        feats[i] = strengths[i] * direction
    if spec.sigma > 0:
        feats = feats + spec.sigma * feat_rng.generator.standard_normal((count, spec.dim))
    logits = feats @ spec.head_sample.T

    samples = []
    for i in range(count):
        sid = f"s{i:05d}"
        f_rel = f"{sid}_features.ftc"
        z_rel = f"{sid}_logits.ftc"
        write_tensor(out / f_rel, feats[i])
        write_tensor(out / z_rel, logits[i])
        files += [out / f_rel, out / z_rel]
        samples.append(ManifestSample(id=sid, label=int(labels[i]), features=f_rel,
                                      logits=z_rel, layer_features={}))

    for layer in spec.layers:
        batch = gen_regional_batch(spec, count, rng.split(f"layer:{layer}"), layer=layer,
                                   labels=labels, strengths=strengths)
        for i, s in enumerate(samples):
            rel = f"{s.id}_{_slug(layer)}.ftc"
            write_tensor(out / rel, batch.maps[i])
            s.layer_features[layer] = rel
            files.append(out / rel)

    categories = [f"cat{c}" for c in range(spec.categories)]
    manifest = Manifest(name=spec.name, categories=categories, layers=list(spec.layers),
                        samples=samples, root=out)
    save_manifest(manifest, out / "manifest.json")
    write_json(out / "synth_spec.json", spec.to_json())
    files += [out / "manifest.json", out / "synth_spec.json"]
    summary = _summary(
        "synth",
        {"spec": str(spec_path), "out": str(out), "seed": seed, "n": count},
        {"samples": count, "layers": len(spec.layers),
         "label_counts": np.bincount(labels, minlength=spec.categories).tolist()},
        files,
    )
    write_json(out / "run_summary.json", summary)
    return summary


# ---------------------------------------------------------------------------
# fit-sample


def run_fit_sample(
    manifest_path,
    out,
    seed: int = 0,
    dim: int = 3,
    sigma: float = 1.0,
    learning_rate: float = 1.0,
    grad_steps: int = 40,
    alternations: int = 8,
    tol: float = 1e-6,
    em_max_iters: int = 100,
    em_tol: float = 1e-6,
    kappa_samples: int = 10000,
    grid_size: int = 64,
    reproducible: bool = False,
    threads: int = 1,
) -> dict:
    manifest = load_manifest(manifest_path)
    batch = _load_sample_batch(manifest)
    config = SampleFitConfig(
        dim=dim, learning_rate=learning_rate, grad_steps=grad_steps,
        alternations=alternations, tol=tol, seed=seed, sigma=sigma,
        kappa_samples=kappa_samples, grid_size=grid_size,
        em_max_iters=em_max_iters, em_tol=em_tol,
    )
    result = fit_sample_projection(batch, config)
    report = strength_uncertainty_report(result.embeddings, batch.logits)

    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    files = [out / "projection_m.ftc"]
    write_tensor(out / "projection_m.ftc", result.projection.matrix)
    files += save_mixture(result.model, out)
    files += save_kappa_table(result.table, out)

    embedding = {
        "samples": [
            {
                "id": batch.ids[i],
                "label": int(batch.labels[i]),
                "g": result.embeddings[i].tolist(),
                "strength": float(report.pairs[i, 0]),
                "entropy": float(report.pairs[i, 1]),
            }
            for i in range(batch.n)
        ],
        "categories": [
            {"id": c, "mu": result.model.directions[c].tolist(),
             "pi": float(result.model.priors[c])}
            for c in range(result.model.n_categories)
        ],
        "loss_trace": result.loss_trace,
    }
    write_json(out / "sample_embedding.json", embedding)
    files.append(out / "sample_embedding.json")

    summary = _summary(
        "fit-sample",
        {
            "manifest": str(manifest_path), "out": str(out), "seed": seed, "dim": dim,
            "sigma": sigma, "learning_rate": learning_rate, "grad_steps": grad_steps,
            "alternations": alternations, "tol": tol, "kappa_samples": kappa_samples,
            "grid_size": grid_size, "reproducible": reproducible, "threads": threads,
        },
        {
            "samples": batch.n,
            "categories": batch.n_categories,
            "initial_loss": result.loss_trace[0],
            "final_loss": result.loss_trace[-1],
            "strength_entropy_pearson": report.pearson,
        },
        files,
    )
    write_json(out / "run_summary.json", summary)
    return summary


# ---------------------------------------------------------------------------
# fit-region


def _load_sample_artifacts(artifacts: Path):
    emb_path = artifacts / "sample_embedding.json"
    if not emb_path.exists():
        raise DependencyError(
            f"missing sample-fit artifacts in {artifacts} (run fit-sample first)",
            module="pipeline",
        )
    import json

    doc = json.loads(emb_path.read_text())
    g_by_id = {s["id"]: np.asarray(s["g"], dtype=float) for s in doc["samples"]}
    table = load_kappa_table(artifacts)
    model = load_mixture(artifacts, table)
    return g_by_id, model, table


def _layer_batch(manifest: Manifest, layer: str, target_hw, adaptive: bool) -> RegionalBatch:
    maps, logits, labels, ids = [], [], [], []
    for s in manifest.samples:
        fmap = read_tensor(manifest.path(s.layer_features[layer]))
        if target_hw is not None and fmap.shape[1:] != tuple(target_hw):
            fmap = tensorio.downsample_fmap(fmap, target_hw[0], target_hw[1], adaptive=adaptive)
        maps.append(fmap)
        logits.append(read_tensor(manifest.path(s.logits)))
        labels.append(s.label)
        ids.append(s.id)
    return RegionalBatch(maps=np.asarray(maps), logits=np.asarray(logits),
                         labels=np.asarray(labels), ids=ids)


def run_fit_region(
    manifest_path,
    artifacts,
    out,
    seed: int = 0,
    alpha: float = 0.1,
    kappa_p: float = 10.0,
    kappa_tilde: float = 1000.0,
    learning_rate: float = 0.05,
    iterations: int = 60,
    importance_learning_rate: float = 0.02,
    importance_iterations: int = 60,
    layers: list | None = None,
    reference_layer: str | None = None,
    sigma: float = 1.0,
    kappa_samples: int = 2000,
    grid_size: int = 64,
    adaptive_pool: bool = False,
    reproducible: bool = False,
    threads: int = 1,
) -> dict:
    manifest = load_manifest(manifest_path)
    if not manifest.layers:
        raise ConfigError("manifest declares no layers", module="pipeline")
    use_layers = [l for l in manifest.layers if layers is None or l in layers]
    if layers:
        unknown = [l for l in layers if l not in manifest.layers]
        if unknown:
            raise ConfigError(f"unknown layers requested: {unknown}", module="pipeline")
    if not use_layers:
        raise ConfigError("no layers selected", module="pipeline")
    reference = reference_layer if reference_layer is not None else use_layers[-1]
    if reference not in use_layers:
        raise ConfigError(f"reference layer {reference!r} not among selected layers",
                          module="pipeline")

    artifacts = Path(artifacts)
    g_by_id, model, sample_table = _load_sample_artifacts(artifacts)
    missing = [s.id for s in manifest.samples if s.id not in g_by_id]
    if missing:
        raise DependencyError(
            f"samples missing from sample-fit artifacts: {missing[:5]}", module="pipeline"
        )
    G = np.asarray([g_by_id[s.id] for s in manifest.samples])
    d_embed = G.shape[1]

    # spatial target: the last selected layer's grid (downsample everything to it)
    probe_map = read_tensor(manifest.path(manifest.samples[0].layer_features[use_layers[-1]]))
    target_hw = probe_map.shape[1:]

    rng = RngState(seed)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    files = []

    h_by_layer = {}
    per_layer = {}
    for layer in use_layers:
        batch = _layer_batch(manifest, layer, target_hw, adaptive_pool)
        layer_seed = rng.split(f"layer:{layer}").seed
        imp_cfg = ImportanceConfig(
            kappa_tilde=kappa_tilde, kappa_p=kappa_p,
            learning_rate=importance_learning_rate,
            iterations=importance_iterations, seed=layer_seed,
        )
        imp = fit_importance(batch, imp_cfg)
        W = np.vstack([wt.w for wt in imp.weights])

        # strength table for the projected space, spanned by a seeded probe
        K = batch.maps.shape[1]
        probe = RngState(layer_seed).generator.standard_normal((d_embed, K)) / np.sqrt(K)
        probe_strengths = np.linalg.norm(batch.regional() @ probe.T, axis=2)
        table = build_kappa_table(
            dim=d_embed, sigma=sigma,
            strengths=default_strength_grid(probe_strengths.max(), grid_size),
            sample_count=kappa_samples, rng=rng.split(f"table:{layer}"),
        )
        sim_cfg = SimilarityConfig(kappa_p=kappa_p, alpha=alpha,
                                   learning_rate=learning_rate,
                                   iterations=iterations, seed=layer_seed)
        fit = fit_region_projection(batch, G, W, table, sim_cfg)
        h_by_layer[layer] = fit.embeddings
        per_layer[layer] = {"batch": batch, "imp": imp, "fit": fit, "table": table, "W": W}

    scaled, scales = knowledge.normalize_layer_strength(h_by_layer, reference)
    # after normalization all layers live on the reference layer's strength
    # scale, so posterior confidence is read from the reference table: one tau
    # is then comparable across layers
    reference_table = per_layer[reference]["table"]

    from .mixture import posterior

    for layer in use_layers:
        info = per_layer[layer]
        batch = info["batch"]
        slug = _slug(layer)
        table = info["table"]
        write_tensor(out / f"lambda_{slug}.ftc", info["fit"].projection.matrix)
        files.append(out / f"lambda_{slug}.ftc")
        files += save_kappa_table(table, out, prefix=f"region_kappa_{slug}")
        write_json(out / f"importance_{slug}.json", {
            "layer": layer,
            "loss_trace": info["imp"].loss_trace,
            "samples": [
                {"id": batch.ids[i], "w": info["imp"].weights[i].w.tolist(),
                 "v": info["imp"].weights[i].v.tolist()}
                for i in range(batch.n)
            ],
        })
        files.append(out / f"importance_{slug}.json")

        H = scaled[layer]
        layer_model = model.with_table(reference_table)
        sample_docs = []
        for i in range(batch.n):
            regions = []
            for r in range(batch.regions):
                post = posterior(H[i, r], layer_model) if np.linalg.norm(H[i, r]) > 0 else None
                regions.append({
                    "r": r,
                    "h": H[i, r].tolist(),
                    "strength": float(np.linalg.norm(H[i, r])),
                    "w": float(info["W"][i, r]),
                    "posterior_argmax": int(np.argmax(post)) if post is not None else None,
                    "posterior_max": float(np.max(post)) if post is not None else None,
                })
            sample_docs.append({"id": batch.ids[i], "label": int(batch.labels[i]),
                                "regions": regions})
        write_json(out / f"regional_{slug}.json", {
            "layer": layer,
            "height": int(target_hw[0]),
            "width": int(target_hw[1]),
            "strength_scale": scales[layer],
            "loss_trace": info["fit"].loss_trace,
            "samples": sample_docs,
        })
        files.append(out / f"regional_{slug}.json")

    # make the output dir self-contained for downstream stages
    files += save_mixture(model, out)
    files += save_kappa_table(sample_table, out)
    write_json(out / "strength_scales.json",
               {"reference_layer": reference, "scales": scales,
                "reference_table_prefix": f"region_kappa_{_slug(reference)}",
                "layers": use_layers, "height": int(target_hw[0]), "width": int(target_hw[1])})
    files.append(out / "strength_scales.json")

    summary = _summary(
        "fit-region",
        {
            "manifest": str(manifest_path), "artifacts": str(artifacts), "out": str(out),
            "seed": seed, "alpha": alpha, "kappa_p": kappa_p, "kappa_tilde": kappa_tilde,
            "learning_rate": learning_rate, "iterations": iterations,
            "importance_learning_rate": importance_learning_rate,
            "importance_iterations": importance_iterations,
            "layers": use_layers, "reference_layer": reference,
            "adaptive_pool": adaptive_pool, "reproducible": reproducible, "threads": threads,
        },
        {
            layer: {
                "similarity_loss_initial": per_layer[layer]["fit"].loss_trace[0],
                "similarity_loss_final": per_layer[layer]["fit"].loss_trace[-1],
                "importance_loss_final": per_layer[layer]["imp"].loss_trace[-1],
                "strength_scale": scales[layer],
            }
            for layer in use_layers
        },
        files,
    )
    write_json(out / "run_summary.json", summary)
    return summary


# ---------------------------------------------------------------------------
# knowledge


def _load_region_artifacts(artifacts: Path):
    import json

    scales_path = artifacts / "strength_scales.json"
    if not scales_path.exists():
        raise DependencyError(
            f"missing region-fit artifacts in {artifacts} (run fit-region first)",
            module="pipeline",
        )
    meta = json.loads(scales_path.read_text())
    table = load_kappa_table(artifacts)
    model = load_mixture(artifacts, table)
    return meta, model


def run_knowledge(artifacts, out, tau: float = 0.4,
                  reproducible: bool = False, threads: int = 1) -> dict:
    import json

    artifacts = Path(artifacts)
    meta, model = _load_region_artifacts(artifacts)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    curve = []
    cfg = knowledge.KnowledgeConfig(tau=tau, reference_layer=meta["reference_layer"])
    metrics = {}
    # one table (the reference layer's) for every layer: strengths were
    # normalized to the reference scale, which is what makes tau comparable
    reference_table = load_kappa_table(
        artifacts, prefix=meta.get("reference_table_prefix",
                                   f"region_kappa_{_slug(meta['reference_layer'])}"))
    for layer in meta["layers"]:
        slug = _slug(layer)
        doc = json.loads((artifacts / f"regional_{slug}.json").read_text())
        table = reference_table
        h = []
        truth = []
        for s in doc["samples"]:
            for reg in s["regions"]:
                h.append(reg["h"])
                truth.append(s["label"])
        report = knowledge.count_knowledge_points(
            np.asarray(h, dtype=float), np.asarray(truth), model, table=table, tau=cfg.tau
        )
        overlay = knowledge.knowledge_regions_export(report, doc["height"], doc["width"])
        tau_sweep = {}
        for t in [round(0.1 * k, 1) for k in range(1, 10)]:
            rep_t = knowledge.count_knowledge_points(
                np.asarray(h, dtype=float), np.asarray(truth), model, table=table, tau=t
            )
            tau_sweep[str(t)] = rep_t.total_points
        layer_doc = {
            "layer": layer,
            "checkpoint": meta.get("checkpoint", "default"),
            "tau": cfg.tau,
            "total": report.total_points,
            "reliable": report.reliable_points,
            "ratio": report.ratio,
            "tau_sweep_totals": tau_sweep,
            "overlay": {str(cat): [list(cell) for cell in cells]
                        for cat, cells in overlay.items()},
            "regions": [
                {
                    "r": rec.index,
                    "argmax": rec.argmax_category,
                    "max_posterior": rec.max_posterior,
                    "is_knowledge": rec.is_knowledge,
                    "is_reliable": rec.is_reliable,
                    "tied": rec.tied,
                }
                for rec in report.records
            ],
        }
        write_json(out / f"knowledge_{slug}.json", layer_doc)
        files.append(out / f"knowledge_{slug}.json")
        curve.append({"layer": layer, "total": report.total_points,
                      "reliable": report.reliable_points, "ratio": report.ratio})
        metrics[layer] = {"total": report.total_points, "reliable": report.reliable_points,
                          "ratio": report.ratio}
    write_json(out / "knowledge_curve.json",
               {"checkpoint": meta.get("checkpoint", "default"), "layers": curve})
    files.append(out / "knowledge_curve.json")
    summary = _summary(
        "knowledge",
        {"artifacts": str(artifacts), "out": str(out), "tau": tau,
         "reproducible": reproducible, "threads": threads},
        metrics,
        files,
    )
    write_json(out / "run_summary.json", summary)
    return summary


# ---------------------------------------------------------------------------
# attack / distill


def _check_pairing(a: Manifest, b: Manifest):
    ids_a = [s.id for s in a.samples]
    ids_b = [s.id for s in b.samples]
    if ids_a != ids_b:
        offenders = sorted(set(ids_a).symmetric_difference(ids_b)) or ["<ordering differs>"]
        raise PairingError(f"sample ids do not match between conditions: {offenders[:10]}",
                           module="pipeline")
    if a.layers != b.layers:
        raise PairingError(
            f"layer lists differ between conditions: {a.layers} vs {b.layers}",
            module="pipeline",
        )


def _project_condition(manifest: Manifest, artifacts: Path, meta: dict, adaptive: bool):
    """Project every layer of a manifest through the fitted per-layer maps,
    applying the stored strength normalization."""
    h_by_layer = {}
    target_hw = (meta["height"], meta["width"])
    for layer in meta["layers"]:
        slug = _slug(layer)
        lam_path = artifacts / f"lambda_{slug}.ftc"
        if not lam_path.exists():
            raise DependencyError(f"missing projection for layer {layer!r}", module="pipeline")
        lam = read_tensor(lam_path)
        batch = _layer_batch(manifest, layer, target_hw, adaptive)
        h = batch.regional() @ lam.T
        h_by_layer[layer] = h * meta["scales"][layer]
    return h_by_layer


def run_attack(
    manifest_a,
    manifest_b,
    artifacts,
    out,
    threshold: float = 0.4,
    theta_w: float = 0.5,
    theta_p: float = 0.4,
    steps: list | None = None,
    adaptive_pool: bool = False,
    reproducible: bool = False,
    threads: int = 1,
) -> dict:
    artifacts = Path(artifacts)
    meta, model = _load_region_artifacts(artifacts)
    man_a = load_manifest(manifest_a)
    man_b = load_manifest(manifest_b)
    _check_pairing(man_a, man_b)
    h_a = _project_condition(man_a, artifacts, meta, adaptive_pool)
    h_b = _project_condition(man_b, artifacts, meta, adaptive_pool)
    step_hs = []
    for step_path in steps or []:
        man_s = load_manifest(step_path)
        _check_pairing(man_a, man_s)
        step_hs.append(_project_condition(man_s, artifacts, meta, adaptive_pool))

    labels_a = np.asarray([s.label for s in man_a.samples])
    labels_b = np.asarray([s.label for s in man_b.samples])
    ids = [s.id for s in man_a.samples]

    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    layers_doc = {}
    metrics = {}
    reference_table = load_kappa_table(
        artifacts, prefix=meta.get("reference_table_prefix",
                                   f"region_kappa_{_slug(meta['reference_layer'])}"))
    for layer in meta["layers"]:
        table = reference_table
        pairs = analysis.PairedRegions(h_a=h_a[layer], h_b=h_b[layer],
                                       labels_a=labels_a, labels_b=labels_b, sample_ids=ids)
        d_orient, d_strength = analysis.attack_utilities(pairs)
        hist = analysis.attacked_region_histogram(pairs, model, table, threshold=threshold)
        layer_doc = {
            "delta_orientation": d_orient,
            "delta_strength": d_strength,
            "selected_histogram": {"bin_edges": hist.edges.tolist(),
                                   "counts": hist.counts.tolist()},
        }
        if step_hs:
            type_counts = {}
            n, R, _ = h_a[layer].shape
            for i in range(n):
                strengths_start = np.linalg.norm(h_a[layer][i], axis=1)
                strengths_end = np.linalg.norm(h_b[layer][i], axis=1)
                cutoff_start = float(np.quantile(strengths_start, theta_w))
                cutoff_end = float(np.quantile(strengths_end, theta_w))
                mid_cuts = []
                for sh in step_hs:
                    s_mid = np.linalg.norm(sh[layer][i], axis=1)
                    mid_cuts.append((s_mid, float(np.quantile(s_mid, theta_w))))
                for r in range(R):
                    mids = [(float(s_mid[r]), cut) for s_mid, cut in mid_cuts]
                    t = analysis.classify_trajectory(
                        h_a[layer][i, r], h_b[layer][i, r],
                        int(labels_a[i]), int(labels_b[i]),
                        model, table, cutoff_start, cutoff_end,
                        theta_p=theta_p, midpoints=mids,
                    )
                    key = str(t.value)
                    type_counts[key] = type_counts.get(key, 0) + 1
            layer_doc["trajectory_types"] = dict(sorted(type_counts.items()))
        layers_doc[layer] = layer_doc
        metrics[layer] = {"delta_orientation": d_orient, "delta_strength": d_strength}
    write_json(out / "attack_report.json", {"threshold": threshold, "layers": layers_doc})
    summary = _summary(
        "attack",
        {"manifest_a": str(manifest_a), "manifest_b": str(manifest_b),
         "artifacts": str(artifacts), "out": str(out), "threshold": threshold,
         "theta_w": theta_w, "theta_p": theta_p,
         "steps": [str(s) for s in steps or []],
         "reproducible": reproducible, "threads": threads},
        metrics,
        [out / "attack_report.json", out / "run_summary.json"],
    )
    write_json(out / "run_summary.json", summary)
    return summary


def run_distill(
    manifest_a,
    manifest_b,
    artifacts,
    out,
    adaptive_pool: bool = False,
    reproducible: bool = False,
    threads: int = 1,
) -> dict:
    artifacts = Path(artifacts)
    meta, _model = _load_region_artifacts(artifacts)
    man_a = load_manifest(manifest_a)  # teacher / reference
    man_b = load_manifest(manifest_b)  # student / comparison
    _check_pairing(man_a, man_b)
    h_a = _project_condition(man_a, artifacts, meta, adaptive_pool)
    h_b = _project_condition(man_b, artifacts, meta, adaptive_pool)
    labels = np.asarray([s.label for s in man_a.samples])
    ids = [s.id for s in man_a.samples]

    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    layers_doc = {}
    metrics = {}
    for layer in meta["layers"]:
        pairs = analysis.PairedRegions(h_a=h_a[layer], h_b=h_b[layer],
                                       labels_a=labels, labels_b=labels, sample_ids=ids)
        orient_hist, strength_hist = analysis.distill_dissimilarity(pairs)
        layers_doc[layer] = {
            "orientation_histogram": {"bin_edges": orient_hist.edges.tolist(),
                                      "counts": orient_hist.counts.tolist()},
            "strength_histogram": {"bin_edges": strength_hist.edges.tolist(),
                                   "counts": strength_hist.counts.tolist()},
        }
        metrics[layer] = {
            "mean_orientation_gap": float(np.mean(
                1.0 - analysis._paired_cosines(pairs.h_a, pairs.h_b))),
            "mean_strength_gap": float(np.mean(
                np.linalg.norm(pairs.h_b, axis=-1) - np.linalg.norm(pairs.h_a, axis=-1))),
        }
    write_json(out / "distill_report.json", {"layers": layers_doc})
    summary = _summary(
        "distill",
        {"manifest_a": str(manifest_a), "manifest_b": str(manifest_b),
         "artifacts": str(artifacts), "out": str(out),
         "reproducible": reproducible, "threads": threads},
        metrics,
        [out / "distill_report.json", out / "run_summary.json"],
    )
    write_json(out / "run_summary.json", summary)
    return summary
