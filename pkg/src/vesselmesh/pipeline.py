"""End-to-end orchestration: volume -> centerline -> contours -> surface -> mesh.

Every stage reads its inputs from files and writes its outputs to files, so
running the stages separately through the CLI produces byte-identical
artifacts to a single ``run_pipeline`` call.  All randomness flows through
seeds in the config.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import cdm, centerline as cl, contours as contour_align, lumenseg, metrics, nurbs, phantom, slicer
from .meshkit import marching_cubes, read_obj, validate, write_obj, write_stl
from .volume import load_raw, store_raw


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(message)
        self.stage = stage


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _read_json(path):
    return json.loads(Path(path).read_text())


def load_config(path) -> dict:
    try:
        cfg = _read_json(path)
    except (OSError, json.JSONDecodeError) as exc:
        raise ValueError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ValueError("config must be a JSON object")
    return cfg


def _cfg(config: dict, key: str, default=None):
    return config.get(key, default) if config else default


# ---------------------------------------------------------------------------
# stages


def stage_volume(config: dict, out: Path) -> Path:
    """Materialize the input volume (rasterize a phantom or load raw files)."""
    out.mkdir(parents=True, exist_ok=True)
    vol_path = out / "volume.f32raw"
    try:
        if "phantom" in config:
            spec = phantom.PhantomSpec.from_json(json.dumps(config["phantom"]))
            (out / "phantom_spec.json").write_text(spec.to_json() + "\n")
            vol = phantom.rasterize(spec)
            store_raw(vol, vol_path)
            surf_cfg = _cfg(config, "surface", {})
            gt = phantom.analytic_surface(
                spec,
                nu=int(surf_cfg.get("tess_u", 64)),
                nv=int(surf_cfg.get("tess_v", 64)),
                caps=bool(surf_cfg.get("caps", True)),
            )
            write_obj(gt, out / "gt_surface.obj")
            k = int(_cfg(config, "centerline", {}).get("k", 16))
            cl.write_csv(phantom.analytic_centerline(spec, k), out / "gt_centerline.csv")
        elif "volume" in config:
            src = Path(config["volume"]["path"])
            if not src.exists():
                raise FileNotFoundError(f"volume payload {src} not found")
            vol = load_raw(src)
            store_raw(vol, vol_path)
        else:
            raise KeyError("config needs a 'phantom' or 'volume' section")
    except StageError:
        raise
    except Exception as exc:
        raise StageError("volume", str(exc)) from exc
    return vol_path


def stage_centerline(config: dict, out: Path) -> Path:
    """Produce the (smoothed, k-station) centerline CSV used for slicing."""
    ccfg = _cfg(config, "centerline", {})
    source = ccfg.get("source", "analytic")
    k = int(ccfg.get("k", 16))
    path = out / "centerline.csv"
    try:
        if source == "analytic":
            spec = phantom.load_spec(out / "phantom_spec.json")
            raw = phantom.analytic_centerline(spec, k)
        elif source == "csv":
            raw = cl.read_csv(ccfg["path"])
        elif source == "cdm":
            vol = load_raw(out / "volume.f32raw")
            den, sched = cdm.load_checkpoint(ccfg["checkpoint"])
            rng = np.random.default_rng(int(_cfg(config, "seed", 0)))
            encoder = cdm.VolumeFeatureEncoder(vol)
            raw = cdm.sample(vol, encoder, den, sched, rng)
        else:
            raise ValueError(f"unknown centerline source {source!r}")
        smoothed = cl.smooth_resample(raw, k) if ccfg.get("smooth", True) else raw
        cl.write_csv(smoothed, path)
    except StageError:
        raise
    except Exception as exc:
        raise StageError("centerline", str(exc)) from exc
    return path


def _slice_geometry(config: dict, out: Path):
    vol = load_raw(out / "volume.f32raw")
    stations = cl.read_csv(out / "centerline.csv")
    scfg = _cfg(config, "slice", {})
    half_extent = scfg.get("half_extent_mm")
    if half_extent is None:
        if "phantom" in config:
            spec = phantom.load_spec(out / "phantom_spec.json")
            bump = max(spec.bump_amplitude, 0.0)
            if spec.shape == "aneurysm" and bump == 0.0:
                bump = 0.4
            half_extent = 4.0 * spec.base_radius_mm * (1.0 + bump)
        else:
            raise ValueError("slice.half_extent_mm is required for non-phantom volumes")
    n_pix = int(scfg.get("n_pix", 64))
    planes = slicer.planes_for_centerline(cl.frames(stations), float(half_extent), n_pix)
    return vol, planes


def stage_slices(config: dict, out: Path) -> Path:
    """Optional inspection dump: one PGM per station."""
    try:
        vol, planes = _slice_geometry(config, out)
        slice_dir = out / "slices"
        slice_dir.mkdir(exist_ok=True)
        for i, plane in enumerate(planes):
            slc = slicer.extract_slice(vol, plane)
            slicer.write_pgm(slc, slice_dir / f"station_{i:03d}.pgm")
    except StageError:
        raise
    except Exception as exc:
        raise StageError("slice", str(exc)) from exc
    return out / "slices"


def stage_segment(config: dict, out: Path) -> Path:
    """Slice, segment, trace, resample, and lift every station to 3D."""
    ccfg = _cfg(config, "contours", {})
    m = int(ccfg.get("points", 32))
    threshold = float(ccfg.get("threshold", 0.5))
    masks_dir = ccfg.get("masks_dir")
    path = out / "contours_raw.json"
    try:
        vol, planes = _slice_geometry(config, out)
        stations = []
        for i, plane in enumerate(planes):
            slc = slicer.extract_slice(vol, plane)
            if masks_dir:
                mask_px = slicer.read_pgm_mask(Path(masks_dir) / f"station_{i:03d}.pgm")
                if mask_px.shape != slc.pixels.shape:
                    raise ValueError(
                        f"mask station_{i:03d}.pgm shape {mask_px.shape} does not "
                        f"match slice resolution {slc.pixels.shape}"
                    )
                center = (plane.n_pix - 1) // 2
                mask = lumenseg.Mask(mask_px, (center, center))
            else:
                center = (plane.n_pix - 1) // 2
                mask = lumenseg.segment_slice(slc, (center, center), threshold)
            traced = lumenseg.trace_boundary(mask, plane)
            resampled = lumenseg.resample_contour(traced, m)
            lifted = slicer.lift_to_3d(resampled.points, plane)
            stations.append(
                {
                    "station_index": i,
                    "anchor": plane.frame.anchor.tolist(),
                    "frame": {
                        "t": plane.frame.t.tolist(),
                        "n": plane.frame.n.tolist(),
                        "b": plane.frame.b.tolist(),
                    },
                    "points": lifted.tolist(),
                }
            )
        _write_json(path, {"stations": stations})
    except StageError:
        raise
    except Exception as exc:
        raise StageError("segment", str(exc)) from exc
    return path


def read_contour_set(path) -> list[lumenseg.Contour]:
    doc = _read_json(path)
    return [
        lumenseg.Contour(np.asarray(st["points"], dtype=np.float64), "world-3d")
        for st in doc["stations"]
    ]


def stage_align(config: dict, out: Path) -> Path:
    path = out / "contours.json"
    try:
        doc = _read_json(out / "contours_raw.json")
        cs = [
            lumenseg.Contour(np.asarray(st["points"], dtype=np.float64), "world-3d")
            for st in doc["stations"]
        ]
        aligned = contour_align.align_chain(cs)
        for st, contour in zip(doc["stations"], aligned):
            st["points"] = contour.points.tolist()
        _write_json(path, doc)
    except StageError:
        raise
    except Exception as exc:
        raise StageError("contours", str(exc)) from exc
    return path


def stage_fit(config: dict, out: Path) -> Path:
    path = out / "surface.nurbs.json"
    try:
        scfg = _cfg(config, "surface", {})
        aligned = read_contour_set(out / "contours.json")
        surface = nurbs.skin_surface(
            aligned,
            degree_u=int(scfg.get("degree_u", 3)),
            degree_v=int(scfg.get("degree_v", 3)),
        )
        nurbs.write_surface_json(surface, path)
    except StageError:
        raise
    except Exception as exc:
        raise StageError("fit", str(exc)) from exc
    return path


def stage_mesh(config: dict, out: Path) -> Path:
    try:
        scfg = _cfg(config, "surface", {})
        surface = nurbs.read_surface_json(out / "surface.nurbs.json")
        mesh = nurbs.tessellate(
            surface,
            nu=int(scfg.get("tess_u", 64)),
            nv=int(scfg.get("tess_v", 64)),
            caps=bool(scfg.get("caps", True)),
        ).clean()
        write_obj(mesh, out / "mesh.obj")
        write_stl(mesh, out / "mesh.stl")
        report = validate(mesh)
        _write_json(out / "topology.json", report.to_dict())
    except StageError:
        raise
    except Exception as exc:
        raise StageError("mesh", str(exc)) from exc
    return out / "mesh.obj"


def stage_metrics(config: dict, out: Path) -> Path | None:
    gt_path = None
    gcfg = _cfg(config, "ground_truth", {})
    if gcfg.get("surface_obj"):
        gt_path = Path(gcfg["surface_obj"])
    elif (out / "gt_surface.obj").exists():
        gt_path = out / "gt_surface.obj"
    if gt_path is None:
        return None
    try:
        mesh = read_obj(out / "mesh.obj")
        gt = read_obj(gt_path)
        seed = int(_cfg(config, "seed", 0))
        ref_label = gt_path.name if gt_path.parent == out else str(gt_path)
        report = metrics.mesh_metric_report(
            mesh, gt, seed=seed, inputs={"mesh": "mesh.obj", "reference": ref_label}
        )
        _write_json(out / "metrics.json", report)
    except StageError:
        raise
    except Exception as exc:
        raise StageError("metrics", str(exc)) from exc
    return out / "metrics.json"


PIPELINE_STAGES = ("volume", "centerline", "segment", "contours", "fit", "mesh", "metrics")


def run_pipeline(config: dict, out) -> dict:
    """Run all stages in order; returns a summary of artifact paths."""
    out = Path(out)
    stage_volume(config, out)
    stage_centerline(config, out)
    stage_segment(config, out)
    stage_align(config, out)
    stage_fit(config, out)
    stage_mesh(config, out)
    metrics_path = stage_metrics(config, out)
    summary = {
        "out": str(out),
        "artifacts": {
            "volume": "volume.f32raw",
            "centerline": "centerline.csv",
            "contours_raw": "contours_raw.json",
            "contours": "contours.json",
            "nurbs": "surface.nurbs.json",
            "mesh_obj": "mesh.obj",
            "mesh_stl": "mesh.stl",
            "topology": "topology.json",
        },
    }
    if metrics_path:
        summary["artifacts"]["metrics"] = "metrics.json"
        summary["metrics"] = _read_json(metrics_path)
    summary["topology"] = _read_json(out / "topology.json")
    return summary


# ---------------------------------------------------------------------------
# parameter study and baseline comparison


def param_study(config: dict, out, k_list=(8, 12, 16, 20, 25)) -> Path:
    """Run the pipeline per centerline point count; CSV of CD/HD/EMD per k."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for k in k_list:
        sub = dict(config)
        sub["centerline"] = dict(_cfg(config, "centerline", {}))
        sub["centerline"]["k"] = int(k)
        sub_out = out / f"k_{int(k):02d}"
        summary = run_pipeline(sub, sub_out)
        m = summary.get("metrics")
        if m is None:
            raise StageError("metrics", "parameter study requires a ground-truth surface")
        rows.append((int(k), m["cd_mm"], m["hd_mm"], m["emd_mm"]))
    best = min(rows, key=lambda r: r[1])[0]
    lines = ["k,cd_mm,hd_mm,emd_mm,is_best"]
    for k, cd_val, hd_val, emd_val in rows:
        lines.append(f"{k},{cd_val!r},{hd_val!r},{emd_val!r},{int(k == best)}")
    csv_path = out / "study.csv"
    csv_path.write_text("\n".join(lines) + "\n")
    return csv_path


def compare_baseline(config: dict, out) -> Path:
    """NURBS pipeline vs marching cubes on the same volume, both validated."""
    out = Path(out)
    summary = run_pipeline(config, out)
    if "metrics" not in summary:
        raise StageError("metrics", "baseline comparison requires a ground-truth surface")
    try:
        vol = load_raw(out / "volume.f32raw")
        iso = float(_cfg(config, "baseline", {}).get("iso", 0.5))
        mc = marching_cubes(vol, iso).clean()
        write_obj(mc, out / "mc_mesh.obj")
        mc_report = validate(mc)
        gt = read_obj(out / "gt_surface.obj")
        seed = int(_cfg(config, "seed", 0))
        mc_metrics = metrics.mesh_metric_report(
            mc, gt, seed=seed, inputs={"mesh": "mc_mesh.obj", "reference": "gt_surface.obj"}
        )
        doc = {
            "nurbs": {"metrics": summary["metrics"], "topology": summary["topology"]},
            "marching_cubes": {"metrics": mc_metrics, "topology": mc_report.to_dict()},
        }
        _write_json(out / "compare.json", doc)
    except StageError:
        raise
    except Exception as exc:
        raise StageError("compare", str(exc)) from exc
    return out / "compare.json"


# ---------------------------------------------------------------------------
# desk-scale training data


def phantom_family(family_cfg: dict):
    """Deterministic family of phantom specs for diffusion training.

    Varies lumen radius and lateral axis offset over seeded uniform draws.
    """
    shape = family_cfg.get("shape", "straight")
    count = int(family_cfg.get("count", 128))
    seed = int(family_cfg.get("seed", 0))
    radius_lo, radius_hi = family_cfg.get("radius_range_mm", (5.0, 7.0))
    offset = float(family_cfg.get("offset_range_mm", 3.5))
    dims = tuple(family_cfg.get("dims", (48, 48, 48)))
    spacing = tuple(family_cfg.get("spacing_mm", (1.2, 1.2, 1.2)))
    length = float(family_cfg.get("length_mm", 30.0))
    softness = family_cfg.get("wall_softness_mm", 3.0)
    rng = np.random.default_rng(seed)
    specs = []
    for _ in range(count):
        r = float(rng.uniform(radius_lo, radius_hi))
        dx, dy = rng.uniform(-offset, offset, size=2)
        specs.append(
            phantom.PhantomSpec(
                shape=shape,
                length_mm=length,
                base_radius_mm=r,
                dims=dims,
                spacing_mm=spacing,
                wall_softness_mm=softness,
                axis_offset_mm=(float(dx), float(dy)),
            )
        )
    return specs


def build_training_pairs(specs, k: int = 16):
    pairs = []
    for spec in specs:
        vol = phantom.rasterize(spec)
        pts = phantom.analytic_centerline(spec, k)
        pairs.append(cdm.TrainingPair.from_volume(vol, pts))
    return pairs


def train_cdm(config: dict, out) -> Path:
    """Train the diffusion model per config; writes checkpoint + loss CSV."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        k = int(_cfg(config, "k", 16))
        sched = cdm.NoiseSchedule.desk_default(int(_cfg(config, "timesteps", 200)))
        specs = phantom_family(_cfg(config, "family", {}))
        pairs = build_training_pairs(specs, k)
        cfg = cdm.TrainConfig(
            learning_rate=float(_cfg(config, "learning_rate", 1e-3)),
            batch_size=int(_cfg(config, "batch_size", 16)),
            iterations=int(_cfg(config, "iterations", 5000)),
            seed=int(_cfg(config, "seed", 0)),
        )
        den, curve = cdm.train(pairs, cfg, sched)
        cdm.save_checkpoint(den, sched, out / "model", seed=cfg.seed)
        lines = ["iteration,loss,smoothed"]
        for it, loss, smooth in curve:
            lines.append(f"{it},{loss!r},{smooth!r}")
        (out / "loss_curve.csv").write_text("\n".join(lines) + "\n")
    except StageError:
        raise
    except Exception as exc:
        raise StageError("cdm-train", str(exc)) from exc
    return out / "model"


def sample_cdm(config: dict, out) -> Path:
    """Sample one centerline from a trained checkpoint, conditioned on a volume."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        if "phantom" in config:
            spec = phantom.PhantomSpec.from_json(json.dumps(config["phantom"]))
            vol = phantom.rasterize(spec)
        else:
            vol = load_raw(Path(config["volume"]["path"]))
        den, sched = cdm.load_checkpoint(config["checkpoint"])
        rng = np.random.default_rng(int(_cfg(config, "seed", 0)))
        pts = cdm.sample(vol, cdm.VolumeFeatureEncoder(vol), den, sched, rng)
        cl.write_csv(pts, out / "sampled_centerline.csv")
    except StageError:
        raise
    except Exception as exc:
        raise StageError("cdm-sample", str(exc)) from exc
    return out / "sampled_centerline.csv"
