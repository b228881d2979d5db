"""Batch front-end: mesh generation, data simulation, reconstruction,
evaluation.

Experiments are driven by flat key/value config files with dotted section
names (``recon.beta = 3.5e-2``); command-line ``--set key=value`` pairs
override config entries.  Exit codes: 0 success, 1 runtime/IO failure,
2 usage or config error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, fem, io, metrics, phantoms, recon
from .mesh import Mesh, generate_disk_mesh, interpolate_p1, read_msh, write_msh


class UsageError(Exception):
    """Bad configuration or arguments (exit code 2)."""


# ---------------------------------------------------------------------------
# config files

_BOOL = {"true": True, "false": False}


def _parse_value(text: str, where: str):
    text = text.strip()
    if not text:
        raise UsageError(f"{where}: empty value")
    if text.startswith('"') and text.endswith('"') and len(text) >= 2:
        return text[1:-1]
    if text in _BOOL:
        return _BOOL[text]
    if text.startswith("[") and text.endswith("]"):
        body = text[1:-1].strip()
        if not body:
            return []
        return [_parse_value(part, where) for part in body.split(",")]
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        raise UsageError(f"{where}: cannot parse value {text!r}") from None


def _strip_comment(line: str) -> str:
    out = []
    quoted = False
    for ch in line:
        if ch == '"':
            quoted = not quoted
        if ch == "#" and not quoted:
            break
        out.append(ch)
    return "".join(out)


def parse_config(path) -> dict:
    """Flat dotted-key config: one ``key = value`` per line."""
    cfg: dict = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        cfg[key.strip()] = _parse_value(value, f"{path}:{lineno}")
    return cfg


def apply_overrides(cfg: dict, pairs) -> dict:
    for pair in pairs or []:
        if "=" not in pair:
            raise UsageError(f"--set needs key=value, got {pair!r}")
        key, _, value = pair.partition("=")
        cfg[key.strip()] = _parse_value(value, f"--set {key.strip()}")
    return cfg


def _get(cfg, key, default=None, required=False):
    if key in cfg:
        return cfg[key]
    if required:
        raise UsageError(f"config key {key!r} is required")
    return default


def make_recon_config(cfg: dict) -> recon.ReconConfig:
    rc = recon.ReconConfig()
    mapping = {
        "recon.beta": "beta", "recon.eps": "eps",
        "recon.box_low": "box_low", "recon.box_high": "box_high",
        "recon.outer_iters": "outer_iters", "recon.inner_iters": "inner_iters",
        "recon.cg_iters": "cg_iters", "recon.delta": "delta",
        "recon.warm_start_factor": "warm_start_factor",
        "recon.stop_tol_outer": "stop_tol_outer",
        "recon.stop_tol_inner": "stop_tol_inner",
        "recon.pde_tol": "pde_tol",
        "recon.restrict_updates_to_data": "restrict_updates_to_data",
        "recon.seed": "seed",
    }
    for key, attr in mapping.items():
        if key in cfg:
            value = cfg[key]
            if key == "recon.delta" and value == "auto":
                value = None
            setattr(rc, attr, value)
    try:
        rc.validate()
    except ValueError as exc:
        raise UsageError(f"invalid reconstruction config: {exc}") from exc
    return rc


def _mask_from_config(cfg, mesh):
    kind = _get(cfg, "mask.kind", "full")
    radius = float(_get(cfg, "mask.radius", 0.6))
    try:
        return phantoms.make_mask(kind, mesh, radius=radius)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _flux_indices(cfg):
    indices = _get(cfg, "fluxes", [1, 2, 3])
    if not isinstance(indices, list) or not indices or \
            not all(isinstance(j, int) and 1 <= j <= 4 for j in indices):
        raise UsageError("config key 'fluxes' must be a list of indices in 1..4")
    return indices


def _meshes_from_config(cfg, outdir: Path | None):
    """Reconstruction and fine meshes; prefers files written by simulate."""
    def load_or_generate(path_key, h_key, fname):
        if path_key in cfg:
            return read_msh(cfg[path_key])
        if outdir is not None and (outdir / fname).exists():
            return read_msh(outdir / fname)
        h = _get(cfg, h_key, required=True)
        return generate_disk_mesh(float(h))

    fine = load_or_generate("mesh.fine_path", "mesh.h_fine", "mesh_fine.msh")
    coarse = load_or_generate("mesh.recon_path", "mesh.h_recon", "mesh_recon.msh")
    return fine, coarse


def _manifest(path, cfg, extra=None):
    payload = {
        "config": {k: cfg[k] for k in sorted(cfg)},
        "versions": {
            "aet": __version__,
            "numpy": np.__version__,
            "python": sys.version.split()[0],
        },
    }
    payload.update(extra or {})
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")


# ---------------------------------------------------------------------------
# commands


def cmd_mesh(args) -> int:
    h = args.h
    if not (0.0 < h < 1.0):
        raise UsageError(f"--h must lie in (0, 1), got {h}")
    mesh = generate_disk_mesh(h)
    write_msh(mesh, args.out)
    print(f"wrote {args.out}: {mesh.n_nodes} nodes, "
          f"{mesh.n_triangles} triangles, h = {mesh.h:.6g}")
    return 0


def cmd_simulate(args) -> int:
    cfg = apply_overrides(parse_config(args.config), args.set)
    if args.out:
        cfg["output_dir"] = args.out
    outdir = Path(_get(cfg, "output_dir", required=True))
    phantom_name = _get(cfg, "phantom", "shapes")
    fluxes = _flux_indices(cfg)
    noise = phantoms.NoiseSpec(float(_get(cfg, "noise.delta_e", 0.0)),
                               int(_get(cfg, "noise.seed", 0)))
    if noise.delta_e < 0:
        raise UsageError("noise.delta_e must be nonnegative")
    fine, coarse = _meshes_from_config(cfg, None)
    mask = _mask_from_config(cfg, coarse)
    phantom = phantoms.make_phantom(phantom_name, fine)  # validates the name

    outdir.mkdir(parents=True, exist_ok=True)
    datasets, fine_fields = phantoms.simulate_datasets(
        fine, coarse, phantom, fluxes, noise, mask=mask,
        noise_on_fine=bool(_get(cfg, "noise.on_fine", True)))
    write_msh(fine, outdir / "mesh_fine.msh")
    write_msh(coarse, outdir / "mesh_recon.msh")
    io.write_field(outdir / "sigma_true_fine.field", fine, phantom.sigma)
    truth_recon = interpolate_p1(fine, phantom.sigma, coarse)
    io.write_field(outdir / "sigma_true_recon.field", coarse, truth_recon)
    for ds, h_fine in zip(datasets, fine_fields):
        io.write_field(outdir / f"H_f{ds.flux_index}_fine.field", fine, h_fine)
        io.export_vtk(outdir / f"H_f{ds.flux_index}_fine.vtk", fine,
                      {f"H_f{ds.flux_index}": h_fine})
        io.write_field(outdir / f"z_f{ds.flux_index}_recon.field", coarse, ds.z)
    io.export_vtk(outdir / "sigma_true_fine.vtk", fine,
                  {"sigma_true": phantom.sigma})
    _manifest(outdir / "manifest_simulate.json", cfg)
    print(f"simulated {len(datasets)} dataset(s) for phantom "
          f"{phantom_name!r} into {outdir}")
    return 0


def cmd_reconstruct(args) -> int:
    cfg = apply_overrides(parse_config(args.config), args.set)
    if args.out:
        cfg["output_dir"] = args.out
    outdir = Path(_get(cfg, "output_dir", required=True))
    fluxes = _flux_indices(cfg)
    rc = make_recon_config(cfg)

    fine, coarse = _meshes_from_config(cfg, outdir)
    coarse_hash = io.mesh_hash(coarse)
    mask = _mask_from_config(cfg, coarse)
    datasets = []
    for j in fluxes:
        path = outdir / f"z_f{j}_recon.field"
        if not path.exists():
            print(f"error: missing data file {path} (run simulate first)",
                  file=sys.stderr)
            return 1
        href, z = io.read_field(path)
        if href != coarse_hash:
            print(f"error: {path} was written for another mesh "
                  f"({href} != {coarse_hash})", file=sys.stderr)
            return 1
        datasets.append(recon.Dataset(j, phantoms.boundary_flux(j), z, mask))

    truth = None
    truth_path = outdir / "sigma_true_recon.field"
    if truth_path.exists():
        href, truth = io.read_field(truth_path)
        if href != coarse_hash:
            print(f"error: {truth_path} was written for another mesh",
                  file=sys.stderr)
            return 1

    sigma0 = np.full(coarse.n_nodes, float(_get(cfg, "recon.sigma0", 1.0)))
    sigma, history = recon.reconstruct(
        coarse, datasets, sigma0, rc, truth=truth, n_threads=args.threads)
    io.write_field(outdir / "sigma_final.field", coarse, sigma)
    io.export_vtk(outdir / "sigma_final.vtk", coarse, {"sigma": sigma})
    io.export_history(outdir / "history.csv", history)
    _manifest(outdir / "manifest_reconstruct.json", cfg,
              extra={"iterations": len(history), "seed": rc.seed})
    last = history[-1]
    print(f"reconstruction finished after {len(history)} outer iteration(s): "
          f"J_beta = {last.j_beta:.6g}, fit = {last.fit:.6g}, "
          f"e_L1 = {last.e_l1:.6g}")
    return 0


def cmd_evaluate(args) -> int:
    mesh = read_msh(args.mesh)
    href_sigma, sigma = io.read_field(args.sigma)
    href_truth, truth = io.read_field(args.truth)
    mhash = io.mesh_hash(mesh)
    if href_sigma != mhash:
        raise UsageError(f"{args.sigma} does not belong to mesh {args.mesh}")
    if href_truth != mhash:
        if not args.interpolate:
            raise UsageError(
                f"{args.truth} belongs to a different mesh; "
                f"pass --truth-mesh and --interpolate to compare")
        if not args.truth_mesh:
            raise UsageError("--interpolate requires --truth-mesh")
        truth_mesh = read_msh(args.truth_mesh)
        if io.mesh_hash(truth_mesh) != href_truth:
            raise UsageError(f"{args.truth} does not belong to {args.truth_mesh}")
        # compare on the truth mesh: carry the reconstruction over
        sigma = interpolate_p1(mesh, sigma, truth_mesh)
        mesh = truth_mesh
    triple = metrics.error_metrics(mesh, sigma, truth)
    print(f"e_L1  = {triple.e_l1:.17g}")
    print(f"e_TV  = {triple.e_tv:.17g}")
    print(f"e_dBV = {triple.e_dbv:.17g}")
    out = Path(args.out) if args.out else Path(str(args.sigma) + ".metrics.csv")
    out.write_text(
        "e_L1,e_TV,e_dBV\n"
        f"{triple.e_l1:.17g},{triple.e_tv:.17g},{triple.e_dbv:.17g}\n",
        encoding="ascii")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aet",
        description="Conductivity reconstruction from interior power density")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mesh", help="generate a disk mesh and write MSH 2.2")
    p.add_argument("--h", type=float, required=True, help="target mesh size")
    p.add_argument("--out", required=True, help="output .msh path")
    p.set_defaults(func=cmd_mesh)

    for name, fn, desc in (
            ("simulate", cmd_simulate, "synthesize two-mesh power density data"),
            ("reconstruct", cmd_reconstruct, "run the reconstruction")):
        p = sub.add_parser(name, help=desc)
        p.add_argument("--config", required=True, help="experiment config file")
        p.add_argument("--out", help="override output_dir")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config entry")
        if name == "reconstruct":
            p.add_argument("--threads", type=int, default=1,
                           help="per-dataset solve parallelism (1 = deterministic)")
        p.set_defaults(func=fn)

    p = sub.add_parser("evaluate", help="error metrics of a reconstruction")
    p.add_argument("--mesh", required=True, help="mesh of the sigma field")
    p.add_argument("--sigma", required=True, help="reconstructed field file")
    p.add_argument("--truth", required=True, help="reference field file")
    p.add_argument("--truth-mesh", help="mesh of the reference field")
    p.add_argument("--interpolate", action="store_true",
                   help="interpolate across meshes when hashes differ")
    p.add_argument("--out", help="metrics CSV path")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, RuntimeError, LookupError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
