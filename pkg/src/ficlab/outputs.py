"""Plain-text output helpers shared by the CLI."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .cdfic import RmseCD


def fmt6(v) -> str:
    """Six significant digits, the CLI's printing convention."""
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.6g}"
    return str(v)


def write_cd_curve(path, cd: RmseCD, label: str = "", npts: int = 512) -> None:
    """CD curve on the rmse scale as CSV with ``# key=value`` metadata lines."""
    rho, c = cd.curve(npts)
    meta = {"model": label, "tau2": cd.tau2, "sigma2": cd.sigma2, "b_obs": cd.b_obs, "n": cd.n,
            "is_wide": cd.is_wide, "pointmass": cd.pointmass, "min_rmse": cd.min_rmse}
    with open(path, "w") as fh:
        for k, v in meta.items():
            fh.write(f"# {k}={v!r}\n" if isinstance(v, float) else f"# {k}={v}\n")
        fh.write("rmse,cd\n")
        for a, b in zip(rho, c):
            fh.write(f"{float(a)!r},{float(b)!r}\n")


def read_cd_curve(path) -> tuple[dict, np.ndarray, np.ndarray]:
    meta: dict = {}
    rho, c = [], []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            k, v = line[1:].strip().split("=", 1)
            meta[k] = v
        elif line and line[0] not in "rc":
            a, b = line.split(",")
            rho.append(float(a))
            c.append(float(b))
    for k in ("tau2", "sigma2", "b_obs", "n", "pointmass", "min_rmse"):
        if k in meta:
            meta[k] = float(meta[k])
    if "is_wide" in meta:
        meta["is_wide"] = meta["is_wide"] == "True"
    return meta, np.array(rho), np.array(c)


def cd_from_meta(meta: dict) -> RmseCD:
    return RmseCD(meta["tau2"], meta["sigma2"], meta["b_obs"], meta["n"], meta["is_wide"])


def write_json(path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
