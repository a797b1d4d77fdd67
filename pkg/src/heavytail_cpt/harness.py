"""Rejection-rate studies written to disk: CSV tables, SVG charts, manifest."""

from __future__ import annotations

import json
import math
import platform
from dataclasses import asdict, dataclass, field
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from heavytail_cpt.cpt_stat import (
    VARIANTS,
    MonteCarloCritical,
    PowerCurve,
    TestConfig,
    power_curve,
    sq_critical_value,
)
from heavytail_cpt.series_gen import ARChangeSpec, InnovationKind

CSV_HEADER = "theta2,reject_rate_Tn,reject_rate_Ttilde,reject_rate_SQ,replications"
DEFAULT_THETA2_GRID = tuple(round(-1.0 + 0.1 * i, 1) for i in range(21))


class ConfigError(ValueError):
    """Malformed configuration file or value."""


def read_config(path: str | Path) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment. Keys are normalised to snake case."""
    out = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"{path}: line {lineno}: expected 'key = value', got {raw!r}")
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def parse_float_list(text) -> tuple[float, ...]:
    """``"0.1, 0.2"`` or ``"-1:1:0.1"`` (start:stop:step, inclusive)."""
    if isinstance(text, (list, tuple)):
        return tuple(float(v) for v in text)
    text = str(text).strip()
    if text.count(":") == 2:
        start, stop, step = (float(v) for v in text.split(":"))
        if step <= 0:
            raise ConfigError(f"step must be positive in {text!r}")
        count = int(math.floor((stop - start) / step + 1e-9)) + 1
        return tuple(round(start + i * step, 10) for i in range(count))
    try:
        return tuple(float(v) for v in text.replace(";", ",").split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"not a list of numbers: {text!r}") from None


@dataclass(frozen=True)
class ExperimentConfig:
    """Grid of a rejection-rate study.

    Defaults follow the usual desk protocol: ``theta1 = 0.3``, ``n`` in
    {100, 200, 400}, break fractions {0.5, 0.8}, three innovation laws and
    ``theta2`` from -1 to 1 in steps of 0.1.
    """

    theta1: tuple = (0.3,)
    theta2_grid: tuple = DEFAULT_THETA2_GRID
    n_list: tuple = (100, 200, 400)
    r_list: tuple = (0.5, 0.8)
    innovations: tuple = ("normal", "t2", "cauchy")
    replications: int = 1000
    alpha: float = 0.05
    variants: tuple = VARIANTS
    master_seed: int = 0
    output_dir: str = "power_out"
    r1: float = 0.1
    r2: float = 0.9
    critmc_paths: int = 20_000
    grid_points: int = 1000
    sq_variant: str = "psi"
    sq_null_reps: int = 500
    workers: int | None = field(default=None, compare=False)

    def __post_init__(self):
        for name in ("theta2_grid", "n_list", "r_list", "innovations", "variants"):
            if len(getattr(self, name)) == 0:
                raise ConfigError(f"{name} must not be empty")
        if self.replications < 1:
            raise ConfigError("replications must be at least 1")
        bad = set(self.variants) - set(VARIANTS)
        if bad:
            raise ConfigError(f"unknown variants {sorted(bad)}")
        for innov in self.innovations:
            InnovationKind.parse(innov)
        for n in self.n_list:
            for r in self.r_list:
                try:
                    ARChangeSpec(self.theta1, int(n), self.theta1, float(r))
                except ValueError as exc:
                    raise ConfigError(f"n={n}, r={r}: {exc}") from None
        TestConfig(self.r1, self.r2, "bridge", self.alpha)

    @classmethod
    def from_mapping(cls, values: dict) -> "ExperimentConfig":
        """Build from string values (config file or CLI), ignoring ``None``."""
        conv = {
            "theta1": parse_float_list,
            "theta2_grid": parse_float_list,
            "n_list": lambda v: tuple(int(x) for x in parse_float_list(v)),
            "r_list": parse_float_list,
            "innovations": _str_list,
            "variants": _str_list,
            "replications": int, "alpha": float, "master_seed": int, "output_dir": str,
            "r1": float, "r2": float, "critmc_paths": int, "grid_points": int,
            "sq_variant": str, "sq_null_reps": int, "workers": int,
        }
        kwargs = {}
        for key, val in values.items():
            if val is None:
                continue
            if key not in conv:
                raise ConfigError(f"unknown setting {key!r}")
            try:
                kwargs[key] = conv[key](val)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad value for {key}: {val!r} ({exc})") from None
        return cls(**kwargs)


def _str_list(v) -> tuple[str, ...]:
    if isinstance(v, (list, tuple)):
        return tuple(v)
    return tuple(s.strip() for s in str(v).split(",") if s.strip())


def fmt(x: float) -> str:
    """Shortest round-trip text for a float; ``nan`` for missing."""
    return "nan" if not math.isfinite(x) else repr(float(x))


def power_csv(curve: PowerCurve) -> str:
    lines = [CSV_HEADER]
    for i, th2 in enumerate(curve.theta2_grid):
        row = [fmt(th2)]
        for v in VARIANTS:
            row.append(fmt(curve.rates[v][i]) if v in curve.rates else "")
        row.append(str(int(curve.valid[i])))
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def power_svg(curve: PowerCurve, alpha: float, title: str = "") -> str:
    """Line chart: one polyline per variant, dashed reference line at ``alpha``."""
    W, H, L, R, T, B = 480, 320, 50, 110, 30, 40
    x = curve.theta2_grid
    xmin, xmax = float(np.min(x)), float(np.max(x))
    if xmax == xmin:
        xmin, xmax = xmin - 0.5, xmax + 0.5

    def px(v):
        return L + (v - xmin) / (xmax - xmin) * (W - L - R)

    def py(v):
        return H - B - v * (H - T - B)

    colors = {"Tn": "#1f77b4", "Ttilde": "#d62728", "SQ": "#2ca02c"}
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
        f'viewBox="0 0 {W} {H}">',
        f'<title>{escape(title)}</title>',
        f'<rect x="{L}" y="{T}" width="{W - L - R}" height="{H - T - B}" '
        f'fill="none" stroke="#000"/>',
        f'<line x1="{px(xmin):.2f}" y1="{py(alpha):.2f}" x2="{px(xmax):.2f}" '
        f'y2="{py(alpha):.2f}" stroke="#777" stroke-dasharray="4 3"/>',
    ]
    for tick in (0.0, 0.5, 1.0):
        parts.append(f'<text x="{L - 6}" y="{py(tick) + 4:.2f}" font-size="10" '
                     f'text-anchor="end">{tick:g}</text>')
    for tick in (xmin, 0.5 * (xmin + xmax), xmax):
        parts.append(f'<text x="{px(tick):.2f}" y="{H - B + 14}" font-size="10" '
                     f'text-anchor="middle">{tick:g}</text>')
    parts.append(f'<text x="{(L + W - R) / 2:.1f}" y="{H - 6}" font-size="11" '
                 f'text-anchor="middle">theta2</text>')
    parts.append(f'<text x="12" y="{(T + H - B) / 2:.1f}" font-size="11" '
                 f'transform="rotate(-90 12 {(T + H - B) / 2:.1f})" '
                 f'text-anchor="middle">rejection rate</text>')
    for j, (v, rates) in enumerate(curve.rates.items()):
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x, rates) if math.isfinite(b))
        parts.append(f'<polyline fill="none" stroke="{colors.get(v, "#000")}" '
                     f'stroke-width="1.5" points="{pts}"><title>{v}</title></polyline>')
        parts.append(f'<text x="{W - R + 8}" y="{T + 14 + 16 * j}" font-size="11" '
                     f'fill="{colors.get(v, "#000")}">{v}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def cell_name(n: int, r: float, innov: str) -> str:
    return f"power_n{n}_r{r:g}_{InnovationKind.parse(innov).label()}"


def _versions() -> dict:
    import numba
    import scipy

    from heavytail_cpt import __version__
    return {"heavytail_cpt": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "numba": numba.__version__, "python": platform.python_version()}


def run_power_study(config: ExperimentConfig, progress=None) -> Path:
    """Run every ``(n, r, innovation)`` cell and write its CSV and SVG.

    A cell that raises is recorded in the manifest and the study moves on.
    Returns the output directory.
    """
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    crit = MonteCarloCritical(config.critmc_paths, config.grid_points, config.master_seed)
    test_cfg = TestConfig(config.r1, config.r2, "bridge", config.alpha)
    manifest = {"config": {k: v for k, v in asdict(config).items() if k != "workers"},
                "versions": _versions(), "cells": []}
    sq_cache = {}
    for n in config.n_list:
        for innov_text in config.innovations:
            innov = InnovationKind.parse(innov_text)
            sq_crit = None
            if "SQ" in config.variants:
                key = (n, innov)
                if key not in sq_cache:
                    sq_cache[key] = sq_critical_value(
                        config.theta1, n, innov, config.alpha, config.sq_null_reps,
                        config.master_seed, config.sq_variant, config.workers)
                sq_crit = sq_cache[key]
            for r in config.r_list:
                name = cell_name(n, r, innov_text)
                cell = {"name": name, "n": n, "r": r, "innovation": innov.label(),
                        "seed": config.master_seed}
                try:
                    curve = power_curve(config.theta2_grid, config.theta1, n, r, innov,
                                        config.replications, test_cfg, seed=config.master_seed,
                                        variants=config.variants, critical_source=crit,
                                        sq_critical=sq_crit, sq_variant=config.sq_variant,
                                        workers=config.workers)
                except Exception as exc:  # recorded, study continues
                    cell["error"] = f"{type(exc).__name__}: {exc}"
                    manifest["cells"].append(cell)
                    continue
                (out / f"{name}.csv").write_text(power_csv(curve), encoding="utf-8")
                title = f"n={n}, r={r:g}, {innov.label()}"
                (out / f"{name}.svg").write_text(power_svg(curve, config.alpha, title),
                                                 encoding="utf-8")
                cell["critical_values"] = {k: float(v) for k, v in curve.critical_values.items()}
                cell["sq_variant"] = config.sq_variant
                cell["generation_failures"] = curve.generation_failures.tolist()
                cell["test_failures"] = curve.test_failures.tolist()
                manifest["cells"].append(cell)
                if progress:
                    progress(name)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                       encoding="utf-8")
    return out
