"""Typed ``key = value`` experiment configuration with section headers.

    [experiment]
    kind = noise-decay
    seed = 20240607
    out = results/noise

    [params]
    ns = 64, 256, 1024, 4096
    replicas = 50

Values are typed by the defaults of the chosen kind; unknown sections or
keys are rejected.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

KINDS = ("lln-convergence", "noise-decay", "ou-toy", "gp-ratio", "sewing-check", "semigroup-bounds",
         "resolvent-decay", "mild-residual", "stability", "uniform-probe")


class ConfigError(ValueError):
    pass


# defaults per kind, then the reduced (--quick) overrides
DEFAULTS: dict[str, dict] = {
    "lln-convergence": dict(
        ns=(100, 400, 1600, 6400), replicas=30, m=1.6, T=1.0, dt=0.015625, save_every=8,
        cutoff=40.0, spacing=0.1, window=20.0, tracks=("gaussian", "two-cluster", "cauchy"),
        L=20.0, N=800, cauchy_L=200.0, cauchy_N=8000, oracle_N=10000, picard_iterations=3,
        slope_low=-0.65, slope_high=-0.35, cluster_slope_max=-0.25, m_check=2.0),
    "noise-decay": dict(
        ns=(64, 256, 1024, 4096), replicas=50, m=1.6, T=1.0, dt=0.015625, save_count=64,
        h_center=0.5, h_width=1.0, kernel="tanh", method="ito-sum", slope_target=-1.0, slope_tol=0.25),
    "uniform-probe": dict(
        ns=(64, 256, 1024, 4096), replicas=20, m=1.6, T=1.0, dt=0.015625, save_count=64,
        dictionary_size=10, kernel="tanh"),
    "ou-toy": dict(a=1.0, ns=(64, 256, 1024), T=1.0, replicas=2000, steps=128, slope_tol=0.2),
    "gp-ratio": dict(Ts=(1.0, 4.0, 16.0, 64.0), replicas=400, steps=2048, ou_a=1.0, ou_n=64,
                     ou_replicas=1000, ou_steps=1024),
    "sewing-check": dict(frozen_steps=4096, frozen_paths=200, realizations=200, levels=4, alpha=0.4,
                         refinement=16, grid_steps=768, T=1.0, h_center=0.5, h_width=1.0, frozen_tol=1e-3,
                         min_ratio=1.1, norm_grid_steps=256, norm_paths=4),
    "semigroup-bounds": dict(functions=20, times=30, t_min=1e-3, t_max=1.0, points=20001, m=1.0),
    "resolvent-decay": dict(rhos=(2.0, 8.0, 32.0, 128.0, 512.0), eps=(0.1, 0.25), eta=2.356194490192345,
                            m=1.6, h_width=1.0),
    "mild-residual": dict(L=20.0, N=800, dt=0.015625, T=1.0, nodes=24, tol=5e-3, closed_tol=1e-6),
    "stability": dict(L=20.0, N=800, dt=0.015625, T=1.0, m=1.6, cutoff=40.0, spacing=0.1,
                      eps=(1e-2, 1e-3, 1e-4), slope_tol=0.15),
}

QUICK: dict[str, dict] = {
    "lln-convergence": dict(ns=(50, 200, 800), replicas=8, oracle_N=2000, cauchy_L=100.0, cauchy_N=4000),
    "noise-decay": dict(ns=(32, 128, 512), replicas=12),
    "uniform-probe": dict(ns=(32, 128, 512), replicas=6),
    "ou-toy": dict(replicas=400, steps=64),
    "gp-ratio": dict(replicas=100, steps=512, ou_replicas=200, ou_steps=256),
    "sewing-check": dict(frozen_steps=1024, frozen_paths=50, realizations=50, grid_steps=384),
    "semigroup-bounds": dict(functions=6, times=8, points=4001),
    "resolvent-decay": dict(),
    "mild-residual": dict(N=400),
    "stability": dict(N=400),
}

SECTIONS = ("experiment", "params")
EXPERIMENT_KEYS = {"kind": str, "seed": int, "out": str}


@dataclass
class ExperimentConfig:
    kind: str
    seed: int = 20240607
    out: str = "results"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}")
        merged = dict(DEFAULTS[self.kind])
        for k, v in self.params.items():
            if k not in merged:
                raise ConfigError(f"unknown parameter {k!r} for {self.kind}")
            merged[k] = coerce(v, merged[k], k)
        self.params = merged

    @classmethod
    def default(cls, kind: str, quick: bool = False, **overrides) -> ExperimentConfig:
        params = dict(QUICK.get(kind, {})) if quick else {}
        params.update(overrides)
        return cls(kind, params=params)

    def resolved(self) -> dict:
        return {"kind": self.kind, "seed": self.seed, "out": self.out, "params": dict(self.params)}

    def to_text(self) -> str:
        lines = ["[experiment]", f"kind = {self.kind}", f"seed = {self.seed}", f"out = {self.out}", "",
                 "[params]"]
        for k, v in self.params.items():
            lines.append(f"{k} = {format_value(v)}")
        return "\n".join(lines) + "\n"


def format_value(v) -> str:
    if isinstance(v, (tuple, list)):
        return ", ".join(format_value(x) for x in v)
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _scalar(text, proto, key):
    if isinstance(proto, bool):
        low = str(text).strip().lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {text!r}")
    try:
        if isinstance(proto, int):
            if isinstance(text, float) and not text.is_integer():
                raise ValueError
            return int(text) if not isinstance(text, str) else int(text.strip())
        if isinstance(proto, float):
            return float(text)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: expected {type(proto).__name__}, got {text!r}") from None
    return str(text).strip()


def coerce(value, proto, key):
    """Type ``value`` (text or already typed) like ``proto``."""
    if isinstance(proto, tuple):
        items = value
        if isinstance(value, str):
            items = [x for x in (s.strip() for s in value.split(",")) if x]
        elif not isinstance(value, (list, tuple)):
            items = [value]
        elem = proto[0] if proto else ""
        return tuple(_scalar(x, elem, key) for x in items)
    return _scalar(value, proto, key)


def parse_text(text: str) -> ExperimentConfig:
    section = None
    exp: dict = {}
    params: dict = {}
    for num, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in SECTIONS:
                raise ConfigError(f"line {num}: unknown section [{section}]")
            continue
        if "=" not in line:
            raise ConfigError(f"line {num}: expected key = value")
        if section is None:
            raise ConfigError(f"line {num}: key outside a section")
        key, val = (s.strip() for s in line.split("=", 1))
        target = exp if section == "experiment" else params
        if key in target:
            raise ConfigError(f"line {num}: duplicate key {key!r}")
        if section == "experiment" and key not in EXPERIMENT_KEYS:
            raise ConfigError(f"line {num}: unknown experiment key {key!r}")
        target[key] = val
    if "kind" not in exp:
        raise ConfigError("missing experiment kind")
    return ExperimentConfig(exp["kind"], _scalar(exp.get("seed", 20240607), 0, "seed"),
                            exp.get("out", "results"), params)


def load(path) -> ExperimentConfig:
    with open(path) as fh:
        return parse_text(fh.read())


def from_manifest(data: dict | str) -> ExperimentConfig:
    """Rebuild a config from the ``config`` block of a JSON manifest."""
    if isinstance(data, str):
        data = json.loads(data)
    block = data.get("config", data)
    return ExperimentConfig(block["kind"], int(block["seed"]), block.get("out", "results"), dict(block["params"]))
