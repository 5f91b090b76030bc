"""Run configuration: flat key=value text files with CLI overrides.

Every training/eval run serializes the exact resolved config into its
output directory, so reruns are reproducible from that file alone. The
``ASSEMBLY_SEED`` environment variable overrides the configured seed.
"""

import os
from dataclasses import dataclass, fields
from pathlib import Path


@dataclass
class RunConfig:
    dataset: str = ""
    out_dir: str = "runs/default"
    m: int = 32
    f1: int = 64              # view bottleneck width (seg)
    f2: int = 32              # part feature width
    f3: int = 32              # pose-stage encoder width
    dec_hidden: int = 64
    pose_hidden: int = 96
    pn_hidden: int = 16
    patch: int = 4
    lambda1: float = 1.0      # translation
    lambda2: float = 20.0     # rotation chamfer
    lambda3: float = 1.0      # rotation l2
    lambda4: float = 1.0      # assembly chamfer
    tau: float = 0.1
    lr: float = 1e-3
    seg_epochs: int = 20
    pose_epochs: int = 30
    k_neighbors: int = 5
    seed: int = 0
    ablate: str = ""          # comma-separated ablation flags
    jobs: int = 1

    def ablate_flags(self):
        return tuple(f for f in self.ablate.split(",") if f)

    def resolve_env(self):
        env_seed = os.environ.get("ASSEMBLY_SEED")
        if env_seed is not None:
            self.seed = int(env_seed)
        return self


_BOOL = {"true": True, "false": False}


def _parse_value(kind, raw):
    if kind is bool:
        return _BOOL[raw.lower()]
    return kind(raw)


def load_config(path):
    cfg = RunConfig()
    spec = {f.name: f.type for f in fields(RunConfig)}
    types = {"int": int, "float": float, "str": str, "bool": bool}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, raw = (part.strip() for part in line.split("=", 1))
            if key not in spec:
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
            kind = spec[key]
            kind = types[kind] if isinstance(kind, str) else kind
            setattr(cfg, key, _parse_value(kind, raw))
    return cfg


def save_config(cfg, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = []
    for f in fields(RunConfig):
        val = getattr(cfg, f.name)
        lines.append(f"{f.name} = {val!r}" if isinstance(val, float) else f"{f.name} = {val}")
    path.write_text("\n".join(lines) + "\n")


def apply_overrides(cfg, overrides):
    """Apply 'key=value' strings from the command line."""
    spec = {f.name: f.type for f in fields(RunConfig)}
    types = {"int": int, "float": float, "str": str, "bool": bool}
    for item in overrides:
        if "=" not in item:
            raise ValueError(f"override {item!r} is not key=value")
        key, raw = (part.strip() for part in item.split("=", 1))
        if key not in spec:
            raise ValueError(f"unknown config key {key!r}")
        kind = spec[key]
        kind = types[kind] if isinstance(kind, str) else kind
        setattr(cfg, key, _parse_value(kind, raw))
    return cfg
