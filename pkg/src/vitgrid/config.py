"""Run configuration: a JSON schema validated against module preconditions.

Schema (keys beyond these are rejected so typos fail loudly):

    {
      "encoder": {
        "depth": int, "dim": int, "heads": int, "mlp_ratio": float,
        "patch": int, "plan": [[index, "avg"|"ca"|"pixel_unshuffle"], ...],
        "pos_encoding": "sinusoidal_2d" | "none",   (optional)
        "channels": int                              (optional, default 3)
      },
      "seed": int,                                   (optional, default 0)
      "input_size": [height, width],                 (optional)
      "llm": {"dim": int, "depth": int, "mlp_ratio": float},  (optional)
      "sweep": {"plans": [{"id": str, "plan": [[index, kind], ...]}, ...]}
    }
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .costmodel import LlmProxy
from .encoder import EncoderConfig, CompressionPlan
from .errors import ValidationError

_TOP_KEYS = {"encoder", "seed", "input_size", "llm", "sweep"}
_ENCODER_KEYS = {"depth", "dim", "heads", "mlp_ratio", "patch", "plan",
                 "pos_encoding", "channels"}


@dataclass(frozen=True)
class RunConfig:
    encoder: EncoderConfig
    seed: int = 0
    input_size: Optional[tuple] = None
    llm: LlmProxy = field(default_factory=LlmProxy)
    sweep_plans: tuple = ()


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ValidationError(message)


def _parse_plan(raw, where: str) -> CompressionPlan:
    _require(isinstance(raw, list), f"{where}: plan must be a list of [index, kind] pairs")
    entries = []
    for entry in raw:
        _require(
            isinstance(entry, (list, tuple)) and len(entry) == 2,
            f"{where}: each plan entry must be [index, kind], got {entry!r}",
        )
        entries.append((int(entry[0]), str(entry[1])))
    return CompressionPlan(tuple(entries))


def parse_run_config(doc: dict) -> RunConfig:
    _require(isinstance(doc, dict), "config root must be a JSON object")
    unknown = set(doc) - _TOP_KEYS
    _require(not unknown, f"unknown config keys: {sorted(unknown)}")
    _require("encoder" in doc, "config is missing the 'encoder' section")

    enc = doc["encoder"]
    _require(isinstance(enc, dict), "'encoder' must be an object")
    unknown = set(enc) - _ENCODER_KEYS
    _require(not unknown, f"unknown encoder keys: {sorted(unknown)}")
    for key in ("depth", "dim", "heads", "mlp_ratio", "patch"):
        _require(key in enc, f"encoder config is missing {key!r}")
    encoder = EncoderConfig(
        depth=int(enc["depth"]),
        dim=int(enc["dim"]),
        heads=int(enc["heads"]),
        mlp_ratio=float(enc["mlp_ratio"]),
        patch=int(enc["patch"]),
        plan=_parse_plan(enc.get("plan", []), "encoder"),
        pos_encoding=str(enc.get("pos_encoding", "sinusoidal_2d")),
        channels=int(enc.get("channels", 3)),
    )

    input_size = None
    if "input_size" in doc:
        raw = doc["input_size"]
        _require(
            isinstance(raw, (list, tuple)) and len(raw) == 2,
            "input_size must be [height, width]",
        )
        input_size = (int(raw[0]), int(raw[1]))
        _require(min(input_size) >= 1, "input_size entries must be >= 1")

    llm = LlmProxy()
    if "llm" in doc:
        raw = doc["llm"]
        _require(isinstance(raw, dict), "'llm' must be an object")
        llm = LlmProxy(
            dim=int(raw.get("dim", llm.dim)),
            depth=int(raw.get("depth", llm.depth)),
            mlp_ratio=float(raw.get("mlp_ratio", llm.mlp_ratio)),
        )

    sweep_plans = []
    if "sweep" in doc:
        raw = doc["sweep"]
        _require(isinstance(raw, dict) and "plans" in raw, "'sweep' must contain 'plans'")
        seen = set()
        for entry in raw["plans"]:
            _require(
                isinstance(entry, dict) and "id" in entry and "plan" in entry,
                "each sweep plan needs 'id' and 'plan'",
            )
            pid = str(entry["id"])
            _require(pid not in seen, f"duplicate sweep plan id {pid!r}")
            seen.add(pid)
            sweep_plans.append((pid, _parse_plan(entry["plan"], f"sweep plan {pid!r}")))

    return RunConfig(
        encoder=encoder,
        seed=int(doc.get("seed", 0)),
        input_size=input_size,
        llm=llm,
        sweep_plans=tuple(sweep_plans),
    )


def load_run_config(path) -> RunConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read config {path}: {exc}") from exc
    return parse_run_config(doc)
