"""Named ablation configurations (Baseline, +RE, +BN, +LAP, +LGA, +CB)."""

from __future__ import annotations

from dataclasses import dataclass

from lgareid.pipeline.model import ModelConfig


@dataclass(frozen=True)
class Ablation:
    aggregation: str
    bn_neck: bool
    random_erase: bool
    class_balanced: bool


ABLATIONS = {
    "baseline": Ablation("none", False, False, False),
    "baseline+re": Ablation("none", False, True, False),
    "baseline+re+bn": Ablation("none", True, True, False),
    "baseline+re+bn+lap": Ablation("lap", True, True, False),
    "baseline+re+bn+lga": Ablation("lga", True, True, False),
    "baseline+re+bn+lga+cb": Ablation("lga", True, True, True),
}


def apply_ablation(name: str, cfg: ModelConfig, beta: float, erase_p: float = 0.5) -> tuple[ModelConfig, float]:
    """Return the model config and class-balance beta for ablation ``name``.

    Rows without CB keep the same loss with ``beta = 0``.
    """
    key = name.lower().replace(" ", "")
    if key not in ABLATIONS:
        raise ValueError(f"unknown ablation {name!r}; expected one of {list(ABLATIONS)}")
    a = ABLATIONS[key]
    cfg = cfg.evolve(aggregation=a.aggregation, bn_neck=a.bn_neck, erase_p=erase_p if a.random_erase else 0.0)
    return cfg, beta if a.class_balanced else 0.0
