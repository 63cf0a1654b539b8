"""Bundled example datasets and the generators for their stand-ins.

Two applications ship with the package: a crossed-design binary mating
experiment (60 females x 60 males, 360 trials) and a beach species
richness survey (9 beaches x 5 stations). When the original tables are
not redistributable the CSVs are synthetic stand-ins with the same
layout, simulated from published PQL estimates. ``provenance(name)``
says which one is installed; a real copy can be dropped in through
``VCGATE_DATA_DIR``.
"""

from __future__ import annotations

import csv
import json
import os
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.special import expit

SALAMANDER_CROSSES = ("R/R", "R/W", "W/W", "W/R")
# female/male population cross -> log-odds used by the stand-in generator
SALAMANDER_BETA = {"R/R": 0.930, "R/W": 0.283, "W/W": 0.903, "W/R": -1.801}
SALAMANDER_SIGMA2 = (1.201, 1.142)

RIKZ_BETA = (1.684, -0.504)
RIKZ_SIGMA2 = 0.492

_SEEDS = {"salamander": 20_061, "rikz": 20_092}


def data_dir() -> Path:
    override = os.environ.get("VCGATE_DATA_DIR")
    if override:
        return Path(override)
    return Path(str(resources.files("vcgate") / "data"))


def data_path(name: str) -> Path:
    return data_dir() / f"{name}.csv"


def config_path(name: str) -> Path:
    return Path(str(resources.files("vcgate") / "data")) / f"{name}_config.json"


def provenance(name: str) -> dict:
    """Provenance record for a bundled dataset (``synthetic`` flag included)."""
    path = data_dir() / "PROVENANCE.json"
    if not path.exists():
        return {"synthetic": False, "source": "user supplied"}
    records = json.loads(path.read_text())
    return records.get(name, {"synthetic": False, "source": "user supplied"})


def salamander_design():
    """Crossed mating design: 3 experiments x 20 females x 6 males each.

    Within an experiment every female meets three males of each population
    and every male meets three females of each population, giving 90
    trials per female/male cross over the whole study.
    """
    rows = []
    for exp in range(3):
        for fpop in "RW":
            for i in range(10):
                for mpop in "RW":
                    shift = 0 if fpop == mpop else 5
                    for k in range(3):
                        j = (i + k + shift) % 10
                        rows.append({
                            "fem_id": f"F{exp}{fpop}{i}",
                            "male_id": f"M{exp}{mpop}{j}",
                            "cross": f"{fpop}/{mpop}",
                            "experiment": exp + 1,
                        })
    return rows


def synthetic_salamander(seed: int = _SEEDS["salamander"]) -> list[dict]:
    rng = np.random.default_rng(seed)
    rows = salamander_design()
    females = sorted({r["fem_id"] for r in rows})
    males = sorted({r["male_id"] for r in rows})
    uf = dict(zip(females, rng.normal(0, np.sqrt(SALAMANDER_SIGMA2[0]), len(females))))
    um = dict(zip(males, rng.normal(0, np.sqrt(SALAMANDER_SIGMA2[1]), len(males))))
    for r in rows:
        eta = SALAMANDER_BETA[r["cross"]] + uf[r["fem_id"]] + um[r["male_id"]]
        r["y"] = int(rng.random() < expit(eta))
    return rows


def synthetic_rikz(seed: int = _SEEDS["rikz"]) -> list[dict]:
    rng = np.random.default_rng(seed)
    u = rng.normal(0, np.sqrt(RIKZ_SIGMA2), 9)
    rows = []
    for beach in range(9):
        nap = np.round(rng.normal(0.3, 1.0, 5), 3)
        for station, x in enumerate(nap):
            mu = np.exp(RIKZ_BETA[0] + RIKZ_BETA[1] * x + u[beach])
            rows.append({"sample": beach * 5 + station + 1, "beach": beach + 1,
                         "NAP": float(x), "richness": int(rng.poisson(mu))})
    return rows


def write_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)


def regenerate_standins(target: Path | None = None) -> None:
    """Rewrite the synthetic CSVs and their provenance records."""
    target = Path(target) if target is not None else data_dir()
    write_csv(synthetic_salamander(), target / "salamander.csv")
    write_csv(synthetic_rikz(), target / "rikz.csv")
    records = {
        "salamander": {
            "synthetic": True,
            "source": "vcgate.datasets.synthetic_salamander",
            "seed": _SEEDS["salamander"],
            "note": "layout of the 360-trial crossed mating study; outcomes simulated "
                    "from published PQL estimates",
        },
        "rikz": {
            "synthetic": True,
            "source": "vcgate.datasets.synthetic_rikz",
            "seed": _SEEDS["rikz"],
            "note": "layout of the 9-beach x 5-station richness survey; values "
                    "simulated from published PQL estimates",
        },
    }
    (target / "PROVENANCE.json").write_text(json.dumps(records, indent=2, sort_keys=True) + "\n")


if __name__ == "__main__":
    regenerate_standins()
