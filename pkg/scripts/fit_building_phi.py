"""Regenerate the default building coefficient table.

No measured internal temperatures are available, so the shipped table is
fitted on synthetic data: exogenous inputs are simulated from the
five-input VAR(2) in ``dynsobol/data/building_var2.json`` and the
internal temperature is produced by a known generating table plus white
noise.  The least-squares fit of that series is written to
``dynsobol/data/building_phi.json``.

    python3 scripts/fit_building_phi.py [--check]
"""

from __future__ import annotations

import argparse
import json
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from dynsobol.ingest_fit import fit_building_phi, synthetic_building_data
from dynsobol.models import BUILDING_CHANNELS, BuildingPhi
from dynsobol.var_process import VarModel

SEED = 20240611
N_STEPS = 20_000
NOISE_SD = 0.05

# generating table: outdoor temperature couples most strongly, the floor
# below barely matters
GENERATOR = BuildingPhi(
    exogenous=np.array([
        # below  above  off   cor   ext
        [0.01, 0.03, 0.06, 0.08, 0.12],   # lag 1
        [0.00, 0.01, 0.02, 0.03, 0.05],   # lag 2
    ]),
    internal=[0.6, 0.1],
    channels=BUILDING_CHANNELS,
)

TARGET = Path(__file__).resolve().parents[1] / "src" / "dynsobol" / "data" / "building_phi.json"


def fitted_table() -> BuildingPhi:
    doc = json.loads(resources.files("dynsobol.data").joinpath("building_var2.json").read_text())
    inputs = VarModel.from_dict(doc)
    u, y = synthetic_building_data(inputs, GENERATOR, N_STEPS, SEED, noise_sd=NOISE_SD)
    phi = fit_building_phi(u, y, lags=2)
    notes = (
        f"least-squares fit on {N_STEPS} synthetic hourly steps; inputs simulated from "
        f"building_var2.json (seed {SEED}), internal temperature from a generating table "
        f"with internal lags {GENERATOR.internal.tolist()} plus N(0, {NOISE_SD}^2) noise; "
        "regenerate with scripts/fit_building_phi.py"
    )
    rounded = BuildingPhi(np.round(phi.exogenous, 6), np.round(phi.internal, 6), np.zeros(2), phi.channels, notes)
    return rounded


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--check", action="store_true", help="compare against the shipped file instead of writing it")
    args = ap.parse_args(argv)
    doc = fitted_table().to_dict()
    text = json.dumps(doc, indent=2) + "\n"
    if args.check:
        same = TARGET.exists() and TARGET.read_text() == text
        print("up to date" if same else "differs from shipped table")
        return 0 if same else 1
    TARGET.write_text(text)
    print(f"wrote {TARGET}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
