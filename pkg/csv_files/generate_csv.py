"""Generate convenience and reference CSV files for the ``estimate`` command."""

import csv
from pathlib import Path

import numpy as np

from quasirand.models.models import Overlap
from quasirand.services.simlab import draw_samples, generate_population, replicate_seed, scenario_config


def generate_test_csv(
    directory: str | Path = "csv",
    *,
    scenario: str = "S5",
    overlap: Overlap | str = Overlap.HIGH,
    seed: int = 0,
    include_pi_r: bool = True,
) -> tuple[Path, Path]:
    """Write convenience.csv and reference.csv drawn from a simulated scenario population.

    ``include_pi_r=False`` leaves the pi_r column out of the convenience file, which is
    what a user without reference-design probabilities for convenience units would have.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    config = scenario_config(scenario, overlap, reps=1, master_seed=seed)
    rng = np.random.default_rng(replicate_seed(seed, f"{config.label}:fixture", 0))
    pop = generate_population(config.N, config.beta_c0, config.beta_c1, config.beta_r, rng, f_r=config.f_r_target)
    s_c, s_r = draw_samples(pop, config, rng)

    conv_path = directory / "convenience.csv"
    with conv_path.open("w", newline="", encoding="utf-8") as csvfile:
        fieldnames = ["y", "x1", *(["pi_r"] if include_pi_r else [])]
        writer = csv.DictWriter(csvfile, fieldnames=fieldnames)
        writer.writeheader()
        for i in s_c:
            row = {"y": repr(float(pop.y[i])), "x1": repr(float(pop.x[i, 0]))}
            if include_pi_r:
                row["pi_r"] = repr(float(pop.pi_r_true[i]))
            writer.writerow(row)

    ref_path = directory / "reference.csv"
    with ref_path.open("w", newline="", encoding="utf-8") as csvfile:
        writer = csv.DictWriter(csvfile, fieldnames=["x1", "pi_r"])
        writer.writeheader()
        for i in s_r:
            writer.writerow({"x1": repr(float(pop.x[i, 0])), "pi_r": repr(float(pop.pi_r_true[i]))})

    print(f"Generated {s_c.size} convenience rows in {conv_path}")
    print(f"Generated {s_r.size} reference rows in {ref_path}")
    return conv_path, ref_path


if __name__ == "__main__":
    generate_test_csv("csv", scenario="S5", overlap=Overlap.LOW)
