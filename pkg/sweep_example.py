"""
Softcache Sweep Example

Runs a reduced cache-size sweep and prints the mean hit ratio per scheme.
"""

from softcache import ScenarioConfig
from softcache.runner import SweepRunner
from softcache.simkit import load_sweep

import logging


config = ScenarioConfig.from_dict({
    "name": "capacity_demo",
    "catalog": {"kind": "synthetic", "num_contents": 500, "zipf_exponent": 0.8},
    "utility": {"kind": "sch1", "mean_degree": 4},
    "network": {"num_cells": 20, "num_users": 50},
    "sweep": {"axis": "capacity", "values": [2, 5, 10]},
    "requests": 5000,
    "seeds": [0, 1],
    "lazy": True,
    "enable_logging": True,
    "logging_level": logging.INFO
})


if __name__ == "__main__":
    logging.basicConfig(level=logging.INFO)

    runner = SweepRunner(config, threads=2)
    runner.run("capacity_demo.csv")

    table = load_sweep("capacity_demo.csv")
    print(table.groupby(["value", "scheme"])[["objective", "sim_hit_ratio"]].mean().unstack("scheme"))
