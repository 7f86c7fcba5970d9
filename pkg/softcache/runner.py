import csv
import logging

from concurrent.futures import ProcessPoolExecutor
from itertools import islice
from pathlib import Path
from typing import Iterator, List, Tuple, Union

from .classes import ScenarioConfig, SweepRow
from .simkit import evaluate_point, order_rows, sweep_values


def _run_job(job: Tuple[ScenarioConfig, object, int]) -> List[SweepRow]:
    config, value, seed = job
    return evaluate_point(config, value, seed)


class SweepRunner:
    """Runs every (sweep value, seed) job on a bounded worker pool.

    Jobs complete in submission order, so the emitted rows are ordered by
    (value, scheme, seed) whatever the number of workers.
    """

    def __init__(self, config: ScenarioConfig, threads: int = 1):
        self.config = config
        self.threads = max(1, int(threads))

        self.logger = self._setup_logging()

    def _setup_logging(self) -> logging.Logger:
        logger = logging.getLogger(f"softcache.sweep.{self.config.name}")
        logger.setLevel(
            self.config.logging_level if self.config.enable_logging else logging.CRITICAL
        )

        return logger

    def jobs(self) -> List[Tuple[ScenarioConfig, object, int]]:
        return [(self.config, value, seed) for value in sweep_values(self.config) for seed in self.config.seeds]

    def _results(self) -> Iterator[List[SweepRow]]:
        jobs = self.jobs()
        self.logger.info(
            f"Sweep {self.config.name}: {len(jobs)} jobs x {len(self.config.schemes)} schemes "
            f"on {self.threads} worker(s)"
        )

        if self.threads == 1 or len(jobs) == 1:
            yield from map(_run_job, jobs)
            return

        with ProcessPoolExecutor(max_workers=self.threads) as executor:
            yield from executor.map(_run_job, jobs)

    def batches(self) -> Iterator[List[SweepRow]]:
        """Ordered rows, one batch per sweep value."""
        results = self._results()
        per_value = len(self.config.seeds)

        for _ in sweep_values(self.config):
            rows = [row for job_rows in islice(results, per_value) for row in job_rows]
            yield order_rows(rows, self.config)

    def rows(self) -> List[SweepRow]:
        return [row for batch in self.batches() for row in batch]

    def run(self, out_csv: Union[str, Path]) -> int:
        """Stream rows to ``out_csv``; only complete rows ever reach the file."""
        written = failed = 0

        with open(out_csv, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(SweepRow.header())
            f.flush()

            for batch in self.batches():
                for row in batch:
                    writer.writerow(row.to_record())
                    written += 1
                    failed += row.failed
                f.flush()

                self.logger.info(f"{batch[0].axis}={batch[0].value}: {len(batch)} row(s) written")

        if failed:
            self.logger.warning(f"{failed} of {written} sweep rows recorded errors")

        return written
