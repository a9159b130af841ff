import math
from collections import defaultdict
from typing import Callable, DefaultDict, Dict


class MetricLogger:
    """Accumulates per-run statistics and logs running and windowed means every `window_size` runs.

    Non-finite values (e.g. the terminal error of a diverged run) are counted separately and kept
    out of the means.
    """

    def __init__(
        self,
        window_size: int = 100,
        quiet: bool = False,
        log_fn: Callable[[str], None] = print,
        metric_name_prefix: str = "",
    ):
        self._log_fn = log_fn
        self._metric_name_prefix = metric_name_prefix
        self._window_size = window_size
        self._quiet = quiet

        self._run_counter = 0
        self._metrics: DefaultDict[str, float] = defaultdict(float)
        self._counts: DefaultDict[str, int] = defaultdict(int)
        self._windowed_metrics: DefaultDict[str, float] = defaultdict(float)
        self._windowed_counts: DefaultDict[str, int] = defaultdict(int)
        self._non_finite: DefaultDict[str, int] = defaultdict(int)

    def _format(self, sums: Dict[str, float], counts: Dict[str, int]) -> str:
        return ", ".join(
            f"{self._metric_name_prefix}{name}: {total / max(counts[name], 1):.5f}"
            for name, total in sums.items()
        )

    def get_mean_metric_value(self, metric_name: str) -> float:
        count = self._counts[metric_name]
        return self._metrics[metric_name] / count if count > 0 else float("nan")

    def get_non_finite_count(self, metric_name: str) -> int:
        return self._non_finite[metric_name]

    @property
    def num_runs(self) -> int:
        return self._run_counter

    @property
    def metric_overview(self) -> str:
        return self._format(self._metrics, self._counts)

    def log_metrics(self, **kwargs: float) -> None:
        for metric_name, metric_val in kwargs.items():
            metric_val = float(metric_val)
            if not math.isfinite(metric_val):
                self._non_finite[metric_name] += 1
                continue
            self._metrics[metric_name] += metric_val
            self._counts[metric_name] += 1
            self._windowed_metrics[metric_name] += metric_val
            self._windowed_counts[metric_name] += 1

        self._run_counter += 1
        if self._run_counter % self._window_size == 0:
            if not self._quiet:
                window = self._format(self._windowed_metrics, self._windowed_counts)
                self._log_fn(
                    f" Run {self._run_counter:05d}"
                    f" || Mean so far: {self.metric_overview}"
                    f" || This window: {window}"
                )
            self._windowed_metrics.clear()
            self._windowed_counts.clear()
