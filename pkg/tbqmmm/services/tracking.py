import json
import logging
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Mapping, Optional

from ..core.config import config

logger = logging.getLogger(__name__)

try:
    import mlflow
    MLFLOW_AVAILABLE = True
except ImportError:
    mlflow = None
    MLFLOW_AVAILABLE = False


class IterationLog:
    """JSON-lines stream of per-iteration solver records."""

    def __init__(self, log_path: Optional[str] = None, enabled: bool = True):
        self.enabled = enabled
        self.log_path = Path(log_path or config.iteration_log_path)
        if self.enabled:
            self.log_path.parent.mkdir(parents=True, exist_ok=True)

    def log(self, record: Dict[str, Any]) -> None:
        """Append one record, stamped with the current time."""
        if not self.enabled:
            return
        record = dict(record)
        record['timestamp'] = datetime.now().isoformat()
        with open(self.log_path, 'a', encoding='utf-8') as f:
            f.write(json.dumps(record, ensure_ascii=False, default=float) + '\n')

    def read(self) -> list:
        if not self.log_path.exists():
            return []
        with open(self.log_path, 'r', encoding='utf-8') as f:
            return [json.loads(line) for line in f if line.strip()]


def _safe_mlflow_log(log_func, *args, **kwargs) -> None:
    """Call an mlflow logging function, downgrading failures to warnings."""
    try:
        log_func(*args, **kwargs)
    except Exception as e:
        logger.warning("MLflow logging failed: %s", e)


class StudyTracker:
    """Optional mlflow tracking of convergence studies."""

    def __init__(self, tracking_uri: Optional[str] = None, experiment_name: Optional[str] = None):
        self._uri = tracking_uri if tracking_uri is not None else config.mlflow_tracking_uri
        self._experiment = experiment_name or config.mlflow_experiment_name
        self._run = None
        self.enabled = bool(self._uri) and MLFLOW_AVAILABLE
        if self._uri and not MLFLOW_AVAILABLE:
            logger.warning("MLFLOW_TRACKING_URI is set but mlflow is not installed - tracking disabled")
        if self.enabled:
            try:
                mlflow.set_tracking_uri(self._uri)
                mlflow.set_experiment(self._experiment)
            except Exception as e:
                logger.warning("MLflow connection failed: %s - tracking disabled", e)
                self.enabled = False

    def __enter__(self) -> 'StudyTracker':
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        self.end(failed=exc_type is not None)

    def start(self, run_name: str, params: Mapping[str, Any]) -> None:
        if not self.enabled:
            return
        try:
            self._run = mlflow.start_run(run_name=run_name)
        except Exception as e:
            logger.warning("MLflow run could not start: %s - tracking disabled", e)
            self.enabled = False
            return
        for key, value in params.items():
            _safe_mlflow_log(mlflow.log_param, key, value)

    def log_row(self, step: int, metrics: Mapping[str, float]) -> None:
        if not self.enabled:
            return
        for key, value in metrics.items():
            if value is not None:
                _safe_mlflow_log(mlflow.log_metric, key, float(value), step=step)

    def log_summary(self, metrics: Mapping[str, float]) -> None:
        if not self.enabled:
            return
        for key, value in metrics.items():
            if value is not None:
                _safe_mlflow_log(mlflow.log_metric, key, float(value))

    def end(self, failed: bool = False) -> None:
        if self.enabled and self._run is not None:
            _safe_mlflow_log(mlflow.end_run, status="FAILED" if failed else "FINISHED")
        self._run = None
