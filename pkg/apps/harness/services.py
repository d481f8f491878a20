# ===== apps/harness/services.py =====
import logging
import math

from django.db import transaction
from django.utils import timezone

from .experiments import ExperimentResult
from .models import ExperimentRun, IterationMetric
from .scenarios import ScenarioConfig

logger = logging.getLogger(__name__)


def _json_safe(value):
    """JSONField rejects inf/nan; store them as null"""
    if isinstance(value, float) and (math.isinf(value) or math.isnan(value)):
        return None
    if isinstance(value, dict):
        return {str(k): _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    return value


class RunService:
    """Stores runs and their per-iteration metrics"""

    # ============================================================
    # LIFECYCLE
    # ============================================================

    def start(self, config: ScenarioConfig) -> ExperimentRun:
        run = ExperimentRun.objects.create(
            scenario=config.name,
            kind=config.kind,
            seed=config.seed,
            routing=config.routing,
            recovery=config.recovery,
            addition=config.addition,
            config=_json_safe(config.as_dict()),
        )
        logger.info(f"Started run {run.id} ({config.name} seed={config.seed})")
        return run

    def fail(self, run: ExperimentRun, error) -> ExperimentRun:
        run.status = 'failed'
        run.error = str(error)
        run.finished_at = timezone.now()
        run.save(update_fields=['status', 'error', 'finished_at'])
        logger.warning(f"Run {run.id} failed: {error}")
        return run

    def complete(self, run: ExperimentRun, summary: dict, trace_hash: str = '') -> ExperimentRun:
        run.status = 'completed'
        run.summary = _json_safe(summary)
        run.trace_hash = trace_hash
        run.finished_at = timezone.now()
        run.save(update_fields=['status', 'summary', 'trace_hash', 'finished_at'])
        return run

    # ============================================================
    # TRAINING RESULTS
    # ============================================================

    def record(self, run: ExperimentRun, result: ExperimentResult) -> ExperimentRun:
        """Iteration rows plus the aggregate; a failed simulation still keeps what it measured"""
        with transaction.atomic():
            IterationMetric.objects.bulk_create([
                IterationMetric(
                    run=run,
                    iteration=m.iteration,
                    duration=m.duration,
                    time_per_microbatch=m.time_per_microbatch,
                    throughput=m.throughput,
                    wasted_compute_time=m.wasted_compute_time,
                    communication_time=m.communication_time,
                    protocol_messages=m.protocol_messages,
                    recovery=m.recovery,
                )
                for m in result.report.iterations
            ])
            if result.failed:
                run.summary = _json_safe(result.summary())
                run.trace_hash = result.trace_hash
                run.save(update_fields=['summary', 'trace_hash'])
                return self.fail(run, result.failure)
            return self.complete(run, result.summary(), result.trace_hash)


run_service = RunService()
