# apps/harness/models.py
from django.db import models
import uuid


class ExperimentRun(models.Model):
    """One (scenario, seed, mode) simulator run"""

    KINDS = [
        ('training', 'Training'),
        ('flow', 'Flow test'),
        ('addition', 'Node addition'),
        ('optimality', 'Optimality'),
    ]

    STATUSES = [
        ('running', 'Running'),
        ('completed', 'Completed'),
        ('failed', 'Failed'),
    ]

    id = models.UUIDField(primary_key=True, default=uuid.uuid4, editable=False)

    scenario = models.CharField(max_length=100)
    kind = models.CharField(max_length=20, choices=KINDS)
    seed = models.IntegerField(default=0)

    routing = models.CharField(max_length=20, default='gwtf')
    recovery = models.CharField(max_length=20, default='gwtf')
    addition = models.CharField(max_length=20, default='gwtf')

    # validated ScenarioConfig as a plain dict
    config = models.JSONField(default=dict)

    status = models.CharField(max_length=20, choices=STATUSES, default='running')
    error = models.TextField(blank=True, default='')
    trace_hash = models.CharField(max_length=64, blank=True, default='')

    # aggregate metrics, flow-test costs or addition improvements depending on kind
    summary = models.JSONField(default=dict)

    created_at = models.DateTimeField(auto_now_add=True)
    finished_at = models.DateTimeField(null=True, blank=True)

    class Meta:
        db_table = 'experiment_runs'
        indexes = [
            models.Index(fields=['scenario', 'seed'], name='run_scenario_seed_idx'),
            models.Index(fields=['status'], name='run_status_idx'),
        ]
        ordering = ['-created_at']

    def __str__(self):
        return f"{self.scenario} seed={self.seed} {self.routing}/{self.recovery} - {self.status}"


class IterationMetric(models.Model):
    """Per-iteration metrics of a training run"""

    id = models.UUIDField(primary_key=True, default=uuid.uuid4, editable=False)
    run = models.ForeignKey(
        ExperimentRun,
        on_delete=models.CASCADE,
        related_name='iterations'
    )

    iteration = models.IntegerField()
    duration = models.FloatField(default=0.0)
    time_per_microbatch = models.FloatField(null=True, blank=True)
    throughput = models.IntegerField(default=0)
    wasted_compute_time = models.FloatField(default=0.0)
    communication_time = models.FloatField(default=0.0)
    protocol_messages = models.IntegerField(default=0)
    recovery = models.JSONField(default=dict)

    class Meta:
        db_table = 'iteration_metrics'
        unique_together = ('run', 'iteration')
        ordering = ['run', 'iteration']

    def __str__(self):
        return f"{self.run_id} iteration {self.iteration}"
