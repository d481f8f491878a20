# ===== apps/harness/admin.py =====
from django.contrib import admin
from .models import ExperimentRun, IterationMetric

@admin.register(ExperimentRun)
class ExperimentRunAdmin(admin.ModelAdmin):
    list_display = ['scenario', 'kind', 'seed', 'routing', 'recovery', 'status', 'created_at', 'finished_at']
    list_filter = ['kind', 'status', 'routing', 'recovery']
    search_fields = ['scenario', 'trace_hash']
    readonly_fields = ['created_at', 'finished_at', 'trace_hash']

@admin.register(IterationMetric)
class IterationMetricAdmin(admin.ModelAdmin):
    list_display = ['run', 'iteration', 'time_per_microbatch', 'throughput', 'wasted_compute_time']
    list_filter = ['run__scenario']
    raw_id_fields = ['run']
