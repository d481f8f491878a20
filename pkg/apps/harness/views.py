# ===== apps/harness/views.py =====

from rest_framework.decorators import api_view
from rest_framework.response import Response
from rest_framework import status

import logging

from .models import ExperimentRun
from .serializers import ExperimentRunDetailSerializer, ExperimentRunSerializer, IterationMetricSerializer

logger = logging.getLogger(__name__)


# ============================================================
# RUNS
# ============================================================

@api_view(["GET"])
def list_runs(request):
    runs = ExperimentRun.objects.all()

    scenario = request.GET.get("scenario")
    if scenario:
        runs = runs.filter(scenario=scenario)

    run_status = request.GET.get("status")
    if run_status:
        runs = runs.filter(status=run_status)

    try:
        limit = int(request.GET.get("limit", 100))
    except ValueError:
        logger.warning(f"Bad limit parameter: {request.GET.get('limit')}")
        return Response({"error": "limit must be an integer"}, status=status.HTTP_400_BAD_REQUEST)

    return Response(ExperimentRunSerializer(runs[:max(limit, 0)], many=True).data)


@api_view(["GET"])
def get_run(request, run_id):
    run = ExperimentRun.objects.filter(id=run_id).first()
    if run is None:
        return Response({"error": "Run not found"}, status=status.HTTP_404_NOT_FOUND)
    return Response(ExperimentRunDetailSerializer(run).data)


# ============================================================
# ITERATIONS
# ============================================================

@api_view(["GET"])
def get_run_iterations(request, run_id):
    run = ExperimentRun.objects.filter(id=run_id).first()
    if run is None:
        return Response({"error": "Run not found"}, status=status.HTTP_404_NOT_FOUND)
    return Response(IterationMetricSerializer(run.iterations.all(), many=True).data)
