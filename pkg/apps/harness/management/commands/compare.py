# ===== apps/harness/management/commands/compare.py =====
import logging

from django.core.management.base import BaseCommand, CommandError

from apps.harness.cli import add_scenario_arguments, load_config, output_dir, seeds_for
from apps.harness.experiments import compare, mean_metric
from apps.harness.export import emit_csv, emit_plotdata, metrics_frame
from apps.harness.scenarios import ROUTING_CHOICES, TRAINING
from apps.harness.services import run_service

logger = logging.getLogger(__name__)

METRICS = ['time_per_microbatch', 'throughput', 'wasted_compute_time', 'communication_time']


class Command(BaseCommand):
    help = 'Run one scenario under several routing modes over the same seeds'

    def add_arguments(self, parser):
        add_scenario_arguments(parser)
        parser.add_argument('--routing', default='gwtf,greedy',
                            help='Comma-separated routing modes; greedy runs with pipeline-restart recovery')
        parser.add_argument('--no-db', action='store_true')

    def handle(self, *args, **options):
        routings = [r.strip() for r in options['routing'].split(',') if r.strip()]
        unknown = [r for r in routings if r not in ROUTING_CHOICES]
        if unknown:
            raise CommandError(f"Unknown routing mode(s): {', '.join(unknown)}")

        config = load_config(options)
        if config.kind != TRAINING:
            raise CommandError(f"compare needs a training scenario, '{config.name}' is a {config.kind} scenario")
        seeds = seeds_for(config, options)
        out = output_dir(options)

        results = compare(config, routings, seeds)
        reports, series, failures = [], {}, []
        for routing, runs in results.items():
            for result in runs:
                reports.append(result.report)
                if not options['no_db']:
                    run_service.record(run_service.start(result.config), result)
                if result.failed:
                    failures.append(f"{routing} seed={result.config.seed}: {result.failure}")

            frame = metrics_frame([r.report for r in runs])
            per_iteration = frame[frame['row_type'] == 'iteration'].groupby('iteration')[METRICS].mean()
            for metric in METRICS:
                series[f'{metric}_{routing}'] = list(per_iteration[metric].dropna().items())

            summary = ", ".join(f"{m}={mean_metric(runs, m)}" for m in METRICS)
            self.stdout.write(f"{config.name} [{routing}] over {len(seeds)} seed(s): {summary}")

        emit_csv(reports, out / f'{config.name}-compare.csv')
        emit_plotdata(series, out / f'{config.name}-compare.plot.csv')
        if failures:
            raise CommandError(f"{len(failures)} failed run(s): " + "; ".join(failures))
