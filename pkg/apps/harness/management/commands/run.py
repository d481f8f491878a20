# ===== apps/harness/management/commands/run.py =====
import json
import logging
import statistics

import pandas as pd
from django.core.management.base import BaseCommand, CommandError

from apps.harness.cli import add_scenario_arguments, load_config, output_dir, seeds_for
from apps.harness.experiments import OPTIMAL, run_addition_test, run_experiment, run_flow_test, run_oracle
from apps.harness.export import cost_curve_series, emit_csv, emit_plotdata, improvement_series, report_series
from apps.harness.scenarios import ADDITION, FLOW, OPTIMALITY
from apps.harness.services import run_service

logger = logging.getLogger(__name__)


class Command(BaseCommand):
    help = 'Run a canned scenario and write metrics CSV and plot data'

    def add_arguments(self, parser):
        add_scenario_arguments(parser)
        parser.add_argument('--no-db', action='store_true', help='Do not store run records')

    def handle(self, *args, **options):
        config = load_config(options)
        out = output_dir(options)
        seeds = seeds_for(config, options)
        self.persist = not options['no_db']

        if config.kind == FLOW:
            self.flow_tests(config, seeds, out)
        elif config.kind == ADDITION:
            self.addition_tests(config, seeds, out)
        elif config.kind == OPTIMALITY:
            self.optimality(config, seeds, out)
        else:
            self.training(config, seeds, out)

    # ============================================================
    # TRAINING
    # ============================================================

    def training(self, config, seeds, out):
        reports, series, failures = [], {}, []
        for seed in seeds:
            seeded = config.replace(seed=seed)
            run = run_service.start(seeded) if self.persist else None
            try:
                result = run_experiment(seeded)
            except Exception as e:
                logger.exception(f"Run of '{config.name}' seed={seed} crashed")
                if run is not None:
                    run_service.fail(run, e)
                raise CommandError(f"Run of '{config.name}' seed={seed} crashed: {e}")
            if run is not None:
                run_service.record(run, result)
            reports.append(result.report)
            series.update(report_series(result.report, 'time_per_microbatch', f'seed{seed}'))
            if result.failed:
                failures.append(f"seed={seed}: {result.failure}")
            self.stdout.write(f"{config.name} seed={seed}: {json.dumps(result.summary(), default=str)}")

        emit_csv(reports, out / f'{config.name}.csv')
        emit_plotdata(series, out / f'{config.name}.plot.csv')
        if failures:
            raise CommandError(f"{len(failures)} failed run(s): " + "; ".join(failures))
        self.stdout.write(self.style.SUCCESS(f"Wrote results for {len(seeds)} seed(s) to {out}"))

    # ============================================================
    # FLOW / ADDITION / OPTIMALITY
    # ============================================================

    def _store(self, config, seed, summary):
        if self.persist:
            run_service.complete(run_service.start(config.replace(seed=seed)), summary)

    def flow_tests(self, config, seeds, out):
        rows, series = [], {}
        for seed in seeds:
            result = run_flow_test(config, seed)
            rows.append(result.as_dict())
            series.update(cost_curve_series(result.cost_curve, f'seed{seed}'))
            self._store(config, seed, result.as_dict())
            self.stdout.write(f"{config.name} seed={seed}: gwtf={result.gwtf_cost:.1f} "
                              f"greedy={result.greedy_cost:.1f} oracle={result.oracle_cost:.1f} "
                              f"flows={result.gwtf_flows}/{result.oracle_flows} oracle_ratio={result.oracle_ratio} "
                              f"steady_round={result.steady_round}")
        pd.DataFrame(rows).to_csv(out / f'{config.name}.csv', index=False)
        emit_plotdata(series, out / f'{config.name}.plot.csv')

    def addition_tests(self, config, seeds, out):
        rows, per_method = [], {}
        for seed in seeds:
            result = run_addition_test(config, seed)
            improvements = result.improvements
            rows.append({'seed': seed, 'before': result.before,
                         **{f'after_{m}': v for m, v in sorted(result.objectives.items())},
                         **{f'improvement_{m}': v for m, v in improvements.items()}})
            for method, value in improvements.items():
                per_method.setdefault(method, []).append(value)
            self._store(config, seed, {'before': result.before, 'objectives': result.objectives,
                                       'improvements': improvements})
        means = {m: {config.name: statistics.fmean(v)} for m, v in per_method.items()}
        for method, value in sorted(means.items()):
            marker = ' (optimal)' if method == OPTIMAL else ''
            self.stdout.write(f"{config.name} {method}{marker}: mean improvement {value[config.name]:.3f}")
        pd.DataFrame(rows).to_csv(out / f'{config.name}.csv', index=False)
        emit_plotdata(improvement_series(means), out / f'{config.name}.plot.csv')

    def optimality(self, config, seeds, out):
        rows = []
        for seed in seeds:
            comparison = run_oracle(config, seed)
            rows.append(comparison.as_dict())
            self._store(config, seed, comparison.as_dict())
            self.stdout.write(f"{config.name} seed={seed}: ratio {comparison.ratio}")
        pd.DataFrame(rows).to_csv(out / f'{config.name}.csv', index=False)
