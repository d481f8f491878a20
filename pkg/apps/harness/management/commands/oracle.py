# ===== apps/harness/management/commands/oracle.py =====
import json

import pandas as pd
from django.core.management.base import BaseCommand

from apps.harness.cli import add_scenario_arguments, load_config, output_dir, seeds_for
from apps.harness.experiments import run_oracle


class Command(BaseCommand):
    help = 'Compare formed flows with the exact min-cost max-flow of the same topology'

    def add_arguments(self, parser):
        add_scenario_arguments(parser)

    def handle(self, *args, **options):
        config = load_config(options)
        out = output_dir(options)

        rows = []
        for seed in seeds_for(config, options):
            comparison = run_oracle(config, seed)
            rows.append(comparison.as_dict())
            self.stdout.write(json.dumps(comparison.as_dict(), default=str))

        path = out / f'{config.name}-oracle.csv'
        pd.DataFrame(rows).to_csv(path, index=False)
        self.stdout.write(self.style.SUCCESS(f"Wrote {path}"))
