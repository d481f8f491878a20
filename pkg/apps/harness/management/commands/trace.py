# ===== apps/harness/management/commands/trace.py =====
from django.core.management.base import BaseCommand, CommandError

from apps.harness.cli import add_scenario_arguments, load_config, output_dir
from apps.harness.experiments import formation
from apps.harness.scenarios import TRAINING
from apps.harness.simulation import Simulation


class Command(BaseCommand):
    help = 'Dump the event trace of one seeded run as JSON lines and print its hash'

    def add_arguments(self, parser):
        add_scenario_arguments(parser)

    def handle(self, *args, **options):
        config = load_config(options, seed=options.get('seed'))
        out = output_dir(options)

        if config.kind == TRAINING:
            sim = Simulation(config).run()
        else:
            sim = formation(config, record_trace=True)

        path = sim.engine.export_trace(out / f'{config.name}-seed{config.seed}.trace.jsonl')
        self.stdout.write(f"{len(sim.engine.trace)} events -> {path}")
        self.stdout.write(sim.trace_hash())
        if sim.failure is not None:
            raise CommandError(f"Run failed: {sim.failure}")
