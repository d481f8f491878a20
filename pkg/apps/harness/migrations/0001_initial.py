# Generated by Django 4.2.7 on 2026-10-19 10:12

from django.db import migrations, models
import django.db.models.deletion
import uuid


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='ExperimentRun',
            fields=[
                ('id', models.UUIDField(default=uuid.uuid4, editable=False, primary_key=True, serialize=False)),
                ('scenario', models.CharField(max_length=100)),
                ('kind', models.CharField(choices=[('training', 'Training'), ('flow', 'Flow test'), ('addition', 'Node addition'), ('optimality', 'Optimality')], max_length=20)),
                ('seed', models.IntegerField(default=0)),
                ('routing', models.CharField(default='gwtf', max_length=20)),
                ('recovery', models.CharField(default='gwtf', max_length=20)),
                ('addition', models.CharField(default='gwtf', max_length=20)),
                ('config', models.JSONField(default=dict)),
                ('status', models.CharField(choices=[('running', 'Running'), ('completed', 'Completed'), ('failed', 'Failed')], default='running', max_length=20)),
                ('error', models.TextField(blank=True, default='')),
                ('trace_hash', models.CharField(blank=True, default='', max_length=64)),
                ('summary', models.JSONField(default=dict)),
                ('created_at', models.DateTimeField(auto_now_add=True)),
                ('finished_at', models.DateTimeField(blank=True, null=True)),
            ],
            options={
                'db_table': 'experiment_runs',
                'ordering': ['-created_at'],
                'indexes': [models.Index(fields=['scenario', 'seed'], name='run_scenario_seed_idx'), models.Index(fields=['status'], name='run_status_idx')],
            },
        ),
        migrations.CreateModel(
            name='IterationMetric',
            fields=[
                ('id', models.UUIDField(default=uuid.uuid4, editable=False, primary_key=True, serialize=False)),
                ('iteration', models.IntegerField()),
                ('duration', models.FloatField(default=0.0)),
                ('time_per_microbatch', models.FloatField(blank=True, null=True)),
                ('throughput', models.IntegerField(default=0)),
                ('wasted_compute_time', models.FloatField(default=0.0)),
                ('communication_time', models.FloatField(default=0.0)),
                ('protocol_messages', models.IntegerField(default=0)),
                ('recovery', models.JSONField(default=dict)),
                ('run', models.ForeignKey(on_delete=django.db.models.deletion.CASCADE, related_name='iterations', to='harness.experimentrun')),
            ],
            options={
                'db_table': 'iteration_metrics',
                'ordering': ['run', 'iteration'],
                'unique_together': {('run', 'iteration')},
            },
        ),
    ]
