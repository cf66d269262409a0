# Generated by Django 5.2.7 on 2026-10-18 09:12

import django.core.validators
from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='ExperimentRun',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('command', models.CharField(choices=[('solve', 'Solve relaxation'), ('round', 'Round solution'), ('verify', 'Verify guarantees')], help_text='Command that produced this run', max_length=20)),
                ('instance_digest', models.CharField(help_text='sha256 of the canonical instance JSON', max_length=64, validators=[django.core.validators.RegexValidator(code='invalid_digest', message='Instance digest must be a sha256 hex string', regex='^[0-9a-f]{64}$')])),
                ('seed', models.BigIntegerField(blank=True, help_text='RNG seed (empty for deterministic commands)', null=True)),
                ('trials', models.PositiveIntegerField(blank=True, help_text='Monte Carlo trials (verify only)', null=True)),
                ('algorithm', models.CharField(blank=True, help_text='Relaxation for solve, rounding algorithm for round and verify', max_length=20)),
                ('objective', models.FloatField(blank=True, help_text='Relaxation objective, schedule cost, or mean rounded cost', null=True)),
                ('verified', models.BooleanField(blank=True, help_text='Whether verify found zero violations', null=True)),
                ('exit_code', models.PositiveSmallIntegerField(default=0)),
                ('report', models.JSONField(blank=True, default=dict, help_text='Experiment configuration and summary of the run')),
                ('created_at', models.DateTimeField(auto_now_add=True)),
            ],
            options={
                'verbose_name': 'Experiment run',
                'verbose_name_plural': 'Experiment runs',
                'ordering': ['-created_at', '-id'],
            },
        ),
    ]
