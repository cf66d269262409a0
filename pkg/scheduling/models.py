from django.core.validators import RegexValidator
from django.db import models

from .instances import instance_digest as digest_of


class ExperimentRun(models.Model):
    """
    One recorded invocation of solve, round or verify

    Rule: a row is written only when the command is run with --record, and
    never feeds back into any output file. Runs are identified by the digest
    of the canonical instance JSON, so re-running the same instance and seed
    can be compared across rows.
    """
    COMMAND_CHOICES = [
        ('solve', 'Solve relaxation'),
        ('round', 'Round solution'),
        ('verify', 'Verify guarantees'),
    ]

    command = models.CharField(
        max_length=20,
        choices=COMMAND_CHOICES,
        help_text="Command that produced this run"
    )
    instance_digest = models.CharField(
        max_length=64,
        validators=[RegexValidator(
            regex=r'^[0-9a-f]{64}$',
            message='Instance digest must be a sha256 hex string',
            code='invalid_digest'
        )],
        help_text="sha256 of the canonical instance JSON"
    )
    seed = models.BigIntegerField(
        null=True,
        blank=True,
        help_text="RNG seed (empty for deterministic commands)"
    )
    trials = models.PositiveIntegerField(
        null=True,
        blank=True,
        help_text="Monte Carlo trials (verify only)"
    )
    algorithm = models.CharField(
        max_length=20,
        blank=True,
        help_text="Relaxation for solve, rounding algorithm for round and verify"
    )
    objective = models.FloatField(
        null=True,
        blank=True,
        help_text="Relaxation objective, schedule cost, or mean rounded cost"
    )
    verified = models.BooleanField(
        null=True,
        blank=True,
        help_text="Whether verify found zero violations"
    )
    exit_code = models.PositiveSmallIntegerField(default=0)
    report = models.JSONField(
        default=dict,
        blank=True,
        help_text="Experiment configuration and summary of the run"
    )
    created_at = models.DateTimeField(auto_now_add=True)

    def __str__(self):
        return f"{self.command} {self.instance_digest[:12]} (exit {self.exit_code})"

    @classmethod
    def record(cls, config, inst, objective=None, verified=None, exit_code=0, summary=None):
        """Store a run described by an ExperimentConfig"""
        return cls.objects.create(
            command=config.command,
            instance_digest=digest_of(inst),
            seed=config.seed,
            trials=config.trials,
            algorithm=config.algorithm or config.relaxation or '',
            objective=objective,
            verified=verified,
            exit_code=exit_code,
            report={'config': config.model_dump(), **(summary or {})},
        )

    class Meta:
        ordering = ['-created_at', '-id']
        verbose_name = "Experiment run"
        verbose_name_plural = "Experiment runs"
