import os
from pathlib import Path

from django import forms
from django.conf import settings
from pydantic import ValidationError as PydanticValidationError

from .exceptions import SchedulingError
from .instances import class_instance, gap_instance, load_instance, poisson_instance, random_instance
from .negcorr_rounding import four_job_instance
from .relaxations import CpSolution
from .schemas import load_bipartite, load_solution

ACCEPTANCE_TRIALS = 100_000


def _file_errors(exc):
    """One readable line per pydantic error"""
    if isinstance(exc, PydanticValidationError):
        return [f"{'.'.join(str(p) for p in err['loc']) or 'file'}: {err['msg']}" for err in exc.errors()]
    return [str(exc)]


class CommandForm(forms.Form):
    """
    Validates the options of one management command

    Values missing from `data` fall back to `get_defaults()`, so a bound form
    sees the same values whether an option came from a flag, a --config file
    or the settings.
    """

    def __init__(self, data=None, *args, **kwargs):
        merged = self.get_defaults()
        merged.update({k: v for k, v in (data or {}).items() if v is not None})
        super().__init__(merged, *args, **kwargs)
        self.warnings = []

    def get_defaults(self):
        return {}

    def _load_path(self, field, loader):
        path = self.cleaned_data.get(field)
        if not path:
            return None
        if not Path(path).is_file():
            raise forms.ValidationError(f"File not found: {path}")
        try:
            return loader(path)
        except (PydanticValidationError, SchedulingError, ValueError) as exc:
            raise forms.ValidationError(_file_errors(exc))

    def has_warnings(self):
        return len(self.warnings) > 0

    def get_warnings(self):
        return self.warnings


class GenerateForm(CommandForm):
    """
    Options of `generate`

    Each generator needs its own parameters; clean() checks they are present
    and builds the instance.
    """
    GENERATOR_CHOICES = [
        ('gap', 'CP integrality gap family'),
        ('poisson', 'Unit jobs, as many machines as jobs'),
        ('class', 'Job classes with separated Smith ratios'),
        ('random', 'Random instance'),
        ('fourjob', 'Four-job rounding instance with two machines'),
    ]
    REQUIRED_PARAMS = {
        'gap': ['k'],
        'poisson': ['m'],
        'class': ['num_classes', 'scale', 'jobs_per_class', 'machines'],
        'random': ['seed', 'n', 'm'],
        'fourjob': [],
    }

    generator = forms.ChoiceField(choices=GENERATOR_CHOICES)
    k = forms.IntegerField(required=False, min_value=1)
    m = forms.IntegerField(required=False, min_value=1)
    n = forms.IntegerField(required=False, min_value=1)
    num_classes = forms.IntegerField(required=False, min_value=1)
    scale = forms.IntegerField(required=False, min_value=2)
    jobs_per_class = forms.IntegerField(required=False, min_value=1)
    machines = forms.IntegerField(required=False, min_value=1)
    seed = forms.IntegerField(required=False, min_value=0)
    forbidden_prob = forms.FloatField(required=False, min_value=0.0)
    ptime_low = forms.IntegerField(required=False, min_value=1)
    ptime_high = forms.IntegerField(required=False, min_value=1)
    weight_low = forms.IntegerField(required=False, min_value=1)
    weight_high = forms.IntegerField(required=False, min_value=1)

    def get_defaults(self):
        return {'forbidden_prob': 0.0, 'ptime_low': 1, 'ptime_high': 100, 'weight_low': 1, 'weight_high': 10}

    def clean_forbidden_prob(self):
        """
        Validate forbidden probability
        - Must be below 1 so every job keeps a machine
        """
        value = self.cleaned_data['forbidden_prob']
        if value is not None and value >= 1.0:
            raise forms.ValidationError("Forbidden probability must be below 1")
        return value

    def clean(self):
        """
        Check the generator's parameters and build the result
        """
        cleaned_data = super().clean()
        generator = cleaned_data.get('generator')
        if self.errors or not generator:
            return cleaned_data

        missing = [name for name in self.REQUIRED_PARAMS[generator] if cleaned_data.get(name) is None]
        if missing:
            raise forms.ValidationError(f"Generator '{generator}' needs --{', --'.join(p.replace('_', '-') for p in missing)}")
        for low, high in (('ptime_low', 'ptime_high'), ('weight_low', 'weight_high')):
            if cleaned_data[low] > cleaned_data[high]:
                raise forms.ValidationError(f"--{low.replace('_', '-')} exceeds --{high.replace('_', '-')}")

        cleaned_data['params'] = {name: cleaned_data[name] for name in self.REQUIRED_PARAMS[generator]}
        cleaned_data['result'] = self._build(generator, cleaned_data)
        return cleaned_data

    def _build(self, generator, data):
        if generator == 'gap':
            return gap_instance(data['k'])
        if generator == 'poisson':
            return poisson_instance(data['m'])
        if generator == 'class':
            return class_instance(data['num_classes'], data['scale'], data['jobs_per_class'], data['machines'])
        if generator == 'random':
            data['params'].update(
                forbidden_prob=data['forbidden_prob'],
                ptime_range=[data['ptime_low'], data['ptime_high']],
                weight_range=[data['weight_low'], data['weight_high']],
            )
            return random_instance(
                data['seed'], data['n'], data['m'],
                forbidden_prob=data['forbidden_prob'],
                ptime_range=(data['ptime_low'], data['ptime_high']),
                weight_range=(data['weight_low'], data['weight_high']),
            )
        return four_job_instance()


class SolveForm(CommandForm):
    """Options of `solve`"""
    RELAXATION_CHOICES = [('sdp', 'Semidefinite relaxation'), ('cp', 'Convex program')]

    instance = forms.CharField()
    relaxation = forms.ChoiceField(choices=RELAXATION_CHOICES)
    sdp_tol = forms.FloatField(min_value=1e-15)
    sdp_max_iters = forms.IntegerField(min_value=1)
    sdp_rho = forms.FloatField(min_value=1e-12)
    cp_max_iters = forms.IntegerField(min_value=1)
    threads = forms.IntegerField(min_value=1)
    out = forms.CharField(required=False)
    record = forms.BooleanField(required=False)

    def get_defaults(self):
        return {
            'relaxation': 'sdp',
            'sdp_tol': settings.SDP_TOL,
            'sdp_max_iters': settings.SDP_MAX_ITERS,
            'sdp_rho': settings.SDP_RHO,
            'cp_max_iters': settings.CP_MAX_ITERS,
            'threads': settings.NEGCORR_SCHED_THREADS,
        }

    def clean_instance(self):
        """
        Load the instance file
        - Must exist and satisfy the instance invariants
        """
        return self._load_path('instance', load_instance)


class RoundForm(CommandForm):
    """Options of `round`"""
    ALGORITHM_CHOICES = [('negcorr', 'Negatively correlated rounding'), ('independent', 'Independent rounding')]

    instance = forms.CharField()
    solution = forms.CharField()
    seed = forms.IntegerField(min_value=0)
    algorithm = forms.ChoiceField(choices=ALGORITHM_CHOICES)
    out = forms.CharField(required=False)
    trace = forms.CharField(required=False)
    record = forms.BooleanField(required=False)

    def get_defaults(self):
        return {'algorithm': 'negcorr'}

    def clean_instance(self):
        return self._load_path('instance', load_instance)

    def clean(self):
        """
        Load the solution against the instance
        """
        cleaned_data = super().clean()
        inst = cleaned_data.get('instance')
        if inst is None or self.errors:
            return cleaned_data
        try:
            cleaned_data['solution'] = self._load_path('solution', lambda path: load_solution(path, inst))
        except forms.ValidationError as exc:
            self.add_error('solution', exc)
            return cleaned_data
        if cleaned_data.get('trace') and cleaned_data['algorithm'] != 'negcorr':
            self.warnings.append({
                'type': 'trace_ignored',
                'message': "--trace only applies to the negcorr algorithm; no trace will be written",
            })
        return cleaned_data


class VerifyForm(CommandForm):
    """
    Options of `verify`

    Either --bipartite, or an instance with an SDP solution. Below the
    acceptance trial count the run is allowed but flagged.
    """
    ALGORITHM_CHOICES = RoundForm.ALGORITHM_CHOICES
    FORMAT_CHOICES = [('json', 'JSON'), ('table', 'Aligned table'), ('csv', 'CSV')]

    instance = forms.CharField(required=False)
    solution = forms.CharField(required=False)
    bipartite = forms.CharField(required=False)
    trials = forms.IntegerField()
    seed = forms.IntegerField(min_value=0)
    threads = forms.IntegerField(min_value=1)
    algorithm = forms.ChoiceField(choices=ALGORITHM_CHOICES)
    format = forms.ChoiceField(choices=FORMAT_CHOICES)
    oracle = forms.BooleanField(required=False)
    out = forms.CharField(required=False)
    record = forms.BooleanField(required=False)

    def get_defaults(self):
        return {
            'trials': 10_000,
            'threads': settings.NEGCORR_SCHED_THREADS,
            'algorithm': 'negcorr',
            'format': 'json',
        }

    def clean_trials(self):
        """
        Validate trial count
        - At least 1000 so 4-sigma flags mean something
        """
        trials = self.cleaned_data['trials']
        if trials < 1000:
            raise forms.ValidationError("At least 1000 trials are needed")
        if trials < ACCEPTANCE_TRIALS:
            self.warnings.append({
                'type': 'low_trials',
                'message': f"{trials} trials is below the acceptance scale of {ACCEPTANCE_TRIALS}",
            })
        return trials

    def clean_threads(self):
        threads = self.cleaned_data['threads']
        available = os.cpu_count() or 1
        if threads > available:
            self.warnings.append({
                'type': 'threads',
                'message': f"--threads {threads} exceeds the {available} available CPUs",
            })
        return threads

    def clean(self):
        """
        Resolve the input combination and load the files
        """
        cleaned_data = super().clean()
        if self.errors:
            return cleaned_data

        has_bipartite = bool(cleaned_data.get('bipartite'))
        has_instance = bool(cleaned_data.get('instance'))
        has_solution = bool(cleaned_data.get('solution'))
        if has_bipartite:
            if has_instance != has_solution:
                raise forms.ValidationError("Give --instance and --solution together, or neither, with --bipartite")
        elif not (has_instance and has_solution):
            raise forms.ValidationError("Give --instance and --solution, or --bipartite")

        cleaned_data['paths'] = {k: cleaned_data.get(k) or None for k in ('instance', 'solution', 'bipartite')}
        if has_instance:
            inst = self._load_path('instance', load_instance)
            sol = self._load_path('solution', lambda path: load_solution(path, inst))
            if isinstance(sol, CpSolution):
                raise forms.ValidationError("verify needs an SDP solution; the file holds a CP solution")
            cleaned_data['instance'] = inst
            cleaned_data['solution'] = sol
        else:
            cleaned_data['instance'] = None
            cleaned_data['solution'] = None
        cleaned_data['bipartite'] = self._load_path('bipartite', load_bipartite) if has_bipartite else None
        return cleaned_data
