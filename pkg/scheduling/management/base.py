"""
Shared plumbing for the experiment commands

Option values come from three places, in increasing priority: form
defaults (settings), a --config JSON file, explicit flags. The merged values
are validated by the command's form; any input problem exits with code 2.
"""
import json
import logging
from pathlib import Path

from django.core.management.base import BaseCommand, CommandError
from pydantic import ValidationError as PydanticValidationError

from scheduling.exceptions import SchedulingError
from scheduling.schemas import read_options

logger = logging.getLogger(__name__)

EXIT_INPUT = 2
EXIT_NOT_CONVERGED = 3
EXIT_VIOLATION = 4


class ExperimentCommand(BaseCommand):
    form_class = None

    def add_config_argument(self, parser):
        parser.add_argument('--config', help='JSON file of option values; explicit flags win')

    def clean_options(self, options):
        """
        Merge --config values under the flags and validate them

        Returns:
            (cleaned_data, merged raw values)

        Raises:
            CommandError: exit code 2 on unknown config keys or invalid values
        """
        names = set(self.form_class.base_fields)
        data = {}
        if options.get('config'):
            try:
                file_values = read_options(options['config'])
            except (OSError, ValueError) as exc:
                raise CommandError(f"Cannot read config file {options['config']}: {exc}", returncode=EXIT_INPUT)
            file_values = {key.replace('-', '_'): value for key, value in file_values.items()}
            unknown = sorted(set(file_values) - names)
            if unknown:
                raise CommandError(f"Unknown keys in config file: {', '.join(unknown)}", returncode=EXIT_INPUT)
            data.update(file_values)
        data.update({k: v for k, v in options.items() if k in names and v is not None and v is not False})

        form = self.form_class(data)
        try:
            valid = form.is_valid()
        except SchedulingError as exc:
            raise CommandError(str(exc), returncode=EXIT_INPUT)
        if not valid:
            messages = []
            for field, errors in form.errors.items():
                prefix = '' if field == '__all__' else f"{field}: "
                messages.extend(f"{prefix}{error}" for error in errors)
            raise CommandError('; '.join(messages), returncode=EXIT_INPUT)
        for warning in form.get_warnings():
            logger.warning(warning['message'])
        return form.cleaned_data, data

    def emit(self, text, out=None):
        """Primary output goes to --out when given, stdout otherwise"""
        if out:
            Path(out).write_text(text)
            logger.info(f"Wrote {out}")
        else:
            self.stdout.write(text, ending='')

    def input_error(self, exc):
        if isinstance(exc, PydanticValidationError):
            return CommandError(json.dumps(exc.errors(include_url=False), default=str), returncode=EXIT_INPUT)
        return CommandError(str(exc), returncode=EXIT_INPUT)
