from scheduling.forms import GenerateForm
from scheduling.instances import Instance, dump_instance
from scheduling.management.base import ExperimentCommand
from scheduling.schemas import BipartiteFile, dump_model


class Command(ExperimentCommand):
    help = 'Write an instance of one of the built-in families as canonical JSON'
    form_class = GenerateForm

    def add_arguments(self, parser):
        parser.add_argument('generator', help='gap, poisson, class, random or fourjob')
        parser.add_argument('--k', type=int)
        parser.add_argument('--m', type=int)
        parser.add_argument('--n', type=int)
        parser.add_argument('--num-classes', type=int)
        parser.add_argument('--scale', type=int)
        parser.add_argument('--jobs-per-class', type=int)
        parser.add_argument('--machines', type=int)
        parser.add_argument('--seed', type=int)
        parser.add_argument('--forbidden-prob', type=float)
        parser.add_argument('--ptime-low', type=int)
        parser.add_argument('--ptime-high', type=int)
        parser.add_argument('--weight-low', type=int)
        parser.add_argument('--weight-high', type=int)
        parser.add_argument('--out', help='Output file (default stdout)')
        self.add_config_argument(parser)

    def handle(self, *args, **options):
        data, _ = self.clean_options(options)
        result = data['result']
        if isinstance(result, Instance):
            text = dump_instance(result) + '\n'
        else:
            text = dump_model(BipartiteFile.from_bipartite(result))
        self.emit(text, options.get('out'))
