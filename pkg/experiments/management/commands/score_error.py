from experiments.management.base import LabCommand
from experiments.services import exp_score_error


class Command(LabCommand):
    help = 'Final-law degradation against an injected score error'
    overrides = {
        'd': 'target.d',
        'k': 'target.k',
        'T': 'schedule.T',
        'family': 'sampler.family',
        'perturbation': 'score.perturbation',
        'epsilons': 'score.epsilons',
    }

    def add_experiment_arguments(self, parser):
        parser.add_argument('--d', type=int)
        parser.add_argument('--k', type=int)
        parser.add_argument('--T', type=int)
        parser.add_argument('--family')
        parser.add_argument('--perturbation', help='constant_shift or linear_field')
        parser.add_argument('--epsilons', help='comma-separated score errors')

    def run_experiment(self, config, threads):
        return exp_score_error(config, threads)
