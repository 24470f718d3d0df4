from experiments.management.base import LabCommand
from experiments.services import exp_rate_sweep


class Command(LabCommand):
    help = 'Frobenius TV proxy of the final law over a grid of horizons T, with the log-log slope'
    overrides = {
        'd': 'target.d',
        'k': 'target.k',
        'T_grid': 'schedule.T_grid',
        'family': 'sampler.family',
        'families': 'sampler.families',
        'init': 'sampler.init',
        'n': 'mc.n_samples',
    }

    def add_experiment_arguments(self, parser):
        parser.add_argument('--d', type=int)
        parser.add_argument('--k', type=int)
        parser.add_argument('--T-grid', dest='T_grid', help='comma-separated horizons')
        parser.add_argument('--family')
        parser.add_argument('--families', help='comma-separated families')
        parser.add_argument('--init', help='standard or exact')
        parser.add_argument('--n', type=int)

    def run_experiment(self, config, threads):
        return exp_rate_sweep(config, threads)
