from experiments.management.base import LabCommand
from experiments.services import exp_coeff_audit


class Command(LabCommand):
    help = 'Coefficient-relation residuals of every family over a grid of T'
    overrides = {
        'T_grid': 'schedule.T_grid',
        'families': 'sampler.families',
        'xi': 'sampler.xi',
        'C1': 'audit.C1',
        'C2': 'audit.C2',
    }

    def add_experiment_arguments(self, parser):
        parser.add_argument('--T-grid', dest='T_grid', help='comma-separated horizons')
        parser.add_argument('--families', help='comma-separated families')
        parser.add_argument('--xi', help='comma-separated xi values for generalized_xi')
        parser.add_argument('--C1', type=float)
        parser.add_argument('--C2', type=float)

    def run_experiment(self, config, threads):
        return exp_coeff_audit(config, threads)
