from experiments.management.base import LabCommand
from experiments.services import exp_onestep_lb


class Command(LabCommand):
    help = 'One reverse step from the exact X_t: Monte-Carlo TV against the one-step lower bound'
    overrides = {
        'T': 'schedule.T',
        't': 'schedule.t',
        'alpha': 'schedule.alpha',
        'alpha_bar': 'schedule.alpha_bar',
        'd': 'target.d',
        'k': 'target.k',
        'family': 'sampler.family',
        'eta': 'grid.eta',
        'sigma': 'grid.sigma',
        'grid': 'grid.factors',
        'n': 'mc.n_samples',
    }

    def add_experiment_arguments(self, parser):
        parser.add_argument('--T', type=int)
        parser.add_argument('--t', type=int)
        parser.add_argument('--alpha', type=float, help='alpha_t of a two-step schedule (with --alpha-bar)')
        parser.add_argument('--alpha-bar', dest='alpha_bar', type=float)
        parser.add_argument('--d', type=int)
        parser.add_argument('--k', type=int)
        parser.add_argument('--family', help='family whose (eta, sigma) the grid scales')
        parser.add_argument('--eta', type=float)
        parser.add_argument('--sigma', type=float)
        parser.add_argument('--grid', help='comma-separated scale factors')
        parser.add_argument('--n', type=int)

    def run_experiment(self, config, threads):
        return exp_onestep_lb(config, threads)
