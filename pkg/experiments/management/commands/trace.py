from experiments.management.base import LabCommand
from experiments.services import exp_posterior_trace


class Command(LabCommand):
    help = 'Monte-Carlo curve of E[tr Cov(X_0 | X_t)] over t'
    overrides = {
        'kind': 'target.kind',
        'd': 'target.d',
        'k': 'target.k',
        'atoms_file': 'target.atoms_file',
        'T': 'schedule.T',
        'n': 'mc.n_samples',
    }

    def add_experiment_arguments(self, parser):
        parser.add_argument('--kind')
        parser.add_argument('--d', type=int)
        parser.add_argument('--k', type=int)
        parser.add_argument('--atoms-file', dest='atoms_file')
        parser.add_argument('--T', type=int)
        parser.add_argument('--n', type=int)

    def run_experiment(self, config, threads):
        return exp_posterior_trace(config, threads)
