from experiments.management.base import LabCommand
from experiments.services import exp_coeffs


class Command(LabCommand):
    help = 'Per-step (eta_t, sigma_t) of a coefficient family with its relation residual'
    overrides = {
        'T': 'schedule.T',
        'c0': 'schedule.c0',
        'c1': 'schedule.c1',
        'family': 'sampler.family',
        'xi': 'sampler.xi',
        'varsigma_file': 'sampler.varsigma_file',
    }

    def add_experiment_arguments(self, parser):
        parser.add_argument('--T', type=int)
        parser.add_argument('--c0', type=float)
        parser.add_argument('--c1', type=float)
        parser.add_argument('--family')
        parser.add_argument('--xi', help='xi, or comma-separated per-step values')
        parser.add_argument('--varsigma-file', help='one varsigma_t per line or comma separated')

    def run_experiment(self, config, threads):
        return exp_coeffs(config)
