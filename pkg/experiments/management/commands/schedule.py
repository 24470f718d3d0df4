from experiments.management.base import LabCommand
from experiments.services import exp_schedule


class Command(LabCommand):
    help = 'Dump beta_t, alpha_t, alpha_bar_t and the step-ratio check'
    overrides = {'T': 'schedule.T', 'c0': 'schedule.c0', 'c1': 'schedule.c1'}

    def add_experiment_arguments(self, parser):
        parser.add_argument('--T', type=int)
        parser.add_argument('--c0', type=float)
        parser.add_argument('--c1', type=float)

    def run_experiment(self, config, threads):
        return exp_schedule(config)
