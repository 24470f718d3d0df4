from django.core.management.base import CommandError

from experiments.management.base import CONFIG_ERROR, LabCommand
from experiments.services import exp_sample


class Command(LabCommand):
    help = 'Run one reverse sampler and compare Y_1 with X_1 coordinate by coordinate'
    overrides = {
        'kind': 'target.kind',
        'd': 'target.d',
        'k': 'target.k',
        'T': 'schedule.T',
        'family': 'sampler.family',
        'mode': 'sampler.mode',
        'init': 'sampler.init',
        'n': 'mc.n_samples',
        'epsilon': 'score.epsilon',
        'perturbation': 'score.perturbation',
        'traj_out': 'trajectory_output',
    }

    def add_experiment_arguments(self, parser):
        parser.add_argument('--kind')
        parser.add_argument('--d', type=int)
        parser.add_argument('--k', type=int)
        parser.add_argument('--T', type=int)
        parser.add_argument('--family')
        parser.add_argument('--mode', help='analytic or ensemble')
        parser.add_argument('--analytic', action='store_true', help='same as --mode analytic')
        parser.add_argument('--init', help='standard or exact')
        parser.add_argument('--n', type=int)
        parser.add_argument('--epsilon', type=float)
        parser.add_argument('--perturbation')
        parser.add_argument('--traj-out', help='CSV path for per-step means and variances')

    def flag_overrides(self, options):
        if not options.get('analytic'):
            return {}
        if options.get('mode') not in (None, 'analytic'):
            raise CommandError(
                f"invalid config: sampler.mode: --analytic conflicts with --mode {options['mode']}",
                returncode=CONFIG_ERROR,
            )
        return {'sampler.mode': 'analytic'}

    def run_experiment(self, config, threads):
        return exp_sample(config, threads)
