"""
Experiment drivers. Each takes a validated run config, returns a CsvTable and
logs one line per grid cell. Cells run in parallel across ``threads``; each
cell draws from its own substream family, so tables do not depend on the
thread count.
"""
import logging
import math
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from django.core.exceptions import ValidationError

from sampling.coefficients import (
    FamilyKind,
    CoefficientPlan,
    ddpm_varsigma,
    eta_sigma_ratio_check,
    family_from_name,
    plan_for_family,
    relation_residuals,
    step_size_constraint_check,
)
from sampling.metrics import (
    gaussian_full_bound,
    kl_diag_gaussian,
    one_step_lower_bound,
    posterior_trace_curve,
    tv_from_samples,
    tv_gaussian_diag,
)
from sampling.samplers import EnsembleState, ReverseRun, one_step_from_truth
from sampling.schedule import NoiseSchedule, build_schedule, schedule_from_alphas, validate_step_ratio
from sampling.scores import (
    PerturbationKind,
    ScoreOracle,
    constant_shift,
    declared_epsilon_jacobi,
    declared_epsilon_score,
    jacobian_condition_report,
    linear_field,
)
from sampling.services import final_mean_shift, final_proxy, sample, summarize, true_law
from sampling.streams import RngPolicy, map_blocks
from sampling.targets import (
    TargetKind,
    TargetSpec,
    atom_mixture,
    diag_gaussian,
    forward_marginal,
    load_atoms_csv,
    low_rank_gaussian,
)

from .csvout import CsvTable, write_output

logger = logging.getLogger(__name__)

DEFAULT_SWEEP_GRID = [32, 64, 128, 256, 512, 1024, 2048]
DEFAULT_AUDIT_GRID = [16, 128, 1024]
DEFAULT_AUDIT_XI = [0.0, 0.25, 0.5, 1.0, 2.0]
DEFAULT_EPSILONS = [0.0, 1e-3, 1e-2, 1e-1]
# rows with a proxy below this are numerically exact and left out of slope fits
SLOPE_FLOOR = 1e-13


def build_target(cfg: Dict[str, Any]) -> TargetSpec:
    kind = cfg['kind']
    if kind == TargetKind.LOW_RANK_GAUSSIAN:
        return low_rank_gaussian(cfg['d'], cfg.get('k', 1))
    if kind == TargetKind.DIAG_GAUSSIAN:
        return diag_gaussian(cfg['variances'])
    return atom_mixture(
        load_atoms_csv(cfg['atoms_file']),
        weights=cfg.get('weights'),
        declared_k=cfg.get('declared_k'),
        radius=cfg.get('radius'),
    )


def build_noise_schedule(cfg: Dict[str, Any], T: Optional[int] = None) -> NoiseSchedule:
    return build_schedule(T or cfg['T'], cfg.get('c0'), cfg.get('c1'))


def _load_vector(path: str) -> np.ndarray:
    return np.loadtxt(path, delimiter=',', ndmin=1, dtype=np.float64).ravel()


def build_plan(
    schedule: NoiseSchedule,
    cfg: Dict[str, Any],
    family: Optional[str] = None,
    xi: Optional[Sequence[float]] = None,
) -> CoefficientPlan:
    """Coefficient plan for the sampler block, or for an explicitly named family."""
    kind = FamilyKind(family or cfg['family'])
    params = {}
    if kind == FamilyKind.GENERALIZED_XI:
        values = list(xi if xi is not None else cfg['xi'])
        if len(values) not in (1, schedule.T):
            raise ValidationError(
                "xi needs one value or T=%(T)s values", code="family_inadmissible", params={'T': schedule.T}
            )
        params['xi'] = values[0] if len(values) == 1 else values
    elif kind == FamilyKind.VARSIGMA:
        path = cfg.get('varsigma_file')
        params['varsigma'] = _load_vector(path) if path else ddpm_varsigma(schedule)
    elif kind == FamilyKind.CUSTOM:
        params['eta'] = _load_vector(cfg['eta_file'])
        params['sigma'] = _load_vector(cfg['sigma_file'])
    return plan_for_family(schedule, family_from_name(kind.value, **params))


def build_perturbation(target: TargetSpec, schedule: NoiseSchedule, cfg: Dict[str, Any], epsilon: float, kind=None):
    kind = kind or cfg['perturbation']
    if kind == 'none' or epsilon == 0.0:
        return None
    if kind == PerturbationKind.CONSTANT_SHIFT:
        direction = cfg.get('direction')
        if direction is None:
            direction = np.eye(target.d)[0]
        if len(direction) != target.d:
            raise ValidationError(
                "perturbation direction needs d=%(d)s entries", code="invalid_perturbation", params={'d': target.d}
            )
        return constant_shift(schedule, direction, epsilon)
    return linear_field(target, schedule, epsilon)


def policy_for(config: Dict[str, Any]) -> RngPolicy:
    return RngPolicy(config['mc']['master_seed'])


def fit_slope(x: Sequence[float], y: Sequence[float]) -> Optional[float]:
    """OLS slope of ln y against ln x over the rows with y >= SLOPE_FLOOR."""
    pairs = [(math.log(a), math.log(b)) for a, b in zip(x, y) if b >= SLOPE_FLOOR and a > 0]
    if len(pairs) < 2:
        return None
    lx, ly = np.array(pairs).T
    return float(np.polyfit(lx, ly, 1)[0])


def exp_schedule(config: Dict[str, Any]) -> CsvTable:
    schedule = build_noise_schedule(config['schedule'])
    report = validate_step_ratio(schedule)
    table = CsvTable(['t', 'beta', 'alpha', 'alpha_bar', 'step_ratio', 'step_ratio_ok'])
    for row in schedule.to_rows():
        t = row['t']
        table.add(**row, step_ratio=report.ratios.get(t), step_ratio_ok=report.passed.get(t))
    if not report.all_passed:
        logger.warning(f"{schedule}: step ratio above {report.bound:.4g} at some steps")
    return table


def exp_coeffs(config: Dict[str, Any]) -> CsvTable:
    schedule = build_noise_schedule(config['schedule'])
    plan = build_plan(schedule, config['sampler'])
    residuals = relation_residuals(plan, schedule)
    step_ok = step_size_constraint_check(plan, schedule, config['audit']['C1'])
    ratio_ok = eta_sigma_ratio_check(plan, schedule, config['audit']['C2'])
    table = CsvTable(['t', 'eta', 'sigma', 'residual', 'constraint23', 'alpha', 'alpha_bar', 'eta_sigma_ok'])
    for t in range(1, schedule.T + 1):
        table.add(
            t=t,
            eta=plan.eta_at(t),
            sigma=plan.sigma_at(t),
            residual=float(residuals[t - 1]),
            constraint23=step_ok[t],
            alpha=schedule.alpha_at(t),
            alpha_bar=schedule.alpha_bar_at(t),
            eta_sigma_ok=ratio_ok[t],
        )
    logger.info(f"Coefficients for {plan.family}: max |residual| = {np.max(np.abs(residuals)):.3e}")
    return table


def exp_sample(config: Dict[str, Any], threads: int = 1) -> CsvTable:
    target = build_target(config['target'])
    schedule = build_noise_schedule(config['schedule'])
    plan = build_plan(schedule, config['sampler'])
    perturbation = build_perturbation(target, schedule, config['score'], config['score']['epsilon'])
    analytic = config['sampler']['mode'] == 'analytic'
    streams = policy_for(config).family('sample')
    trajectory_path = config.get('trajectory_output')
    run = sample(
        target, schedule, plan, perturbation,
        analytic=analytic,
        init=config['sampler']['init'],
        n=config['mc']['n_samples'],
        streams=streams,
        threads=threads,
        record=bool(trajectory_path),
    )
    table = CsvTable(
        ['coordinate', 'mean', 'variance', 'true_mean', 'true_variance', 'hist_tv', 'draws_consumed']
    )
    consumed = _consumed(streams, schedule) if isinstance(run.state, EnsembleState) else 0
    for summary in summarize(run, streams=streams, threads=threads):
        table.add(**vars(summary), draws_consumed=consumed)
    if trajectory_path:
        text = trajectory_table(run).render(config, config['mc']['master_seed'])
        write_output(text, trajectory_path, None)
    logger.info(f"Sampled {run}")
    return table


def trajectory_table(run: ReverseRun) -> CsvTable:
    """Per recorded step and coordinate: mean and variance of Y_t."""
    table = CsvTable(['t', 'coordinate', 'mean', 'variance'])
    for t, state in run.trajectory:
        if isinstance(state, EnsembleState):
            mean = state.particles.mean(axis=0)
            var = state.particles.var(axis=0, ddof=1 if state.n > 1 else 0)
        else:
            mean, var = state.law.mean, state.law.cov_diag
        for i in range(state.d):
            table.add(t=t, coordinate=i + 1, mean=float(mean[i]), variance=float(var[i]))
    return table


def _consumed(streams, schedule: NoiseSchedule) -> int:
    """Normal draws spent by the reverse loop (the initial draw excluded)."""
    return sum(streams.child(f"step{t}").consumed for t in range(2, schedule.T + 1))


def exp_rate_sweep(config: Dict[str, Any], threads: int = 1) -> CsvTable:
    """
    Frobenius proxy of (X_1, Y_1) over a grid of horizons T, with the OLS
    slope of ln D against ln T per family.
    """
    target = build_target(config['target'])
    if not target.is_gaussian:
        raise ValidationError("rate sweep requires analytic law", code="rate_sweep_requires_analytic")
    grid = config['schedule'].get('T_grid') or DEFAULT_SWEEP_GRID
    families = config['sampler'].get('families') or [config['sampler']['family']]
    cells = [(family, T) for family in families for T in grid]
    policy = policy_for(config)

    def run_cell(index: int) -> Dict[str, Any]:
        family, T = cells[index]
        schedule = build_noise_schedule(config['schedule'], T)
        plan = build_plan(schedule, config['sampler'], family=family)
        run = sample(target, schedule, plan, analytic=True, init=config['sampler']['init'])
        proxy = final_proxy(run)
        tv = tv_gaussian_diag(
            true_law(target, schedule, 1), run.state.law,
            n=config['mc']['n_samples'], streams=policy.family('sweep', replicate=index),
        )
        logger.info(f"sweep {family} T={T}: D={proxy.D:.4e}")
        return {
            'T': T, 'd': target.d, 'k': target.k_intrinsic, 'family': family,
            'proxy_D': proxy.D, 'tv_lower': proxy.tv_lower, 'tv_upper': proxy.tv_upper,
            'tv_mc': tv.estimate, 'tv_ci': tv.half_width,
        }

    rows = map_blocks(run_cell, len(cells), threads)
    table = CsvTable(['T', 'd', 'k', 'family', 'proxy_D', 'tv_lower', 'tv_upper', 'tv_mc', 'tv_ci', 'slope'])
    for family in families:
        mine = [row for row in rows if row['family'] == family]
        slope = fit_slope([row['T'] for row in mine], [row['proxy_D'] for row in mine])
        for row in mine:
            table.add(**row, slope=slope)
    return table


def _one_step_schedule(cfg: Dict[str, Any]):
    """Schedule and step for the one-step analysis: explicit (alpha, alpha_bar) or step t of a built schedule."""
    if 'alpha' in cfg:
        alpha, alpha_bar = cfg['alpha'], cfg['alpha_bar']
        return schedule_from_alphas([alpha_bar / alpha, alpha]), 2
    schedule = build_noise_schedule(cfg)
    return schedule, cfg.get('t', max(2, schedule.T // 2))


def exp_onestep_lb(config: Dict[str, Any], threads: int = 1) -> CsvTable:
    """One reverse step from the exact X_t: MC TV against the lower bound over an (eta, sigma) grid."""
    target = build_target(config['target'])
    if target.kind != TargetKind.LOW_RANK_GAUSSIAN:
        raise ValidationError("one-step lower bound needs a low_rank_gaussian target", code="invalid_target")
    schedule, t = _one_step_schedule(config['schedule'])
    grid = config['grid']
    if 'eta' in grid:
        cells = [(None, None, grid['eta'], grid['sigma'])]
    else:
        base = build_plan(schedule, config['sampler'])
        eta0, sigma0 = base.eta_at(t), base.sigma_at(t)
        factors = list(grid['factors'])
        cells = [(fe, fs, fe * eta0, fs * sigma0) for fe in factors for fs in factors]
    n = config['mc']['n_samples']
    policy = policy_for(config)
    truth = forward_marginal(target, schedule.alpha_bar_at(t - 1))

    def run_cell(index: int) -> Dict[str, Any]:
        eta_scale, sigma_scale, eta, sigma = cells[index]
        particles, law = one_step_from_truth(
            target, schedule, t, eta, sigma, n, policy.family('lowerbound', replicate=index)
        )
        tv = tv_from_samples(law.log_pdf, truth.log_pdf, particles)
        bound = one_step_lower_bound(schedule, t, eta, sigma, target.d)
        full = gaussian_full_bound(schedule, t, eta, sigma, target.d, target.k)
        violation = tv.estimate < bound - 3.0 * tv.half_width
        if violation:
            logger.warning(f"lower bound violated at eta={eta:.4g} sigma={sigma:.4g}")
        return {
            'eta_scale': eta_scale, 'sigma_scale': sigma_scale, 'eta': eta, 'sigma': sigma,
            'lower_bound': bound, 'full_lower_bound': full.tv_lower,
            'tv_mc': tv.estimate, 'tv_ci': tv.half_width, 'violation': violation,
        }

    rows = map_blocks(run_cell, len(cells), threads)
    logger.info(f"One-step grid at t={t}: {len(rows)} cells, {sum(r['violation'] for r in rows)} violations")
    table = CsvTable(
        ['eta_scale', 'sigma_scale', 'eta', 'sigma', 'lower_bound', 'full_lower_bound', 'tv_mc', 'tv_ci', 'violation']
    )
    table.rows.extend(rows)
    return table


def exp_score_error(config: Dict[str, Any], threads: int = 1) -> CsvTable:
    """
    Final-law degradation against injected score error. Degradation is the
    mean shift for constant shifts and |D(eps) - D(0)| for linear fields.
    """
    target = build_target(config['target'])
    if not target.is_gaussian:
        raise ValidationError("score-error sweep requires analytic law", code="rate_sweep_requires_analytic")
    schedule = build_noise_schedule(config['schedule'])
    plan = build_plan(schedule, config['sampler'])
    score = config['score']
    kind = score['perturbation'] if score['perturbation'] != 'none' else PerturbationKind.CONSTANT_SHIFT
    epsilons = list(score.get('epsilons') or DEFAULT_EPSILONS)
    init = config['sampler']['init']
    baseline = final_proxy(sample(target, schedule, plan, analytic=True, init=init)).D

    def run_cell(index: int) -> Dict[str, Any]:
        epsilon = epsilons[index]
        perturbation = build_perturbation(target, schedule, score, epsilon, kind=kind)
        run = sample(target, schedule, plan, perturbation, analytic=True, init=init)
        proxy = final_proxy(run)
        shift = final_mean_shift(run)
        degradation = shift if kind == PerturbationKind.CONSTANT_SHIFT else abs(proxy.D - baseline)
        logger.info(f"score error eps={epsilon:g}: D={proxy.D:.4e}, shift={shift:.4e}")
        return {
            'T': schedule.T, 'd': target.d, 'k': target.k_intrinsic, 'family': str(plan.family),
            'perturbation': str(kind), 'epsilon_score': epsilon,
            'declared_epsilon_score': declared_epsilon_score(run.oracle),
            'declared_epsilon_jacobi': declared_epsilon_jacobi(run.oracle),
            'proxy_D': proxy.D, 'mean_shift': shift,
            'kl': kl_diag_gaussian(run.state.law, true_law(target, schedule, 1)),
            'degradation': degradation,
        }

    rows = map_blocks(run_cell, len(epsilons), threads)
    slope = fit_slope([r['epsilon_score'] for r in rows], [r['degradation'] for r in rows])
    table = CsvTable(
        ['T', 'd', 'k', 'family', 'perturbation', 'epsilon_score', 'declared_epsilon_score',
         'declared_epsilon_jacobi', 'proxy_D', 'mean_shift', 'kl', 'degradation', 'slope']
    )
    for row in rows:
        table.add(**row, slope=slope)
    return table


def _audit_cells(config: Dict[str, Any]) -> List[tuple]:
    families = config['sampler'].get('families') or [kind.value for kind in FamilyKind if kind != FamilyKind.CUSTOM]
    xis = config['sampler'].get('xi') or DEFAULT_AUDIT_XI
    cells = []
    for family in families:
        if family == FamilyKind.GENERALIZED_XI:
            cells.extend((family, xi) for xi in xis)
        else:
            cells.append((family, None))
    return cells


def exp_coeff_audit(config: Dict[str, Any], threads: int = 1) -> CsvTable:
    """
    Relation residuals and step-size checks for every family over a grid of T.
    Gaussian targets also get the one-sided Jacobian condition counted.
    """
    grid = config['schedule'].get('T_grid') or DEFAULT_AUDIT_GRID
    target = build_target(config['target'])
    cells = [(family, xi, T) for family, xi in _audit_cells(config) for T in grid]
    C1, C2 = config['audit']['C1'], config['audit']['C2']

    def run_cell(index: int) -> Dict[str, Any]:
        family, xi, T = cells[index]
        schedule = build_noise_schedule(config['schedule'], T)
        plan = build_plan(schedule, config['sampler'], family=family, xi=None if xi is None else [xi])
        residuals = np.abs(relation_residuals(plan, schedule))
        worst = int(np.argmax(residuals))
        jacobian = None
        if target.is_gaussian:
            report = jacobian_condition_report(ScoreOracle(target=target, schedule=schedule), plan.eta)
            jacobian = sum(not ok for ok in report.values())
        return {
            'family': family, 'xi': xi, 'T': T,
            'max_abs_residual': float(residuals[worst]), 'argmax_t': worst + 1,
            'satisfies_relation': plan.family.satisfies_relation,
            'deterministic': plan.is_deterministic,
            'step_size_violations': sum(not ok for ok in step_size_constraint_check(plan, schedule, C1).values()),
            'eta_sigma_violations': sum(not ok for ok in eta_sigma_ratio_check(plan, schedule, C2).values()),
            'jacobian_violations': jacobian,
        }

    rows = map_blocks(run_cell, len(cells), threads)
    for row in rows:
        logger.info(f"audit {row['family']} xi={row['xi']} T={row['T']}: max |residual| {row['max_abs_residual']:.3e}")
    table = CsvTable(
        ['family', 'xi', 'T', 'max_abs_residual', 'argmax_t', 'satisfies_relation', 'deterministic',
         'step_size_violations', 'eta_sigma_violations', 'jacobian_violations']
    )
    table.rows.extend(rows)
    return table


def exp_posterior_trace(config: Dict[str, Any], threads: int = 1) -> CsvTable:
    target = build_target(config['target'])
    schedule = build_noise_schedule(config['schedule'])
    curve = posterior_trace_curve(
        target, schedule, config['mc']['n_samples'], policy_for(config).family('trace'), threads
    )
    table = CsvTable(['t', 'alpha_bar', 'trace', 'stderr', 'exact'])
    for row in curve.rows():
        t = row['t']
        exact = None
        if target.is_gaussian:
            abar, noise = schedule.alpha_bar_at(t), schedule.one_minus_alpha_bar_at(t)
            v = target.covariance_diag()
            exact = float(np.sum(noise * v / (abar * v + noise)))
        table.add(**row, alpha_bar=schedule.alpha_bar_at(t), exact=exact)
    logger.info(f"Posterior trace for {target} over T={schedule.T}")
    return table
