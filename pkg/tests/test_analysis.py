import math
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from footprint_modules.analysis import (
    SummaryStat,
    UnitStats,
    aggregate_runs,
    compare,
    compose_units,
    extrapolate,
    idle_adjust,
    integrate_energy,
    stats_power,
    welch_t,
)
from footprint_modules.errors import (
    AdjustmentUnavailableError,
    AggregationError,
    ComparisonError,
    CompositionError,
    InvalidQuantityError,
)
from footprint_modules.model import FunctionalUnit, NetworkCounters, PowerSample, ResourceTrace, RunRecord


def make_run(unit='Login', configuration='Baseline', energy=10.0, n_bytes=0, duration_ms=1000.0,
             run_index=0, channels=None):
    trace = ResourceTrace(
        power=(PowerSample(0.0, {'machine': 1.0}), PowerSample(duration_ms, {'machine': 1.0})),
        network=(NetworkCounters(0.0, 0, 0), NetworkCounters(duration_ms, n_bytes, 0)),
        start_t=0.0,
        end_t=duration_ms,
    )
    return RunRecord(unit=unit, configuration=configuration, trace=trace,
                     energy_joules=channels if channels is not None else {'machine': energy},
                     bytes_total=n_bytes, run_index=run_index)


def stats_of(unit, energies, n_bytes=(0,), durations=(1.0,)):
    def summary(values):
        values = list(values)
        std = None
        if len(values) > 1:
            mean = sum(values) / len(values)
            std = math.sqrt(sum((v - mean) ** 2 for v in values) / (len(values) - 1))
        return SummaryStat(mean=sum(values) / len(values), sample_std=std, n=len(values))

    return UnitStats(unit=unit, per_channel_energy={'machine': summary(energies)},
                     bytes=summary(n_bytes), duration=summary(durations))


def test_aggregate_runs_statistics_oracle():
    runs = [make_run(energy=e, run_index=i) for i, e in enumerate([1, 2, 3, 4, 5])]
    stats = aggregate_runs(runs)
    machine = stats.per_channel_energy['machine']
    assert math.isclose(machine.mean, 3.0, rel_tol=1e-9)
    assert math.isclose(machine.sample_std, math.sqrt(2.5), rel_tol=1e-9)
    assert machine.n == 5
    assert stats.n == 5


def test_single_run_has_undefined_std():
    stats = aggregate_runs([make_run(energy=7.0)])
    assert stats.per_channel_energy['machine'].sample_std is None
    assert stats.per_channel_energy['machine'].mean == 7.0


def test_aggregate_rejects_mixed_units_and_empty():
    with pytest.raises(AggregationError):
        aggregate_runs([])
    with pytest.raises(AggregationError):
        aggregate_runs([make_run(unit='Login'), make_run(unit='Logout')])
    with pytest.raises(AggregationError):
        aggregate_runs([make_run(configuration='A'), make_run(configuration='B')])


def test_channel_missing_from_a_run_is_absent():
    runs = [make_run(channels={'machine': 5.0, 'cpu': 2.0}), make_run(channels={'machine': 6.0}, run_index=1)]
    stats = aggregate_runs(runs)
    assert set(stats.per_channel_energy) == {'machine'}
    assert stats.absent_channels == frozenset({'cpu'})


def test_integrate_constant_trace():
    trace = ResourceTrace(power=(PowerSample(0, {'machine': 4.0}), PowerSample(2500, {'machine': 4.0})),
                          network=(), start_t=0, end_t=2500)
    assert math.isclose(integrate_energy(trace)['machine'], 10.0)


@given(watts=st.lists(st.floats(min_value=0, max_value=500), min_size=2, max_size=50),
       alpha=st.floats(min_value=0.001, max_value=1000))
@settings(max_examples=200)
def test_integration_scales_linearly(watts, alpha):
    def trace(values):
        power = tuple(PowerSample(100.0 * i, {'machine': value}) for i, value in enumerate(values))
        return ResourceTrace(power=power, network=(), start_t=0.0, end_t=100.0 * (len(values) - 1))

    base = integrate_energy(trace(watts))['machine']
    scaled = integrate_energy(trace([alpha * value for value in watts]))['machine']
    assert math.isclose(scaled, alpha * base, rel_tol=1e-9, abs_tol=1e-12)


def test_compose_units_adds_means_and_variances():
    stats = {
        'Login': stats_of('Login', [9, 11], n_bytes=[100, 100], durations=[1, 1]),
        'Reply': stats_of('Reply', [19, 21], n_bytes=[50, 70], durations=[2, 2]),
        'Logout': stats_of('Logout', [4, 6], n_bytes=[10, 10], durations=[1, 1]),
    }
    session = FunctionalUnit('session', ('Login', 'Reply', 'Logout'), 4.0, composite_of=('Login', 'Reply', 'Logout'))
    composed = compose_units(stats, session)
    machine = composed.per_channel_energy['machine']
    assert math.isclose(machine.mean, 35.0)
    assert math.isclose(machine.sample_std, math.sqrt(2 + 2 + 2))
    assert math.isclose(composed.bytes.mean, 170)
    assert composed.composite_of == ('Login', 'Reply', 'Logout')


def test_compose_units_missing_member():
    forward = FunctionalUnit('forward', ('Forward',), 1.0, composite_of=('Login', 'Forward'))
    with pytest.raises(CompositionError):
        compose_units({'Login': stats_of('Login', [1, 2])}, forward)


def test_idle_adjust():
    idle = stats_of('Idle', [50, 50], durations=[10, 10])  # 5 W
    assert stats_power(idle) == 5.0
    adjustment = idle_adjust(300.0, idle, 30.0)
    assert math.isclose(adjustment.adjusted, 150.0)
    assert not adjustment.floored
    assert adjustment.raw == 300.0


def test_idle_adjust_floors_at_zero():
    idle = stats_of('Idle', [100, 100], durations=[10, 10])  # 10 W
    adjustment = idle_adjust(50.0, idle, 10.0)
    assert adjustment.adjusted == 0.0
    assert adjustment.floored


def test_idle_adjust_without_idle_unit():
    with pytest.raises(AdjustmentUnavailableError):
        idle_adjust(50.0, None, 10.0)


def test_compare_deltas_are_right_minus_left():
    left = {'Login': stats_of('Login', [9, 11], n_bytes=[100, 100])}
    right = {'Login': stats_of('Login', [11, 13], n_bytes=[150, 150])}
    result = compare('A', left, 'B', right)
    login = result.per_unit['Login']
    assert login.delta_energy['machine'] == 2.0
    assert math.isclose(login.relative_delta['machine'], 0.2)
    assert login.delta_bytes == 50
    assert login.welch_t['machine'] > 0
    assert login.p_value == {}


def test_compare_with_alpha_reports_significance():
    left = {'Login': stats_of('Login', [10.0, 10.1, 9.9, 10.0, 10.05])}
    right = {'Login': stats_of('Login', [20.0, 20.1, 19.9, 20.0, 20.05])}
    login = compare('A', left, 'B', right, alpha=0.05).per_unit['Login']
    assert login.p_value['machine'] < 0.05
    assert login.significant['machine'] is True


def test_compare_no_shared_units():
    with pytest.raises(ComparisonError):
        compare('A', {'Login': stats_of('Login', [1])}, 'B', {'Logout': stats_of('Logout', [1])})


def test_welch_t_zero_variance():
    same = SummaryStat(mean=5.0, sample_std=0.0, n=5)
    assert welch_t(same, same) == (0.0, 1.0)
    assert welch_t(same, SummaryStat(mean=6.0, sample_std=0.0, n=5)) == (None, None)
    assert welch_t(SummaryStat(5.0, None, 1), same) == (None, None)


samples = st.lists(st.floats(min_value=0.1, max_value=1e4), min_size=2, max_size=6)


@given(a=samples, b=samples, bytes_a=st.integers(0, 10 ** 9), bytes_b=st.integers(0, 10 ** 9))
@settings(max_examples=200)
def test_compare_is_antisymmetric(a, b, bytes_a, bytes_b):
    left = {'U': stats_of('U', a, n_bytes=[bytes_a, bytes_a])}
    right = {'U': stats_of('U', b, n_bytes=[bytes_b, bytes_b])}
    forward = compare('A', left, 'B', right).per_unit['U']
    backward = compare('B', right, 'A', left).per_unit['U']
    assert forward.delta_energy['machine'] == -backward.delta_energy['machine']
    assert forward.delta_bytes == -backward.delta_bytes
    if forward.welch_t['machine'] is not None:
        assert math.isclose(forward.welch_t['machine'], -backward.welch_t['machine'], rel_tol=1e-9, abs_tol=1e-12)


def test_extrapolation_anchor():
    result = extrapolate(1e-6, 5e-7, 3.33e11)
    assert math.isclose(result.annual_energy_kwh, 3.33e11 * 365 * 1e-6, rel_tol=1e-6)
    assert math.isclose(result.annual_energy_kwh, 1.215e8, rel_tol=1e-3)
    assert math.isclose(result.annual_emissions_kgco2e, 3.33e11 * 365 * 5e-7, rel_tol=1e-9)


def test_extrapolation_zeros_and_negatives():
    assert extrapolate(1e-6, 1e-7, 0).annual_energy_kwh == 0
    assert extrapolate(0, 0, 3.33e11).annual_emissions_kgco2e == 0
    with pytest.raises(InvalidQuantityError):
        extrapolate(-1, 0, 1)


def _exact_summary(values):
    exact = [Fraction(value) for value in values]
    mean = sum(exact) / len(exact)
    std = None
    if len(exact) > 1:
        std = math.sqrt(sum((value - mean) ** 2 for value in exact) / (len(exact) - 1))
    return float(mean), std


def _assert_matches(summary, values):
    mean, std = _exact_summary(values)
    assert summary.n == len(values)
    assert math.isclose(summary.mean, mean, rel_tol=1e-12)
    if std is None:
        assert summary.sample_std is None
    else:
        assert math.isclose(summary.sample_std, std, rel_tol=1e-12, abs_tol=1e-300)


run_values = st.lists(
    st.tuples(st.floats(min_value=0, max_value=1e7),  # J
              st.integers(0, 10 ** 12),  # bytes
              st.floats(min_value=1, max_value=1e6)),  # ms
    min_size=1, max_size=20)


@given(values=run_values)
@settings(max_examples=300)
def test_aggregate_runs_matches_direct_statistics(values):
    runs = [make_run(energy=energy, n_bytes=n_bytes, duration_ms=duration_ms, run_index=i)
            for i, (energy, n_bytes, duration_ms) in enumerate(values)]
    stats = aggregate_runs(runs)
    _assert_matches(stats.per_channel_energy['machine'], [energy for energy, _, _ in values])
    _assert_matches(stats.bytes, [n_bytes for _, n_bytes, _ in values])
    _assert_matches(stats.duration, [duration_ms / 1000.0 for _, _, duration_ms in values])


@given(values=run_values)
@settings(max_examples=200)
def test_composite_of_one_unit_equals_that_unit(values):
    runs = [make_run(energy=energy, n_bytes=n_bytes, duration_ms=duration_ms, run_index=i)
            for i, (energy, n_bytes, duration_ms) in enumerate(values)]
    login = aggregate_runs(runs)
    solo = FunctionalUnit('solo', ('Login',), 1.0, composite_of=('Login',))
    composed = compose_units({'Login': login}, solo)
    assert composed.unit == 'solo'
    assert composed.per_channel_energy == login.per_channel_energy
    assert composed.bytes == login.bytes
    assert composed.duration == login.duration
    assert composed.absent_channels == login.absent_channels
