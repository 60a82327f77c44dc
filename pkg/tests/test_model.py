import math

import pytest
from hypothesis import given, settings, strategies as st

from footprint_modules.errors import (
    FactorValidationError,
    InvalidQuantityError,
    MonotonicityError,
    SamplingError,
    TraceTooShortError,
    ValidationError,
)
from footprint_modules.model import (
    FACTOR_FIELDS,
    FunctionalUnit,
    NetworkCounters,
    PowerSample,
    ResourceTrace,
    bytes_to_gb,
    gb_to_bytes,
    joules_to_kwh,
    kwh_to_joules,
    load_factors,
    load_machine,
    validate_factors,
    validate_machine,
)

from conftest import FACTORS, MACHINE, write_yaml


def test_joules_to_kwh():
    assert joules_to_kwh(3.6e6) == 1.0
    assert joules_to_kwh(0) == 0
    assert kwh_to_joules(1.0) == 3.6e6


def test_gb_is_decimal():
    assert bytes_to_gb(1e9) == 1.0
    assert gb_to_bytes(0.5) == 5e8


@pytest.mark.parametrize('value', [-1, float('nan'), float('inf'), True, 'ten'])
def test_conversions_reject_bad_quantities(value):
    with pytest.raises(InvalidQuantityError):
        joules_to_kwh(value)


def test_validate_factors():
    factors = validate_factors(FACTORS)
    assert factors.grid_intensity == 0.5
    assert factors.source_label == 'test factors'
    assert factors.as_dict() == FACTORS


@pytest.mark.parametrize('key', list(FACTOR_FIELDS))
def test_missing_factor_names_the_key(key):
    raw = dict(FACTORS)
    del raw[key]
    with pytest.raises(FactorValidationError) as excinfo:
        validate_factors(raw)
    assert excinfo.value.field == key


def test_empty_source_label_rejected():
    with pytest.raises(FactorValidationError):
        validate_factors({**FACTORS, 'source_label': '  '})


@given(key=st.sampled_from(sorted(FACTOR_FIELDS)),
       value=st.one_of(st.floats(max_value=-1e-12), st.just(float('nan')), st.just(float('inf')),
                       st.booleans(), st.text()))
@settings(max_examples=200)
def test_any_bad_factor_is_rejected(key, value):
    with pytest.raises(FactorValidationError):
        validate_factors({**FACTORS, key: value})


@given(values=st.fixed_dictionaries({key: st.floats(min_value=0, max_value=1e6) for key in FACTOR_FIELDS}))
@settings(max_examples=200)
def test_any_non_negative_factors_are_accepted(values):
    factors = validate_factors({**values, 'source_label': 'x'})
    for key, attr in FACTOR_FIELDS.items():
        assert getattr(factors, attr) == values[key]


def test_machine_profile():
    machine = validate_machine(MACHINE)
    assert machine.lifetime == 126144000
    assert machine.as_dict() == MACHINE
    with pytest.raises(ValidationError):
        validate_machine({**MACHINE, 'usage_share': 1.5})
    with pytest.raises(ValidationError):
        validate_machine({**MACHINE, 'lifetime_s': 0})


def test_load_factors_and_machine(tmp_path):
    assert load_factors(write_yaml(tmp_path / 'f.yaml', FACTORS)).network_use_per_gb == 0.1
    assert load_machine(write_yaml(tmp_path / 'm.yaml', MACHINE)).embodied_total == 300


def test_load_factors_missing_file(tmp_path):
    with pytest.raises(OSError):
        load_factors(str(tmp_path / 'missing.yaml'))


def test_functional_unit_needs_positive_duration():
    with pytest.raises(ValidationError):
        FunctionalUnit(name='Login', steps=('Login',), target_duration=0)
    assert FunctionalUnit(name='s', steps=('a',), target_duration=1, composite_of=('a',)).is_composite


def _power(*times):
    return tuple(PowerSample(t=t, channels={'machine': 10.0}) for t in times)


def test_trace_needs_two_samples():
    with pytest.raises(TraceTooShortError):
        ResourceTrace(power=_power(0), network=(), start_t=0, end_t=0)


def test_trace_rejects_out_of_order_samples():
    with pytest.raises(SamplingError):
        ResourceTrace(power=_power(0, 20, 10), network=(), start_t=0, end_t=20)


def test_trace_rejects_decreasing_network_counters():
    network = (NetworkCounters(0, 10, 10), NetworkCounters(10, 20, 20), NetworkCounters(20, 15, 25))
    with pytest.raises(MonotonicityError) as excinfo:
        ResourceTrace(power=_power(0, 20), network=network, start_t=0, end_t=20)
    assert excinfo.value.index == 2


def test_trace_bytes_and_duration():
    network = (NetworkCounters(0, 100, 50), NetworkCounters(1000, 600, 150))
    trace = ResourceTrace(power=_power(0, 1000), network=network, start_t=0, end_t=1000)
    assert trace.bytes_total() == 600
    assert math.isclose(trace.duration_s, 1.0)
    assert trace.channels == ['machine']


def test_power_sample_rejects_negative_watts():
    with pytest.raises(SamplingError):
        PowerSample(t=0, channels={'machine': -1.0})


@given(gb=st.floats(min_value=0, max_value=1e6))
@settings(max_examples=500)
def test_gb_conversion_round_trip(gb):
    assert math.isclose(bytes_to_gb(gb_to_bytes(gb)), gb, rel_tol=1e-12, abs_tol=1e-300)


@given(a=st.floats(min_value=0, max_value=1e12), b=st.floats(min_value=0, max_value=1e12))
@settings(max_examples=500)
def test_joules_to_kwh_is_additive(a, b):
    assert math.isclose(joules_to_kwh(a + b), joules_to_kwh(a) + joules_to_kwh(b),
                        rel_tol=1e-12, abs_tol=1e-300)


@pytest.mark.parametrize('loader, error, content', [
    (load_factors, FactorValidationError, FACTORS),
    (load_machine, ValidationError, MACHINE),
])
def test_loaders_reject_non_utf8(tmp_path, loader, error, content):
    path = tmp_path / 'input.yaml'
    write_yaml(path, content)
    with open(path, 'ab') as f:
        f.write(b'note: \xff\xfe\n')
    with pytest.raises(error) as excinfo:
        loader(str(path))
    message = str(excinfo.value)
    assert str(path) in message
    assert f"line {len(path.read_bytes().splitlines())}" in message
