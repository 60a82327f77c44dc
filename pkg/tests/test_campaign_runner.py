import math
import textwrap

import pytest

from footprint_modules.errors import (
    CampaignError,
    DriverRunError,
    DriverTimeoutError,
    DurationError,
    ProtocolError,
    RunError,
    ScenarioValidationError,
)
from footprint_modules.scenario.campaign_runner import CampaignRunner, run_campaign, run_unit
from footprint_modules.scenario.scenario_parser import parse_scenario

from conftest import mock_driver_command, scenario_dict, script_driver_command


def _spec(**kwargs):
    return parse_scenario(scenario_dict(**kwargs))


def test_run_unit_constant_power_oracle():
    spec = _spec(durations=0.3)
    record = run_unit(spec.unit('Login'), spec.configuration('Baseline'), spec, 0)
    assert record.unit == 'Login'
    assert record.configuration == 'Baseline'
    # 10 W for 0.3 s, 5 W on cpu
    assert math.isclose(record.energy_joules['machine'], 3.0, rel_tol=1e-9)
    assert math.isclose(record.energy_joules['cpu'], 1.5, rel_tol=1e-9)
    assert math.isclose(record.duration_s, 0.3)
    assert record.trace.start_t == 0 and record.trace.end_t == 300
    assert record.bytes_total == 1200
    assert record.metadata['network_source'] == 'driver'
    assert record.metadata['duration_deviation'] == 0


def test_run_unit_with_several_steps():
    raw = scenario_dict(durations=0.2)
    raw['units'][0]['steps'] = ['Open', 'Type', 'Send']
    spec = parse_scenario(raw)
    record = run_unit(spec.unit('Login'), spec.configuration('Baseline'), spec, 0)
    assert [step['name'] for step in record.metadata['steps']] == ['Open', 'Type', 'Send']
    assert math.isclose(record.energy_joules['machine'], 2.0, rel_tol=1e-9)


def test_per_configuration_traffic():
    spec = _spec(driver=mock_driver_command('--bytes', 'Ad blocker=400:100', '--default-bytes', '1000:200'))
    runner = CampaignRunner(spec)
    assert runner.run_unit(spec.unit('Login'), spec.configuration('Ad blocker'), 0).bytes_total == 500
    assert runner.run_unit(spec.unit('Login'), spec.configuration('Baseline'), 0).bytes_total == 1200


def test_no_network_source():
    spec = _spec(driver=mock_driver_command())
    record = run_unit(spec.unit('Login'), spec.configuration('Baseline'), spec, 0)
    assert record.metadata['network_source'] == 'none'
    assert record.bytes_total == 0


def test_driver_error_message_is_passed_through():
    spec = _spec(driver=mock_driver_command('--fail-unit', 'Login', '--fail-message', 'login failed'))
    with pytest.raises(DriverRunError) as excinfo:
        run_unit(spec.unit('Login'), spec.configuration('Baseline'), spec, 0)
    assert excinfo.value.driver_message == 'login failed'
    assert excinfo.value.exit_code == 2


def test_step_end_without_start_is_a_protocol_error():
    spec = _spec(driver=mock_driver_command('--malformed'))
    with pytest.raises(ProtocolError) as excinfo:
        run_unit(spec.unit('Login'), spec.configuration('Baseline'), spec, 0)
    assert excinfo.value.line == 'STEP Login END 0'


def test_hanging_driver_times_out():
    spec = _spec(durations=0.2, driver=mock_driver_command('--hang'))
    with pytest.raises(DriverTimeoutError):
        run_unit(spec.unit('Login'), spec.configuration('Baseline'), spec, 0)


def _write_driver(tmp_path, body):
    path = tmp_path / 'driver.py'
    path.write_text(textwrap.dedent(body), encoding='utf-8')
    return script_driver_command(path)


SHORT_DRIVER = """
    import sys, time
    print('READY', flush=True)
    sys.stdin.readline()
    print('STEP Login START 0', flush=True)
    time.sleep(0.05)
    print('STEP Login END 50', flush=True)
    print('DONE 0', flush=True)
"""


def test_duration_outside_tolerance_fails(tmp_path):
    spec = _spec(durations=0.2, driver=_write_driver(tmp_path, SHORT_DRIVER))
    with pytest.raises(DurationError):
        run_unit(spec.unit('Login'), spec.configuration('Baseline'), spec, 0)


def test_duration_deviation_is_flagged_when_not_enforced(tmp_path):
    spec = _spec(durations=0.2, driver=_write_driver(tmp_path, SHORT_DRIVER), enforce_duration=False)
    record = run_unit(spec.unit('Login'), spec.configuration('Baseline'), spec, 0)
    assert record.metadata['duration_deviation_flag'] is True
    assert math.isclose(record.metadata['duration_deviation'], 0.75)
    assert math.isclose(record.energy_joules['machine'], 0.5, rel_tol=1e-9)


def test_driver_exiting_early_is_a_protocol_error(tmp_path):
    driver = _write_driver(tmp_path, """
        import sys
        print('READY', flush=True)
        sys.stdin.readline()
        print('STEP Login START 0', flush=True)
    """)
    spec = _spec(driver=driver)
    with pytest.raises(ProtocolError):
        run_unit(spec.unit('Login'), spec.configuration('Baseline'), spec, 0)


def test_missing_driver_executable():
    spec = _spec(driver='/nonexistent/driver --flag')
    with pytest.raises(RunError):
        run_unit(spec.unit('Login'), spec.configuration('Baseline'), spec, 0)


def test_composite_units_are_not_executed():
    raw = scenario_dict(units=['Login', 'Logout'])
    raw['units'].append({'name': 'session', 'composite_of': ['Login', 'Logout']})
    spec = parse_scenario(raw)
    with pytest.raises(ScenarioValidationError):
        run_unit(spec.unit('session'), spec.configuration('Baseline'), spec, 0)


def test_campaign_runs_every_unit_sequentially():
    spec = _spec(units=['Idle', 'Login'], n_runs=3)
    campaign = run_campaign(spec, spec.configuration('Baseline'))
    assert campaign.complete
    assert set(campaign.runs) == {'Idle', 'Login'}
    assert [record.run_index for record in campaign.runs['Login']] == [0, 1, 2]
    windows = sorted(record.metadata['window_ms'] for record in campaign.all_runs())
    assert len(windows) == 6
    for (_, end), (start, _) in zip(windows, windows[1:]):
        assert end <= start


def test_minimal_campaign():
    spec = _spec(n_runs=1)
    campaign = run_campaign(spec, spec.configuration('Baseline'))
    assert len(campaign.all_runs()) == 1


def test_cooldown_between_runs():
    pauses = []
    spec = _spec(units=['Login'], n_runs=3, cooldown_s=2.5)
    CampaignRunner(spec, sleep=pauses.append).run_campaign(spec.configuration('Baseline'))
    assert pauses == [2.5, 2.5]


def test_failed_run_aborts_the_campaign():
    spec = _spec(units=['Idle', 'Login'], n_runs=2, driver=mock_driver_command('--fail-unit', 'Login'))
    with pytest.raises(CampaignError) as excinfo:
        run_campaign(spec, spec.configuration('Baseline'))
    assert excinfo.value.unit == 'Login'
    assert excinfo.value.run_index == 0


def test_keep_going_records_failures():
    spec = _spec(units=['Idle', 'Login'], n_runs=2, driver=mock_driver_command('--fail-unit', 'Login'))
    campaign = run_campaign(spec, spec.configuration('Baseline'), keep_going=True)
    assert not campaign.complete
    assert len(campaign.runs['Idle']) == 2
    assert campaign.runs['Login'] == ()
    assert [(failure['unit'], failure['run_index']) for failure in campaign.failures] == [('Login', 0), ('Login', 1)]


def test_campaigns_are_deterministic_with_seeded_noise():
    raw = scenario_dict(units=['Login'], n_runs=2, seed=11)
    raw['power_provider']['noise_std_w'] = 0.5
    spec = parse_scenario(raw)
    first = run_campaign(spec, spec.configuration('Baseline'))
    second = run_campaign(spec, spec.configuration('Baseline'))
    for a, b in zip(first.all_runs(), second.all_runs()):
        assert a.energy_joules == b.energy_joules
    energies = [record.energy_joules['machine'] for record in first.all_runs()]
    assert energies[0] != energies[1]
