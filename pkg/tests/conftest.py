import os
import shlex
import sys

import pytest
import yaml

REPO_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))

MAIL_UNITS = ['Idle', 'Login', 'Logout', 'No attachment', 'Attachment', 'Reply', 'Delete']

FACTORS = {
    'grid_intensity_kgco2e_per_kwh': 0.5,
    'network_use_kgco2e_per_gb': 0.1,
    'server_use_kgco2e_per_gb': 0.05,
    'network_embodied_kgco2e_per_gb': 0.02,
    'server_embodied_kgco2e_per_gb': 0.01,
    'source_label': 'test factors',
}

MACHINE = {
    'embodied_total_kgco2e': 300,
    'lifetime_s': 126144000,
    'usage_share': 1.0,
}


@pytest.fixture(autouse=True)
def driver_pythonpath(monkeypatch):
    """Lets the mock driver child import footprint_modules from the checkout"""
    existing = os.environ.get('PYTHONPATH')
    monkeypatch.setenv('PYTHONPATH', REPO_ROOT if not existing else REPO_ROOT + os.pathsep + existing)


def mock_driver_command(*options: str) -> str:
    return ' '.join([shlex.quote(sys.executable), '-m', 'footprint_modules.scenario.mock_driver']
                    + [shlex.quote(option) for option in options])


def script_driver_command(path) -> str:
    return f"{shlex.quote(sys.executable)} {shlex.quote(str(path))}"


def constant_power(watts: float = 10.0, noise: float = 0.0):
    return {
        'kind': 'synthetic',
        'noise_std_w': noise,
        'waveforms': {
            'machine': {'shape': 'constant', 'amplitude_start': watts},
            'cpu': {'shape': 'constant', 'amplitude_start': watts / 2},
        },
    }


def scenario_dict(units=None, durations=0.1, n_runs=1, driver=None, **extra):
    units = units if units is not None else ['Login']
    raw = {
        'services': ['mock-mail'],
        'configurations': [
            {'label': 'Baseline', 'ad_blocker': False, 'cookie_blocking': False, 'provider': 'mock-mail'},
            {'label': 'Ad blocker', 'ad_blocker': True, 'cookie_blocking': False, 'provider': 'mock-mail'},
        ],
        'units': [{'name': name, 'steps': [name], 'target_duration_s': durations} for name in units],
        'n_runs': n_runs,
        'sampling_interval_ms': 10,
        'driver_command': driver or mock_driver_command('--default-bytes', '1000:200'),
        'power_provider': constant_power(),
        'cooldown_s': 0,
    }
    raw.update(extra)
    return raw


def write_yaml(path, content) -> str:
    with open(path, 'w', encoding='utf-8') as f:
        yaml.safe_dump(content, f, sort_keys=False)
    return str(path)


@pytest.fixture
def factors_file(tmp_path):
    return write_yaml(tmp_path / 'factors.yaml', FACTORS)


@pytest.fixture
def machine_file(tmp_path):
    return write_yaml(tmp_path / 'machine.yaml', MACHINE)
