import json

import pytest

from evorl.cli import main, EXIT_CONFIG_ERROR, EXIT_RUNTIME_FAULT, EXIT_UNSOLVED
from evorl.masking import make_masked_env
from evorl.tests.test_harness import write_suite


def test_show_mask(capsys):
    assert main(['show-mask', '--env', 'cartpole', '--fraction', '0.3', '--seed', '1']) == 0
    mask = json.loads(capsys.readouterr().out)
    assert mask['env'] == 'cartpole' and mask['bins_per_dim'] == [4, 4, 4, 4]
    assert mask['masked_bins'] == sorted(make_masked_env('cartpole', 0.3, 1).mask.masked)


def test_show_mask_out_of_range(capsys):
    assert main(['show-mask', '--env', 'acrobot', '--fraction', '0.7']) == EXIT_CONFIG_ERROR
    assert 'fraction' in capsys.readouterr().err


def test_run(tmp_path, capsys):
    argv = ['run', '--preset', 'smoke', '--trials', '1', '--budget', '120']
    assert main(argv + ['--out', str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert out.startswith('eQ-learning\tcartpole\t0%\t')
    assert (tmp_path / 'summary.json').exists()


def test_run_config_errors(tmp_path, capsys):
    out = ['--out', str(tmp_path)]
    assert main(['run', '--fraction', '0.25'] + out) == EXIT_CONFIG_ERROR
    assert main(['run', '--algo', 'ppo'] + out) == EXIT_CONFIG_ERROR
    # a generation of the smoke preset costs 60 episodes
    assert main(['run', '--preset', 'smoke', '--budget', '40'] + out) == EXIT_CONFIG_ERROR
    assert main(['run', '--config', str(tmp_path / 'missing.json')]) == EXIT_CONFIG_ERROR
    assert 'error:' in capsys.readouterr().err


def test_require_solved(tmp_path):
    argv = [
        'run', '--preset', 'smoke', '--env', 'mountaincar', '--mode', 'rl-only',
        '--trials', '1', '--budget', '20', '--out', str(tmp_path), '--require-solved',
    ]
    assert main(argv) == EXIT_UNSOLVED


def test_report(tmp_path, capsys):
    dirs = [
        write_suite(tmp_path / 'a', 'cartpole', 0.0, 'eQ-learning', 196.3, 0.3, 10_800),
        write_suite(tmp_path / 'b', 'cartpole', 0.0, 'Q-learning', 150.0, 2.5),
    ]
    csv_path = tmp_path / 'table.csv'
    assert main(['report', *dirs, '--csv', str(csv_path)]) == 0
    out = capsys.readouterr().out
    assert '196.3 ±0.3 @ 10,800' in out and '150.0 ±2.5' in out
    assert csv_path.exists()


def test_report_errors(tmp_path):
    old = write_suite(tmp_path / 'old', 'cartpole', 0.0, 'DQN', schema_version=2)
    assert main(['report', old]) == EXIT_RUNTIME_FAULT
    assert main(['report', str(tmp_path / 'nothing')]) == EXIT_CONFIG_ERROR


@pytest.mark.parametrize(
    'argv',
    [
        ['run', '--env', 'pendulum'],
        ['run', '--mode', 'ea-rl'],
        ['run', '--fraction', 'a third'],
        ['show-mask', '--env', 'cartpole'],
        ['frobnicate'],
        [],
    ],
)
def test_usage_errors_are_configuration_errors(argv, capsys):
    with pytest.raises(SystemExit) as exit_info:
        main(argv)
    assert exit_info.value.code == EXIT_CONFIG_ERROR
    assert 'usage:' in capsys.readouterr().err


def test_help_is_not_an_error(capsys):
    with pytest.raises(SystemExit) as exit_info:
        main(['--help'])
    assert exit_info.value.code == 0
    assert 'show-mask' in capsys.readouterr().out
