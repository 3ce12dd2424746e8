"""
Runtime defaults and experiment config files.

Defaults come from the environment (a local .env file is loaded first) and
are always overridable from the command line. Experiment configs are flat
`key = value` files with `#` comments, tokenised by python-dotenv so every
binding keeps its line number for diagnostics.
"""

import io
import os

import numpy as np
from dotenv import load_dotenv
from dotenv.parser import parse_stream

from errors import ConfigParseError, DomainError, ShapeError
from linalg import make_rng, random_orthonormal
from model import CovarianceModel, TaskInstance
from montecarlo import INIT_CHOICES, INIT_EXPLICIT, POLICY_CHOICES, TrialConfig

# Load environment variables from .env file
load_dotenv()

# setting name -> (environment variable, default, parser)
RUNTIME_SETTINGS = {
    'trials': ('TTT_TRIALS', 2000, int),
    'seed': ('TTT_SEED', 0, int),
    'threads': ('TTT_THREADS', 0, int),
    'log_level': ('TTT_LOG_LEVEL', 'INFO', str),
}

BASIS_CHOICES = ('identity', 'random')
SWITCH_CHOICES = ('false', 'true')

# Stream for the random basis; trial streams use a single-element key
BASIS_STREAM = (0, 0)

REQUIRED_KEYS = ('n', 'd', 'k')

# key -> (kind, default)
CONFIG_KEYS = {
    'n': ('count', None),
    'd': ('count', None),
    'k': ('count', None),
    'sigma': ('float', 0.0),
    'trials': ('count', None),
    'base_seed': ('count', None),
    'init': (INIT_CHOICES, 'pretrained'),
    'weights': ('array', None),
    'eta_policy': (POLICY_CHOICES, 'theory_iso'),
    'eta': ('float', 0.0),
    'steps': ('count', 1),
    'decay': ('float', 1.0),
    'beta': ('array', '1'),
    'feature_eigs': ('array', '1'),
    'task_eigs': ('array', '1'),
    'basis': (BASIS_CHOICES, 'identity'),
    'whiten': (SWITCH_CHOICES, 'false'),
}


def get_setting(name):
    """
    Read a runtime default from the environment.

    Args:
        name: One of RUNTIME_SETTINGS ('trials', 'seed', 'threads', 'log_level')

    Returns:
        Parsed value, or the built-in default when the variable is unset
    """
    env_var, default, parser = RUNTIME_SETTINGS[name]
    raw = os.environ.get(env_var)
    if raw is None or raw.strip() == '':
        return default
    try:
        return parser(raw.strip())
    except ValueError:
        raise ConfigParseError(f"Environment variable {env_var}={raw!r} is not a valid {parser.__name__}")


def _convert(kind, raw, key, line):
    if isinstance(kind, tuple):
        if raw not in kind:
            raise ConfigParseError(f"expected one of {', '.join(kind)}, got '{raw}'", line, key)
        return raw
    if kind == 'array':
        parts = [p.strip() for p in raw.split(',')]
        if not parts or any(p == '' for p in parts):
            raise ConfigParseError(f"empty entry in comma-separated list '{raw}'", line, key)
        try:
            return np.array([float(p) for p in parts])
        except ValueError:
            raise ConfigParseError(f"not a list of numbers: '{raw}'", line, key)
    try:
        value = int(raw) if kind == 'count' else float(raw)
    except ValueError:
        raise ConfigParseError(f"expected a {'whole number' if kind == 'count' else 'number'}, got '{raw}'", line, key)
    if kind == 'count' and value < 0:
        raise ConfigParseError(f"must be >= 0, got {value}", line, key)
    if kind == 'float' and not np.isfinite(value):
        raise ConfigParseError(f"must be finite, got {raw}", line, key)
    return value


def parse_config_text(text):
    """
    Tokenise and type-check a flat config.

    Returns:
        dict mapping key -> (converted value, line number)

    Raises:
        ConfigParseError: On malformed lines, unknown or duplicate keys, bad
            values, or missing required keys
    """
    entries = {}
    for binding in parse_stream(io.StringIO(text)):
        raw = binding.original.string
        # leading blank lines are folded into the binding that follows them
        line = binding.original.line + raw[:len(raw) - len(raw.lstrip())].count('\n')
        if binding.error:
            raise ConfigParseError(f"cannot parse '{binding.original.string.strip()}'", line)
        if binding.key is None:
            continue  # blank line or comment
        key = binding.key
        if key not in CONFIG_KEYS:
            raise ConfigParseError("unknown key", line, key)
        if key in entries:
            raise ConfigParseError(f"duplicate key (first set on line {entries[key][1]})", line, key)
        if binding.value is None or binding.value.strip() == '':
            raise ConfigParseError("missing value", line, key)
        kind, _ = CONFIG_KEYS[key]
        entries[key] = (_convert(kind, binding.value.strip(), key, line), line)

    for key in REQUIRED_KEYS:
        if key not in entries:
            raise ConfigParseError("required key is missing", key=key)
    return entries


def _expand(entries, key, d):
    kind, default = CONFIG_KEYS[key]
    if key in entries:
        values, line = entries[key]
    else:
        values, line = _convert(kind, default, key, None), None
    if values.shape[0] == 1:
        return np.full(d, values[0])
    if values.shape[0] != d:
        raise ConfigParseError(f"expected 1 or {d} values, got {values.shape[0]}", line, key)
    return values


def build_trial_config(entries, trials=None, seed=None):
    """
    Turn parsed entries into a TrialConfig.

    trials / seed arguments override the file, which overrides the
    environment defaults.
    """
    def value(key):
        if key in entries:
            return entries[key][0]
        return CONFIG_KEYS[key][1]

    d = value('d')
    if d < 1 or value('n') < 1:
        raise ConfigParseError("n and d must be >= 1", key='n' if value('n') < 1 else 'd')
    base_seed = seed if seed is not None else entries.get('base_seed', (get_setting('seed'),))[0]
    n_trials = trials if trials is not None else entries.get('trials', (get_setting('trials'),))[0]

    try:
        if value('basis') == 'random':
            basis = random_orthonormal(make_rng(base_seed, *BASIS_STREAM), d)
        else:
            basis = np.eye(d)
        cov = CovarianceModel(basis, _expand(entries, 'feature_eigs', d), _expand(entries, 'task_eigs', d))
        task = TaskInstance(_expand(entries, 'beta', d), value('sigma'))
        weights = None
        if value('init') == INIT_EXPLICIT:
            if 'weights' not in entries:
                raise ConfigParseError("init = explicit needs a weights entry", key='weights')
            weights = (basis * _expand(entries, 'weights', d)) @ basis.T
        return TrialConfig(
            cov=cov,
            task=task,
            n=value('n'),
            k=value('k'),
            init=value('init'),
            eta_policy=value('eta_policy'),
            eta=value('eta'),
            steps=value('steps'),
            decay=value('decay'),
            trials=n_trials,
            base_seed=base_seed,
            weights=weights,
            whiten=value('whiten') == 'true',
        )
    except (DomainError, ShapeError) as e:
        raise ConfigParseError(str(e))


def load_config(config_path, trials=None, seed=None):
    """
    Read an experiment config file into a TrialConfig.

    Args:
        config_path: Path to a flat `key = value` file
        trials: Optional trial-count override
        seed: Optional base-seed override

    Raises:
        ConfigParseError: With line/key diagnostics
    """
    try:
        with open(config_path, 'r', encoding='utf-8') as f:
            text = f.read()
    except OSError as e:
        raise ConfigParseError(f"cannot read config '{config_path}': {e}")
    return build_trial_config(parse_config_text(text), trials=trials, seed=seed)
