import pytest

from verification import (
    SUITES,
    verify,
    verify_eigs,
    verify_gaussian_approx,
    verify_gradients,
    verify_moments,
    verify_shift,
)


def test_suite_registry():
    assert list(SUITES) == ['moments', 'gradients', 'shift', 'eigs', 'gaussian_approx']


def test_unknown_suite():
    with pytest.raises(KeyError):
        verify('everything')


def test_gradients_suite():
    result = verify_gradients(0)
    assert result.passed, result.to_dict()


def test_shift_suite():
    result = verify_shift(0)
    assert result.passed, result.to_dict()


def test_eigs_suite():
    result = verify_eigs(0)
    assert result.passed, result.to_dict()
    assert result.checks[0].value == 0


def test_moments_suite_reduced_samples():
    result = verify_moments(0, samples=100_000)
    assert result.passed, result.to_dict()
    assert len(result.checks) == 4


def test_gaussian_suite_reduced_samples():
    result = verify_gaussian_approx(0, samples=1000, sizes=((100, 50),))
    assert result.passed, result.to_dict()
    names = [check.name for check in result.checks]
    assert any(name.startswith("q mean along w") for name in names)
    assert any(name.startswith("q mean offset") for name in names)


def test_report_shape():
    report = verify('eigs', seed=1)[0].to_dict()
    assert report['suite'] == 'eigs'
    assert report['elapsed'] >= 0
    assert {'name', 'value', 'threshold', 'passed'} <= set(report['checks'][0])


@pytest.mark.slow
def test_all_suites_pass():
    results = verify('all', seed=0)
    assert [r.suite for r in results] == list(SUITES)
    assert all(r.passed for r in results), [r.to_dict() for r in results if not r.passed]
