"""Session fixtures handing out cached trained checkpoints.

The heavy lifting (configs, cache keys, actual training) lives in
``trainruns``; fixtures only resolve a tag to a finished run directory.
First use trains and caches the run, later sessions reuse it.
"""

import pytest

import trainruns


@pytest.fixture(scope="session")
def exp1_s2():
    """2D Gaussian, minimal two-dimensional summary."""
    return trainruns.ensure_run("exp1_s2")


@pytest.fixture(scope="session")
def exp1_s4():
    """2D Gaussian, overcomplete four-dimensional summary."""
    return trainruns.ensure_run("exp1_s4")


@pytest.fixture(scope="session")
def cs_run():
    """Cell-field model with the fixed-length feature summary."""
    return trainruns.ensure_run("cs_run")


@pytest.fixture(scope="session")
def niw_run():
    """5D normal-inverse-Wishart task with a 40-dimensional summary."""
    return trainruns.ensure_run("niw_run")


@pytest.fixture(scope="session")
def ddm_run():
    """Two-condition drift-diffusion task."""
    return trainruns.ensure_run("ddm_run")
