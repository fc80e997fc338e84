"""
Pytest configuration and shared fixtures.
Everything here is deterministic and small enough to run in milliseconds.
"""
import sys
from pathlib import Path

import numpy as np
import pytest

# Add project root to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from pmdlab.mdp.gridworld import held_out_config
from pmdlab.mdp.tabular import random_mdp
from pmdlab.mirror.potentials import (AugmentedPiecewisePotential, L2Potential, NegEntropyPotential,
                                      PiecewisePotential, negentropy_init_psi)
from pmdlab.models.schemas import GridObject, GridSpec, PmdConfig


# ============================================================================
# MDPs
# ============================================================================

@pytest.fixture
def small_mdp():
    """Random 4-state, 3-action MDP with gamma = 0.9."""
    return random_mdp(4, 3, 0.9, seed=7)


@pytest.fixture
def random_mdps():
    """Ten random 4-state, 3-action MDPs."""
    return [random_mdp(4, 3, 0.9, seed=s) for s in range(10)]


@pytest.fixture
def tiny_grid():
    """3x3 room with one respawning reward in the corner."""
    return GridSpec(
        name="tiny",
        width=3,
        height=3,
        objects=(GridObject(cell=(2, 2), reward=1.0),),
        start_cells=frozenset([(0, 0)]),
        gamma=0.9,
    )


@pytest.fixture
def open_room():
    return held_out_config("open_room")


# ============================================================================
# Potentials
# ============================================================================

@pytest.fixture
def builtin_potentials():
    """One instance of every closed-form family."""
    psi = negentropy_init_psi(20)
    return {
        "negentropy": NegEntropyPotential(),
        "l2": L2Potential(),
        "piecewise": PiecewisePotential(psi),
        "augmented_piecewise": AugmentedPiecewisePotential(psi),
    }


@pytest.fixture
def rng():
    return np.random.Generator(np.random.Philox(1234))


# ============================================================================
# Configs
# ============================================================================

@pytest.fixture
def exact_config():
    """Exact-Q closed-form PMD, short horizon."""
    return PmdConfig(q_mode="exact", update_mode="closed_form", num_iterations=20, eta=0.1)


@pytest.fixture
def gae_config():
    """Sampled-Q PMD with a small rollout budget."""
    return PmdConfig(q_mode="gae", update_mode="closed_form", num_iterations=8, num_envs=8,
                     unroll_length=16, eta=0.1, seed=3)


@pytest.fixture
def output_dir(tmp_path):
    """Per-test directory for run artifacts."""
    out = tmp_path / "out"
    out.mkdir()
    return out
