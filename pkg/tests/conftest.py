from fractions import Fraction

import pytest
from hypothesis import settings
from hypothesis import strategies as st

from jointshap.game import TabularGame

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@st.composite
def rational_games(draw, min_n=1, max_n=5):
    """Random exact games with small rational worths and v(empty) = 0."""
    n = draw(st.integers(min_n, max_n))
    nums = draw(st.lists(st.integers(-20, 20), min_size=(1 << n) - 1, max_size=(1 << n) - 1))
    dens = draw(st.lists(st.integers(1, 6), min_size=(1 << n) - 1, max_size=(1 << n) - 1))
    return TabularGame(n, [Fraction(0)] + [Fraction(a, b) for a, b in zip(nums, dens)])


@pytest.fixture
def tmp_json(tmp_path):
    return tmp_path / "game.json"
