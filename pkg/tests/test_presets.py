"""
Unit tests for bundled and user presets.
"""

import json

import pytest

from src.config.presets import BUNDLED_PRESETS, get_preset, list_presets, load_preset
from src.config.config_manager import reset_config
from src.utils.errors import ConfigError

EXPECTED = [
    "fig-epszero-1d-a", "fig-epszero-1d-b", "fig-epszero-1d-c",
    "fig-asym-1d-a", "fig-asym-1d-b", "fig-asym-1d-c",
    "overlap-vs-eps", "gamma-convergence",
    "fig-epszero-2d-a", "fig-epszero-2d-b", "fig-epszero-2d-c",
    "fig-admm-2d-a", "fig-admm-2d-b", "fig-admm-2d-c", "fig-admm-2d-d",
    "mix-meet", "mix-meet-partial", "pde-eps-study", "pde-vs-admm-2d",
]


class TestBundledPresets:
    """Test cases for the bundled experiment suite."""

    def test_all_listed(self):
        assert set(EXPECTED) <= set(list_presets())

    @pytest.mark.parametrize("name", EXPECTED)
    def test_preset_is_valid(self, name):
        """Every bundled preset passes validation."""
        spec = load_preset(name)
        assert spec.name == name

    def test_epszero_parameters(self):
        spec = load_preset("fig-epszero-1d-c")

        assert spec.model.c11 == -1.5
        assert spec.model.c22 == -2.0
        assert spec.model.m_r == 0.2
        assert spec.model.m_b == 0.3
        assert spec.model.epsilon == 0.0
        assert spec.domain.n_nodes == 1000

    def test_mix_meet(self):
        """Two bumps meeting under strong red self-attraction."""
        spec = load_preset("mix-meet")

        assert spec.mode == "evolve"
        assert spec.model.epsilon == 0.0002
        assert spec.init.centers == (-0.6, 0.6)
        assert spec.solver.snapshot_times == (5.0, 20.0, 50.0, 75.0)

    def test_two_dimensional_presets_use_disc(self):
        for name in ("fig-epszero-2d-a", "fig-admm-2d-d", "pde-vs-admm-2d"):
            spec = load_preset(name)
            assert spec.domain.kind == "disc"
            assert spec.domain.radius == 2.0
            assert spec.model.potential is False

    def test_sweeps(self):
        overlap = load_preset("overlap-vs-eps")
        gamma = load_preset("gamma-convergence")

        assert overlap.mode == "sweep"
        assert overlap.sweep.parameter == "model.epsilon"
        assert overlap.sweep.values[0] == 0.0
        assert gamma.sweep.reference == 0.0

    def test_minimizer_penalty(self):
        """Minimizations run with a penalty large enough for a convex block 2."""
        for name in EXPECTED:
            spec = load_preset(name)
            if spec.mode in ("minimize", "sweep") or spec.diagnostics.compare_minimizer:
                assert spec.solver.mu == 5.0, name

    def test_small_epsilon_evolutions_clamp(self):
        for name in ("mix-meet", "mix-meet-partial", "pde-vs-admm-2d"):
            assert load_preset(name).solver.on_violation == "clamp"
        assert load_preset("pde-eps-study").solver.on_violation == "abort"

    def test_output_dir(self, tmp_path):
        spec = load_preset("fig-epszero-1d-a", str(tmp_path / "out"))
        assert spec.output_dir == str(tmp_path / "out")

    def test_get_preset_is_a_copy(self):
        """Callers may mutate the returned document."""
        document = get_preset("mix-meet")
        document["model"]["epsilon"] = 1.0

        assert BUNDLED_PRESETS["mix-meet"]["model"]["epsilon"] == 0.0002

    def test_unknown_preset(self):
        with pytest.raises(ConfigError) as excinfo:
            get_preset("no-such-preset")
        assert excinfo.value.field == "preset"


class TestUserPresets:
    """Test cases for presets read from CROSSDIFF_PRESETS_DIR."""

    @pytest.fixture
    def presets_dir(self, tmp_path, monkeypatch):
        directory = tmp_path / "presets"
        directory.mkdir()
        document = get_preset("fig-epszero-1d-a")
        document["name"] = "custom"
        document["domain"]["n_nodes"] = 41
        (directory / "custom.json").write_text(json.dumps(document))
        (directory / "broken.json").write_text("{")
        monkeypatch.setenv("CROSSDIFF_PRESETS_DIR", str(directory))
        reset_config()
        return directory

    def test_listed_after_bundled(self, presets_dir):
        names = list_presets()

        assert names[-1] == "custom"
        assert "broken" not in names

    def test_load(self, presets_dir):
        spec = load_preset("custom")
        assert spec.domain.n_nodes == 41
