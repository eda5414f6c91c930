import pytest

from crowdscore.aggregate import DEFAULT_WEIGHTS
from crowdscore.app import config as cfgmod
from crowdscore.errors import ConfigurationError, ValidationError
from crowdscore.qc import JobConfig
from crowdscore.sim import SimConfig


def load(tmp_path, text):
    p = tmp_path / "c.ini"
    p.write_text(text)
    return cfgmod.load(p)


def test_example_round_trips_to_defaults(tmp_path):
    cp = load(tmp_path, cfgmod.EXAMPLE)
    assert cfgmod.job_config(cp) == JobConfig()
    assert cfgmod.class_weights(cp) == DEFAULT_WEIGHTS
    sim = cfgmod.sim_config(cp)
    assert (sim.n_images, sim.n_patients, sim.class_prior) == (5483, 1909, SimConfig().class_prior)
    pipe = cfgmod.pipeline_config(cp)
    assert pipe.methods == ("cv", "ct", "wcv", "wct") and not pipe.allow_partial


def test_missing_file_is_os_error(tmp_path):
    with pytest.raises(OSError):
        cfgmod.load(tmp_path / "nope.ini")


@pytest.mark.parametrize("text", [
    "[job]\nquiz_sise = 5\n",
    "[job]\nquiz_size = five\n",
    "[weights]\ne = 0.9\n",
    "[sim]\ncolour = blue\n",
    "[sim]\npool = strange\n",
    "[sim]\npool = custom\n",
    "[pipeline]\nmethod = majority\n",
    "[pipeline]\nspeed = fast\n",
])
def test_rejected(tmp_path, text):
    cp = load(tmp_path, text)
    with pytest.raises(ConfigurationError):
        cfgmod.job_config(cp)
        cfgmod.class_weights(cp)
        cfgmod.sim_config(cp)
        cfgmod.pipeline_config(cp)


def test_weights_must_sit_in_their_bins(tmp_path):
    with pytest.raises(ValidationError):
        cfgmod.class_weights(load(tmp_path, "[weights]\nb = 0.2\n"))
    assert cfgmod.class_weights(load(tmp_path, "[weights]\nmidpoint = true\n")).weights[1] == 0.055


def test_custom_pool_and_overrides(tmp_path):
    cp = load(tmp_path, "[sim]\npool = custom\nn_images = 40\nn_patients = 20\n"
                        "[contributor.fast]\ncount = 4\naccuracy = 0.9\nseconds_mean = 80\n"
                        "[contributor.slow]\ncount = 2\naccuracy = 0.5\n")
    sim = cfgmod.sim_config(cp, seed=9, n_images=60)
    assert sim.master_seed == 9 and sim.n_images == 60
    assert [(p.name, n) for p, n in sim.contributor_pool] == [("fast", 4), ("slow", 2)]
    assert sim.contributor_pool[0][0].confusion[0, 0] == pytest.approx(0.9)
