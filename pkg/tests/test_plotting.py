import pytest

from storagecert.casestudy import room_casestudy
from storagecert.plotting import plot_trajectories
from storagecert.sim import SimConfig, SimulationError, controllers_from_certificates, simulate


@pytest.fixture(scope="module")
def run(published_cert):
    net = room_casestudy(3)
    return simulate(net, controllers_from_certificates([published_cert] * 3),
                    SimConfig(seed=0, trials=12, horizon=25, record="full", track=(1,)))


@pytest.mark.parametrize("suffix, magic", [("png", b"\x89PNG"), ("pdf", b"%PDF"), ("svg", b"<?xml")])
def test_figure_formats(tmp_path, run, suffix, magic):
    path = tmp_path / f"traj.{suffix}"
    assert plot_trajectories(run, path, band=(17, 23), max_trials=5) == str(path)
    assert path.read_bytes().startswith(magic)


def test_needs_recorded_trajectories(tmp_path, published_cert):
    net = room_casestudy(3)
    flags = simulate(net, controllers_from_certificates([published_cert] * 3), SimConfig(seed=0, trials=2, horizon=3))
    with pytest.raises(SimulationError):
        plot_trajectories(flags, tmp_path / "x.png")
