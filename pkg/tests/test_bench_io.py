import csv
import os

import numpy as np
import pytest

from taylorac import bench_io as bio
from taylorac.cli import main
from taylorac.errors import InvalidArgument
from taylorac.fespace import interpolate
from taylorac.fespace import Field
from taylorac.mesh import build_rectangle
from taylorac.scheme import Discretization, State1

TINY = {"base_n": 2, "mesh_levels": 2, "T": 0.5, "sweep_n": 2, "lambdas": "1, 100",
        "energy_steps": 3, "sweep_inits": "analytic"}


def header(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return tuple(next(csv.reader(fh)))


def test_parse_config():
    text = "# comment\ncase = lambda-sweep\nbase_n = 4  # inline\nlambdas = 1, 10,100\ndegrees = 2,2,1\n" \
           "rt_resolutions = 9x36, 12X48\nfirst_order = yes\n"
    cfg = bio.RunConfig.from_mapping(bio.parse_config_text(text))
    assert cfg.case == "lambda_sweep" and cfg.base_n == 4 and cfg.lambdas == (1.0, 10.0, 100.0)
    assert cfg.degrees == (2, 2, 1) and cfg.rt_resolutions == ((9, 36), (12, 48)) and cfg.first_order
    assert bio.RunConfig().lambdas == tuple(np.logspace(0, 6, 13))
    for bad in ("nokey\n", "color = red\n"):
        with pytest.raises(InvalidArgument):
            bio.parse_config_text(bad)


@pytest.mark.parametrize("kw", [dict(degrees=(3, 2, 2)), dict(case="rt", init="analytic"),
                                dict(init="exact"), dict(T=0.0), dict(case="other"),
                                dict(sweep_inits=("analytic", "guess"))])
def test_config_invariants(kw):
    with pytest.raises(InvalidArgument):
        bio.RunConfig(**kw)


def test_load_config_overrides(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("lam = 2\nout = a\n")
    cfg = bio.load_config(str(p), lam=5.0, out=None)
    assert cfg.lam == 5.0 and cfg.out == "a"


def test_rt_case():
    rt = bio.RtCase()
    assert rt.mu == pytest.approx(1 / 5000)
    x = np.linspace(-0.5, 0.5, 41)
    y = np.linspace(-2, 2, 41)
    X, Y = np.meshgrid(x, y)
    r = rt.initial_density(X, Y)
    # strict bounds hold analytically; far from the interface tanh rounds to +-1
    assert np.all((r >= 1) & (r <= 3))
    assert 1 < rt.initial_density(0.0, -0.1) < 3
    assert rt.initial_density(0.0, 1.0) == pytest.approx(3.0) and rt.initial_density(0.0, -1.0) == pytest.approx(1.0)
    assert rt.eta(0.0) == pytest.approx(-0.1)
    m = rt.mesh(2, 8)
    assert m.vertices[:, 0].min() == -0.5 and m.vertices[:, 1].max() == 2.0
    p = rt.params(m, 0.01)
    assert np.allclose(p.sigma[2], 0.5 * m.h_per_cell) and p.lam == 5000 and p.cfl == 0.5
    with pytest.raises(InvalidArgument):
        bio.RtCase(rho1=1.0, rho2=3.0)


def test_converge_csv_golden_and_deterministic(tmp_path):
    cfg = bio.RunConfig.from_mapping(dict(TINY, out=str(tmp_path / "a")))
    reports, rates = bio.cmd_converge(cfg)
    assert header(tmp_path / "a" / "convergence.csv") == bio.CONVERGENCE_COLUMNS
    assert header(tmp_path / "a" / "rates.csv") == bio.RATE_COLUMNS
    assert bio.CONVERGENCE_COLUMNS[:5] == ("level", "n", "h_min", "tau", "steps")
    assert set(rates) == {"rho", "u", "p"} and len(reports) == 2
    bio.cmd_converge(cfg.updated(out=str(tmp_path / "b")))
    for name in ("convergence.csv", "rates.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_lambda_sweep_echo(tmp_path):
    cfg = bio.RunConfig.from_mapping(dict(TINY, out=str(tmp_path)))
    rows = bio.cmd_lambda_sweep(cfg)
    assert [r["lambda"] for r in rows] == [1.0, 100.0]
    assert header(tmp_path / "lambda_sweep.csv") == bio.LAMBDA_COLUMNS
    with open(tmp_path / "lambda_sweep.csv", encoding="utf-8") as fh:
        lam = [float(r["lambda"]) for r in csv.DictReader(fh)]
    assert lam == [1.0, 100.0]


def test_energy_audit(tmp_path):
    cfg = bio.RunConfig.from_mapping(dict(TINY, out=str(tmp_path)))
    reps = bio.cmd_energy_audit(cfg)
    assert len(reps) == 3 and header(tmp_path / "energy_audit.csv") == bio.ENERGY_COLUMNS
    assert all(r.momentum_residual < 1e-8 and r.density_residual < 1e-8 for r in reps)
    def rest(disc):
        return State1(interpolate(disc.R, 1.0), Field(disc.V), Field(disc.Q), 0.0)

    reps = bio.cmd_energy_audit(cfg, write=False, initial=rest)
    assert all(r.ke_new == 0 and r.p_new_sq == 0 and r.rho_jump_sq < 1e-28 for r in reps)


def test_vtk_roundtrip(tmp_path):
    m = build_rectangle(0, 0, 1, 1, 2, 3)
    disc = Discretization(m)
    rho = interpolate(disc.R, lambda x, y, t: 1 + x**3 - y)
    u = interpolate(disc.V, lambda x, y, t: np.stack([x * y, -y**2 + 0.123456789], -1))
    path = tmp_path / "f.vtk"
    fine = bio.write_vtk({"rho0": rho, "u0": u}, m, str(path))
    text = path.read_text()
    assert text.startswith("# vtk DataFile Version")
    npts, ncells, data = bio.read_vtk_point_data(str(path))
    assert npts == fine.num_vertices and ncells == fine.num_cells == 4 * m.num_cells
    assert f"POINTS {npts}" in text and f"CELLS {ncells} {4 * ncells}" in text
    x, y = fine.vertices[:, 0], fine.vertices[:, 1]
    assert np.allclose(data["rho0"], 1 + x**3 - y, rtol=1e-6, atol=1e-8)
    assert np.allclose(data["u0"], np.stack([x * y, -y**2 + 0.123456789], -1), rtol=1e-6, atol=1e-8)
    other = Discretization(build_rectangle(0, 0, 1, 1, 2, 2))
    with pytest.raises(InvalidArgument):
        bio.write_vtk({"r": Field(other.R)}, m, str(path))


def test_cli(tmp_path, capsys):
    cfgp = tmp_path / "c.cfg"
    cfgp.write_text("".join(f"{k} = {v}\n" for k, v in TINY.items()))
    out = tmp_path / "o"
    assert main(["converge", "--config", str(cfgp), "--out", str(out), "--mesh-levels", "2"]) == 0
    assert "rates" in capsys.readouterr().out and os.path.exists(out / "rates.csv")
    assert main(["energy-audit", "--config", str(cfgp), "--out", str(out)]) == 0
    assert main(["converge", "--config", str(tmp_path / "missing.cfg")]) == 2
    assert main(["converge", "--config", str(cfgp), "--mesh-levels", "1", "--out", str(out)]) == 2
    with pytest.raises(SystemExit):
        main(["bogus"])


def test_cli_rt_defaults_to_richardson():
    from taylorac.cli import build_parser, make_config

    cfg = make_config(build_parser().parse_args(["rt"]))
    assert cfg.case == "rt" and cfg.init == "richardson"
    cfg = make_config(build_parser().parse_args(["lambda-sweep", "--init", "analytic", "--lambda", "3"]))
    assert cfg.sweep_inits == ("analytic",) and cfg.lam == 3.0
