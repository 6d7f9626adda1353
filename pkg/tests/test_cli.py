"""End-to-end checks of the command line front end.

Everything goes through ``main(argv)`` with files under tmp_path, so these
are also integration tests of serialization, solving, and reporting.
"""

import json

import numpy as np
import pytest

from relucert.cli import CSV_FIELDS, main
from relucert.network import (Ball, CertInstance, Network, save_instance,
                              save_network)

HEADER = "rho,instance,L_lb,L_oracle,eigen_ratio,tight,bm2_status,wall_ms"


def scalar_net(depth=1):
    layers = [(np.array([[1.0]]), np.array([0.0])) for _ in range(depth)]
    return Network(layers=layers, output=(np.eye(1), np.zeros(1)))


def write_net(tmp_path, net, name="net.json"):
    p = tmp_path / name
    p.write_text(save_network(net))
    return str(p)


def write_ball(tmp_path, net, x_hat, z_hat, rho, name="inst.json"):
    inst = CertInstance(net=net, x_hat=np.array([float(x_hat)]),
                        goal=Ball(z_hat=np.array([float(z_hat)]), rho=float(rho)))
    p = tmp_path / name
    p.write_text(save_instance(inst))
    return str(p)


def run_json(tmp_path, argv):
    out = tmp_path / "out.json"
    rc = main(argv + ["--out", str(out)])
    return rc, json.loads(out.read_text())


class TestCertify:
    def test_tight_neuron(self, tmp_path):
        net = write_net(tmp_path, scalar_net())
        inst = write_ball(tmp_path, scalar_net(), -1.0, 1.0, 0.49)
        rc, rep = run_json(tmp_path, ["certify", "--network", net, "--instance", inst])
        assert rc == 0
        assert rep["verdict"] == "tight"
        assert rep["l_lb"] == pytest.approx(1.51, abs=1e-6)
        assert rep["witness"] == pytest.approx([0.51], abs=1e-9)
        assert rep["witness_source"] == "neuron"
        assert rep["predicates"]["neuron"]["status"] == "tight"

    def test_anchor_image_on_target(self, tmp_path):
        # residual radius covers the goal, so the optimum is zero and the
        # relaxation must agree to solver tolerance
        net = write_net(tmp_path, scalar_net())
        inst = write_ball(tmp_path, scalar_net(), 0.7, 0.7, 0.3)
        rc, rep = run_json(tmp_path, ["certify", "--network", net, "--instance", inst])
        assert rc == 0
        assert rep["verdict"] == "tight"
        assert rep["sdp"]["objective"] <= 1e-6
        assert rep["predicates"]["trivial_radius"]["status"] == "tight"

    def test_loose_two_layer_with_both_methods(self, tmp_path):
        net = write_net(tmp_path, scalar_net(2))
        inst = write_ball(tmp_path, scalar_net(2), -1.0, 1.0, 0.4)
        rc, rep = run_json(tmp_path, ["certify", "--network", net,
                                      "--instance", inst, "--method", "both"])
        assert rc == 0
        assert rep["verdict"] == "loose"
        assert rep["bm2"]["status"] == "local_only"
        # the relaxation dips below the true distance of 1.6 here
        assert rep["l_lb"] == pytest.approx(1.43303, abs=1e-4)
        assert rep["l_lb"] < 1.6 - 1e-3

    def test_infeasible_exits_two(self, tmp_path):
        net = write_net(tmp_path, scalar_net())
        inst = write_ball(tmp_path, scalar_net(), 0.0, -1.0, 0.5)
        rc, rep = run_json(tmp_path, ["certify", "--network", net, "--instance", inst])
        assert rc == 2
        assert rep["verdict"] == "infeasible"

    def test_missing_file_exits_one(self, tmp_path, capsys):
        net = write_net(tmp_path, scalar_net())
        rc = main(["certify", "--network", net,
                   "--instance", str(tmp_path / "absent.json")])
        assert rc == 1
        assert "cannot read" in capsys.readouterr().err

    def test_unknown_flag_exits_one(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["certify", "--bogus"])
        assert exc.value.code == 1

    def test_csv_format(self, tmp_path):
        net = write_net(tmp_path, scalar_net())
        inst = write_ball(tmp_path, scalar_net(), -1.0, 1.0, 0.49)
        out = tmp_path / "row.csv"
        rc = main(["certify", "--network", net, "--instance", inst,
                   "--format", "csv", "--out", str(out)])
        assert rc == 0
        lines = out.read_text().splitlines()
        assert lines[0] == HEADER
        assert len(lines) == 2
        cells = dict(zip(CSV_FIELDS, lines[1].split(",")))
        assert cells["instance"] == "0"
        assert cells["tight"] == "true"
        assert cells["L_oracle"] == ""
        assert float(cells["L_lb"]) == pytest.approx(1.51, abs=1e-6)


class TestSweep:
    def sweep(self, tmp_path, extra, name="sweep.csv"):
        net = write_net(tmp_path, scalar_net())
        out = tmp_path / name
        rc = main(["sweep", "--network", net, "--rho-min", "0.05",
                   "--rho-max", "0.5", "--steps", "2", "--instances", "2",
                   "--out", str(out)] + extra)
        return rc, out

    def test_row_accounting(self, tmp_path):
        rc, out = self.sweep(tmp_path, [])
        assert rc == 0
        lines = out.read_text().splitlines()
        assert lines[0] == HEADER
        # steps * (instances + a summary row)
        assert len(lines) - 1 == 2 * (2 + 1)
        summaries = [l for l in lines[1:] if l.split(",")[1] == "summary"]
        assert len(summaries) == 2

    def test_no_timing_gives_identical_bytes(self, tmp_path):
        _, a = self.sweep(tmp_path, ["--no-timing"], "a.csv")
        _, b = self.sweep(tmp_path, ["--no-timing"], "b.csv")
        assert a.read_bytes() == b.read_bytes()
        for line in a.read_text().splitlines()[1:]:
            cells = dict(zip(CSV_FIELDS, line.split(",")))
            assert cells["wall_ms"] == ("" if cells["instance"] == "summary" else "0")

    def test_float_cells_roundtrip_losslessly(self, tmp_path):
        _, out = self.sweep(tmp_path, ["--no-timing"])
        for line in out.read_text().splitlines()[1:]:
            cells = dict(zip(CSV_FIELDS, line.split(",")))
            if cells["instance"] == "summary":
                continue
            for key in ("rho", "L_lb", "eigen_ratio"):
                assert repr(float(cells[key])) == cells[key]

    def test_large_radius_regime_is_all_tight(self, tmp_path):
        # every target is reachable exactly once the radius dominates the
        # anchor-to-target distance, and the verdict should say so
        net = write_net(tmp_path, scalar_net())
        out = tmp_path / "wide.csv"
        rc = main(["sweep", "--network", net, "--rho-min", "2", "--rho-max", "4",
                   "--steps", "2", "--instances", "2", "--no-timing",
                   "--out", str(out)])
        assert rc == 0
        for line in out.read_text().splitlines()[1:]:
            cells = dict(zip(CSV_FIELDS, line.split(",")))
            if cells["instance"] == "summary":
                assert cells["tight"] == "1.0"
            else:
                assert cells["tight"] == "true"

    def test_layers_beyond_depth_exits_one(self, tmp_path, capsys):
        net = write_net(tmp_path, scalar_net(2))
        rc = main(["sweep", "--network", net, "--layers", "3",
                   "--rho-min", "0.1", "--rho-max", "1.0"])
        assert rc == 1
        assert "out of range" in capsys.readouterr().err

    def test_json_rows_match_csv_schema(self, tmp_path):
        net = write_net(tmp_path, scalar_net())
        out = tmp_path / "rows.json"
        rc = main(["sweep", "--network", net, "--rho-min", "0.05",
                   "--rho-max", "0.5", "--steps", "2", "--instances", "2",
                   "--format", "json", "--out", str(out)])
        assert rc == 0
        rows = json.loads(out.read_text())
        assert len(rows) == 6
        assert all(list(r.keys()) == CSV_FIELDS for r in rows)


class TestProject:
    def test_collinear_worked_example(self, capsys):
        rc = main(["project", "--z-hat", "2", "--rho", "1", "--x-hat", "-1"])
        assert rc == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc == {"distance": 2.0, "collinear": True, "x_star": 1.0}

    def test_anchor_past_the_vertex_clamps(self, tmp_path):
        rc, doc = run_json(tmp_path, ["project", "--z-hat", "1",
                                      "--rho", "1.5", "--x-hat", "5"])
        assert rc == 0
        assert doc["distance"] == pytest.approx(2.5, abs=1e-12)
        assert doc["x_star"] == pytest.approx(2.5, abs=1e-12)

    def test_empty_cap_exits_two(self, tmp_path):
        rc, doc = run_json(tmp_path, ["project", "--z-hat", "-2",
                                      "--rho", "1", "--x-hat", "0"])
        assert rc == 2
        assert doc["status"] == "infeasible"
        assert "message" in doc


class TestOracleCommand:
    def test_worked_example(self, tmp_path):
        net = write_net(tmp_path, scalar_net())
        inst = write_ball(tmp_path, scalar_net(), -1.0, 1.0, 0.49)
        rc, doc = run_json(tmp_path, ["oracle", "--network", net, "--instance", inst])
        assert rc == 0
        assert doc["status"] == "ok"
        assert doc["value"] == pytest.approx(1.51, abs=1e-6)
        assert doc["argmin"] == pytest.approx([0.51], abs=1e-6)

    def test_infeasible_exits_two(self, tmp_path):
        net = write_net(tmp_path, scalar_net())
        inst = write_ball(tmp_path, scalar_net(), 0.0, -1.0, 0.5)
        rc, doc = run_json(tmp_path, ["oracle", "--network", net, "--instance", inst])
        assert rc == 2
        assert doc["status"] == "infeasible"
        assert doc["argmin"] is None


class TestAttackCommand:
    def test_scalar_halfspace_upper_bound(self, tmp_path):
        # readout rows (0, z) and classes (0, 1): flipping the argmax from
        # class 0 to class 1 means z >= 0.5, nearest input from -1 is 0.5
        net = Network(layers=[(np.array([[1.0]]), np.array([0.0]))],
                      output=(np.array([[0.0], [1.0]]), np.array([0.5, 0.0])))
        netp = write_net(tmp_path, net)
        inst = tmp_path / "attack.json"
        inst.write_text(json.dumps({
            "x_hat": [-1.0],
            "goal": {"halfspace": {"true_class": 0, "target_class": 1,
                                   "rho": 0.4}},
        }))
        rc, doc = run_json(tmp_path, ["attack", "--network", netp,
                                      "--instance", str(inst)])
        assert rc == 0
        assert doc["status"] == "ok"
        assert 1.5 - 1e-9 <= doc["d_ub"] <= 1.505
        assert doc["argmin"] == pytest.approx([0.5], abs=1e-3)
