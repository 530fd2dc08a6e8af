import json

import pytest

from omnitree import codec
from omnitree.cli import export_csv, export_obj, inspect_text, main
from omnitree.core import Omnitree, singleton_tree
from omnitree.mesh import icosphere, save_stl
from trees import two_level_tree


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_refine_and_evaluate_round_trip(tmp_path, capsys):
    tree, field = tmp_path / "t.omni", tmp_path / "f.omng"
    code, out, _ = run(capsys, "refine", "--shape", "sphere", "--max-leaves", 200, "--seed", 7,
                       "--n-s", 64, "--n-g", 256, "--tree-out", tree, "--field-out", field)
    assert code == 0
    stats = json.loads(out)
    assert 200 <= stats["N"] < 208 and stats["normalized"] and stats["status"] == "ok"
    code, out, _ = run(capsys, "evaluate", "--tree", tree, "--field", field, "--shape", "sphere",
                       "--n-e", 50_000, "--seed", 7)
    res = json.loads(out)
    assert code == 0 and res["N"] == stats["N"] and 0 < res["l1_error"] < 0.2
    assert res["tree_bits"] == 3 * stats["nodes"]


def test_refine_cube_octree_reports_resolved(tmp_path, capsys):
    code, out, err = run(capsys, "refine", "--shape", "cube", "--mode", "octree", "--max-leaves", 16,
                         "--tree-out", tmp_path / "c.omno", "--field-out", tmp_path / "c.omng")
    assert code == 2 and json.loads(out)["N"] == 1 and "resolved" in err
    assert (tmp_path / "c.omno").read_bytes()[:4] == b"OMNO"
    code, out, _ = run(capsys, "evaluate", "--tree", tmp_path / "c.omno", "--field", tmp_path / "c.omng",
                       "--shape", "cube", "--n-e", 1000)
    assert json.loads(out)["l1_error"] == 0.0 and json.loads(out)["tree_bits"] == 1


def test_refine_missing_mesh(tmp_path, capsys):
    code, _, err = run(capsys, "refine", "--shape", "mesh:" + str(tmp_path / "missing.stl"))
    assert code == 1 and "cannot read mesh" in err


def test_refine_with_mesh_file(tmp_path, capsys):
    save_stl(icosphere(2), tmp_path / "ball.stl")
    code, out, _ = run(capsys, "refine", "--shape", f"mesh:{tmp_path / 'ball.stl'}", "--max-leaves", 30,
                       "--n-s", 32, "--n-g", 64, "--tree-out", tmp_path / "t", "--field-out", tmp_path / "f")
    assert code == 0 and json.loads(out)["N"] >= 30


def test_evaluate_errors(tmp_path, capsys):
    (tmp_path / "t.omni").write_bytes(codec.encode(two_level_tree()))
    (tmp_path / "f.omng").write_bytes(codec.encode_field([1, 0, 1, 0]))
    code, _, err = run(capsys, "evaluate", "--tree", tmp_path / "t.omni", "--field", tmp_path / "f.omng",
                       "--shape", "sphere")
    assert code == 1 and "dimension" in err
    (tmp_path / "bad.omni").write_bytes(codec.encode(two_level_tree())[:-1])
    code, _, err = run(capsys, "evaluate", "--tree", tmp_path / "bad.omni", "--field", tmp_path / "f.omng",
                       "--shape", "sphere")
    assert code == 1 and "premature" in err
    code, _, err = run(capsys, "evaluate", "--shape", "sphere")
    assert code == 1 and "--tree" in err


def test_config_file_and_env_threads(tmp_path, capsys, monkeypatch):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# test run\nshape = halfspace:0:0.3\nmax-leaves = 12\nn_s = 32\nn-g = 64\n"
                   f"tree-out = {tmp_path / 't'}\nfield_out = {tmp_path / 'f'}\n")
    monkeypatch.setenv("OMNITREE_THREADS", "3")
    code, out, _ = run(capsys, "refine", "--config", cfg)
    stats = json.loads(out)
    assert code == 0 and stats["splits"][1:] == [0, 0] and stats["N"] == 12
    code, out, _ = run(capsys, "refine", "--config", cfg, "--max-leaves", 5)
    assert json.loads(out)["N"] == 5
    cfg.write_text("colour = blue\n")
    code, _, err = run(capsys, "refine", "--config", cfg, "--shape", "cube")
    assert code == 1 and "colour" in err


def test_sweep_rows(tmp_path, capsys):
    code, out, _ = run(capsys, "sweep", "--shape", "sphere", "--ladder", "16,32,64", "--n-s", 32,
                       "--n-g", 64, "--n-e", 20_000, "--seeds", "0,1")
    lines = out.strip().splitlines()
    assert code == 0 and len(lines) == 1 + 2 * 2 * 3
    assert lines[0] == "shape,mode,d,N,l1_error,rate,tree_bits,data_bits,info_density,seed"
    code, out, _ = run(capsys, "sweep", "--shape", "cube", "--max-leaves", 64, "--n-e", 1000)
    assert all(line.split(",")[4] == "0.0" for line in out.strip().splitlines()[1:])
    code, _, err = run(capsys, "sweep", "--shape", "sphere", "--ladder", "16,24")
    assert code == 1 and "powers of two" in err


def test_export_obj_and_csv():
    t = singleton_tree(3)
    obj = export_obj(t, [1])
    assert sum(line.startswith("v ") for line in obj.splitlines()) == 8
    assert sum(line.startswith("f ") for line in obj.splitlines()) == 12
    t2 = Omnitree(3, two_level_tree().labels)  # same shape, embedded in 3-d
    obj = export_obj(t2, [1, 0, 1, 0])
    assert sum(line.startswith("v ") for line in obj.splitlines()) == 16
    csv = export_csv(two_level_tree(), [1, 0, 1, 0]).splitlines()
    assert csv[0] == "i0,i1,l0,l1,bit" and len(csv) == 5 and csv[3] == "2,0,2,0,1"


def test_export_time_slices(tmp_path, capsys):
    t = Omnitree.from_strings(["0001", "0000", "0000"])
    (tmp_path / "t").write_bytes(codec.encode(t))
    (tmp_path / "f").write_bytes(codec.encode_field([1, 0]))
    code, _, err = run(capsys, "export", "--tree", tmp_path / "t", "--field", tmp_path / "f")
    assert code == 1 and "slice-time" in err
    code, out, _ = run(capsys, "export", "--tree", tmp_path / "t", "--field", tmp_path / "f", "--slice-time", 0.2)
    assert out.count("\nv ") == 8
    code, out, _ = run(capsys, "export", "--tree", tmp_path / "t", "--field", tmp_path / "f", "--slice-time", 1.0)
    assert out.count("\nv ") == 0
    code, out, _ = run(capsys, "export", "--tree", tmp_path / "t", "--field", tmp_path / "f", "--format", "csv")
    assert len(out.strip().splitlines()) == 3


def test_inspect(tmp_path, capsys):
    assert inspect_text(singleton_tree(3), "omnitree").splitlines()[0] == "1 node, 1 leaf, normalized, 3 tree bits"
    oct1 = Omnitree.from_strings(["111"] + ["000"] * 8)
    assert "split histogram: [1, 1, 1]" in inspect_text(oct1, "octree")
    (tmp_path / "h").write_bytes(codec.encode(Omnitree.from_strings(["100", "100", "000", "000", "000"])))
    code, out, _ = run(capsys, "inspect", tmp_path / "h")
    assert code == 0 and "split histogram: [2, 0, 0]" in out
    (tmp_path / "bad").write_bytes(b"junk")
    assert run(capsys, "inspect", tmp_path / "bad")[0] == 1


def test_threads_do_not_change_outputs(tmp_path, capsys):
    outs = []
    for threads in (1, 4):
        tree, field = tmp_path / f"t{threads}", tmp_path / f"f{threads}"
        run(capsys, "refine", "--shape", "rod", "--max-leaves", 80, "--n-s", 64, "--n-g", 128, "--seed", 3,
            "--threads", threads, "--tree-out", tree, "--field-out", field)
        _, out, _ = run(capsys, "evaluate", "--tree", tree, "--field", field, "--shape", "rod", "--n-e", 100_000,
                        "--seed", 3, "--threads", threads)
        outs.append((tree.read_bytes(), field.read_bytes(), out))
    assert outs[0] == outs[1]


@pytest.mark.slow
def test_refine_sphere_budget(tmp_path, capsys):
    code, out, _ = run(capsys, "refine", "--shape", "sphere", "--mode", "omnitree", "--max-leaves", 1024,
                       "--seed", 7, "--tree-out", tmp_path / "t", "--field-out", tmp_path / "f")
    assert code == 0 and 1024 <= json.loads(out)["N"] <= 1031
    assert (tmp_path / "t").read_bytes()[:4] == b"OMNI"


@pytest.mark.slow
def test_sweep_full_ladder_row_count(capsys):
    code, out, _ = run(capsys, "sweep", "--shape", "sphere", "--min-leaves", 16, "--max-leaves", 8192,
                       "--n-s", 16, "--n-g", 16, "--n-e", 4096)
    rows = out.strip().splitlines()[1:]
    assert code == 0 and len(rows) == 20
    assert [r.split(",")[1] for r in rows] == ["omnitree"] * 10 + ["octree"] * 10
