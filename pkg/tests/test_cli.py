import os
import subprocess
import sys

import numpy as np
import pytest

from plcodec.cli import main
from plcodec.codec import decode_image, encode_image
from plcodec.container import BitstreamContainer, extract_substream
from plcodec.imageio import read_image, write_image
from plcodec.weights import ArchConfig, generate_seed_weights, load_weights, save_weights

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")
GRADIENT = os.path.join(FIXTURES, "gradient_64x64.ppm")
RINGS = os.path.join(FIXTURES, "rings_50x50.ppm")

# frozen output of `plc sweep` on the gradient fixture with seed-0 weights;
# guards CSV schema, number formatting, and codec determinism at once
GOLDEN_SWEEP = [
    ("0", "1.193359", "2.62804951e-01", "5.8037"),
    ("0.5", "1.287109", "2.57767455e-01", "5.8877"),
    ("7.5", "1.421875", "2.56325639e-01", "5.9121"),
    ("20", "1.630859", "2.51913054e-01", "5.9875"),
    ("100", "2.902344", "2.41534682e-01", "6.1702"),
]


@pytest.fixture(scope="module")
def weights_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("w") / "seed0.plcw"
    save_weights(generate_seed_weights(ArchConfig(), 0), str(path))
    return str(path)


@pytest.fixture(scope="module")
def encoded(tmp_path_factory, weights_file):
    path = tmp_path_factory.mktemp("c") / "gradient.plc"
    code = main([
        "encode", GRADIENT, "--weights", weights_file,
        "--boundaries", "0.5,7.5,20,100", "--out", str(path),
    ])
    assert code == 0
    return str(path)


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


class TestGenweights:
    def test_writes_loadable_deterministic_file(self, tmp_path):
        a, b = tmp_path / "a.plcw", tmp_path / "b.plcw"
        assert main(["genweights", "--seed", "3", "--out", str(a)]) == 0
        assert main(["genweights", "--seed", "3", "--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()
        assert load_weights(str(a)).arch == ArchConfig()

    def test_unwritable_path(self, capsys):
        code, _, err = run(capsys, "genweights", "--out", "/nonexistent/dir/w.plcw")
        assert code == 3
        assert "plc:" in err


class TestEncodeDecode:
    def test_decode_base_and_boundary(self, encoded, weights_file, tmp_path):
        for q in ("0", "20"):
            out = tmp_path / f"q{q}.ppm"
            assert main([
                "decode", encoded, "--weights", weights_file,
                "--q", q, "--out", str(out),
            ]) == 0
            img = read_image(str(out))
            assert img.shape == (3, 64, 64)

    def test_matches_library_decode(self, encoded, weights_file, tmp_path):
        cli_out = tmp_path / "cli.ppm"
        main(["decode", encoded, "--weights", weights_file, "--q", "7.5",
              "--out", str(cli_out)])
        with open(encoded, "rb") as f:
            c = BitstreamContainer.from_bytes(f.read())
        lib_out = tmp_path / "lib.ppm"
        write_image(decode_image(c, 7.5, load_weights(weights_file)), str(lib_out))
        assert cli_out.read_bytes() == lib_out.read_bytes()

    def test_png_output(self, encoded, weights_file, tmp_path):
        pytest.importorskip("PIL")
        ppm, png = tmp_path / "o.ppm", tmp_path / "o.png"
        main(["decode", encoded, "--weights", weights_file, "--q", "0", "--out", str(ppm)])
        main(["decode", encoded, "--weights", weights_file, "--q", "0", "--out", str(png)])
        assert np.array_equal(read_image(str(png)).data, read_image(str(ppm)).data)

    def test_non_boundary_quality_exit_code(self, encoded, weights_file, capsys):
        code, _, err = run(capsys, "decode", encoded, "--weights", weights_file,
                           "--q", "33", "--out", "/tmp/never.ppm")
        assert code == 5
        assert "0.5, 7.5, 20.0, 100.0" in err

    def test_out_of_range_quality_exit_code(self, encoded, weights_file, capsys):
        code, _, err = run(capsys, "decode", encoded, "--weights", weights_file,
                           "--q", "200", "--out", "/tmp/never.ppm")
        assert code == 4

    def test_missing_image_exit_code(self, weights_file, capsys):
        code, _, _ = run(capsys, "encode", "/no/such.ppm", "--weights", weights_file,
                         "--boundaries", "100", "--out", "/tmp/never.plc")
        assert code == 3

    def test_wrong_weights_exit_code(self, encoded, tmp_path, capsys):
        other = tmp_path / "w1.plcw"
        main(["genweights", "--seed", "1", "--out", str(other)])
        code, _, err = run(capsys, "decode", encoded, "--weights", str(other),
                           "--q", "20", "--out", "/tmp/never.ppm")
        assert code == 5
        assert "different weights" in err

    def test_corrupt_weights_exit_code(self, encoded, tmp_path, capsys):
        bad = tmp_path / "bad.plcw"
        bad.write_bytes(b"PLCWgarbage")
        code, _, _ = run(capsys, "decode", encoded, "--weights", str(bad),
                         "--q", "20", "--out", "/tmp/never.ppm")
        assert code == 7

    def test_corrupt_container_exit_code(self, encoded, weights_file, tmp_path, capsys):
        bad = tmp_path / "bad.plc"
        bad.write_bytes(open(encoded, "rb").read()[:-3])
        code, _, _ = run(capsys, "decode", str(bad), "--weights", weights_file,
                         "--q", "20", "--out", "/tmp/never.ppm")
        assert code == 5


class TestExtractAppend:
    def test_extract_matches_library(self, encoded, tmp_path):
        out = tmp_path / "sub.plc"
        assert main(["extract", encoded, "--q", "7.5", "--out", str(out)]) == 0
        with open(encoded, "rb") as f:
            c = BitstreamContainer.from_bytes(f.read())
        assert out.read_bytes() == extract_substream(c, 7.5).to_bytes()

    def test_append_rebuilds_original_bytes(self, encoded, tmp_path):
        sub = tmp_path / "sub.plc"
        rebuilt = tmp_path / "rebuilt.plc"
        main(["extract", encoded, "--q", "0.5", "--out", str(sub)])
        assert main(["append", str(sub), encoded, "--out", str(rebuilt)]) == 0
        assert rebuilt.read_bytes() == open(encoded, "rb").read()

    def test_append_respects_limit(self, encoded, tmp_path):
        sub, part = tmp_path / "sub.plc", tmp_path / "part.plc"
        main(["extract", encoded, "--q", "0.5", "--out", str(sub)])
        assert main(["append", str(sub), encoded, "--q", "20", "--out", str(part)]) == 0
        c = BitstreamContainer.from_bytes(part.read_bytes())
        assert c.boundaries == (0.5, 7.5, 20.0)

    def test_append_unrelated_containers_rejected(self, encoded, weights_file,
                                                  tmp_path, capsys):
        other = tmp_path / "rings.plc"
        main(["encode", RINGS, "--weights", weights_file,
              "--boundaries", "0.5,7.5,20,100", "--out", str(other)])
        code, _, err = run(capsys, "append", str(other), encoded,
                           "--out", str(tmp_path / "x.plc"))
        assert code == 5

    def test_append_nothing_to_add_rejected(self, encoded, tmp_path, capsys):
        code, _, err = run(capsys, "append", encoded, encoded,
                           "--out", str(tmp_path / "x.plc"))
        assert code == 5
        assert "no segments beyond" in err


class TestSweep:
    def test_golden_csv(self, weights_file, capsys):
        code, out, err = run(capsys, "sweep", GRADIENT, "--weights", weights_file,
                             "--q", "0,0.5,7.5,20,100")
        assert code == 0 and err == ""
        lines = out.strip().split("\n")
        assert lines[0] == "path,q,bpp,mse,psnr"
        got = [tuple(line.split(",")) for line in lines[1:]]
        assert got == [(GRADIENT,) + row for row in GOLDEN_SWEEP]

    def test_csv_flag_writes_same_content(self, weights_file, tmp_path, capsys):
        dest = tmp_path / "sweep.csv"
        code, out, _ = run(capsys, "sweep", GRADIENT, "--weights", weights_file,
                           "--q", "0,0.5,7.5,20,100", "--csv", str(dest))
        assert code == 0 and out == ""
        _, stdout_ver, _ = run(capsys, "sweep", GRADIENT, "--weights", weights_file,
                               "--q", "0,0.5,7.5,20,100")
        assert dest.read_text() == stdout_ver

    def test_single_quality_single_row(self, weights_file, capsys):
        code, out, _ = run(capsys, "sweep", GRADIENT, "--weights", weights_file,
                           "--q", "100")
        assert code == 0
        assert len(out.strip().split("\n")) == 2

    def test_rows_sorted_and_rate_monotone(self, weights_file, capsys):
        code, out, _ = run(capsys, "sweep", RINGS, GRADIENT, "--weights", weights_file,
                           "--q", "20,0.5,100")  # unsorted grid on purpose
        assert code == 0
        rows = [line.split(",") for line in out.strip().split("\n")[1:]]
        keys = [(r[0], float(r[1])) for r in rows]
        assert keys == sorted(keys)
        for path in (GRADIENT, RINGS):
            bpps = [float(r[2]) for r in rows if r[0] == path]
            assert bpps == sorted(bpps)

    def test_unreadable_file_reported_and_continues(self, weights_file, capsys):
        code, out, err = run(capsys, "sweep", "/no/such.ppm", GRADIENT,
                             "--weights", weights_file, "--q", "100")
        assert code == 3
        assert "/no/such.ppm" in err
        assert GRADIENT in out

    def test_bad_grid_exit_code(self, weights_file, capsys):
        code, _, _ = run(capsys, "sweep", GRADIENT, "--weights", weights_file,
                         "--q", "abc")
        assert code == 4


@pytest.fixture(scope="module")
def sweep_csv(weights_file, tmp_path_factory):
    dest = tmp_path_factory.mktemp("bd") / "ref.csv"
    assert main(["sweep", GRADIENT, "--weights", weights_file,
                 "--q", "0.5,7.5,20,50,100", "--csv", str(dest)]) == 0
    return str(dest)


class TestBdCommand:
    def test_identical_curves(self, sweep_csv, capsys):
        code, out, _ = run(capsys, "bd", sweep_csv, sweep_csv)
        assert code == 0
        assert out == "bd_rate,bd_psnr\n0.0000,0.0000\n"

    def test_bad_header_exit_code(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("a,b,c\n1,2,3\n")
        code, _, _ = run(capsys, "bd", str(bad), str(bad))
        assert code == 9

    def test_multiple_images_rejected(self, sweep_csv, weights_file,
                                      tmp_path, capsys):
        two = tmp_path / "two.csv"
        assert main(["sweep", GRADIENT, RINGS, "--weights", weights_file,
                     "--q", "0.5,7.5,20,100", "--csv", str(two)]) == 0
        code, _, err = run(capsys, "bd", str(two), sweep_csv)
        assert code == 9
        assert "single image" in err


class TestUsage:
    def test_missing_subcommand_exits_two(self):
        with pytest.raises(SystemExit) as exc:
            main([])
        assert exc.value.code == 2

    def test_module_entry_point(self, tmp_path):
        out = tmp_path / "w.plcw"
        proc = subprocess.run(
            [sys.executable, "-m", "plcodec.cli", "genweights", "--out", str(out)],
            capture_output=True,
        )
        assert proc.returncode == 0
        assert out.exists()
