import json
import shutil
import subprocess

import pytest

from netexport.cli import main


class TestExportCommand:
    def test_export_and_verify_exit_codes(self, mlp_checkpoint, tmp_path, capsys):
        out = str(tmp_path / "net.json")
        assert main(["export", mlp_checkpoint, "-o", out]) == 0
        assert "wrote" in capsys.readouterr().out
        assert main(["verify", mlp_checkpoint, out, "-n", "100", "--seed", "7"]) == 0
        assert "passed: True" in capsys.readouterr().out

    def test_verify_failure_exit_1(self, mlp_checkpoint, tmp_path, capsys):
        out = str(tmp_path / "net.json")
        main(["export", mlp_checkpoint, "-o", out])
        obj = json.load(open(out))
        obj["modules"][0]["bias"][0] += 1.0
        with open(out, "w") as fh:
            json.dump(obj, fh)
        assert main(["verify", mlp_checkpoint, out, "-n", "10"]) == 1
        assert "mismatch" in capsys.readouterr().out

    def test_unsupported_layer_exit_3(self, tmp_path, capsys):
        import torch
        from torch import nn

        model = torch.nn.Sequential(nn.Linear(2, 2), nn.LayerNorm(2))
        path = str(tmp_path / "bad.pt")
        torch.save(model, path)
        assert main(["export", path, "-o", str(tmp_path / "net.json")]) == 3
        assert "LayerNorm" in capsys.readouterr().err

    def test_bad_input_exit_2(self, tmp_path, capsys):
        assert main(["export", str(tmp_path / "missing.pt"), "-o", str(tmp_path / "x.json")]) == 2


@pytest.mark.skipif(shutil.which("polyexpand") is None, reason="main package CLI not on PATH")
class TestEndToEnd:
    def test_exported_file_drives_the_expansion_cli(self, mlp_checkpoint, tmp_path):
        """The emitted file is accepted end to end by the consumer CLI."""
        net = tmp_path / "net.json"
        main(["export", mlp_checkpoint, "-o", str(net), "--name", "e2e"])
        x0 = tmp_path / "x0.json"
        x0.write_text("[0.1, -0.2, 0.3, 0.0]")
        poly = tmp_path / "poly.json"
        run = subprocess.run(
            [
                "polyexpand", "expand", "--model", str(net), "--x0", str(x0),
                "--order", "3", "--out", str(poly),
            ],
            capture_output=True,
            text=True,
            cwd=tmp_path,
        )
        assert run.returncode == 0, run.stderr
        assert poly.exists()
        assert json.load(open(poly))["order"] == 3
