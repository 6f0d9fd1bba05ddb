import json
import struct

import pytest
import torch

from ckpt_exporter import ExportError, ExportJob, build_manifest, export
from ckpt_exporter.cli import main
from exporter_testutil import run_toolkit, save_state, toolkit_json


def read_header(path):
    blob = path.read_bytes()
    (hlen,) = struct.unpack("<Q", blob[:8])
    return json.loads(blob[8 : 8 + hlen]), blob


class TestExportLocalStateDict:
    def test_two_tensor_state_file(self, tmp_path):
        src = save_state(tmp_path / "model.pt", {
            "layer.weight": torch.randn(4, 3),
            "layer.bias": torch.randn(4),
        })
        out = tmp_path / "model.safetensors"
        sidecar = export(ExportJob(src, str(out)))

        header, _ = read_header(out)
        assert set(header) == {"layer.weight", "layer.bias"}
        assert header["layer.weight"]["shape"] == [4, 3]
        assert header["layer.weight"]["dtype"] == "F32"
        assert sidecar["total_params"] == 16
        assert len(sidecar["source_digest"]) == 64

    def test_names_pass_through_unrenamed(self, tmp_path):
        names = ["encoder.layer.0.attention.self.query.weight", "odd/name:0"]
        src = save_state(tmp_path / "m.pt", {n: torch.randn(2, 2) for n in names})
        out = tmp_path / "m.safetensors"
        sidecar = export(ExportJob(src, str(out)))
        assert [t["name"] for t in sidecar["tensors"]] == sorted(names)

    def test_wrapped_state_dict_unwrapped(self, tmp_path):
        src = save_state(tmp_path / "w.pt", {"w": torch.ones(2, 2)}, wrapper="state_dict")
        out = tmp_path / "w.safetensors"
        sidecar = export(ExportJob(src, str(out)))
        assert sidecar["tensors"][0]["name"] == "w"

    def test_reexport_is_byte_identical(self, tmp_path):
        src = save_state(tmp_path / "m.pt", {
            "a": torch.randn(8, 8, dtype=torch.float16),
            "b": torch.randn(3, 3),
        })
        out1, out2 = tmp_path / "a.safetensors", tmp_path / "b.safetensors"
        export(ExportJob(src, str(out1)))
        export(ExportJob(src, str(out2)))
        assert out1.read_bytes() == out2.read_bytes()

    def test_dtypes_preserved_by_default(self, tmp_path):
        src = save_state(tmp_path / "m.pt", {
            "h": torch.randn(2, 2, dtype=torch.float16),
            "b": torch.randn(2, 2, dtype=torch.bfloat16),
            "d": torch.randn(2, 2, dtype=torch.float64),
        })
        out = tmp_path / "m.safetensors"
        sidecar = export(ExportJob(src, str(out)))
        dtypes = {t["name"]: t["dtype"] for t in sidecar["tensors"]}
        assert dtypes == {"h": "F16", "b": "BF16", "d": "F64"}

    def test_unsupported_dtype_rejected(self, tmp_path):
        src = save_state(tmp_path / "m.pt", {
            "w": torch.randn(2, 2),
            "position_ids": torch.arange(4),
        })
        with pytest.raises(ExportError, match="unsupported source dtype.*position_ids"):
            export(ExportJob(src, str(tmp_path / "m.safetensors")))

    def test_skip_unsupported_flag(self, tmp_path):
        src = save_state(tmp_path / "m.pt", {
            "w": torch.randn(2, 2),
            "position_ids": torch.arange(4),
        })
        out = tmp_path / "m.safetensors"
        sidecar = export(ExportJob(src, str(out), skip_unsupported=True))
        assert [t["name"] for t in sidecar["tensors"]] == ["w"]

    def test_unresolvable_model(self, tmp_path):
        with pytest.raises(ExportError, match="unresolvable model"):
            export(ExportJob("definitely/not-a-model-anywhere",
                             str(tmp_path / "x.safetensors")))

    def test_safetensors_source(self, tmp_path):
        safetensors = pytest.importorskip("safetensors")
        from safetensors.torch import save_file

        src = tmp_path / "src.safetensors"
        save_file({"w": torch.randn(3, 3, dtype=torch.bfloat16)}, src)
        out = tmp_path / "out.safetensors"
        sidecar = export(ExportJob(str(src), str(out)))
        assert sidecar["tensors"][0]["dtype"] == "BF16"
        assert sidecar["tensors"][0]["shape"] == [3, 3]


class TestCastToF32:
    def test_f16_values_widened_exactly(self, tmp_path):
        half = torch.randn(64, dtype=torch.float16)
        src = save_state(tmp_path / "m.pt", {"w": half})
        out = tmp_path / "m.safetensors"
        sidecar = export(ExportJob(src, str(out), cast_to_f32=True))
        assert sidecar["tensors"][0]["dtype"] == "F32"

        from safetensors.torch import load_file

        exported = load_file(out)["w"]
        assert torch.equal(exported, half.to(torch.float32))

    def test_bf16_values_widened_exactly(self, tmp_path):
        bf = torch.randn(64, dtype=torch.bfloat16)
        src = save_state(tmp_path / "m.pt", {"w": bf})
        out = tmp_path / "m.safetensors"
        export(ExportJob(src, str(out), cast_to_f32=True))

        from safetensors.torch import load_file

        assert torch.equal(load_file(out)["w"], bf.to(torch.float32))

    def test_f64_not_narrowed(self, tmp_path):
        src = save_state(tmp_path / "m.pt", {"d": torch.randn(4, dtype=torch.float64)})
        out = tmp_path / "m.safetensors"
        sidecar = export(ExportJob(src, str(out), cast_to_f32=True))
        assert sidecar["tensors"][0]["dtype"] == "F64"


class TestToolkitInterop:
    def test_container_passes_toolkit_validation(self, tmp_path):
        src = save_state(tmp_path / "m.pt", {
            "enc.weight": torch.randn(16, 8),
            "enc.bias": torch.randn(16),
            "head.weight": torch.randn(4, 16, dtype=torch.bfloat16),
        })
        out = tmp_path / "m.safetensors"
        sidecar = export(ExportJob(src, str(out)))
        doc = toolkit_json("inspect", "--in", str(out))
        assert doc["total_params"] == sidecar["total_params"]
        assert {t["name"] for t in doc["tensors"]} == {
            t["name"] for t in sidecar["tensors"]
        }
        by_name = {t["name"]: t for t in doc["tensors"]}
        for t in sidecar["tensors"]:
            assert by_name[t["name"]]["shape"] == t["shape"]
            assert by_name[t["name"]]["dtype"] == t["dtype"]

    def test_manifest_feeds_toolkit_census(self, tmp_path):
        paths = []
        for i in range(3):
            src = save_state(tmp_path / f"s{i}.pt",
                             {"w": torch.randn(10, 10)})
            out = tmp_path / f"step-{(i + 1) * 1000}.safetensors"
            export(ExportJob(src, str(out)))
            paths.append(out)
        code = main(["manifest", "--dir", str(tmp_path),
                     "--glob", "step-*.safetensors",
                     "--iter-regex", r"step-(\d+)",
                     "--out", str(tmp_path / "series.json")])
        assert code == 0
        doc = json.loads((tmp_path / "series.json").read_text())
        assert [e["iteration"] for e in doc["entries"]] == [1000, 2000, 3000]

        code, out, err = run_toolkit(
            "census", "--manifest", str(tmp_path / "series.json"),
            "--format", "json",
        )
        assert code == 0, err
        series = json.loads(out)["series"]
        assert len(series) == 3


class TestCli:
    def test_export_command(self, tmp_path, capsys):
        src = save_state(tmp_path / "m.pt", {"w": torch.randn(4, 4)})
        out = tmp_path / "m.safetensors"
        code = main(["export", "--model", src, "--out", str(out)])
        assert code == 0
        summary = json.loads(capsys.readouterr().out)
        assert summary["total_params"] == 16
        assert (tmp_path / "m.safetensors.json").exists()

    def test_export_failure_exit_code(self, tmp_path, capsys):
        code = main(["export", "--model", "no/such-model",
                     "--out", str(tmp_path / "x.safetensors")])
        assert code == 2
        assert "unresolvable" in capsys.readouterr().err

    def test_manifest_pairs(self, tmp_path, capsys):
        code = main(["manifest", "2000=b.st", "1000=a.st"])
        assert code == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["entries"][0] == {"iteration": 1000, "path": "a.st"}

    def test_manifest_duplicate_iterations_rejected(self):
        with pytest.raises(ExportError, match="duplicate"):
            build_manifest([(1, "a"), (1, "b")])
