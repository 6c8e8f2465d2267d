import json

import pytest

from dermflow.cli import main
from dermflow.evidence import parse_trace
from dermflow.exceptions import ConfigurationError, ManifestError
from dermflow.harness import ablate, extract_diagnosis, load_manifest, run_eval

from conftest import FIXTURES, IMAGES, MANIFESTS

GA_IMAGE = IMAGES / "ga_dorsal_hand.img"


class TestManifest:
    def test_relative_images(self):
        recs = load_manifest(MANIFESTS / "diagnosis.jsonl", "diagnosis")
        assert len(recs) == 10 and all(r.image_ref.startswith(str(FIXTURES)) for r in recs)

    def test_error_names_line(self, tmp_path):
        m = tmp_path / "m.jsonl"
        m.write_text('{"image_ref": "a.img", "question": "q", "gold": "eczema"}\n\n{"image_ref": "b.img"}\n')
        with pytest.raises(ManifestError, match=r"m\.jsonl:3"):
            load_manifest(m, "diagnosis")

    def test_gold_type(self, tmp_path):
        m = tmp_path / "m.jsonl"
        m.write_text('{"image_ref": "a.img", "question": "q", "gold": "scale"}\n')
        with pytest.raises(ManifestError, match="list of strings"):
            load_manifest(m, "concept")

    def test_empty(self, tmp_path):
        m = tmp_path / "m.jsonl"
        m.write_text("\n")
        with pytest.raises(ManifestError):
            load_manifest(m, "caption")


@pytest.mark.parametrize("answer, want", [
    ("blah\nDiagnosis: Eczema", "Eczema"),
    ("diagnosis: a\nmore\n  DIAGNOSIS :  b  ", "b"),
    ("Diagnosis: undetermined", None),
    ("no verdict", None),
])
def test_extract_diagnosis(answer, want):
    assert extract_diagnosis(answer) == want


class TestRunEval:
    @pytest.mark.parametrize("task, metric", [("diagnosis", "accuracy"), ("concept", "f1_macro"),
                                              ("caption", "rouge_l")])
    def test_tasks(self, config, task, metric, tmp_path):
        report = run_eval(MANIFESTS / f"{task}.jsonl", task, config, trace_dir=tmp_path)
        assert report.metric == metric and report.n == 10 and report.failures == 0
        assert 0.0 < report.value <= 1.0
        traces = sorted(tmp_path.glob("*.jsonl"))
        assert len(traces) == 10 and all(parse_trace(p.read_bytes()) for p in traces)

    def test_deterministic(self, config):
        a = run_eval(MANIFESTS / "diagnosis.jsonl", "diagnosis", config)
        b = run_eval(MANIFESTS / "diagnosis.jsonl", "diagnosis", config)
        assert a == b

    def test_unknown_task(self, config):
        with pytest.raises(ConfigurationError):
            run_eval(MANIFESTS / "diagnosis.jsonl", "segmentation", config)

    def test_strict_refuses_required(self, config):
        with pytest.raises(ConfigurationError):
            run_eval(MANIFESTS / "diagnosis.jsonl", "diagnosis", config, disable=["panderm"], strict=True)

    def test_disabled_tool_absent_from_traces(self, config, tmp_path):
        run_eval(MANIFESTS / "diagnosis.jsonl", "diagnosis", config, disable=["case_rag"], trace_dir=tmp_path)
        for p in tmp_path.glob("*.jsonl"):
            assert all(it.tool_id != "case_rag" for it in parse_trace(p.read_bytes()))


class TestAblate:
    def test_control_run(self, config):
        r = ablate(MANIFESTS / "caption.jsonl", "caption", config, None)
        assert r.tool == "none" and r.delta == 0.0

    def test_leave_one_out(self, config):
        r = ablate(MANIFESTS / "diagnosis.jsonl", "diagnosis", config, "guideline_rag")
        assert r.to_dict()["delta"] == r.ablated.value - r.full.value

    def test_unknown_tool(self, config):
        with pytest.raises(ConfigurationError):
            ablate(MANIFESTS / "diagnosis.jsonl", "diagnosis", config, "gpt5")


class TestCli:
    def test_ask(self, capsys, tmp_path):
        trace = tmp_path / "t" / "run.jsonl"
        rc = main(["ask", "--image", str(GA_IMAGE), "--question", "Describe this lesion in a clinical caption.",
                   "--trace", str(trace)])
        out = capsys.readouterr()
        assert rc == 0
        assert "Diagnosis: granuloma annulare" in out.out
        assert "https://guidelines.example.org/granuloma-annulare#clinical-features" in out.out
        assert "rounds used: 2" in out.err
        assert len({it.round for it in parse_trace(trace.read_bytes())}) == 2

    def test_ask_partial_exit_code(self, image, capsys):
        assert main(["ask", "--image", str(image), "--question", "What disease is shown in this image?"]) == 3

    def test_ask_missing_image(self, tmp_path, capsys):
        assert main(["ask", "--image", str(tmp_path / "nope.img"), "--question", "What disease?"]) == 2
        assert capsys.readouterr().err.startswith("error:")

    def test_eval(self, capsys):
        assert main(["eval", "--manifest", str(MANIFESTS / "concept.jsonl"), "--task", "concept"]) == 0
        out = json.loads(capsys.readouterr().out)
        assert out["metric"] == "f1_macro" and "per_class" in out

    def test_eval_disable(self, capsys):
        rc = main(["eval", "--manifest", str(MANIFESTS / "diagnosis.jsonl"), "--task", "diagnosis",
                   "--disable", "panderm", "--disable", "make"])
        assert rc == 0 and json.loads(capsys.readouterr().out)["n"] == 10

    def test_ablate(self, capsys):
        rc = main(["ablate", "--manifest", str(MANIFESTS / "caption.jsonl"), "--task", "caption", "--tool", "make"])
        out = json.loads(capsys.readouterr().out)
        assert rc == 0 and out["tool"] == "make" and set(out) == {"tool", "full", "ablated", "delta"}

    def test_bad_manifest_exit(self, tmp_path, capsys):
        m = tmp_path / "m.jsonl"
        m.write_text("{not json\n")
        assert main(["eval", "--manifest", str(m), "--task", "caption"]) == 2
        assert "m.jsonl:1" in capsys.readouterr().err

    def test_ingest_cases(self, tmp_path, capsys):
        rc = main(["ingest-cases", "--in", str(FIXTURES / "cases.jsonl"), "--out", str(tmp_path / "idx"),
                   "--validate-ontology"])
        out = json.loads(capsys.readouterr().out)
        # 11 images x 4 neighbours + 40 distractors
        assert rc == 0 and out["count"] == 84 and out["dimension"] == 512

    def test_ingest_guidelines(self, tmp_path, capsys):
        rc = main(["ingest-guidelines", "--in", str(FIXTURES / "guidelines.jsonl"), "--out", str(tmp_path / "g")])
        assert rc == 0 and json.loads(capsys.readouterr().out)["count"] == 17

    def test_ontology(self, capsys):
        assert main(["ontology", "--mode", "hierarchy", "--name", "GA"]) == 0
        out = json.loads(capsys.readouterr().out)
        assert out["results"][-1] == "granuloma annulare"

    def test_bad_choice_is_usage_error(self, capsys):
        with pytest.raises(SystemExit) as e:
            main(["ontology", "--mode", "telepathy", "--name", "x"])
        assert e.value.code == 2
