import json

import pytest

from razorquant.errors import FormatError, ValidationError
from razorquant.fixtures import mobilellm_manifest, qwen3_manifest
from razorquant.manifest import LayerRole, LayerSpec, ModelManifest, load_manifest


def tiny_manifest(tied=True):
    return ModelManifest(
        name="tiny",
        tied_embedding=tied,
        layers=(
            LayerSpec("embed", 8, 4, LayerRole.EMBEDDING, True),
            LayerSpec("proj", 4, 4, LayerRole.DECODER, True),
            LayerSpec("norm", 1, 4, LayerRole.NORM, False),
            LayerSpec("head", 8, 4, LayerRole.LM_HEAD, True),
        ),
    )


class TestCounting:
    def test_param_products(self):
        m = tiny_manifest(tied=False)
        assert m.total_params == 8 * 4 + 4 * 4 + 1 * 4 + 8 * 4

    def test_tied_head_not_double_counted(self):
        tied = tiny_manifest(tied=True)
        untied = tiny_manifest(tied=False)
        assert untied.total_params - tied.total_params == 8 * 4

    def test_quantized_params_skip_norms(self):
        m = tiny_manifest(tied=False)
        assert m.total_params - m.quantized_params == 4

    def test_duplicate_names_rejected(self):
        with pytest.raises(ValidationError):
            ModelManifest(
                name="dup",
                tied_embedding=False,
                layers=(
                    LayerSpec("a", 2, 2, LayerRole.DECODER, True),
                    LayerSpec("a", 2, 2, LayerRole.DECODER, True),
                ),
            )


class TestJson:
    def test_round_trip(self, tmp_path):
        m = tiny_manifest()
        p = tmp_path / "m.json"
        p.write_text(json.dumps(m.to_json()))
        back = load_manifest(p)
        assert back == m

    def test_bad_role_rejected(self, tmp_path):
        doc = tiny_manifest().to_json()
        doc["layers"][0]["role"] = "banana"
        p = tmp_path / "m.json"
        p.write_text(json.dumps(doc))
        with pytest.raises(FormatError):
            load_manifest(p)

    def test_missing_field_rejected(self, tmp_path):
        doc = tiny_manifest().to_json()
        del doc["layers"][0]["d_in"]
        p = tmp_path / "m.json"
        p.write_text(json.dumps(doc))
        with pytest.raises(FormatError):
            load_manifest(p)


class TestBundledShapes:
    def test_qwen3_totals(self):
        m = qwen3_manifest()
        assert m.total_params == 596_049_920
        assert m.quantized_params == 595_984_384
        assert m.tied_embedding

    def test_mobilellm_totals(self):
        m = mobilellm_manifest()
        assert m.total_params == 345_355_200
        assert m.tied_embedding

    def test_qwen3_layer_census(self):
        m = qwen3_manifest()
        roles = [l.role for l in m.layers]
        assert roles.count(LayerRole.EMBEDDING) == 1
        assert roles.count(LayerRole.LM_HEAD) == 1
        # 28 blocks x (q, k, v, o, gate, up, down)
        assert roles.count(LayerRole.DECODER) == 28 * 7
