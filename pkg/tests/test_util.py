from pidtwin.util import class_key, deep_merge, dget, dumps_json, json_digest, slugify, write_json_atomic


def test_slugify_accents():
    assert slugify("Heizkreis Süd") == "heizkreis-sud"
    assert slugify("Plan  RLT / Lüftung") == "plan-rlt-luftung"
    assert slugify("--sample--") == "sample"


def test_class_key_ignores_case_and_separators():
    assert class_key("Heat exchanger") == class_key("heat_exchanger") == class_key("HeatExchanger")
    assert class_key("Pump") != class_key("Pumps")


def test_dget():
    d = {"a": {"b": {"c": 3}}}
    assert dget(d, "a.b.c") == 3
    assert dget(d, "a.x", "def") == "def"
    assert dget(None, "a.b", 7) == 7


def test_deep_merge_nested():
    dst = {"a": {"x": 1, "y": 2}, "b": 1}
    deep_merge(dst, {"a": {"y": 99}, "c": 3})
    assert dst == {"a": {"x": 1, "y": 99}, "b": 1, "c": 3}


def test_json_digest_ignores_key_order():
    assert json_digest({"a": 1, "b": [1, 2]}) == json_digest({"b": [1, 2], "a": 1})
    assert len(json_digest({})) == 12


def test_dumps_json_sorted_with_trailing_newline(tmp_path):
    assert dumps_json({"b": 1, "a": "é"}) == '{\n  "a": "é",\n  "b": 1\n}\n'
    write_json_atomic(tmp_path / "x" / "out.json", {"k": [1]}, compact=True)
    assert (tmp_path / "x" / "out.json").read_text(encoding="utf-8") == '{"k":[1]}'
    assert not list((tmp_path / "x").glob(".*.tmp"))
