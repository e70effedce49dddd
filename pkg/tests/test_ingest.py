import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from groupanno import ingest
from groupanno.classifier import FeatureTransform
from groupanno.types import ClassifierParams, GroupBiasParams, PosteriorLabels

from conftest import datasets, ids, tables_for


def write(tmp_path, name, text, newline="\n"):
    p = tmp_path / name
    p.write_bytes(text.replace("\n", newline).encode("utf-8"))
    return p


def test_two_annotators_on_one_instance(tmp_path):
    p = write(tmp_path, "a.csv", "instance_id,annotator_id,label,feature_0\ni1,a,1,0.5\ni1,b,0,0.5\n")
    ds = ingest.read_annotations(p)
    assert len(ds) == 1
    assert len(ds.instances[0].annotations) == 2
    assert ds.instances[0].features == (0.5,)


def test_label_out_of_domain_reports_line(tmp_path):
    p = write(tmp_path, "a.csv", "instance_id,annotator_id,label\ni1,a,1\ni1,b,2\n")
    with pytest.raises(ingest.LabelDomainError) as info:
        ingest.read_annotations(p)
    assert info.value.line == 3
    assert ":3:" in str(info.value)


def test_text_mode_same_comment_same_vector(tmp_path):
    p = write(tmp_path, "a.csv",
              'instance_id,annotator_id,label,text\ni1,a,1,"you are great"\ni2,a,0,"you are great"\n')
    ds = ingest.read_annotations(p)
    assert ds.feature_dim == 1024
    assert ds.instances[0].features == ds.instances[1].features
    assert sum(ds.instances[0].features) == 3


def test_crlf_line_endings(tmp_path):
    text = "instance_id,annotator_id,label,feature_0,feature_1\ni1,a,1,1.5,2\ni2,b,0,3,4\n"
    lf = ingest.read_annotations(write(tmp_path, "lf.csv", text))
    crlf = ingest.read_annotations(write(tmp_path, "crlf.csv", text, "\r\n"))
    assert lf == crlf


def test_wrong_field_count(tmp_path):
    p = write(tmp_path, "a.csv", "instance_id,annotator_id,label,feature_0\ni1,a,1,0.5\ni2,a,0\n")
    with pytest.raises(ingest.DimensionError) as info:
        ingest.read_annotations(p)
    assert info.value.line == 3


def test_inconsistent_features_for_one_instance(tmp_path):
    p = write(tmp_path, "a.csv", "instance_id,annotator_id,label,feature_0\ni1,a,1,0.5\ni1,b,0,0.7\n")
    with pytest.raises(ingest.ParseError, match="line 2|differ"):
        ingest.read_annotations(p)


def test_missing_column_and_empty_file(tmp_path):
    with pytest.raises(ingest.ParseError, match="label"):
        ingest.read_annotations(write(tmp_path, "a.csv", "instance_id,annotator_id\ni,a\n"))
    with pytest.raises(ingest.ParseError, match="empty"):
        ingest.read_annotations(write(tmp_path, "b.csv", ""))


def test_duplicate_pair_rejected(tmp_path):
    p = write(tmp_path, "a.csv", "instance_id,annotator_id,label\ni1,a,1\ni1,a,0\n")
    with pytest.raises(ingest.ParseError):
        ingest.read_annotations(p)


def test_separate_instances_file(tmp_path):
    a = write(tmp_path, "a.csv", "instance_id,annotator_id,label\ni2,a,1\ni1,a,0\n")
    i = write(tmp_path, "i.csv", "instance_id,feature_1,feature_0\ni1,2,1\ni2,4,3\n")
    ds = ingest.read_annotations(a, i)
    assert ds.instance_ids == ("i2", "i1")
    # columns are ordered by feature index, not file order
    assert ds.instances[0].features == (3.0, 4.0)
    missing = write(tmp_path, "j.csv", "instance_id,feature_0\ni1,1\n")
    with pytest.raises(ingest.ParseError, match="i2"):
        ingest.read_annotations(a, missing)


def test_featureless_annotations_get_constant_feature(tmp_path):
    ds = ingest.read_annotations(write(tmp_path, "a.csv", "instance_id,annotator_id,label\ni1,a,1\n"))
    assert ds.feature_dim == 1 and ds.instances[0].features == (0.0,)


def test_read_annotators(tmp_path):
    tab = ingest.read_annotators(write(tmp_path, "t.csv", "annotator_id,gender,native\na,0,1\nb,1,1\n"))
    assert tab.num_categories == 2
    assert tab.category_names == ("gender", "native")
    assert tab.annotators == {"a": (0, 1), "b": (1, 1)}


def test_non_binary_group_suggests_encoding(tmp_path):
    p = write(tmp_path, "t.csv", "annotator_id,language\na,native\n")
    with pytest.raises(ingest.ParseError, match="0/1") as info:
        ingest.read_annotators(p)
    assert info.value.line == 2


def test_duplicate_annotator_row(tmp_path):
    p = write(tmp_path, "t.csv", "annotator_id,g\na,0\na,1\n")
    with pytest.raises(ingest.ParseError, match="duplicate"):
        ingest.read_annotators(p)


def test_empty_report(tmp_path):
    j, t = ingest.write_report({}, tmp_path / "r.json")
    assert json.loads(j.read_text()) == {}
    assert j.read_text().strip() == "{}"
    assert t.read_text() == ""


def test_report_contains_key_and_is_byte_stable(tmp_path):
    j1, t1 = ingest.write_report({"acc": 0.925}, tmp_path / "a" / "r.json")
    j2, t2 = ingest.write_report({"acc": 0.925}, tmp_path / "b" / "r")
    assert "acc" in json.loads(j1.read_text())
    assert "acc" in t1.read_text()
    assert j1.read_bytes() == j2.read_bytes()
    assert t1.read_bytes() == t2.read_bytes()


def test_nested_report_renders_grid():
    text = ingest.format_table({"mv": {"acc": 0.5, "f1": None}, "lfc": {"acc": 0.91, "f1": 0.9}})
    lines = text.splitlines()
    assert lines[0].split() == ["acc", "f1"]
    assert lines[1].split() == ["mv", "0.5000", "-"]


# -- round trips -------------------------------------------------------------------

@given(st.data())
def test_dataset_roundtrip_inline(tmp_path_factory, data):
    ds = data.draw(datasets())
    p = tmp_path_factory.mktemp("rt") / "a.csv"
    ingest.write_annotations(ds, p)
    assert ingest.read_annotations(p) == ds


@given(st.data())
def test_dataset_roundtrip_with_instances_file(tmp_path_factory, data):
    ds = data.draw(datasets())
    d = tmp_path_factory.mktemp("rt")
    ingest.write_annotations(ds, d / "a.csv", d / "i.csv")
    assert ingest.read_annotations(d / "a.csv", d / "i.csv") == ds


@given(st.data())
def test_table_roundtrip(tmp_path_factory, data):
    tab = data.draw(tables_for(data.draw(datasets())))
    p = tmp_path_factory.mktemp("rt") / "t.csv"
    ingest.write_annotators(tab, p)
    assert ingest.read_annotators(p) == tab


@given(st.dictionaries(ids, st.integers(0, 1)))
def test_gold_roundtrip(tmp_path_factory, gold):
    p = tmp_path_factory.mktemp("rt") / "g.csv"
    ingest.write_gold(gold, p)
    assert ingest.read_gold(p) == gold


@given(st.dictionaries(ids, st.floats(0, 1)))
def test_posteriors_roundtrip(tmp_path_factory, mu):
    p = tmp_path_factory.mktemp("rt") / "p.csv"
    post = PosteriorLabels(mu)
    ingest.write_posteriors(post, p)
    assert ingest.read_posteriors(p) == post


probs = st.floats(1e-9, 1 - 1e-9)
reals = st.floats(-5, 5)


@given(
    st.integers(1, 3).flatmap(lambda P: st.tuples(
        st.lists(st.tuples(reals, reals), min_size=P, max_size=P),
        st.lists(st.tuples(reals, reals), min_size=P, max_size=P),
    )),
    st.dictionaries(ids, st.tuples(probs, probs)),
    probs, probs, st.floats(0.1, 1e4),
)
def test_bias_params_roundtrip(tmp_path_factory, effects, annot, ua, ub, s):
    params = GroupBiasParams(
        ua, ub,
        tuple(tuple(r) for r in effects[0]), tuple(tuple(r) for r in effects[1]),
        {k: v[0] for k, v in annot.items()}, {k: v[1] for k, v in annot.items()}, s,
    )
    p = tmp_path_factory.mktemp("rt") / "bias.json"
    ingest.save_bias(params, p)
    assert ingest.load_bias(p) == params


@given(st.lists(st.floats(allow_nan=False, allow_infinity=False), min_size=1, max_size=6),
       st.floats(allow_nan=False, allow_infinity=False), st.booleans())
def test_classifier_roundtrip(tmp_path_factory, w, b, with_transform):
    params = ClassifierParams(tuple(w), b)
    transform = FeatureTransform("quadratic", True, (0.5, -1.0), (2.0, 3.0)) if with_transform else None
    p = tmp_path_factory.mktemp("rt") / "clf.json"
    ingest.save_classifier(params, p, transform)
    assert ingest.load_classifier(p) == (params, transform)


# -- featurizer --------------------------------------------------------------------

words = st.lists(st.text(alphabet="abcXYZ019", min_size=1, max_size=5), max_size=12)


@given(words, st.randoms())
def test_featurizer_ignores_token_order(tokens, random):
    f = ingest.HashingFeaturizer(64)
    shuffled = list(tokens)
    random.shuffle(shuffled)
    assert np.array_equal(f(" ".join(tokens)), f(" , ".join(shuffled)))


@given(st.text(), st.integers(1, 50))
def test_featurizer_norm_bound_and_determinism(text, buckets):
    f = ingest.HashingFeaturizer(buckets)
    v = f(text)
    assert v.shape == (buckets,)
    assert np.linalg.norm(v) <= math.sqrt(buckets)
    assert np.array_equal(v, ingest.HashingFeaturizer(buckets)(text))


def test_featurizer_tokenization():
    f = ingest.HashingFeaturizer()
    assert f.tokens("Hello, WORLD_42 hello!") == ["hello", "world", "42", "hello"]
    assert ingest.HashingFeaturizer(lowercase=False).tokens("Ab cD") == ["Ab", "cD"]
    assert np.array_equal(f("Hello world"), f("world HELLO"))
    with pytest.raises(ValueError):
        ingest.HashingFeaturizer(0)
