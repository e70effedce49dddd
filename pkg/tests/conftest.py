import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from groupanno.types import AnnotationDataset, AnnotatorTable

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def dataset(records, dim=None):
    return AnnotationDataset.from_records(records, dim)


def table(groups, names=()):
    return AnnotatorTable.from_dict(groups, names)


def random_fixture(rng, n_inst=6, n_ann=4, dim=2, P=2, max_per_inst=4):
    """Small random dataset/table pair; every instance has 1..max_per_inst annotators."""
    ann_ids = [f"r{k}" for k in range(n_ann)]
    records = []
    for i in range(n_inst):
        k = int(rng.integers(1, min(max_per_inst, n_ann) + 1))
        chosen = rng.choice(n_ann, size=k, replace=False)
        records.append((f"x{i}", rng.normal(size=dim), [(ann_ids[r], int(rng.integers(2))) for r in chosen]))
    groups = {a: [int(g) for g in rng.integers(0, 2, size=P)] for a in ann_ids}
    # keep both groups of every category populated
    for p in range(P):
        groups[ann_ids[0]][p] = 0
        groups[ann_ids[1]][p] = 1
    return dataset(records, dim), table(groups)


ids = st.text(
    alphabet=st.characters(blacklist_categories=("Cs",), blacklist_characters="\x00"),
    min_size=1,
    max_size=8,
)
finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


@st.composite
def datasets(draw, min_instances=1, max_instances=6, max_annotators=5):
    dim = draw(st.integers(1, 3))
    ann_ids = draw(st.lists(ids, min_size=1, max_size=max_annotators, unique=True))
    inst_ids = draw(st.lists(ids, min_size=min_instances, max_size=max_instances, unique=True))
    records = []
    for iid in inst_ids:
        feats = draw(st.lists(finite, min_size=dim, max_size=dim))
        who = draw(st.lists(st.sampled_from(ann_ids), min_size=1, max_size=len(ann_ids), unique=True))
        labels = draw(st.lists(st.integers(0, 1), min_size=len(who), max_size=len(who)))
        records.append((iid, feats, list(zip(who, labels))))
    return dataset(records, dim)


@st.composite
def tables_for(draw, ds, P=None):
    P = P if P is not None else draw(st.integers(1, 3))
    names = draw(st.lists(
        st.text(alphabet="abcdefghij_", min_size=1, max_size=6).filter(lambda s: s != "annotator_id"),
        min_size=P, max_size=P, unique=True,
    ))
    groups = {a: draw(st.lists(st.integers(0, 1), min_size=P, max_size=P)) for a in ds.annotator_ids}
    return AnnotatorTable.from_dict(groups, names)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
