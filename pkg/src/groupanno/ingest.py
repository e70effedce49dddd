"""On-disk formats: annotation/annotator/gold CSVs, parameter JSON, reports.

Annotations are long format, one row per (instance, annotator) pair::

    instance_id,annotator_id,label[,feature_0,...,feature_{d-1} | ,text]

Features (or text) may instead live in a separate ``instances.csv`` keyed by
``instance_id``. Annotator tables are ``annotator_id`` followed by one 0/1
column per demographic category. Gold labels live in their own
``instance_id,label`` file so inference code never reads them by accident.
"""

from __future__ import annotations

import csv
import hashlib
import json
import re
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .classifier import FeatureTransform
from .types import (
    Annotation,
    AnnotationDataset,
    AnnotatorTable,
    ClassifierParams,
    GroupBiasParams,
    Instance,
    PosteriorLabels,
)

_TOKEN = re.compile(r"[^\W_]+")


class ParseError(ValueError):
    """Malformed input file; ``line`` is 1-based and counts the header."""

    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        where = f"{path}:{line}" if line is not None else str(path)
        super().__init__(f"{where}: {message}")


class LabelDomainError(ParseError):
    pass


class DimensionError(ParseError):
    pass


def _num(x: float) -> str:
    # 17 significant digits round-trip every double exactly
    return format(float(x), ".17g")


@dataclass(frozen=True)
class HashingFeaturizer:
    """Bag-of-words presence vector over hashed tokens.

    Tokens are maximal runs of letters and digits. Each token sets its bucket
    to 1.0, so token order and repetition do not matter and the vector norm is
    at most ``sqrt(num_buckets)``.
    """

    num_buckets: int = 1024
    lowercase: bool = True

    def __post_init__(self):
        if self.num_buckets <= 0:
            raise ValueError("num_buckets must be positive")

    def tokens(self, text: str) -> List[str]:
        if self.lowercase:
            text = text.lower()
        return _TOKEN.findall(text)

    def bucket(self, token: str) -> int:
        digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "little") % self.num_buckets

    def __call__(self, text: str) -> np.ndarray:
        v = np.zeros(self.num_buckets)
        for tok in self.tokens(text):
            v[self.bucket(tok)] = 1.0
        return v


def _cell(v) -> str:
    v = str(v)
    if any(c in v for c in ',"\r\n'):
        return '"' + v.replace('"', '""') + '"'
    return v


class _Writer:
    # csv.writer leaves a bare CR unquoted, which breaks the round trip
    def __init__(self, f):
        self.f = f

    def writerow(self, cells):
        self.f.write(",".join(_cell(c) for c in cells) + "\n")


def _open_csv(path):
    f = open(path, newline="", encoding="utf-8")
    return f, csv.reader(f)


def _header(reader, path, required):
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise ParseError(path, 1, "empty file, header row required") from None
    missing = [c for c in required if c not in header]
    if missing:
        raise ParseError(path, 1, f"missing required column(s) {missing}; header is {header}")
    return header


def _parse_label(value, path, line, what="label") -> int:
    v = value.strip()
    if v not in ("0", "1"):
        raise LabelDomainError(path, line, f"{what} must be 0 or 1, got {v!r}")
    return int(v)


def _feature_columns(header) -> List[str]:
    cols = [h for h in header if h.startswith("feature_")]

    def key(c):
        try:
            return int(c[len("feature_"):])
        except ValueError:
            return c
    return sorted(cols, key=key)


def _row_features(row, header, feat_cols, text_col, featurizer, path, line):
    if feat_cols:
        try:
            return tuple(float(row[header.index(c)]) for c in feat_cols)
        except ValueError as exc:
            raise ParseError(path, line, f"non-numeric feature value: {exc}") from None
    if text_col:
        return tuple(featurizer(row[header.index(text_col)]).tolist())
    return None


def read_instances(path, featurizer: Optional[HashingFeaturizer] = None) -> Dict[str, Tuple[float, ...]]:
    """Read ``instance_id`` plus ``feature_*`` columns or a ``text`` column."""
    featurizer = featurizer or HashingFeaturizer()
    f, reader = _open_csv(path)
    with f:
        header = _header(reader, path, ["instance_id"])
        feat_cols = _feature_columns(header)
        text_col = "text" if "text" in header else None
        if not feat_cols and not text_col:
            raise ParseError(path, 1, "instances file needs feature_* columns or a text column")
        out: Dict[str, Tuple[float, ...]] = OrderedDict()
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                err = DimensionError if feat_cols else ParseError
                raise err(path, line, f"expected {len(header)} fields, got {len(row)}")
            iid = row[header.index("instance_id")]
            if iid in out:
                raise ParseError(path, line, f"duplicate instance_id {iid!r}")
            out[iid] = _row_features(row, header, feat_cols, text_col, featurizer, path, line)
    return out


def read_annotations(
    path,
    instances_path=None,
    featurizer: Optional[HashingFeaturizer] = None,
) -> AnnotationDataset:
    """Parse a long-format annotation CSV into a dataset.

    Without feature columns, text, or an instances file every instance gets a
    single constant feature 0.0 (the classifier then reduces to a class prior).
    """
    featurizer = featurizer or HashingFeaturizer()
    external = read_instances(instances_path, featurizer) if instances_path else None
    f, reader = _open_csv(path)
    with f:
        header = _header(reader, path, ["instance_id", "annotator_id", "label"])
        feat_cols = _feature_columns(header)
        text_col = "text" if "text" in header else None
        features: Dict[str, Tuple[float, ...]] = OrderedDict()
        first_line: Dict[str, int] = {}
        anns: Dict[str, List[Annotation]] = OrderedDict()
        seen = set()
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                err = DimensionError if feat_cols else ParseError
                raise err(path, line, f"expected {len(header)} fields, got {len(row)}")
            iid = row[header.index("instance_id")]
            aid = row[header.index("annotator_id")]
            label = _parse_label(row[header.index("label")], path, line)
            if (iid, aid) in seen:
                raise ParseError(path, line, f"annotator {aid!r} labels instance {iid!r} twice")
            seen.add((iid, aid))
            x = _row_features(row, header, feat_cols, text_col, featurizer, path, line)
            if iid not in anns:
                anns[iid] = []
                first_line[iid] = line
                if x is not None:
                    features[iid] = x
            elif x is not None and x != features[iid]:
                raise ParseError(path, line, f"features of instance {iid!r} differ from line {first_line[iid]}")
            anns[iid].append(Annotation(aid, label))

    instances = []
    dim = None
    for iid, a in anns.items():
        if external is not None:
            if iid not in external:
                raise ParseError(instances_path, None, f"no features for instance {iid!r}")
            x = external[iid]
        elif iid in features:
            x = features[iid]
        else:
            x = (0.0,)
        if dim is None:
            dim = len(x)
        elif len(x) != dim:
            raise DimensionError(path, first_line[iid], f"instance {iid!r} has {len(x)} features, expected {dim}")
        instances.append(Instance(iid, x, tuple(a)))
    return AnnotationDataset(tuple(instances), dim or 1)


def write_annotations(dataset: AnnotationDataset, path, instances_path=None) -> None:
    """Write long format; features go inline unless ``instances_path`` is given."""
    cols = [f"feature_{j}" for j in range(dataset.feature_dim)]
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = _Writer(f)
        w.writerow(["instance_id", "annotator_id", "label"] + ([] if instances_path else cols))
        for inst in dataset.instances:
            feats = [] if instances_path else [_num(v) for v in inst.features]
            for a in inst.annotations:
                w.writerow([inst.instance_id, a.annotator_id, a.label] + feats)
    if instances_path:
        with open(instances_path, "w", newline="", encoding="utf-8") as f:
            w = _Writer(f)
            w.writerow(["instance_id"] + cols)
            for inst in dataset.instances:
                w.writerow([inst.instance_id] + [_num(v) for v in inst.features])


def read_annotators(path) -> AnnotatorTable:
    f, reader = _open_csv(path)
    with f:
        header = _header(reader, path, ["annotator_id"])
        cats = [h for h in header if h != "annotator_id"]
        if not cats:
            raise ParseError(path, 1, "annotator table needs at least one group column")
        pos = header.index("annotator_id")
        table: Dict[str, Tuple[int, ...]] = OrderedDict()
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(path, line, f"expected {len(header)} fields, got {len(row)}")
            aid = row[pos]
            if aid in table:
                raise ParseError(path, line, f"duplicate annotator_id {aid!r}")
            groups = []
            for c in cats:
                v = row[header.index(c)].strip()
                if v not in ("0", "1"):
                    raise LabelDomainError(
                        path, line,
                        f"group value {v!r} in column {c!r} is not 0/1; encode each category "
                        f"as a binary 0/1 column before loading",
                    )
                groups.append(int(v))
            table[aid] = tuple(groups)
    return AnnotatorTable(table, len(cats), tuple(cats))


def write_annotators(table: AnnotatorTable, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = _Writer(f)
        w.writerow(["annotator_id"] + list(table.category_names))
        for aid, groups in table.annotators.items():
            w.writerow([aid] + list(groups))


def read_gold(path) -> Dict[str, int]:
    f, reader = _open_csv(path)
    with f:
        header = _header(reader, path, ["instance_id", "label"])
        out: Dict[str, int] = OrderedDict()
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            iid = row[header.index("instance_id")]
            if iid in out:
                raise ParseError(path, line, f"duplicate instance_id {iid!r}")
            out[iid] = _parse_label(row[header.index("label")], path, line)
    return out


def write_gold(gold: Mapping[str, int], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = _Writer(f)
        w.writerow(["instance_id", "label"])
        for iid, y in gold.items():
            w.writerow([iid, int(y)])


def write_posteriors(post: PosteriorLabels, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = _Writer(f)
        w.writerow(["instance_id", "mu", "hard"])
        for iid, m in post.mu.items():
            w.writerow([iid, _num(m), post.hard[iid]])


def read_posteriors(path) -> PosteriorLabels:
    f, reader = _open_csv(path)
    with f:
        header = _header(reader, path, ["instance_id", "mu"])
        mu: Dict[str, float] = OrderedDict()
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                m = float(row[header.index("mu")])
            except ValueError:
                raise ParseError(path, line, f"mu is not a number: {row[header.index('mu')]!r}") from None
            if not 0.0 <= m <= 1.0:
                raise ParseError(path, line, f"mu {m} outside [0, 1]")
            mu[row[header.index("instance_id")]] = m
    return PosteriorLabels(mu)


def write_trace(trace: Sequence[float], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = _Writer(f)
        w.writerow(["epoch", "objective"])
        for k, v in enumerate(trace, start=1):
            w.writerow([k, _num(v)])


# -- JSON parameter dumps ----------------------------------------------------

def bias_to_dict(params: GroupBiasParams) -> dict:
    return {
        "u_alpha": params.u_alpha,
        "u_beta": params.u_beta,
        "group_effects_alpha": [list(r) for r in params.group_effects_alpha],
        "group_effects_beta": [list(r) for r in params.group_effects_beta],
        "annot_alpha": dict(params.annot_alpha),
        "annot_beta": dict(params.annot_beta),
        "concentration": params.concentration,
    }


def bias_from_dict(d) -> GroupBiasParams:
    return GroupBiasParams(
        u_alpha=float(d["u_alpha"]),
        u_beta=float(d["u_beta"]),
        group_effects_alpha=tuple(tuple(float(v) for v in r) for r in d["group_effects_alpha"]),
        group_effects_beta=tuple(tuple(float(v) for v in r) for r in d["group_effects_beta"]),
        annot_alpha={k: float(v) for k, v in d["annot_alpha"].items()},
        annot_beta={k: float(v) for k, v in d["annot_beta"].items()},
        concentration=float(d["concentration"]),
    )


def classifier_to_dict(params: ClassifierParams, transform: Optional[FeatureTransform] = None) -> dict:
    out = {
        "weights": list(params.weights),
        "intercept": params.intercept,
        "standardize": params.standardize,
    }
    if transform is not None:
        out["feature_transform"] = {
            "kind": transform.kind,
            "standardize": transform.standardize,
            "mean": list(transform.mean),
            "scale": list(transform.scale),
        }
    return out


def classifier_from_dict(d) -> Tuple[ClassifierParams, Optional[FeatureTransform]]:
    params = ClassifierParams(
        tuple(float(v) for v in d["weights"]), float(d["intercept"]), bool(d.get("standardize", False))
    )
    t = d.get("feature_transform")
    transform = None
    if t is not None:
        transform = FeatureTransform(t["kind"], bool(t["standardize"]), tuple(t["mean"]), tuple(t["scale"]))
    return params, transform


def dump_json(obj, path) -> None:
    # Python floats serialise with the shortest repr that round-trips exactly
    text = json.dumps(obj, indent=2, allow_nan=True)
    Path(path).write_text(text + "\n", encoding="utf-8")


def load_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def save_bias(params: GroupBiasParams, path) -> None:
    dump_json(bias_to_dict(params), path)


def load_bias(path) -> GroupBiasParams:
    return bias_from_dict(load_json(path))


def save_classifier(params: ClassifierParams, path, transform=None) -> None:
    dump_json(classifier_to_dict(params, transform), path)


def load_classifier(path):
    return classifier_from_dict(load_json(path))


# -- reports -------------------------------------------------------------------

def _fmt(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, bool):
        return str(v)
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


def format_table(results: Mapping) -> str:
    """Render a flat mapping as two columns, a mapping of mappings as a grid."""
    if not results:
        return ""
    rows = list(results.items())
    if all(isinstance(v, Mapping) for _, v in rows):
        cols: List[str] = []
        for _, v in rows:
            for c in v:
                if c not in cols and not isinstance(v[c], (Mapping, list, tuple)):
                    cols.append(c)
        grid = [[""] + cols] + [[str(k)] + [_fmt(v.get(c)) for c in cols] for k, v in rows]
    else:
        grid = [[str(k), _fmt(v) if not isinstance(v, (Mapping, list, tuple)) else json.dumps(v)] for k, v in rows]
    widths = [max(len(r[j]) for r in grid) for j in range(len(grid[0]))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip() for r in grid]
    return "\n".join(lines) + "\n"


def write_report(results: Mapping, path, table_text: Optional[str] = None) -> Tuple[Path, Path]:
    """Write ``<path>.json`` and a human-readable ``<path>.txt`` next to it.

    ``table_text`` overrides the default rendering of the text file.
    """
    path = Path(path)
    stem = path.with_suffix("") if path.suffix in (".json", ".txt") else path
    jpath, tpath = stem.with_suffix(".json"), stem.with_suffix(".txt")
    jpath.parent.mkdir(parents=True, exist_ok=True)
    jpath.write_text(json.dumps(results, indent=2) + "\n" if results else "{}\n", encoding="utf-8")
    tpath.write_text(format_table(results) if table_text is None else table_text, encoding="utf-8")
    return jpath, tpath
