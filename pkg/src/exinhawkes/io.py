"""Plain-text persistence: event and covariate CSVs, key=value documents, draw tables, manifests.

Floats are written with 17 significant digits so every file round-trips exactly.
"""

from __future__ import annotations

import csv
import hashlib
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .inference import PosteriorDraws, param_names
from .likelihood import QuadratureSpec
from .model import CovariateTrack, CoverageError, ExInParams, Link, MarkedEventSequence, ModelVariant, ValidationError


class IngestError(ValidationError):
    """Malformed input file; the message names the file and line."""


class TiePerturbationWarning(UserWarning):
    pass


def fmt(x) -> str:
    return format(float(x), ".17g")


# -- events ---------------------------------------------------------------------


@dataclass
class EventData:
    sequences: list[MarkedEventSequence]
    mark_labels: list[str]
    replicate_labels: list[str]

    @property
    def mark_count(self) -> int:
        return len(self.mark_labels)


def _read_rows(path) -> tuple[list[str], list[tuple[int, list[str]]]]:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        rows = [(reader.line_num, r) for r in reader if r and any(c.strip() for c in r)]
    if not rows:
        raise IngestError(f"{path}: file is empty")
    header = [c.strip().lower() for c in rows[0][1]]
    return header, rows[1:]


def _float(value: str, path, line: int, what: str) -> float:
    try:
        x = float(value)
    except ValueError:
        raise IngestError(f"{path}:{line}: {what} {value!r} is not a number") from None
    if not np.isfinite(x):
        raise IngestError(f"{path}:{line}: {what} must be finite")
    return x


def ingest_events(path, horizon=None, mark_labels: list[str] | None = None) -> EventData:
    """Read a ``time,mark[,replicate]`` CSV.

    Mark and replicate labels are mapped to 0-based indices in order of first
    appearance (or in the order of ``mark_labels`` when given).  Exactly tied
    times within a replicate are separated by ``1e-9 * T``, with one warning
    per collision.  ``horizon`` defaults to each replicate's last event time; a
    scalar or one value per replicate overrides it.
    """
    header, rows = _read_rows(path)
    if header[:2] != ["time", "mark"] or len(header) > 3 or (len(header) == 3 and header[2] != "replicate"):
        raise IngestError(f"{path}:1: header must be 'time,mark' or 'time,mark,replicate'")
    if not rows:
        raise IngestError(f"{path}: no events")
    labels = list(mark_labels) if mark_labels is not None else []
    mark_index = {lab: i for i, lab in enumerate(labels)}
    rep_labels: list[str] = []
    rep_index: dict[str, int] = {}
    times, marks, reps = [], [], []
    for line, row in rows:
        if len(row) != len(header):
            raise IngestError(f"{path}:{line}: expected {len(header)} fields, found {len(row)}")
        t = _float(row[0], path, line, "time")
        if t <= 0:
            raise IngestError(f"{path}:{line}: event times must be positive")
        lab = row[1].strip()
        if lab not in mark_index:
            if mark_labels is not None:
                raise IngestError(f"{path}:{line}: unknown mark {lab!r}")
            mark_index[lab] = len(labels)
            labels.append(lab)
        rlab = row[2].strip() if len(header) == 3 else "0"
        if rlab not in rep_index:
            rep_index[rlab] = len(rep_labels)
            rep_labels.append(rlab)
        times.append(t)
        marks.append(mark_index[lab])
        reps.append(rep_index[rlab])
    times_a, marks_a, reps_a = np.array(times), np.array(marks, dtype=np.int64), np.array(reps)
    D, K = len(rep_labels), len(labels)
    horizons = _horizons(horizon, D)
    seqs = []
    for d in range(D):
        sel = reps_a == d
        order = np.argsort(times_a[sel], kind="stable")
        t, m = times_a[sel][order], marks_a[sel][order]
        T = horizons[d] if horizons[d] is not None else float(t[-1])
        t = _separate_ties(t, T, rep_labels[d])
        if horizons[d] is None:
            T = float(t[-1])
        elif t[-1] > T:
            raise IngestError(f"{path}: replicate {rep_labels[d]} has events after the horizon {T}")
        seqs.append(MarkedEventSequence(t, m, T, K, d))
    return EventData(seqs, labels, rep_labels)


def _horizons(horizon, D: int) -> list:
    if horizon is None:
        return [None] * D
    h = np.atleast_1d(np.asarray(horizon, dtype=float))
    if h.size == 1:
        return [float(h[0])] * D
    if h.size != D:
        raise ValidationError(f"{h.size} horizons given for {D} replicates")
    return [float(x) for x in h]


def _separate_ties(t: np.ndarray, T: float, replicate: str) -> np.ndarray:
    t = t.copy()
    eps = 1e-9 * T
    for i in range(1, t.size):
        if t[i] <= t[i - 1]:
            new = t[i - 1] + eps
            warnings.warn(
                TiePerturbationWarning(
                    f"replicate {replicate}: tied time {t[i]!r} moved to {new!r}"
                ),
                stacklevel=3,
            )
            t[i] = new
    return t


def write_events(path, seqs, mark_labels=None, replicate_labels=None) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        fh.write("time,mark,replicate\n")
        for seq in seqs:
            rlab = replicate_labels[seq.replicate_id] if replicate_labels else str(seq.replicate_id)
            for t, m in zip(seq.times, seq.marks):
                lab = mark_labels[m] if mark_labels else str(m)
                fh.write(f"{fmt(t)},{lab},{rlab}\n")


# -- covariates ------------------------------------------------------------------


def ingest_covariates(path, horizon: float | None = None) -> CovariateTrack:
    """Read a ``time,value...`` CSV of piecewise-constant covariates.

    Each row starts a segment that lasts until the next row's time; the final
    row only marks where coverage ends (its values, if any, are ignored).  The
    first time must be 0.  An intercept column is prepended.
    """
    header, rows = _read_rows(path)
    if not header or header[0] != "time" or len(header) < 2:
        raise IngestError(f"{path}:1: header must be 'time,<covariate>...'")
    if len(rows) < 2:
        raise IngestError(f"{path}: at least two rows (a segment and its end) are required")
    knots, values = [], []
    for i, (line, row) in enumerate(rows):
        last = i == len(rows) - 1
        if not last and len(row) != len(header):
            raise IngestError(f"{path}:{line}: expected {len(header)} fields, found {len(row)}")
        knots.append(_float(row[0], path, line, "time"))
        if knots[-1] < 0 or (i > 0 and knots[-1] <= knots[-2]):
            raise IngestError(f"{path}:{line}: times must start at 0 and increase strictly")
        if not last:
            values.append([_float(v, path, line, header[j + 1]) for j, v in enumerate(row[1:])])
    if knots[0] != 0.0:
        raise IngestError(f"{path}:{rows[0][0]}: the first segment must start at time 0")
    vals = np.column_stack([np.ones(len(values)), np.array(values)])
    track = CovariateTrack(np.array(knots), vals)
    if horizon is not None and not track.covers(horizon):
        raise CoverageError(f"{path}: covariates end at {track.end}, before the horizon {horizon}")
    return track


# -- key=value documents ------------------------------------------------------


def read_kv(path) -> dict[str, str]:
    out = {}
    for n, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise IngestError(f"{path}:{n}: expected key=value")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def kv_text(d: dict) -> str:
    return "".join(f"{k}={v}\n" for k, v in d.items())


def write_kv(path, d: dict) -> None:
    Path(path).write_text(kv_text(d), encoding="utf-8")


def params_to_kv(p: ExInParams) -> dict[str, str]:
    D, K, P = p.beta.shape
    out = {
        "link": p.background_link.value,
        "replicate_count": str(D),
        "mark_count": str(K),
        "covariate_dim": str(P),
    }
    for d in range(D):
        for k in range(K):
            for q in range(P):
                out[f"beta.{d}.{k}.{q}"] = fmt(p.beta[d, k, q])
    for name in ("alpha_star", "gamma_star"):
        for l in range(K):
            for k in range(K):
                out[f"{name}.{l}.{k}"] = fmt(getattr(p, name)[l, k])
    for name in ("include_alpha", "include_gamma"):
        for l in range(K):
            for k in range(K):
                out[f"{name}.{l}.{k}"] = "1" if getattr(p, name)[l, k] else "0"
    for name in ("eta", "phi"):
        for l in range(K):
            out[f"{name}.{l}"] = fmt(getattr(p, name)[l])
    return out


def params_from_kv(d: dict[str, str]) -> ExInParams:
    try:
        D, K, P = int(d["replicate_count"]), int(d["mark_count"]), int(d["covariate_dim"])
        beta = np.array([[[float(d[f"beta.{r}.{k}.{q}"]) for q in range(P)] for k in range(K)] for r in range(D)])
        mats = {
            n: np.array([[float(d[f"{n}.{l}.{k}"]) for k in range(K)] for l in range(K)])
            for n in ("alpha_star", "gamma_star", "include_alpha", "include_gamma")
        }
        vecs = {n: np.array([float(d[f"{n}.{l}"]) for l in range(K)]) for n in ("eta", "phi")}
        link = Link(d.get("link", "log"))
    except KeyError as e:
        raise IngestError(f"parameter file is missing key {e.args[0]}") from None
    except ValueError as e:
        raise IngestError(f"parameter file has a bad value: {e}") from None
    return ExInParams(
        beta=beta,
        alpha_star=mats["alpha_star"],
        gamma_star=mats["gamma_star"],
        include_alpha=mats["include_alpha"] > 0.5,
        include_gamma=mats["include_gamma"] > 0.5,
        eta=vecs["eta"],
        phi=vecs["phi"],
        background_link=link,
    )


def write_params(path, p: ExInParams) -> None:
    write_kv(path, params_to_kv(p))


def read_params(path) -> ExInParams:
    return params_from_kv(read_kv(path))


# -- posterior draws -----------------------------------------------------------


def write_table(path, header: list[str], rows) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(x) for x in row) + "\n")


def write_draws(directory, draws: PosteriorDraws) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    header = draws.names + ["loglik", "chain"]
    rows = np.column_stack([draws.values, draws.loglik, draws.chain])
    write_table(directory / "posterior.csv", header, rows)
    meta = {
        "replicate_count": draws.replicate_count,
        "mark_count": draws.mark_count,
        "covariate_dim": draws.covariate_dim,
        "link": draws.background_link.value,
        "variant": draws.variant.value,
        "quad.scheme": draws.quad.scheme,
        "quad.subdivisions": draws.quad.subdivisions,
        "quad.exact_when_uninhibited": int(draws.quad.exact_when_uninhibited),
    }
    write_kv(directory / "posterior.meta", meta)
    acc = {k: fmt(v) for k, v in sorted(draws.acceptance.items())}
    write_kv(directory / "acceptance.txt", acc)


def read_draws(directory) -> PosteriorDraws:
    directory = Path(directory)
    meta = read_kv(directory / "posterior.meta")
    D, K, P = int(meta["replicate_count"]), int(meta["mark_count"]), int(meta["covariate_dim"])
    with (directory / "posterior.csv").open(encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
    names = param_names(D, K, P)
    if header != names + ["loglik", "chain"]:
        raise IngestError(f"{directory / 'posterior.csv'}: header does not match posterior.meta")
    data = np.loadtxt(directory / "posterior.csv", delimiter=",", skiprows=1, ndmin=2)
    acc_path = directory / "acceptance.txt"
    acceptance = {k: float(v) for k, v in read_kv(acc_path).items()} if acc_path.exists() else {}
    quad = QuadratureSpec(
        scheme=meta.get("quad.scheme", "simpson"),
        subdivisions=int(meta["quad.subdivisions"]),
        exact_when_uninhibited=meta["quad.exact_when_uninhibited"] == "1",
    )
    return PosteriorDraws(
        values=data[:, : len(names)],
        loglik=data[:, len(names)],
        chain=data[:, len(names) + 1].astype(np.int64),
        replicate_count=D,
        mark_count=K,
        covariate_dim=P,
        background_link=Link(meta["link"]),
        variant=ModelVariant(meta["variant"]),
        acceptance=acceptance,
        quad=quad,
    )


# -- manifests ------------------------------------------------------------------


def file_digest(path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def config_hash(config: dict) -> str:
    return hashlib.sha256(kv_text(dict(sorted(config.items()))).encode()).hexdigest()


def write_manifest(directory, command: str, config: dict, inputs: dict, outputs: list[str]) -> None:
    """Record what produced the outputs in ``directory``.

    ``config`` holds every setting as strings; re-running with ``--config
    manifest.txt`` reads the ``config.*`` entries back.
    """
    directory = Path(directory)
    doc = {
        "software": "exinhawkes",
        "version": __version__,
        "command": command,
        "config_hash": config_hash(config),
        "seed": config.get("seed", ""),
    }
    for k, v in sorted(config.items()):
        doc[f"config.{k}"] = v
    for name, p in sorted(inputs.items()):
        if p:
            doc[f"input.{name}"] = str(p)
            doc[f"input.{name}.sha256"] = file_digest(p)
    for name in outputs:
        doc[f"output.{name}.sha256"] = file_digest(directory / name)
    write_kv(directory / "manifest.txt", doc)


def config_from_manifest(path) -> dict[str, str]:
    doc = read_kv(path)
    return {k[len("config.") :]: v for k, v in doc.items() if k.startswith("config.")}
