import warnings

import numpy as np
import pytest

from exinhawkes import cli, io
from exinhawkes.inference import McmcConfig, run_mcmc
from exinhawkes.model import CoverageError, ExInParams, Link, ValidationError
from exinhawkes.scenarios import reference_params


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_three_rows_two_replicates(tmp_path):
    f = write(tmp_path / "e.csv", "time,mark,replicate\n1.5,a,day1\n0.5,b,day2\n2.0,b,day1\n")
    data = io.ingest_events(f)
    assert [len(s) for s in data.sequences] == [2, 1]
    assert data.mark_labels == ["a", "b"]
    assert data.replicate_labels == ["day1", "day2"]
    assert data.sequences[0].counts().tolist() == [1, 1]
    assert data.sequences[1].replicate_id == 1


def test_meerkat_shaped_counts(tmp_path):
    rng = np.random.default_rng(0)
    counts = {"cc": 1793, "al": 133, "sn": 550}
    labels = np.repeat(list(counts), list(counts.values()))
    times = np.sort(rng.uniform(0, 5000, labels.size))
    rng.shuffle(labels)
    rows = "".join(f"{io.fmt(t)},{m},1\n" for t, m in zip(times, labels))
    data = io.ingest_events(write(tmp_path / "m.csv", "time,mark,replicate\n" + rows), horizon=5000.0)
    got = dict(zip(data.mark_labels, data.sequences[0].counts().tolist()))
    assert got == counts


def test_ties_warn_once_per_collision(tmp_path):
    f = write(tmp_path / "t.csv", "time,mark\n1.0,0\n1.0,1\n2.0,0\n3.0,0\n3.0,0\n")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        data = io.ingest_events(f, horizon=10.0)
    ties = [w for w in caught if issubclass(w.category, io.TiePerturbationWarning)]
    assert len(ties) == 2
    t = data.sequences[0].times
    assert np.all(np.diff(t) > 0)
    assert t[1] == pytest.approx(1.0 + 1e-8)


def test_bad_event_files(tmp_path):
    with pytest.raises(io.IngestError):
        io.ingest_events(write(tmp_path / "a.csv", "t,m\n1,0\n"))
    with pytest.raises(io.IngestError):
        io.ingest_events(write(tmp_path / "b.csv", "time,mark\nx,0\n"))
    with pytest.raises(io.IngestError):
        io.ingest_events(write(tmp_path / "c.csv", "time,mark\n5,0\n"), horizon=4.0)
    with pytest.raises(io.IngestError):
        io.ingest_events(write(tmp_path / "d.csv", "time,mark\n1,z\n"), mark_labels=["a"])


def test_covariates(tmp_path):
    f = write(tmp_path / "c.csv", "time,noise\n0,0.5\n10,1.5\n20\n")
    track = io.ingest_covariates(f, horizon=20.0)
    assert track.knot_times.tolist() == [0.0, 10.0, 20.0]
    assert track.values.tolist() == [[1.0, 0.5], [1.0, 1.5]]
    with pytest.raises(CoverageError):
        io.ingest_covariates(f, horizon=25.0)
    with pytest.raises(io.IngestError):
        io.ingest_covariates(write(tmp_path / "d.csv", "time,noise\n1,0.5\n10\n"))
    with pytest.raises(io.IngestError):
        io.ingest_covariates(write(tmp_path / "e.csv", "time,noise\n0,0.5\n0,1\n10\n"))


def test_params_round_trip(tmp_path, small_params):
    io.write_params(tmp_path / "p.txt", small_params)
    assert io.read_params(tmp_path / "p.txt") == small_params
    odd = ExInParams.from_matrices([1 / 3, np.pi], [[0.1, 0.0], [1e-17, 0.7]], np.zeros((2, 2)), [np.e, 2], [1, 1],
                                   background_link=Link.LINEAR)
    io.write_params(tmp_path / "q.txt", odd)
    assert io.read_params(tmp_path / "q.txt") == odd


def test_draws_round_trip(tmp_path):
    seq = io.ingest_events(write(tmp_path / "e.csv", "time,mark\n1,0\n2,1\n2.5,0\n4,1\n"), horizon=5.0).sequences
    draws = run_mcmc(seq, config=McmcConfig(iterations=20, burn_in=5, adapt_window=5))
    io.write_draws(tmp_path / "post", draws)
    back = io.read_draws(tmp_path / "post")
    assert np.array_equal(back.values, draws.values)
    assert np.array_equal(back.loglik, draws.loglik)
    assert back.quad == draws.quad and back.variant == draws.variant


def test_kv_rejects_malformed_lines(tmp_path):
    with pytest.raises(ValidationError):
        io.read_kv(write(tmp_path / "k.txt", "a=1\nnonsense\n"))


# -- command line ------------------------------------------------------------------


def run(*argv):
    return cli.run([str(a) for a in argv])


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert run("simulate", "--out", out, "--horizon", "300", "--seed", "2") == 0
    return out


def test_fit_rejects_no_retained_draws(sim_dir, tmp_path):
    code = run("fit", "--out", tmp_path, "--events", sim_dir / "events.csv", "--iterations", "50", "--burn-in", "50")
    assert code == 2


def test_missing_input_is_exit_two(tmp_path):
    assert run("fit", "--out", tmp_path, "--events", tmp_path / "none.csv") == 2
    assert run("fit", "--out", tmp_path, "--set", "mcmc.bogus=1") == 2


def test_pipeline_and_manifest_rerun(sim_dir, tmp_path):
    fit1, fit2 = tmp_path / "f1", tmp_path / "f2"
    events = sim_dir / "events.csv"
    assert run("fit", "--out", fit1, "--events", events, "--iterations", "60", "--burn-in", "20",
               "--set", "mcmc.adapt_window=20") == 0
    manifest = io.read_kv(fit1 / "manifest.txt")
    assert manifest["command"] == "fit"
    assert manifest["input.events.sha256"] == io.file_digest(events)
    assert manifest["output.posterior.csv.sha256"] == io.file_digest(fit1 / "posterior.csv")
    assert run("fit", "--out", fit2, "--config", fit1 / "manifest.txt") == 0
    assert (fit1 / "posterior.csv").read_bytes() == (fit2 / "posterior.csv").read_bytes()

    a = tmp_path / "a"
    assert run("assess", "--out", a, "--events", events, "--posterior", fit1, "--per-mark") == 0
    qq = np.loadtxt(a / "qq.csv", delimiter=",", skiprows=1)
    assert qq.shape[1] == 4
    assert float(io.read_kv(a / "msd.txt")["msd"]) >= 0
    assert "waic" in io.read_kv(a / "waic.txt")
    assert len(list(a.glob("qq_mark_*.csv"))) == 3

    dcp = tmp_path / "d"
    assert run("decompose", "--out", dcp, "--events", events, "--posterior", fit1) == 0
    assert (dcp / "decomposition.csv").read_text().startswith("mark,component,mean")

    r = tmp_path / "r"
    assert run("report", "--out", r, "--posterior", fit1, "--dump-params", tmp_path / "point.txt") == 0
    text = (r / "report.txt").read_text()
    assert "alpha[" in text and "P(incl)" in text
    assert io.read_params(tmp_path / "point.txt") == io.read_draws(fit1).point_estimate()


def test_string_labels_are_kept(tmp_path):
    rows = "".join(f"{t},{m}\n" for t, m in zip(np.arange(1, 41) * 2.5, ["cc", "al", "sn", "cc"] * 10))
    events = write(tmp_path / "e.csv", "time,mark\n" + rows)
    fit = tmp_path / "fit"
    assert run("fit", "--out", fit, "--events", events, "--horizon", "101", "--iterations", "20", "--burn-in", "10",
               "--set", "mcmc.adapt_window=5") == 0
    assert run("report", "--out", tmp_path / "r", "--posterior", fit) == 0
    assert "alpha[cc,al]" in (tmp_path / "r" / "report.txt").read_text()


def test_simulate_is_reproducible(tmp_path):
    assert run("simulate", "--out", tmp_path / "a", "--variant", "inh_only", "--horizon", "200,300", "--seed", "5") == 0
    assert run("simulate", "--out", tmp_path / "b", "--config", tmp_path / "a" / "manifest.txt") == 0
    a = (tmp_path / "a" / "events.csv").read_bytes()
    assert a == (tmp_path / "b" / "events.csv").read_bytes()
    data = io.ingest_events(tmp_path / "a" / "events.csv")
    assert len(data.sequences) == 2


def test_baseline_commands(tmp_path):
    assert run("baseline-sl", "simulate", "--out", tmp_path / "s", "--horizon", "200", "--seed", "1") == 0
    assert run("baseline-sl", "fit", "--out", tmp_path / "f", "--events", tmp_path / "s" / "events.csv",
               "--horizon", "200", "--iterations", "60", "--burn-in", "30") == 0
    summary = io.read_kv(tmp_path / "f" / "sl_summary.txt")
    assert float(summary["alpha.hpd_lo"]) <= float(summary["alpha.mean"]) <= float(summary["alpha.hpd_hi"])


def test_simulate_with_parameter_file(tmp_path):
    io.write_params(tmp_path / "p.txt", reference_params("exc_only"))
    assert run("simulate", "--out", tmp_path / "o", "--variant", "exc_only", "--params", tmp_path / "p.txt",
               "--horizon", "100") == 0
    manifest = io.read_kv(tmp_path / "o" / "manifest.txt")
    assert manifest["input.params.sha256"] == io.file_digest(tmp_path / "p.txt")
