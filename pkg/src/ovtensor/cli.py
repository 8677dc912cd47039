"""Command-line entry point: ``ovtensor gen | decompose | kappa | bench | selftest``.

Exit codes: 0 success, 1 self-test failure, 2 invalid flags or I/O error,
3 condition failure during decomposition.
"""

from __future__ import annotations

import csv
import math
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from pathlib import Path

import click
import numpy as np

from .decompose import DecomposeParams, decompose
from .errors import ConditionFailure
from .instances import (
    ENSEMBLES,
    NoiseModel,
    add_noise,
    build_tensor,
    gen_components,
    read_components_csv,
    square_spectral_norm,
    write_components_csv,
)
from .io import read_tnsr, versions, write_json, write_tnsr
from .lift import SymTensor4, kappa
from .rounding import thread_count

NOISE_KINDS = ("none", "spectral_bounded", "dictionary_split")


def _float_list(text: str) -> list[float]:
    try:
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise click.BadParameter(f"not a comma-separated number list: {text!r}") from exc
    if not vals:
        raise click.BadParameter("list must be nonempty")
    return vals


def _int_list(text: str) -> list[int]:
    vals = _float_list(text)
    if any(v != int(v) for v in vals):
        raise click.BadParameter(f"expected integers: {text!r}")
    return [int(v) for v in vals]


def _ensure_dir(path: Path) -> None:
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise click.ClickException(f"cannot create {path}: {exc}") from exc


@contextmanager
def _manifest(path: Path, command: str, inputs: dict):
    """Yield a mutable manifest dict and write it on every exit path."""
    manifest = {"command": command, "inputs": inputs, "versions": versions(), "threads": thread_count(), "status": "error"}
    clock = time.perf_counter()
    try:
        yield manifest
        manifest["status"] = "ok"
    except ConditionFailure as exc:
        manifest["status"] = "condition_failure"
        manifest["failure"] = {"quantity": exc.quantity, "measured": exc.measured, "floor": exc.floor}
        raise
    finally:
        manifest["wall_time"] = time.perf_counter() - clock
        try:
            write_json(path, manifest)
        except OSError as exc:
            click.echo(f"warning: could not write manifest {path}: {exc}", err=True)


class _Exit2Group(click.Group):
    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except click.ClickException as exc:
            exc.exit_code = 2
            raise
        except OSError as exc:
            click.echo(f"Error: {exc}", err=True)
            ctx.exit(2)


@click.group(cls=_Exit2Group)
@click.version_option(package_name="artifact")
def main() -> None:
    """Spectral decomposition of overcomplete symmetric 4-tensors."""


@main.command("gen")
@click.option("--ensemble", type=click.Choice(ENSEMBLES), default="spherical", show_default=True)
@click.option("--d", "d", type=int, required=True, help="Ambient dimension.")
@click.option("--n", "n", type=int, required=True, help="Number of components.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--noise", type=click.Choice(NOISE_KINDS), default="spectral_bounded", show_default=True)
@click.option("--eta", type=float, default=0.0, show_default=True, help="Noise magnitude.")
@click.option("--out", "out", type=click.Path(file_okay=False, path_type=Path), required=True)
def cmd_gen(ensemble, d, n, seed, noise, eta, out):
    """Write tensor.tnsr, truth.csv and manifest.json into OUT."""
    if d < 2:
        raise click.UsageError("d must be ≥ 2")
    if n < 1:
        raise click.UsageError("n must be ≥ 1")
    if eta < 0 or not math.isfinite(eta):
        raise click.UsageError("eta must be a finite nonnegative number")
    _ensure_dir(out)
    inputs = {"ensemble": ensemble, "d": d, "n": n, "seed": seed, "noise": noise, "eta": eta}
    with _manifest(out / "manifest.json", "gen", inputs) as manifest:
        a = gen_components(ensemble, d, n, seed)
        clean = build_tensor(a)
        if noise == "none" or eta == 0.0:
            noisy = clean
        elif noise == "spectral_bounded":
            noisy = add_noise(clean, NoiseModel("spectral_bounded", eta=eta), seed)
        else:
            noisy = add_noise(clean, NoiseModel("dictionary_split", eps1=eta, eps2=eta), seed, components=a)
        e = noisy.array - clean.array
        manifest["measured_noise_norm"] = square_spectral_norm(e)
        write_tnsr(out / "tensor.tnsr", noisy.array)
        write_components_csv(out / "truth.csv", a)
        manifest["outputs"] = ["tensor.tnsr", "truth.csv"]
    click.echo(f"wrote {out}/tensor.tnsr ({d}^4), {n} components, noise norm {manifest['measured_noise_norm']:.3e}")


@main.command("decompose")
@click.option("--in", "inp", type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True)
@click.option("--n", "n", type=int, required=True)
@click.option("--eps", type=float, default=0.0, show_default=True, help="Noise level used for truncation and the test threshold.")
@click.option("--beta", type=float, default=0.1, show_default=True)
@click.option("--delta", type=float, default=0.1, show_default=True)
@click.option("--sigma-floor", type=float, default=1e-10, show_default=True)
@click.option("--kappa-floor", type=float, default=0.0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--repetitions", type=int, default=None, help="Rounding repetitions (default scales with n).")
@click.option("--truth", type=click.Path(exists=True, dir_okay=False, path_type=Path), default=None)
@click.option("--out", "out", type=click.Path(file_okay=False, path_type=Path), required=True)
def cmd_decompose(inp, n, eps, beta, delta, sigma_floor, kappa_floor, seed, repetitions, truth, out):
    """Recover components; write components.csv, report.json and manifest.json into OUT."""
    if n < 1:
        raise click.UsageError("n must be ≥ 1")
    if repetitions is not None and repetitions < 0:
        raise click.UsageError("repetitions must be ≥ 0")
    try:
        params = DecomposeParams(
            n=n, epsilon=eps, beta=beta, delta=delta, sigma_floor=sigma_floor,
            kappa_floor=kappa_floor, seed=seed, repetitions=repetitions,
        )
    except ValueError as exc:
        raise click.UsageError(str(exc)) from exc
    try:
        arr = read_tnsr(inp)
        t = SymTensor4.from_array(arr)
        a = read_components_csv(truth) if truth is not None else None
    except (ValueError, OSError) as exc:
        raise click.ClickException(str(exc)) from exc
    _ensure_dir(out)
    inputs = {"in": str(inp), "truth": None if truth is None else str(truth), "parameters": params.as_dict()}
    try:
        with _manifest(out / "manifest.json", "decompose", inputs) as manifest:
            rep = decompose(t, params, truth=a)
            report = rep.to_json()
            report["seed"] = seed
            report["parameters"] = params.as_dict()
            write_components_csv(out / "components.csv", rep.recovered)
            write_json(out / "report.json", report)
            manifest["outputs"] = ["components.csv", "report.json"]
    except ConditionFailure as exc:
        click.echo(f"condition failure: {exc.quantity} measured {exc.measured} below floor {exc.floor}", err=True)
        sys.exit(3)
    msg = f"recovered {rep.count} components"
    if rep.covered_fraction is not None:
        msg += f", covered {rep.covered_fraction:.3f}, signed Hausdorff {rep.signed_hausdorff:.3e}"
    click.echo(msg)


def _trial_seed(seed: int, *key: int) -> int:
    return int(np.random.SeedSequence([seed, *key]).generate_state(1)[0])


def _kappa_row(ensemble: str, d: int, n: int, trial: int, seed: int) -> tuple:
    ens_id = ENSEMBLES.index(ensemble)
    a = gen_components(ensemble, d, n, _trial_seed(seed, ens_id, d, n, trial))
    return (ensemble, d, n, n / d**2, trial, kappa(a))


def _write_plot(path: Path, rows: list[tuple]) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    keys = sorted({(r[0], r[1]) for r in rows})
    for ens, d in keys:
        sel = [r for r in rows if r[0] == ens and r[1] == d]
        ratios = sorted({r[3] for r in sel})
        means = [np.mean([r[5] for r in sel if r[3] == x]) for x in ratios]
        ax.plot(ratios, means, marker="o", label=f"{ens}, d={d}")
    ax.set_xlabel("n / d²")
    ax.set_ylabel("mean κ")
    ax.legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


@main.command("kappa")
@click.option("--ensemble", "ensembles", type=click.Choice(ENSEMBLES), multiple=True, default=("spherical",), show_default=True)
@click.option("--d-list", type=str, default="10", show_default=True)
@click.option("--nratio-list", type=str, default="0.2,0.4,0.6,0.8,1.0", show_default=True)
@click.option("--trials", type=int, default=10, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out", type=click.Path(file_okay=False, path_type=Path), required=True)
@click.option("--plot/--no-plot", default=False, help="Also write kappa.svg.")
def cmd_kappa(ensembles, d_list, nratio_list, trials, seed, out, plot):
    """Sweep kappa over ensembles, dimensions and n/d^2; write kappa.csv into OUT."""
    ds = _int_list(d_list)
    ratios = _float_list(nratio_list)
    if trials < 1:
        raise click.UsageError("trials must be ≥ 1")
    if any(d < 2 for d in ds):
        raise click.UsageError("d must be ≥ 2")
    if any(r <= 0 for r in ratios):
        raise click.UsageError("ratios must be positive")
    _ensure_dir(out)
    inputs = {"ensembles": list(ensembles), "d_list": ds, "nratio_list": ratios, "trials": trials, "seed": seed}
    with _manifest(out / "manifest.json", "kappa", inputs) as manifest:
        jobs = [
            (ens, d, max(1, round(r * d * d)), trial)
            for ens in ensembles
            for d in ds
            for r in ratios
            for trial in range(trials)
        ]
        with ThreadPoolExecutor(max_workers=thread_count()) as pool:
            rows = list(pool.map(lambda job: _kappa_row(*job, seed), jobs))
        with open(out / "kappa.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["ensemble", "d", "n", "n_over_d2", "trial", "kappa"])
            for r in rows:
                w.writerow([r[0], r[1], r[2], repr(r[3]), r[4], repr(r[5])])
        manifest["outputs"] = ["kappa.csv"]
        if plot:
            _write_plot(out / "kappa.svg", rows)
            manifest["outputs"].append("kappa.svg")
    for ens in ensembles:
        for d in ds:
            means = [np.mean([r[5] for r in rows if r[0] == ens and r[1] == d and r[2] == max(1, round(x * d * d))]) for x in ratios]
            click.echo(f"{ens} d={d}: " + " ".join(f"{x:g}:{m:.3f}" for x, m in zip(ratios, means)))


def log_log_slope(xs, ys) -> float:
    """Least-squares slope of log(ys) against log(xs)."""
    lx, ly = np.log(np.asarray(xs, float)), np.log(np.asarray(ys, float))
    return float(np.polyfit(lx, ly, 1)[0])


def _bench_one(d: int, n: int, seed: int, repetitions: int | None) -> dict:
    a = gen_components("spherical", d, n, seed)
    t = build_tensor(a)
    row = {"d": d, "n": n, "status": "ok"}
    try:
        rep = decompose(t, DecomposeParams(n=n, seed=seed, repetitions=repetitions), truth=a)
    except ConditionFailure as exc:
        nan = float("nan")
        return dict(row, status=f"condition_failure:{exc.quantity}", lift=nan, truncate=nan, round=nan,
                    recovered=0, covered_fraction=nan)
    row.update(rep.timings)
    row.update(recovered=rep.count, covered_fraction=rep.covered_fraction)
    return row


@main.command("bench")
@click.option("--d-list", type=str, default="8,12,16", show_default=True)
@click.option("--n-rule", type=float, default=0.25, show_default=True, help="n = round(ratio * d^2).")
@click.option("--n-list", type=str, default=None, help="Extra n values at the first d, for the round-vs-n slope.")
@click.option("--repetitions", type=int, default=None, help="Rounding repetitions (default scales with n).")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out", type=click.Path(file_okay=False, path_type=Path), required=True)
def cmd_bench(d_list, n_rule, n_list, repetitions, seed, out):
    """Time the lift and rounding stages; write bench.csv into OUT."""
    ds = _int_list(d_list)
    ns = _int_list(n_list) if n_list else []
    if any(d < 2 for d in ds):
        raise click.UsageError("d must be ≥ 2")
    if n_rule <= 0:
        raise click.UsageError("n-rule must be positive")
    if any(n < 1 for n in ns):
        raise click.UsageError("n values must be ≥ 1")
    _ensure_dir(out)
    inputs = {"d_list": ds, "n_rule": n_rule, "n_list": ns, "repetitions": repetitions, "seed": seed}
    with _manifest(out / "manifest.json", "bench", inputs) as manifest:
        rows = [dict(_bench_one(d, max(1, round(n_rule * d * d)), seed, repetitions), sweep="d") for d in ds]
        rows += [dict(_bench_one(ds[0], n, seed, repetitions), sweep="n") for n in ns]
        fields = ["sweep", "d", "n", "status", "lift", "truncate", "round", "recovered", "covered_fraction"]
        with open(out / "bench.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=fields)
            w.writeheader()
            w.writerows(rows)
        d_rows = [r for r in rows if r["sweep"] == "d" and r["status"] == "ok"]
        slopes = {}
        if len(d_rows) >= 2:
            slopes["lift_vs_d"] = log_log_slope([r["d"] for r in d_rows], [r["lift"] for r in d_rows])
            slopes["total_vs_d"] = log_log_slope([r["d"] for r in d_rows], [r["lift"] + r["round"] for r in d_rows])
        n_rows = [r for r in rows if r["sweep"] == "n" and r["status"] == "ok"]
        if len(n_rows) >= 2:
            slopes["round_vs_n"] = log_log_slope([r["n"] for r in n_rows], [r["round"] for r in n_rows])
        manifest["slopes"] = slopes
        manifest["outputs"] = ["bench.csv"]
    for r in rows:
        click.echo(f"{r['sweep']} d={r['d']} n={r['n']}: lift {r['lift']:.3f}s round {r['round']:.3f}s")
    for k, v in slopes.items():
        click.echo(f"slope {k}: {v:.2f}")


@main.command("selftest")
@click.option("--inject-fault", type=click.Choice(["pi_sym"]), default=None, help="Corrupt a kernel to check the suite notices.")
def cmd_selftest(inject_fault):
    """Run the oracle and invariant checks; exit 0 iff all pass."""
    from contextlib import nullcontext

    from . import selftest
    from .symmetry import inject_fault as fault

    with fault(inject_fault) if inject_fault else nullcontext():
        results = selftest.run_all(click.echo)
    failed = [name for name, ok, _, _ in results if not ok]
    if failed:
        click.echo(f"FAILED: {', '.join(failed)}")
        sys.exit(1)
    click.echo(f"all {len(results)} checks passed")


if __name__ == "__main__":
    main()
