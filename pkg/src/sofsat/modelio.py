"""JSON model files, report serialization, and delimited trajectory output.

Model files hold the structural data of a feedback design problem: the affine
coefficient blocks, the output map, saturation levels, the state and
uncertainty polytopes, and optionally the annihilator pair and a monomial
reference map for the algebraic variables. Affine blocks are written either as
a bare matrix (constant) or as {"const": M, "x": [M1, ...], "delta": [...]}.

Report files are JSON with a timestamp as the first key on its own line;
everything below it is a deterministic function of the inputs, so reruns can
be compared byte-for-byte after dropping that line. Wall-clock timings are
deliberately not recorded.
"""

from __future__ import annotations

import json

import numpy as np

from .affine import AffineMatrix, BoxPolytope, ExplicitPolytope
from .model import DarModel
from .synthesis import Certificate, ellipsoid_metrics

__all__ = [
    "ModelFormatError",
    "load_model",
    "save_model",
    "model_to_dict",
    "model_from_dict",
    "certificate_to_dict",
    "certificate_from_dict",
    "synthesis_to_dict",
    "verification_to_dict",
    "write_json_report",
    "read_json",
    "write_trajectory_csv",
]


class ModelFormatError(ValueError):
    """A model or report file does not match the documented layout."""


def _matrix(obj, where):
    try:
        M = np.array(obj, dtype=float)
    except (TypeError, ValueError):
        raise ModelFormatError(f"{where}: expected a numeric matrix") from None
    if M.ndim != 2:
        raise ModelFormatError(f"{where}: expected a 2-d matrix, got shape {M.shape}")
    return M


def _affine_from_obj(obj, where):
    if obj is None:
        return None
    if isinstance(obj, dict):
        extra = set(obj) - {"const", "x", "delta"}
        if extra:
            raise ModelFormatError(f"{where}: unknown keys {sorted(extra)}")
        if "const" not in obj:
            raise ModelFormatError(f"{where}: affine block needs a 'const' entry")
        const = _matrix(obj["const"], f"{where}.const")
        xc = [_matrix(M, f"{where}.x[{i}]") for i, M in enumerate(obj.get("x", []))]
        dc = [_matrix(M, f"{where}.delta[{j}]") for j, M in enumerate(obj.get("delta", []))]
        return AffineMatrix(const, xc, dc)
    return AffineMatrix(_matrix(obj, where))


def _affine_to_obj(A):
    if A is None:
        return None
    if A.is_constant():
        return A.const.tolist()
    out = {"const": A.const.tolist()}
    if any(np.any(M) for M in A.x_coeffs):
        out["x"] = [M.tolist() for M in A.x_coeffs]
    if any(np.any(M) for M in A.delta_coeffs):
        out["delta"] = [M.tolist() for M in A.delta_coeffs]
    return out


def _polytope_from_obj(obj, where):
    if obj is None:
        return None
    if not isinstance(obj, dict):
        raise ModelFormatError(f"{where}: expected an object with 'bounds' or "
                               f"'vertices'/'facets'")
    if "bounds" in obj:
        try:
            return BoxPolytope(np.asarray(obj["bounds"], dtype=float).ravel())
        except ValueError as exc:
            raise ModelFormatError(f"{where}.bounds: {exc}") from None
    if "vertices" in obj and "facets" in obj:
        try:
            return ExplicitPolytope(
                [np.asarray(v, dtype=float) for v in obj["vertices"]],
                [np.asarray(a, dtype=float) for a in obj["facets"]])
        except ValueError as exc:
            raise ModelFormatError(f"{where}: {exc}") from None
    raise ModelFormatError(f"{where}: needs either 'bounds' or both "
                           f"'vertices' and 'facets'")


def _polytope_to_obj(poly):
    if poly is None:
        return None
    if isinstance(poly, BoxPolytope):
        return {"bounds": np.asarray(poly.bounds).tolist()}
    return {"vertices": [np.asarray(v).tolist() for v in poly.vertices()],
            "facets": [np.asarray(a).tolist() for a in poly.facets()]}


_BLOCK_KEYS = ("A1", "A2", "A3", "Ups1", "Ups2", "Ups3")


def model_from_dict(data, name=""):
    if not isinstance(data, dict):
        raise ModelFormatError("model file must hold a JSON object")
    missing = [k for k in (*_BLOCK_KEYS, "C1", "C2", "u_bar", "X") if k not in data]
    if missing:
        raise ModelFormatError(f"model is missing required keys {missing}")
    kwargs = {k: _affine_from_obj(data[k], k) for k in _BLOCK_KEYS}
    sig1, sig2 = data.get("Sigma1"), data.get("Sigma2")
    oracle = data.get("pi_oracle")
    if oracle is not None and not all(isinstance(s, str) for s in oracle):
        raise ModelFormatError("pi_oracle: expected a list of monomial strings")
    try:
        return DarModel(
            C1=_matrix(data["C1"], "C1"), C2=_matrix(data["C2"], "C2"),
            u_bar=np.asarray(data["u_bar"], dtype=float).ravel(),
            X=_polytope_from_obj(data["X"], "X"),
            D=_polytope_from_obj(data.get("D"), "D"),
            Sigma1=_affine_from_obj(sig1, "Sigma1"),
            Sigma2=_affine_from_obj(sig2, "Sigma2"),
            pi_oracle=oracle,
            name=data.get("name", name),
            **kwargs)
    except ValueError as exc:
        raise ModelFormatError(str(exc)) from None


def model_to_dict(model):
    out = {"name": model.name}
    for k in _BLOCK_KEYS:
        out[k] = _affine_to_obj(getattr(model, k))
    out["C1"] = model.C1.tolist()
    out["C2"] = model.C2.tolist()
    out["u_bar"] = model.u_bar.tolist()
    out["X"] = _polytope_to_obj(model.X)
    if model.l:
        out["D"] = _polytope_to_obj(model.D)
    if model.Sigma1 is not None:
        out["Sigma1"] = _affine_to_obj(model.Sigma1)
        out["Sigma2"] = _affine_to_obj(model.Sigma2)
    if model.pi_oracle_exprs is not None:
        out["pi_oracle"] = list(model.pi_oracle_exprs)
    return out


def load_model(path):
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ModelFormatError(f"cannot read {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path} is not valid JSON: {exc}") from None
    return model_from_dict(data)


def save_model(model, path):
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh, indent=2)
        fh.write("\n")


def certificate_to_dict(cert):
    out = {
        "P": cert.P.tolist(), "N": cert.N.tolist(), "Q": cert.Q.tolist(),
        "S": cert.S.tolist(), "R": cert.R.tolist(), "W": cert.W.tolist(),
        "Gbar": {"const": cert.Gbar.const.tolist(),
                 "x": [M.tolist() for M in cert.Gbar.x_coeffs],
                 "delta": [M.tolist() for M in cert.Gbar.delta_coeffs]},
        "K": cert.K.tolist(),
    }
    out["mult"] = cert.mult.tolist() if cert.mult is not None else None
    out["Z"] = cert.Z.tolist() if cert.Z is not None else None
    if cert.Gpi is not None:
        out["Gpi"] = {"const": cert.Gpi.const.tolist(),
                      "x": [M.tolist() for M in cert.Gpi.x_coeffs],
                      "delta": [M.tolist() for M in cert.Gpi.delta_coeffs]}
    else:
        out["Gpi"] = None
    out["lam"] = cert.lam
    return out


def certificate_from_dict(data, where="certificate"):
    if not isinstance(data, dict):
        raise ModelFormatError(f"{where}: expected an object")
    try:
        gbar = _affine_from_obj(data["Gbar"], f"{where}.Gbar")
        gpi = _affine_from_obj(data.get("Gpi"), f"{where}.Gpi")
        mult = data.get("mult")
        Z = data.get("Z")
        lam = data.get("lam")
        return Certificate(
            P=_matrix(data["P"], f"{where}.P"),
            N=_matrix(data["N"], f"{where}.N"),
            Q=_matrix(data["Q"], f"{where}.Q"),
            S=_matrix(data["S"], f"{where}.S"),
            R=_matrix(data["R"], f"{where}.R"),
            W=_matrix(data["W"], f"{where}.W"),
            Gbar=gbar,
            mult=None if mult is None else _matrix(mult, f"{where}.mult"),
            Z=None if Z is None else _matrix(Z, f"{where}.Z"),
            Gpi=gpi,
            lam=None if lam is None else float(lam))
    except KeyError as exc:
        raise ModelFormatError(f"{where} is missing key {exc}") from None


def synthesis_to_dict(result):
    """Report payload for a synthesis result. No wall-clock data."""
    out = {
        "status": result.status,
        "exit_reason": result.exit_reason,
        "model": result.model.name,
        "lambda_history": list(result.lambda_history),
        "trace_history": list(result.trace_history),
        "design_iterations": result.design_iterations,
        "maximize_iterations": result.maximize_iterations,
    }
    if result.schur is not None:
        out["schur"] = {"max_eig": result.schur.max_eig, "tol": result.schur.tol,
                        "passed": result.schur.passed}
    if result.certificate is not None:
        out["K"] = result.K.tolist()
        out["certificate"] = certificate_to_dict(result.certificate)
        met = ellipsoid_metrics(result.certificate.P)
        out["metrics"] = {
            "semi_axes": list(met.semi_axes), "max_radius": met.max_radius,
            "min_radius": met.min_radius, "trace": met.trace,
            "log_det_p_inv": met.log_det_p_inv, "volume": met.volume}
    if result.verification is not None:
        out["solution_margins"] = {
            "passed": result.verification.passed,
            "worst_name": result.verification.worst_name,
            "worst_margin": result.verification.worst_margin,
            "margins": [{"name": m.name, "margin": m.margin, "ok": m.ok}
                        for m in result.verification.margins]}
    out["iterations"] = [
        {"phase": rec.phase, "index": rec.index, "status": rec.status,
         "objective": rec.objective, "solver": rec.solver,
         "solver_status": rec.solver_status}
        for rec in result.iteration_log]
    return out


def verification_to_dict(report):
    out = {
        "passed": report.passed,
        "checks": [{"name": c.name, "passed": c.passed, "worst": c.worst,
                    "tol": c.tol, "count": c.count, "note": c.note}
                   for c in report.checks],
        "schur": {"max_eig": report.schur.max_eig, "tol": report.schur.tol,
                  "passed": report.schur.passed},
        "metrics": {
            "semi_axes": list(report.metrics.semi_axes),
            "max_radius": report.metrics.max_radius,
            "min_radius": report.metrics.min_radius,
            "trace": report.metrics.trace,
            "volume": report.metrics.volume},
    }
    if report.roa is not None:
        out["roa"] = {
            "passed": report.roa.passed,
            "t_final": report.roa.t_final, "step": report.roa.step,
            "conv_tol": report.roa.conv_tol, "level_tol": report.roa.level_tol,
            "generators": [
                {"generator": r.generator, "n_traj": r.n_traj,
                 "converged": r.converged, "diverged": r.diverged,
                 "max_final_norm": r.max_final_norm, "max_level": r.max_level}
                for r in report.roa.results]}
    return out


def write_json_report(payload, path, timestamp=None):
    """Write a report with the timestamp isolated on the first body line."""
    import datetime

    if timestamp is None:
        timestamp = datetime.datetime.now(datetime.timezone.utc).isoformat()
    body = {"timestamp": timestamp}
    body.update(payload)
    with open(path, "w") as fh:
        json.dump(body, fh, indent=2)
        fh.write("\n")


def read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise ModelFormatError(f"cannot read {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path} is not valid JSON: {exc}") from None


def write_trajectory_csv(traj, model, path):
    """Delimited per-sample record of one simulated trajectory."""
    cols = [traj.t[:, None], traj.x, traj.y, traj.v, traj.u,
            traj.sat_active.astype(float)]
    header = (["t"]
              + [f"x{i + 1}" for i in range(model.n)]
              + [f"y{i + 1}" for i in range(model.p)]
              + [f"v{i + 1}" for i in range(model.m)]
              + [f"u{i + 1}" for i in range(model.m)]
              + [f"sat{i + 1}" for i in range(model.m)])
    data = np.hstack(cols)
    np.savetxt(path, data, fmt="%.17g", delimiter=",",
               header=",".join(header), comments="")
