"""JSON (schema ``v1``) and text serialization of synthesized controllers.

Text form::

    memory: 2
    successor: 2 2
    actions: a1 a2
    observations: z1
    GAMMA: 1 : z1 0.5 0.5
    GAMMA: 2 : z1 1 0

Memory states are 1-based in text.
"""

from __future__ import annotations

import json
import math

import numpy as np

from ..pmc import FscStructure, Instantiation
from ..pomdp_io import ParseError, _fmt
from .ccp import SynthesisResult

SCHEMA = "v1"


def format_gamma(u: Instantiation, successor, actions, observations) -> str:
    g = np.asarray(u.gamma)
    k, Z, A = g.shape
    if len(actions) != A or len(observations) != Z or len(successor) != k:
        raise ValueError("controller shape does not match the given ids")
    lines = [
        f"memory: {k}",
        "successor: " + " ".join(str(q + 1) for q in successor),
        "actions: " + " ".join(actions),
        "observations: " + " ".join(observations),
    ]
    for q in range(k):
        for z, zn in enumerate(observations):
            lines.append(f"GAMMA: {q + 1} : {zn} " + " ".join(_fmt(p) for p in g[q, z]))
    return "\n".join(lines) + "\n"


def parse_gamma(text: str):
    """Inverse of :func:`format_gamma`: ``(Instantiation, FscStructure, actions, observations)``."""
    header = {}
    rows = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, rest = line.partition(":")
        if not sep:
            raise ParseError("expected 'keyword:'", lineno, 1, ("memory", "GAMMA"))
        key = key.strip()
        if key in ("memory", "successor", "actions", "observations"):
            header[key] = rest.split()
        elif key == "GAMMA":
            if len(header) < 4:
                raise ParseError("GAMMA row before the header", lineno, 1)
            q_tok, sep2, rest2 = rest.partition(":")
            toks = rest2.split()
            if not sep2 or len(toks) != len(header["actions"]) + 1:
                raise ParseError("malformed GAMMA row", lineno, 1)
            try:
                q = int(q_tok) - 1
                probs = [float(t) for t in toks[1:]]
            except ValueError:
                raise ParseError("bad number in GAMMA row", lineno, 1) from None
            if toks[0] not in header["observations"]:
                raise ParseError(f"unknown observation {toks[0]!r}", lineno, 1,
                                 header["observations"])
            rows[(q, header["observations"].index(toks[0]))] = probs
        else:
            raise ParseError(f"unknown keyword {key!r}", lineno, 1,
                             ("memory", "successor", "actions", "observations", "GAMMA"))
    k = int(header["memory"][0])
    Z, A = len(header["observations"]), len(header["actions"])
    g = np.zeros((k, Z, A))
    for q in range(k):
        for z in range(Z):
            if (q, z) not in rows:
                raise ParseError(f"missing GAMMA row for memory {q + 1}, observation "
                                 f"{header['observations'][z]}", len(text.splitlines()), 1)
            g[q, z] = rows[(q, z)]
    structure = FscStructure(k, tuple(int(t) - 1 for t in header["successor"]))
    return Instantiation(g), structure, tuple(header["actions"]), tuple(header["observations"])


def _num(x):
    x = float(x)
    return x if math.isfinite(x) else None


def result_to_dict(res: SynthesisResult, actions, observations) -> dict:
    trace = [{k: (_num(v) if isinstance(v, float) else v) for k, v in row.items()}
             for row in res.trace]
    return {
        "schema": SCHEMA,
        "status": res.status,
        "feasible": bool(res.feasible),
        "entropy_bits": _num(res.entropy),
        "reward": _num(res.reward),
        "slack_sum": _num(res.slack_sum),
        "iterations": int(res.iterations),
        "gamma_threshold": _num(res.gamma_threshold),
        "beta": float(res.beta),
        "baseline": bool(res.baseline),
        "restart": int(res.restart),
        "memory": res.k,
        "successor": [q + 1 for q in res.successor],
        "actions": list(actions),
        "observations": list(observations),
        "gamma": np.asarray(res.instantiation.gamma).tolist(),
        "trace": trace,
    }


def result_to_json(res: SynthesisResult, actions, observations) -> str:
    return json.dumps(result_to_dict(res, actions, observations), indent=2, sort_keys=True) + "\n"


def controller_from_dict(d: dict):
    """``(Instantiation, FscStructure)`` from a ``v1`` result dict."""
    if d.get("schema") != SCHEMA:
        raise ValueError(f"unsupported controller schema {d.get('schema')!r}")
    g = np.asarray(d["gamma"], dtype=float)
    return Instantiation(g), FscStructure(int(d["memory"]), tuple(q - 1 for q in d["successor"]))
