"""Constraint generators that replace policy products by auxiliary polynomials.

Every generator takes ``h`` and the product coefficient ``a`` either as
numeric polynomials (policy update) or as decision-affine ones (barrier
update).  Multipliers come from a :class:`MultiplierSource`, which creates
fresh unknowns in the first case and hands back the stored values in the
second, so both steps emit the same constraint shapes.
"""

from __future__ import annotations

from collections.abc import Sequence

from .. import poly as P
from ..poly import MultiIndex, Polynomial
from ..sosir import SosProgram
from .model import Degrees


class MultiplierSource:
    def __init__(self, prog: SosProgram, vars_: Sequence[int], fixed: dict[str, Polynomial] | None = None):
        self.prog = prog
        self.vars = list(vars_)
        self.fixed = fixed
        self.created: dict[str, object] = {}

    def sos(self, key: str, degree: int):
        if self.fixed is not None:
            return self.fixed[key]
        p = self.prog.sos_multiplier(self.vars, degree, key)
        self.created[key] = p
        return p

    def aux(self, key: str, degree: int):
        """Auxiliary product polynomial; fixed once a policy update has run.

        With ``h`` unknown the term ``a(h) * aux`` would be bilinear.
        """
        if self.fixed is not None:
            return self.fixed[key]
        p = self.prog.declare_free_poly(P.monomials_up_to(self.vars, degree), key)
        self.created[key] = p
        return p

    def free(self, key: str, degree: int):
        """Slack polynomials that are re-solved in every program."""
        p = self.prog.declare_free_poly(P.monomials_up_to(self.vars, degree), key)
        self.created[key] = p
        return p


def alpha_label(alpha: MultiIndex) -> str:
    return "".join(str(i + 1) * e for i, e in enumerate(alpha))


def alpha_indices(alpha: MultiIndex) -> list[int]:
    """Input indices of ``pi^alpha`` in non-decreasing order."""
    return [i for i, e in enumerate(alpha) for _ in range(e)]


def prop_square(prog, src: MultiplierSource, tag: str, p, pt, h, a, deg: Degrees, sign_side: bool = True) -> None:
    """``a * (p^2 - pt) >= 0`` on ``h >= 0``."""
    s1 = src.sos(f"sigma1[{tag}]", deg.sigma)
    s2 = src.sos(f"sigma2[{tag}]", deg.sigma)
    prog.add_matrix_sos([[1.0, p], [p, pt - s1 * h + s2 * a]], f"sq[{tag}]")
    if sign_side:
        s3 = src.sos(f"sigma3[{tag}]", deg.sigma)
        s4 = src.sos(f"sigma4[{tag}]", deg.sigma)
        prog.add_scalar_sos(-pt - s3 * h - s4 * a, f"sq-sign[{tag}]")


def prop_upper(prog, src: MultiplierSource, tag: str, p, q, pt, h, a, deg: Degrees, theta_deg: int) -> None:
    """``pt >= p*q`` wherever ``h >= 0`` and ``a <= 0``."""
    t1 = src.free(f"Theta1[{tag}]", theta_deg)
    t2 = src.free(f"Theta2[{tag}]", theta_deg)
    t3 = src.free(f"Theta3[{tag}]", theta_deg)
    xi = [src.sos(f"xi{k}[{tag}]", deg.xi_prop) for k in range(1, 9)]
    prog.add_matrix_sos([[1.0, p], [p, t1 - xi[0] * h + xi[1] * a]], f"up1[{tag}]")
    prog.add_matrix_sos([[1.0, q], [q, t2 - xi[2] * h + xi[3] * a]], f"up2[{tag}]")
    prog.add_scalar_sos(t3 - xi[4] * h + xi[5] * a, f"up3[{tag}]")
    prog.add_scalar_sos(2.0 * pt - (t1 + t2 + t3) - xi[6] * h + xi[7] * a, f"up4[{tag}]")


def prop_lower(prog, src: MultiplierSource, tag: str, p, q, pt, h, a, deg: Degrees, theta_deg: int) -> None:
    """``pt <= p*q`` wherever ``h >= 0`` and ``a >= 0``."""
    d1 = src.free(f"Delta1[{tag}]", theta_deg)
    d2 = src.free(f"Delta2[{tag}]", theta_deg)
    d3 = src.free(f"Delta3[{tag}]", theta_deg)
    eta = [src.sos(f"eta{k}[{tag}]", deg.eta) for k in range(1, 9)]
    prog.add_matrix_sos([[1.0, p], [p, d1 - eta[0] * h - eta[1] * a]], f"lo1[{tag}]")
    prog.add_matrix_sos([[1.0, q], [q, d2 - eta[2] * h - eta[3] * a]], f"lo2[{tag}]")
    prog.add_scalar_sos(-d3 - eta[4] * h - eta[5] * a, f"lo3[{tag}]")
    prog.add_scalar_sos((d3 - d1 - d2) - 2.0 * pt - eta[6] * h - eta[7] * a, f"lo4[{tag}]")


def quadratic_term(prog, src: MultiplierSource, alpha: MultiIndex, pi: Sequence, h, a, deg: Degrees, pt_deg: int, theta_deg: int):
    """Auxiliary for a degree-two product and its sandwich constraints."""
    i, j = alpha_indices(alpha)
    tag = alpha_label(alpha)
    pt = src.aux(f"pi~[{tag}]", pt_deg)
    if i == j:
        prop_square(prog, src, tag, pi[i], pt, h, a, deg)
    else:
        prop_upper(prog, src, tag, pi[i], pi[j], pt, h, a, deg, theta_deg)
        prop_lower(prog, src, tag, pi[i], pi[j], pt, h, a, deg, theta_deg)
    return pt


def chain_keys(alpha: MultiIndex) -> list[str]:
    """Keys of the nested auxiliaries for ``mu^alpha``, innermost first."""
    idx = alpha_indices(alpha)
    tag = alpha_label(alpha)
    return [f"mu~[{tag}:{''.join(str(k + 1) for k in idx[: t + 1])}]" for t in range(1, len(idx))]


def cascade_term(prog, src: MultiplierSource, alpha: MultiIndex, mu: Sequence, h, a, deg: Degrees, cfg):
    """Auxiliary for ``mu^alpha`` with ``|alpha| >= 3`` built by left-heavy pairing.

    Requires ``mu >= 0`` on the current superlevel set.  Each node ``P_t``
    dominates ``P_{t-1} * mu_k`` where ``a <= 0``; the last node is forced
    non-positive where ``a >= 0``.
    """
    idx = alpha_indices(alpha)
    tag = alpha_label(alpha)
    keys = chain_keys(alpha)
    prev = mu[idx[0]]
    prev_deg = cfg.pi_degree
    node = prev
    for t in range(1, len(idx)):
        # P_t >= (P_{t-1}^2 + mu^2) / 2, so the degree doubles per level
        node_deg = cfg.degrees.mu_tilde if cfg.degrees.mu_tilde is not None else 2 * prev_deg
        node = src.aux(keys[t - 1], node_deg)
        ntag = f"{tag}:{t}"
        if t == 1 and idx[0] == idx[1]:
            prop_square(prog, src, ntag, mu[idx[0]], node, h, a, deg, sign_side=False)
        else:
            prop_upper(prog, src, ntag, prev, mu[idx[t]], node, h, a, deg, node_deg)
        prev, prev_deg = node, node_deg
    s1 = src.sos(f"sigma~1[{tag}]", deg.sigma_tilde)
    s2 = src.sos(f"sigma~2[{tag}]", deg.sigma_tilde)
    prog.add_scalar_sos(-node - s1 * h - s2 * a, f"cascade-sign[{tag}]")
    return node


def relaxed_successor(prog, src: MultiplierSource, exp: P.PolicyExpansion, pi: Sequence, h, active: Sequence[MultiIndex], cfg):
    """``h(f + g pi)`` with every product ``pi^alpha`` replaced by an auxiliary."""
    out = P.as_param(exp.c)
    for i, bi in enumerate(exp.b):
        out = out + bi * pi[i]
    for alpha in active:
        a = exp.a.get(alpha, Polynomial())
        if sum(alpha) == 2:
            aux = quadratic_term(prog, src, alpha, pi, h, a, cfg.degrees, cfg.pi_tilde_degree(), cfg.theta_degree())
        else:
            aux = cascade_term(prog, src, alpha, pi, h, a, cfg.degrees, cfg)
        out = out + a * aux
    return out


def aux_key(alpha: MultiIndex) -> str:
    """Key of the polynomial that stands in for ``pi^alpha`` in the successor."""
    if sum(alpha) == 2:
        return f"pi~[{alpha_label(alpha)}]"
    return chain_keys(alpha)[-1]
