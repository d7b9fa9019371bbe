"""Abstract linear + rotated-second-order-cone program with an addressable
variable registry.

The program is a plain data container: continuous variables with optional
bounds, binary-marked variables, linear equalities/inequalities kept as COO
triplets, rotated cones ||u||^2 <= w*t with affine u, w, t, and a linear
objective. Solving lives in :mod:`essplan.solve`; builders in
:mod:`essplan.models` only append to this structure.

Affine expressions are (indices, coefficients, constant) triples; the helper
:func:`aff` builds them from (index, coef) pairs. Rows can be named so that
their right-hand sides can be patched between solves (Benders pins, the
losses-realization offset) and their duals looked up by name.
"""

from __future__ import annotations

import numpy as np

__all__ = ["aff", "AffExpr", "ConicProgram", "VarRegistry", "ProgramError"]


class ProgramError(ValueError):
    pass


AffExpr = tuple[list[int], list[float], float]


def aff(pairs, const: float = 0.0) -> AffExpr:
    """Affine expression sum(coef * x[idx]) + const from (idx, coef) pairs."""
    idx = [p[0] for p in pairs]
    coef = [float(p[1]) for p in pairs]
    return (idx, coef, float(const))


class ConicProgram:
    def __init__(self) -> None:
        self.n_vars = 0
        self.lb: list[float | None] = []
        self.ub: list[float | None] = []
        self.binaries: list[int] = []
        # linear rows, COO per sense
        self._eq_rows: list[AffExpr] = []  # expr == 0 encoded as (idx, coef, -rhs)
        self._le_rows: list[AffExpr] = []  # expr <= 0 encoded likewise
        self.eq_rhs: list[float] = []
        self.le_rhs: list[float] = []
        self.cones: list[tuple[list[AffExpr], AffExpr, AffExpr]] = []  # (u, w, t)
        self.obj_idx: list[int] = []
        self.obj_coef: list[float] = []
        self.obj_const = 0.0
        self.row_names: dict[str, tuple[str, int]] = {}  # name -> ("eq"|"le", position)

    # -------------------------------------------------------------- variables

    def add_var(self, lb: float | None = None, ub: float | None = None,
                binary: bool = False) -> int:
        idx = self.n_vars
        self.n_vars += 1
        self.lb.append(lb)
        self.ub.append(ub)
        if binary:
            self.binaries.append(idx)
        return idx

    # ------------------------------------------------------------ constraints

    def add_eq(self, idx, coef, rhs: float, name: str | None = None) -> None:
        self._register(name, "eq", len(self._eq_rows))
        self._eq_rows.append((list(idx), [float(c) for c in coef], 0.0))
        self.eq_rhs.append(float(rhs))

    def add_le(self, idx, coef, rhs: float, name: str | None = None) -> None:
        """sum(coef * x) <= rhs"""
        self._register(name, "le", len(self._le_rows))
        self._le_rows.append((list(idx), [float(c) for c in coef], 0.0))
        self.le_rhs.append(float(rhs))

    def add_rotated_cone(self, u: list[AffExpr], w: AffExpr, t: AffExpr) -> None:
        """||u||^2 <= w * t with w, t affine and nonnegative at any feasible point."""
        self.cones.append((list(u), w, t))

    def _register(self, name: str | None, kind: str, pos: int) -> None:
        if name is None:
            return
        if name in self.row_names:
            raise ProgramError(f"duplicate row name {name!r}")
        self.row_names[name] = (kind, pos)

    def set_rhs(self, name: str, value: float) -> None:
        kind, pos = self.row_names[name]
        if kind == "eq":
            self.eq_rhs[pos] = float(value)
        else:
            self.le_rhs[pos] = float(value)

    def get_rhs(self, name: str) -> float:
        kind, pos = self.row_names[name]
        return self.eq_rhs[pos] if kind == "eq" else self.le_rhs[pos]

    # --------------------------------------------------------------- objective

    def add_objective(self, idx, coef) -> None:
        self.obj_idx.extend(idx)
        self.obj_coef.extend(float(c) for c in coef)

    def objective_vector(self) -> np.ndarray:
        q = np.zeros(self.n_vars)
        np.add.at(q, self.obj_idx, self.obj_coef)
        return q

    # ------------------------------------------------------------------- dump

    def dump(self, fh, var_names: dict[int, str] | None = None) -> None:
        """Plain-text listing of the whole program for cross-solver auditing."""
        def vn(i: int) -> str:
            return var_names[i] if var_names and i in var_names else f"x{i}"

        def render(idx, coef, const=0.0) -> str:
            parts = [f"{c:+g} {vn(i)}" for i, c in zip(idx, coef)]
            if const:
                parts.append(f"{const:+g}")
            return " ".join(parts) if parts else "0"

        fh.write(f"vars {self.n_vars} binaries {len(self.binaries)}\n")
        fh.write("minimize " + render(self.obj_idx, self.obj_coef, self.obj_const) + "\n")
        names_by_row = {(k, p): n for n, (k, p) in self.row_names.items()}
        for i, (row, rhs) in enumerate(zip(self._eq_rows, self.eq_rhs)):
            tag = names_by_row.get(("eq", i), f"eq{i}")
            fh.write(f"{tag}: {render(row[0], row[1])} == {rhs:g}\n")
        for i, (row, rhs) in enumerate(zip(self._le_rows, self.le_rhs)):
            tag = names_by_row.get(("le", i), f"le{i}")
            fh.write(f"{tag}: {render(row[0], row[1])} <= {rhs:g}\n")
        for i, (u, w, t) in enumerate(self.cones):
            us = " ; ".join(render(*e) for e in u)
            fh.write(f"cone{i}: ||{us}||^2 <= ({render(*w)}) * ({render(*t)})\n")
        for i, (lo, hi) in enumerate(zip(self.lb, self.ub)):
            if lo is not None or hi is not None:
                fh.write(f"bound: {lo if lo is not None else '-inf'} <= {vn(i)}"
                         f" <= {hi if hi is not None else 'inf'}\n")
        for i in self.binaries:
            fh.write(f"binary: {vn(i)}\n")


class VarRegistry:
    """Addressable handles for every modeled symbol, keyed by (symbol, *indices).

    One handle per key; lookups over unknown keys raise, so a built model's
    symbol table is total by construction. ``values`` pulls a solution slice
    back out by symbol.
    """

    def __init__(self, program: ConicProgram) -> None:
        self.program = program
        self._handles: dict[tuple, int] = {}
        self._names: dict[int, str] = {}

    def new(self, symbol: str, *key, lb: float | None = None, ub: float | None = None,
            binary: bool = False) -> int:
        full = (symbol, *key)
        if full in self._handles:
            raise ProgramError(f"duplicate registry entry {full}")
        idx = self.program.add_var(lb=lb, ub=ub, binary=binary)
        self._handles[full] = idx
        self._names[idx] = symbol + "[" + ",".join(str(k) for k in key) + "]" if key else symbol
        return idx

    def idx(self, symbol: str, *key) -> int:
        try:
            return self._handles[(symbol, *key)]
        except KeyError:
            raise ProgramError(f"unknown registry entry {(symbol, *key)}") from None

    def has(self, symbol: str, *key) -> bool:
        return (symbol, *key) in self._handles

    def keys(self, symbol: str):
        return [k[1:] for k in self._handles if k[0] == symbol]

    def value(self, x: np.ndarray, symbol: str, *key) -> float:
        return float(x[self.idx(symbol, *key)])

    @property
    def names(self) -> dict[int, str]:
        return self._names
