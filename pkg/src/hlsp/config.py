"""Solver configuration shared by the Newton core and the cascade driver."""

from __future__ import annotations

from dataclasses import dataclass

METHODS = ("nf-ipm", "ls-ipm", "nf-ipm-asm", "ls-ipm-asm", "classical")
LS_SWITCH_VARIANTS = ("2nr", "nr")


@dataclass
class SolverConfig:
    method: str = "nf-ipm"
    eps: float = 1e-12
    xi: float = 1e-8
    max_iter: int = 50
    tau: float = 0.995
    density_threshold: float = 0.4
    rank_tol: float = 1e-10
    solve_tol: float = 1e-15
    ls_switch: str = "2nr"
    asm_max_iter: int = 200
    warm_start_x: object = None
    warm_active_sets: object = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {METHODS}")
        if self.ls_switch not in LS_SWITCH_VARIANTS:
            raise ValueError(
                f"unknown ls-switch variant {self.ls_switch!r}; "
                f"choose from {LS_SWITCH_VARIANTS}"
            )

    @property
    def step_form(self):
        if self.method in ("nf-ipm", "nf-ipm-asm"):
            return "normal"
        if self.method in ("ls-ipm", "ls-ipm-asm"):
            return "ls"
        return "classical"

    @property
    def uses_asm(self):
        return self.method in ("nf-ipm-asm", "ls-ipm-asm")

    def to_dict(self):
        return {
            "method": self.method,
            "eps": self.eps,
            "xi": self.xi,
            "max_iter": self.max_iter,
            "tau": self.tau,
            "density_threshold": self.density_threshold,
            "rank_tol": self.rank_tol,
            "solve_tol": self.solve_tol,
            "ls_switch": self.ls_switch,
            "asm_max_iter": self.asm_max_iter,
        }
