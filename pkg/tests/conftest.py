import numpy as np
import pytest

from hlsp.cascade import NullSpaceChain
from hlsp.config import SolverConfig
from hlsp.factorization import rrqr
from hlsp.newton import Counters, IterateState, LevelContext


def build_random_level(
    seed,
    n=6,
    m_eq=2,
    m_ineq=2,
    m_inact=2,
    m_prior=2,
    prior_stages=1,
    config=None,
):
    """Random mid-solve snapshot of one level with valid sign conditions.

    Prior levels are materialized as chain stages so the active stack, the
    null-space basis and the dual recursion are all real. The primal is
    placed on the active constraints so the augmented system's secondary
    right-hand side vanishes, as the cascade maintains it.
    """
    rng = np.random.default_rng(seed)
    config = config or SolverConfig()
    chain = NullSpaceChain(n)
    for _ in range(prior_stages if m_prior else 0):
        rows = rng.uniform(-1, 1, (m_prior, n))
        rhs = rng.uniform(-1, 1, m_prior)
        v_star = rng.uniform(-0.5, 0.0, m_prior)
        fact = rrqr(rows @ chain.basis, tol=config.rank_tol)
        chain.extend("real", 1, rows, rhs, v_star, fact)
    a_act, b_act, v_act = chain.active_stack()

    if a_act.shape[0]:
        x = np.linalg.lstsq(a_act, b_act + v_act, rcond=None)[0]
    else:
        x = rng.uniform(-1, 1, n)

    a_eq = rng.uniform(-1, 1, (m_eq, n))
    b_eq = rng.uniform(-1, 1, m_eq)
    a_ineq = rng.uniform(-1, 1, (m_ineq, n))
    b_ineq = rng.uniform(-1, 1, m_ineq)
    a_inact = rng.uniform(-1, 1, (m_inact, n))
    b_inact = rng.uniform(-1, 1, m_inact)

    counters = Counters()
    basis = chain.basis
    ctx = LevelContext(
        n=n,
        n_r=basis.shape[1],
        basis=basis,
        a_eq=a_eq,
        b_eq=b_eq,
        a_ineq=a_ineq,
        b_ineq=b_ineq,
        a_act=a_act,
        b_act=b_act,
        v_act=v_act,
        a_inact=a_inact,
        b_inact=b_inact,
        proj_eq=a_eq @ basis,
        proj_ineq=a_ineq @ basis,
        proj_inact=a_inact @ basis,
        stage1=rrqr(a_eq @ basis, tol=config.rank_tol),
        chain=chain,
        counters=counters,
        config=config,
    )
    s = IterateState(
        x=x,
        v_eq=a_eq @ x - b_eq,
        v_ineq=-rng.uniform(0.2, 1.5, m_ineq),
        w_ineq=rng.uniform(0.2, 1.5, m_ineq),
        w_inact=rng.uniform(0.2, 1.5, m_inact),
        lam_inact=rng.uniform(0.2, 1.5, m_inact),
        lam_act=np.zeros(a_act.shape[0]),
    )
    return ctx, s


@pytest.fixture
def level_state():
    return build_random_level
