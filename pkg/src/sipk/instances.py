"""Small closed-form instances used in examples and tests."""

import numpy as np

from .problem import make_instance


def t1(name="T1"):
    """min 1/2 (x-1)^2 on [-2, 2] s.t. x y <= 0 for y in [0, 1]; optimum x = 0, value 1/2."""
    return make_instance(
        P=[[1.0]], c=[-1.0], lo=[-2.0], hi=[2.0],
        Q=[[[0.0]]], q=[[1.0]], b=[0.0],
        Qj=[[[0.0]], [[0.0]]], qj=[[-1.0], [1.0]], bj=[0.0, -1.0], rho=1.0, name=name, const=0.5,
    )


def t1_shifted(center=-1.0, name="T1-shifted"):
    """T1 with the objective centered at ``center``; no constraint binds when center < 0."""
    return make_instance(
        P=[[1.0]], c=[-float(center)], lo=[-2.0], hi=[2.0],
        Q=[[[0.0]]], q=[[1.0]], b=[0.0],
        Qj=[[[0.0]], [[0.0]]], qj=[[-1.0], [1.0]], bj=[0.0, -1.0], rho=1.0, name=name,
        const=0.5 * float(center) ** 2,
    )


def t2(name="T2"):
    """G(x, y) = -1/2 x1 y^2 + x2 y over y in [-1, 1] (nonconvex lower level when x1 < 0)."""
    return make_instance(
        P=np.eye(2), c=[0.0, 0.0], lo=[-2.0, -2.0], hi=[2.0, 2.0],
        Q=[[[1.0]], [[0.0]]], q=[[0.0], [1.0]], b=[0.0, 0.0],
        Qj=[[[2.0]]], qj=[[0.0]], bj=[-1.0], rho=1.0, name=name,
    )


def shor_gap(name="shor-gap"):
    """Nonconvex 2-D lower level on which the Shor relaxation is strictly loose at x = 1."""
    return make_instance(
        P=[[1.0]], c=[0.0], lo=[-2.0], hi=[2.0],
        Q=[[[-0.551, -1.039], [-1.039, 0.011]]], q=[[0.628, 0.251]], b=[0.0],
        Qj=[[[2.0, 0.0], [0.0, 2.0]], [[-0.036, -1.071], [-1.071, 1.128]], [[-3.361, -0.507], [-0.507, -0.075]]],
        qj=[[0.0, 0.0], [0.204, 0.546], [-0.095, -0.07]], bj=[-1.0, -0.048, -0.261], rho=1.0, name=name,
    )
