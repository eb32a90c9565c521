"""Independent forward-kinematics oracle.

Builds the standard DH product symbolically with exact rational parameters
and evaluates it at a few fixed joint configurations with 40-digit
precision. The printed values are frozen into the kinematics tests of
teleop-core; rerun this script after changing the DH table or tool offset.

    python3 tools/fk_oracle.py
"""

import sympy as sp

PREC = 40

# a, d, alpha for the six joints (m, m, rad)
DH = [
    (0, sp.Rational("0.1625"), sp.pi / 2),
    (sp.Rational("-0.425"), 0, 0),
    (sp.Rational("-0.3922"), 0, 0),
    (0, sp.Rational("0.1333"), sp.pi / 2),
    (0, sp.Rational("0.0997"), -sp.pi / 2),
    (0, sp.Rational("0.0996"), 0),
]
TOOL_Z = sp.Rational("0.08")

CONFIGS = {
    "zero": [0, 0, 0, 0, 0, 0],
    "home": [0, sp.Rational("-1.6"), 2, -sp.pi / 2 + sp.Rational("1.6") - 2, sp.pi / 2, sp.pi / 2],
    "mixed": [sp.Rational(x) for x in ("0.3", "-1.2", "1.4", "-0.5", "0.9", "2.1")],
    "wide": [sp.Rational(x) for x in ("-2.5", "0.7", "-2.9", "3.0", "-1.1", "-0.4")],
}

q = sp.symbols("q1:7")


def dh(theta, d, a, alpha):
    ct, st = sp.cos(theta), sp.sin(theta)
    ca, sa = sp.cos(alpha), sp.sin(alpha)
    return sp.Matrix([
        [ct, -st * ca, st * sa, a * ct],
        [st, ct * ca, -ct * sa, a * st],
        [0, sa, ca, d],
        [0, 0, 0, 1],
    ])


frames = [sp.eye(4)]
for i, (a, d, alpha) in enumerate(DH):
    frames.append(frames[-1] * dh(q[i], d, a, alpha))
tool = sp.eye(4)
tool[2, 3] = TOOL_Z
ee = frames[-1] * tool


def fmt(v):
    return format(float(sp.N(v, PREC)), ".17e")


for name, cfg in CONFIGS.items():
    subs = dict(zip(q, cfg))
    flange = frames[-1].subs(subs)
    tcp = ee.subs(subs)
    print(f"// {name}: q = {[fmt(c) for c in cfg]}")
    print(f"flange_p = [{', '.join(fmt(flange[r, 3]) for r in range(3))}]")
    print(f"tool_p   = [{', '.join(fmt(tcp[r, 3]) for r in range(3))}]")
    print("tool_R   = [" + ", ".join("[" + ", ".join(fmt(tcp[r, c]) for c in range(3)) + "]" for r in range(3)) + "]")
    elbow = frames[3].subs(subs)
    print(f"frame3_p = [{', '.join(fmt(elbow[r, 3]) for r in range(3))}]")
    print()
