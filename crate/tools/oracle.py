"""High-precision reference values for the scalar losses.

Evaluates each loss and its derivative with mpmath at 40 significant digits,
independently of the Rust code, and prints the frozen constants used by
crates/core/tests/oracle.rs.

    python3 tools/oracle.py
"""

from mpmath import mp, mpf, log, diff

mp.dps = 40
EPS = mpf("1e-6")


def clamp(p):
    return min(max(p, EPS), 1 - EPS)


def cce(p, positive, alpha):
    p = clamp(p)
    return -alpha * log(p) if positive else -(1 - alpha) * log(1 - p)


def focal(p, positive, alpha, gamma):
    p = clamp(p)
    if positive:
        return -alpha * (1 - p) ** gamma * log(p)
    return -(1 - alpha) * p ** gamma * log(1 - p)


def attention(p, positive, alpha, beta, gamma):
    p = clamp(p)
    if positive:
        return -alpha * beta ** ((1 - p) ** gamma) * log(p)
    return -(1 - alpha) * beta ** (p ** gamma) * log(1 - p)


def smooth_l1(x, sigma):
    x = abs(x)
    if x < 1 / sigma**2:
        return mpf("0.5") * (sigma * x) ** 2
    return x - mpf("0.5") / sigma**2


CASES = [
    ("ATTENTION_P05_POS", lambda: attention(mpf("0.5"), True, mpf("0.99"), 4, mpf("0.5"))),
    ("ATTENTION_P05_POS_GRAD", lambda: diff(lambda q: attention(q, True, mpf("0.99"), 4, mpf("0.5")), mpf("0.5"))),
    ("ATTENTION_P09_POS", lambda: attention(mpf("0.9"), True, mpf("0.99"), 4, mpf("0.5"))),
    ("ATTENTION_P03_NEG", lambda: attention(mpf("0.3"), False, mpf("0.9"), 4, mpf("0.5"))),
    ("ATTENTION_P03_NEG_GRAD", lambda: diff(lambda q: attention(q, False, mpf("0.9"), 4, mpf("0.5")), mpf("0.3"))),
    ("CCE_P05_POS", lambda: cce(mpf("0.5"), True, mpf("0.99"))),
    ("FOCAL_P09_POS", lambda: focal(mpf("0.9"), True, mpf("0.25"), 2)),
    ("FOCAL_P09_POS_GRAD", lambda: diff(lambda q: focal(q, True, mpf("0.25"), 2), mpf("0.9"))),
    ("SMOOTH_L1_05", lambda: smooth_l1(mpf("0.5"), 3)),
    ("SMOOTH_L1_005", lambda: smooth_l1(mpf("0.05"), 3)),
    ("SMOOTH_L1_02", lambda: smooth_l1(mpf("0.2"), 3)),
]

if __name__ == "__main__":
    for name, f in CASES:
        print(f"const {name}: f64 = {mp.nstr(f(), 20)};")
