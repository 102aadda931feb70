"""Independent reference computations used by the tests."""

import numpy as np


def random_spd(rng: np.random.Generator, k: int) -> np.ndarray:
    A = rng.standard_normal((k, k))
    return A @ A.T / k + 0.5 * np.eye(k)


def random_problem(rng: np.random.Generator, k_max: int = 8):
    """Random SPD information and full-rank d x k Jacobian with 2 <= k <= k_max."""
    k = int(rng.integers(2, k_max + 1))
    d = int(rng.integers(1, k))
    return random_spd(rng, k), rng.standard_normal((d, k))


class CircleGrid:
    """Brute-force nearest point on the unit circle over a uniform angle grid."""

    def __init__(self, resolution: float = 1e-6):
        self.angles = np.arange(0.0, 2 * np.pi, resolution)
        self.cos = np.cos(self.angles)
        self.sin = np.sin(self.angles)

    def nearest(self, p) -> np.ndarray:
        # |p - u|^2 = |p|^2 + 1 - 2 p.u, so maximise p.u
        j = int(np.argmax(p[0] * self.cos + p[1] * self.sin))
        return np.array([self.cos[j], self.sin[j]])


def one_step_by_hand(theta, info, S, J):
    """theta - I^-1 J^T (J I^-1 J^T)^-1 S with explicit inverses."""
    inv = np.linalg.inv(info)
    return theta - inv @ J.T @ np.linalg.inv(J @ inv @ J.T) @ S


def isserlis_quadratic_cov(A, B, C):
    """Cov(Z^T A Z, Z^T B Z) for Z ~ N(0, C) by summing fourth moments term by term."""
    m = C.shape[0]
    total = 0.0
    for a in range(m):
        for b in range(m):
            for c in range(m):
                for d in range(m):
                    moment = C[a, b] * C[c, d] + C[a, c] * C[b, d] + C[a, d] * C[b, c]
                    total += A[a, b] * B[c, d] * moment
    mean_a = np.sum(A * C)
    mean_b = np.sum(B * C)
    return total - mean_a * mean_b
