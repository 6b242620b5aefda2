"""
Small plants shared by the test modules.
Hand-built plants hit one detectability condition each; the random builders
feed the lifting and subspace property checks.
"""

import numpy as np

from core.model import LiftedPlant, NominalModel, SensorSchedule, SensorSpec, spectral_radius


def random_stable(rng: np.random.Generator, n: int, radius: float = 0.9) -> np.ndarray:
    a = rng.standard_normal((n, n))
    return a * (radius / max(spectral_radius(a), 1e-12))


def random_nominal(rng: np.random.Generator, n: int = 3, sensor_dims=(1, 2), attack_dim: int = 2,
                   severity_dim: int = 1, noise_dim: int = 1) -> NominalModel:
    """Stable per-step plant with one attack mode "m" and random feedthroughs."""
    sensors = [
        SensorSpec(
            name=f"s{i}",
            c=rng.standard_normal((p, n)),
            d_a={"m": rng.standard_normal((p, attack_dim))},
            d_w=rng.standard_normal((p, noise_dim)),
        )
        for i, p in enumerate(sensor_dims)
    ]
    return NominalModel(
        a_hat=random_stable(rng, n),
        sensors=sensors,
        b_a={"m": rng.standard_normal((n, attack_dim))},
        e_hat=rng.standard_normal((severity_dim, n)),
        b_w=rng.standard_normal((n, noise_dim)),
    )


def random_schedule(rng: np.random.Generator, model: NominalModel, max_period: int = 4) -> SensorSchedule:
    period = int(rng.integers(1, max_period + 1))
    samples = {}
    for sensor in model.sensors:
        mask = rng.random(period) < 0.6
        samples[sensor.name] = tuple(int(t) for t in np.nonzero(mask)[0])
    if not any(samples.values()):
        samples[model.sensors[0].name] = (period - 1,)
    return SensorSchedule(period, samples)


def random_system(rng: np.random.Generator, n: int, m: int, p: int, feedthrough: bool = True):
    """(A, B, C, D) with A stable; D is zero when `feedthrough` is false."""
    a = random_stable(rng, n)
    b = rng.standard_normal((n, m))
    c = rng.standard_normal((p, n))
    d = rng.standard_normal((p, m)) if feedthrough else np.zeros((p, m))
    return a, b, c, d


def random_escape_plant(rng: np.random.Generator, rate: float) -> LiftedPlant:
    """
    Unmeasured x1 growing at `rate`, fed by k measured states.

    The attack a = -x_m cancels the measurement and leaves the measured
    block on a random stable closed loop S, so x1 escapes unseen.
    """
    k = int(rng.integers(1, 4))
    a_m = random_stable(rng, k)
    closed = random_stable(rng, k, radius=0.5)
    c_m = np.linalg.qr(rng.standard_normal((k, k)))[0]
    a = np.block([[np.array([[rate]]), rng.standard_normal((1, k))],
                  [np.zeros((k, 1)), a_m]])
    return LiftedPlant.from_matrices(
        a=a,
        c=np.hstack([np.zeros((k, 1)), c_m]),
        e=np.hstack([np.ones((1, 1)), np.zeros((1, k))]),
        b_a={"v": np.vstack([np.zeros((1, k)), a_m - closed])},
        d_a={"v": c_m},
    )


def kernel_plant() -> LiftedPlant:
    """The second attack input touches neither state nor output, only severity."""
    return LiftedPlant.from_matrices(
        a=np.diag([0.5, 0.4]),
        c=np.eye(2),
        e=np.array([[1.0, 0.0]]),
        b_a={"k": np.array([[1.0, 0.0], [0.0, 0.0]])},
        f_a={"k": np.array([[0.0, 2.0]])},
    )


def nulling_plant() -> LiftedPlant:
    """x2 is hidden from the output and driven directly by the attack."""
    return LiftedPlant.from_matrices(
        a=np.diag([0.5, 0.4]),
        c=np.array([[1.0, 0.0]]),
        e=np.array([[0.0, 1.0]]),
        b_a={"n": np.array([[0.0], [1.0]])},
    )


def escape_plant() -> LiftedPlant:
    """
    Unstable x1 fed through x2; the attack cancels x2 in the output.

    With a = -x2 the closed loop is [[1.2, 1], [0, -0.5]]; the eigenvalue 1.2
    is uncontrollable from the (empty) injection and visible to e.
    """
    return LiftedPlant.from_matrices(
        a=np.array([[1.2, 1.0], [0.0, 0.5]]),
        c=np.array([[0.0, 1.0]]),
        e=np.array([[1.0, 0.0]]),
        b_a={"u": np.array([[0.0], [1.0]])},
        d_a={"u": np.array([[1.0]])},
    )


def jordan_plant() -> LiftedPlant:
    """
    Same cancellation as escape_plant around a Jordan block at 1.

    Under a = -x3 the chain e1, e2 has (A+BM) e2 = e1 + e2; e sees e1 only.
    """
    return LiftedPlant.from_matrices(
        a=np.array([[1.0, 1.0, 0.0], [0.0, 1.0, 1.0], [0.0, 0.0, 0.5]]),
        c=np.array([[0.0, 0.0, 1.0]]),
        e=np.array([[1.0, 0.0, 0.0]]),
        b_a={"u": np.array([[0.0], [0.0], [1.0]])},
        d_a={"u": np.array([[1.0]])},
    )


def detectable_plant() -> LiftedPlant:
    """Fully measured stable plant with noise; no attack is stealthy."""
    return LiftedPlant.from_matrices(
        a=np.diag([0.5, 0.3]),
        c=np.eye(2),
        e=np.array([[1.0, 0.0]]),
        b_a={"d": np.array([[1.0], [0.0]])},
        f_a={"d": np.array([[0.5]])},
        b_w=np.array([[0.1], [0.2]]),
        d_w=np.array([[0.05], [0.0]]),
    )


def two_axis_plant() -> LiftedPlant:
    """
    Modes "a" and "b" push different measured states; "c" pushes both.

    The attacks are distinguishable from the outputs, and "c" is explained
    by neither "a" nor "b".
    """
    return LiftedPlant.from_matrices(
        a=np.diag([0.5, 0.3]),
        c=np.eye(2),
        e=np.array([[1.0, 1.0]]),
        b_a={
            "a": np.array([[1.0], [0.0]]),
            "b": np.array([[0.0], [1.0]]),
            "c": np.array([[1.0], [1.0]]),
        },
        b_w=np.array([[0.1, 0.0], [0.0, 0.1]]),
    )


def cloned_mode_plant() -> LiftedPlant:
    """Two modes with identical channels; nothing tells them apart."""
    b = np.array([[1.0], [0.5]])
    return LiftedPlant.from_matrices(
        a=np.array([[0.6, 0.2], [0.0, 0.4]]),
        c=np.array([[1.0, 0.0]]),
        e=np.array([[0.0, 1.0]]),
        b_a={"1": b, "1c": b.copy()},
    )
