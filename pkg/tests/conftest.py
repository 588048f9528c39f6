import numpy as np
import pytest

from ordinal_intensity.infer import SamplerConfig, sample_posterior
from ordinal_intensity.model import Hyperparams, ParamsConstrained, generate


def well_separated_c3() -> ParamsConstrained:
    """Three cleanly separated classes: distinct emission rows, spread Beta
    modes, decreasing gate/success so casualty scales differ by orders."""
    return ParamsConstrained(
        pi_z=np.array([0.3, 0.4, 0.3]),
        pi_s=np.array(
            [[0.7, 0.1, 0.1, 0.1], [0.1, 0.7, 0.1, 0.1], [0.1, 0.1, 0.7, 0.1]]
        ),
        pi_o=np.array(
            [[0.1, 0.7, 0.1, 0.1], [0.1, 0.1, 0.1, 0.7], [0.7, 0.1, 0.1, 0.1]]
        ),
        omega=np.array([0.1, 0.5, 0.9]),
        kappa=np.array([25.0, 25.0, 25.0]),
        delta=np.array([0.7, 0.4, 0.1]),
        b=np.array([0.8, 0.4, 0.06]),
    )


@pytest.fixture(scope="session")
def separated_params():
    return well_separated_c3()


@pytest.fixture(scope="session")
def small_synth_fit(separated_params):
    """One reusable small fit: N=1000 events from the separated C=3 pack."""
    rng = np.random.default_rng(2024)
    data, labels = generate(separated_params, 1000, rng)
    hyper = Hyperparams(n_classes=3)
    config = SamplerConfig(draws=250, warmup=150, chains=2, seed=11)
    samples = sample_posterior(data, hyper, config)
    return data, labels, samples
