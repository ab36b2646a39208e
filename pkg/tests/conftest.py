import numpy as np
import pytest

from models.config_models import ReportBundle, default_bath
from models.device_models import BathModel, DeviceParams, JitterLaw
from models.spectrum_models import CalibrationChain
from services.simulation_service import provenance


@pytest.fixture
def dev() -> DeviceParams:
    return DeviceParams.reference_device()


@pytest.fixture
def bath() -> BathModel:
    return default_bath()


@pytest.fixture
def calib() -> CalibrationChain:
    return CalibrationChain()


@pytest.fixture
def jitter_bath() -> BathModel:
    """Single fridge bath with γ_i = 2.3 kHz and a constant 6.1 kHz Gaussian jitter"""
    return BathModel.thermal(gamma_0=2300.0, T_f=0.010).model_copy(
        update={"jitter_law": JitterLaw(amplitude=6100.0, exponent=0.0, variable="n_c")}
    )


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)


@pytest.fixture
def make_bundle():
    """Bundle around hand-made tables, with a provenance block that validates"""

    def build(tables: dict, fits: dict = None, command: str = "simulate") -> ReportBundle:
        payload = {"command": command}
        return ReportBundle(
            tables=tables,
            fits=fits or {},
            provenance=provenance(command, payload),
            config=payload,
        )

    return build
