import logging
from typing import Optional

from fastapi import APIRouter, HTTPException, Query

from models.config_models import default_bath
from models.device_models import DeviceParams, ProbeState
from services.optomechanics_service import (
    PhysicsError, bose_einstein, cooperativity, gamma_om, inverse_bose_einstein, mechanical_q, mode_occupancy,
    sideband_asymmetry, self_oscillation_threshold,
)
from utils.enums import DetuningSign

logger = logging.getLogger(__name__)

router = APIRouter()


@router.get("/bose-einstein")
async def get_bose_einstein(f: float = Query(..., description="Mode frequency (Hz)"),
                            T: Optional[float] = Query(None, description="Temperature (K)"),
                            n: Optional[float] = Query(None, description="Occupancy to invert")):
    """n(f, T), or the temperature at which the mode holds n quanta"""
    try:
        if T is not None:
            return {"f": f, "T": T, "n": bose_einstein(f, T)}
        if n is not None:
            return {"f": f, "n": n, "T": inverse_bose_einstein(f, n)}
    except PhysicsError as e:
        raise HTTPException(status_code=422, detail=str(e))
    raise HTTPException(status_code=422, detail="Give either T or n")


@router.get("/occupancy")
async def get_occupancy(n_c: float = Query(..., ge=0),
                        side: DetuningSign = Query(DetuningSign.RED, description="1 red, -1 blue, 0 resonant"),
                        T_f: Optional[float] = Query(None, ge=0, description="Fridge temperature (K)"),
                        gamma_0: Optional[float] = Query(None, ge=0, description="Fridge-bath coupling (Hz)")):
    """Steady-state occupancy of the reference device and bath at one probe setting"""
    dev = DeviceParams.reference_device()
    bath = default_bath()
    updates = {k: v for k, v in {"T_f": T_f, "gamma_0": gamma_0}.items() if v is not None}
    if updates:
        bath = bath.model_copy(update=updates)
    probe = ProbeState(detuning=int(side) * dev.omega_m, n_c=n_c)
    try:
        return {
            "n_c": n_c,
            "side": side.name.lower(),
            "occupancy": mode_occupancy(dev, probe, bath),
            "gamma_om": gamma_om(dev, probe),
        }
    except PhysicsError as e:
        raise HTTPException(status_code=422, detail=str(e))


@router.get("/threshold")
async def get_threshold(gamma_i: float = Query(..., gt=0, description="Intrinsic damping (Hz)")):
    dev = DeviceParams.reference_device()
    try:
        return {
            "gamma_i": gamma_i,
            "n_threshold": self_oscillation_threshold(dev, gamma_i),
            "cooperativity_per_photon": cooperativity(dev, 1.0, gamma_i),
            "q_m": mechanical_q(dev, gamma_i),
        }
    except PhysicsError as e:
        raise HTTPException(status_code=422, detail=str(e))


@router.get("/asymmetry")
async def get_asymmetry(n_c: float = Query(..., gt=0), T_f: Optional[float] = Query(None, ge=0)):
    dev = DeviceParams.reference_device()
    bath = default_bath() if T_f is None else default_bath().with_fridge(T_f)
    try:
        return {"n_c": n_c, "T_f": bath.T_f, "xi": sideband_asymmetry(dev, n_c, bath)}
    except PhysicsError as e:
        raise HTTPException(status_code=422, detail=str(e))
