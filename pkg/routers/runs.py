import logging
from typing import Any, Dict

from fastapi import APIRouter, HTTPException
from pydantic import BaseModel, Field, ValidationError

from database.report_store import TableParseError, csv_to_frame, frame_to_csv
from models.config_models import FitOptions, ReportBundle, RunConfig
from services.analysis_service import AnalysisService
from services.phonon_service import PhononError
from services.plotdata_service import MissingSeriesError, PlotDataService
from services.simulation_service import SimulationError, SimulationService
from utils.enums import Figure, FitMode

logger = logging.getLogger(__name__)

router = APIRouter()


class SeriesFitRequest(BaseModel):
    table: str = Field(..., description="Series CSV text")
    options: Dict[str, Any] = Field(default_factory=dict, description="FitOptions fields other than mode and inputs")


class PlotDataRequest(BaseModel):
    bundle: ReportBundle
    figure: Figure


@router.post("/simulate")
async def simulate(config: RunConfig):
    """Run a sweep in memory; spectra are not written"""
    try:
        return SimulationService().cmd_simulate(config).model_dump(mode="json")
    except SimulationError as e:
        raise HTTPException(status_code=422, detail=str(e))


@router.post("/phonon")
async def phonon(config: RunConfig):
    try:
        return SimulationService().cmd_phonon(config).model_dump(mode="json")
    except (SimulationError, PhononError) as e:
        raise HTTPException(status_code=422, detail=str(e))


@router.post("/fit/{mode}")
async def fit_series(mode: FitMode, request: SeriesFitRequest):
    """Fit a posted series table; spectrum modes need files and go through the CLI"""
    if mode in (FitMode.LORENTZIAN, FitMode.VOIGT):
        raise HTTPException(status_code=422, detail=f"{mode.value} fits read spectrum files; use the CLI")
    try:
        options = FitOptions(mode=mode, inputs=["<request>"], **request.options)
        frame = csv_to_frame(request.table, AnalysisService.series_columns(options), source="<request>")
    except (ValidationError, TableParseError) as e:
        raise HTTPException(status_code=422, detail=str(e))
    return AnalysisService().fit_series(options, frame).model_dump(mode="json")


@router.post("/plotdata")
async def plotdata(request: PlotDataRequest):
    """Curves of one figure as CSV text keyed by curve name"""
    try:
        curves = PlotDataService().series(request.bundle, request.figure)
    except MissingSeriesError as e:
        raise HTTPException(status_code=404, detail=str(e))
    return {name: frame_to_csv(frame) for name, frame in curves.items()}
