"""
Run endpoints: single PMD / AMPO runs and bound checks on held-out layouts.
"""
import logging
from typing import Any, Dict

from fastapi import APIRouter, HTTPException
from fastapi.responses import Response

from pmdlab.errors import InputError, PmdLabError
from pmdlab.mdp.gridworld import HELD_OUT_NAMES, compile_grid, held_out_config
from pmdlab.mdp.tabular import TabularMdp
from pmdlab.mirror.potentials import OmegaPotential, potential_from_name
from pmdlab.models.schemas import PmdRunRecord, RunRequest
from pmdlab.pmd.ampo import run_ampo
from pmdlab.pmd.diagnostics import theorem1_check
from pmdlab.pmd.runner import run_pmd

logger = logging.getLogger(__name__)

router = APIRouter()


def _resolve(request: RunRequest) -> tuple[TabularMdp, OmegaPotential]:
    if request.env not in HELD_OUT_NAMES:
        raise HTTPException(status_code=404, detail=f"Environment '{request.env}' not found")
    try:
        pot = potential_from_name(request.potential)
    except KeyError:
        raise HTTPException(status_code=400, detail=f"Unknown potential '{request.potential}'")
    return compile_grid(held_out_config(request.env)), pot


def _summary(record: PmdRunRecord) -> Dict[str, Any]:
    return {"success": True, "final_value": record.final_value, "record": record.model_dump()}


@router.post("/runs/pmd")
def run_pmd_endpoint(request: RunRequest) -> Dict[str, Any]:
    """Run policy mirror descent and return the per-iteration record."""
    mdp, pot = _resolve(request)
    try:
        record = run_pmd(mdp, pot, request.config)
    except InputError as e:
        raise HTTPException(status_code=400, detail=str(e))
    except PmdLabError as e:
        logger.error("PMD run on %s failed: %s", request.env, e)
        raise HTTPException(status_code=500, detail=str(e))
    return _summary(record)


@router.post("/runs/ampo")
def run_ampo_endpoint(request: RunRequest) -> Dict[str, Any]:
    """Run tabular AMPO and return the per-iteration record."""
    mdp, pot = _resolve(request)
    try:
        record = run_ampo(mdp, pot, request.config)
    except InputError as e:
        raise HTTPException(status_code=400, detail=str(e))
    except PmdLabError as e:
        logger.error("AMPO run on %s failed: %s", request.env, e)
        raise HTTPException(status_code=500, detail=str(e))
    return _summary(record)


@router.post("/check-bounds")
def check_bounds_endpoint(request: RunRequest) -> Response:
    """
    Run PMD and evaluate the improvement and convergence bounds.

    The report may hold infinite bounds (vacuous convergence check), so it is
    serialized by pydantic, which writes them as Infinity.
    """
    mdp, pot = _resolve(request)
    try:
        record = run_pmd(mdp, pot, request.config)
        report = theorem1_check(record, mdp, pot)
    except InputError as e:
        raise HTTPException(status_code=400, detail=str(e))
    except PmdLabError as e:
        raise HTTPException(status_code=500, detail=str(e))
    return Response(content=report.model_dump_json(), media_type="application/json")
