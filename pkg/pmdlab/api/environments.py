"""
Environment endpoints: the shipped held-out Grid-World layouts.
"""
from typing import Any, Dict

from fastapi import APIRouter, HTTPException

from pmdlab.errors import PmdLabError
from pmdlab.mdp.gridworld import HELD_OUT_NAMES, compile_grid, format_grid, held_out_config
from pmdlab.mdp.tabular import optimal_policy_oracle, value_of
from pmdlab.models.schemas import EnvironmentInfo

router = APIRouter()


def describe_environment(name: str) -> EnvironmentInfo:
    spec = held_out_config(name)
    mdp = compile_grid(spec)
    _, v_star = optimal_policy_oracle(mdp)
    return EnvironmentInfo(name=name, num_states=mdp.num_states, num_actions=mdp.num_actions,
                           optimal_value=value_of(v_star, mdp.start_dist), map_text=format_grid(spec))


@router.get("/environments")
async def list_environments() -> Dict[str, Any]:
    """List the held-out layouts by name."""
    return {"success": True, "count": len(HELD_OUT_NAMES), "environments": list(HELD_OUT_NAMES)}


@router.get("/environments/{name}")
def get_environment(name: str) -> Dict[str, Any]:
    """
    Describe one held-out layout.

    Args:
        name: layout name, e.g. four_rooms

    Returns:
        Sizes, optimal value V*(mu) and the map text
    """
    if name not in HELD_OUT_NAMES:
        raise HTTPException(status_code=404, detail=f"Environment '{name}' not found")
    try:
        return {"success": True, "environment": describe_environment(name).model_dump()}
    except PmdLabError as e:
        raise HTTPException(status_code=500, detail=str(e))
