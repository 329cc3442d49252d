from .encoder import (
    AttentionPool,
    PointEncoder,
    SceneEncoder,
    SceneTokens,
    SelfAttentionBlock,
    encode_scene,
    global_fuse,
)
from .scenario import (
    SCENARIO_SCHEMA,
    AgentTrack,
    Lane,
    Scenario,
    ScenarioParseError,
    SceneError,
    wrap_angle,
)
from .vectorize import VECTOR_WIDTH, SceneBatch, VectorizedScene, collate, vectorize

__all__ = [
    "AttentionPool", "PointEncoder", "SceneEncoder", "SceneTokens", "SelfAttentionBlock",
    "encode_scene", "global_fuse", "SCENARIO_SCHEMA", "AgentTrack", "Lane", "Scenario",
    "ScenarioParseError", "SceneError", "wrap_angle", "VECTOR_WIDTH", "SceneBatch",
    "VectorizedScene", "collate", "vectorize",
]
